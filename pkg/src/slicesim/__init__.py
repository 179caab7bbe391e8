"""slicesim: functional and timed simulator for memory-slice NDP systems."""

from .config import (IcnConfig, MemoryTech, RooflinePoint, SliceConfig,
                     SystemConfig, knee_intensity, load_config, peak_flops,
                     roofline_attainable)
from .sim import SimResult, SimStats, simulate, sweep

__version__ = "0.1.0"

__all__ = [
    "IcnConfig", "MemoryTech", "RooflinePoint", "SliceConfig", "SystemConfig",
    "knee_intensity", "load_config", "peak_flops", "roofline_attainable",
    "SimResult", "SimStats", "simulate", "sweep", "__version__",
]

"""Hardware and experiment configuration, peak throughput and Roofline bounds.

The canonical on-disk format is YAML (see README for the schema). Loading
expands memory presets, applies explicit overrides and validates every
invariant; load -> dump -> load is an identity.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import yaml

from .icn import IcnConfig, IcnError


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MemoryTech:
    name: str
    per_slice_bandwidth: float  # GB/s
    access_energy: float        # pJ/bit


# Bandwidths are artifact presets (overridable); the energy-per-bit constants
# are the published HMC/HBM figures.
MEMORY_PRESETS: dict[str, MemoryTech] = {
    "hmc1": MemoryTech("HMC1", 10.0, 3.7),
    "hmc2": MemoryTech("HMC2", 20.0, 3.7),
    "hbm": MemoryTech("HBM", 16.0, 6.0),
}


@dataclass(frozen=True)
class SliceConfig:
    array_rows: int = 256        # resident output columns of the multiplier array
    array_cols: int = 8          # k-window streamed per wave
    mult_latency: int = 3        # cycles
    adder_tree_latency: int = 3  # cycles
    clock: float = 2.0           # GHz
    element_width: int = 16      # bits
    mem_bandwidth: float = 10.0  # GB/s per slice
    mem_energy: float = 3.7      # pJ/bit
    flop_energy: float = 2.0     # pJ/FLOP
    compute_scale: float = 1.0   # extra compute units per slice (adds array rows)
    preload_cycles: int | None = None  # cycles to fill the full array; default array_rows

    def validate(self) -> None:
        for name in ("array_rows", "array_cols", "mult_latency",
                     "adder_tree_latency", "element_width"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"slice.{name} must be an integer >= 1, got {v!r}")
        for name in ("clock", "mem_bandwidth", "mem_energy", "flop_energy"):
            v = getattr(self, name)
            if not v > 0:
                raise ConfigError(f"slice.{name} must be > 0, got {v!r}")
        if not self.compute_scale >= 1.0:
            raise ConfigError(
                f"slice.compute_scale must be >= 1, got {self.compute_scale!r}")
        if self.preload_cycles is not None and self.preload_cycles < 1:
            raise ConfigError("slice.preload_cycles must be >= 1 when set")

    @property
    def effective_rows(self) -> int:
        """Array rows including the compute_scale expansion."""
        return int(round(self.array_rows * self.compute_scale))

    @property
    def element_bytes(self) -> int:
        return self.element_width // 8

    @property
    def bytes_per_cycle(self) -> float:
        """Streaming-port bandwidth expressed per clock cycle."""
        return self.mem_bandwidth / self.clock

    @property
    def fill_cycles(self) -> int:
        return int(self.preload_cycles) if self.preload_cycles is not None \
            else self.array_rows

    @property
    def preload_rate(self) -> float:
        """Cycles to load one occupied array row during preload."""
        return self.fill_cycles / self.array_rows


@dataclass(frozen=True)
class SystemConfig:
    slice: SliceConfig = field(default_factory=SliceConfig)
    icn: IcnConfig = field(default_factory=IcnConfig)
    num_slices: int = 4
    batch_size: int = 3
    seed: int = 1
    memory: str = "hmc1"  # preset name, or "custom"

    def validate(self) -> None:
        self.slice.validate()
        try:
            self.icn.validate()
        except IcnError as exc:
            raise ConfigError(str(exc)) from exc
        if not isinstance(self.num_slices, int) or self.num_slices < 1:
            raise ConfigError(f"num_slices must be an integer >= 1, got {self.num_slices!r}")
        if self.num_slices > self.icn.mesh_x * self.icn.mesh_y:
            raise ConfigError(
                f"num_slices ({self.num_slices}) exceeds mesh capacity "
                f"{self.icn.mesh_x}x{self.icn.mesh_y}")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ConfigError(f"batch_size must be an integer >= 1, got {self.batch_size!r}")
        if self.icn.flit_width < self.slice.element_width:
            raise ConfigError("icn.flit_width must be >= slice.element_width")


@dataclass
class RooflinePoint:
    intensity: float              # FLOPs/Byte
    attainable: float             # FLOPs/s
    achieved: float | None = None

    def validate(self) -> None:
        if self.achieved is not None and self.achieved > self.attainable * 1.001:
            raise ConfigError(
                f"achieved {self.achieved:.4g} exceeds attainable "
                f"{self.attainable:.4g} beyond 0.1% slack")


def peak_flops(cfg: SliceConfig) -> float:
    """Peak per-slice throughput in FLOPs/s.

    One multiply+add pair per PE per initiation interval; the initiation
    interval is the multiplier latency. The 256x8 @ 2 GHz default comes out
    at ~2.73 TFLOPs/s (the additions-excluded figure usually quoted for this
    organization is 1.28 TFLOPs/s; this model always counts both halves of
    the MAC).
    """
    return (2.0 * cfg.array_rows * cfg.array_cols * cfg.compute_scale
            * cfg.clock * 1e9 / cfg.mult_latency)


def roofline_attainable(cfg: SliceConfig, intensity: float) -> float:
    """min(peak, intensity * bandwidth) for one slice, in FLOPs/s."""
    if intensity < 0:
        raise ConfigError(f"intensity must be >= 0, got {intensity!r}")
    return min(peak_flops(cfg), intensity * cfg.mem_bandwidth * 1e9)


def system_attainable(system: SystemConfig, intensity: float) -> float:
    return roofline_attainable(system.slice, intensity) * system.num_slices


def knee_intensity(cfg: SliceConfig) -> float:
    """Operational intensity where the bandwidth roof meets the compute roof."""
    return peak_flops(cfg) / (cfg.mem_bandwidth * 1e9)


_SLICE_KEYS = {
    "array_rows", "array_cols", "mult_latency", "adder_tree_latency", "clock",
    "element_width", "mem_bandwidth", "mem_energy", "flop_energy",
    "compute_scale", "preload_cycles",
}
_ICN_KEYS = {
    "mesh_x", "mesh_y", "flit_width", "router_latency", "link_latency",
    "max_payload", "net_energy",
}
_TOP_KEYS = {"memory", "slices", "batch", "seed", "slice", "icn", "workload"}


def _check_keys(mapping: dict, allowed: set, where: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def _parse_yaml(text: str) -> dict:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"config parse error{line}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return data


def loads_config(text: str) -> SystemConfig:
    """Parse a YAML config document into a validated SystemConfig."""
    data = _parse_yaml(text)
    _check_keys(data, _TOP_KEYS, "config")

    slice_kwargs = {}
    preset_name = "custom"
    memory = data.get("memory")
    if memory is not None:
        key = str(memory).lower()
        if key not in MEMORY_PRESETS:
            raise ConfigError(
                f"unknown memory preset {memory!r}; expected one of "
                f"{', '.join(sorted(MEMORY_PRESETS))}")
        preset = MEMORY_PRESETS[key]
        preset_name = key
        slice_kwargs["mem_bandwidth"] = preset.per_slice_bandwidth
        slice_kwargs["mem_energy"] = preset.access_energy

    raw_slice = data.get("slice") or {}
    if not isinstance(raw_slice, dict):
        raise ConfigError("'slice' must be a mapping")
    _check_keys(raw_slice, _SLICE_KEYS, "slice")
    slice_kwargs.update(raw_slice)
    slice_cfg = SliceConfig(**slice_kwargs)

    raw_icn = data.get("icn") or {}
    if not isinstance(raw_icn, dict):
        raise ConfigError("'icn' must be a mapping")
    _check_keys(raw_icn, _ICN_KEYS, "icn")
    icn_cfg = IcnConfig(**raw_icn)

    system = SystemConfig(
        slice=slice_cfg,
        icn=icn_cfg,
        num_slices=data.get("slices", SystemConfig.num_slices),
        batch_size=data.get("batch", SystemConfig.batch_size),
        seed=data.get("seed", SystemConfig.seed),
        memory=preset_name,
    )
    system.validate()
    return system


def load_config(path) -> SystemConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_config(fh.read())


def load_experiment(path) -> tuple[SystemConfig, dict | None]:
    """Load a config file, returning the system config and the raw workload block."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    data = _parse_yaml(text)
    workload = data.get("workload")
    if workload is not None and not isinstance(workload, dict):
        raise ConfigError("'workload' must be a mapping")
    return loads_config(text), workload


def dumps_config(cfg: SystemConfig, workload: dict | None = None) -> str:
    """Canonical YAML serialization; reloading it reproduces cfg exactly."""
    doc: dict = {
        "memory": cfg.memory,
        "slices": cfg.num_slices,
        "batch": cfg.batch_size,
        "seed": cfg.seed,
        "slice": {
            "array_rows": cfg.slice.array_rows,
            "array_cols": cfg.slice.array_cols,
            "mult_latency": cfg.slice.mult_latency,
            "adder_tree_latency": cfg.slice.adder_tree_latency,
            "clock": cfg.slice.clock,
            "element_width": cfg.slice.element_width,
            "mem_bandwidth": cfg.slice.mem_bandwidth,
            "mem_energy": cfg.slice.mem_energy,
            "flop_energy": cfg.slice.flop_energy,
            "compute_scale": cfg.slice.compute_scale,
        },
        "icn": {
            "mesh_x": cfg.icn.mesh_x,
            "mesh_y": cfg.icn.mesh_y,
            "flit_width": cfg.icn.flit_width,
            "router_latency": cfg.icn.router_latency,
            "link_latency": cfg.icn.link_latency,
            "max_payload": cfg.icn.max_payload,
            "net_energy": cfg.icn.net_energy,
        },
    }
    if cfg.memory == "custom":
        del doc["memory"]
    if cfg.slice.preload_cycles is not None:
        doc["slice"]["preload_cycles"] = cfg.slice.preload_cycles
    if workload is not None:
        doc["workload"] = workload
    return yaml.safe_dump(doc, sort_keys=True, default_flow_style=False)


def save_config(cfg: SystemConfig, path, workload: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_config(cfg, workload))


def apply_overrides(cfg: SystemConfig, *, preset: str | None = None,
                    slices: int | None = None,
                    compute_scale: float | None = None,
                    mem_bandwidth: float | None = None,
                    batch: int | None = None,
                    seed: int | None = None) -> SystemConfig:
    """CLI/service override hook; returns a new validated SystemConfig."""
    slice_cfg = cfg.slice
    memory = cfg.memory
    if preset is not None:
        key = preset.lower()
        if key not in MEMORY_PRESETS:
            raise ConfigError(
                f"unknown memory preset {preset!r}; expected one of "
                f"{', '.join(sorted(MEMORY_PRESETS))}")
        tech = MEMORY_PRESETS[key]
        slice_cfg = replace(slice_cfg, mem_bandwidth=tech.per_slice_bandwidth,
                            mem_energy=tech.access_energy)
        memory = key
    if compute_scale is not None:
        slice_cfg = replace(slice_cfg, compute_scale=float(compute_scale))
    if mem_bandwidth is not None:
        slice_cfg = replace(slice_cfg, mem_bandwidth=float(mem_bandwidth))
        memory = "custom"
    out = replace(cfg, slice=slice_cfg, memory=memory)
    if slices is not None:
        out = replace(out, num_slices=int(slices))
    if batch is not None:
        out = replace(out, batch_size=int(batch))
    if seed is not None:
        out = replace(out, seed=int(seed))
    out.validate()
    return out


def fingerprint(cfg: SystemConfig, workload: dict | None = None) -> str:
    """Stable short hash of the fully-expanded configuration."""
    return hashlib.sha256(dumps_config(cfg, workload).encode()).hexdigest()[:12]

"""Experiment orchestration shared by the service and the CLI: load config
and workload, plan, run, sweep, sample the roofline, and render stable CSV.

CSV schemas are pinned here; tests golden-check the headers and determinism
relies on the exact float formatting below.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

from . import config as cfgmod
from . import workloads as wl
from .plan import dump_plans, plan_graph
from .sim import SimResult, SimStats, simulate, sweep as sim_sweep

RUN_COLUMNS = [
    "fingerprint", "workload", "num_slices", "compute_scale", "memory",
    "mem_bandwidth", "seed", "total_cycles", "time_s", "flops",
    "mem_stream_bytes", "mem_internal_bytes", "mem_read_bytes",
    "mem_write_bytes", "packets", "flits", "mean_packet_latency",
    "max_packet_latency", "peak_link_utilization", "programming_packets",
    "programming_flits", "programming_cycles", "energy_memory_j",
    "energy_compute_j", "energy_network_j", "energy_total_j",
    "achieved_flops_per_sec", "achieved_flops_per_joule",
    "intensity_streamed", "intensity_unique", "utilization_mean",
    "utilization_max", "load_iterations_total", "load_iterations_max",
]

SWEEP_COLUMNS = ["axis", "value", "speedup"] + RUN_COLUMNS

ROOFLINE_COLUMNS = ["kind", "intensity", "attainable_slice",
                    "attainable_system", "achieved"]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def stats_row(stats: SimStats) -> str:
    d = stats.as_dict()
    return ",".join(_fmt(d[c]) for c in RUN_COLUMNS)


def run_csv(stats_list) -> str:
    out = io.StringIO()
    out.write(",".join(RUN_COLUMNS) + "\n")
    for s in stats_list:
        out.write(stats_row(s) + "\n")
    return out.getvalue()


@dataclass
class Experiment:
    system: cfgmod.SystemConfig
    workload: object

    @classmethod
    def from_yaml(cls, text: str | None, *, workload_block: dict | None = None,
                  overrides: dict | None = None) -> "Experiment":
        if text:
            system = cfgmod.loads_config(text)
            data = cfgmod._parse_yaml(text)
            raw_wl = data.get("workload")
        else:
            system = cfgmod.SystemConfig()
            raw_wl = None
        if workload_block is not None:
            raw_wl = workload_block
        if overrides:
            system = cfgmod.apply_overrides(system, **overrides)
        if raw_wl is None:
            raise cfgmod.ConfigError(
                "no workload: give a `workload:` block in the config file "
                "or a --workload/--preset option")
        workload = wl.parse_workload(raw_wl, default_batch=system.batch_size)
        return cls(system=system, workload=workload)


def cmd_plan(exp: Experiment) -> str:
    graph = exp.workload.build_graph()
    gplan = plan_graph(graph, exp.system.num_slices, exp.system.slice)
    return dump_plans(gplan.plans)


def cmd_run(exp: Experiment, *, trace: bool = False) -> tuple[str, SimResult]:
    result = simulate(exp.workload, exp.system, trace=trace)
    return run_csv([result.stats]), result


def cmd_sweep(exp: Experiment, axis: str, values) -> tuple[str, list]:
    rows = sim_sweep(exp.system, exp.workload, axis, values)
    base_cycles = rows[0][1].total_cycles or 1
    out = io.StringIO()
    out.write(",".join(SWEEP_COLUMNS) + "\n")
    table = []
    for value, stats in rows:
        speedup = base_cycles / stats.total_cycles if stats.total_cycles else 0.0
        out.write(",".join([axis, _fmt(value), _fmt(speedup)])
                  + "," + stats_row(stats) + "\n")
        table.append((value, speedup, stats))
    return out.getvalue(), table


def cmd_roofline(exp: Experiment, *, samples: int = 25,
                 run_workload: bool = True) -> str:
    """Attainable-curve samples plus the workload's measured working point."""
    system = exp.system
    knee = cfgmod.knee_intensity(system.slice)
    out = io.StringIO()
    out.write(",".join(ROOFLINE_COLUMNS) + "\n")
    lo, hi = knee / 64.0, knee * 64.0
    for i in range(samples):
        inten = lo * (hi / lo) ** (i / (samples - 1))
        att = cfgmod.roofline_attainable(system.slice, inten)
        out.write(",".join([
            "curve", repr(inten), repr(att),
            repr(att * system.num_slices), ""]) + "\n")
    if run_workload:
        result = simulate(exp.workload, system)
        inten = result.stats.intensity_unique
        att = cfgmod.roofline_attainable(system.slice, inten)
        out.write(",".join([
            "workload", repr(inten), repr(att),
            repr(att * system.num_slices),
            repr(result.stats.achieved_flops_per_sec)]) + "\n")
    return out.getvalue()

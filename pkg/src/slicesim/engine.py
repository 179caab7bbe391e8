"""Functional and timed model of one slice.

Register tile model: each load iteration parks a tile of the preloaded
matrix B covering up to array_cols k-positions by up to effective_rows
output columns. Each occupied array row serves one output column and holds
that column's k-window values; streaming Register A shifts one row down per
wave, so a wave delivers one A-row chunk (array_cols x element_width bits
from memory) and every occupied row reduces its products into one partial
output element. Per-wave finalized indices step diagonally, which is what
the network interface's index compression relies on.

Timing per tile: preload costs one cycle per occupied row; the first wave
pays the multiplier+adder-tree pipeline fill; each streamed wave issues
every max(mult_latency, wave_bytes/bandwidth) cycles; the shift pipeline
drains for occupied_rows - 1 further waves. Partial sums that span several
k-windows merge through the memory interface (write-back plus re-fetch),
which shares the streaming port. Finalized slab partials leave through the
network interface; remote aggregation runs in the near-memory aggregation
engine, whose accesses are counted and energy-charged but never stall wave
issue.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import SliceConfig


class EngineError(RuntimeError):
    pass


@dataclass
class RowResult:
    index: tuple[int, int]   # (row, col) in the output matrix
    value: float
    final: bool = True       # does the local k-slab complete this element


@dataclass
class SystolicState:
    cfg: SliceConfig
    reg_b: np.ndarray | None = None   # (k_depth, n_cols) resident tile
    k_base: int = 0
    col_base: int = 0
    waves: int = 0
    filled: bool = False              # pipeline fill already paid for this tile

    @property
    def busy(self) -> bool:
        return self.reg_b is not None

    @property
    def occupied_rows(self) -> int:
        return 0 if self.reg_b is None else self.reg_b.shape[1]


def preload(state: SystolicState, b_tile: np.ndarray,
            k_base: int = 0, col_base: int = 0) -> int:
    """Park one register tile; returns the preload cycles (occupied rows).

    b_tile is (k_depth x n_cols) with k_depth <= array_cols and
    n_cols <= effective_rows. An empty tile leaves the engine idle at no cost.
    """
    cfg = state.cfg
    if b_tile.size == 0:
        state.reg_b = None
        state.filled = False
        return 0
    kd, nc = b_tile.shape
    if kd > cfg.array_cols or nc > cfg.effective_rows:
        raise EngineError(
            f"tile {kd}x{nc} exceeds array "
            f"({cfg.array_cols} k-window x {cfg.effective_rows} columns)")
    state.reg_b = np.asarray(b_tile, dtype=np.float32)
    state.k_base = k_base
    state.col_base = col_base
    state.waves = 0
    state.filled = False
    return int(math.ceil(nc * cfg.preload_rate))


def wave_interval(cfg: SliceConfig) -> float:
    """Steady-state cycles between waves: compute rate vs streaming rate."""
    bw_cycles = (cfg.array_cols * cfg.element_bytes) / cfg.bytes_per_cycle
    return max(float(cfg.mult_latency), bw_cycles)


def stream_wave(state: SystolicState, a_row_elements: np.ndarray,
                row_index: int, last_k_block: bool = True
                ) -> tuple[list[RowResult], float]:
    """Advance one wave: every occupied row reduces its resident products.

    a_row_elements is the streamed A-row chunk for the resident k-window.
    Returns the per-row results and the cycles this wave occupies (pipeline
    fill included on a tile's first wave).
    """
    if state.reg_b is None:
        raise EngineError("wave fired with no preloaded tile")
    a = np.asarray(a_row_elements, dtype=np.float32)
    if a.ndim != 1 or a.shape[0] != state.reg_b.shape[0]:
        raise EngineError(
            f"operands not ready: wave carries {a.shape} elements, resident "
            f"k-window is {state.reg_b.shape[0]} deep")
    values = a @ state.reg_b   # one dot per occupied row, float32
    results = [RowResult((row_index, state.col_base + j), float(values[j]),
                         final=last_k_block)
               for j in range(state.reg_b.shape[1])]
    cycles = wave_interval(state.cfg)
    if not state.filled:
        cycles += state.cfg.mult_latency + state.cfg.adder_tree_latency
        state.filled = True
    state.waves += 1
    return results, cycles


@dataclass
class AggregationSlot:
    index: tuple[int, int]
    required: int
    post_op: str = "none"      # none | sigmoid | tanh | custom
    custom: object = None
    received: int = 0
    value: float = 0.0
    finalized: bool = False


def _apply_post(op: str, value: float, custom) -> float:
    if op == "none":
        return value
    if op == "sigmoid":
        return float(1.0 / (1.0 + np.exp(np.float32(-value))))
    if op == "tanh":
        return float(np.tanh(np.float32(value)))
    if op == "custom":
        return float(custom(value))
    raise EngineError(f"unknown post-op {op!r}")


def aggregate(slot: AggregationSlot, partial: float,
              is_last_hint: bool = False):
    """Fold one partial sum into the slot; finalize at the required fan-in.

    Returns None while pending, else the finalized (post-op applied) value.
    Accumulation is float32, matching the functional path.
    """
    if slot.finalized or slot.received >= slot.required:
        raise EngineError(
            f"fan-in overflow at {slot.index}: slot already saw "
            f"{slot.received}/{slot.required} partials")
    slot.value = float(np.float32(slot.value) + np.float32(partial))
    slot.received += 1
    if slot.received == slot.required:
        slot.finalized = True
        slot.value = _apply_post(slot.post_op, slot.value, slot.custom)
        return slot.value
    return None


# ---------------------------------------------------------------------------
# Analytic per-task cost (identical arithmetic to the wave-level loop).
# ---------------------------------------------------------------------------

def tile_grid(kspan: int, nspan: int, cfg: SliceConfig):
    """Register tiles covering a (kspan x nspan) slab of B, row-major over
    (k-block, column-block)."""
    tiles = []
    n_kb = math.ceil(kspan / cfg.array_cols)
    n_nb = math.ceil(nspan / cfg.effective_rows)
    for kb in range(n_kb):
        kd = min(cfg.array_cols, kspan - kb * cfg.array_cols)
        for nb in range(n_nb):
            nc = min(cfg.effective_rows, nspan - nb * cfg.effective_rows)
            tiles.append((kb, nb, kd, nc))
    return tiles


@dataclass
class TaskCost:
    cycles: float = 0.0
    preload_cycles: float = 0.0
    flops: int = 0
    loads: int = 0
    bytes_a_stream: int = 0
    bytes_b_preload: int = 0
    bytes_rmw: int = 0          # inter-k-block partial merges on the port
    waves: int = 0

    @property
    def channel_bytes(self) -> int:
        return self.bytes_a_stream + self.bytes_b_preload + self.bytes_rmw


def matmul_task_cost(m: int, kspan: int, nspan: int, cfg: SliceConfig,
                     a_col_elems=None) -> TaskCost:
    """Cycles, traffic and FLOPs for one slice's share of a matmul.

    Matches the wave-level loop exactly: per tile, preload + pipeline fill +
    m streamed waves + (occupied_rows - 1) drain waves; per k-block beyond
    the first, every partial element makes one write-back plus one re-fetch
    through the streaming port.

    a_col_elems, when given, is the per-k-column count of elements the
    streamed operand really reads (convolution lowering charges duplicated
    input elements, not synthesized padding).
    """
    cost = TaskCost()
    eb = cfg.element_bytes
    interval = wave_interval(cfg)
    n_kb = math.ceil(kspan / cfg.array_cols)
    for kb, nb, kd, nc in tile_grid(kspan, nspan, cfg):
        cost.loads += 1
        pre = math.ceil(nc * cfg.preload_rate)
        cost.preload_cycles += pre
        fill = cfg.mult_latency + cfg.adder_tree_latency
        drain = (nc - 1) * cfg.mult_latency if m > 0 else 0
        cost.cycles += pre + fill + m * interval + drain
        cost.waves += m
        cost.flops += 2 * m * kd * nc
        if a_col_elems is None:
            cost.bytes_a_stream += m * kd * eb
        else:
            k0 = kb * cfg.array_cols
            cost.bytes_a_stream += int(sum(a_col_elems[k0:k0 + kd])) * eb
        cost.bytes_b_preload += kd * nc * eb
        if n_kb > 1:
            if kb < n_kb - 1:
                cost.bytes_rmw += m * nc * eb        # write running partial
            if kb > 0:
                cost.bytes_rmw += m * nc * eb        # fetch it back to merge
    return cost

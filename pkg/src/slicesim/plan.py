"""Partitioning and mapping: common-dimension splits, slice assignment and
the per-slice tables binding matrix indices to physical locations.

Matrix multiplications split along the shared dimension k: A gives up column
slabs, B row slabs, and each slab lands on one slice (sequential heuristic).
Output ownership rotates round-robin over column blocks. Load iterations per
preloaded slab count register tiles of [array_cols k-positions] x
[effective_rows output columns]; see engine.py for the tile model.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field

from .config import SliceConfig


class PlanError(ValueError):
    pass


ROLES = {"weight", "input", "output", "state", "error", "transpose-view"}


@dataclass(frozen=True)
class MatrixDescriptor:
    id: str
    rows: int
    cols: int
    role: str = "input"
    element_width: int = 16
    transpose_of: str | None = None

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise PlanError(f"matrix {self.id!r} has zero dimension "
                            f"({self.rows}x{self.cols})")
        if self.role not in ROLES:
            raise PlanError(f"matrix {self.id!r} has unknown role {self.role!r}")
        if self.role == "transpose-view" and self.transpose_of is None:
            raise PlanError(f"transpose view {self.id!r} names no base matrix")

    @property
    def element_bytes(self) -> int:
        return self.element_width // 8

    @property
    def nbytes(self) -> int:
        return self.rows * self.cols * self.element_bytes


@dataclass(frozen=True)
class Partition:
    matrix: str
    row_range: tuple[int, int]
    col_range: tuple[int, int]
    slice_id: int
    load_iterations: int

    @property
    def rows(self) -> int:
        return self.row_range[1] - self.row_range[0]

    @property
    def cols(self) -> int:
        return self.col_range[1] - self.col_range[0]


def b_load_iterations(kspan: int, nspan: int, cfg: SliceConfig) -> int:
    """Register tiles a preloaded k-slab of B needs.

    The array holds array_cols k-positions against effective_rows output
    columns at a time, so an oversized slab reloads once per tile.
    """
    return (math.ceil(kspan / cfg.array_cols)
            * math.ceil(nspan / cfg.effective_rows))


@dataclass
class PartitionPlan:
    matmul_id: str
    a: str
    b: str
    out: str
    m: int
    k: int
    n: int
    a_parts: list[Partition]
    b_parts: list[Partition]
    out_owner: dict[int, int]          # output column block -> owner slice
    out_block: int                     # block width (array_cols)
    fan_in: int
    slice_group: list[int]

    def owner_of_block(self, block: int) -> int:
        return self.out_owner[block]

    @property
    def n_blocks(self) -> int:
        return len(self.out_owner)


def split_common(k: int, parts: int) -> list[tuple[int, int]]:
    """Contiguous k-slabs, sizes differing by <= 1, remainder on low slabs."""
    parts = min(parts, k)
    base, rem = divmod(k, parts)
    spans = []
    lo = 0
    for s in range(parts):
        hi = lo + base + (1 if s < rem else 0)
        spans.append((lo, hi))
        lo = hi
    return spans


def plan_matmul(a: MatrixDescriptor, b: MatrixDescriptor, out: MatrixDescriptor,
                slices: int, cfg: SliceConfig,
                slice_group: list[int] | None = None,
                matmul_id: str = "matmul") -> PartitionPlan:
    """Split one product C = A x B across `slices` slices along k."""
    if a.cols != b.rows:
        raise PlanError(
            f"{matmul_id}: common dimension mismatch "
            f"{a.id}:{(a.rows, a.cols)} x {b.id}:{(b.rows, b.cols)}")
    if out.rows != a.rows or out.cols != b.cols:
        raise PlanError(f"{matmul_id}: output shape {(out.rows, out.cols)} "
                        f"!= {(a.rows, b.cols)}")
    if slices < 1:
        raise PlanError("slices must be >= 1")
    group = slice_group if slice_group is not None else list(range(slices))
    if not group:
        raise PlanError("empty slice group")

    k = a.cols
    spans = split_common(k, len(group))
    a_parts, b_parts = [], []
    for s, (lo, hi) in enumerate(spans):
        sid = group[s]
        a_parts.append(Partition(a.id, (0, a.rows), (lo, hi), sid, 1))
        b_parts.append(Partition(
            b.id, (lo, hi), (0, b.cols), sid,
            b_load_iterations(hi - lo, b.cols, cfg)))

    owner = {}
    n_blocks = math.ceil(b.cols / cfg.array_cols)
    for j in range(n_blocks):
        owner[j] = group[j % len(group)]

    return PartitionPlan(
        matmul_id=matmul_id, a=a.id, b=b.id, out=out.id,
        m=a.rows, k=k, n=b.cols,
        a_parts=a_parts, b_parts=b_parts,
        out_owner=owner, out_block=cfg.array_cols,
        fan_in=len(spans), slice_group=group)


@dataclass(frozen=True)
class PmiEntry:
    matrix: str
    row_range: tuple[int, int]
    col_range: tuple[int, int]
    base: int
    stride: int                 # bytes per row within the entry
    reserved: bool
    orientation: str = "fwd"    # fwd | bwd mapping copy


@dataclass
class PmiTable:
    slices: int
    entries: dict[int, list[PmiEntry]] = field(default_factory=dict)
    cursors: dict[int, int] = field(default_factory=dict)
    capacity: int | None = None
    _index: dict = field(default_factory=dict)

    def allocate(self, slice_id: int, matrix: str, rows: tuple[int, int],
                 cols: tuple[int, int], element_bytes: int, reserved: bool,
                 orientation: str = "fwd") -> PmiEntry | None:
        key = (slice_id, matrix, rows, cols, orientation)
        if key in self._index:
            return None
        span_cols = cols[1] - cols[0]
        span_rows = rows[1] - rows[0]
        stride = span_cols * element_bytes
        base = self.cursors.get(slice_id, 0)
        size = span_rows * stride
        if self.capacity is not None and base + size > self.capacity:
            raise PlanError(
                f"slice {slice_id} memory capacity exceeded "
                f"({base + size} > {self.capacity} bytes) placing {matrix!r}")
        entry = PmiEntry(matrix, rows, cols, base, stride, reserved, orientation)
        self.entries.setdefault(slice_id, []).append(entry)
        self.cursors[slice_id] = base + size
        self._index[key] = (slice_id, entry)
        self._index.setdefault(("m", matrix, orientation), []).append((slice_id, entry))
        return entry

    def _sorted(self, matrix: str, orientation: str):
        candidates = self._index.get(("m", matrix, orientation), [])
        key = ("sorted", matrix, orientation)
        cached = self._index.get(key)
        if cached is None or len(cached[1]) != len(candidates):
            entries = sorted(candidates,
                             key=lambda se: (se[1].row_range[0], se[1].col_range[0]))
            keys = [(se[1].row_range[0], se[1].col_range[0]) for se in entries]
            cached = (keys, entries)
            self._index[key] = cached
        return cached

    def lookup(self, matrix: str, index: tuple[int, int],
               orientation: str = "fwd") -> tuple[int, int]:
        """Map an abstract (row, col) index to (slice, byte address)."""
        r, c = index
        keys, entries = self._sorted(matrix, orientation)
        pos = bisect_right(keys, (r, c))
        for slice_id, e in reversed(entries[:pos]):
            if (e.row_range[0] <= r < e.row_range[1]
                    and e.col_range[0] <= c < e.col_range[1]):
                eb = e.stride // max(1, e.col_range[1] - e.col_range[0])
                addr = (e.base + (r - e.row_range[0]) * e.stride
                        + (c - e.col_range[0]) * eb)
                return slice_id, addr
        raise PlanError(f"index {index} of {matrix!r} is unmapped "
                        f"({orientation} orientation)")


def pmi_lookup(table: PmiTable, matrix: str, index: tuple[int, int],
               orientation: str = "fwd") -> tuple[int, int]:
    return table.lookup(matrix, index, orientation)


RESERVED_ROLES = {"output", "state", "error"}


@dataclass
class GraphPlan:
    plans: dict[str, PartitionPlan]
    pmi: PmiTable
    layer_groups: dict[int, list[int]]
    dual_mapping: bool

    def total_load_iterations(self) -> int:
        return sum(p.load_iterations for plan in self.plans.values()
                   for p in plan.b_parts)

    def max_slice_load_iterations(self) -> int:
        per_slice: dict[int, int] = {}
        for plan in self.plans.values():
            for p in plan.b_parts:
                per_slice[p.slice_id] = per_slice.get(p.slice_id, 0) + p.load_iterations
        return max(per_slice.values(), default=0)


def layer_slice_groups(layers: list[int], slices: int) -> dict[int, list[int]]:
    """Producer/consumer placement: disjoint equal groups when slices allow,
    otherwise every layer spreads over all slices."""
    if not layers:
        return {}
    if slices >= len(layers):
        g = slices // len(layers)
        return {layer: list(range(i * g, (i + 1) * g))
                for i, layer in enumerate(sorted(layers))}
    return {layer: list(range(slices)) for layer in sorted(layers)}


def plan_graph(graph, slices: int, cfg: SliceConfig, dual_mapping: bool = True,
               capacity_bytes: int | None = None) -> GraphPlan:
    """Plan every matmul node of an OpGraph and build the PMI tables."""
    graph.check_acyclic()
    matmul_nodes = [n for n in graph.nodes.values()
                    if n.kind in ("matmul", "error-matmul")]
    layers = sorted({n.layer for n in matmul_nodes})
    groups = layer_slice_groups(layers, slices)

    pmi = PmiTable(slices=slices, capacity=capacity_bytes)
    plans: dict[str, PartitionPlan] = {}
    for node in matmul_nodes:
        a = graph.matrices[node.meta["a"]]
        b = graph.matrices[node.meta["b"]]
        out = graph.matrices[node.meta["out"]]
        plan = plan_matmul(a, b, out, slices, cfg,
                           slice_group=groups[node.layer], matmul_id=node.id)
        plans[node.id] = plan

        for part in plan.a_parts:
            base = graph.matrices[a.transpose_of] if a.transpose_of else a
            orientation = "bwd" if a.transpose_of else "fwd"
            pmi.allocate(part.slice_id, base.id,
                         part.row_range if not a.transpose_of else part.col_range,
                         part.col_range if not a.transpose_of else part.row_range,
                         a.element_bytes,
                         reserved=base.role in RESERVED_ROLES,
                         orientation=orientation)
        for part in plan.b_parts:
            base = graph.matrices[b.transpose_of] if b.transpose_of else b
            orientation = "bwd" if b.transpose_of else "fwd"
            pmi.allocate(part.slice_id, base.id,
                         part.row_range if not b.transpose_of else part.col_range,
                         part.col_range if not b.transpose_of else part.row_range,
                         b.element_bytes,
                         reserved=base.role in RESERVED_ROLES,
                         orientation=orientation)
            if dual_mapping and base.role == "weight" and not b.transpose_of:
                # Second, backward-friendly copy laid out for the transposed
                # streaming order.
                pmi.allocate(part.slice_id, base.id, part.col_range,
                             part.row_range, b.element_bytes,
                             reserved=False, orientation="bwd")
        for block, owner in plan.out_owner.items():
            lo = block * plan.out_block
            hi = min(plan.n, lo + plan.out_block)
            pmi.allocate(owner, out.id, (0, plan.m), (lo, hi),
                         out.element_bytes, reserved=True)
    return GraphPlan(plans=plans, pmi=pmi, layer_groups=groups,
                     dual_mapping=dual_mapping)


def dump_plans(plans: dict[str, PartitionPlan] | list[PartitionPlan]) -> str:
    """Deterministic text form, one partition per line (golden-file friendly)."""
    if isinstance(plans, dict):
        ordered = [plans[k] for k in sorted(plans)]
    else:
        ordered = list(plans)
    lines = []
    for plan in ordered:
        lines.append(f"plan {plan.matmul_id} m={plan.m} k={plan.k} n={plan.n} "
                     f"fan_in={plan.fan_in}")
        for p in plan.a_parts:
            lines.append(f"  A {p.matrix} rows=[{p.row_range[0]},{p.row_range[1]}) "
                         f"cols=[{p.col_range[0]},{p.col_range[1]}) "
                         f"slice={p.slice_id} iters={p.load_iterations}")
        for p in plan.b_parts:
            lines.append(f"  B {p.matrix} rows=[{p.row_range[0]},{p.row_range[1]}) "
                         f"cols=[{p.col_range[0]},{p.col_range[1]}) "
                         f"slice={p.slice_id} iters={p.load_iterations}")
        for block in sorted(plan.out_owner):
            lo = block * plan.out_block
            hi = min(plan.n, lo + plan.out_block)
            lines.append(f"  C {plan.out} block={block} cols=[{lo},{hi}) "
                         f"owner={plan.out_owner[block]}")
    return "\n".join(lines) + "\n"

"""Discrete-event execution of a planned workload graph over the slices and
the interconnect, with functional outputs and full cycle/byte/energy
accounting.

Scheduling is a deterministic list scheduler: a node becomes ready when its
dependencies finish, each slice serializes its share of work on its own
timeline, the streaming port is a byte-rate token bucket (wave streaming,
tile preloads and inter-k-block partial merges all draw from it), partial
sums travel the mesh as packet trains, and the near-memory aggregation
engine folds them in at the owners. Identical config and seed give an
identical event history, stats and outputs.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, asdict

import numpy as np

from .config import SystemConfig, peak_flops, fingerprint as config_fingerprint
from .engine import matmul_task_cost
from .icn import FlowTimeline, Message, coalesce
from .plan import GraphPlan, plan_graph
from . import workloads as wl


class SimError(RuntimeError):
    pass


def slice_nodes(num_slices: int, icn) -> list[int]:
    """Mesh node per slice: slices pack a compact square so communicating
    slices stay close together."""
    side = min(icn.mesh_x, max(1, math.ceil(math.sqrt(num_slices))))
    nodes = []
    for s in range(num_slices):
        x, y = s % side, s // side
        nodes.append(y * icn.mesh_x + x)
    return nodes


@dataclass
class SimStats:
    workload: str = ""
    fingerprint: str = ""
    num_slices: int = 0
    compute_scale: float = 1.0
    memory: str = ""
    mem_bandwidth: float = 0.0
    seed: int = 0
    total_cycles: int = 0
    time_s: float = 0.0
    flops: int = 0
    mem_stream_bytes: int = 0      # through the bandwidth-limited port
    mem_internal_bytes: int = 0    # near-memory aggregation / elementwise
    mem_read_bytes: int = 0
    mem_write_bytes: int = 0
    packets: int = 0
    flits: int = 0
    mean_packet_latency: float = 0.0
    max_packet_latency: float = 0.0
    peak_link_utilization: float = 0.0
    programming_packets: int = 0
    programming_flits: int = 0
    programming_cycles: int = 0
    energy_memory_j: float = 0.0
    energy_compute_j: float = 0.0
    energy_network_j: float = 0.0
    energy_total_j: float = 0.0
    achieved_flops_per_sec: float = 0.0
    achieved_flops_per_joule: float = 0.0
    intensity_streamed: float = 0.0
    intensity_unique: float = 0.0
    utilization_mean: float = 0.0
    utilization_max: float = 0.0
    load_iterations_total: int = 0
    load_iterations_max: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class SimResult:
    stats: SimStats
    outputs: dict
    trace: list
    packets: list
    graph: object
    plan: GraphPlan

    def trace_text(self) -> str:
        return "".join(f"{c:.1f} slice={s} step={k} task={t}\n"
                       for c, s, k, t in self.trace)


def energy_account(*, mem_bytes: int, flops: int, flits: int,
                   system: SystemConfig) -> tuple[float, float, float]:
    """(memory, compute, network) energy in joules from raw counters."""
    mem_j = mem_bytes * 8 * system.slice.mem_energy * 1e-12
    comp_j = flops * system.slice.flop_energy * 1e-12
    net_j = flits * system.icn.flit_width * system.icn.net_energy * 1e-12
    return mem_j, comp_j, net_j


def _resolve(recipe, store: dict) -> np.ndarray:
    tag = recipe[0]
    if tag == "id":
        try:
            return store[recipe[1]]
        except KeyError:
            raise SimError(f"operand {recipe[1]!r} not materialized") from None
    if tag == "zeros":
        return np.zeros(recipe[1], dtype=np.float32)
    if tag == "concat_cols":
        return np.concatenate([_resolve(r, store) for r in recipe[1]], axis=1)
    if tag == "concat_rows":
        return np.concatenate([_resolve(r, store) for r in recipe[1]], axis=0)
    if tag == "rows":
        return _resolve(recipe[1], store)[recipe[2]:recipe[3], :]
    if tag == "cols":
        return _resolve(recipe[1], store)[:, recipe[2]:recipe[3]]
    if tag == "transpose":
        return _resolve(recipe[1], store).T
    if tag == "repeat_rows":
        return np.tile(_resolve(recipe[1], store), (recipe[2], 1))
    if tag == "sum":
        parts = [_resolve(r, store) for r in recipe[1]]
        acc = parts[0].copy()
        for p in parts[1:]:
            acc += p
        return acc
    raise SimError(f"unknown recipe {tag!r}")


def _sigmoid32(z):
    return np.float32(1.0) / (np.float32(1.0) + np.exp(-z))


def _exec_elementwise(node, store: dict) -> None:
    m = node.meta
    op = node.op
    if op == "lstm_cell":
        H = m["hidden"]
        z = store[m["z"]]
        c_prev = _resolve(m["c_prev"], store)
        i = _sigmoid32(z[:, 0:H])
        f = _sigmoid32(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid32(z[:, 3 * H:4 * H])
        c = f * c_prev + i * g
        store[m["h_out"]] = (o * np.tanh(c)).astype(np.float32)
        store[m["c_out"]] = c.astype(np.float32)
    elif op == "att_out":
        store[node.outputs[0]] = (np.tanh(store[m["apre"]])
                                  + store[m["dec_in"]]).astype(np.float32)
    elif op == "loss_grad":
        y, tgt = store[m["y"]], store[m["tgt"]]
        batch = np.float32(y.shape[0])
        store[node.outputs[0]] = (np.float32(2.0) * (y - tgt) / batch)
    elif op == "lstm_back":
        H = m["hidden"]
        z = store[m["z"]]
        c = store[m["c"]]
        c_prev = _resolve(m["c_prev"], store)
        dh = _resolve(m["dh"], store)
        dc = _resolve(m["dc"], store)
        w = store[m["w"]]
        i = _sigmoid32(z[:, 0:H])
        f = _sigmoid32(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid32(z[:, 3 * H:4 * H])
        tanh_c = np.tanh(c)
        do = dh * tanh_c
        dct = dc + dh * o * (np.float32(1.0) - tanh_c ** 2)
        dz = np.concatenate([
            dct * g * i * (np.float32(1.0) - i),
            dct * c_prev * f * (np.float32(1.0) - f),
            dct * i * (np.float32(1.0) - g ** 2),
            do * o * (np.float32(1.0) - o),
        ], axis=1).astype(np.float32)
        dz_id, dhp_id, dcp_id = node.outputs
        store[dz_id] = dz
        store[dhp_id] = (dz @ w[H:2 * H, :].T).astype(np.float32)
        store[dcp_id] = (dct * f).astype(np.float32)
    elif op == "att_back":
        da = _resolve(m["dx"], store)
        apre = _resolve(m["apre"], store)
        store[node.outputs[0]] = (
            da * (np.float32(1.0) - np.tanh(apre) ** 2)).astype(np.float32)
    elif op == "reduce_rows":
        src = store[m["src_id"]]
        blocks = m["blocks"]
        rows = src.shape[0] // blocks
        acc = src[0:rows, :].copy()
        for bi in range(1, blocks):
            acc += src[bi * rows:(bi + 1) * rows, :]
        store[node.outputs[0]] = acc.astype(np.float32)
    elif op == "sgd":
        w = store[m["w"]]
        dw = store[m["dw"]]
        store[m["w"]] = (w - np.float32(m["eta"]) * dw).astype(np.float32)
    else:
        raise SimError(f"unknown elementwise op {op!r}")


def _diagonal_messages(src: int, matrix: str, partial: np.ndarray,
                       col_lo: int, col_hi: int, dst: int) -> list[Message]:
    """Per-wave drain order: finalized indices step (+1, +1) diagonally."""
    m = partial.shape[0]
    width = col_hi - col_lo
    out = []
    for d in range(-(m - 1), width):
        i0 = max(0, -d)
        for i in range(i0, m):
            j = d + i
            if j < 0 or j >= width:
                break
            out.append(Message(src, dst, matrix, (i, col_lo + j),
                               float(partial[i, col_lo + j])))
    return out


def _train_flits(m: int, width: int, element_width: int, flit_width: int,
                 max_payload: int) -> tuple[int, int]:
    """(packets, flits) for one m x width block drained as diagonal runs."""
    packets = 0
    flits = 0
    for d in range(-(m - 1), width):
        length = min(m, width, m + d, width - d)
        while length > 0:
            take = min(length, max_payload)
            packets += 1
            flits += 1 + math.ceil(take * element_width / flit_width)
            length -= take
    return packets, flits


def simulate(workload, system: SystemConfig, *, trace: bool = False,
             dual_mapping: bool = True, capacity_bytes: int | None = None
             ) -> SimResult:
    """Execute a workload (or a prebuilt OpGraph) on the configured system."""
    system.validate()
    if isinstance(workload, wl.OpGraph):
        graph = workload
        store: dict = dict(graph.meta.get("store", {}))
        name = graph.meta.get("workload", "graph")
    else:
        graph = workload.build_graph()
        store = workload.init_store(system.seed)
        name = workload.describe()

    scfg = system.slice
    order = graph.check_acyclic()
    gplan = plan_graph(graph, system.num_slices, scfg,
                       dual_mapping=dual_mapping, capacity_bytes=capacity_bytes)

    stats = SimStats(
        workload=name,
        fingerprint=config_fingerprint(system),
        num_slices=system.num_slices, compute_scale=scfg.compute_scale,
        memory=system.memory, mem_bandwidth=scfg.mem_bandwidth,
        seed=system.seed)

    # Programming phase: the host (mesh node 0) ships every PMI entry as
    # configuration traffic; reported separately, links idle again at t=0.
    nodes = slice_nodes(system.num_slices, system.icn)
    prog_net = FlowTimeline(system.icn)
    prog_end = 0.0
    for sid in range(system.num_slices):
        entries = len(gplan.pmi.entries.get(sid, []))
        if entries == 0:
            continue
        pk = math.ceil(entries / system.icn.max_payload)
        fl = pk + entries  # one header per packet, one flit per entry
        _, last = prog_net.send(0, nodes[sid], pk, fl, 0.0)
        stats.programming_packets += pk
        stats.programming_flits += fl
        prog_end = max(prog_end, last)
    stats.programming_cycles = int(math.ceil(prog_end))

    net = FlowTimeline(system.icn)
    slice_free = [0.0] * system.num_slices
    channel_free = [0.0] * system.num_slices
    agg_free = [0.0] * system.num_slices
    busy = [0.0] * system.num_slices
    loads_per_slice = [0] * system.num_slices

    lat_sum = 0.0
    lat_max = 0.0
    trace_rows: list = []
    packets_out: list = []

    def t_emit(cycle: float, sid: int, step: int, task: str) -> None:
        if trace:
            trace_rows.append((cycle, sid, step, task))

    done_at = {}
    ready_heap = []
    topo_pos = {nid: i for i, nid in enumerate(order)}
    indeg = {nid: len(graph.nodes[nid].deps) for nid in order}
    succ = {nid: [] for nid in order}
    for node in graph.nodes.values():
        for dep in node.deps:
            succ[dep].append(node.id)
    for nid in order:
        if indeg[nid] == 0:
            heapq.heappush(ready_heap, (0.0, topo_pos[nid], nid))

    executed = 0
    makespan = 0.0
    while ready_heap:
        ready_t, _, nid = heapq.heappop(ready_heap)
        node = graph.nodes[nid]
        executed += 1

        if node.id in gplan.plans:
            node_done, nls, nlm = _run_matmul(
                node, gplan, graph, store, system, stats, net, nodes,
                slice_free, channel_free, agg_free, busy, loads_per_slice,
                ready_t, t_emit, trace, packets_out)
            lat_sum += nls
            lat_max = max(lat_max, nlm)
        else:
            home = gplan.layer_groups.get(node.layer, [0])[0] \
                if gplan.layer_groups else 0
            start = max(agg_free[home], ready_t)
            cycles = (math.ceil(node.meta["elements"] / scfg.effective_rows)
                      + scfg.adder_tree_latency)
            node_done = start + cycles
            agg_free[home] = node_done
            busy[home] += cycles
            stats.flops += node.meta["flops"]
            stats.mem_internal_bytes += (node.meta["read_bytes"]
                                         + node.meta["write_bytes"])
            stats.mem_read_bytes += node.meta["read_bytes"]
            stats.mem_write_bytes += node.meta["write_bytes"]
            _exec_elementwise(node, store)
            t_emit(start, home, 8, node.id)
            t_emit(node_done, home, 9, node.id)

        done_at[nid] = node_done
        makespan = max(makespan, node_done)
        for nxt in succ[nid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready = max((done_at[d] for d in graph.nodes[nxt].deps),
                            default=0.0)
                heapq.heappush(ready_heap, (ready, topo_pos[nxt], nxt))

    if executed != len(graph.nodes):
        stuck = sorted(set(graph.nodes) - set(done_at))[:8]
        raise SimError(
            f"deadlock: no runnable task, {len(graph.nodes) - executed} "
            f"pending, first stuck: {stuck}")

    total_cycles = int(math.ceil(makespan))
    stats.total_cycles = total_cycles
    clock_hz = scfg.clock * 1e9
    stats.time_s = total_cycles / clock_hz if total_cycles else 0.0
    if total_cycles:
        stats.achieved_flops_per_sec = stats.flops * clock_hz / total_cycles
        stats.utilization_mean = sum(busy) / (len(busy) * total_cycles)
        stats.utilization_max = max(busy) / total_cycles
        stats.peak_link_utilization = min(
            1.0, net.peak_link_busy() / total_cycles)
    if stats.packets:
        stats.mean_packet_latency = lat_sum / stats.packets
        stats.max_packet_latency = lat_max

    stats.load_iterations_total = sum(loads_per_slice)
    stats.load_iterations_max = max(loads_per_slice, default=0)

    mem_bytes = stats.mem_stream_bytes + stats.mem_internal_bytes
    mem_j, comp_j, net_j = energy_account(
        mem_bytes=mem_bytes, flops=stats.flops,
        flits=stats.flits + stats.programming_flits, system=system)
    stats.energy_memory_j = mem_j
    stats.energy_compute_j = comp_j
    stats.energy_network_j = net_j
    stats.energy_total_j = mem_j + comp_j + net_j
    if stats.energy_total_j:
        stats.achieved_flops_per_joule = stats.flops / stats.energy_total_j
    if stats.mem_stream_bytes:
        stats.intensity_streamed = stats.flops / stats.mem_stream_bytes
    if graph.nodes:
        stats.intensity_unique = wl.intensity(graph)

    return SimResult(stats=stats, outputs=store, trace=trace_rows,
                     packets=packets_out, graph=graph, plan=gplan)


def _run_matmul(node, gplan: GraphPlan, graph, store, system, stats,
                net: FlowTimeline, nodes, slice_free, channel_free, agg_free,
                busy, loads_per_slice, ready_t, t_emit, trace, packets_out):
    scfg = system.slice
    eb = scfg.element_bytes
    bpc = scfg.bytes_per_cycle
    plan = gplan.plans[node.id]
    a_full = np.ascontiguousarray(_resolve(node.meta["a_src"], store),
                                  dtype=np.float32)
    b_full = np.ascontiguousarray(_resolve(node.meta["b_src"], store),
                                  dtype=np.float32)
    if a_full.shape != (plan.m, plan.k) or b_full.shape != (plan.k, plan.n):
        raise SimError(f"{node.id}: operands {a_full.shape}x{b_full.shape} "
                       f"do not match plan {(plan.m, plan.k, plan.n)}")
    a_cols = node.meta.get("a_col_elems")

    # Owner -> (block ranges, fan-in slots); aggregation waits for one
    # partial train per contributing slice.
    owner_blocks: dict[int, list[tuple[int, int]]] = {}
    for blk, owner in plan.out_owner.items():
        lo = blk * plan.out_block
        hi = min(plan.n, lo + plan.out_block)
        owner_blocks.setdefault(owner, []).append((lo, hi))

    partials = []
    arrivals: dict[int, float] = {}
    lat_sum = 0.0
    lat_max = 0.0
    for a_part, b_part in zip(plan.a_parts, plan.b_parts):
        sid = b_part.slice_id
        lo, hi = b_part.row_range
        kspan = hi - lo
        cost = matmul_task_cost(
            plan.m, kspan, plan.n, scfg,
            a_col_elems=None if a_cols is None else a_cols[lo:hi])
        start = max(slice_free[sid], ready_t)
        compute_end = start + cost.cycles
        channel_free[sid] = max(channel_free[sid], start) \
            + cost.channel_bytes / bpc
        end = max(compute_end, channel_free[sid])
        slice_free[sid] = end
        busy[sid] += end - start
        loads_per_slice[sid] += cost.loads

        stats.flops += cost.flops
        stats.mem_stream_bytes += cost.channel_bytes
        stats.mem_read_bytes += (cost.bytes_a_stream + cost.bytes_b_preload
                                 + cost.bytes_rmw // 2)
        stats.mem_write_bytes += cost.bytes_rmw - cost.bytes_rmw // 2

        t_emit(start, sid, 1, node.id)
        t_emit(start + cost.preload_cycles / max(1, cost.loads), sid, 2, node.id)
        t_emit(start + cost.preload_cycles / max(1, cost.loads) + 1, sid, 3,
               node.id)
        t_emit(start + cost.preload_cycles / max(1, cost.loads) + 1
               + scfg.mult_latency, sid, 4, node.id)
        t_emit(end, sid, 5, node.id)

        partial = a_full[:, lo:hi] @ b_full[lo:hi, :]
        partials.append(partial)

        # Ship this slice's finalized slab partials to the block owners.
        # Partials drain per wave, so trains stream during the compute
        # window and only the tail packet trails the task end.
        t_emit(end, sid, 6, node.id)
        for owner, blocks in sorted(owner_blocks.items()):
            n_pk = 0
            n_fl = 0
            n_values = 0
            for blo, bhi in blocks:
                pk, fl = _train_flits(plan.m, bhi - blo, scfg.element_width,
                                      system.icn.flit_width,
                                      system.icn.max_payload)
                n_pk += pk
                n_fl += fl
                n_values += plan.m * (bhi - blo)
            first, last = net.send(nodes[sid], nodes[owner], n_pk, n_fl,
                                   start, end)
            t_emit(end + 1, sid, 7, node.id)
            stats.packets += n_pk
            stats.flits += n_fl
            lat_sum += n_pk * ((first - start) + (last - end)) / 2.0
            lat_max = max(lat_max, last - end)
            # Near-memory aggregation: one fetch + one write per partial,
            # folded in as trains arrive.
            agg_busy_end = max(agg_free[owner], first) \
                + math.ceil(n_values / scfg.effective_rows)
            agg_end = max(agg_busy_end, last + 1)
            agg_free[owner] = agg_end
            stats.mem_internal_bytes += 2 * n_values * eb
            stats.mem_read_bytes += n_values * eb
            stats.mem_write_bytes += n_values * eb
            arrivals[owner] = max(arrivals.get(owner, 0.0), agg_end)
            t_emit(max(agg_free[owner] - 1, first), owner, 8, node.id)
            if trace and len(packets_out) < 4096:
                for blo, bhi in blocks:
                    msgs = _diagonal_messages(sid, plan.out, partial, blo,
                                              bhi, owner)
                    for pkt in coalesce(msgs, system.icn.max_payload,
                                        scfg.element_width,
                                        system.icn.flit_width):
                        packets_out.append(pkt)

    # Functional aggregation in slab order, float32 like the hardware path.
    acc = partials[0].astype(np.float32)
    for p in partials[1:]:
        acc = acc + p.astype(np.float32)
    store[node.meta["out"]] = acc.astype(np.float32)

    node_done = max(arrivals.values(), default=ready_t) + 1
    for owner in sorted(arrivals):
        t_emit(node_done, owner, 9, node.id)
    return node_done, lat_sum, lat_max


def sweep(system: SystemConfig, workload, axis: str, values,
          **sim_kwargs) -> list[tuple[object, SimStats]]:
    """One run per axis value, same workload; values in given order."""
    from .config import apply_overrides
    rows = []
    for v in values:
        if axis == "num_slices":
            cfg = apply_overrides(system, slices=int(v))
        elif axis == "compute_scale":
            cfg = apply_overrides(system, compute_scale=float(v))
        elif axis == "memory":
            cfg = apply_overrides(system, preset=str(v))
        else:
            raise SimError(f"unknown sweep axis {axis!r}; expected "
                           "num_slices | compute_scale | memory")
        rows.append((v, simulate(workload, cfg, **sim_kwargs).stats))
    return rows

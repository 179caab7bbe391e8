"""Wormhole-switched inter-slice network model.

2D mesh, dimension-order (X then Y) routing. Partial sums travel in
index-compressed packets: a packet carries the index of its first element,
an element count and a pattern tag, and the receiver rebuilds every index
from those three fields.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

# Index patterns a packet can describe. Diagonal steps (+1, +1) per element,
# row-contiguous steps (0, +1).
PATTERN_DIAGONAL = "diagonal"
PATTERN_ROW = "row"

_STEPS = {PATTERN_DIAGONAL: (1, 1), PATTERN_ROW: (0, 1)}


class IcnError(ValueError):
    pass


@dataclass(frozen=True)
class IcnConfig:
    mesh_x: int = 16
    mesh_y: int = 16
    flit_width: int = 128      # bits
    router_latency: int = 1    # cycles per hop
    link_latency: int = 1      # cycles per hop
    max_payload: int = 32      # elements per packet
    net_energy: float = 1.0    # pJ per bit moved through the network

    def validate(self) -> None:
        for name in ("mesh_x", "mesh_y", "flit_width", "router_latency",
                     "link_latency", "max_payload"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise IcnError(f"icn.{name} must be an integer >= 1, got {v!r}")
        if self.net_energy < 0:
            raise IcnError(f"icn.net_energy must be >= 0, got {self.net_energy!r}")

    @property
    def num_nodes(self) -> int:
        return self.mesh_x * self.mesh_y

    def coords(self, node: int) -> tuple[int, int]:
        if not 0 <= node < self.num_nodes:
            raise IcnError(f"node {node} outside {self.mesh_x}x{self.mesh_y} mesh")
        return node % self.mesh_x, node // self.mesh_x


def payload_flits(count: int, element_width: int, flit_width: int) -> int:
    """Flits needed to carry `count` elements of `element_width` bits."""
    return math.ceil(count * element_width / flit_width)


@dataclass
class Packet:
    src: int
    dst: int
    matrix: str
    first_index: tuple[int, int]
    count: int
    pattern: str = PATTERN_ROW
    payload: list[float] = field(default_factory=list)
    header_flits: int = 1
    payload_flits: int = 0

    def indices(self) -> list[tuple[int, int]]:
        """Receiver-side index reconstruction from (first_index, count, pattern)."""
        dr, dc = _STEPS[self.pattern]
        r0, c0 = self.first_index
        return [(r0 + i * dr, c0 + i * dc) for i in range(self.count)]

    @property
    def total_flits(self) -> int:
        return self.header_flits + self.payload_flits


@dataclass(frozen=True)
class Message:
    """One partial-sum element awaiting packetization."""
    src: int
    dst: int
    matrix: str
    index: tuple[int, int]
    value: float


def coalesce(messages, max_payload: int, element_width: int = 16,
             flit_width: int = 128) -> list[Packet]:
    """Merge pending messages into as few packets as possible.

    Contiguous elements (diagonal or row-contiguous index steps) headed to the
    same destination and matrix merge greedily up to max_payload. Message
    order is preserved within each (destination, matrix) group.
    """
    groups: dict[tuple[int, int, str], list[Message]] = {}
    for msg in messages:
        groups.setdefault((msg.src, msg.dst, msg.matrix), []).append(msg)

    packets: list[Packet] = []
    for (src, dst, matrix), msgs in groups.items():
        run: list[Message] = []
        pattern = None

        def flush():
            nonlocal run, pattern
            if not run:
                return
            packets.append(Packet(
                src=src, dst=dst, matrix=matrix,
                first_index=run[0].index, count=len(run),
                pattern=pattern or PATTERN_ROW,
                payload=[m.value for m in run],
                payload_flits=payload_flits(len(run), element_width, flit_width),
            ))
            run, pattern = [], None

        for msg in msgs:
            if not run:
                run.append(msg)
                continue
            pr, pc = run[-1].index
            step = (msg.index[0] - pr, msg.index[1] - pc)
            if len(run) == 1 and step in _STEPS.values():
                pattern = PATTERN_DIAGONAL if step == (1, 1) else PATTERN_ROW
            extend = (len(run) < max_payload
                      and (pattern is not None and step == _STEPS[pattern]))
            if extend:
                run.append(msg)
            else:
                flush()
                run.append(msg)
        flush()
    return packets


def path_links(src: int, dst: int, cfg: IcnConfig) -> list[tuple[int, int]]:
    """Dimension-order route as a list of directed (node, node) links."""
    sx, sy = cfg.coords(src)
    dx, dy = cfg.coords(dst)
    links = []
    x, y = sx, sy
    while x != dx:
        nx = x + (1 if dx > x else -1)
        links.append((y * cfg.mesh_x + x, y * cfg.mesh_x + nx))
        x = nx
    while y != dy:
        ny = y + (1 if dy > y else -1)
        links.append((y * cfg.mesh_x + x, ny * cfg.mesh_x + x))
        y = ny
    return links


def route(src: int, dst: int, cfg: IcnConfig, n_payload_flits: int = 0) -> tuple[int, int]:
    """Isolated (contention-free) latency and hop count for one packet.

    Returns (latency_cycles, hops). Local delivery costs one cycle.
    """
    if not 0 <= src < cfg.num_nodes or not 0 <= dst < cfg.num_nodes:
        raise IcnError(f"route endpoints ({src}, {dst}) outside mesh")
    if src == dst:
        return 1, 0
    sx, sy = cfg.coords(src)
    dx, dy = cfg.coords(dst)
    hops = abs(dx - sx) + abs(dy - sy)
    flits = 1 + n_payload_flits
    return hops * (cfg.router_latency + cfg.link_latency) + flits, hops


@dataclass
class Delivery:
    packet: Packet
    inject_time: int
    deliver_time: int
    hops: int

    @property
    def latency(self) -> int:
        return self.deliver_time - self.inject_time


_DIRS = ("local", "east", "west", "north", "south")


def _link_dir(link: tuple[int, int], cfg: IcnConfig) -> int:
    a, b = link
    ax, ay = cfg.coords(a)
    bx, by = cfg.coords(b)
    if bx > ax:
        return 1
    if bx < ax:
        return 2
    if by > ay:
        return 3
    return 4


class Network:
    """Per-packet wormhole simulation with link contention.

    A packet holds each link on its path for its full flit count; a blocked
    head keeps upstream links held. Simultaneous requests for a link are
    granted by a per-link round-robin over input directions, ties broken by
    injection order, so arbitration is fully deterministic.
    """

    def __init__(self, cfg: IcnConfig):
        cfg.validate()
        self.cfg = cfg
        self._events: list = []   # (time, seq, state-dict)
        self._seq = 0
        self._link_free: dict = {}
        self._link_busy: dict = {}
        self._rr: dict = {}
        self.deliveries: list[Delivery] = []
        self.injected_flits = 0

    def inject(self, packet: Packet, time: int = 0) -> None:
        if not 0 <= packet.dst < self.cfg.num_nodes:
            raise IcnError(f"destination {packet.dst} outside mesh")
        self.injected_flits += packet.total_flits
        st = {"pkt": packet, "path": path_links(packet.src, packet.dst, self.cfg),
              "hop": 0, "t0": time}
        heapq.heappush(self._events, (time, self._seq, st))
        self._seq += 1

    def drain(self) -> list[Delivery]:
        """Advance until every injected packet is delivered."""
        while self._events:
            t, seq, st = heapq.heappop(self._events)
            path = st["path"]
            if st["hop"] >= len(path):
                self._deliver(st, t)
                continue
            link = path[st["hop"]]
            free = self._link_free.get(link, 0)
            if free > t:
                heapq.heappush(self._events, (free, seq, st))
                continue
            # Round-robin among everything else requesting this link now.
            batch = [(seq, st)]
            rest = []
            while self._events and self._events[0][0] == t:
                t2, s2, o2 = heapq.heappop(self._events)
                if o2["hop"] < len(o2["path"]) and o2["path"][o2["hop"]] == link:
                    batch.append((s2, o2))
                else:
                    rest.append((t2, s2, o2))
            for item in rest:
                heapq.heappush(self._events, item)
            if len(batch) > 1:
                ptr = self._rr.get(link, 0)
                batch.sort(key=lambda it: (
                    (_link_dir_of(it[1], self.cfg) - ptr) % len(_DIRS), it[0]))
            win_seq, win = batch[0]
            self._rr[link] = (_link_dir_of(win, self.cfg) + 1) % len(_DIRS)
            for lose_seq, lose in batch[1:]:
                heapq.heappush(self._events, (t, lose_seq, lose))
            self._grant(win, win_seq, link, t)
        return self.deliveries

    def _grant(self, st, seq, link, t: int) -> None:
        pkt = st["pkt"]
        flits = pkt.total_flits
        hop_cost = self.cfg.router_latency + self.cfg.link_latency
        self._link_free[link] = t + flits
        self._link_busy[link] = self._link_busy.get(link, 0) + flits
        if st["hop"] > 0:
            # Tail keeps the upstream link until the head has moved on.
            prev = st["path"][st["hop"] - 1]
            self._link_free[prev] = max(self._link_free.get(prev, 0), t + flits)
        st["hop"] += 1
        heapq.heappush(self._events, (t + hop_cost, seq, st))

    def _deliver(self, st, t: int) -> None:
        pkt = st["pkt"]
        if not st["path"]:          # local port
            deliver = st["t0"] + 1
        else:
            deliver = t + pkt.total_flits
        self.deliveries.append(Delivery(
            packet=pkt, inject_time=st["t0"], deliver_time=deliver,
            hops=len(st["path"])))

    @property
    def delivered_flits(self) -> int:
        return sum(d.packet.total_flits for d in self.deliveries)

    def link_busy_cycles(self) -> dict:
        return dict(self._link_busy)


def _link_dir_of(st, cfg: IcnConfig) -> int:
    hop = st["hop"]
    if hop == 0:
        return 0  # injected from the local port
    return _link_dir(st["path"][hop - 1], cfg)


class FlowTimeline:
    """Aggregate packet-train timing over the same mesh and link model.

    The simulator moves each task's partial-sum traffic between a node pair
    as one train of packets. Packets are produced over the task's compute
    window [t_start, t_end] and stream out as they appear (communication
    overlaps computation), so the train occupies the source network
    interface and every link on its dimension-order path for its flit count
    starting when data first exists; the tail packet cannot land before the
    producing task finishes plus the path latency. Deterministic first-come
    link ordering; delivered latency never undercuts the isolated route()
    time.
    """

    def __init__(self, cfg: IcnConfig):
        cfg.validate()
        self.cfg = cfg
        self._ni_free: dict[int, float] = {}
        self._link_free: dict = {}
        self._link_busy: dict = {}

    def send(self, src: int, dst: int, n_packets: int, total_flits: int,
             t_start: float, t_end: float | None = None
             ) -> tuple[float, float]:
        """Returns (first_arrival, last_arrival) for the train."""
        if t_end is None:
            t_end = t_start
        if n_packets <= 0:
            return t_end, t_end
        if src == dst:
            return t_start + 1, t_end + 1
        hop_cost = self.cfg.router_latency + self.cfg.link_latency
        pkt_flits = math.ceil(total_flits / n_packets)
        depart = max(t_start, self._ni_free.get(src, 0.0))
        # NI capacity: one flit per cycle. The last flit leaves once it both
        # exists (t_end) and has had its turn on the interface.
        self._ni_free[src] = depart + total_flits
        backlog_end = max(t_end, depart + total_flits)
        g = depart
        hops = 0
        for link in path_links(src, dst, self.cfg):
            g = max(g, self._link_free.get(link, 0.0))
            self._link_free[link] = g + total_flits
            self._link_busy[link] = self._link_busy.get(link, 0) + total_flits
            g += hop_cost
            hops += 1
        queue_delay = g - (depart + hops * hop_cost)
        first = g + pkt_flits
        last = max(first, backlog_end + queue_delay + hops * hop_cost)
        return first, last

    def peak_link_busy(self) -> int:
        return max(self._link_busy.values(), default=0)

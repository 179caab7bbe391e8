"""Workload graph construction.

Builds dependency DAGs of matmul / aggregation / update tasks for the
attention translator (stacked LSTM encoders and decoders around one
feed-forward attention layer), for convolution layers lowered to GEMM, and
for plain matrix products. Nodes carry enough metadata for the partitioner
(operand descriptors) and the simulator (functional recipes, FLOP and byte
counts).

Operand recipes let virtual matrices (concatenations, stacks, transposes)
be assembled at execution time without separate storage:
    ("id", mid) | ("zeros", (r, c)) | ("concat_cols", [..]) |
    ("concat_rows", [..]) | ("rows", r, lo, hi) | ("cols", r, lo, hi) |
    ("transpose", r) | ("repeat_rows", r, times) | ("sum", [..])
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import oracle
from .plan import MatrixDescriptor, PlanError


class WorkloadError(ValueError):
    pass


# FLOPs charged per element for the elementwise units (activation = 1 FLOP,
# documented model constants).
CELL_FWD_FLOPS = 9       # 4 activations + 3 state ops + 2 output ops
CELL_BWD_FLOPS = 24
LOSS_FLOPS = 2
SGD_FLOPS = 2
ATT_OUT_FLOPS = 2        # tanh + teacher-forcing add


@dataclass(frozen=True)
class TranslatorSpec:
    hidden: int
    layers: int = 5
    batch: int = 3
    bucket: tuple[int, int] = (4, 6)
    time_steps: int = 1
    eta: float = 0.05

    def __post_init__(self):
        if self.hidden < 1:
            raise WorkloadError(f"hidden must be >= 1, got {self.hidden}")
        if self.layers < 3:
            raise WorkloadError("translator needs at least 3 layers "
                                "(encoder, attention, decoder)")
        if self.bucket[0] < 1 or self.bucket[1] < 1:
            raise WorkloadError(f"bucket lengths must be >= 1, got {self.bucket}")
        if self.time_steps < 1:
            raise WorkloadError("time_steps must be >= 1")
        if self.batch < 1:
            raise WorkloadError("batch must be >= 1")

    @property
    def enc_layers(self) -> int:
        return (self.layers - 1) // 2

    @property
    def dec_layers(self) -> int:
        return self.layers - 1 - self.enc_layers

    @property
    def n_lstm(self) -> int:
        return self.layers - 1

    @property
    def micro_steps(self) -> int:
        return self.bucket[0] + self.bucket[1]


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    height: int
    width: int
    kernels: int
    kh: int
    kw: int
    stride: int = 1
    padding: int = 0
    batch: int = 1

    def __post_init__(self):
        if min(self.in_channels, self.height, self.width, self.kernels,
               self.kh, self.kw, self.stride, self.batch) < 1:
            raise WorkloadError("conv dimensions must be >= 1")
        if self.padding < 0:
            raise WorkloadError("padding must be >= 0")
        if (self.kh > self.height + 2 * self.padding
                or self.kw > self.width + 2 * self.padding):
            raise WorkloadError("kernel larger than padded input")

    @property
    def out_h(self) -> int:
        return (self.height + 2 * self.padding - self.kh) // self.stride + 1

    @property
    def out_w(self) -> int:
        return (self.width + 2 * self.padding - self.kw) // self.stride + 1


@dataclass
class OpNode:
    id: str
    kind: str                  # matmul | aggregate-activate | weight-update | error-matmul
    op: str
    operands: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    deps: list = field(default_factory=list)
    layer: int = 0
    time_step: int = 0
    micro_step: int = 0
    meta: dict = field(default_factory=dict)


class OpGraph:
    def __init__(self):
        self.nodes: dict[str, OpNode] = {}
        self.matrices: dict[str, MatrixDescriptor] = {}
        self.virtual: set[str] = set()
        self.producers: dict[str, str] = {}
        self.meta: dict = {}

    def add_matrix(self, mid: str, rows: int, cols: int, role: str = "input",
                   element_width: int = 16, transpose_of: str | None = None,
                   virtual: bool = False) -> str:
        if mid not in self.matrices:
            self.matrices[mid] = MatrixDescriptor(
                mid, rows, cols, role, element_width, transpose_of)
            if virtual or transpose_of:
                self.virtual.add(mid)
        return mid

    def add_node(self, node: OpNode) -> OpNode:
        if node.id in self.nodes:
            raise WorkloadError(f"duplicate node id {node.id!r}")
        self.nodes[node.id] = node
        for out in node.outputs:
            self.producers[out] = node.id
        return node

    def check_acyclic(self) -> list[str]:
        """Topological order; raises on a dependency cycle."""
        indeg = {nid: 0 for nid in self.nodes}
        succ: dict[str, list[str]] = {nid: [] for nid in self.nodes}
        for node in self.nodes.values():
            for dep in node.deps:
                if dep not in self.nodes:
                    raise WorkloadError(f"{node.id} depends on unknown node {dep!r}")
                succ[dep].append(node.id)
                indeg[node.id] += 1
        ready = sorted(nid for nid, d in indeg.items() if d == 0)
        order = []
        import heapq
        heapq.heapify(ready)
        while ready:
            nid = heapq.heappop(ready)
            order.append(nid)
            for nxt in succ[nid]:
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    heapq.heappush(ready, nxt)
        if len(order) != len(self.nodes):
            stuck = sorted(set(self.nodes) - set(order))[:5]
            raise WorkloadError(f"dependency cycle involving {stuck}")
        return order

    def total_flops(self) -> int:
        return sum(n.meta.get("flops", 0) for n in self.nodes.values())


def recipe_ids(recipe) -> list[str]:
    """Matrix ids a recipe reads."""
    if recipe is None:
        return []
    tag = recipe[0]
    if tag == "id":
        return [recipe[1]]
    if tag == "zeros":
        return []
    if tag in ("concat_cols", "concat_rows", "sum"):
        out = []
        for r in recipe[1]:
            out.extend(recipe_ids(r))
        return out
    if tag in ("rows", "cols"):
        return recipe_ids(recipe[1])
    if tag in ("transpose",):
        return recipe_ids(recipe[1])
    if tag == "repeat_rows":
        return recipe_ids(recipe[1])
    raise WorkloadError(f"unknown recipe tag {tag!r}")


def intensity(graph: OpGraph) -> float:
    """Total FLOPs over unique bytes touched in memory (FLOPs/Byte).

    Virtual matrices (concatenation/stack/transpose views) alias stored data
    and contribute no bytes of their own.
    """
    flops = graph.total_flops()
    stored = [d for mid, d in graph.matrices.items() if mid not in graph.virtual]
    total_bytes = sum(d.nbytes for d in stored)
    if total_bytes == 0 or not graph.nodes:
        raise WorkloadError("empty graph has no operational intensity")
    return flops / total_bytes


# ---------------------------------------------------------------------------
# Translator graph
# ---------------------------------------------------------------------------

def _elem_meta(elements: int, flops_per_elem: int, read_elems: int,
               write_elems: int, eb: int = 2, **extra) -> dict:
    meta = {"elements": elements, "flops": elements * flops_per_elem,
            "read_bytes": read_elems * eb, "write_bytes": write_elems * eb}
    meta.update(extra)
    return meta


class _TranslatorBuilder:
    def __init__(self, spec: TranslatorSpec, train: bool):
        self.spec = spec
        self.train = train
        self.g = OpGraph()
        self.b = spec.batch
        self.H = spec.hidden

    # Layer numbering for placement: encoders 0..E-1, attention E,
    # decoders E+1..layers-1. LSTM weights are indexed by LSTM ordinal
    # (encoders then decoders).
    def _graph_layer(self, ordinal: int) -> int:
        E = self.spec.enc_layers
        return ordinal if ordinal < E else ordinal + 1

    def _dep_of(self, *ids_or_recipes) -> list[str]:
        deps = []
        for item in ids_or_recipes:
            if item is None:
                continue
            ids = recipe_ids(item) if isinstance(item, tuple) else [item]
            for mid in ids:
                nid = self.g.producers.get(mid)
                if nid and nid not in deps:
                    deps.append(nid)
        return deps

    def build(self) -> OpGraph:
        spec, g = self.spec, self.g
        H, b = self.H, self.b
        src, dst = spec.bucket
        E, D = spec.enc_layers, spec.dec_layers

        for o in range(spec.n_lstm):
            g.add_matrix(f"w.l{o}", 2 * H, 4 * H, "weight")
        g.add_matrix("w.att", src * H, H, "weight")
        for t in range(spec.time_steps):
            for m in range(src):
                g.add_matrix(f"in.enc.t{t}.m{m}", b, H, "input")
            for mi in range(dst):
                g.add_matrix(f"in.dec.t{t}.m{mi}", b, H, "input")
                g.add_matrix(f"tgt.t{t}.m{mi}", b, H, "input")

        for t in range(spec.time_steps):
            self._forward_step(t)
        if self.train:
            self._backward()
        g.meta.update({
            "workload": "translator", "train": self.train,
            "hidden": H, "batch": b, "bucket": list(spec.bucket),
            "time_steps": spec.time_steps, "layers": spec.layers,
            "eta": spec.eta,
        })
        g.check_acyclic()
        return g

    # -- forward ------------------------------------------------------------

    def _state_ids(self, o: int, t: int, word: int, first_word: int,
                   last_word_prev: int):
        """(h_prev, c_prev) recipes entering (ordinal o, step t, word)."""
        b, H = self.b, self.H
        if word > first_word:
            return (("id", f"h.l{o}.t{t}.m{word - 1}"),
                    ("id", f"c.l{o}.t{t}.m{word - 1}"))
        if t > 0:
            return (("id", f"h.l{o}.t{t - 1}.m{last_word_prev}"),
                    ("id", f"c.l{o}.t{t - 1}.m{last_word_prev}"))
        return ("zeros", (b, H)), ("zeros", (b, H))

    def _lstm_forward(self, o: int, t: int, word: int, x_recipe,
                      first_word: int, last_word: int):
        g, b, H = self.g, self.b, self.H
        layer = self._graph_layer(o)
        hp, cp = self._state_ids(o, t, word, first_word, last_word)
        xh_id = g.add_matrix(f"xh.l{o}.t{t}.m{word}", b, 2 * H, "input",
                             virtual=True)
        z_id = g.add_matrix(f"z.l{o}.t{t}.m{word}", b, 4 * H, "output")
        a_src = ("concat_cols", [x_recipe, hp])
        mm = OpNode(
            id=f"fw.mm.t{t}.m{word}.l{o}", kind="matmul", op="matmul",
            operands=recipe_ids(a_src) + [f"w.l{o}"], outputs=[z_id],
            deps=self._dep_of(a_src), layer=layer, time_step=t, micro_step=word,
            meta={"a": xh_id, "b": f"w.l{o}", "out": z_id,
                  "a_src": a_src, "b_src": ("id", f"w.l{o}"),
                  "m": b, "k": 2 * H, "n": 4 * H,
                  "flops": 2 * b * 2 * H * 4 * H})
        g.add_node(mm)
        h_id = g.add_matrix(f"h.l{o}.t{t}.m{word}", b, H, "state")
        c_id = g.add_matrix(f"c.l{o}.t{t}.m{word}", b, H, "state")
        cell = OpNode(
            id=f"fw.cell.t{t}.m{word}.l{o}", kind="aggregate-activate",
            op="lstm_cell", operands=[z_id] + recipe_ids(cp),
            outputs=[h_id, c_id],
            deps=[mm.id] + self._dep_of(cp),
            layer=layer, time_step=t, micro_step=word,
            meta=_elem_meta(b * H, CELL_FWD_FLOPS, b * 5 * H, b * 2 * H,
                            z=z_id, c_prev=cp, h_out=h_id, c_out=c_id,
                            hidden=H))
        g.add_node(cell)
        return ("id", h_id)

    def _forward_step(self, t: int):
        spec, g = self.spec, self.g
        H, b = self.H, self.b
        src, dst = spec.bucket
        E, D = spec.enc_layers, spec.dec_layers

        enc_tops = []
        for m in range(src):
            x = ("id", f"in.enc.t{t}.m{m}")
            for o in range(E):
                x = self._lstm_forward(o, t, m, x, 0, src - 1)
            enc_tops.append(x)

        cat_id = g.add_matrix(f"cat.t{t}", b, src * H, "input", virtual=True)
        cat_src = ("concat_cols", enc_tops)
        for mi in range(dst):
            word = src + mi
            apre = g.add_matrix(f"apre.t{t}.m{word}", b, H, "output")
            att = OpNode(
                id=f"fw.att.t{t}.m{word}", kind="matmul", op="matmul",
                operands=recipe_ids(cat_src) + ["w.att"], outputs=[apre],
                deps=self._dep_of(cat_src), layer=E, time_step=t,
                micro_step=word,
                meta={"a": cat_id, "b": "w.att", "out": apre,
                      "a_src": cat_src, "b_src": ("id", "w.att"),
                      "m": b, "k": src * H, "n": H,
                      "flops": 2 * b * src * H * H})
            g.add_node(att)
            x_id = g.add_matrix(f"x.dec.t{t}.m{word}", b, H, "state")
            act = OpNode(
                id=f"fw.attout.t{t}.m{word}", kind="aggregate-activate",
                op="att_out",
                operands=[apre, f"in.dec.t{t}.m{mi}"], outputs=[x_id],
                deps=[att.id], layer=E, time_step=t, micro_step=word,
                meta=_elem_meta(b * H, ATT_OUT_FLOPS, 2 * b * H, b * H,
                                apre=apre, dec_in=f"in.dec.t{t}.m{mi}"))
            g.add_node(act)
            x = ("id", x_id)
            for li in range(D):
                o = E + li
                x = self._lstm_forward(o, t, word, x, src, src + dst - 1)

    # -- backward -----------------------------------------------------------

    def _backward(self):
        spec, g = self.spec, self.g
        H, b = self.H, self.b
        src, dst = spec.bucket
        E, D = spec.enc_layers, spec.dec_layers
        eta = spec.eta

        w_readers: dict[str, list[str]] = {f"w.l{o}": [] for o in range(spec.n_lstm)}
        w_readers["w.att"] = []
        grads: dict[str, list[str]] = {w: [] for w in w_readers}

        for t in reversed(range(spec.time_steps)):
            for mi in range(dst):
                word = src + mi
                top = E + D - 1
                dy = g.add_matrix(f"dy.t{t}.m{word}", b, H, "error")
                g.add_node(OpNode(
                    id=f"bw.loss.t{t}.m{word}", kind="aggregate-activate",
                    op="loss_grad",
                    operands=[f"h.l{top}.t{t}.m{word}", f"tgt.t{t}.m{mi}"],
                    outputs=[dy],
                    deps=self._dep_of(f"h.l{top}.t{t}.m{word}"),
                    layer=self._graph_layer(top), time_step=t, micro_step=word,
                    meta=_elem_meta(b * H, LOSS_FLOPS, 2 * b * H, b * H,
                                    y=f"h.l{top}.t{t}.m{word}",
                                    tgt=f"tgt.t{t}.m{mi}")))

            for li in reversed(range(D)):
                o = E + li
                self._lstm_backward_layer(o, t, src, dst, upper="dec",
                                          w_readers=w_readers, grads=grads)

            self._attention_backward(t, w_readers, grads)

            for o in reversed(range(E)):
                self._lstm_backward_layer(o, t, 0, src, upper="enc",
                                          w_readers=w_readers, grads=grads)

        # Weight updates run once every gradient and every reader of the
        # original weight is done; one update node per (layer, step).
        for w, grad_ids in grads.items():
            readers = w_readers[w]
            prev = None
            for t, dw in grad_ids:
                desc = g.matrices[w]
                nid = f"up.t{t}.{w}"
                deps = self._dep_of(dw) + readers
                if prev:
                    deps = deps + [prev]
                g.add_node(OpNode(
                    id=nid, kind="weight-update", op="sgd",
                    operands=[w, dw], outputs=[w],
                    deps=sorted(set(deps)),
                    layer=0, time_step=t, micro_step=0,
                    meta=_elem_meta(desc.rows * desc.cols, SGD_FLOPS,
                                    2 * desc.rows * desc.cols,
                                    desc.rows * desc.cols,
                                    w=w, dw=dw, eta=eta)))
                prev = nid

    def _chain_grad(self, o: int, t: int, word: int, last_word: int,
                    first_word: int, kind: str):
        """State-gradient recipes (dh, dc) flowing into (o, t, word)."""
        spec = self.spec
        if word < last_word:
            return (("id", f"dhp.l{o}.t{t}.m{word + 1}"),
                    ("id", f"dcp.l{o}.t{t}.m{word + 1}"))
        if t < spec.time_steps - 1:
            return (("id", f"dhp.l{o}.t{t + 1}.m{first_word}"),
                    ("id", f"dcp.l{o}.t{t + 1}.m{first_word}"))
        return None, None

    def _lstm_backward_layer(self, o: int, t: int, first_word: int, words: int,
                             upper: str, w_readers, grads):
        g, b, H = self.g, self.b, self.H
        spec = self.spec
        E, D = spec.enc_layers, spec.dec_layers
        layer = self._graph_layer(o)
        last_word = first_word + words - 1
        top = E + D - 1

        dz_ids = []
        for wi in reversed(range(words)):
            word = first_word + wi
            # Gradient arriving from the consumer of this cell's output.
            if o == top:
                upper_piece = ("id", f"dy.t{t}.m{word}")
            elif o == E - 1:  # top encoder feeds the attention concat
                upper_piece = ("cols", ("id", f"dcat.t{t}"),
                               wi * H, (wi + 1) * H)
            else:
                upper_piece = ("rows", ("id", f"dxs.l{o + 1}.t{t}"),
                               wi * b, (wi + 1) * b)
            pieces = [upper_piece]
            dh_chain, dc_chain = self._chain_grad(o, t, word, last_word,
                                                  first_word, upper)
            if dh_chain:
                pieces.append(dh_chain)
            dh_src = ("sum", pieces)
            dc_src = dc_chain if dc_chain else ("zeros", (b, H))

            dz = g.add_matrix(f"dz.l{o}.t{t}.m{word}", b, 4 * H, "error")
            dhp = g.add_matrix(f"dhp.l{o}.t{t}.m{word}", b, H, "error")
            dcp = g.add_matrix(f"dcp.l{o}.t{t}.m{word}", b, H, "error")
            hp, cp = self._state_ids(o, t, word, first_word, last_word)
            node = OpNode(
                id=f"bw.cell.t{t}.m{word}.l{o}", kind="aggregate-activate",
                op="lstm_back",
                operands=sorted(set(
                    [f"z.l{o}.t{t}.m{word}", f"c.l{o}.t{t}.m{word}", f"w.l{o}"]
                    + recipe_ids(cp) + recipe_ids(dh_src) + recipe_ids(dc_src))),
                outputs=[dz, dhp, dcp],
                deps=self._dep_of(f"z.l{o}.t{t}.m{word}",
                                  f"c.l{o}.t{t}.m{word}", cp, dh_src, dc_src),
                layer=layer, time_step=t, micro_step=word,
                meta=_elem_meta(
                    b * H, CELL_BWD_FLOPS, b * 12 * H, b * 6 * H,
                    z=f"z.l{o}.t{t}.m{word}", c=f"c.l{o}.t{t}.m{word}",
                    c_prev=cp, dh=dh_src, dc=dc_src, w=f"w.l{o}", hidden=H,
                    extra_flops=2 * b * 4 * H * H))
            node.meta["flops"] += node.meta.pop("extra_flops")
            g.add_node(node)
            w_readers[f"w.l{o}"].append(node.id)
            dz_ids.append(dz)
        dz_ids.reverse()

        dzs = g.add_matrix(f"dzs.l{o}.t{t}", words * b, 4 * H, "error",
                           virtual=True)
        dzs_src = ("concat_rows", [("id", i) for i in dz_ids])
        wxT = g.add_matrix(f"w.l{o}.xT", 4 * H, H, "transpose-view",
                           transpose_of=f"w.l{o}")
        dxs = g.add_matrix(f"dxs.l{o}.t{t}", words * b, H, "error")
        err = OpNode(
            id=f"bw.err.t{t}.l{o}", kind="error-matmul", op="matmul",
            operands=dz_ids + [f"w.l{o}"], outputs=[dxs],
            deps=self._dep_of(dzs_src),
            layer=layer, time_step=t, micro_step=first_word,
            meta={"a": dzs, "b": wxT, "out": dxs,
                  "a_src": dzs_src,
                  "b_src": ("transpose", ("rows", ("id", f"w.l{o}"), 0, H)),
                  "m": words * b, "k": 4 * H, "n": H,
                  "flops": 2 * words * b * 4 * H * H})
        g.add_node(err)
        w_readers[f"w.l{o}"].append(err.id)

        xh_src = ("concat_rows", [
            ("concat_cols", [
                self._x_recipe(o, t, first_word + wi),
                self._state_ids(o, t, first_word + wi, first_word, last_word)[0],
            ]) for wi in range(words)])
        xhs = g.add_matrix(f"xhs.l{o}.t{t}", words * b, 2 * H, "input",
                           virtual=True)
        xhsT = g.add_matrix(f"xhs.l{o}.t{t}.T", 2 * H, words * b,
                            "transpose-view", transpose_of=xhs)
        dw = g.add_matrix(f"dw.l{o}.t{t}", 2 * H, 4 * H, "error")
        wg = OpNode(
            id=f"bw.wg.t{t}.l{o}", kind="matmul", op="matmul",
            operands=sorted(set(recipe_ids(xh_src) + dz_ids)), outputs=[dw],
            deps=self._dep_of(xh_src, dzs_src),
            layer=layer, time_step=t, micro_step=first_word,
            meta={"a": xhsT, "b": dzs, "out": dw,
                  "a_src": ("transpose", xh_src), "b_src": dzs_src,
                  "m": 2 * H, "k": words * b, "n": 4 * H,
                  "flops": 2 * 2 * H * words * b * 4 * H, "grad": True})
        g.add_node(wg)
        grads[f"w.l{o}"].append((t, dw))

    def _x_recipe(self, o: int, t: int, word: int):
        """The x input that fed (ordinal o, step t, word) forward."""
        E = self.spec.enc_layers
        if o == 0:
            return ("id", f"in.enc.t{t}.m{word}")
        if o < E:
            return ("id", f"h.l{o - 1}.t{t}.m{word}")
        if o == E:  # first decoder: attention output plus teacher forcing
            return ("id", f"x.dec.t{t}.m{word}")
        return ("id", f"h.l{o - 1}.t{t}.m{word}")

    def _attention_backward(self, t: int, w_readers, grads):
        g, b, H = self.g, self.b, self.H
        spec = self.spec
        src, dst = spec.bucket
        E = spec.enc_layers

        # d(attention output) = d(x.dec) rows of the first decoder's dxs.
        dx_src = ("id", f"dxs.l{E}.t{t}")
        apre_src = ("concat_rows", [("id", f"apre.t{t}.m{src + mi}")
                                    for mi in range(dst)])
        daps = g.add_matrix(f"daps.t{t}", dst * b, H, "error")
        back = OpNode(
            id=f"bw.attact.t{t}", kind="aggregate-activate", op="att_back",
            operands=sorted(set(recipe_ids(dx_src) + recipe_ids(apre_src))),
            outputs=[daps],
            deps=self._dep_of(dx_src, apre_src),
            layer=E, time_step=t, micro_step=src,
            meta=_elem_meta(dst * b * H, 3, 2 * dst * b * H, dst * b * H,
                            dx=dx_src, apre=apre_src))
        g.add_node(back)

        wattT = g.add_matrix("w.att.T", H, src * H, "transpose-view",
                             transpose_of="w.att")
        dcats = g.add_matrix(f"dcats.t{t}", dst * b, src * H, "error")
        err = OpNode(
            id=f"bw.atterr.t{t}", kind="error-matmul", op="matmul",
            operands=[daps, "w.att"], outputs=[dcats],
            deps=[back.id], layer=E, time_step=t, micro_step=src,
            meta={"a": daps, "b": wattT, "out": dcats,
                  "a_src": ("id", daps),
                  "b_src": ("transpose", ("id", "w.att")),
                  "m": dst * b, "k": H, "n": src * H,
                  "flops": 2 * dst * b * H * src * H})
        g.add_node(err)
        w_readers["w.att"].append(err.id)

        dcat = g.add_matrix(f"dcat.t{t}", b, src * H, "error")
        g.add_node(OpNode(
            id=f"bw.attred.t{t}", kind="aggregate-activate", op="reduce_rows",
            operands=[dcats], outputs=[dcat], deps=[err.id],
            layer=E, time_step=t, micro_step=src,
            meta=_elem_meta(b * src * H, 1, dst * b * src * H, b * src * H,
                            src_id=dcats, blocks=dst)))

        cats = g.add_matrix(f"cats.t{t}", dst * b, src * H, "input",
                            virtual=True)
        catsT = g.add_matrix(f"cats.t{t}.T", src * H, dst * b,
                             "transpose-view", transpose_of=cats)
        cat_src = ("concat_cols", [("id", f"h.l{E - 1}.t{t}.m{m}")
                                   for m in range(src)])
        dwatt = g.add_matrix(f"dw.att.t{t}", src * H, H, "error")
        wg = OpNode(
            id=f"bw.attwg.t{t}", kind="matmul", op="matmul",
            operands=sorted(set(recipe_ids(cat_src) + [daps])),
            outputs=[dwatt],
            deps=self._dep_of(cat_src) + [back.id],
            layer=E, time_step=t, micro_step=src,
            meta={"a": catsT, "b": daps, "out": dwatt,
                  "a_src": ("transpose", ("repeat_rows", cat_src, dst)),
                  "b_src": ("id", daps),
                  "m": src * H, "k": dst * b, "n": H,
                  "flops": 2 * src * H * dst * b * H, "grad": True})
        g.add_node(wg)
        grads["w.att"].append((t, dwatt))


def build_translator_forward(spec: TranslatorSpec) -> OpGraph:
    return _TranslatorBuilder(spec, train=False).build()


def build_translator_training(spec: TranslatorSpec) -> OpGraph:
    return _TranslatorBuilder(spec, train=True).build()


def translator_tensors(spec: TranslatorSpec, seed: int) -> oracle.TranslatorTensors:
    """Seeded parameters and inputs, shared verbatim by graph and oracle."""
    rng = np.random.default_rng(seed)
    H, b = spec.hidden, spec.batch
    src, dst = spec.bucket
    scale_w = 0.6 / math.sqrt(2 * H)
    lstm_weights = [rng.standard_normal((2 * H, 4 * H)) * scale_w
                    for _ in range(spec.n_lstm)]
    attention = rng.standard_normal((src * H, H)) * (0.6 / math.sqrt(src * H))
    enc_inputs, dec_inputs, targets = [], [], []
    for _ in range(spec.time_steps):
        enc_inputs.append([rng.standard_normal((b, H)) * 0.5 for _ in range(src)])
        dec_inputs.append([rng.standard_normal((b, H)) * 0.5 for _ in range(dst)])
        targets.append([rng.standard_normal((b, H)) * 0.5 for _ in range(dst)])
    return oracle.TranslatorTensors(
        hidden=H, enc_layers=spec.enc_layers, dec_layers=spec.dec_layers,
        src_len=src, dst_len=dst, lstm_weights=lstm_weights,
        attention=attention, enc_inputs=enc_inputs, dec_inputs=dec_inputs,
        targets=targets, eta=spec.eta)


def translator_store(spec: TranslatorSpec, seed: int) -> dict[str, np.ndarray]:
    """Initial float32 contents of the simulator's matrix store."""
    data = translator_tensors(spec, seed)
    store: dict[str, np.ndarray] = {}
    for o, w in enumerate(data.lstm_weights):
        store[f"w.l{o}"] = w.astype(np.float32)
    store["w.att"] = data.attention.astype(np.float32)
    for t in range(spec.time_steps):
        for m, x in enumerate(data.enc_inputs[t]):
            store[f"in.enc.t{t}.m{m}"] = x.astype(np.float32)
        for mi, x in enumerate(data.dec_inputs[t]):
            store[f"in.dec.t{t}.m{mi}"] = x.astype(np.float32)
        for mi, x in enumerate(data.targets[t]):
            store[f"tgt.t{t}.m{mi}"] = x.astype(np.float32)
    return store


# ---------------------------------------------------------------------------
# Plain matmul and convolution workloads
# ---------------------------------------------------------------------------

def build_matmul(m: int, k: int, n: int) -> OpGraph:
    g = OpGraph()
    g.add_matrix("A", m, k, "input")
    g.add_matrix("B", k, n, "weight")
    g.add_matrix("C", m, n, "output")
    g.add_node(OpNode(
        id="mm0", kind="matmul", op="matmul",
        operands=["A", "B"], outputs=["C"], deps=[],
        meta={"a": "A", "b": "B", "out": "C",
              "a_src": ("id", "A"), "b_src": ("id", "B"),
              "m": m, "k": k, "n": n, "flops": 2 * m * k * n}))
    g.meta.update({"workload": "matmul", "m": m, "k": k, "n": n})
    g.check_acyclic()
    return g


@dataclass
class Im2colLowering:
    a: MatrixDescriptor             # patches matrix
    b: MatrixDescriptor             # kernel matrix
    duplication: np.ndarray         # per (c, y, x): copies the lowering makes
    col_real_elems: np.ndarray      # per patches column: real (non-pad) reads

    @property
    def duplicated_bytes(self) -> int:
        eb = self.a.element_bytes
        return int(self.duplication.sum()) * eb * self._batch

    _batch: int = 1


def im2col(conv: ConvSpec) -> Im2colLowering:
    """Lower a convolution to GEMM operands plus a duplication map.

    The duplication map records how many patch copies each input element
    gets, so traffic accounting can charge the bytes the lowering really
    streams (synthesized padding zeros are free).
    """
    C, Hh, Ww = conv.in_channels, conv.height, conv.width
    oh, ow = conv.out_h, conv.out_w
    kcols = C * conv.kh * conv.kw
    dup = np.zeros((C, Hh, Ww), dtype=np.int64)
    col_real = np.zeros(kcols, dtype=np.int64)
    for oy in range(oh):
        for ox in range(ow):
            for c in range(C):
                for i in range(conv.kh):
                    iy = oy * conv.stride + i - conv.padding
                    if not 0 <= iy < Hh:
                        continue
                    for j in range(conv.kw):
                        ix = ox * conv.stride + j - conv.padding
                        if not 0 <= ix < Ww:
                            continue
                        dup[c, iy, ix] += 1
                        col_real[(c * conv.kh + i) * conv.kw + j] += 1
    a = MatrixDescriptor("conv.patches", conv.batch * oh * ow, kcols, "input")
    b = MatrixDescriptor("conv.kernels", kcols, conv.kernels, "weight")
    out = Im2colLowering(a=a, b=b, duplication=dup,
                         col_real_elems=col_real * conv.batch)
    out._batch = conv.batch
    return out


def im2col_patches(conv: ConvSpec, image: np.ndarray) -> np.ndarray:
    """Materialize the patches matrix for a (batch, C, H, W) input."""
    batch = conv.batch
    oh, ow = conv.out_h, conv.out_w
    kcols = conv.in_channels * conv.kh * conv.kw
    out = np.zeros((batch * oh * ow, kcols), dtype=image.dtype)
    for bi in range(batch):
        for oy in range(oh):
            for ox in range(ow):
                row = (bi * oh + oy) * ow + ox
                for c in range(conv.in_channels):
                    for i in range(conv.kh):
                        iy = oy * conv.stride + i - conv.padding
                        for j in range(conv.kw):
                            ix = ox * conv.stride + j - conv.padding
                            if 0 <= iy < conv.height and 0 <= ix < conv.width:
                                col = (c * conv.kh + i) * conv.kw + j
                                out[row, col] = image[bi, c, iy, ix]
    return out


def build_conv(conv: ConvSpec) -> OpGraph:
    low = im2col(conv)
    g = OpGraph()
    g.matrices[low.a.id] = low.a
    g.matrices[low.b.id] = low.b
    out_id = g.add_matrix("conv.out", low.a.rows, conv.kernels, "output")
    g.add_node(OpNode(
        id="conv0", kind="matmul", op="matmul",
        operands=[low.a.id, low.b.id], outputs=[out_id], deps=[],
        meta={"a": low.a.id, "b": low.b.id, "out": out_id,
              "a_src": ("id", low.a.id), "b_src": ("id", low.b.id),
              "m": low.a.rows, "k": low.a.cols, "n": conv.kernels,
              "flops": 2 * low.a.rows * low.a.cols * conv.kernels,
              "a_col_elems": low.col_real_elems}))
    g.meta.update({"workload": "conv", "conv": conv,
                   "duplicated_bytes": low.duplicated_bytes})
    g.check_acyclic()
    return g


# ---------------------------------------------------------------------------
# Workload objects and presets
# ---------------------------------------------------------------------------

@dataclass
class TranslatorWorkload:
    spec: TranslatorSpec
    train: bool = False
    name: str = "translator"
    kind: str = "translator"

    def build_graph(self) -> OpGraph:
        if self.train:
            return build_translator_training(self.spec)
        return build_translator_forward(self.spec)

    def init_store(self, seed: int) -> dict[str, np.ndarray]:
        return translator_store(self.spec, seed)

    def describe(self) -> str:
        s = self.spec
        mode = "train" if self.train else "fwd"
        return (f"translator[H={s.hidden},L={s.layers},b={s.batch},"
                f"bucket={s.bucket[0]}x{s.bucket[1]},ts={s.time_steps},{mode}]")


@dataclass
class MatmulWorkload:
    m: int
    k: int
    n: int
    name: str = "matmul"
    kind: str = "matmul"

    def build_graph(self) -> OpGraph:
        return build_matmul(self.m, self.k, self.n)

    def init_store(self, seed: int) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(seed)
        return {"A": (rng.standard_normal((self.m, self.k)) * 0.5).astype(np.float32),
                "B": (rng.standard_normal((self.k, self.n)) * 0.5).astype(np.float32)}

    def describe(self) -> str:
        return f"matmul[m={self.m},k={self.k},n={self.n}]"


@dataclass
class ConvWorkload:
    conv: ConvSpec
    name: str = "conv"
    kind: str = "conv"

    def build_graph(self) -> OpGraph:
        return build_conv(self.conv)

    def init_store(self, seed: int) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(seed)
        c = self.conv
        image = (rng.standard_normal((c.batch, c.in_channels, c.height,
                                      c.width)) * 0.5)
        patches = im2col_patches(c, image).astype(np.float32)
        kernels = (rng.standard_normal((c.in_channels * c.kh * c.kw,
                                        c.kernels)) * 0.5).astype(np.float32)
        return {"conv.patches": patches, "conv.kernels": kernels,
                "conv.image": image.astype(np.float32)}

    def describe(self) -> str:
        c = self.conv
        return (f"conv[{c.in_channels}x{c.height}x{c.width},{c.kernels}k,"
                f"{c.kh}x{c.kw},s{c.stride},p{c.padding},b{c.batch}]")


# Translator parameter presets. lstm0..lstm3 are artifact-defined stand-ins
# for the four published translator configurations (the original parameter
# table is not machine-readable); -desk variants run in seconds.
PRESETS: dict[str, dict] = {
    "lstm0": {"kind": "translator", "hidden": 1024, "layers": 8, "batch": 128,
              "bucket": [40, 50], "time_steps": 4, "train": True},
    "lstm1": {"kind": "translator", "hidden": 512, "layers": 5, "batch": 64,
              "bucket": [20, 25], "time_steps": 4, "train": True},
    "lstm2": {"kind": "translator", "hidden": 2048, "layers": 7, "batch": 32,
              "bucket": [10, 15], "time_steps": 2, "train": True},
    "lstm3": {"kind": "translator", "hidden": 1024, "layers": 5, "batch": 256,
              "bucket": [5, 10], "time_steps": 2, "train": True},
    "lstm0-desk": {"kind": "translator", "hidden": 64, "layers": 5, "batch": 8,
                   "bucket": [4, 6], "time_steps": 2, "train": True},
    "lstm-compute-desk": {"kind": "translator", "hidden": 8, "layers": 5,
                          "batch": 32, "bucket": [2, 2], "time_steps": 8,
                          "train": True},
    "translator-micro": {"kind": "translator", "hidden": 3, "layers": 5,
                         "batch": 3, "bucket": [2, 2], "time_steps": 1,
                         "train": True},
    "reload-heavy": {"kind": "matmul", "m": 64, "k": 512, "n": 512},
    "conv-desk": {"kind": "conv", "in_channels": 3, "height": 8, "width": 8,
                  "kernels": 8, "kh": 3, "kw": 3, "stride": 1, "padding": 1,
                  "batch": 2},
}


def parse_workload(raw: dict, default_batch: int = 3):
    """Turn a workload mapping (config file block or preset) into a workload."""
    if not isinstance(raw, dict):
        raise WorkloadError("workload block must be a mapping")
    raw = dict(raw)
    preset = raw.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise WorkloadError(
                f"unknown workload preset {preset!r}; options: "
                f"{', '.join(sorted(PRESETS))}")
        merged = dict(PRESETS[preset])
        merged.update(raw)
        raw = merged
        name = preset
    else:
        name = raw.get("kind", "workload")
    kind = raw.pop("kind", None)
    if kind == "translator":
        spec = TranslatorSpec(
            hidden=raw.pop("hidden"),
            layers=raw.pop("layers", 5),
            batch=raw.pop("batch", default_batch),
            bucket=tuple(raw.pop("bucket", (4, 6))),
            time_steps=raw.pop("time_steps", 1),
            eta=raw.pop("eta", 0.05))
        train = raw.pop("train", False)
        _reject_extra(raw)
        return TranslatorWorkload(spec=spec, train=bool(train), name=name)
    if kind == "matmul":
        wl = MatmulWorkload(m=raw.pop("m"), k=raw.pop("k"), n=raw.pop("n"),
                            name=name)
        _reject_extra(raw)
        return wl
    if kind == "conv":
        conv = ConvSpec(
            in_channels=raw.pop("in_channels"), height=raw.pop("height"),
            width=raw.pop("width"), kernels=raw.pop("kernels"),
            kh=raw.pop("kh"), kw=raw.pop("kw"), stride=raw.pop("stride", 1),
            padding=raw.pop("padding", 0), batch=raw.pop("batch", 1))
        wl = ConvWorkload(conv=conv, name=name)
        _reject_extra(raw)
        return wl
    raise WorkloadError(f"unknown workload kind {kind!r}")


def _reject_extra(raw: dict) -> None:
    if raw:
        raise WorkloadError(
            f"unknown workload key(s): {', '.join(sorted(raw))}")

"""Reference numerics: dense matmul, an LSTM cell with analytic gradients,
and a plain translator forward/backward chain.

Everything here runs in float64 with a fixed summation order and no timing;
it is the ground truth the simulator's 32-bit functional path is checked
against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Array = np.ndarray


class ShapeError(ValueError):
    pass


def sigmoid(z: Array) -> Array:
    return 1.0 / (1.0 + np.exp(-z))


def matmul(a: Array, b: Array) -> Array:
    """Dense product with k-major accumulation.

    Partial products are added in increasing-k order, the same order a naive
    triple loop with k innermost produces, so results agree bit for bit.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul operands must be 2-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"inner dimensions differ: {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for k in range(a.shape[1]):
        out += np.outer(a[:, k], b[k, :])
    return out


@dataclass(frozen=True)
class LstmParams:
    """Weight of one LSTM layer: [x | h_prev] (batch x 2H) times W (2H x 4H).

    The 4H axis concatenates the gate groups in the fixed order
    (input, forget, cell-candidate, output).
    """
    hidden: int
    weight: Array

    def __post_init__(self):
        h = self.hidden
        if self.weight.shape != (2 * h, 4 * h):
            raise ShapeError(
                f"LSTM weight must be {2 * h}x{4 * h}, got {self.weight.shape}")


def _split_gates(z: Array, h: int):
    return z[:, 0:h], z[:, h:2 * h], z[:, 2 * h:3 * h], z[:, 3 * h:4 * h]


def lstm_cell(params: LstmParams, x: Array, h_prev: Array,
              c_prev: Array) -> tuple[Array, Array, Array]:
    """One LSTM step. Returns (h, c, z) with z the raw batch x 4H pre-activation."""
    h = params.hidden
    for name, m in (("x", x), ("h_prev", h_prev), ("c_prev", c_prev)):
        if m.shape[1] != h:
            raise ShapeError(f"{name} must have {h} columns, got {m.shape}")
    z = matmul(np.concatenate([x, h_prev], axis=1), params.weight)
    zi, zf, zg, zo = _split_gates(z, h)
    i, f, g, o = sigmoid(zi), sigmoid(zf), np.tanh(zg), sigmoid(zo)
    c = f * c_prev + i * g
    return o * np.tanh(c), c, z


def lstm_backward(params: LstmParams, x: Array, h_prev: Array, c_prev: Array,
                  z: Array, c: Array, dh: Array, dc: Array):
    """Analytic gradients of lstm_cell.

    Returns (dW, dx, dh_prev, dc_prev) given upstream gradients dh, dc and
    the cached forward tensors (z and the new cell state c).
    """
    h = params.hidden
    zi, zf, zg, zo = _split_gates(z, h)
    i, f, g, o = sigmoid(zi), sigmoid(zf), np.tanh(zg), sigmoid(zo)
    tanh_c = np.tanh(c)

    do = dh * tanh_c
    dct = dc + dh * o * (1.0 - tanh_c ** 2)
    di, df, dg = dct * g, dct * c_prev, dct * i
    dc_prev = dct * f

    dz = np.concatenate([
        di * i * (1.0 - i),
        df * f * (1.0 - f),
        dg * (1.0 - g ** 2),
        do * o * (1.0 - o),
    ], axis=1)

    xh = np.concatenate([x, h_prev], axis=1)
    dw = matmul(xh.T, dz)
    dxh = matmul(dz, params.weight.T)
    return dw, dxh[:, :h], dxh[:, h:], dc_prev


def sgd_update(w: Array, grad: Array, eta: float) -> Array:
    """Plain descent step w - eta * grad."""
    if w.shape != grad.shape:
        raise ShapeError(f"weight {w.shape} and gradient {grad.shape} differ")
    if not eta > 0:
        raise ValueError(f"eta must be > 0, got {eta!r}")
    return w - eta * grad


# ---------------------------------------------------------------------------
# Translator reference chain (encoders -> attention -> decoders).
# ---------------------------------------------------------------------------

@dataclass
class TranslatorTensors:
    """Seeded parameters and inputs shared with the simulator.

    lstm_weights has one 2H x 4H entry per LSTM layer (encoders then
    decoders); attention maps the concatenation of all final-encoder outputs
    of a time-step ((src_len*H) x H). Inputs/targets are indexed
    [time_step][word].
    """
    hidden: int
    enc_layers: int
    dec_layers: int
    src_len: int
    dst_len: int
    lstm_weights: list[Array]
    attention: Array
    enc_inputs: list[list[Array]]
    dec_inputs: list[list[Array]]
    targets: list[list[Array]]
    eta: float = 0.05


def translator_forward(data: TranslatorTensors, time_step: int):
    """Run one time-step, returning (outputs, cache).

    outputs maps semantic names ("x.l{layer}.m{word}" layer inputs, "y.m{word}"
    final outputs, "h/c.l{layer}.m{word}" states) to arrays; cache keeps what
    backward needs. States enter the step from cache["h_in"]/["c_in"] when
    provided on data (stateful chaining handled by the caller).
    """
    return _forward_step(data, time_step, None, None)


def _forward_step(data: TranslatorTensors, t: int, h_in, c_in):
    H = data.hidden
    E, D = data.enc_layers, data.dec_layers
    n_lstm = E + D
    batch = data.enc_inputs[t][0].shape[0]
    if h_in is None:
        h_in = [np.zeros((batch, H)) for _ in range(n_lstm)]
    if c_in is None:
        c_in = [np.zeros((batch, H)) for _ in range(n_lstm)]

    h = [m.copy() for m in h_in]
    c = [m.copy() for m in c_in]
    outputs: dict[str, Array] = {}
    cache: dict = {"lstm": {}, "att": {}, "h_in": h_in, "c_in": c_in}

    enc_top: list[Array] = []
    for m in range(data.src_len):
        x = data.enc_inputs[t][m]
        for l in range(E):
            outputs[f"x.l{l}.m{m}"] = x
            params = LstmParams(H, data.lstm_weights[l])
            h_new, c_new, z = lstm_cell(params, x, h[l], c[l])
            cache["lstm"][(l, m)] = (x, h[l], c[l], z, c_new)
            h[l], c[l] = h_new, c_new
            outputs[f"h.l{l}.m{m}"] = h_new
            outputs[f"c.l{l}.m{m}"] = c_new
            x = h_new
        enc_top.append(x)

    concat = np.concatenate(enc_top, axis=1)
    for m in range(data.dst_len):
        word = data.src_len + m
        a_pre = matmul(concat, data.attention)
        a_out = np.tanh(a_pre)
        cache["att"][m] = (concat, a_pre)
        outputs[f"att.m{word}"] = a_out
        x = a_out + data.dec_inputs[t][m]
        for li in range(D):
            l = E + li
            outputs[f"x.l{l}.m{word}"] = x
            params = LstmParams(H, data.lstm_weights[l])
            h_new, c_new, z = lstm_cell(params, x, h[l], c[l])
            cache["lstm"][(l, word)] = (x, h[l], c[l], z, c_new)
            h[l], c[l] = h_new, c_new
            outputs[f"h.l{l}.m{word}"] = h_new
            outputs[f"c.l{l}.m{word}"] = c_new
            x = h_new
        outputs[f"y.m{word}"] = x
    cache["h_out"], cache["c_out"] = h, c
    return outputs, cache


def translator_training(data: TranslatorTensors, time_steps: int):
    """Forward all steps with state chaining, then truncated BPTT.

    Loss per decoded word is mean-squared error against the seeded targets;
    the top gradient is 2*(y - target)/batch. Returns (dw, outputs) where dw
    maps LSTM layer index (and "attention") to the accumulated gradient over
    the whole window; all gradients are w.r.t. the initial weights.
    """
    H = data.hidden
    E, D = data.enc_layers, data.dec_layers
    n_lstm = E + D
    caches, all_out = [], {}
    h_in = c_in = None
    for t in range(time_steps):
        out, cache = _forward_step(data, t, h_in, c_in)
        h_in, c_in = cache["h_out"], cache["c_out"]
        caches.append(cache)
        for k, v in out.items():
            all_out[f"t{t}.{k}"] = v

    dw = {l: np.zeros_like(data.lstm_weights[l]) for l in range(n_lstm)}
    dw["attention"] = np.zeros_like(data.attention)
    batch = data.enc_inputs[0][0].shape[0]
    dh_next = [np.zeros((batch, H)) for _ in range(n_lstm)]
    dc_next = [np.zeros((batch, H)) for _ in range(n_lstm)]

    for t in reversed(range(time_steps)):
        cache = caches[t]
        dh = [m.copy() for m in dh_next]
        dc = [m.copy() for m in dc_next]
        d_concat = np.zeros_like(cache["att"][0][0])

        for m in reversed(range(data.dst_len)):
            word = data.src_len + m
            y = all_out[f"t{t}.y.m{word}"]
            dx = 2.0 * (y - data.targets[t][m]) / batch
            for li in reversed(range(D)):
                l = E + li
                params = LstmParams(H, data.lstm_weights[l])
                x, h_prev, c_prev, z, c_new = cache["lstm"][(l, word)]
                dwl, dx, dh_prev, dc_prev = lstm_backward(
                    params, x, h_prev, c_prev, z, c_new, dx + dh[l], dc[l])
                dw[l] += dwl
                dh[l], dc[l] = dh_prev, dc_prev
            concat, a_pre = cache["att"][m]
            da_pre = dx * (1.0 - np.tanh(a_pre) ** 2)
            dw["attention"] += matmul(concat.T, da_pre)
            d_concat += matmul(da_pre, data.attention.T)

        for m in reversed(range(data.src_len)):
            dx = d_concat[:, m * H:(m + 1) * H]
            for l in reversed(range(E)):
                params = LstmParams(H, data.lstm_weights[l])
                x, h_prev, c_prev, z, c_new = cache["lstm"][(l, m)]
                dwl, dx, dh_prev, dc_prev = lstm_backward(
                    params, x, h_prev, c_prev, z, c_new, dx + dh[l], dc[l])
                dw[l] += dwl
                dh[l], dc[l] = dh_prev, dc_prev

        dh_next, dc_next = dh, dc

    return dw, all_out

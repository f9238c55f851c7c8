"""Batched LSTM forward and backward passes in plain numpy.

Standard LSTM (no peepholes, no projection).  The fused gate matrices
order rows [input, forget, output, candidate] so the three sigmoid
gates occupy one contiguous block.  The backward pass is
hand-specialized reverse-mode accumulation through the unrolled
recurrence; it returns both parameter gradients and the gradient
w.r.t. the input sequence so cells can be stacked.

``lstm_forward_batch`` / ``lstm_backward_batch`` are the plain
single-direction reference implementations.  The bidirectional pair
runs both directions through one stacked buffer loop (batched matmuls,
preallocated caches), which is what the grid model uses; a unit test
pins it against the reference composition.  Computation runs in the
dtype of the input sequence (float32 for training speed, float64 for
gradient checks).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class LstmCellParams:
    """Fused gate parameters: rows ordered [input, forget, output, candidate]."""

    w_x: np.ndarray  # (4h, input_size)
    w_h: np.ndarray  # (4h, h)
    bias: np.ndarray  # (4h,)

    def __post_init__(self):
        h = self.hidden_size
        if self.w_x.shape[0] != 4 * h or self.w_h.shape != (4 * h, h):
            raise ValueError("gate matrices must share the fused 4h row count")
        if self.bias.shape != (4 * h,):
            raise ValueError("bias must have 4h entries")

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_x.shape[1]

    def astype(self, dtype) -> "LstmCellParams":
        return LstmCellParams(
            self.w_x.astype(dtype), self.w_h.astype(dtype), self.bias.astype(dtype)
        )


@dataclass(eq=False)
class LstmGrads:
    w_x: np.ndarray
    w_h: np.ndarray
    bias: np.ndarray


def init_lstm_params(
    input_size: int, hidden_size: int, rng: np.random.Generator,
    forget_bias: float = 1.0,
) -> LstmCellParams:
    """Uniform +-1/sqrt(hidden) weights, forget-gate bias at ``forget_bias``."""
    bound = 1.0 / np.sqrt(hidden_size)
    w_x = rng.uniform(-bound, bound, (4 * hidden_size, input_size))
    w_h = rng.uniform(-bound, bound, (4 * hidden_size, hidden_size))
    bias = np.zeros(4 * hidden_size)
    bias[hidden_size:2 * hidden_size] = forget_bias
    return LstmCellParams(w_x, w_h, bias)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp stays finite in float32; sigmoid saturates well before the clip.
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


def _sigmoid_inplace(x: np.ndarray) -> None:
    np.clip(x, -60.0, 60.0, out=x)
    np.negative(x, out=x)
    np.exp(x, out=x)
    x += 1.0
    np.reciprocal(x, out=x)


def lstm_forward_batch(params: LstmCellParams, x: np.ndarray):
    """Run the recurrence over a batch of sequences (reference path).

    ``x`` is (batch, steps, features); returns the full hidden sequence
    (batch, steps, hidden) and the cache needed by the backward pass.
    Initial hidden and cell states are zero.
    """
    if x.ndim != 3 or x.shape[2] != params.input_size:
        raise ValueError(
            f"expected input (batch, steps, {params.input_size}), got {x.shape}"
        )
    dtype = x.dtype
    b, t_steps, _ = x.shape
    h = params.hidden_size
    zx = x.reshape(b * t_steps, -1) @ params.w_x.T
    zx += params.bias
    zx = zx.reshape(b, t_steps, 4 * h)

    sig_gates = np.empty((b, t_steps, 3 * h), dtype=dtype)  # input, forget, output
    cand = np.empty((b, t_steps, h), dtype=dtype)
    cells = np.empty((b, t_steps, h), dtype=dtype)
    cells_tanh = np.empty((b, t_steps, h), dtype=dtype)
    hidden = np.empty((b, t_steps, h), dtype=dtype)

    h_prev = np.zeros((b, h), dtype=dtype)
    c_prev = np.zeros((b, h), dtype=dtype)
    w_h_t = params.w_h.T
    for t in range(t_steps):
        z = zx[:, t] + h_prev @ w_h_t
        sig = _sigmoid(z[:, :3 * h])
        g = np.tanh(z[:, 3 * h:])
        c_prev = sig[:, h:2 * h] * c_prev + sig[:, :h] * g
        tc = np.tanh(c_prev)
        h_prev = sig[:, 2 * h:] * tc
        sig_gates[:, t] = sig
        cand[:, t] = g
        cells[:, t] = c_prev
        cells_tanh[:, t] = tc
        hidden[:, t] = h_prev
    cache = (x, sig_gates, cand, cells, cells_tanh, hidden)
    return hidden, cache


def lstm_backward_batch(params: LstmCellParams, cache, d_hidden: np.ndarray):
    """Backpropagate through time given d(loss)/d(hidden sequence).

    Returns (d_input, LstmGrads).
    """
    x, sig_gates, cand, cells, cells_tanh, hidden = cache
    dtype = x.dtype
    b, t_steps, h = hidden.shape
    dz_all = np.empty((b, t_steps, 4 * h), dtype=dtype)
    dh_next = np.zeros((b, h), dtype=dtype)
    dc_next = np.zeros((b, h), dtype=dtype)
    for t in range(t_steps - 1, -1, -1):
        dh = d_hidden[:, t] + dh_next
        sig = sig_gates[:, t]
        gi, gf, go = sig[:, :h], sig[:, h:2 * h], sig[:, 2 * h:]
        g = cand[:, t]
        tc = cells_tanh[:, t]
        dc = dc_next + dh * go * (1.0 - tc * tc)
        c_prev = cells[:, t - 1] if t > 0 else 0.0
        dz = dz_all[:, t]
        dz[:, :h] = (dc * g) * gi * (1.0 - gi)
        dz[:, h:2 * h] = (dc * c_prev) * gf * (1.0 - gf)
        dz[:, 2 * h:3 * h] = (dh * tc) * go * (1.0 - go)
        dz[:, 3 * h:] = (dc * gi) * (1.0 - g * g)
        dh_next = dz @ params.w_h
        dc_next = dc * gf
    h_prev_seq = np.concatenate([np.zeros((b, 1, h), dtype=dtype), hidden[:, :-1]], axis=1)
    flat_dz = dz_all.reshape(b * t_steps, 4 * h)
    grads = LstmGrads(
        w_x=flat_dz.T @ x.reshape(b * t_steps, -1),
        w_h=flat_dz.T @ h_prev_seq.reshape(b * t_steps, h),
        bias=flat_dz.sum(axis=0),
    )
    d_input = dz_all @ params.w_x
    return d_input, grads


def lstm_forward(params: LstmCellParams, sequence: np.ndarray) -> np.ndarray:
    """Hidden sequence for a single (steps, features) input."""
    sequence = np.asarray(sequence, dtype=float)
    if sequence.ndim != 2:
        raise ValueError(f"expected a (steps, features) sequence, got {sequence.shape}")
    hidden, _ = lstm_forward_batch(params, sequence[None])
    return hidden[0]


def bidirectional_forward_batch(
    fwd: LstmCellParams, bwd: LstmCellParams, x: np.ndarray
):
    """Concatenate forward and reversed-backward hidden sequences.

    ``x`` is (batch, steps, features); output is (batch, steps, 2h).
    Both directions run through one stacked recurrence loop; caches are
    kept time-major so every per-step slice is contiguous.
    """
    if x.ndim != 3 or x.shape[2] != fwd.input_size:
        raise ValueError(
            f"expected input (batch, steps, {fwd.input_size}), got {x.shape}"
        )
    dtype = x.dtype
    b, t_steps, d_in = x.shape
    h = fwd.hidden_size
    w_x = np.stack([fwd.w_x.T, bwd.w_x.T])  # (2, D, 4h)
    w_h = np.stack([fwd.w_h.T, bwd.w_h.T])  # (2, h, 4h)
    bias = np.stack([fwd.bias, bwd.bias])[:, None, :]

    x2 = np.stack([x, x[:, ::-1]])  # (2, B, T, D)
    zx = np.matmul(x2.reshape(2, b * t_steps, d_in), w_x)
    zx += bias
    zx = np.ascontiguousarray(
        zx.reshape(2, b, t_steps, 4 * h).transpose(2, 0, 1, 3)
    )  # (T, 2, B, 4h)

    sig_gates = np.empty((t_steps, 2, b, 3 * h), dtype=dtype)
    cand = np.empty((t_steps, 2, b, h), dtype=dtype)
    cells = np.empty((t_steps, 2, b, h), dtype=dtype)
    cells_tanh = np.empty((t_steps, 2, b, h), dtype=dtype)
    hidden = np.empty((t_steps, 2, b, h), dtype=dtype)

    h_prev = np.zeros((2, b, h), dtype=dtype)
    c_prev = np.zeros((2, b, h), dtype=dtype)
    zbuf = np.empty((2, b, 4 * h), dtype=dtype)
    tmp = np.empty((2, b, h), dtype=dtype)
    for t in range(t_steps):
        np.matmul(h_prev, w_h, out=zbuf)
        zbuf += zx[t]
        sig = sig_gates[t]
        sig[...] = zbuf[:, :, :3 * h]
        _sigmoid_inplace(sig)
        g = cand[t]
        np.tanh(zbuf[:, :, 3 * h:], out=g)
        c = cells[t]
        np.multiply(sig[:, :, h:2 * h], c_prev, out=c)
        np.multiply(sig[:, :, :h], g, out=tmp)
        c += tmp
        tc = cells_tanh[t]
        np.tanh(c, out=tc)
        h_now = hidden[t]
        np.multiply(sig[:, :, 2 * h:], tc, out=h_now)
        h_prev = h_now
        c_prev = c

    # Forward direction as-is; backward direction re-reversed to grid order.
    out = np.empty((b, t_steps, 2 * h), dtype=dtype)
    out[:, :, :h] = hidden[:, 0].transpose(1, 0, 2)
    out[:, :, h:] = hidden[::-1, 1].transpose(1, 0, 2)
    cache = (x2, sig_gates, cand, cells, cells_tanh, hidden)
    return out, cache


def bidirectional_backward_batch(
    fwd: LstmCellParams, bwd: LstmCellParams, cache, d_out: np.ndarray
):
    """Backward through both directions; returns (d_input, grads_fwd, grads_bwd)."""
    x2, sig_gates, cand, cells, cells_tanh, hidden = cache
    dtype = x2.dtype
    t_steps, _, b, h = hidden.shape
    d_in = x2.shape[3]
    w_h = np.stack([fwd.w_h, bwd.w_h])  # (2, 4h, h)

    d_hidden = np.empty((t_steps, 2, b, h), dtype=dtype)
    d_hidden[:, 0] = d_out[:, :, :h].transpose(1, 0, 2)
    d_hidden[:, 1] = d_out[:, ::-1, h:].transpose(1, 0, 2)

    dz_all = np.empty((t_steps, 2, b, 4 * h), dtype=dtype)
    dh_next = np.zeros((2, b, h), dtype=dtype)
    dc = np.empty((2, b, h), dtype=dtype)
    dc_next = np.zeros((2, b, h), dtype=dtype)
    tmp = np.empty((2, b, h), dtype=dtype)
    for t in range(t_steps - 1, -1, -1):
        dh = d_hidden[t]
        dh += dh_next
        sig = sig_gates[t]
        gi, gf, go = sig[:, :, :h], sig[:, :, h:2 * h], sig[:, :, 2 * h:]
        g = cand[t]
        tc = cells_tanh[t]
        # dc = dc_next + dh * go * (1 - tc^2)
        np.multiply(tc, tc, out=dc)
        np.subtract(1.0, dc, out=dc)
        dc *= go
        dc *= dh
        dc += dc_next
        dz = dz_all[t]
        d_i, d_f, d_o, d_g = (dz[:, :, :h], dz[:, :, h:2 * h],
                              dz[:, :, 2 * h:3 * h], dz[:, :, 3 * h:])
        np.multiply(dc, g, out=d_i)
        np.subtract(1.0, gi, out=tmp)
        tmp *= gi
        d_i *= tmp
        if t > 0:
            np.multiply(dc, cells[t - 1], out=d_f)
        else:
            d_f[...] = 0.0
        np.subtract(1.0, gf, out=tmp)
        tmp *= gf
        d_f *= tmp
        np.multiply(dh, tc, out=d_o)
        np.subtract(1.0, go, out=tmp)
        tmp *= go
        d_o *= tmp
        np.multiply(dc, gi, out=d_g)
        np.multiply(g, g, out=tmp)
        np.subtract(1.0, tmp, out=tmp)
        d_g *= tmp
        np.matmul(dz, w_h, out=dh_next)
        np.multiply(dc, gf, out=dc_next)

    # Per-direction flat views for the parameter gradients.
    dz2 = np.ascontiguousarray(dz_all.transpose(1, 0, 2, 3)).reshape(2, t_steps * b, 4 * h)
    h_prev = np.empty((2, t_steps, b, h), dtype=dtype)
    h_prev[:, 0] = 0.0
    h_prev[:, 1:] = hidden[:-1].transpose(1, 0, 2, 3)
    h_prev = h_prev.reshape(2, t_steps * b, h)
    # x2 is (2, B, T, D) batch-major; rebuild time-major flats to match dz2.
    x_tmaj = np.ascontiguousarray(x2.transpose(0, 2, 1, 3)).reshape(2, t_steps * b, d_in)

    dw_x = np.matmul(dz2.transpose(0, 2, 1), x_tmaj)  # (2, 4h, D)
    dw_h = np.matmul(dz2.transpose(0, 2, 1), h_prev)  # (2, 4h, h)
    dbias = dz2.sum(axis=1)
    grads_f = LstmGrads(w_x=dw_x[0], w_h=dw_h[0], bias=dbias[0])
    grads_b = LstmGrads(w_x=dw_x[1], w_h=dw_h[1], bias=dbias[1])

    w_x_stack = np.stack([fwd.w_x, bwd.w_x])  # (2, 4h, D)
    dx2 = np.matmul(dz2, w_x_stack)  # (2, T*B, D) time-major
    dx2 = dx2.reshape(2, t_steps, b, d_in)
    d_input = np.ascontiguousarray(dx2[0].transpose(1, 0, 2))
    d_input += dx2[1, ::-1].transpose(1, 0, 2)
    return d_input, grads_f, grads_b


def bidirectional_over_axis(
    fwd: LstmCellParams, bwd: LstmCellParams, grid: np.ndarray, axis: str
) -> np.ndarray:
    """Run a bidirectional cell over one grid axis of a (time, freq, feat) input.

    ``axis`` selects the recurrence direction: "time" runs over the first
    axis batching the second, "frequency" the reverse.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 3:
        raise ValueError(f"expected (time, freq, features), got {grid.shape}")
    if axis == "frequency":
        out, _ = bidirectional_forward_batch(fwd, bwd, grid)
        return out
    if axis == "time":
        swapped = np.ascontiguousarray(np.swapaxes(grid, 0, 1))
        out, _ = bidirectional_forward_batch(fwd, bwd, swapped)
        return np.swapaxes(out, 0, 1)
    raise ValueError(f"axis must be 'time' or 'frequency', got {axis!r}")

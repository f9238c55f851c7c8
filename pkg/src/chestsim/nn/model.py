"""Recurrent grid channel estimator: three bidirectional LSTM cells that
sweep frequency, time and frequency again, followed by a shared-weight
per-cell dense head producing the real and imaginary channel estimate.

The model is dimension-agnostic: all parameters depend only on the
channel count and hidden size, so one trained model runs on any grid
size.  Computation is float64; the file format stores float32 blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .._container import ContainerError, read_container, write_container
from ..ofdm import GridSpec, PilotPattern
from .lstm import (
    LstmCellParams,
    bidirectional_backward_batch,
    bidirectional_forward_batch,
    init_lstm_params,
)

MODEL_MAGIC = b"RNNE"
AXIS_ORDER = ("frequency", "time", "frequency")

BASE_CHANNELS = 5
AUGMENTED_CHANNELS = 7


class ModelFormatError(ContainerError):
    """Raised when a model file fails to load cleanly."""


@dataclass(eq=False)
class RnnEstimatorModel:
    """All parameters plus architecture metadata and training provenance."""

    cells: list  # three (forward, backward) LstmCellParams pairs, axes F, T, F
    head1_w: np.ndarray  # (8, 2h) ReLU layer
    head1_b: np.ndarray
    head2_w: np.ndarray  # (2, 8) linear output: real, imaginary
    head2_b: np.ndarray
    hidden_size: int
    in_channels: int
    augmented: bool
    provenance: dict = field(default_factory=dict)

    def param_items(self):
        """Yield (name, array) for every trainable parameter, fixed order."""
        for idx, (fwd, bwd) in enumerate(self.cells):
            for tag, cell in (("fwd", fwd), ("bwd", bwd)):
                yield f"cell{idx}_{tag}.w_x", cell.w_x
                yield f"cell{idx}_{tag}.w_h", cell.w_h
                yield f"cell{idx}_{tag}.bias", cell.bias
        yield "head1.w", self.head1_w
        yield "head1.b", self.head1_b
        yield "head2.w", self.head2_w
        yield "head2.b", self.head2_b

    def num_parameters(self) -> int:
        return sum(arr.size for _, arr in self.param_items())

    @property
    def dtype(self):
        return self.head1_w.dtype

    def astype(self, dtype) -> "RnnEstimatorModel":
        """Copy of the model with all parameters cast to ``dtype``."""
        return RnnEstimatorModel(
            cells=[(f.astype(dtype), b.astype(dtype)) for f, b in self.cells],
            head1_w=self.head1_w.astype(dtype),
            head1_b=self.head1_b.astype(dtype),
            head2_w=self.head2_w.astype(dtype),
            head2_b=self.head2_b.astype(dtype),
            hidden_size=self.hidden_size,
            in_channels=self.in_channels,
            augmented=self.augmented,
            provenance=self.provenance,
        )


def init_model(
    hidden_size: int,
    rng: np.random.Generator,
    augmented: bool = False,
    head1_units: int = 8,
) -> RnnEstimatorModel:
    in_channels = AUGMENTED_CHANNELS if augmented else BASE_CHANNELS
    sizes = [in_channels, 2 * hidden_size, 2 * hidden_size]
    cells = [
        (init_lstm_params(d, hidden_size, rng), init_lstm_params(d, hidden_size, rng))
        for d in sizes
    ]
    bound = 1.0 / np.sqrt(hidden_size)
    head1_w = rng.uniform(-bound, bound, (head1_units, 2 * hidden_size))
    head1_b = np.zeros(head1_units)
    head2_w = rng.uniform(-bound, bound, (2, head1_units))
    head2_b = np.zeros(2)
    return RnnEstimatorModel(
        cells=cells,
        head1_w=head1_w, head1_b=head1_b,
        head2_w=head2_w, head2_b=head2_b,
        hidden_size=hidden_size,
        in_channels=in_channels,
        augmented=augmented,
    )


def build_input_tensor(
    ls_grid: np.ndarray,
    pattern: PilotPattern,
    spec: GridSpec,
    y: np.ndarray | None = None,
    augmented: bool = False,
) -> np.ndarray:
    """Stack the estimator inputs into an (n_T, n_F, C) tensor.

    Channels: Re/Im of the pilot LS grid (zeros at data cells), the
    pilot mask, and the normalized time and frequency positions of each
    cell.  With ``augmented`` the Re/Im of the full received grid are
    appended (C grows from 5 to 7).
    """
    n_t, n_f = ls_grid.shape
    if pattern.mask.shape != (n_t, n_f):
        raise ValueError("pattern does not match the grid shape")
    if augmented and y is None:
        raise ValueError("augmented input requested but no received grid given")
    k_norm = np.arange(n_t) / (n_t - 1) if n_t > 1 else np.zeros(1)
    n_norm = np.arange(n_f) / (n_f - 1) if n_f > 1 else np.zeros(1)
    channels = [
        ls_grid.real,
        ls_grid.imag,
        pattern.mask.astype(float),
        np.broadcast_to(k_norm[:, None], (n_t, n_f)),
        np.broadcast_to(n_norm[None, :], (n_t, n_f)),
    ]
    if augmented:
        channels.extend([y.real, y.imag])
    return np.stack(channels, axis=-1).astype(float)


def head_forward(
    head1_w: np.ndarray, head1_b: np.ndarray,
    head2_w: np.ndarray, head2_b: np.ndarray,
    features: np.ndarray,
) -> np.ndarray:
    """Shared-weight dense head applied at every grid cell.

    ReLU layer then a two-neuron linear layer whose outputs are the real
    and imaginary parts of the channel estimate.
    """
    features = np.asarray(features)
    if features.shape[-1] != head1_w.shape[1]:
        raise ValueError(
            f"feature width {features.shape[-1]} does not match head input "
            f"{head1_w.shape[1]}"
        )
    act1 = np.maximum(features @ head1_w.T + head1_b, 0.0)
    out = act1 @ head2_w.T + head2_b
    return out[..., 0] + 1j * out[..., 1]


def _forward_batch_with_cache(model: RnnEstimatorModel, x: np.ndarray):
    """Full forward pass on (batch, n_T, n_F, C); returns estimate and caches."""
    if x.ndim != 4 or x.shape[3] != model.in_channels:
        raise ValueError(
            f"expected input (batch, n_T, n_F, {model.in_channels}), got {x.shape}"
        )
    if x.dtype != model.dtype:
        x = x.astype(model.dtype)
    n_b, n_t, n_f, _ = x.shape
    h2 = 2 * model.hidden_size
    caches = []

    # Cell 0: frequency axis (batch over time rows).
    a0 = x.reshape(n_b * n_t, n_f, -1)
    out0, cache0 = bidirectional_forward_batch(*model.cells[0], a0)
    # Cell 1: time axis (batch over subcarriers).
    a1 = np.ascontiguousarray(
        out0.reshape(n_b, n_t, n_f, h2).swapaxes(1, 2)
    ).reshape(n_b * n_f, n_t, h2)
    out1, cache1 = bidirectional_forward_batch(*model.cells[1], a1)
    # Cell 2: frequency axis again.
    a2 = np.ascontiguousarray(
        out1.reshape(n_b, n_f, n_t, h2).swapaxes(1, 2)
    ).reshape(n_b * n_t, n_f, h2)
    out2, cache2 = bidirectional_forward_batch(*model.cells[2], a2)
    caches = [cache0, cache1, cache2]

    feat = out2.reshape(n_b, n_t, n_f, h2)
    pre1 = feat @ model.head1_w.T + model.head1_b
    act1 = np.maximum(pre1, 0.0)
    out = act1 @ model.head2_w.T + model.head2_b
    h_hat = out[..., 0] + 1j * out[..., 1]
    head_cache = (feat, act1)
    return h_hat, (caches, head_cache, (n_b, n_t, n_f))


def forward_batch(model: RnnEstimatorModel, x: np.ndarray) -> np.ndarray:
    return _forward_batch_with_cache(model, x)[0]


def forward(model: RnnEstimatorModel, x: np.ndarray) -> np.ndarray:
    """Complex channel estimate for one (n_T, n_F, C) input tensor."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 3:
        raise ValueError(f"expected (n_T, n_F, C), got {x.shape}")
    return forward_batch(model, x[None])[0]


def _backward_batch(model: RnnEstimatorModel, cache, d_out: np.ndarray) -> dict:
    """Reverse-mode pass; d_out is (batch, n_T, n_F, 2) on the head output."""
    caches, head_cache, (n_b, n_t, n_f) = cache
    feat, act1 = head_cache
    h2 = 2 * model.hidden_size

    grads: dict[str, np.ndarray] = {}
    d_act1 = d_out @ model.head2_w
    grads["head2.w"] = np.einsum("btfo,btfj->oj", d_out, act1)
    grads["head2.b"] = d_out.sum(axis=(0, 1, 2))
    d_pre1 = d_act1 * (act1 > 0)
    grads["head1.w"] = np.einsum("btfj,btfd->jd", d_pre1, feat)
    grads["head1.b"] = d_pre1.sum(axis=(0, 1, 2))
    d_feat = d_pre1 @ model.head1_w

    d2 = d_feat.reshape(n_b * n_t, n_f, h2)
    d2_in, gf2, gb2 = bidirectional_backward_batch(*model.cells[2], caches[2], d2)
    d1 = np.ascontiguousarray(
        d2_in.reshape(n_b, n_t, n_f, h2).swapaxes(1, 2)
    ).reshape(n_b * n_f, n_t, h2)
    d1_in, gf1, gb1 = bidirectional_backward_batch(*model.cells[1], caches[1], d1)
    d0 = np.ascontiguousarray(
        d1_in.reshape(n_b, n_f, n_t, h2).swapaxes(1, 2)
    ).reshape(n_b * n_t, n_f, h2)
    _, gf0, gb0 = bidirectional_backward_batch(*model.cells[0], caches[0], d0)

    for idx, (gf, gb) in enumerate([(gf0, gb0), (gf1, gb1), (gf2, gb2)]):
        for tag, g in (("fwd", gf), ("bwd", gb)):
            grads[f"cell{idx}_{tag}.w_x"] = g.w_x
            grads[f"cell{idx}_{tag}.w_h"] = g.w_h
            grads[f"cell{idx}_{tag}.bias"] = g.bias
    return grads


def mse_loss(h_hat: np.ndarray, h_true: np.ndarray) -> float:
    """Mean squared complex error over all cells (and batch, if present)."""
    if h_hat.shape != h_true.shape:
        raise ValueError(f"shapes differ: {h_hat.shape} vs {h_true.shape}")
    return float(np.mean(np.abs(h_hat - h_true) ** 2))


def loss_and_gradients(
    model: RnnEstimatorModel, x: np.ndarray, h_true: np.ndarray
) -> tuple[float, dict]:
    """MSE loss and gradients for every parameter via BPTT.

    ``x`` is (batch, n_T, n_F, C) or a single tensor; ``h_true`` the
    matching complex target grid(s).
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
        h_true = h_true[None]
    h_hat, cache = _forward_batch_with_cache(model, x)
    if h_hat.shape != h_true.shape:
        raise ValueError(f"target shape {h_true.shape} does not match {h_hat.shape}")
    err = h_hat - h_true
    loss = float(np.mean(np.abs(err) ** 2))
    d_out = np.stack([err.real, err.imag], axis=-1) * (2.0 / err.size)
    grads = _backward_batch(model, cache, d_out.astype(model.dtype))
    return loss, grads


def backward(model: RnnEstimatorModel, x: np.ndarray, h_true: np.ndarray) -> dict:
    """Parameter gradients of the MSE loss (convenience wrapper)."""
    return loss_and_gradients(model, x, h_true)[1]


def estimate(
    model: RnnEstimatorModel,
    y: np.ndarray,
    pattern: PilotPattern,
    spec: GridSpec,
) -> np.ndarray:
    """End-to-end channel estimate from a received grid.

    Computes the pilot LS estimates, stacks the input tensor (with the
    received grid as extra channels when the model is data-augmented)
    and runs the forward pass.
    """
    ls_grid = np.zeros_like(y, dtype=np.complex128)
    ls_grid[pattern.mask] = y[pattern.mask] / pattern.pilot_values
    x = build_input_tensor(
        ls_grid, pattern, spec,
        y=y if model.augmented else None,
        augmented=model.augmented,
    )
    return forward(model, x)


def save_model(model: RnnEstimatorModel, path) -> None:
    """Write the versioned model container (float32 parameter blocks)."""
    meta = {
        "architecture": {
            "hidden_size": model.hidden_size,
            "in_channels": model.in_channels,
            "augmented": model.augmented,
            "axis_order": list(AXIS_ORDER),
            "head1_units": int(model.head1_b.size),
        },
        "provenance": model.provenance,
    }
    arrays = {name: arr.astype(np.float32) for name, arr in model.param_items()}
    write_container(path, MODEL_MAGIC, meta, arrays)


def load_model(path) -> RnnEstimatorModel:
    """Load a model container; raises ModelFormatError on corruption."""
    try:
        meta, arrays = read_container(path, MODEL_MAGIC)
    except ContainerError as exc:
        raise ModelFormatError(str(exc)) from exc
    try:
        arch = meta["architecture"]
        hidden = int(arch["hidden_size"])
        model = RnnEstimatorModel(
            cells=[
                (
                    LstmCellParams(
                        arrays[f"cell{i}_fwd.w_x"].astype(float),
                        arrays[f"cell{i}_fwd.w_h"].astype(float),
                        arrays[f"cell{i}_fwd.bias"].astype(float),
                    ),
                    LstmCellParams(
                        arrays[f"cell{i}_bwd.w_x"].astype(float),
                        arrays[f"cell{i}_bwd.w_h"].astype(float),
                        arrays[f"cell{i}_bwd.bias"].astype(float),
                    ),
                )
                for i in range(3)
            ],
            head1_w=arrays["head1.w"].astype(float),
            head1_b=arrays["head1.b"].astype(float),
            head2_w=arrays["head2.w"].astype(float),
            head2_b=arrays["head2.b"].astype(float),
            hidden_size=hidden,
            in_channels=int(arch["in_channels"]),
            augmented=bool(arch["augmented"]),
            provenance=meta.get("provenance", {}),
        )
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"model container is missing blocks: {exc}") from exc
    for _, (fwd, bwd) in zip(range(3), model.cells):
        if fwd.hidden_size != hidden or bwd.hidden_size != hidden:
            raise ModelFormatError("cell shapes disagree with the declared hidden size")
    return model


def inspect_model(path) -> dict:
    """Read only the metadata blocks of a model file."""
    try:
        meta, _ = read_container(path, MODEL_MAGIC)
    except ContainerError as exc:
        raise ModelFormatError(str(exc)) from exc
    return meta

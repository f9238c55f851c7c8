"""Training loop for the recurrent channel estimator.

Every iteration draws a fresh batch of frames with uniformly random
velocity and SNR; the Rician K-factor follows the two-halves rule: a
configurable fraction of the batch is pure NLoS (K = 0), the rest draws
K uniformly from its range.  Gradients come from full BPTT through the
unrolled bidirectional recurrences; the default optimizer is adaptive
moment estimation with the table learning rate, plain SGD is available
for comparison.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .. import channel as chan
from ..ofdm import (
    GridSpec,
    PilotPattern,
    apply_channel,
    assemble_frame,
    bits_per_symbol,
    build_pilot_pattern_80211p,
    map_bits,
    snr_to_noise_var,
)
from .model import (
    RnnEstimatorModel,
    build_input_tensor,
    init_model,
    loss_and_gradients,
)


class TrainingError(RuntimeError):
    """Raised when the loss becomes non-finite during training."""

    def __init__(self, iteration: int, loss: float):
        self.iteration = iteration
        super().__init__(f"training diverged at iteration {iteration} (loss={loss})")


@dataclass
class TrainingConfig:
    """Training recipe; velocity in m/s, ranges inclusive."""

    epochs: int = 100
    iterations_per_epoch: int = 1000
    batch_size: int = 200
    learning_rate: float = 1e-3
    velocity_range: tuple[float, float] = (0.0, chan.kmh_to_mps(300.0))
    snr_db_range: tuple[float, float] = (5.0, 30.0)
    k_range: tuple[float, float] = (0.0, 5.0)
    nlos_fraction: float = 0.5
    optimizer: str = "adam"
    seed: int = 0
    hidden_size: int = 64
    augmented: bool = False
    modulation: str = "qpsk"
    clip_norm: float = 5.0
    compute_dtype: str = "float32"
    lr_schedule: str = "constant"  # or "cosine" decaying to lr / 10

    def __post_init__(self):
        if self.epochs < 1 or self.iterations_per_epoch < 1 or self.batch_size < 1:
            raise ValueError("epochs, iterations and batch size must be positive")
        if not 0.0 <= self.nlos_fraction <= 1.0:
            raise ValueError("nlos_fraction must lie in [0, 1]")
        for name, rng_ in (("velocity_range", self.velocity_range),
                           ("snr_db_range", self.snr_db_range),
                           ("k_range", self.k_range)):
            if rng_[1] < rng_[0]:
                raise ValueError(f"{name} is reversed")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.compute_dtype not in ("float32", "float64"):
            raise ValueError("compute_dtype must be 'float32' or 'float64'")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError("lr_schedule must be 'constant' or 'cosine'")

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=str).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass
class _AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def _clip_gradients(grads: dict, max_norm: float) -> None:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def _adam_update(params: dict, grads: dict, state: _AdamState, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


def _sgd_update(params: dict, grads: dict, lr: float) -> None:
    for name, p in params.items():
        p -= lr * grads[name]


def draw_batch_params(
    config: TrainingConfig, rng: np.random.Generator, batch_size: int | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-frame (velocity, SNR, K) draws under the two-halves K rule."""
    b = batch_size or config.batch_size
    v = rng.uniform(*config.velocity_range, size=b)
    snr = rng.uniform(*config.snr_db_range, size=b)
    n_nlos = int(round(config.nlos_fraction * b))
    ks = np.zeros(b)
    if b > n_nlos:
        ks[n_nlos:] = rng.uniform(*config.k_range, size=b - n_nlos)
    return v, snr, ks


def sample_scenario_batch(
    config: TrainingConfig,
    spec: GridSpec,
    pattern: PilotPattern,
    profile_template: chan.ChannelProfile,
    rng: np.random.Generator,
    batch_size: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw one training batch: stacked input tensors and true channels."""
    b = batch_size or config.batch_size
    v, snr, ks = draw_batch_params(config, rng, b)

    m = bits_per_symbol(config.modulation)
    n_data = spec.n_cells - pattern.n_pilots
    n_ch = 7 if config.augmented else 5
    inputs = np.empty((b, spec.n_symbols, spec.n_used, n_ch))
    targets = np.empty((b, spec.n_symbols, spec.n_used), dtype=np.complex128)
    for i in range(b):
        profile = profile_template.replace(velocity=v[i], rician_k=ks[i])
        gains = chan.sample_tap_gains(profile, spec.n_symbols, spec.symbol_duration, rng)
        h = chan.taps_to_frequency_response(
            gains, profile.tap_delays, spec.n_used, spec.subcarrier_spacing
        )
        bits = rng.integers(0, 2, size=n_data * m)
        x = assemble_frame(map_bits(bits, config.modulation), pattern, spec)
        y = apply_channel(x, h, snr_to_noise_var(snr[i]), rng)
        ls_grid = np.zeros_like(y)
        ls_grid[pattern.mask] = y[pattern.mask] / pattern.pilot_values
        inputs[i] = build_input_tensor(
            ls_grid, pattern, spec,
            y=y if config.augmented else None, augmented=config.augmented,
        )
        targets[i] = h
    return inputs, targets


def train(
    config: TrainingConfig,
    spec: GridSpec | None = None,
    profile_template: chan.ChannelProfile | None = None,
    progress: bool = False,
) -> RnnEstimatorModel:
    """Train a model per the recipe; deterministic in the config seed."""
    spec = spec or GridSpec()
    profile_template = profile_template or chan.ChannelProfile()
    root = np.random.SeedSequence(config.seed)
    init_seq, data_seq = root.spawn(2)
    model = init_model(
        config.hidden_size,
        np.random.default_rng(init_seq),
        augmented=config.augmented,
    ).astype(np.dtype(config.compute_dtype))
    rng = np.random.default_rng(data_seq)
    pattern = build_pilot_pattern_80211p(spec)

    params = dict(model.param_items())
    adam = _AdamState()
    losses: list[float] = []
    total_iters = config.epochs * config.iterations_per_epoch
    for it in range(total_iters):
        inputs, targets = sample_scenario_batch(config, spec, pattern, profile_template, rng)
        loss, grads = loss_and_gradients(model, inputs, targets)
        if not np.isfinite(loss):
            raise TrainingError(it, loss)
        _clip_gradients(grads, config.clip_norm)
        lr = config.learning_rate
        if config.lr_schedule == "cosine":
            frac = it / max(1, total_iters - 1)
            lr = 0.1 * lr + 0.45 * lr * (1.0 + np.cos(np.pi * frac))
        if config.optimizer == "adam":
            _adam_update(params, grads, adam, lr)
        else:
            _sgd_update(params, grads, lr)
        losses.append(loss)
        if progress and (it + 1) % max(1, total_iters // 20) == 0:
            window = np.mean(losses[-50:])
            print(f"iteration {it + 1}/{total_iters}  loss {window:.5f}", flush=True)

    model = model.astype(np.float64)
    model.provenance = {
        "config": asdict(config),
        "config_digest": config.digest(),
        "final_loss": losses[-1],
        "loss_history": losses,
        "iterations": total_iters,
    }
    return model

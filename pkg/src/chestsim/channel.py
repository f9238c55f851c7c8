"""WSSUS tapped-delay-line channel synthesis for OFDM link simulation.

The channel is a finite set of delayed taps.  Each tap is a stationary
complex Gaussian process with the classical Jakes Doppler spectrum,
generated by a sum of sinusoids with random arrival angles, random
phases and circularly-symmetric Gaussian weights.  The Gaussian weights
make the marginal distribution of every tap exactly Rayleigh at any
number of sinusoids, while the angle averaging still yields the Bessel
temporal autocorrelation.  An optional line-of-sight component turns
the first tap Rician; the LoS phasor rotates at a per-realization
Doppler shift so that time selectivity is preserved.

Grids are plain complex ndarrays of shape (n_symbols, n_subcarriers);
the frequency axis indexes the *used* subcarriers contiguously.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import j0

SPEED_OF_LIGHT = 299_792_458.0

#: Equally weighted 6-tap power-delay profile, 500 ns maximum delay.
DEFAULT_TAP_DELAYS = np.arange(6) * 100e-9
DEFAULT_TAP_POWERS = np.full(6, 1.0 / 6.0)

DEFAULT_CARRIER_FREQ = 5.9e9


def kmh_to_mps(value: float) -> float:
    """Convert a speed in km/h to m/s."""
    return value / 3.6


class ChannelConfigError(ValueError):
    """Raised when a channel profile violates its invariants."""


@dataclass(frozen=True, eq=False)
class ChannelProfile:
    """Static description of a tapped-delay-line fading channel.

    ``rician_k`` is the ratio of LoS power to the total scattered power.
    The LoS component sits on the first tap; all scattered tap powers
    are scaled by 1/(K+1) so the profile keeps unit total power.
    ``los_aspect_angle`` fixes the LoS Doppler to
    ``max_doppler * cos(angle)``; ``None`` draws the angle uniformly per
    realization.
    """

    tap_delays: np.ndarray = field(default_factory=lambda: DEFAULT_TAP_DELAYS.copy())
    tap_powers: np.ndarray = field(default_factory=lambda: DEFAULT_TAP_POWERS.copy())
    rician_k: float = 0.0
    velocity: float = 0.0
    carrier_freq: float = DEFAULT_CARRIER_FREQ
    los_aspect_angle: float | None = None
    num_sinusoids: int = 32

    def __post_init__(self):
        delays = np.asarray(self.tap_delays, dtype=float)
        powers = np.asarray(self.tap_powers, dtype=float)
        object.__setattr__(self, "tap_delays", delays)
        object.__setattr__(self, "tap_powers", powers)
        if delays.ndim != 1 or powers.shape != delays.shape:
            raise ChannelConfigError("tap_delays and tap_powers must be 1D and equal length")
        if delays.size == 0:
            raise ChannelConfigError("profile needs at least one tap")
        if delays[0] != 0.0:
            raise ChannelConfigError("first tap delay must be exactly zero")
        if delays.size > 1 and not np.all(np.diff(delays) > 0):
            raise ChannelConfigError("tap delays must ascend strictly")
        if np.any(powers < 0) or abs(powers.sum() - 1.0) > 1e-12:
            raise ChannelConfigError("tap powers must be non-negative and sum to 1")
        if self.rician_k < 0:
            raise ChannelConfigError("rician_k must be >= 0")
        if self.velocity < 0:
            raise ChannelConfigError("velocity must be >= 0")
        if self.carrier_freq <= 0:
            raise ChannelConfigError("carrier_freq must be positive")
        if self.num_sinusoids < 1:
            raise ChannelConfigError("num_sinusoids must be >= 1")

    @property
    def num_taps(self) -> int:
        return self.tap_delays.size

    @property
    def max_delay(self) -> float:
        return float(self.tap_delays[-1])

    def max_doppler(self) -> float:
        return max_doppler(self.velocity, self.carrier_freq)

    def validate_against(self, grid_spec) -> None:
        """Check the delay spread fits the cyclic prefix of a grid."""
        if self.max_delay > grid_spec.cp_duration:
            raise ChannelConfigError(
                f"maximum tap delay {self.max_delay:.3e} s exceeds the cyclic prefix "
                f"{grid_spec.cp_duration:.3e} s"
            )

    def replace(self, **kwargs) -> "ChannelProfile":
        current = dict(
            tap_delays=self.tap_delays,
            tap_powers=self.tap_powers,
            rician_k=self.rician_k,
            velocity=self.velocity,
            carrier_freq=self.carrier_freq,
            los_aspect_angle=self.los_aspect_angle,
            num_sinusoids=self.num_sinusoids,
        )
        current.update(kwargs)
        return ChannelProfile(**current)

    def to_dict(self) -> dict:
        return {
            "tap_delays_ns": (self.tap_delays * 1e9).tolist(),
            "tap_powers": self.tap_powers.tolist(),
            "rician_k": self.rician_k,
            "velocity_kmh": self.velocity * 3.6,
            "carrier_freq_hz": self.carrier_freq,
            "los_aspect_angle": self.los_aspect_angle,
            "num_sinusoids": self.num_sinusoids,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChannelProfile":
        kwargs = {}
        if "tap_delays_ns" in data:
            kwargs["tap_delays"] = np.asarray(data["tap_delays_ns"], dtype=float) * 1e-9
        if "tap_powers" in data:
            kwargs["tap_powers"] = np.asarray(data["tap_powers"], dtype=float)
        if "rician_k" in data:
            kwargs["rician_k"] = float(data["rician_k"])
        if "velocity_kmh" in data:
            kwargs["velocity"] = kmh_to_mps(float(data["velocity_kmh"]))
        if "carrier_freq_hz" in data:
            kwargs["carrier_freq"] = float(data["carrier_freq_hz"])
        if data.get("los_aspect_angle") is not None:
            kwargs["los_aspect_angle"] = float(data["los_aspect_angle"])
        if "num_sinusoids" in data:
            kwargs["num_sinusoids"] = int(data["num_sinusoids"])
        return cls(**kwargs)


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """One drawn channel: per-symbol tap gains and the grid response."""

    tap_gains: np.ndarray  # (num_taps, n_symbols)
    freq_response: np.ndarray  # (n_symbols, n_subcarriers)
    seed: object = None


def max_doppler(velocity: float, carrier_freq: float) -> float:
    """Maximum Doppler shift in Hz for a given speed and carrier."""
    if velocity < 0:
        raise ValueError("velocity must be >= 0")
    if carrier_freq <= 0:
        raise ValueError("carrier_freq must be positive")
    return velocity * carrier_freq / SPEED_OF_LIGHT


def temporal_acf(lag_k, symbol_duration: float, doppler_hz: float):
    """Jakes temporal autocorrelation at integer symbol lags.

    Even in the lag; accepts scalars or arrays.
    """
    lag = np.asarray(lag_k, dtype=float)
    out = j0(2.0 * np.pi * doppler_hz * symbol_duration * lag)
    return out if out.ndim else float(out)


def spectral_acf(lag_m, subcarrier_spacing: float, profile: ChannelProfile):
    """Spectral autocorrelation at integer subcarrier lags.

    Phasor sum over the power-delay profile with a positive exponent;
    a Rician profile adds a flat LoS term so that the zero lag stays 1.
    The simulated grid response realizes the complex conjugate of this
    function (forward-DFT sign); only the Hermitian Toeplitz covariance
    built from it matters downstream.
    """
    lag = np.asarray(lag_m, dtype=float)
    phases = 2.0 * np.pi * profile.tap_delays[:, None] * subcarrier_spacing * lag[None, ...]
    scattered = np.sum(profile.tap_powers[:, None] * np.exp(1j * phases), axis=0)
    out = (scattered + profile.rician_k) / (1.0 + profile.rician_k)
    return out.reshape(lag.shape) if lag.ndim else complex(out.reshape(()))


def _sample_tap_gains_batch(
    profile: ChannelProfile,
    n_realizations: int,
    n_symbols: int,
    symbol_duration: float,
    rng: np.random.Generator,
    doppler_hz: np.ndarray | None = None,
    rician_k: np.ndarray | None = None,
) -> np.ndarray:
    """Draw ``n_realizations`` independent gain matrices, shape (R, L, T).

    ``doppler_hz`` / ``rician_k`` may override the profile per realization
    (used for mediated covariance estimation and NN training batches).
    """
    n_taps = profile.num_taps
    m = profile.num_sinusoids
    t = np.arange(n_symbols) * symbol_duration

    if doppler_hz is None:
        doppler_hz = np.full(n_realizations, profile.max_doppler())
    else:
        doppler_hz = np.broadcast_to(np.asarray(doppler_hz, dtype=float), (n_realizations,))
    if rician_k is None:
        rician_k = np.full(n_realizations, profile.rician_k)
    else:
        rician_k = np.broadcast_to(np.asarray(rician_k, dtype=float), (n_realizations,))

    out = np.empty((n_realizations, n_taps, n_symbols), dtype=np.complex128)
    # Chunk over realizations to bound the (R, L, M, T) intermediate.
    chunk = max(1, int(8e6 // max(1, n_taps * m * n_symbols)))
    for start in range(0, n_realizations, chunk):
        stop = min(start + chunk, n_realizations)
        r = stop - start
        angles = rng.uniform(0.0, 2.0 * np.pi, size=(r, n_taps, m))
        phases = rng.uniform(0.0, 2.0 * np.pi, size=(r, n_taps, m))
        w = rng.standard_normal((r, n_taps, m)) + 1j * rng.standard_normal((r, n_taps, m))
        w *= np.sqrt(0.5)
        omega = 2.0 * np.pi * doppler_hz[start:stop, None, None] * np.cos(angles)
        arg = omega[..., None] * t + phases[..., None]
        k_arr = rician_k[start:stop]
        scat_powers = profile.tap_powers[None, :, None] / (1.0 + k_arr[:, None, None])
        gains = np.sqrt(scat_powers / m) * np.einsum("rlm,rlmt->rlt", w, np.exp(1j * arg))
        los_mask = k_arr > 0
        if np.any(los_mask):
            if profile.los_aspect_angle is None:
                theta = rng.uniform(0.0, 2.0 * np.pi, size=r)
            else:
                theta = np.full(r, profile.los_aspect_angle)
            phi0 = rng.uniform(0.0, 2.0 * np.pi, size=r)
            los_doppler = doppler_hz[start:stop] * np.cos(theta)
            los = np.exp(1j * (2.0 * np.pi * los_doppler[:, None] * t + phi0[:, None]))
            amp = np.sqrt(k_arr / (1.0 + k_arr))
            gains[:, 0, :] += np.where(los_mask, amp, 0.0)[:, None] * los
        out[start:stop] = gains
    return out


def sample_tap_gains(
    profile: ChannelProfile,
    n_symbols: int,
    symbol_duration: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw one (num_taps, n_symbols) matrix of per-symbol tap gains."""
    if n_symbols < 1:
        raise ValueError("n_symbols must be >= 1")
    if symbol_duration <= 0:
        raise ValueError("symbol_duration must be positive")
    return _sample_tap_gains_batch(profile, 1, n_symbols, symbol_duration, rng)[0]


def taps_to_frequency_response(
    tap_gains: np.ndarray,
    tap_delays: np.ndarray,
    n_subcarriers: int,
    subcarrier_spacing: float,
) -> np.ndarray:
    """Transform tap gains to the (n_symbols, n_subcarriers) grid response.

    H[k, n] = sum_l a_l(k) * exp(-j 2 pi n * df * tau_l)
    with n the contiguous used-subcarrier index.
    """
    gains = np.asarray(tap_gains)
    delays = np.asarray(tap_delays, dtype=float)
    if gains.ndim < 2 or gains.shape[-2] != delays.size:
        raise ValueError(
            f"tap_gains tap axis {gains.shape} does not match {delays.size} delays"
        )
    n_idx = np.arange(n_subcarriers)
    dft = np.exp(-2j * np.pi * np.outer(n_idx, delays) * subcarrier_spacing)  # (n_F, L)
    # (..., L, T) -> (..., T, n_F)
    return np.swapaxes(gains, -2, -1) @ dft.T


def realize(profile: ChannelProfile, grid_spec, seed) -> ChannelRealization:
    """Draw one channel realization on a grid, deterministic in the seed."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    gains = sample_tap_gains(profile, grid_spec.n_symbols, grid_spec.symbol_duration, rng)
    freq = taps_to_frequency_response(
        gains, profile.tap_delays, grid_spec.n_used, grid_spec.subcarrier_spacing
    )
    return ChannelRealization(tap_gains=gains, freq_response=freq, seed=seed)


def generate_realizations(
    profile: ChannelProfile,
    grid_spec,
    count: int,
    rng: np.random.Generator,
    doppler_hz: np.ndarray | None = None,
    rician_k: np.ndarray | None = None,
) -> list[ChannelRealization]:
    """Draw many realizations from one generator stream (batched)."""
    gains = _sample_tap_gains_batch(
        profile, count, grid_spec.n_symbols, grid_spec.symbol_duration, rng,
        doppler_hz=doppler_hz, rician_k=rician_k,
    )
    freq = taps_to_frequency_response(
        gains, profile.tap_delays, grid_spec.n_used, grid_spec.subcarrier_spacing
    )
    return [ChannelRealization(g, f) for g, f in zip(gains, freq)]


def empirical_acf(realizations: Sequence[ChannelRealization]) -> tuple[np.ndarray, np.ndarray]:
    """Sample temporal and spectral autocorrelation matrices.

    Averages outer products of the grid responses over realizations and
    over the orthogonal axis, then normalizes to unit mean diagonal.
    Hermitian by construction.
    """
    if len(realizations) == 0:
        raise ValueError("empirical_acf needs at least one realization")
    h = np.stack([r.freq_response for r in realizations])  # (R, T, F)
    n_r, n_t, n_f = h.shape
    r_t = np.einsum("rkn,rln->kl", h, h.conj()) / (n_r * n_f)
    r_f = np.einsum("rkn,rkm->nm", h, h.conj()) / (n_r * n_t)
    r_t = 0.5 * (r_t + r_t.conj().T)
    r_f = 0.5 * (r_f + r_f.conj().T)
    power = float(np.real(np.trace(r_t)) / n_t)
    if power > 0:
        r_t = r_t / power
        r_f = r_f / (np.real(np.trace(r_f)) / n_f)
    return r_t, r_f

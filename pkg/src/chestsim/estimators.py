"""Classical pilot-aided channel estimators.

Implements the least-squares baseline with piecewise-linear
interpolation, the joint two-dimensional Wiener (LMMSE) filter built
from a separable Kronecker covariance, and its two-stage 1D cascade
(time axis first, then frequency).  Covariances come either from the
analytic Bessel/phasor autocorrelation functions of a known profile
(channel-matched) or from an empirical average over randomly drawn
channel parameters (channel-mediated).

Vectorization is time-major throughout: flat cell index
= symbol * n_subcarriers + subcarrier, matching kron(R_T, R_F).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.spatial import Delaunay, QhullError, cKDTree

from . import channel as chan
from ._container import read_container, write_container
from .ofdm import GridSpec, PilotPattern


class IllConditionedError(np.linalg.LinAlgError):
    """Solve refused: the pilot Gram matrix is numerically singular."""

    def __init__(self, condition: float):
        self.condition = condition
        super().__init__(
            f"pilot covariance is ill-conditioned (condition estimate {condition:.3e}); "
            "use a positive noise variance or drop redundant pilots"
        )


class UnsupportedPatternError(ValueError):
    """The pilot pattern cannot be factored into the 2x1D cascade."""


@dataclass(frozen=True, eq=False)
class AcfModel:
    """Temporal and spectral autocorrelation matrices with provenance."""

    temporal: np.ndarray  # (n_T, n_T) Hermitian, unit diagonal
    spectral: np.ndarray  # (n_F, n_F) Hermitian, unit diagonal
    provenance: dict = field(default_factory=dict)

    def save(self, path) -> None:
        write_container(
            path, b"ACF1", {"provenance": self.provenance},
            {"temporal": self.temporal.astype(np.complex128),
             "spectral": self.spectral.astype(np.complex128)},
        )

    @classmethod
    def load(cls, path) -> "AcfModel":
        meta, arrays = read_container(path, b"ACF1")
        return cls(arrays["temporal"], arrays["spectral"], meta.get("provenance", {}))


@dataclass(frozen=True, eq=False)
class LmmseFilter:
    """Precomputed 2D Wiener filter matrix with its provenance."""

    weights: np.ndarray  # (n_cells, p)
    pilot_indices: np.ndarray  # flat time-major cell indices, length p
    noise_var: float
    grid_shape: tuple[int, int]
    provenance: dict = field(default_factory=dict)

    def save(self, path) -> None:
        meta = {
            "noise_var": self.noise_var,
            "grid_shape": list(self.grid_shape),
            "provenance": self.provenance,
        }
        write_container(
            path, b"LMW1", meta,
            {"weights": self.weights.astype(np.complex128),
             "pilot_indices": self.pilot_indices.astype(np.int64)},
        )

    @classmethod
    def load(cls, path) -> "LmmseFilter":
        meta, arrays = read_container(path, b"LMW1")
        return cls(
            arrays["weights"], arrays["pilot_indices"],
            float(meta["noise_var"]), tuple(meta["grid_shape"]),
            meta.get("provenance", {}),
        )


def analytic_acf(profile: chan.ChannelProfile, spec: GridSpec) -> AcfModel:
    """Channel-matched ACF model from the Bessel and phasor-sum forms."""
    lags_t = np.arange(spec.n_symbols)
    r_t_vec = chan.temporal_acf(lags_t, spec.symbol_duration, profile.max_doppler())
    r_t = scipy.linalg.toeplitz(r_t_vec).astype(np.complex128)

    lags_f = np.arange(spec.n_used)
    r_f_vec = chan.spectral_acf(lags_f, spec.subcarrier_spacing, profile)
    # First row carries the +j phasor sum; the first column is its conjugate.
    r_f = scipy.linalg.toeplitz(np.conj(r_f_vec), r_f_vec)
    prov = {
        "kind": "analytic",
        "velocity_kmh": profile.velocity * 3.6,
        "rician_k": profile.rician_k,
        "carrier_freq_hz": profile.carrier_freq,
    }
    return AcfModel(r_t, r_f, prov)


def ls_pilot_estimate(y_pilots: np.ndarray, x_pilots: np.ndarray) -> np.ndarray:
    """Per-pilot LS estimate y / x."""
    y_pilots = np.asarray(y_pilots)
    x_pilots = np.asarray(x_pilots)
    if y_pilots.shape != x_pilots.shape:
        raise ValueError("pilot vectors must share a shape")
    if np.any(np.abs(x_pilots) == 0):
        raise ValueError("pilot symbols must be non-zero")
    return y_pilots / x_pilots


def ls_pilot_grid(y: np.ndarray, pattern: PilotPattern) -> np.ndarray:
    """LS estimates scattered on the grid, zeros at data cells."""
    out = np.zeros_like(y, dtype=np.complex128)
    out[pattern.mask] = ls_pilot_estimate(y[pattern.mask], pattern.pilot_values)
    return out


class LsInterpolator:
    """Piecewise-linear interpolation over the scattered pilot cells.

    Inside the pilot convex hull the value is the barycentric (Delaunay)
    linear interpolant, which is exact on affine fields and passes
    through the pilot nodes; outside the hull the nearest pilot value is
    held.  Degenerate patterns (collinear or single pilots) fall back to
    1D linear interpolation along the pilot line.  The whole map is
    precomputed as a weight matrix, so application is a single matvec.
    """

    def __init__(self, pattern: PilotPattern):
        coords = pattern.coords.astype(float)
        if coords.shape[0] == 0:
            raise ValueError("pattern has no pilots")
        n_t, n_f = pattern.mask.shape
        grid = np.stack(
            np.meshgrid(np.arange(n_t), np.arange(n_f), indexing="ij"), axis=-1
        ).reshape(-1, 2).astype(float)
        p = coords.shape[0]
        weights = np.zeros((grid.shape[0], p))

        tri = None
        if p >= 3:
            try:
                tri = Delaunay(coords)
            except QhullError:
                tri = None  # collinear pilots
        if tri is not None:
            simplex = tri.find_simplex(grid)
            inside = simplex >= 0
            if np.any(inside):
                trans = tri.transform[simplex[inside]]
                delta = grid[inside] - trans[:, 2]
                bary = np.einsum("nij,nj->ni", trans[:, :2], delta)
                bary = np.concatenate([bary, 1.0 - bary.sum(axis=1, keepdims=True)], axis=1)
                verts = tri.simplices[simplex[inside]]
                rows = np.repeat(np.flatnonzero(inside), 3)
                weights[rows, verts.ravel()] = bary.ravel()
            outside = ~inside
        else:
            outside = np.ones(grid.shape[0], dtype=bool)
            if p >= 2:
                # Collinear pilots: linear interpolation along the line.
                direction = coords[-1] - coords[0]
                direction /= np.linalg.norm(direction)
                s_pilots = coords @ direction
                order = np.argsort(s_pilots)
                s_sorted = s_pilots[order]
                s_cells = grid @ direction
                idx = np.clip(np.searchsorted(s_sorted, s_cells), 1, p - 1)
                lo, hi = s_sorted[idx - 1], s_sorted[idx]
                frac = np.clip((s_cells - lo) / np.where(hi > lo, hi - lo, 1.0), 0.0, 1.0)
                cells = np.arange(grid.shape[0])
                weights[cells, order[idx - 1]] = 1.0 - frac
                weights[cells, order[idx]] += frac
                outside = np.zeros(grid.shape[0], dtype=bool)
        if np.any(outside):
            nearest = cKDTree(coords).query(grid[outside])[1]
            weights[np.flatnonzero(outside), nearest] = 1.0

        self.grid_shape = (n_t, n_f)
        self.weights = weights

    def __call__(self, pilot_values: np.ndarray) -> np.ndarray:
        pilot_values = np.asarray(pilot_values).ravel()
        if pilot_values.size != self.weights.shape[1]:
            raise ValueError("pilot value count does not match the pattern")
        return (self.weights @ pilot_values).reshape(self.grid_shape)


_INTERP_CACHE: dict[bytes, LsInterpolator] = {}


def ls_interpolate(
    h_pilots: np.ndarray, pattern: PilotPattern, spec: GridSpec | None = None
) -> np.ndarray:
    """Interpolate per-pilot LS estimates to the full grid."""
    key = pattern.mask.tobytes() + bytes(str(pattern.mask.shape), "ascii")
    interp = _INTERP_CACHE.get(key)
    if interp is None:
        interp = LsInterpolator(pattern)
        if len(_INTERP_CACHE) > 16:
            _INTERP_CACHE.clear()
        _INTERP_CACHE[key] = interp
    return interp(h_pilots)


def build_covariance(acf: AcfModel) -> np.ndarray:
    """Full grid covariance kron(R_T, R_F), Hermitian PSD."""
    return np.kron(acf.temporal, acf.spectral)


def _hermitian_condition(a: np.ndarray) -> float:
    eig = np.linalg.eigvalsh(a)
    lo = eig.min()
    hi = np.abs(eig).max()
    if lo <= 0:
        return np.inf
    return float(hi / lo)


def _solve_hermitian(a: np.ndarray, b: np.ndarray, jitter: bool) -> np.ndarray:
    """Solve a @ x = b for Hermitian a via Cholesky.

    With ``jitter`` a scaled diagonal ridge is added when the matrix is
    numerically singular; otherwise an IllConditionedError is raised.
    """
    cond = _hermitian_condition(a)
    if cond > 1e12:
        if not jitter:
            raise IllConditionedError(cond)
        a = a + (1e-12 * np.real(np.trace(a)) / a.shape[0]) * np.eye(a.shape[0])
    try:
        factor = scipy.linalg.cho_factor(a, lower=True)
    except np.linalg.LinAlgError:
        if not jitter:
            raise IllConditionedError(cond)
        a = a + (1e-9 * np.real(np.trace(a)) / a.shape[0]) * np.eye(a.shape[0])
        factor = scipy.linalg.cho_factor(a, lower=True)
    return scipy.linalg.cho_solve(factor, b)


def build_2d_lmmse(
    covariance: np.ndarray,
    pilot_indices: np.ndarray,
    noise_var: float,
    grid_shape: tuple[int, int],
    provenance: dict | None = None,
) -> LmmseFilter:
    """Joint 2D Wiener filter W = R P^T (P (R + s2 I) P^T)^-1.

    ``pilot_indices`` are flat time-major cell indices (the one-hot rows
    of the selection matrix).  The Hermitian inner matrix is solved by
    Cholesky factorization; a numerically singular system (possible at
    zero noise variance) raises IllConditionedError with the condition
    estimate.
    """
    pilot_indices = np.asarray(pilot_indices, dtype=np.int64).ravel()
    n_cells = covariance.shape[0]
    if covariance.shape != (n_cells, n_cells):
        raise ValueError("covariance must be square")
    if grid_shape[0] * grid_shape[1] != n_cells:
        raise ValueError("grid_shape does not match the covariance size")
    if noise_var < 0:
        raise ValueError("noise_var must be >= 0")
    if pilot_indices.min() < 0 or pilot_indices.max() >= n_cells:
        raise ValueError("pilot index out of range")
    r_cp = covariance[:, pilot_indices]
    r_pp = covariance[np.ix_(pilot_indices, pilot_indices)]
    gram = r_pp + noise_var * np.eye(pilot_indices.size)
    # W = R_cp gram^-1; solve on the Hermitian side and conjugate back.
    weights = _solve_hermitian(gram, r_cp.conj().T, jitter=False).conj().T
    return LmmseFilter(
        weights=weights,
        pilot_indices=pilot_indices,
        noise_var=float(noise_var),
        grid_shape=tuple(grid_shape),
        provenance=provenance or {},
    )


def apply_lmmse(filt: LmmseFilter, h_pilots_ls: np.ndarray) -> np.ndarray:
    """Apply a 2D Wiener filter to the LS pilot estimates."""
    h_pilots_ls = np.asarray(h_pilots_ls).ravel()
    if h_pilots_ls.size != filt.weights.shape[1]:
        raise ValueError(
            f"expected {filt.weights.shape[1]} pilot estimates, got {h_pilots_ls.size}"
        )
    return (filt.weights @ h_pilots_ls).reshape(filt.grid_shape)


@dataclass(frozen=True, eq=False)
class TwoStageLmmseFilter:
    """Cascade of per-column time filters and per-symbol frequency filters."""

    time_weights: list  # per pilot-bearing column: (n_T, |K_c|)
    time_pilot_rows: list  # per pilot-bearing column: pilot symbol indices
    obs_columns: np.ndarray  # columns feeding stage 2
    freq_weights: np.ndarray  # (n_T, n_F, |obs_columns|)
    pattern_mask: np.ndarray
    noise_var: float
    grid_shape: tuple[int, int]
    provenance: dict = field(default_factory=dict)


def build_2x1d_lmmse(
    r_t: np.ndarray,
    r_f: np.ndarray,
    pattern: PilotPattern,
    noise_var: float,
    provenance: dict | None = None,
) -> TwoStageLmmseFilter:
    """Two-stage 1D Wiener cascade: time interpolation, then frequency.

    Stage 1 runs one 1D Wiener filter over the time axis of every
    pilot-bearing subcarrier column.  Stage 2 runs, per OFDM symbol, a
    1D Wiener filter over frequency that treats the stage-1 outputs as
    observations whose noise is the per-column stage-1 residual error
    variance (stage-1 errors are taken as uncorrelated across columns,
    the standard cascade assumption).  Solves are jittered so that
    degenerate cases such as a static channel at zero noise remain
    well-defined.
    """
    n_t, n_f = pattern.mask.shape
    if r_t.shape != (n_t, n_t) or r_f.shape != (n_f, n_f):
        raise ValueError("autocorrelation matrices do not match the pattern shape")
    obs_cols = np.flatnonzero(pattern.mask.any(axis=0))
    if obs_cols.size == 0:
        raise UnsupportedPatternError("pattern has no pilot-bearing subcarrier column")

    # Stage 1, grouped by identical pilot-row sets to share the solves.
    groups: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
    time_weights, time_rows = [], []
    err_var = np.empty((n_t, obs_cols.size))
    for j, col in enumerate(obs_cols):
        rows = np.flatnonzero(pattern.mask[:, col])
        key = tuple(rows)
        if key not in groups:
            gram = r_t[np.ix_(rows, rows)] + noise_var * np.eye(rows.size)
            w = _solve_hermitian(gram, r_t[np.ix_(rows, np.arange(n_t))], jitter=True)
            w = w.conj().T  # (n_T, |rows|)
            resid = np.real(np.diag(r_t)) - np.real(np.einsum("tk,kt->t", w, r_t[rows, :]))
            groups[key] = (w, np.clip(resid, 0.0, None))
        w, resid = groups[key]
        time_weights.append(w)
        time_rows.append(rows)
        err_var[:, j] = resid

    # Stage 2: per symbol, frequency filter with heteroscedastic noise.
    freq_weights = np.empty((n_t, n_f, obs_cols.size), dtype=np.complex128)
    r_f_obs = r_f[:, obs_cols]
    r_f_oo = r_f[np.ix_(obs_cols, obs_cols)]
    for k in range(n_t):
        gram = r_f_oo + np.diag(err_var[k])
        freq_weights[k] = _solve_hermitian(gram, r_f_obs.conj().T, jitter=True).conj().T
    return TwoStageLmmseFilter(
        time_weights=time_weights,
        time_pilot_rows=time_rows,
        obs_columns=obs_cols,
        freq_weights=freq_weights,
        pattern_mask=pattern.mask.copy(),
        noise_var=float(noise_var),
        grid_shape=(n_t, n_f),
        provenance=provenance or {},
    )


def apply_2x1d(filt: TwoStageLmmseFilter, h_pilots_ls: np.ndarray) -> np.ndarray:
    """Apply the 2x1D cascade to the LS pilot estimates (selection order)."""
    h_pilots_ls = np.asarray(h_pilots_ls).ravel()
    n_t, n_f = filt.grid_shape
    ls_grid = np.zeros((n_t, n_f), dtype=np.complex128)
    ls_grid[filt.pattern_mask] = h_pilots_ls
    stage1 = np.empty((n_t, filt.obs_columns.size), dtype=np.complex128)
    for j, col in enumerate(filt.obs_columns):
        stage1[:, j] = filt.time_weights[j] @ ls_grid[filt.time_pilot_rows[j], col]
    return np.einsum("kno,ko->kn", filt.freq_weights, stage1)


def mediated_covariance(
    spec: GridSpec,
    velocity_range: tuple[float, float],
    snr_db_range: tuple[float, float],
    k_range: tuple[float, float],
    num_realizations: int,
    rng: np.random.Generator,
    profile_template: chan.ChannelProfile | None = None,
) -> tuple[AcfModel, float]:
    """Empirical ACF averaged over uniformly drawn (v, SNR, K) parameters.

    Returns the mediated model and the assumed noise variance (the mean
    of the drawn per-realization noise variances).  Velocities in m/s.
    """
    if num_realizations < 100:
        raise ValueError("num_realizations must be >= 100")
    template = profile_template or chan.ChannelProfile()
    v = rng.uniform(velocity_range[0], velocity_range[1], num_realizations)
    snr = rng.uniform(snr_db_range[0], snr_db_range[1], num_realizations)
    ks = rng.uniform(k_range[0], k_range[1], num_realizations)
    doppler = v * template.carrier_freq / chan.SPEED_OF_LIGHT

    reals = chan.generate_realizations(
        template, spec, num_realizations, rng, doppler_hz=doppler, rician_k=ks
    )
    r_t, r_f = chan.empirical_acf(reals)
    assumed_noise = float(np.mean(10.0 ** (-snr / 10.0)))
    prov = {
        "kind": "empirical",
        "num_realizations": num_realizations,
        "velocity_range_kmh": [velocity_range[0] * 3.6, velocity_range[1] * 3.6],
        "snr_db_range": list(snr_db_range),
        "k_range": list(k_range),
        "assumed_noise_var": assumed_noise,
    }
    return AcfModel(r_t, r_f, prov), assumed_noise


def mse(h_hat: np.ndarray, h: np.ndarray) -> float:
    """Mean squared error over the used grid cells."""
    if h_hat.shape != h.shape:
        raise ValueError(f"grid shapes differ: {h_hat.shape} vs {h.shape}")
    return float(np.mean(np.abs(h_hat - h) ** 2))


def matched_filter_mse(covariance: np.ndarray, filt: LmmseFilter) -> float:
    """Analytic per-cell MSE trace(R - W P R) / n_cells for a matched filter."""
    n_cells = covariance.shape[0]
    r_pc = covariance[filt.pilot_indices, :]
    err_trace = np.real(np.trace(covariance)) - np.real(
        np.trace(filt.weights @ r_pc)
    )
    return float(err_trace / n_cells)

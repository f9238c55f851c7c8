"""Bit pipeline for coded BER experiments.

Quasi-cyclic irregular LDPC code (rate 1/2, n = 1296, lift size 54,
802.11n prototype matrix), systematic encoding through the
dual-diagonal parity recursion, exact a-posteriori soft demapping and
flooding sum-product belief-propagation decoding.

LLR convention throughout: LLR = log P(b = 0) / P(b = 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import channel as chan
from .ofdm import (
    GridSpec,
    apply_channel,
    assemble_frame,
    bits_per_symbol,
    build_pilot_pattern_80211p,
    constellation,
    map_bits,
)

LLR_CLAMP = 30.0

#: 802.11n prototype matrix for n = 1296, rate 1/2, lift size Z = 54.
#: Entries are cyclic-shift exponents; -1 marks an all-zero block.
BASE_MATRIX_1296_R12 = np.array([
    [40, -1, -1, -1, 22, -1, 49, 23, 43, -1, -1, -1,  1,  0, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [50,  1, -1, -1, 48, 35, -1, -1, 13, -1, 30, -1, -1,  0,  0, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [39, 50, -1, -1,  4, -1,  2, -1, -1, -1, -1, 49, -1, -1,  0,  0, -1, -1, -1, -1, -1, -1, -1, -1],
    [33, -1, -1, 38, 37, -1, -1,  4,  1, -1, -1, -1, -1, -1, -1,  0,  0, -1, -1, -1, -1, -1, -1, -1],
    [45, -1, -1, -1,  0, 22, -1, -1, 20, 42, -1, -1, -1, -1, -1, -1,  0,  0, -1, -1, -1, -1, -1, -1],
    [51, -1, -1, 48, 35, -1, -1, -1, 44, -1, 18, -1, -1, -1, -1, -1, -1,  0,  0, -1, -1, -1, -1, -1],
    [47, 11, -1, -1, -1, 17, -1, -1, 51, -1, -1, -1,  0, -1, -1, -1, -1, -1,  0,  0, -1, -1, -1, -1],
    [ 5, -1, 25, -1,  6, -1, 45, -1, 13, 40, -1, -1, -1, -1, -1, -1, -1, -1, -1,  0,  0, -1, -1, -1],
    [33, -1, -1, 34, 24, -1, -1, -1, 23, -1, -1, 46, -1, -1, -1, -1, -1, -1, -1, -1,  0,  0, -1, -1],
    [ 1, -1, 27, -1,  1, -1, -1, -1, 38, -1, 44, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1,  0,  0, -1],
    [-1, 18, -1, -1, 23, -1, -1,  8,  0, 35, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1,  0,  0],
    [49, -1, 17, -1, 30, -1, -1, -1, 34, -1, -1, 19,  1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1,  0],
], dtype=np.int64)

LIFT_SIZE = 54


def _shift(blocks: np.ndarray, s: int) -> np.ndarray:
    """Apply the lifted permutation P^s along the last axis."""
    return np.roll(blocks, -s, axis=-1)


def expand_base_matrix(base: np.ndarray = BASE_MATRIX_1296_R12,
                       z: int = LIFT_SIZE) -> np.ndarray:
    """Expand a prototype matrix into the binary parity-check matrix."""
    rows, cols = base.shape
    h = np.zeros((rows * z, cols * z), dtype=np.uint8)
    eye = np.eye(z, dtype=np.uint8)
    for i in range(rows):
        for j in range(cols):
            s = base[i, j]
            if s >= 0:
                # P^s: identity cyclically right-shifted by s columns, so
                # (P^s x)[r] = x[(r + s) mod z] = roll(x, -s).
                h[i * z:(i + 1) * z, j * z:(j + 1) * z] = np.roll(eye, s, axis=1)
    return h


class LdpcCode:
    """Rate-1/2 quasi-cyclic LDPC code with precomputed graph structures."""

    def __init__(self, base: np.ndarray = BASE_MATRIX_1296_R12, z: int = LIFT_SIZE):
        self.base = np.asarray(base, dtype=np.int64)
        self.z = int(z)
        self.h = expand_base_matrix(self.base, self.z)
        self.n_checks, self.n = self.h.shape
        self.k = self.n - self.n_checks
        self._n_info_blocks = self.k // self.z

        # Tanner graph in check-major edge order.
        check_vars = [np.flatnonzero(self.h[i]) for i in range(self.n_checks)]
        degrees = np.array([cv.size for cv in check_vars])
        self._max_cdeg = int(degrees.max())
        self.n_edges = int(degrees.sum())
        self._edge_var = np.concatenate(check_vars)
        self._check_slices = np.concatenate([[0], np.cumsum(degrees)])

        self._ce_idx = np.full((self.n_checks, self._max_cdeg), -1, dtype=np.int64)
        edge = 0
        for i, cv in enumerate(check_vars):
            self._ce_idx[i, :cv.size] = np.arange(edge, edge + cv.size)
            edge += cv.size
        self._ce_mask = self._ce_idx >= 0
        self._ce_safe = np.where(self._ce_mask, self._ce_idx, 0)
        self._cv_vars = np.where(self._ce_mask, self._edge_var[self._ce_safe], 0)

    def encode(self, info_bits: np.ndarray) -> np.ndarray:
        """Systematic encoding via the dual-diagonal recursion.

        Accepts (k,) or (batch, k); returns codewords of length n.
        """
        info = np.asarray(info_bits, dtype=np.uint8) % 2
        single = info.ndim == 1
        if single:
            info = info[None]
        if info.shape[1] != self.k:
            raise ValueError(f"expected {self.k} information bits, got {info.shape[1]}")
        b, z = info.shape[0], self.z
        u = info.reshape(b, self._n_info_blocks, z)
        n_rows = self.base.shape[0]

        lam = np.zeros((b, n_rows, z), dtype=np.uint8)
        for i in range(n_rows):
            for j in range(self._n_info_blocks):
                s = self.base[i, j]
                if s >= 0:
                    lam[:, i] ^= _shift(u[:, j], s)
        p = np.zeros((b, n_rows, z), dtype=np.uint8)
        # Summing all block rows telescopes the dual diagonal; the first
        # parity column contributes P^1 + P^0 + P^1 = identity.
        p[:, 0] = np.bitwise_xor.reduce(lam, axis=1)
        col0 = self.base[:, self._n_info_blocks]
        p1 = lam[:, 0] ^ _shift(p[:, 0], col0[0])
        parities = [p1]
        for i in range(1, n_rows - 1):
            nxt = parities[-1] ^ lam[:, i]
            if col0[i] >= 0:
                nxt = nxt ^ _shift(p[:, 0], col0[i])
            parities.append(nxt)
        p[:, 1:] = np.stack(parities, axis=1)
        cw = np.concatenate([info, p.reshape(b, -1)], axis=1)
        return cw[0] if single else cw

    def syndrome(self, codewords: np.ndarray) -> np.ndarray:
        """Parity syndrome over GF(2); zero for valid codewords."""
        cw = np.asarray(codewords, dtype=np.uint8)
        return (cw @ self.h.T) % 2

    def to_alist(self, path) -> None:
        """Write the parity-check matrix in plain-text alist format."""
        col_idx = [np.flatnonzero(self.h[:, j]) + 1 for j in range(self.n)]
        row_idx = [np.flatnonzero(self.h[i]) + 1 for i in range(self.n_checks)]
        with open(path, "w") as fh:
            fh.write(f"{self.n} {self.n_checks}\n")
            fh.write(f"{max(len(c) for c in col_idx)} {max(len(r) for r in row_idx)}\n")
            fh.write(" ".join(str(len(c)) for c in col_idx) + "\n")
            fh.write(" ".join(str(len(r)) for r in row_idx) + "\n")
            for c in col_idx:
                fh.write(" ".join(map(str, c)) + "\n")
            for r in row_idx:
                fh.write(" ".join(map(str, r)) + "\n")


def read_alist(path) -> np.ndarray:
    """Parse an alist file into a dense binary parity-check matrix."""
    with open(path) as fh:
        tokens = fh.read().split()
    it = iter(tokens)
    n, m = int(next(it)), int(next(it))
    next(it), next(it)
    col_deg = [int(next(it)) for _ in range(n)]
    [int(next(it)) for _ in range(m)]
    h = np.zeros((m, n), dtype=np.uint8)
    for j in range(n):
        count = 0
        while count < col_deg[j]:
            row = int(next(it))
            if row > 0:
                h[row - 1, j] = 1
                count += 1
    return h


def bp_decode_batch(
    code: LdpcCode, llrs: np.ndarray, max_iters: int = 40
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flooding sum-product decoding of a batch of LLR vectors.

    Returns (hard bits (B, n), converged flags (B,), iterations used (B,)).
    Check nodes use the log-hyperbolic-tangent rule; early exit per
    codeword on parity satisfaction.
    """
    llrs = np.asarray(llrs, dtype=float)
    single = llrs.ndim == 1
    if single:
        llrs = llrs[None]
    if llrs.shape[1] != code.n:
        raise ValueError(f"expected LLR vectors of length {code.n}")
    b = llrs.shape[0]
    llrs = np.clip(llrs, -LLR_CLAMP, LLR_CLAMP)

    m_vc = llrs[:, code._edge_var].copy()  # (B, E) check-major edge order
    m_cv = np.zeros_like(m_vc)
    bits = np.zeros((b, code.n), dtype=np.uint8)
    done = np.zeros(b, dtype=bool)
    iters_used = np.full(b, max_iters, dtype=np.int64)
    ones_col = np.ones((b, code.n_checks, 1))

    for it in range(1, max_iters + 1):
        # Check-node update via masked prefix/suffix products of tanh(m/2).
        t = np.tanh(0.5 * m_vc)
        t_pad = np.where(code._ce_mask, t[:, code._ce_safe], 1.0)
        prefix = np.concatenate([ones_col, np.cumprod(t_pad, axis=2)[:, :, :-1]], axis=2)
        suffix = np.concatenate(
            [np.cumprod(t_pad[:, :, ::-1], axis=2)[:, :, -2::-1], ones_col], axis=2
        )
        ext = np.clip(prefix * suffix, -1.0 + 1e-15, 1.0 - 1e-15)
        m_cv_pad = 2.0 * np.arctanh(ext)
        m_cv = m_cv_pad[:, code._ce_mask]

        # Variable-node update and posterior.
        acc = np.zeros((b, code.n))
        np.add.at(acc, (slice(None), code._edge_var), m_cv)
        total = llrs + acc
        m_vc = np.clip(total[:, code._edge_var] - m_cv, -LLR_CLAMP, LLR_CLAMP)

        hard = (total < 0).astype(np.uint8)
        hard_pad = np.where(code._ce_mask, hard[:, code._cv_vars], 0)
        satisfied = (hard_pad.sum(axis=2) % 2 == 0).all(axis=1)
        newly = satisfied & ~done
        if np.any(newly):
            bits[newly] = hard[newly]
            iters_used[newly] = it
            done |= newly
        if done.all():
            break
    bits[~done] = (total[~done] < 0).astype(np.uint8)
    if single:
        return bits[0], bool(done[0]), int(iters_used[0])
    return bits, done, iters_used


def bp_decode(code: LdpcCode, llrs: np.ndarray, max_iters: int = 40):
    """Decode one LLR vector; returns (bits, converged, iterations)."""
    return bp_decode_batch(code, llrs, max_iters)


def app_demap(
    y: np.ndarray, h_hat: np.ndarray, noise_var: float, modulation: str
) -> np.ndarray:
    """Exact per-bit LLRs under the post-equalization Gaussian model.

    The observation y * conj(h) / |h|^2 is treated as the sent symbol in
    noise of variance noise_var / |h|^2 (the estimate is taken as exact).
    Output shape is y.shape + (bits per symbol,), clamped to +-30;
    cells with |h| below 1e-12 yield zero LLRs (erasures).
    """
    if noise_var <= 0:
        raise ValueError("noise_var must be positive for soft demapping")
    y = np.asarray(y)
    h_hat = np.asarray(h_hat)
    points, labels = constellation(modulation)
    m = labels.shape[1]
    mag2 = np.abs(h_hat) ** 2
    degenerate = np.abs(h_hat) < 1e-12
    safe_mag2 = np.where(degenerate, 1.0, mag2)
    y_eq = y * np.conj(h_hat) / safe_mag2
    sigma_eff = noise_var / safe_mag2
    metric = -np.abs(y_eq[..., None] - points) ** 2 / sigma_eff[..., None]
    llrs = np.empty(y.shape + (m,))
    for b in range(m):
        zero = labels[:, b] == 0
        llrs[..., b] = logsumexp(metric[..., zero], axis=-1) - logsumexp(
            metric[..., ~zero], axis=-1
        )
    llrs = np.clip(llrs, -LLR_CLAMP, LLR_CLAMP)
    llrs[degenerate] = 0.0
    return llrs


def ebn0_to_snr_db(ebn0_db: float, code_rate: float, bits_per_sym: int,
                   data_fraction: float) -> float:
    """SNR_dB = Eb/N0_dB + 10 log10(r * m * rho).

    ``rho`` is the data-cell fraction of the frame, so pilot overhead is
    charged to the information bits.
    """
    return ebn0_db + 10.0 * math.log10(code_rate * bits_per_sym * data_fraction)


def run_coded_link(
    code: LdpcCode,
    spec: GridSpec,
    profile_sampler,
    noise_var: float,
    modulation: str,
    estimator_fn,
    n_info_bits: int,
    seed,
) -> tuple[int, int]:
    """End-to-end coded transmission; returns (info bit errors, info bits).

    Codewords are packed consecutively across the data cells in frame
    fill order, spanning frame boundaries; tail cells carry random
    filler bits that are excluded from the error count.  All randomness
    derives from ``seed``, so two calls with different estimators see
    identical channels, noise and payloads (paired comparison).

    ``profile_sampler(rng)`` draws the per-frame channel profile;
    ``estimator_fn(y, pattern, h_true, noise_var)`` returns the channel
    estimate used for demapping.
    """
    m = bits_per_symbol(modulation)
    root = np.random.SeedSequence(seed)
    bits_seq, frames_seq = root.spawn(2)
    rng_bits = np.random.default_rng(bits_seq)

    n_codewords = max(1, math.ceil(n_info_bits / code.k))
    info = rng_bits.integers(0, 2, size=(n_codewords, code.k), dtype=np.uint8)
    coded = code.encode(info)
    symbols = map_bits(coded.ravel(), modulation)

    pattern = build_pilot_pattern_80211p(spec)
    n_data = spec.n_cells - pattern.n_pilots
    n_frames = math.ceil(symbols.size / n_data)
    frame_seqs = frames_seq.spawn(n_frames)

    llr_stream = np.empty((n_frames * n_data, m))
    for fi in range(n_frames):
        rng = np.random.default_rng(frame_seqs[fi])
        profile = profile_sampler(rng)
        gains = chan.sample_tap_gains(profile, spec.n_symbols, spec.symbol_duration, rng)
        h = chan.taps_to_frequency_response(
            gains, profile.tap_delays, spec.n_used, spec.subcarrier_spacing
        )
        start = fi * n_data
        chunk = symbols[start:start + n_data]
        if chunk.size < n_data:
            filler_bits = rng.integers(0, 2, size=(n_data - chunk.size) * m)
            chunk = np.concatenate([chunk, map_bits(filler_bits, modulation)])
        x = assemble_frame(chunk, pattern, spec)
        y = apply_channel(x, h, noise_var, rng)
        h_hat = estimator_fn(y, pattern, h, noise_var)
        llr_stream[start:start + n_data] = app_demap(
            y[~pattern.mask], h_hat[~pattern.mask], noise_var, modulation
        )

    llrs = llr_stream.reshape(-1)[:n_codewords * code.n].reshape(n_codewords, code.n)
    decoded, _, _ = bp_decode_batch(code, llrs)
    errors = int(np.count_nonzero(decoded[:, :code.k] != info))
    return errors, n_codewords * code.k

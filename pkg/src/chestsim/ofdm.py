"""802.11p-style OFDM resource grid, symbol mapping and single-tap equalization.

A frame is an (n_symbols, n_used) complex ndarray over the used
subcarriers.  Cells are vectorized time-major (frequency fastest):
flat index = symbol * n_used + subcarrier.  The channel acts
multiplicatively per cell (cyclic prefix handled analytically); the
time-domain circular-convolution path exists in the test suite as a
validation oracle.

Gray mapping conventions (bit order: most-significant bit first, the
in-phase rail takes the leading bits):

* QPSK: (b0, b1) -> ((1-2*b0) + 1j*(1-2*b1)) / sqrt(2); 00 -> (1+j)/sqrt(2).
* 16-QAM: (b0, b1) -> I rail, (b2, b3) -> Q rail, per-rail Gray code
  00 -> +3, 01 -> +1, 11 -> -1, 10 -> -3, scaled by 1/sqrt(10).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

#: BPSK signs of the block training symbol on the 52 used subcarriers,
#: long-training-field style (subcarriers -26..-1, +1..+26).
BLOCK_TRAINING_SIGNS = np.array(
    [1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1,
     1, -1, -1, 1, 1, -1, 1, -1, 1, -1, -1, -1, -1, -1, 1, 1, -1, -1, 1, -1, 1, -1, 1, 1, 1, 1],
    dtype=float,
)

#: Comb pilot subcarriers (physical indices) and their base polarity.
COMB_PILOT_OFFSETS = (-21, -7, 7, 21)
COMB_PILOT_POLARITY = (1.0, 1.0, 1.0, -1.0)


@dataclass(frozen=True)
class GridSpec:
    """Dimensions and timing of the OFDM resource grid."""

    n_symbols: int = 32
    n_subcarriers: int = 64
    n_used: int = 52
    bandwidth: float = 10e6
    cp_duration: float = 1.6e-6

    def __post_init__(self):
        if self.n_symbols < 1:
            raise ValueError("n_symbols must be >= 1")
        if not 0 < self.n_used < self.n_subcarriers:
            raise ValueError("n_used must lie strictly between 0 and n_subcarriers")
        if self.n_used % 2:
            raise ValueError("n_used must be even (symmetric around DC)")
        if self.bandwidth <= 0 or self.cp_duration < 0:
            raise ValueError("bandwidth must be positive and cp_duration >= 0")

    @property
    def subcarrier_spacing(self) -> float:
        return self.bandwidth / self.n_subcarriers

    @property
    def symbol_duration(self) -> float:
        """OFDM symbol duration including the cyclic prefix."""
        return 1.0 / self.subcarrier_spacing + self.cp_duration

    @property
    def used_offsets(self) -> np.ndarray:
        """Physical subcarrier indices of the used cells (DC excluded)."""
        half = self.n_used // 2
        return np.concatenate([np.arange(-half, 0), np.arange(1, half + 1)])

    def used_ordinal(self, offset: int) -> int:
        """Map a physical subcarrier index to its contiguous grid column."""
        half = self.n_used // 2
        if not -half <= offset <= half or offset == 0:
            raise ValueError(f"subcarrier offset {offset} is not a used subcarrier")
        return offset + half if offset < 0 else offset + half - 1

    @property
    def n_cells(self) -> int:
        return self.n_symbols * self.n_used


@dataclass(frozen=True, eq=False)
class PilotPattern:
    """Boolean pilot mask with the known pilot values.

    ``values`` is a full grid that is zero outside the mask; pilot cells
    carry unit-magnitude symbols.  The selection map lists pilot cells
    as (symbol, subcarrier) pairs in time-major vectorization order.
    """

    mask: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.mask.shape != self.values.shape:
            raise ValueError("mask and values must share a shape")
        mags = np.abs(self.values[self.mask])
        if mags.size and not np.allclose(mags, 1.0, atol=1e-12):
            raise ValueError("pilot values must have unit magnitude")

    @property
    def n_pilots(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def coords(self) -> np.ndarray:
        """(p, 2) pilot coordinates, time-major order."""
        return np.argwhere(self.mask)

    @property
    def flat_indices(self) -> np.ndarray:
        c = self.coords
        return c[:, 0] * self.mask.shape[1] + c[:, 1]

    @property
    def pilot_values(self) -> np.ndarray:
        """Pilot symbols in selection order."""
        return self.values[self.mask]

    def selection_matrix(self) -> np.ndarray:
        """Explicit one-hot selection matrix (p, n_cells); test oracle use."""
        p = self.n_pilots
        pi = np.zeros((p, self.mask.size))
        pi[np.arange(p), self.flat_indices] = 1.0
        return pi


def build_pilot_pattern_80211p(spec: GridSpec, frame_index: int = 0) -> PilotPattern:
    """802.11p-style piloting: one block training symbol plus a four-tone comb.

    Symbol 0 carries pilots on all 52 used subcarriers (training-symbol
    proxy).  Every later symbol carries comb pilots on subcarriers
    -21, -7, +7, +21 with base polarity (+1, +1, +1, -1) multiplied by a
    per-symbol pseudo-random scrambler sign seeded from ``frame_index``.
    """
    if spec.n_used != 52:
        raise ValueError("the 802.11p pattern requires 52 used subcarriers")
    mask = np.zeros((spec.n_symbols, spec.n_used), dtype=bool)
    values = np.zeros((spec.n_symbols, spec.n_used), dtype=np.complex128)

    mask[0, :] = True
    values[0, :] = BLOCK_TRAINING_SIGNS

    comb_cols = [spec.used_ordinal(off) for off in COMB_PILOT_OFFSETS]
    scrambler = np.random.default_rng(
        np.random.SeedSequence(entropy=int(frame_index), spawn_key=(0x8011,))
    )
    signs = 1.0 - 2.0 * scrambler.integers(0, 2, size=spec.n_symbols)
    for k in range(1, spec.n_symbols):
        for col, pol in zip(comb_cols, COMB_PILOT_POLARITY):
            mask[k, col] = True
            values[k, col] = pol * signs[k]
    return PilotPattern(mask=mask, values=values)


@lru_cache(maxsize=4)
def constellation(modulation: str) -> tuple[np.ndarray, np.ndarray]:
    """Return (points, bit_labels) for a Gray-mapped constellation.

    ``points`` has unit average energy; ``bit_labels`` is (M, m) with the
    bit tuple that maps to each point, index = big-endian bit value.
    """
    modulation = modulation.lower()
    if modulation == "qpsk":
        m = 2
        labels = np.array([[b0, b1] for b0 in (0, 1) for b1 in (0, 1)])
        points = ((1 - 2 * labels[:, 0]) + 1j * (1 - 2 * labels[:, 1])) / np.sqrt(2.0)
    elif modulation in ("16qam", "16-qam"):
        m = 4
        rail = {(0, 0): 3.0, (0, 1): 1.0, (1, 1): -1.0, (1, 0): -3.0}
        labels = np.array(
            [[b0, b1, b2, b3]
             for b0 in (0, 1) for b1 in (0, 1) for b2 in (0, 1) for b3 in (0, 1)]
        )
        i_rail = np.array([rail[(r[0], r[1])] for r in labels])
        q_rail = np.array([rail[(r[2], r[3])] for r in labels])
        points = (i_rail + 1j * q_rail) / np.sqrt(10.0)
    else:
        raise ValueError(f"unknown modulation {modulation!r}")
    assert labels.shape == (2 ** m, m)
    return points.astype(np.complex128), labels


def bits_per_symbol(modulation: str) -> int:
    return constellation(modulation)[1].shape[1]


def map_bits(bits: np.ndarray, modulation: str) -> np.ndarray:
    """Gray-map a bit vector to unit-energy complex symbols."""
    bits = np.asarray(bits, dtype=np.int64).ravel()
    points, labels = constellation(modulation)
    m = labels.shape[1]
    if bits.size % m:
        raise ValueError(f"bit count {bits.size} is not divisible by {m}")
    if bits.size and (bits.min() < 0 or bits.max() > 1):
        raise ValueError("bits must be 0 or 1")
    groups = bits.reshape(-1, m)
    idx = groups @ (1 << np.arange(m - 1, -1, -1))
    return points[idx]


def assemble_frame(
    data_symbols: np.ndarray, pattern: PilotPattern, spec: GridSpec
) -> np.ndarray:
    """Place pilots and data on the grid; data fills unmasked cells row-major."""
    data_symbols = np.asarray(data_symbols).ravel()
    n_data = spec.n_cells - pattern.n_pilots
    if data_symbols.size != n_data:
        raise ValueError(f"expected {n_data} data symbols, got {data_symbols.size}")
    frame = pattern.values.astype(np.complex128).copy()
    frame[~pattern.mask] = data_symbols
    return frame


def extract_data(frame: np.ndarray, pattern: PilotPattern) -> np.ndarray:
    """Read back the data cells in fill order (inverse of assemble_frame)."""
    return frame[~pattern.mask]


def apply_channel(
    x: np.ndarray, h: np.ndarray, noise_var: float, rng: np.random.Generator
) -> np.ndarray:
    """Y = H o X + N with i.i.d. circularly-symmetric complex Gaussian noise."""
    if x.shape != h.shape:
        raise ValueError(f"grid shapes differ: {x.shape} vs {h.shape}")
    if noise_var < 0:
        raise ValueError("noise_var must be >= 0")
    y = h * x
    if noise_var > 0:
        scale = np.sqrt(noise_var / 2.0)
        y = y + scale * (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape))
    return y


def equalize(
    y: np.ndarray, h_hat: np.ndarray, eps: float = 1e-12
) -> tuple[np.ndarray, np.ndarray]:
    """Single-tap equalization y * conj(h) / |h|^2.

    Cells with |h| < eps are zeroed and flagged in the returned boolean
    mask instead of raising.
    """
    if y.shape != h_hat.shape:
        raise ValueError(f"grid shapes differ: {y.shape} vs {h_hat.shape}")
    mag2 = np.abs(h_hat) ** 2
    degenerate = np.abs(h_hat) < eps
    safe = np.where(degenerate, 1.0, mag2)
    y_eq = np.where(degenerate, 0.0, y * np.conj(h_hat) / safe)
    return y_eq, degenerate


def snr_to_noise_var(snr_db: float) -> float:
    """Noise variance for unit average symbol energy."""
    return float(10.0 ** (-snr_db / 10.0))

"""Shared fixtures and statistical helpers for the test suite."""

import numpy as np
import pytest

from chestsim import channel as chan
from chestsim import ofdm


def upper_conf_bound(diffs: np.ndarray, z: float = 1.645) -> float:
    """One-sided 95% upper bound on the mean of paired differences."""
    diffs = np.asarray(diffs, dtype=float)
    se = diffs.std(ddof=1) / np.sqrt(diffs.size)
    return float(diffs.mean() + z * se)


def simulate_frame(profile, spec, pattern, noise_var, rng, seed, modulation="qpsk"):
    """One frame: returns (true channel, transmitted grid, received grid)."""
    realization = chan.realize(profile, spec, seed=seed)
    n_data = spec.n_cells - pattern.n_pilots
    m = ofdm.bits_per_symbol(modulation)
    bits = rng.integers(0, 2, n_data * m)
    x = ofdm.assemble_frame(ofdm.map_bits(bits, modulation), pattern, spec)
    y = ofdm.apply_channel(x, realization.freq_response, noise_var, rng)
    return realization.freq_response, x, y


@pytest.fixture(scope="session")
def grid_spec():
    return ofdm.GridSpec()


@pytest.fixture(scope="session")
def pilot_pattern(grid_spec):
    return ofdm.build_pilot_pattern_80211p(grid_spec)

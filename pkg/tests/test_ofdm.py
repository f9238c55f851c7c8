"""Resource grid, piloting, Gray mapping, channel application, equalization."""

import numpy as np
import pytest

from chestsim import channel as chan
from chestsim import ofdm


class TestGridSpec:
    def test_default_timing(self, grid_spec):
        assert grid_spec.subcarrier_spacing == pytest.approx(156.25e3)
        assert grid_spec.symbol_duration == pytest.approx(8e-6)
        assert grid_spec.n_used == 52

    def test_used_offsets_exclude_dc(self, grid_spec):
        offsets = grid_spec.used_offsets
        assert offsets.size == 52
        assert 0 not in offsets
        assert offsets.min() == -26 and offsets.max() == 26

    def test_used_ordinal_mapping(self, grid_spec):
        assert grid_spec.used_ordinal(-26) == 0
        assert grid_spec.used_ordinal(-1) == 25
        assert grid_spec.used_ordinal(1) == 26
        assert grid_spec.used_ordinal(26) == 51
        with pytest.raises(ValueError):
            grid_spec.used_ordinal(0)


class TestPilotPattern:
    def test_pilot_count(self, grid_spec, pilot_pattern):
        assert pilot_pattern.n_pilots == 52 + 4 * (grid_spec.n_symbols - 1)

    def test_block_symbol_fully_piloted(self, pilot_pattern):
        assert pilot_pattern.mask[0].all()

    def test_data_cell_unmasked(self, grid_spec, pilot_pattern):
        assert not pilot_pattern.mask[3, grid_spec.used_ordinal(10)]

    def test_comb_positions(self, grid_spec, pilot_pattern):
        comb_cols = {grid_spec.used_ordinal(o) for o in (-21, -7, 7, 21)}
        for k in range(1, grid_spec.n_symbols):
            assert set(np.flatnonzero(pilot_pattern.mask[k])) == comb_cols

    def test_unit_magnitude_values(self, pilot_pattern):
        assert np.allclose(np.abs(pilot_pattern.pilot_values), 1.0)

    def test_selection_matrix_one_hot(self, pilot_pattern):
        pi = pilot_pattern.selection_matrix()
        assert pi.shape == (pilot_pattern.n_pilots, pilot_pattern.mask.size)
        assert np.array_equal(pi.sum(axis=1), np.ones(pilot_pattern.n_pilots))

    def test_coords_time_major(self, pilot_pattern):
        flat = pilot_pattern.flat_indices
        assert np.array_equal(flat, np.sort(flat))

    def test_frame_index_changes_polarity_not_mask(self, grid_spec):
        a = ofdm.build_pilot_pattern_80211p(grid_spec, frame_index=0)
        b = ofdm.build_pilot_pattern_80211p(grid_spec, frame_index=1)
        assert np.array_equal(a.mask, b.mask)
        assert not np.array_equal(a.values, b.values)

    def test_requires_52_subcarriers(self):
        small = ofdm.GridSpec(n_symbols=4, n_subcarriers=16, n_used=8)
        with pytest.raises(ValueError):
            ofdm.build_pilot_pattern_80211p(small)


class TestMapping:
    def test_qpsk_gray_corner(self):
        sym = ofdm.map_bits([0, 0], "qpsk")
        assert sym[0] == pytest.approx((1 + 1j) / np.sqrt(2))

    def test_qpsk_all_points(self):
        syms = ofdm.map_bits([0, 0, 0, 1, 1, 0, 1, 1], "qpsk")
        expected = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)
        assert np.allclose(syms, expected)

    def test_16qam_unit_energy(self):
        points, _ = ofdm.constellation("16qam")
        assert np.mean(np.abs(points) ** 2) == pytest.approx(1.0)

    def test_qpsk_unit_energy(self):
        points, _ = ofdm.constellation("qpsk")
        assert np.mean(np.abs(points) ** 2) == pytest.approx(1.0)

    @pytest.mark.parametrize("modulation", ["qpsk", "16qam"])
    def test_gray_adjacency(self, modulation):
        # Nearest-neighbour constellation points differ in exactly one bit.
        points, labels = ofdm.constellation(modulation)
        n = points.size
        d = np.abs(points[:, None] - points[None, :])
        d[np.arange(n), np.arange(n)] = np.inf
        min_d = d.min()
        for a in range(n):
            for b in range(n):
                if abs(d[a, b] - min_d) < 1e-9:
                    assert np.sum(labels[a] != labels[b]) == 1

    def test_indivisible_length_rejected(self):
        with pytest.raises(ValueError):
            ofdm.map_bits([0, 1, 0], "qpsk")
        with pytest.raises(ValueError):
            ofdm.map_bits([0, 1, 0], "16qam")


class TestFrameAssembly:
    def test_all_pilot_pattern(self, grid_spec):
        mask = np.ones((grid_spec.n_symbols, grid_spec.n_used), dtype=bool)
        values = np.exp(2j * np.pi * np.random.default_rng(0).random(mask.shape))
        pattern = ofdm.PilotPattern(mask=mask, values=values)
        frame = ofdm.assemble_frame(np.array([]), pattern, grid_spec)
        assert np.array_equal(frame, values)

    def test_data_round_trip(self, grid_spec, pilot_pattern):
        n_data = grid_spec.n_cells - pilot_pattern.n_pilots
        assert n_data == 52 * grid_spec.n_symbols - pilot_pattern.n_pilots
        rng = np.random.default_rng(1)
        data = ofdm.map_bits(rng.integers(0, 2, n_data * 2), "qpsk")
        frame = ofdm.assemble_frame(data, pilot_pattern, grid_spec)
        assert np.array_equal(ofdm.extract_data(frame, pilot_pattern), data)

    def test_data_count_for_default_grid(self, grid_spec, pilot_pattern):
        if grid_spec.n_symbols == 8:
            assert grid_spec.n_cells - pilot_pattern.n_pilots == 336
        n8 = ofdm.GridSpec(n_symbols=8)
        p8 = ofdm.build_pilot_pattern_80211p(n8)
        assert n8.n_cells - p8.n_pilots == 52 * 8 - 80

    def test_count_mismatch_rejected(self, grid_spec, pilot_pattern):
        with pytest.raises(ValueError):
            ofdm.assemble_frame(np.ones(3), pilot_pattern, grid_spec)

    def test_average_energy_unity(self, grid_spec, pilot_pattern):
        rng = np.random.default_rng(2)
        n_data = grid_spec.n_cells - pilot_pattern.n_pilots
        frames = [
            ofdm.assemble_frame(
                ofdm.map_bits(rng.integers(0, 2, n_data * 4), "16qam"),
                pilot_pattern, grid_spec,
            )
            for _ in range(50)
        ]
        energy = np.mean([np.mean(np.abs(f) ** 2) for f in frames])
        assert energy == pytest.approx(1.0, rel=0.01)


class TestApplyChannel:
    def test_noiseless_is_hadamard(self, grid_spec):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 6)) + 1j * rng.standard_normal((4, 6))
        h = rng.standard_normal((4, 6)) + 1j * rng.standard_normal((4, 6))
        y = ofdm.apply_channel(x, h, 0.0, rng)
        assert np.array_equal(y, h * x)

    def test_noise_power(self):
        rng = np.random.default_rng(4)
        x = np.ones((250, 400))
        h = np.ones((250, 400))
        y = ofdm.apply_channel(x, h, 0.1, rng)
        assert np.var(y - 1.0) == pytest.approx(0.1, rel=0.02)

    def test_negative_noise_rejected(self):
        with pytest.raises(ValueError):
            ofdm.apply_channel(np.ones((2, 2)), np.ones((2, 2)), -1.0,
                               np.random.default_rng(0))

    def test_matches_time_domain_circular_convolution(self, grid_spec):
        # Oracle: IDFT -> circular convolution with the sampled impulse
        # response -> DFT equals the per-cell multiplicative channel.
        profile = chan.ChannelProfile()
        rng = np.random.default_rng(5)
        gains = chan.sample_tap_gains(profile, 1, grid_spec.symbol_duration, rng)
        h_row = chan.taps_to_frequency_response(
            gains, profile.tap_delays, grid_spec.n_used, grid_spec.subcarrier_spacing
        )[0]
        x_row = ofdm.map_bits(rng.integers(0, 2, grid_spec.n_used * 2), "qpsk")

        n_fft = grid_spec.n_subcarriers
        t_sample = 1.0 / grid_spec.bandwidth
        positions = np.round(profile.tap_delays / t_sample).astype(int)
        impulse = np.zeros(n_fft, dtype=complex)
        impulse[positions] = gains[:, 0]

        x_full = np.zeros(n_fft, dtype=complex)
        x_full[: grid_spec.n_used] = x_row
        s = np.fft.ifft(x_full)
        received = np.fft.fft(np.array([
            np.sum(impulse * np.roll(s[::-1], n + 1)) for n in range(n_fft)
        ]))
        assert np.max(np.abs(received[: grid_spec.n_used] - h_row * x_row)) < 1e-9


class TestEqualize:
    def test_perfect_csi_recovers_data(self, grid_spec, pilot_pattern):
        rng = np.random.default_rng(6)
        n_data = grid_spec.n_cells - pilot_pattern.n_pilots
        data = ofdm.map_bits(rng.integers(0, 2, n_data * 2), "qpsk")
        x = ofdm.assemble_frame(data, pilot_pattern, grid_spec)
        h = rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)
        y = ofdm.apply_channel(x, h, 0.0, rng)
        y_eq, flags = ofdm.equalize(y, h)
        assert not flags.any()
        assert np.allclose(y_eq, x)

    def test_scalar_division(self):
        y = np.array([[2 + 2j]])
        h = np.array([[2.0 + 0j]])
        y_eq, flags = ofdm.equalize(y, h)
        assert y_eq[0, 0] == pytest.approx(1 + 1j)
        assert not flags[0, 0]

    def test_degenerate_cell_flagged(self):
        y = np.array([[1.0 + 0j, 1.0]])
        h = np.array([[0.0 + 0j, 1.0]])
        y_eq, flags = ofdm.equalize(y, h)
        assert y_eq[0, 0] == 0.0
        assert flags[0, 0] and not flags[0, 1]


class TestSnr:
    def test_zero_db(self):
        assert ofdm.snr_to_noise_var(0.0) == pytest.approx(1.0)

    def test_ten_db(self):
        assert ofdm.snr_to_noise_var(10.0) == pytest.approx(0.1)

    def test_fifteen_db(self):
        assert ofdm.snr_to_noise_var(15.0) == pytest.approx(0.0316228, rel=1e-5)

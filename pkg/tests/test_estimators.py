"""Classical estimators: LS interpolation, Wiener filters, mediated models."""

import numpy as np
import pytest

from chestsim import channel as chan
from chestsim import estimators as est
from chestsim import ofdm
from conftest import simulate_frame, upper_conf_bound


def small_pattern(n_t=4, n_f=6, coords=((0, 0), (0, 5), (3, 0), (3, 5), (1, 2), (2, 4))):
    mask = np.zeros((n_t, n_f), dtype=bool)
    for k, n in coords:
        mask[k, n] = True
    values = np.where(mask, 1.0 + 0j, 0.0)
    return ofdm.PilotPattern(mask=mask, values=values)


def random_hermitian_psd(n, rng):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return a @ a.conj().T / n + 0.1 * np.eye(n)


class TestLsPilotEstimate:
    def test_unit_pilot(self):
        out = est.ls_pilot_estimate(np.array([0.5 - 0.5j]), np.array([1.0 + 0j]))
        assert out[0] == pytest.approx(0.5 - 0.5j)

    def test_sign_cancellation(self):
        h = np.array([0.3 + 0.7j])
        out = est.ls_pilot_estimate(-h, np.array([-1.0 + 0j]))
        assert out[0] == pytest.approx(h[0])

    def test_noiseless_inverse(self):
        rng = np.random.default_rng(0)
        h = rng.standard_normal(10) + 1j * rng.standard_normal(10)
        x = np.exp(2j * np.pi * rng.random(10))
        assert np.allclose(est.ls_pilot_estimate(h * x, x), h)

    def test_zero_pilot_rejected(self):
        with pytest.raises(ValueError):
            est.ls_pilot_estimate(np.array([1.0 + 0j]), np.array([0.0 + 0j]))


class TestLsInterpolate:
    def test_constant_field(self, pilot_pattern):
        c = 0.7 - 0.2j
        out = est.ls_interpolate(np.full(pilot_pattern.n_pilots, c), pilot_pattern)
        assert np.allclose(out, c)

    def test_affine_exactness_on_rectangle(self):
        # Four pilots at rectangle corners; a + b*k + c*n is reproduced
        # exactly inside the rectangle (linear interpolation is exact on
        # affine fields over any triangulation of the corners).
        pattern = small_pattern(6, 8, ((1, 2), (1, 6), (4, 2), (4, 6)))
        a, b, c = 0.3 + 0.1j, -0.2 + 0.4j, 0.05 - 0.3j
        plane = lambda k, n: a + b * k + c * n
        pilots = np.array([plane(k, n) for k, n in pattern.coords])
        out = est.LsInterpolator(pattern)(pilots)
        for k in range(1, 5):
            for n in range(2, 7):
                assert out[k, n] == pytest.approx(plane(k, n), abs=1e-12)

    def test_passes_through_nodes(self, pilot_pattern):
        rng = np.random.default_rng(1)
        pilots = rng.standard_normal(pilot_pattern.n_pilots) * (1 + 0.5j)
        out = est.ls_interpolate(pilots, pilot_pattern)
        assert np.allclose(out[pilot_pattern.mask], pilots)

    def test_hold_outside_hull(self):
        pattern = small_pattern(6, 8, ((2, 3), (2, 5), (4, 3), (4, 5)))
        pilots = np.array([1.0, 2.0, 3.0, 4.0], dtype=complex)
        out = est.LsInterpolator(pattern)(pilots)
        assert out[0, 0] == pytest.approx(pilots[0])  # nearest corner held

    def test_single_pilot_row_falls_back_to_line(self):
        pattern = small_pattern(4, 8, ((1, 1), (1, 4), (1, 7)))
        pilots = np.array([1.0, 4.0, 7.0], dtype=complex)
        out = est.LsInterpolator(pattern)(pilots)
        assert out[1, 2] == pytest.approx(2.0)  # linear along the row
        assert out[3, 1] == pytest.approx(1.0)  # held across time

    def test_empty_pattern_rejected(self):
        pattern = small_pattern(4, 6, ())
        with pytest.raises(ValueError):
            est.LsInterpolator(pattern)


class TestBuildCovariance:
    def test_identity_inputs(self):
        acf = est.AcfModel(np.eye(3, dtype=complex), np.eye(4, dtype=complex))
        assert np.array_equal(est.build_covariance(acf), np.eye(12))

    def test_entrywise_kronecker_oracle(self):
        rng = np.random.default_rng(2)
        r_t = random_hermitian_psd(2, rng)
        r_f = random_hermitian_psd(2, rng)
        cov = est.build_covariance(est.AcfModel(r_t, r_f))
        n_f = 2
        for k in range(2):
            for n in range(2):
                for kp in range(2):
                    for np_ in range(2):
                        assert cov[k * n_f + n, kp * n_f + np_] == pytest.approx(
                            r_t[k, kp] * r_f[n, np_]
                        )

    def test_psd(self, grid_spec):
        profile = chan.ChannelProfile(velocity=chan.kmh_to_mps(150))
        cov = est.build_covariance(est.analytic_acf(profile, grid_spec))
        eig = np.linalg.eigvalsh(cov)
        assert eig.min() > -1e-10


class TestBuild2dLmmse:
    def test_all_pilots_zero_noise_identity(self):
        rng = np.random.default_rng(3)
        cov = random_hermitian_psd(12, rng)
        filt = est.build_2d_lmmse(cov, np.arange(12), 0.0, (3, 4))
        assert np.allclose(filt.weights, np.eye(12), atol=1e-10)

    def test_huge_noise_shrinks_to_zero(self):
        rng = np.random.default_rng(4)
        cov = random_hermitian_psd(12, rng)
        filt = est.build_2d_lmmse(cov, np.arange(0, 12, 3), 1e9, (3, 4))
        assert np.max(np.abs(filt.weights)) < 1e-6

    def test_matches_dense_oracle(self):
        # Direct dense evaluation with the explicit selection matrix.
        rng = np.random.default_rng(5)
        pattern = small_pattern()
        r_t = random_hermitian_psd(4, rng)
        r_f = random_hermitian_psd(6, rng)
        cov = est.build_covariance(est.AcfModel(r_t, r_f))
        noise_var = 0.05
        filt = est.build_2d_lmmse(cov, pattern.flat_indices, noise_var, (4, 6))

        pi = pattern.selection_matrix()
        w_oracle = (
            cov @ pi.T @ np.linalg.inv(pi @ (cov + noise_var * np.eye(24)) @ pi.T)
        )
        assert np.max(np.abs(filt.weights - w_oracle)) < 1e-10

    def test_pilot_rows_reproduce_pilots_at_zero_noise(self):
        rng = np.random.default_rng(6)
        pattern = small_pattern()
        cov = random_hermitian_psd(24, rng)  # full rank
        filt = est.build_2d_lmmse(cov, pattern.flat_indices, 0.0, (4, 6))
        rows = filt.weights[pattern.flat_indices]
        assert np.allclose(rows, np.eye(pattern.n_pilots), atol=1e-8)

    def test_singular_at_zero_noise_raises(self):
        # Rank-1 covariance with several pilots is singular at zero noise.
        ones = np.ones((4, 4), dtype=complex)
        acf = est.AcfModel(ones, np.eye(3, dtype=complex))
        cov = est.build_covariance(acf)
        with pytest.raises(est.IllConditionedError) as exc:
            est.build_2d_lmmse(cov, np.array([0, 3, 6]), 0.0, (4, 3))
        assert exc.value.condition > 1e12


class TestApplyLmmse:
    def test_identity_filter(self):
        filt = est.LmmseFilter(np.eye(6, dtype=complex), np.arange(6), 0.0, (2, 3))
        h_p = np.arange(6) + 1j
        assert np.allclose(est.apply_lmmse(filt, h_p), h_p.reshape(2, 3))

    def test_zero_filter(self):
        filt = est.LmmseFilter(np.zeros((6, 2), dtype=complex), np.array([0, 5]), 0.1, (2, 3))
        assert np.allclose(est.apply_lmmse(filt, np.ones(2)), 0.0)

    def test_length_mismatch_rejected(self):
        filt = est.LmmseFilter(np.zeros((6, 2), dtype=complex), np.array([0, 5]), 0.1, (2, 3))
        with pytest.raises(ValueError):
            est.apply_lmmse(filt, np.ones(3))


@pytest.fixture(scope="module")
def matched_setup(grid_spec, pilot_pattern):
    profile = chan.ChannelProfile(velocity=chan.kmh_to_mps(150))
    noise_var = ofdm.snr_to_noise_var(15.0)
    acf = est.analytic_acf(profile, grid_spec)
    cov = est.build_covariance(acf)
    filt2d = est.build_2d_lmmse(
        cov, pilot_pattern.flat_indices, noise_var,
        (grid_spec.n_symbols, grid_spec.n_used),
    )
    filt21 = est.build_2x1d_lmmse(acf.temporal, acf.spectral, pilot_pattern, noise_var)
    return profile, noise_var, acf, cov, filt2d, filt21


class TestTwoStageLmmse:
    def test_static_channel_reproduces_pilot_columns(self, pilot_pattern):
        n_t, n_f = pilot_pattern.mask.shape
        r_t = np.ones((n_t, n_t), dtype=complex)
        r_f = np.eye(n_f, dtype=complex)
        filt = est.build_2x1d_lmmse(r_t, r_f, pilot_pattern, 0.0)
        h_p = np.ones(pilot_pattern.n_pilots, dtype=complex) * (0.8 - 0.6j)
        out = est.apply_2x1d(filt, h_p)
        assert np.allclose(out, 0.8 - 0.6j, atol=1e-5)

    def test_identity_stage2_with_full_pilots(self):
        n_t, n_f = 3, 5
        mask = np.ones((n_t, n_f), dtype=bool)
        pattern = ofdm.PilotPattern(mask=mask, values=np.ones((n_t, n_f), complex))
        filt = est.build_2x1d_lmmse(
            np.eye(n_t, dtype=complex), np.eye(n_f, dtype=complex), pattern, 0.0
        )
        rng = np.random.default_rng(8)
        h_p = rng.standard_normal(n_t * n_f) + 1j * rng.standard_normal(n_t * n_f)
        assert np.allclose(est.apply_2x1d(filt, h_p), h_p.reshape(n_t, n_f), atol=1e-6)

    def test_no_pilot_columns_rejected(self):
        mask = np.zeros((3, 4), dtype=bool)
        pattern = ofdm.PilotPattern(mask=mask, values=np.zeros((3, 4), complex))
        with pytest.raises(est.UnsupportedPatternError):
            est.build_2x1d_lmmse(np.eye(3, dtype=complex), np.eye(4, dtype=complex),
                                 pattern, 0.1)

    def test_2x1d_never_beats_joint_filter(self, grid_spec, pilot_pattern, matched_setup):
        profile, noise_var, _, _, filt2d, filt21 = matched_setup
        rng = np.random.default_rng(9)
        diffs = []
        for i in range(300):
            h, _, y = simulate_frame(profile, grid_spec, pilot_pattern, noise_var,
                                     rng, seed=(21, i))
            h_p = est.ls_pilot_estimate(y[pilot_pattern.mask], pilot_pattern.pilot_values)
            mse_2d = est.mse(est.apply_lmmse(filt2d, h_p), h)
            mse_21 = est.mse(est.apply_2x1d(filt21, h_p), h)
            diffs.append(mse_2d - mse_21)
        assert upper_conf_bound(np.array(diffs)) < 0


class TestAnalyticMseOracle:
    def test_monte_carlo_matches_trace(self, grid_spec, pilot_pattern, matched_setup):
        profile, noise_var, _, cov, filt2d, _ = matched_setup
        analytic = est.matched_filter_mse(cov, filt2d)
        rng = np.random.default_rng(10)
        mses = []
        for i in range(400):
            h, _, y = simulate_frame(profile, grid_spec, pilot_pattern, noise_var,
                                     rng, seed=(22, i))
            h_p = est.ls_pilot_estimate(y[pilot_pattern.mask], pilot_pattern.pilot_values)
            mses.append(est.mse(est.apply_lmmse(filt2d, h_p), h))
        mc = np.mean(mses)
        se = np.std(mses, ddof=1) / np.sqrt(len(mses))
        assert abs(mc - analytic) < 4 * se + 0.01 * analytic


class TestMediatedCovariance:
    def test_point_ranges_converge_to_analytic(self, grid_spec):
        profile = chan.ChannelProfile(velocity=chan.kmh_to_mps(150))
        rng = np.random.default_rng(11)
        v = chan.kmh_to_mps(150)
        acf_emp, noise = est.mediated_covariance(
            grid_spec, (v, v), (15.0, 15.0), (0.0, 0.0), 10_000, rng
        )
        acf_ana = est.analytic_acf(profile, grid_spec)
        assert np.max(np.abs(acf_emp.temporal - acf_ana.temporal)) < 0.02
        assert np.max(np.abs(acf_emp.spectral - acf_ana.spectral)) < 0.025
        assert noise == pytest.approx(ofdm.snr_to_noise_var(15.0))

    def test_static_range_all_ones(self, grid_spec):
        rng = np.random.default_rng(12)
        acf_emp, _ = est.mediated_covariance(
            grid_spec, (0.0, 0.0), (10.0, 10.0), (0.0, 0.0), 2000, rng
        )
        assert np.max(np.abs(acf_emp.temporal - 1.0)) < 0.02

    def test_hermitian_psd(self, grid_spec):
        rng = np.random.default_rng(13)
        acf_emp, _ = est.mediated_covariance(
            grid_spec, (0.0, chan.kmh_to_mps(300)), (5.0, 30.0), (0.0, 5.0), 1000, rng
        )
        for mat in (acf_emp.temporal, acf_emp.spectral):
            assert np.allclose(mat, mat.conj().T)
            assert np.linalg.eigvalsh(mat).min() > -1e-8

    def test_too_few_realizations_rejected(self, grid_spec):
        with pytest.raises(ValueError):
            est.mediated_covariance(grid_spec, (0, 1), (5, 30), (0, 5), 10,
                                    np.random.default_rng(0))

    def test_mediated_not_better_than_matched(self, grid_spec, pilot_pattern, matched_setup):
        profile, noise_var, _, _, filt2d, _ = matched_setup
        rng = np.random.default_rng(14)
        acf_emp, assumed = est.mediated_covariance(
            grid_spec, (0.0, chan.kmh_to_mps(300)), (5.0, 30.0), (0.0, 5.0), 4000, rng
        )
        filt_med = est.build_2d_lmmse(
            est.build_covariance(acf_emp), pilot_pattern.flat_indices, assumed,
            (grid_spec.n_symbols, grid_spec.n_used),
        )
        diffs = []
        for i in range(300):
            h, _, y = simulate_frame(profile, grid_spec, pilot_pattern, noise_var,
                                     rng, seed=(23, i))
            h_p = est.ls_pilot_estimate(y[pilot_pattern.mask], pilot_pattern.pilot_values)
            diffs.append(
                est.mse(est.apply_lmmse(filt2d, h_p), h)
                - est.mse(est.apply_lmmse(filt_med, h_p), h)
            )
        assert upper_conf_bound(np.array(diffs)) < 0


class TestMse:
    def test_zero_error(self):
        h = np.ones((2, 3), dtype=complex)
        assert est.mse(h, h) == 0.0

    def test_constant_offset(self):
        h = np.zeros((4, 4), dtype=complex)
        assert est.mse(h + 0.1j, h) == pytest.approx(0.01)

    def test_zero_estimate_gives_channel_power(self, grid_spec):
        profile = chan.ChannelProfile(velocity=chan.kmh_to_mps(100))
        vals = [
            est.mse(np.zeros((grid_spec.n_symbols, grid_spec.n_used)),
                    chan.realize(profile, grid_spec, seed=(1, i)).freq_response)
            for i in range(400)
        ]
        assert np.mean(vals) == pytest.approx(1.0, rel=0.05)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            est.mse(np.ones((2, 2)), np.ones((2, 3)))


class TestSerialization:
    def test_acf_round_trip(self, grid_spec, tmp_path):
        profile = chan.ChannelProfile(velocity=chan.kmh_to_mps(90), rician_k=1.0)
        acf = est.analytic_acf(profile, grid_spec)
        path = tmp_path / "model.acf"
        acf.save(path)
        loaded = est.AcfModel.load(path)
        assert np.array_equal(loaded.temporal, acf.temporal)
        assert np.array_equal(loaded.spectral, acf.spectral)
        assert loaded.provenance == acf.provenance

    def test_filter_round_trip(self, tmp_path):
        rng = np.random.default_rng(15)
        pattern = small_pattern()
        cov = random_hermitian_psd(24, rng)
        filt = est.build_2d_lmmse(cov, pattern.flat_indices, 0.05, (4, 6),
                                  provenance={"kind": "test"})
        path = tmp_path / "w.lmmse"
        filt.save(path)
        loaded = est.LmmseFilter.load(path)
        assert np.array_equal(loaded.weights, filt.weights)
        assert np.array_equal(loaded.pilot_indices, filt.pilot_indices)
        assert loaded.noise_var == filt.noise_var
        assert loaded.grid_shape == filt.grid_shape

    def test_truncated_file_rejected(self, tmp_path):
        rng = np.random.default_rng(16)
        acf = est.AcfModel(random_hermitian_psd(3, rng), random_hermitian_psd(3, rng))
        path = tmp_path / "trunc.acf"
        acf.save(path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        from chestsim._container import ContainerError
        with pytest.raises(ContainerError):
            est.AcfModel.load(path)

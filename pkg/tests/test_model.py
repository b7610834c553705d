import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biphoton import (
    DetectionParams,
    InterferometerConfig,
    InvalidInputError,
    Regime,
    RegimeError,
    SourceParams,
    UndefinedVisibilityError,
    classify_regime,
    correlation,
    delay_from_path,
    fringe_count,
    gamma_ave,
    gamma_balanced_perfect,
    gamma_balanced_rough,
    gamma_unbalanced,
    model_curve,
    phase_sweep,
    phase_weights,
    visibility,
)
from biphoton.model import SPEED_OF_LIGHT, default_n_max
from conftest import brute_gamma_ave


def mp_gamma_ave(tau, src, det, n_range):
    mpmath.mp.dps = 40
    a = 2 * mpmath.log(2) / mpmath.mpf(det.t_d)
    tau, t0, tr = mpmath.mpf(tau), mpmath.mpf(det.tau_0), mpmath.mpf(src.tau_r)
    s = mpmath.fsum((1 + a * abs(tau - n * tr - t0)) * mpmath.exp(-a * abs(tau - n * tr - t0))
                    for n in range(-n_range, n_range + 1))
    return float(mpmath.exp(-mpmath.mpf(src.delta_omega_opo) * abs(tau - t0)) * s)


# frozen from the mpmath summation above (40 digits, n in [-50, 50])
ORACLE_AT_TAU0 = 1.0007803886482534
ORACLE_MIDWAY = 0.06937792013690038
ORACLE_UNBAL_TAU0 = 4.300155875401742


class TestGammaAve:
    def test_oracle_values_frozen(self, unbalanced):
        src, det, _ = unbalanced
        assert mp_gamma_ave(det.tau_0, src, det, 50) == pytest.approx(ORACLE_AT_TAU0, rel=1e-14)
        mid = det.tau_0 + src.tau_r / 2
        assert mp_gamma_ave(mid, src, det, 50) == pytest.approx(ORACLE_MIDWAY, rel=1e-14)

    def test_at_tau0(self, unbalanced):
        src, det, _ = unbalanced
        v = float(gamma_ave(det.tau_0, src, det, n_max=50))
        assert v == pytest.approx(ORACLE_AT_TAU0, rel=1e-12)
        assert round(v, 4) == 1.0008
        # each n = +-1 neighbour contributes about 3.9e-4
        assert (v - 1) / 2 == pytest.approx(3.9e-4, rel=0.01)

    def test_midway(self, unbalanced):
        src, det, _ = unbalanced
        v = float(gamma_ave(det.tau_0 + src.tau_r / 2, src, det))
        assert v == pytest.approx(ORACLE_MIDWAY, rel=1e-12)
        assert v == pytest.approx(0.07, abs=0.005)

    def test_envelope_tail(self, unbalanced):
        src, det, _ = unbalanced
        assert float(gamma_ave(det.tau_0 + 30 / src.delta_omega_opo, src, det)) < 1e-12

    def test_matches_longdouble_sum(self, unbalanced):
        src, det, _ = unbalanced
        tau = np.linspace(det.window[0], det.window[1], 997)
        ref = brute_gamma_ave(tau, src, det, 200)
        np.testing.assert_allclose(gamma_ave(tau, src, det), ref.astype(float), rtol=1e-12)

    def test_scalar_and_array(self, unbalanced):
        src, det, _ = unbalanced
        assert np.ndim(gamma_ave(det.tau_0, src, det)) == 0
        assert gamma_ave(np.array([det.tau_0]), src, det).shape == (1,)

    def test_symmetry_exact(self, unbalanced):
        src, _, _ = unbalanced
        # with tau_0 = 0 both arguments are exact, so the sums must agree bit for bit
        det = DetectionParams(220e-12, 0.0, 1e-10, (-50e-9, 50e-9))
        x = np.linspace(0, 40e-9, 5001)
        assert np.array_equal(gamma_ave(x, src, det), gamma_ave(-x, src, det))

    def test_symmetry_about_tau0(self, unbalanced):
        src, det, _ = unbalanced
        x = np.linspace(0, 40e-9, 5001)
        np.testing.assert_allclose(gamma_ave(det.tau_0 + x, src, det),
                                   gamma_ave(det.tau_0 - x, src, det), rtol=1e-12)

    def test_peak_locations(self, unbalanced):
        src, det, _ = unbalanced
        step = det.bin_width
        for n in range(-20, 21):
            if abs(n) * src.delta_omega_opo * src.tau_r >= 5:
                continue
            c = det.tau_0 + n * src.tau_r
            tau = c + np.linspace(-0.4, 0.4, 801) * src.tau_r
            v = gamma_ave(tau, src, det)
            assert abs(tau[np.argmax(v)] - c) <= step

    def test_truncation_convergence(self, unbalanced):
        src, det, _ = unbalanced
        n0 = default_n_max(src, det)
        assert n0 == math.ceil((det.span + 30 / src.delta_omega_opo) / src.tau_r)
        tau = np.linspace(det.window[0], det.window[1], 2000)
        d = np.abs(gamma_ave(tau, src, det, n0) - gamma_ave(tau, src, det, n0 + 10))
        assert d.max() < 1e-10

    def test_small_n_max_drops_peaks(self, unbalanced):
        src, det, _ = unbalanced
        assert float(gamma_ave(det.tau_0 + src.tau_r, src, det, n_max=0)) < 0.01

    def test_td_monotone_in_valley(self, unbalanced):
        src, det, _ = unbalanced
        mid = det.tau_0 + src.tau_r / 2
        vals = [float(gamma_ave(mid, src, DetectionParams(td, det.tau_0, det.bin_width, det.window)))
                for td in (50e-12, 100e-12, 220e-12, 400e-12, 800e-12)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_nonfinite_tau(self, unbalanced):
        src, det, _ = unbalanced
        with pytest.raises(InvalidInputError):
            gamma_ave(np.array([det.tau_0, np.nan]), src, det)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-200e-9, 300e-9))
    def test_nonnegative_and_bounded(self, tau):
        src = SourceParams(2 * math.pi * 7.8e6, 1.63e-9)
        det = DetectionParams(220e-12, 55e-9, 1e-10, (5e-9, 105e-9))
        v = float(gamma_ave(tau, src, det))
        assert 0.0 <= v <= 1.0 + 2 * 4e-4 + 1e-9


class TestParams:
    def test_source_validation(self):
        with pytest.raises(InvalidInputError):
            SourceParams(-1.0, 1e-9)
        with pytest.raises(InvalidInputError):
            SourceParams(1e7, 0.0)
        with pytest.raises(InvalidInputError):
            SourceParams(1e7, 1e-9, delta=1.0)
        with pytest.raises(InvalidInputError):
            SourceParams(float("nan"), 1e-9)

    def test_broad_modes_warn(self):
        with pytest.warns(RuntimeWarning):
            SourceParams(2e9, 1e-9)

    def test_detection_validation(self):
        with pytest.raises(InvalidInputError):
            DetectionParams(0.5e-12, 55e-9, 1e-10, (5e-9, 105e-9))
        with pytest.raises(InvalidInputError):
            DetectionParams(220e-12, 55e-9, 0.0, (5e-9, 105e-9))
        with pytest.raises(InvalidInputError):
            DetectionParams(220e-12, 55e-9, 1e-10, (105e-9, 5e-9))
        with pytest.raises(InvalidInputError):
            DetectionParams(220e-12, 200e-9, 1e-10, (5e-9, 105e-9))

    def test_bin_edges(self, unbalanced):
        _, det, _ = unbalanced
        e = det.bin_edges()
        assert e.size == 1001
        assert e[0] == det.window[0]
        assert e[-1] == pytest.approx(det.window[1], rel=1e-12)

    def test_theta_normalized(self):
        cfg = InterferometerConfig(0.17, 2 * math.pi + 0.5, Regime.UNBALANCED)
        assert cfg.theta == pytest.approx(0.5)
        assert 0 <= InterferometerConfig(0.17, -0.5, Regime.UNBALANCED).theta < 2 * math.pi

    def test_negative_path(self):
        with pytest.raises(InvalidInputError):
            InterferometerConfig(-0.1, 0.0, Regime.UNBALANCED)

    def test_regime_parse(self):
        assert Regime.parse("perfect") is Regime.PERFECT_BALANCED
        assert Regime.parse("rough-balanced") is Regime.ROUGH_BALANCED
        with pytest.raises(InvalidInputError):
            Regime.parse("sideways")


class TestUnbalanced:
    def test_theta_half_pi(self, unbalanced):
        src, det, cfg = unbalanced
        c = InterferometerConfig(cfg.delta_l, math.pi / 2, Regime.UNBALANCED, 2.5, 0.3)
        tau = np.linspace(det.window[0], det.window[1], 3001)
        T = c.delay
        ref = 2.5 * (gamma_ave(tau - T, src, det) + gamma_ave(tau + T, src, det))
        np.testing.assert_allclose(gamma_unbalanced(tau, c, src, det) - 0.3, ref, rtol=1e-14)

    def test_value_at_tau0_with_third_round_trip(self, unbalanced):
        src, det, _ = unbalanced
        c = InterferometerConfig(SPEED_OF_LIGHT * src.tau_r / 3, 0.0, Regime.UNBALANCED)
        v = float(gamma_unbalanced(det.tau_0, c, src, det))
        ref = 4 * mp_gamma_ave(det.tau_0, src, det, 50) + 2 * mp_gamma_ave(
            det.tau_0 + src.tau_r / 3, src, det, 50)
        assert v == pytest.approx(ref, rel=1e-12)
        assert v == pytest.approx(ORACLE_UNBAL_TAU0, rel=1e-12)
        # a rough 4.28 estimate keeps only the nearest shifted peak
        assert v == pytest.approx(4.28, rel=0.01)

    def test_bounded_below_by_c2(self, unbalanced):
        src, det, cfg = unbalanced
        c = InterferometerConfig(cfg.delta_l, 1.1, Regime.UNBALANCED, 1.0, 0.2)
        tau = np.linspace(det.window[0], det.window[1], 2001)
        assert gamma_unbalanced(tau, c, src, det).min() >= 0.2

    def test_regime_mismatch(self, unbalanced, perfect):
        src, det, cfg = unbalanced
        _, _, pcfg = perfect
        with pytest.raises(RegimeError):
            gamma_unbalanced(det.tau_0, pcfg, src, det)
        with pytest.raises(RegimeError):
            gamma_balanced_perfect(det.tau_0, cfg, src, det)
        with pytest.raises(RegimeError):
            gamma_balanced_rough(det.tau_0, cfg, src, det)

    def test_dispatch(self, unbalanced, rough):
        for src, det, cfg in (unbalanced, rough):
            tau = np.linspace(det.window[0], det.window[1], 101)
            f = gamma_unbalanced if cfg.regime is Regime.UNBALANCED else gamma_balanced_rough
            np.testing.assert_array_equal(correlation(tau, cfg, src, det), f(tau, cfg, src, det))


class TestBalanced:
    @pytest.mark.parametrize("theta,factor", [(math.pi, 0.0), (0.0, 1.0), (math.pi / 2, 0.25)])
    def test_perfect_factors(self, perfect, theta, factor):
        src, det, cfg = perfect
        c = InterferometerConfig(cfg.delta_l, theta, cfg.regime)
        tau = np.linspace(det.window[0], det.window[1], 1001)
        np.testing.assert_allclose(gamma_balanced_perfect(tau, c, src, det),
                                   factor * gamma_ave(tau, src, det), rtol=1e-15, atol=0)

    @pytest.mark.parametrize("theta,factor", [(0.0, 3 / 8), (math.pi / 2, 1 / 8)])
    def test_rough_factors(self, rough, theta, factor):
        src, det, cfg = rough
        c = InterferometerConfig(cfg.delta_l, theta, cfg.regime)
        tau = np.linspace(det.window[0], det.window[1], 1001)
        np.testing.assert_allclose(gamma_balanced_rough(tau, c, src, det),
                                   factor * gamma_ave(tau, src, det), rtol=1e-15)

    def test_periods(self, perfect, rough):
        tau = np.linspace(20e-9, 90e-9, 501)
        for th in np.linspace(0, 2 * math.pi, 13):
            src, det, cfg = rough
            a = gamma_balanced_rough(tau, InterferometerConfig(cfg.delta_l, th, cfg.regime), src, det)
            b = gamma_balanced_rough(tau, InterferometerConfig(cfg.delta_l, th + math.pi, cfg.regime),
                                     src, det)
            np.testing.assert_allclose(a, b, rtol=1e-13)
            src, det, cfg = perfect
            a = gamma_balanced_perfect(tau, InterferometerConfig(0, th, cfg.regime), src, det)
            b = gamma_balanced_perfect(tau, InterferometerConfig(0, th + 2 * math.pi, cfg.regime),
                                       src, det)
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)

    def test_gain_adds_flat_term(self, perfect):
        src, det, cfg = perfect
        src_d = SourceParams(src.delta_omega_opo, src.tau_r, 0.1)
        tau = np.array([det.tau_0, 10e-9])
        g = gamma_ave(tau, src, det)
        v = gamma_balanced_perfect(tau, InterferometerConfig(0, 0.0, cfg.regime), src_d, det)
        np.testing.assert_allclose(v, 1.1 * g + 0.1, rtol=1e-14)
        # the gain term shares the (cos + 1)^2 factor, so theta = pi stays dark
        v = gamma_balanced_perfect(tau, InterferometerConfig(0, math.pi, cfg.regime), src_d, det)
        assert not v.any()

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0, 2 * math.pi), st.floats(0, 2 * math.pi))
    def test_shape_ratio_constant(self, t1, t2):
        src = SourceParams(2 * math.pi * 7.8e6, 1.63e-9)
        det = DetectionParams(220e-12, 55e-9, 1e-10, (5e-9, 105e-9))
        tau = np.linspace(5e-9, 105e-9, 301)
        for regime, f in ((Regime.PERFECT_BALANCED, gamma_balanced_perfect),
                          (Regime.ROUGH_BALANCED, gamma_balanced_rough)):
            a = f(tau, InterferometerConfig(0, t1, regime), src, det)
            b = f(tau, InterferometerConfig(0, t2, regime), src, det)
            if a.max() < 1e-12 or b.max() < 1e-12:
                continue
            r = a / b
            assert np.ptp(r) <= 1e-12 * abs(r[0])


class TestPhaseWeights:
    def test_no_jitter(self):
        w = phase_weights(Regime.UNBALANCED, 0.3)
        assert w.center == pytest.approx(4 * math.cos(0.3) ** 2)
        assert w.shifted == 1.0 and w.flat == 0.0

    def test_jitter_averages(self):
        rng = np.random.default_rng(0)
        phi = 0.7 + 0.4 * rng.standard_normal(400_000)
        for regime in Regime:
            w = phase_weights(regime, 0.7, 0.0, 0.4)
            mc = np.mean([phase_weights(regime, p).center for p in phi[:20000]])
            assert w.center == pytest.approx(mc, abs=0.02)


class TestScalars:
    def test_delay_from_path(self):
        assert delay_from_path(0.170) == pytest.approx(0.567e-9, rel=1e-3)
        assert delay_from_path(0.170) == pytest.approx(1.63e-9 / 3, rel=0.05)
        assert delay_from_path(0.0) == 0.0
        assert delay_from_path(SPEED_OF_LIGHT * 1.63e-9) == pytest.approx(1.63e-9, rel=1e-15)
        assert SPEED_OF_LIGHT * 1.63e-9 == pytest.approx(0.4887, rel=1e-4)
        with pytest.raises(InvalidInputError):
            delay_from_path(-1e-3)

    def test_classify(self, unbalanced):
        src = unbalanced[0]
        assert classify_regime(0.0, 90e-6, src) is Regime.PERFECT_BALANCED
        assert classify_regime(0.74e-3, 90e-6, src) is Regime.ROUGH_BALANCED
        assert classify_regime(0.170, 90e-6, src) is Regime.UNBALANCED
        assert classify_regime(90e-6, 90e-6, src) is Regime.ROUGH_BALANCED

    def test_visibility(self):
        assert visibility(np.array([[0, 2.0], [1, 2.0]])) == 0.0
        assert visibility([1.0, 3.0]) == pytest.approx(0.5)
        with pytest.raises(UndefinedVisibilityError):
            visibility(np.zeros((4, 2)))

    def test_sweep_extremes(self, perfect, rough):
        src, det, cfg = perfect
        s = phase_sweep(cfg.regime, det.window, [0.0, math.pi], src, det, cfg)
        assert s[1, 1] == 0.0 and s[0, 1] > 0
        src, det, cfg = rough
        s = phase_sweep(cfg.regime, det.window, [0.0, math.pi / 2], src, det, cfg)
        assert s[0, 1] / s[1, 1] == pytest.approx(3.0, rel=1e-12)

    def test_sweep_unbalanced_central_window(self, unbalanced):
        src, det, cfg = unbalanced
        w = (det.tau_0 - 0.15e-9, det.tau_0 + 0.15e-9)
        thetas = np.linspace(0, math.pi, 7)
        s = phase_sweep(cfg.regime, w, thetas, src, det, cfg)
        slope, icpt = np.polyfit(4 * np.cos(thetas) ** 2, s[:, 1], 1)
        np.testing.assert_allclose(s[:, 1], slope * 4 * np.cos(thetas) ** 2 + icpt, rtol=1e-10)
        assert icpt > 0  # shifted-comb leakage

    def test_fringe_counts(self, perfect, rough):
        th = 2 * math.pi * np.arange(64) / 64
        assert fringe_count(phase_sweep(Regime.PERFECT_BALANCED, perfect[1].window, th,
                                        perfect[0], perfect[1], perfect[2])) == 1
        assert fringe_count(phase_sweep(Regime.ROUGH_BALANCED, rough[1].window, th,
                                        rough[0], rough[1], rough[2])) == 2


class TestModelCurve:
    def test_subsampling(self, unbalanced):
        src, det, cfg = unbalanced
        det = DetectionParams(det.t_d, det.tau_0, det.bin_width, (45e-9, 65e-9))
        fine = model_curve(cfg, src, det, 1e-12)
        coarse = model_curve(cfg, src, det, 2e-12)
        np.testing.assert_array_equal(coarse.tau_grid, fine.tau_grid[::2])
        np.testing.assert_array_equal(coarse.values, fine.values[::2])

    def test_three_families_visible(self, unbalanced):
        src, det, cfg = unbalanced
        det = DetectionParams(det.t_d, det.tau_0, det.bin_width, (45e-9, 65e-9))
        curve = model_curve(cfg, src, det, 1e-12)
        T = cfg.delay
        # central maxima sit on the comb; with the central family removed the side
        # families peak near +-T (neighbouring side peaks overlap and pull them slightly)
        v = curve.values
        for n in range(-3, 4):
            c = det.tau_0 + n * src.tau_r
            near = np.abs(curve.tau_grid - c) < 0.2 * src.tau_r
            assert abs(curve.tau_grid[near][np.argmax(v[near])] - c) <= 1.5e-12  # one grid step
        side = v - 4 * gamma_ave(curve.tau_grid, src, det)
        for n in range(-3, 4):
            for shift in (-T, T):
                c = det.tau_0 + n * src.tau_r + shift
                near = np.abs(curve.tau_grid - c) < 0.15 * src.tau_r
                peak = curve.tau_grid[near][np.argmax(side[near])]
                assert abs(peak - c) <= 0.05 * src.tau_r
        assert T * 1e9 == pytest.approx(0.567, abs=5e-4)

    def test_perfect_pi_all_zero(self, perfect):
        src, det, cfg = perfect
        c = InterferometerConfig(0.0, math.pi, cfg.regime)
        assert not model_curve(c, src, det, 1e-11).values.any()

    def test_curve_validation(self):
        from biphoton import CorrelationCurve
        with pytest.raises(InvalidInputError):
            CorrelationCurve(np.array([1.0, 0.5]), np.array([1.0, 1.0]))
        with pytest.raises(InvalidInputError):
            CorrelationCurve(np.array([0.5, 1.0]), np.array([1.0, -1.0]))

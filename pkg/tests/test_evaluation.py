import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuralmerton.evaluation import (ANNPolicy, AnalyticGBMPolicy, ConstantPolicy, MyopicHestonPolicy,
                                     evaluate_policy, lognormal_expected_utility, merton_ratio_gbm,
                                     myopic_weight_heston, pathwise_quantile_band, time_averaged_weight,
                                     weight_profile, wealth_paths_export)
from neuralmerton.market import GBM_SPX, HESTON_SPX, make_time_grid
from neuralmerton.policy_net import PolicyParams
from neuralmerton.utility import UtilitySpec, isoelastic_utility

HOURLY = make_time_grid(1, 2142)


class TestUtility:
    def test_examples(self):
        for eta in (0.0, 0.5, 1.0, 2.0, 7.0):
            assert isoelastic_utility(1.0, eta) == 0.0
        assert isoelastic_utility(math.e, 1.0) == pytest.approx(1.0, rel=1e-15)
        assert isoelastic_utility(2.0, 0.0) == pytest.approx(1.0, rel=1e-15)
        assert isoelastic_utility(4.0, 0.5) == pytest.approx(2.0, rel=1e-15)

    @pytest.mark.parametrize("w", [0.0, -1.0])
    def test_rejects_non_positive(self, w):
        with pytest.raises(ValueError):
            isoelastic_utility(w, 1.0)

    def test_rejects_negative_eta(self):
        with pytest.raises(ValueError):
            UtilitySpec(-0.5)

    @pytest.mark.invariant
    @settings(max_examples=60)
    @given(eta=st.floats(0.01, 10.0))
    def test_increasing_and_concave(self, eta):
        w = np.linspace(0.2, 5.0, 400)
        u = isoelastic_utility(w, eta)
        assert np.all(np.diff(u) > 0)
        assert np.all(np.diff(u, 2) < 1e-12)

    @pytest.mark.invariant
    @settings(max_examples=60)
    @given(w=st.floats(1e-3, 1e3))
    def test_log_limit(self, w):
        for eta in (1 - 1e-8, 1 + 1e-8):
            assert abs(isoelastic_utility(w, eta) - math.log(w)) <= 1e-6

    def test_derivative(self):
        w = np.array([0.5, 1.0, 3.0])
        np.testing.assert_allclose(UtilitySpec(2.0).derivative(w), w**-2.0)


class TestMerton:
    def test_spx_inputs(self):
        assert merton_ratio_gbm(0.085, 0.05, 0.176, 1) == pytest.approx(1.1299, abs=1e-4)
        assert merton_ratio_gbm(0.085, 0.05, 0.176, 1) == pytest.approx(0.035 / 0.030976, rel=1e-14)
        assert merton_ratio_gbm(0.085, 0.05, 0.176, 4) == pytest.approx(0.28248, abs=1e-5)

    def test_no_premium(self):
        assert merton_ratio_gbm(0.05, 0.05, 0.176, 2) == 0.0

    @pytest.mark.parametrize("sigma,eta", [(0.2, 0.0), (0.0, 1.0)])
    def test_rejects(self, sigma, eta):
        with pytest.raises(ValueError):
            merton_ratio_gbm(0.085, 0.05, sigma, eta)

    @pytest.mark.invariant
    @settings(max_examples=100)
    @given(mu=st.floats(-0.5, 0.5), r=st.floats(0, 0.2), sigma=st.floats(0.01, 1), eta=st.floats(0.01, 50))
    def test_linear_in_inverse_eta(self, mu, r, sigma, eta):
        a, b = merton_ratio_gbm(mu, r, sigma, eta), merton_ratio_gbm(mu, r, sigma, 2 * eta)
        assert a == pytest.approx(2 * b, rel=1e-12, abs=1e-300)


class TestMyopic:
    def test_examples(self):
        assert myopic_weight_heston(0.089, 0.05, 0.0438) == pytest.approx(0.89041, abs=1e-5)
        assert myopic_weight_heston(0.05, 0.05, 0.3) == 0.0

    def test_monotone_decay(self):
        w = myopic_weight_heston(0.089, 0.05, np.geomspace(0.01, 1e4, 50))
        assert np.all(np.diff(w) < 0) and w[-1] < 1e-5

    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            myopic_weight_heston(0.089, 0.05, 0.0)

    def test_policy_clips_zero_variance(self):
        pol = MyopicHestonPolicy(0.089, 0.05)
        assert pol(0.5, 0.0) == pytest.approx(0.039 / 1e-4)


class TestProfiles:
    def test_myopic_on_y_grid(self):
        rows = weight_profile(MyopicHestonPolicy(0.089, 0.05), [0.0], [0.02, 0.0438, 0.08])
        np.testing.assert_allclose(rows[:, 2], [1.95, 0.890411, 0.4875], atol=1e-6)

    def test_analytic_flat(self):
        rows = weight_profile(AnalyticGBMPolicy(1.0, GBM_SPX), np.linspace(0, 1, 11), [0.030976])
        np.testing.assert_allclose(rows[:, 2], 1.1299, atol=1e-4)
        assert np.ptp(rows[:, 2]) == 0

    def test_constant(self):
        rows = weight_profile(ConstantPolicy(0.5), [0, 0.5, 1], [0.01, 0.02])
        assert rows.shape == (6, 3)
        np.testing.assert_array_equal(rows[:, 2], 0.5)
        np.testing.assert_array_equal(rows[:, 0], [0, 0, 0.5, 0.5, 1, 1])

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            weight_profile(ConstantPolicy(0.5), [], [0.01])

    def test_time_average(self):
        theta = PolicyParams.from_flat((2, 1), [1.0, 0.0, 0.0])
        assert time_averaged_weight(ANNPolicy(theta), 1.0, 0.03) == pytest.approx(0.5, rel=1e-12)


class TestEvaluate:
    def test_riskless_policy(self):
        rep = evaluate_policy(ConstantPolicy(0.0), GBM_SPX, HOURLY, UtilitySpec(1.0), 100, seed=0)
        assert rep.stderr == 0.0
        assert rep.mean == pytest.approx(2142 * math.log1p(0.05 / 2142), rel=1e-12)
        assert rep.mean == pytest.approx(0.049994, abs=1e-5)

    def test_rejects_single_rep(self):
        with pytest.raises(ValueError):
            evaluate_policy(ConstantPolicy(0.0), GBM_SPX, HOURLY, UtilitySpec(1.0), 1, seed=0)

    def test_deterministic_and_chunk_independent(self):
        grid = make_time_grid(1, 50)
        pol = MyopicHestonPolicy(0.089, 0.05)
        a = evaluate_policy(pol, HESTON_SPX, grid, UtilitySpec(1.0), 500, seed=4)
        b = evaluate_policy(pol, HESTON_SPX, grid, UtilitySpec(1.0), 500, seed=4, chunk=77)
        assert a == b

    @pytest.mark.parametrize("inv_eta", [0.25, 0.625, 1.0])
    def test_matches_lognormal_oracle(self, inv_eta):
        eta = 1 / inv_eta
        pol = AnalyticGBMPolicy(eta, GBM_SPX)
        rep = evaluate_policy(pol, GBM_SPX, make_time_grid(1, 252), UtilitySpec(eta), 10_000, seed=1)
        exact = lognormal_expected_utility(pol.weight, GBM_SPX, eta)
        assert abs(rep.mean - exact) <= 3 * rep.stderr

    @pytest.mark.invariant
    def test_stderr_scaling(self):
        grid = make_time_grid(1, 50)
        pol = AnalyticGBMPolicy(1.0, GBM_SPX)
        se = {n: evaluate_policy(pol, GBM_SPX, grid, UtilitySpec(1.0), n, seed=2).stderr
              for n in (1000, 4000, 16000)}
        assert se[1000] / se[4000] == pytest.approx(2.0, rel=0.2)
        assert se[4000] / se[16000] == pytest.approx(2.0, rel=0.2)

    @pytest.mark.invariant
    @pytest.mark.parametrize("c", [0.0, 0.5, 1.5, 2.0])
    def test_analytic_beats_constants(self, c):
        grid = make_time_grid(1, 252)
        u = UtilitySpec(1.0)
        best = evaluate_policy(AnalyticGBMPolicy(1.0, GBM_SPX), GBM_SPX, grid, u, 10_000, seed=3)
        other = evaluate_policy(ConstantPolicy(c), GBM_SPX, grid, u, 10_000, seed=3)
        assert best.mean >= other.mean - 3 * other.stderr


class TestWealthExport:
    def test_riskless_staircase(self):
        grid = make_time_grid(1, 40)
        out = wealth_paths_export({"cash": ConstantPolicy(0.0)}, GBM_SPX, grid, 5, seed=0)
        stairs = np.cumprod(np.r_[1.0, np.full(40, 1 + 0.05 / 40)])
        for row in out["cash"]:
            np.testing.assert_allclose(row, stairs, rtol=1e-14)

    def test_common_noise(self):
        grid = make_time_grid(1, 100)
        pols = {"myopic": MyopicHestonPolicy(0.089, 0.05), "half": ConstantPolicy(0.5), "full": ConstantPolicy(1.0)}
        a = wealth_paths_export(pols, HESTON_SPX, grid, 5, seed=1)
        b = wealth_paths_export(pols, HESTON_SPX, grid, 5, seed=1)
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])
        assert a["myopic"].shape == (5, 101)
        # same market paths under both constant weights: their log-wealth increments move together
        d1, d2 = np.diff(np.log(a["full"])), np.diff(np.log(a["half"]))
        assert np.corrcoef(d1.ravel(), d2.ravel())[0, 1] > 0.99

    def test_rejects_zero_paths(self):
        with pytest.raises(ValueError):
            wealth_paths_export({"c": ConstantPolicy(0.0)}, GBM_SPX, make_time_grid(1, 5), 0, seed=0)

    def test_quantile_band(self):
        Y = np.tile(np.linspace(0, 1, 1001), (3, 1))
        lo, hi = pathwise_quantile_band(Y)
        assert lo == pytest.approx(0.025) and hi == pytest.approx(0.975)

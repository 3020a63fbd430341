import math

import numpy as np
import pytest

from ouou.fitting import (
    FitConfig,
    ModelHook,
    TraitTable,
    aicc,
    compare_models,
    default_hooks,
    fit_ouou,
    gls_solve,
    log_likelihood,
    r_squared,
    x_mle,
)
from ouou.kernel import OUOUParams, slope_factor_p
from ouou.simulate import SimConfig, simulate_tree
from ouou.tree import parse_newick

from conftest import balanced_newick


def random_spd(rng, n):
    q = rng.normal(size=(n, n))
    return q @ q.T + n * np.eye(n)


class TestTraitTable:
    def test_csv_round_trip(self, tmp_path):
        table = TraitTable(["A", "B", "C"], [1.0, 2.5, -0.125], [0.5, 0.25, 3.0])
        path = tmp_path / "traits.csv"
        table.to_csv(path)
        again = TraitTable.from_csv(path)
        assert again.species == table.species
        np.testing.assert_array_equal(again.x, table.x)
        np.testing.assert_array_equal(again.y, table.y)

    def test_header_required(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("name,x,y\nA,1,2\n")
        with pytest.raises(ValueError, match="header"):
            TraitTable.from_csv(path)

    def test_alignment_names_orphans(self, three_tip_tree):
        table = TraitTable(["A", "B", "Z"], [1, 2, 3], [1, 2, 3])
        with pytest.raises(ValueError, match="Z"):
            table.aligned_to(three_tip_tree)
        table = TraitTable(["A", "B"], [1, 2], [1, 2])
        with pytest.raises(ValueError, match="C"):
            table.aligned_to(three_tip_tree)

    def test_alignment_reorders(self, three_tip_tree):
        table = TraitTable(["C", "A", "B"], [3.0, 1.0, 2.0], [30.0, 10.0, 20.0])
        x, y = table.aligned_to(three_tip_tree)
        np.testing.assert_array_equal(x, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(y, [10.0, 20.0, 30.0])


class TestXMle:
    def test_star_tree_is_arithmetic_mean(self):
        tree = parse_newick("(A:1,B:1,C:1,D:1);")
        x = np.array([1.0, 2.0, 4.0, 5.0])
        x_mean, _ = x_mle(tree, x, alpha=1.0)
        assert x_mean == pytest.approx(x.mean(), rel=1e-12)

    def test_constant_vector(self, three_tip_tree):
        x_mean, s2 = x_mle(three_tip_tree, np.array([3.0, 3.0, 3.0]), alpha=0.7)
        assert x_mean == pytest.approx(3.0, rel=1e-12)
        assert s2 == pytest.approx(0.0, abs=1e-20)

    def test_matches_dense_inverse_oracle(self, three_tip_tree):
        from ouou.covariance import predictor_cov

        x = np.array([1.0, 2.0, 4.0])
        alpha = 0.9
        x_mean, s2 = x_mle(three_tip_tree, x, alpha)
        t_inv = np.linalg.inv(predictor_cov(three_tip_tree, alpha, 1.0))
        one = np.ones(3)
        want_mean = (one @ t_inv @ x) / (one @ t_inv @ one)
        r = x - want_mean
        want_s2 = (r @ t_inv @ r) / 2
        assert x_mean == pytest.approx(want_mean, rel=1e-10)
        assert s2 == pytest.approx(want_s2, rel=1e-10)


class TestGls:
    def test_identity_covariance_reduces_to_ols(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(3, 30))
            X = np.column_stack([np.ones(n), rng.normal(size=n)])
            y = rng.normal(size=n)
            b_gls = gls_solve(X, np.eye(n), y)
            b_ols, *_ = np.linalg.lstsq(X, y, rcond=None)
            np.testing.assert_allclose(b_gls, b_ols, atol=1e-10)

    def test_exact_interpolation(self):
        rng = np.random.default_rng(2)
        X = np.column_stack([np.ones(6), rng.normal(size=6)])
        y = X @ np.array([1.0, 2.0])
        V = random_spd(rng, 6)
        np.testing.assert_allclose(gls_solve(X, V, y), [1.0, 2.0], atol=1e-10)

    def test_matches_dense_inverse_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(3, 50))
            X = np.column_stack([np.ones(n), rng.normal(size=n)])
            V = random_spd(rng, n)
            y = rng.normal(size=n)
            got = gls_solve(X, V, y)
            vi = np.linalg.inv(V)
            want = np.linalg.solve(X.T @ vi @ X, X.T @ vi @ y)
            np.testing.assert_allclose(got, want, atol=1e-8)

    def test_rank_deficient_raises(self):
        X = np.column_stack([np.ones(5), np.zeros(5)])
        with pytest.raises(ValueError, match="rank deficient"):
            gls_solve(X, np.eye(5), np.arange(5.0))


class TestLogLikelihood:
    def test_standard_normal_at_mode(self):
        y = np.array([0.5])
        X = np.array([[1.0]])
        b = np.array([0.5])
        assert log_likelihood(y, X, b, np.eye(1)) == pytest.approx(
            -0.91893853320467274178, abs=1e-12
        )

    def test_identity_covariance(self):
        rng = np.random.default_rng(4)
        n = 7
        X = np.column_stack([np.ones(n), rng.normal(size=n)])
        b = np.array([0.3, -1.1])
        y = rng.normal(size=n)
        r = y - X @ b
        want = -n / 2 * np.log(2 * np.pi) - 0.5 * r @ r
        assert log_likelihood(y, X, b, np.eye(n)) == pytest.approx(want, rel=1e-12)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(2, 50))
            X = np.column_stack([np.ones(n), rng.normal(size=n)])
            b = rng.normal(size=2)
            V = random_spd(rng, n)
            y = rng.normal(size=n)
            got = log_likelihood(y, X, b, V)
            r = y - X @ b
            sign, logdet = np.linalg.slogdet(V)
            want = -n / 2 * np.log(2 * np.pi) - 0.5 * logdet - 0.5 * r @ np.linalg.inv(V) @ r
            assert got == pytest.approx(want, abs=1e-8)


class TestRSquaredAicc:
    def test_perfect_fit(self):
        y = np.array([1.0, 2.0, 3.0])
        assert r_squared(y, y) == pytest.approx(1.0)

    def test_constant_fit(self):
        assert r_squared(np.array([1.0, 2.0, 3.0]), np.full(3, 2.0)) == 0.0

    def test_zero_variance_observations(self):
        with pytest.raises(ValueError):
            r_squared(np.full(3, 1.0), np.array([1.0, 2.0, 3.0]))

    def test_matches_independent_correlation(self):
        rng = np.random.default_rng(6)
        y = rng.normal(size=20)
        f = 0.5 * y + rng.normal(size=20)
        want = float(np.corrcoef(y, f)[0, 1]) ** 2
        assert r_squared(y, f) == pytest.approx(want, rel=1e-10)

    def test_aicc_reference_value(self):
        assert aicc(0.0, 4, 39) == pytest.approx(9.1764705882352941176, abs=1e-9)

    def test_aicc_zero_params(self):
        assert aicc(-3.5, 0, 10) == pytest.approx(7.0)

    def test_aicc_delta_linearity(self):
        a1 = aicc(-10.0, 4, 30)
        a2 = aicc(-12.5, 4, 30)
        assert a2 - a1 == pytest.approx(5.0, abs=1e-12)

    def test_aicc_small_n_rejected(self):
        with pytest.raises(ValueError):
            aicc(0.0, 4, 5)


def _simulated_dataset(levels=5, depth=2.0, seed=1):
    tree = parse_newick(balanced_newick(levels, depth))
    params = OUOUParams(alpha=1.0, sigma_y=0.3, sigma_x=1.0, b0=1.0, b1=0.5, x_a=0.0, y_a=1.0)
    out = simulate_tree(SimConfig(params=params, tree=tree, paths=1, seed=seed))
    return tree, TraitTable(out.tip_labels, out.x[:, 0], out.y[:, 0]), params


class TestFit:
    def test_converges_on_simulated_data(self):
        tree, traits, _ = _simulated_dataset()
        report = fit_ouou(tree, traits)
        assert report.converged
        assert report.delta_trace[-1] < 1e-5
        assert report.iterations <= 100

    def test_report_self_consistent(self):
        tree, traits, _ = _simulated_dataset(seed=2)
        report = fit_ouou(tree, traits)
        # recompute the criterion from the reported log-likelihood
        assert report.aicc == pytest.approx(
            aicc(report.log_likelihood, report.k_params, report.n), abs=1e-12
        )
        assert 0.0 <= report.r_squared <= 1.0

    def test_fixed_point_property(self):
        # re-running the GLS stage at the reported optimum moves b by < delta
        tree, traits, _ = _simulated_dataset(seed=3)
        report = fit_ouou(tree, traits)
        cfg = FitConfig(fixed_alpha=report.alpha_hat, fixed_sigma_y2=report.sigma_y2_hat)
        again = fit_ouou(tree, traits, cfg)
        assert abs(again.b0 - report.b0) < 1e-4
        assert abs(again.b1 - report.b1) < 1e-4

    def test_likelihood_at_optimum_beats_random_box_points(self):
        tree, traits, _ = _simulated_dataset(seed=4)
        report = fit_ouou(tree, traits)
        x, y = traits.aligned_to(tree)
        from ouou.fitting import _Model

        model = _Model(tree, x, y, default_hooks()["ouou"], 1e-6)
        b = np.array([report.b0, report.b1])
        best = model.negative_log_likelihood(
            np.array([report.alpha_hat, report.sigma_y2_hat]), b
        )
        rng = np.random.default_rng(7)
        for _ in range(20):
            alpha = float(rng.uniform(1e-3, 50.0 / tree.depth))
            s2 = float(rng.uniform(0.0, np.ptp(y)))
            assert best <= model.negative_log_likelihood(np.array([alpha, s2]), b) + 1e-6

    def test_identity_hook_with_fixed_params_is_ols_on_scaled_design(self):
        tree, traits, _ = _simulated_dataset(seed=5)
        x, y = traits.aligned_to(tree)
        identity_hook = ModelHook(
            name="iid",
            slope_scale=slope_factor_p,
            residual_builder=lambda tr, pr: np.eye(tr.n_tips),
        )
        alpha = 1.3
        cfg = FitConfig(fixed_alpha=alpha, fixed_sigma_y2=0.05, hook=identity_hook)
        report = fit_ouou(tree, traits, cfg)
        # one GLS pass with V = I is OLS on the p-scaled design
        x_a, _ = x_mle(tree, x, alpha)
        X = np.column_stack(
            [np.ones(x.size), slope_factor_p(alpha * tree.depth) * (x - x_a)]
        )
        b_ols, *_ = np.linalg.lstsq(X, y, rcond=None)
        assert report.b0 == pytest.approx(b_ols[0], rel=1e-8)
        assert report.b1 == pytest.approx(b_ols[1], rel=1e-8)
        assert report.converged and report.iterations <= 2

    def test_constant_trait_gives_zero_slope(self):
        tree = parse_newick(balanced_newick(3, 1.0))
        x = np.arange(8.0)
        traits = TraitTable(tree.tip_labels, x, np.full(8, 2.0))
        report = fit_ouou(tree, traits)
        assert abs(report.b1) < 1e-6
        assert report.sigma_y2_hat < 1e-3

    def test_scale_equivariance(self):
        tree, traits, _ = _simulated_dataset(seed=6)
        report1 = fit_ouou(tree, traits)
        scaled = TraitTable(traits.species, traits.x, 2.0 * traits.y)
        report2 = fit_ouou(tree, scaled)
        assert report2.converged == report1.converged
        assert report2.b1 == pytest.approx(2.0 * report1.b1, rel=5e-3)
        assert report2.b0 == pytest.approx(2.0 * report1.b0, rel=5e-3)

    def test_rejects_bad_inputs(self, three_tip_tree):
        with pytest.raises(ValueError, match="constant"):
            fit_ouou(three_tip_tree, TraitTable(["A", "B", "C"], [1.0, 1.0, 1.0], [1, 2, 3]))
        with pytest.raises(ValueError, match="at least 3"):
            fit_ouou(parse_newick("(A:1,B:1);"), TraitTable(["A", "B"], [1.0, 2.0], [1, 2]))


class TestCompare:
    def test_single_hook_zero_delta(self):
        tree, traits, _ = _simulated_dataset(seed=8)
        rows = compare_models(tree, traits, [default_hooks()["ouou"]])
        assert len(rows) == 1
        assert rows[0].delta_aicc == 0.0
        assert rows[0].co_supported

    def test_identical_hooks_tie(self):
        tree, traits, _ = _simulated_dataset(seed=9)
        hooks = default_hooks()
        twin = ModelHook("twin", hooks["ouou"].slope_scale, hooks["ouou"].residual_builder)
        rows = compare_models(tree, traits, [hooks["ouou"], twin])
        assert rows[0].aicc == pytest.approx(rows[1].aicc, abs=1e-9)
        assert rows[0].co_supported and rows[1].co_supported

    def test_failing_model_does_not_abort_others(self):
        tree, traits, _ = _simulated_dataset(seed=10)

        def broken_builder(tr, pr):
            raise np.linalg.LinAlgError("synthetic failure")

        bad = ModelHook("bad", lambda u: 1.0, broken_builder)
        rows = compare_models(tree, traits, [bad, default_hooks()["ouou"]])
        assert rows[0].error is not None
        assert rows[1].error is None and math.isfinite(rows[1].aicc)

    def test_requires_hooks(self, three_tip_tree):
        with pytest.raises(ValueError):
            compare_models(three_tip_tree, TraitTable(["A", "B", "C"], [1, 2, 3], [1, 2, 3]), [])

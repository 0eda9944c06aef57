import numpy as np
import pytest

from epsbo.gp import build_posterior, predict
from epsbo.kernels import KernelSpec, kernel_eval
from epsbo.rff import (
    SamplePath,
    build_feature_map,
    draw_averaged_path,
    draw_path,
    draw_weights,
    weight_posterior,
)


def toy_problem(rng, n=8, noise=0.1, n_features=64):
    spec = KernelSpec("se", 1.0, (0.25,))
    x = rng.random((n, 1))
    y = np.sin(6.0 * x[:, 0]) + 0.1 * rng.standard_normal(n)
    fm = build_feature_map(spec, 1, n_features, rng)
    wp = weight_posterior(fm, x, y, noise)
    return spec, x, y, fm, wp


class TestFeatureMap:
    @pytest.mark.parametrize("family", ["se", "matern52"])
    def test_kernel_approximation_1d(self, family):
        spec = KernelSpec(family, 1.0, (1.0,))
        fm = build_feature_map(spec, 1, 10_000, np.random.default_rng(0))
        for r in (0.0, 1.0, 2.0, 3.0):
            approx = float(fm(np.array([0.0])) @ fm(np.array([r])))
            assert abs(approx - kernel_eval(spec, [0.0], [r])) < 0.05

    def test_cosine_bound(self, rng):
        spec = KernelSpec("matern32", 1.5, (0.5,))
        fm = build_feature_map(spec, 3, 200, rng)
        for _ in range(50):
            x = rng.uniform(-2, 2, 3)
            phi = fm(x)
            assert phi @ phi <= 2.0 * spec.prior_variance + 1e-12

    def test_kernel_recovery_over_random_pairs(self, rng):
        spec = KernelSpec("se", 1.0, (0.6,))
        fm = build_feature_map(spec, 2, 10_000, np.random.default_rng(1))
        worst = 0.0
        for _ in range(100):
            a, b = rng.random(2), rng.random(2)
            approx = float(fm(a) @ fm(b))
            worst = max(worst, abs(approx - kernel_eval(spec, a, b)))
        assert worst < 0.05

    def test_phases_in_range(self, rng):
        fm = build_feature_map(KernelSpec("se", 1.0, (1.0,)), 2, 500, rng)
        assert np.all(fm.b >= 0.0) and np.all(fm.b < 2.0 * np.pi)


class TestWeightPosterior:
    def test_zero_observations_zero_mean(self, rng):
        spec, x, y, fm, _ = toy_problem(rng)
        wp = weight_posterior(fm, x, np.zeros(len(x)), 0.1)
        assert np.all(wp.mu == 0.0)

    def test_matches_dense_inverse_oracle(self, rng):
        # explicit dense-inverse oracle on a tiny instance
        spec = KernelSpec("se", 1.0, (0.4,))
        fm = build_feature_map(spec, 1, 5, rng)
        x = rng.random((3, 1))
        y = rng.standard_normal(3)
        noise = 0.3
        wp = weight_posterior(fm, x, y, noise)
        phi = fm(x)
        mu_oracle = np.linalg.inv(phi.T @ phi + noise**2 * np.eye(5)) @ phi.T @ y
        assert np.max(np.abs(wp.mu - mu_oracle)) < 1e-9

    def test_prior_domination_limit(self, rng):
        spec, x, y, fm, _ = toy_problem(rng)
        wp = weight_posterior(fm, x, y, 1e6)
        assert np.linalg.norm(wp.mu) < 1e-3

    def test_rejects_nonpositive_noise(self, rng):
        spec, x, y, fm, _ = toy_problem(rng)
        with pytest.raises(ValueError):
            weight_posterior(fm, x, y, 0.0)


class TestDraws:
    def test_mean_and_covariance_of_draws(self, rng):
        spec = KernelSpec("se", 1.0, (0.4,))
        fm = build_feature_map(spec, 1, 5, rng)
        x = rng.random((3, 1))
        y = rng.standard_normal(3)
        noise = 0.5
        wp = weight_posterior(fm, x, y, noise)
        draws = draw_weights(wp, 10_000, np.random.default_rng(5))
        phi = fm(x)
        a = phi.T @ phi + noise**2 * np.eye(5)
        cov_exact = noise**2 * np.linalg.inv(a)
        se = np.sqrt(np.diag(cov_exact) / 10_000)
        assert np.all(np.abs(draws.mean(axis=0) - wp.mu) < 3.0 * se + 1e-12)
        cov_emp = np.cov(draws.T)
        rel = np.linalg.norm(cov_emp - cov_exact) / np.linalg.norm(cov_exact)
        assert rel < 0.10

    def test_fixed_seed_reproducible(self, rng):
        spec, x, y, fm, wp = toy_problem(rng)
        p1 = draw_path(fm, wp, np.random.default_rng(3))
        p2 = draw_path(fm, wp, np.random.default_rng(3))
        assert np.array_equal(p1.beta, p2.beta)

    def test_single_draw_matches_batched_draw(self, rng):
        spec, x, y, fm, wp = toy_problem(rng)
        single = draw_path(fm, wp, np.random.default_rng(11)).beta
        batch = draw_weights(wp, 1, np.random.default_rng(11))
        assert np.array_equal(single, batch[0])


class TestPathEvaluation:
    def test_zero_weights_zero_everywhere(self, rng):
        spec, x, y, fm, wp = toy_problem(rng)
        path = SamplePath(fm, np.zeros(fm.n_features))
        assert path.value(np.array([0.3])) == 0.0
        assert np.all(path.gradient(np.array([0.3])) == 0.0)

    def test_gradient_matches_central_differences(self, rng):
        spec = KernelSpec("se", 1.0, (0.3,))
        fm = build_feature_map(spec, 3, 400, rng)
        path = SamplePath(fm, rng.standard_normal(400))
        h = 1e-6
        for _ in range(10):
            p = rng.random(3)
            grad = path.gradient(p)
            for j in range(3):
                e = np.zeros(3)
                e[j] = h
                fd = (path.value(p + e) - path.value(p - e)) / (2.0 * h)
                assert abs(grad[j] - fd) / max(abs(fd), 1e-8) < 1e-5

    def test_value_matches_summation_loop(self, rng):
        spec, x, y, fm, wp = toy_problem(rng, n_features=128)
        path = draw_path(fm, wp, rng)
        p = rng.random(1)
        phi = fm(p)
        looped = 0.0
        for i in range(fm.n_features):
            looped += path.beta[i] * phi[i]
        assert abs(path.value(p) - looped) < 1e-12

    def test_averaged_path_is_pointwise_mean(self, rng):
        spec, x, y, fm, wp = toy_problem(rng)
        avg = draw_averaged_path(fm, wp, 7, np.random.default_rng(2))
        p = rng.random(1)
        values = [SamplePath(fm, beta).value(p) for beta in avg.weights]
        assert avg.value(p) == pytest.approx(np.mean(values), abs=1e-12)
        grads = [SamplePath(fm, beta).gradient(p) for beta in avg.weights]
        assert np.allclose(avg.gradient(p), np.mean(grads, axis=0), atol=1e-12)


class TestPosteriorConsistency:
    def test_paths_reproduce_gp_posterior(self):
        # 200 sampled paths agree with the exact posterior in mean and
        # variance at 20 test points; data spacing keeps the posterior
        # variance high enough for the variance check to bind
        rng = np.random.default_rng(3)
        spec = KernelSpec("se", 1.0, (0.2,))
        x = np.array([[0.0], [0.28], [0.56], [0.84], [1.0]])
        y = np.sin(7.0 * x[:, 0])
        noise = 1e-3
        gp = build_posterior(x, y, spec, noise)
        fm = build_feature_map(spec, 1, 4000, rng)
        wp = weight_posterior(fm, x, y, noise)
        draws = draw_weights(wp, 200, rng)
        probes = np.linspace(0.0, 1.0, 20)[:, None]
        phi = fm(probes)  # (20, n_features)
        path_values = phi @ draws.T  # (20, 200)
        mean_exact, var_exact = predict(gp, probes)
        assert np.max(np.abs(path_values.mean(axis=1) - mean_exact)) < 0.05
        var_emp = path_values.var(axis=1)
        mask = var_exact > 0.05
        assert mask.any()
        rel = np.abs(var_emp[mask] - var_exact[mask]) / var_exact[mask]
        assert np.max(rel) < 0.20

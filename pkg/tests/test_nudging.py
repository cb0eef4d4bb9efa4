"""Nudge maps: gradients, step-size bounds, closed affine form."""

import numpy as np
import pytest

from nudgefilter import (
    GaussianBelief,
    NotInvertible,
    NudgeConfig,
    ObservationModel,
    affine_nudge_gaussian,
    apply_nudge,
    gaussian_logpdf,
    grad_log_likelihood,
    invert_affine_nudge,
    lipschitz_constant,
)


def _loglik(x, y, C, Rm):
    return float(gaussian_logpdf(np.atleast_1d(y), GaussianBelief(C @ x, Rm)))


class TestGradLogLikelihood:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(0)
        C = rng.normal(size=(2, 3))
        a = rng.normal(size=(2, 2))
        Rm = a @ a.T + np.eye(2)
        x = rng.normal(size=3)
        y = rng.normal(size=2)
        grad = grad_log_likelihood(x, y, C, Rm)
        eps = 1e-6
        fd = np.empty(3)
        for i in range(3):
            e = np.zeros(3)
            e[i] = eps
            fd[i] = (_loglik(x + e, y, C, Rm) - _loglik(x - e, y, C, Rm)) / (2 * eps)
        assert np.max(np.abs(grad - fd)) / max(1.0, np.max(np.abs(fd))) < 1e-6

    def test_batch_rows(self):
        rng = np.random.default_rng(1)
        C = np.eye(2)
        Rm = 0.5 * np.eye(2)
        xs = rng.normal(size=(5, 2))
        y = rng.normal(size=2)
        batch = grad_log_likelihood(xs, y, C, Rm)
        for i, x in enumerate(xs):
            np.testing.assert_allclose(
                batch[i], grad_log_likelihood(x, y, C, Rm), rtol=1e-14
            )

    def test_zero_at_perfect_fit(self):
        C = np.eye(2)
        Rm = np.eye(2)
        x = np.array([0.3, -0.7])
        np.testing.assert_allclose(
            grad_log_likelihood(x, C @ x, C, Rm), np.zeros(2), atol=1e-15
        )


class TestLipschitzConstant:
    def test_identity_observation(self):
        assert lipschitz_constant(np.eye(3), np.eye(3)) == pytest.approx(1.0)

    def test_scaled_noise(self):
        assert lipschitz_constant(np.eye(2), 4.0 * np.eye(2)) == pytest.approx(0.25)

    def test_partial_observation(self):
        C = np.array([[1.0, 0.0, 0.0]])
        assert lipschitz_constant(C, np.eye(1)) == pytest.approx(1.0)

    def test_general_operator_matches_spectral_norm(self):
        rng = np.random.default_rng(2)
        C = rng.normal(size=(2, 4))
        a = rng.normal(size=(2, 2))
        Rm = a @ a.T + 0.5 * np.eye(2)
        expected = np.linalg.norm(C.T @ np.linalg.solve(Rm, C), 2)
        assert lipschitz_constant(C, Rm) == pytest.approx(expected, rel=1e-12)


class TestNudgeConfig:
    def test_identity_factory(self):
        cfg = NudgeConfig.identity()
        assert cfg.is_identity
        assert cfg.gamma_at(1) == 0.0
        assert cfg.gamma_at(999) == 0.0

    def test_rejects_step_beyond_stability_bound(self):
        with pytest.raises(ValueError):
            NudgeConfig(family="gradient_ascent", gamma=2.0, lipschitz=1.0)

    def test_accepts_step_inside_bound(self):
        cfg = NudgeConfig(family="gradient_ascent", gamma=1.999, lipschitz=1.0)
        assert cfg.gamma_at(1) == pytest.approx(1.999)

    def test_rejects_negative_gamma(self):
        with pytest.raises(ValueError):
            NudgeConfig(family="gradient_ascent", gamma=-0.1, lipschitz=1.0)

    def test_rejects_unknown_family(self):
        with pytest.raises(ValueError):
            NudgeConfig(family="teleport", gamma=0.1, lipschitz=1.0)

    def test_schedule_indexing_is_one_based(self):
        cfg = NudgeConfig(
            family="gradient_ascent", gamma=(0.1, 0.2, 0.3), lipschitz=1.0
        )
        assert cfg.gamma_at(1) == pytest.approx(0.1)
        assert cfg.gamma_at(3) == pytest.approx(0.3)
        with pytest.raises(ValueError):
            cfg.gamma_at(4)

    def test_gradient_ascent_requires_lipschitz(self):
        with pytest.raises(ValueError):
            NudgeConfig(family="gradient_ascent", gamma=0.1)


class TestApplyNudgeMonotonicity:
    def test_likelihood_never_decreases_inside_bound(self):
        """One ascent step with gamma < 2/L cannot lower the likelihood."""
        rng = np.random.default_rng(3)
        C = np.array([[1.0, 0.0], [0.0, 2.0]])
        Rm = np.diag([0.5, 1.5])
        L = lipschitz_constant(C, Rm)
        om = ObservationModel(C, Rm)
        violations = 0
        for _ in range(1000):
            x = rng.normal(scale=3.0, size=2)
            y = rng.normal(scale=3.0, size=2)
            gamma = rng.uniform(0.0, 2.0 / L * 0.999)
            cfg = NudgeConfig(family="gradient_ascent", gamma=gamma, lipschitz=L)
            moved = apply_nudge(x, cfg, grad_log_likelihood(x, y, C, Rm))
            before = float(om.loglik(y, x[None, :])[0])
            after = float(om.loglik(y, moved[None, :])[0])
            if after < before - 1e-12:
                violations += 1
        assert violations == 0

    def test_identity_config_moves_nothing(self):
        x = np.array([1.0, 2.0])
        out = apply_nudge(x, NudgeConfig.identity(), np.array([5.0, 5.0]))
        np.testing.assert_array_equal(out, x)


class TestAffineNudge:
    def test_matches_generic_gradient_step(self):
        rng = np.random.default_rng(4)
        C = rng.normal(size=(2, 2))
        a = rng.normal(size=(2, 2))
        Rm = a @ a.T + np.eye(2)
        y = rng.normal(size=2)
        gamma = 0.3 / lipschitz_constant(C, Rm)
        nudge = affine_nudge_gaussian(C, Rm, y, gamma)
        for _ in range(5):
            x = rng.normal(size=2)
            expected = x + gamma * grad_log_likelihood(x, y, C, Rm)
            np.testing.assert_allclose(nudge.apply(x), expected, atol=1e-12)

    def test_m_matrix_closed_form(self):
        C = np.eye(2)
        Rm = 0.5 * np.eye(2)
        y = np.array([1.0, -1.0])
        gamma = 0.2
        nudge = affine_nudge_gaussian(C, Rm, y, gamma)
        np.testing.assert_allclose(nudge.M, np.eye(2) - gamma * 2.0 * np.eye(2))
        np.testing.assert_allclose(nudge.b, gamma * 2.0 * y)

    def test_batch_apply(self):
        C = np.eye(2)
        Rm = np.eye(2)
        nudge = affine_nudge_gaussian(C, Rm, np.array([1.0, 1.0]), 0.5)
        xs = np.array([[0.0, 0.0], [2.0, 2.0]])
        out = nudge.apply(xs)
        assert out.shape == (2, 2)
        np.testing.assert_allclose(out[0], 0.5 * np.ones(2))

    def test_degenerate_step_warns(self):
        # gamma equal to the observation variance collapses the map onto a
        # point for identity C: M = (1 - gamma/sigma2) I = 0.
        C = np.eye(2)
        Rm = 0.5 * np.eye(2)
        with pytest.warns(RuntimeWarning):
            affine_nudge_gaussian(C, Rm, np.zeros(2), 0.5)

    def test_invert_round_trip(self):
        C = np.eye(3)
        Rm = 2.0 * np.eye(3)
        nudge = affine_nudge_gaussian(C, Rm, np.array([1.0, 2.0, 3.0]), 0.7)
        x = np.array([0.1, -0.2, 0.3])
        np.testing.assert_allclose(
            invert_affine_nudge(nudge, nudge.apply(x)), x, atol=1e-12
        )

    def test_invert_singular_map_raises(self):
        C = np.eye(2)
        Rm = np.eye(2)
        with pytest.warns(RuntimeWarning):
            nudge = affine_nudge_gaussian(C, Rm, np.zeros(2), 1.0)
        with pytest.raises(NotInvertible):
            invert_affine_nudge(nudge, np.zeros(2))

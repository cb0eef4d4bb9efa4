"""Exact filter: hand-checked steps, reductions, cross-checked forms."""

import numpy as np
import pytest

from nudgefilter import (
    GaussianBelief,
    KalmanState,
    Lgssm4Config,
    LinearGaussianTransition,
    NudgeConfig,
    ObservationModel,
    RngStream,
    SsmSpec,
    affine_nudge_gaussian,
    kf_predict,
    kf_update,
    lgssm4_spec,
    lipschitz_constant,
    nudged_kf_predict,
    run_kf,
    simulate_lgssm4,
)


def _scalar_spec():
    return SsmSpec(
        prior=GaussianBelief(np.zeros(1), np.eye(1)),
        transition=LinearGaussianTransition(np.eye(1), np.eye(1)),
        observation=ObservationModel(np.eye(1), np.eye(1)),
    )


def _initial_state(spec):
    return KalmanState(
        posterior=spec.prior, predictive=None, log_evidence=0.0, t=0
    )


class TestHandCheckedScalarStep:
    """Scalar random walk, unit noise everywhere, y1 = 1.

    Predictive x: N(0, 2); predictive y: N(0, 3); posterior mean 2/3,
    posterior variance 2/3; increment log N(1; 0, 3).
    """

    def test_plain_step(self):
        spec = _scalar_spec()
        state = kf_predict(_initial_state(spec), spec.transition.A, spec.transition.Q)
        assert state.predictive.mean[0] == pytest.approx(0.0)
        assert state.predictive.cov[0, 0] == pytest.approx(2.0)
        state = kf_update(state, spec.observation.C, spec.observation.Rm, np.array([1.0]))
        assert state.posterior.mean[0] == pytest.approx(2.0 / 3.0, abs=1e-14)
        assert state.posterior.cov[0, 0] == pytest.approx(2.0 / 3.0, abs=1e-14)
        assert state.log_evidence == pytest.approx(-1.6349113442053942, abs=1e-13)

    def test_nudged_step(self):
        """gamma = 1/2 sends the N(0, 2) predictive to N(1/2, 1/2).

        M = 1 - gamma = 1/2 and b = gamma * y = 1/2, so the nudged
        predictive is N(1/2, 1/2), the update gives mean 2/3 and variance
        1/3, and the increment is log N(1; 1/2, 3/2), larger than the
        plain step's log N(1; 0, 3).
        """
        spec = _scalar_spec()
        y = np.array([1.0])
        nudge = affine_nudge_gaussian(spec.observation.C, spec.observation.Rm, y, 0.5)
        state = nudged_kf_predict(
            _initial_state(spec), spec.transition.A, spec.transition.Q, nudge
        )
        assert state.predictive.mean[0] == pytest.approx(0.5, abs=1e-14)
        assert state.predictive.cov[0, 0] == pytest.approx(0.5, abs=1e-14)
        state = kf_update(state, spec.observation.C, spec.observation.Rm, y)
        assert state.posterior.mean[0] == pytest.approx(2.0 / 3.0, abs=1e-14)
        assert state.posterior.cov[0, 0] == pytest.approx(1.0 / 3.0, abs=1e-14)
        assert state.log_evidence == pytest.approx(-1.2050044205920880, abs=1e-13)
        assert state.log_evidence > -1.6349113442053942

    def test_run_kf_composes_the_steps(self):
        spec = _scalar_spec()
        obs = np.array([[1.0]])
        plain = run_kf(spec, obs)
        assert plain.total_loglik == pytest.approx(-1.6349113442053942, abs=1e-13)
        nudge = NudgeConfig(family="gradient_ascent", gamma=0.5, lipschitz=1.0)
        nudged = run_kf(spec, obs, nudge=nudge)
        assert nudged.total_loglik == pytest.approx(-1.2050044205920880, abs=1e-13)
        assert nudged.estimates[0, 0] == pytest.approx(2.0 / 3.0, abs=1e-14)


class TestReductions:
    def test_zero_gamma_reduces_to_plain_filter(self):
        cfg = Lgssm4Config()
        spec = lgssm4_spec(cfg, misspecified=True)
        truth, obs = simulate_lgssm4(cfg, RngStream(3, 0).generator())
        lip = lipschitz_constant(spec.observation.C, spec.observation.Rm)
        nudge = NudgeConfig(family="gradient_ascent", gamma=0.0, lipschitz=lip)
        plain = run_kf(spec, obs)
        zeroed = run_kf(spec, obs, nudge=nudge)
        assert abs(zeroed.total_loglik - plain.total_loglik) < 1e-12
        np.testing.assert_allclose(zeroed.estimates, plain.estimates, atol=1e-12)

    def test_identity_config_is_default(self):
        spec = _scalar_spec()
        obs = np.array([[0.3], [0.7]])
        np.testing.assert_allclose(
            run_kf(spec, obs, nudge=NudgeConfig.identity()).inc_loglik,
            run_kf(spec, obs).inc_loglik,
            atol=0,
        )

    def test_empty_record_yields_empty_trace(self):
        spec = _scalar_spec()
        trace = run_kf(spec, np.empty((0, 1)))
        assert len(trace) == 0
        assert trace.total_loglik == 0.0


class TestAgainstJosephForm:
    """Re-derive the update with the numerically symmetric covariance form."""

    def test_update_matches_joseph_form(self):
        rng = np.random.default_rng(5)
        d = 3
        a = rng.normal(size=(d, d))
        P = a @ a.T + np.eye(d)
        mu = rng.normal(size=d)
        C = rng.normal(size=(2, d))
        b = rng.normal(size=(2, 2))
        Rm = b @ b.T + np.eye(2)
        y = rng.normal(size=2)

        state = KalmanState(
            posterior=None,
            predictive=GaussianBelief(mu, P),
            log_evidence=0.0,
            t=0,
        )
        out = kf_update(state, C, Rm, y)

        S = C @ P @ C.T + Rm
        K = P @ C.T @ np.linalg.inv(S)
        mean = mu + K @ (y - C @ mu)
        ikc = np.eye(d) - K @ C
        cov = ikc @ P @ ikc.T + K @ Rm @ K.T
        np.testing.assert_allclose(out.posterior.mean, mean, atol=1e-10)
        np.testing.assert_allclose(out.posterior.cov, cov, atol=1e-10)

    def test_nudged_predict_matches_moment_identities(self):
        """Pushing N(m, P) through x -> Mx + b gives N(Mm + b, M P M^T)."""
        rng = np.random.default_rng(6)
        cfg = Lgssm4Config()
        A, B, Q, C, R = cfg.matrices()
        y = rng.normal(size=4)
        nudge = affine_nudge_gaussian(C, R, y, 0.05)
        prior = GaussianBelief(rng.normal(size=4), np.eye(4))
        state = KalmanState(posterior=prior, predictive=None, log_evidence=0.0, t=0)
        out = nudged_kf_predict(state, A, Q, nudge)
        mean_plain = A @ prior.mean
        cov_plain = A @ prior.cov @ A.T + Q
        np.testing.assert_allclose(
            out.predictive.mean, nudge.M @ mean_plain + nudge.b, atol=1e-12
        )
        np.testing.assert_allclose(
            out.predictive.cov, nudge.M @ cov_plain @ nudge.M.T, atol=1e-12
        )


class TestEvidenceAccounting:
    def test_total_is_sum_of_increments(self):
        cfg = Lgssm4Config(T=20)
        spec = lgssm4_spec(cfg, misspecified=False)
        _, obs = simulate_lgssm4(cfg, RngStream(9, 0).generator())
        trace = run_kf(spec, obs)
        assert trace.total_loglik == pytest.approx(float(np.sum(trace.inc_loglik)))

    def test_requires_linear_transition(self):
        from nudgefilter import Lorenz63Config, lorenz_spec

        spec = lorenz_spec(Lorenz63Config(T=3))
        with pytest.raises(TypeError):
            run_kf(spec, np.zeros((3, 1)))

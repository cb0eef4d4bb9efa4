"""Exact filtering for (controlled) linear-Gaussian models, plain and nudged."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .core import (
    CholeskyFailure,
    FilterTrace,
    GaussianBelief,
    LinearGaussianTransition,
    ControlledLinearGaussianTransition,
    SsmSpec,
    gaussian_logpdf,
)
from .nudging import AffineNudge, NudgeConfig, affine_nudge_gaussian


@dataclass(frozen=True)
class KalmanState:
    """Filter state after t assimilated observations.

    posterior holds (mu_t, P_t), predictive holds (mu~_t, P~_t) once a
    predict call has run, and log_evidence accumulates the incremental
    log densities of the observations.
    """

    posterior: GaussianBelief
    predictive: Optional[GaussianBelief] = None
    log_evidence: float = 0.0
    t: int = 0


def _predict_moments(state: KalmanState, A, Q, offset):
    mean = A @ state.posterior.mean
    cov = A @ state.posterior.cov @ A.T + Q
    if offset is not None:
        mean = mean + offset
    return mean, cov


def kf_predict(state: KalmanState, A, Q, offset=None) -> KalmanState:
    """Predictive moments mu~ = A mu (+ offset), P~ = A P A^T + Q."""
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    mean, cov = _predict_moments(state, A, Q, offset)
    return KalmanState(
        posterior=state.posterior,
        predictive=GaussianBelief(mean, cov),
        log_evidence=state.log_evidence,
        t=state.t,
    )


def nudged_kf_predict(state: KalmanState, A, Q, n: AffineNudge, offset=None) -> KalmanState:
    """Predictive moments of the nudged kernel: mu~ = M(A mu) + b, P~ = M(APA^T+Q)M^T.

    The single symmetric sandwich M (A P A^T + Q) M^T keeps the covariance
    numerically symmetric.
    """
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    mean, cov = _predict_moments(state, A, Q, offset)
    mean = n.M @ mean + n.b
    cov = n.M @ cov @ n.M.T
    return KalmanState(
        posterior=state.posterior,
        predictive=GaussianBelief(mean, cov),
        log_evidence=state.log_evidence,
        t=state.t,
    )


def kf_update(state: KalmanState, C, Rm, y) -> KalmanState:
    """Assimilate y against the current predictive belief.

    Innovation covariance S = C P~ C^T + Rm is solved via Cholesky only.
    The evidence increment is log N(y; C mu~, S), the predictive density
    of the observation.
    """
    if state.predictive is None:
        raise ValueError("kf_update requires a predictive belief; call a predict first")
    C = np.asarray(C, dtype=float)
    Rm = np.asarray(Rm, dtype=float)
    y = np.asarray(y, dtype=float)
    mean, cov = state.predictive.mean, state.predictive.cov

    CP = C @ cov
    S = CP @ C.T + Rm
    S = 0.5 * (S + S.T)
    try:
        S_chol = cho_factor(S, lower=True)
    except np.linalg.LinAlgError as err:
        raise CholeskyFailure("innovation covariance is not positive definite") from err

    innovation = y - C @ mean
    gain_t = cho_solve(S_chol, CP)  # S^{-1} C P~, transpose of the Kalman gain
    post_mean = mean + gain_t.T @ innovation
    post_cov = cov - CP.T @ gain_t
    increment = gaussian_logpdf(y, GaussianBelief(C @ mean, S))
    return KalmanState(
        posterior=GaussianBelief(post_mean, post_cov),
        predictive=state.predictive,
        log_evidence=state.log_evidence + increment,
        t=state.t + 1,
    )


def run_kf(spec: SsmSpec, observations, nudge: Optional[NudgeConfig] = None) -> FilterTrace:
    """Filter a full observation record, returning estimates and evidence.

    Parameters
    ----------
    spec : SsmSpec
        Model with a (controlled) linear-Gaussian transition.
    observations : array-like, shape (T, d_y)
        Observation record; T = 0 yields an empty trace.
    nudge : NudgeConfig, optional
        gradient_ascent applies the affine nudge built from each incoming
        observation before the update; identity (default) is the classical KF.

    Returns
    -------
    FilterTrace
        estimates are the posterior means mu_t.
    """
    if not isinstance(
        spec.transition, (LinearGaussianTransition, ControlledLinearGaussianTransition)
    ):
        raise TypeError("run_kf requires a linear-Gaussian transition kernel")
    if nudge is None:
        nudge = NudgeConfig.identity()

    obs = np.asarray(observations, dtype=float).reshape(-1, spec.obs_dim)
    T = obs.shape[0]
    F, c = spec.transition.affine()
    Q = spec.transition.Q
    C, Rm = spec.observation.C, spec.observation.Rm
    d_y = spec.obs_dim

    # Step-size-dependent pieces of the affine nudge are time-invariant
    # (only b depends on y_t), so build them once per distinct gamma.
    nudge_cache = {}

    def nudge_parts(gamma):
        if gamma not in nudge_cache:
            n = affine_nudge_gaussian(C, Rm, np.zeros(d_y), gamma)
            Wb = gamma * (C.T @ np.linalg.solve(Rm, np.eye(d_y)))
            nudge_cache[gamma] = (n.M, Wb)
        return nudge_cache[gamma]

    mean = spec.prior.mean.copy()
    cov = spec.prior.cov.copy()
    log2pi = math.log(2.0 * math.pi)
    estimates = np.empty((T, spec.state_dim))
    inc_loglik = np.empty(T)
    for t in range(1, T + 1):
        y = obs[t - 1]
        gamma = nudge.gamma_at(t)
        pred_mean = F @ mean + c
        pred_cov = F @ cov @ F.T + Q
        if gamma != 0.0:
            M, Wb = nudge_parts(gamma)
            pred_mean = M @ pred_mean + Wb @ y
            pred_cov = M @ pred_cov @ M.T

        CP = C @ pred_cov
        S = CP @ C.T + Rm
        S = 0.5 * (S + S.T)
        try:
            S_chol = cho_factor(S, lower=True)
        except np.linalg.LinAlgError as err:
            raise CholeskyFailure(
                "innovation covariance is not positive definite"
            ) from err
        innovation = y - C @ pred_mean
        gain_t = cho_solve(S_chol, CP)
        mean = pred_mean + gain_t.T @ innovation
        cov = pred_cov - CP.T @ gain_t
        cov = 0.5 * (cov + cov.T)

        z = solve_triangular(S_chol[0], innovation, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(S_chol[0])))
        inc_loglik[t - 1] = -0.5 * (d_y * log2pi + logdet + z @ z)
        estimates[t - 1] = mean

    return FilterTrace(
        estimates=estimates,
        inc_loglik=inc_loglik,
        total_loglik=float(np.sum(inc_loglik)),
    )

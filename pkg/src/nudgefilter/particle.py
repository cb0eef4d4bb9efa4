"""Bootstrap particle filter with optional nudged-kernel sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .core import (
    DegenerateEnsemble,
    DivergedState,
    FilterTrace,
    LinearGaussianTransition,
    ControlledLinearGaussianTransition,
    Lorenz63Transition,
    RngStream,
    SsmSpec,
    euler_maruyama,
    psd_factor,
)
from .nudging import NudgeConfig, grad_log_likelihood

# Substream tags: every random draw is keyed by (seed, stream_id, tag, step),
# so a step's propagation noise is assigned to particle slots independently
# of execution schedule.
_TAG_INIT = 0
_TAG_PROPAGATE = 1
_TAG_RESAMPLE = 2


@dataclass(frozen=True)
class ParticleEnsemble:
    """Equally sized particle set with log weights and its RNG stream.

    t counts assimilated observations; substreams for step t+1 are derived
    from (rng, t+1), never from generator state carried across steps.
    """

    particles: np.ndarray
    log_weights: np.ndarray
    rng: RngStream
    t: int = 0

    def __post_init__(self):
        particles = np.asarray(self.particles, dtype=float)
        log_weights = np.asarray(self.log_weights, dtype=float)
        if particles.ndim != 2:
            raise ValueError(f"particles must be (N, d), got shape {particles.shape}")
        if log_weights.shape != (particles.shape[0],):
            raise ValueError(
                f"log_weights shape {log_weights.shape} does not match "
                f"{particles.shape[0]} particles"
            )
        if not np.all(np.isfinite(particles)):
            raise ValueError("particles must be finite")
        object.__setattr__(self, "particles", particles)
        object.__setattr__(self, "log_weights", log_weights)

    @property
    def n(self) -> int:
        return self.particles.shape[0]


def init_ensemble(spec: SsmSpec, n: int, rng: RngStream) -> ParticleEnsemble:
    """Draw n particles from the prior with uniform weights."""
    if n < 1:
        raise ValueError("particle count must be at least 1")
    gen = rng.generator(_TAG_INIT)
    factor = psd_factor(spec.prior.cov)
    particles = spec.prior.mean + gen.standard_normal((n, spec.state_dim)) @ factor.T
    return ParticleEnsemble(
        particles=particles,
        log_weights=np.full(n, -math.log(n)),
        rng=rng,
        t=0,
    )


def _propagate(particles, transition, noise):
    """Push particles through the transition kernel using pre-drawn noise.

    noise rows are slot-keyed: row i belongs to the particle in slot i,
    which makes propagation schedule-independent and lets tests permute
    particles jointly with their noise.
    """
    if isinstance(transition, Lorenz63Transition):
        return euler_maruyama(particles, transition.theta, transition.h, noise)
    F, c = transition.affine()
    return particles @ F.T + c + noise


def _propagation_noise(transition, n, gen):
    if isinstance(transition, Lorenz63Transition):
        return gen.standard_normal((transition.n0, n, 3))
    chol_q = psd_factor(transition.Q)
    return gen.standard_normal((n, transition.dim)) @ chol_q.T


def pf_step(ens: ParticleEnsemble, spec: SsmSpec, nudge: NudgeConfig, y):
    """One bootstrap step: propagate, nudge, weight, resample.

    Particles are first drawn from the original kernel, then moved by the
    nudge map built from the incoming observation. The returned increment
    is log((1/N) sum_i g(x_i)) computed by log-sum-exp; the returned
    ensemble is resampled back to uniform weights.

    Raises
    ------
    DegenerateEnsemble
        If every particle weight vanishes, with the failing step index.
    DivergedState
        If propagation produces non-finite states.
    """
    t = ens.t + 1
    y = np.asarray(y, dtype=float)
    gen = ens.rng.generator(_TAG_PROPAGATE, t)
    noise = _propagation_noise(spec.transition, ens.n, gen)
    try:
        particles = _propagate(ens.particles, spec.transition, noise)
    except DivergedState as err:
        raise DivergedState(
            f"particle propagation diverged at filter step {t} "
            f"(Euler iteration {err.iteration})",
            iteration=err.iteration,
            step=t,
        ) from None
    if not np.all(np.isfinite(particles)):
        raise DivergedState(
            f"particle propagation diverged at filter step {t}", iteration=0, step=t
        )

    gamma = nudge.gamma_at(t)
    if gamma != 0.0:
        grad = grad_log_likelihood(particles, y, spec.observation.C, spec.observation.Rm)
        particles = particles + gamma * grad

    log_g = spec.observation.loglik(y, particles)
    log_norm = logsumexp(log_g)
    if not np.isfinite(log_norm):
        raise DegenerateEnsemble(
            f"all particle weights vanished at filter step {t}", step=t
        )
    increment = float(log_norm - math.log(ens.n))

    weighted = ParticleEnsemble(
        particles=particles,
        log_weights=log_g - log_norm,
        rng=ens.rng,
        t=t,
    )
    return resample_systematic(weighted), increment


def _normalized_weights(ens: ParticleEnsemble):
    w = np.exp(ens.log_weights - logsumexp(ens.log_weights))
    return w / np.sum(w)


def resample_systematic(ens: ParticleEnsemble, gen=None) -> ParticleEnsemble:
    """Systematic resampling: offspring counts stay within floor/ceil of N w_i."""
    if gen is None:
        gen = ens.rng.generator(_TAG_RESAMPLE, ens.t)
    w = _normalized_weights(ens)
    n = ens.n
    positions = (gen.uniform() + np.arange(n)) / n
    cumulative = np.cumsum(w)
    cumulative[-1] = 1.0
    indices = np.searchsorted(cumulative, positions, side="right")
    return ParticleEnsemble(
        particles=ens.particles[indices],
        log_weights=np.full(n, -math.log(n)),
        rng=ens.rng,
        t=ens.t,
    )


def resample_multinomial(ens: ParticleEnsemble, gen=None) -> ParticleEnsemble:
    """Multinomial resampling; unbiased offspring counts, higher variance."""
    if gen is None:
        gen = ens.rng.generator(_TAG_RESAMPLE, ens.t)
    w = _normalized_weights(ens)
    counts = gen.multinomial(ens.n, w)
    indices = np.repeat(np.arange(ens.n), counts)
    return ParticleEnsemble(
        particles=ens.particles[indices],
        log_weights=np.full(ens.n, -math.log(ens.n)),
        rng=ens.rng,
        t=ens.t,
    )


def run_pf(
    spec: SsmSpec,
    observations,
    nudge: Optional[NudgeConfig] = None,
    n_particles: int = 500,
    rng: Optional[RngStream] = None,
    truth=None,
) -> FilterTrace:
    """Run the bootstrap filter over a full observation record.

    Parameters
    ----------
    spec : SsmSpec
    observations : array-like, shape (T, d_y)
    nudge : NudgeConfig, optional
        Identity by default (plain bootstrap filter).
    n_particles : int
    rng : RngStream
        Source of all randomness; identical streams give bit-identical traces.
    truth : array-like, shape (T, d_x), optional
        True states at observation times; enables the nmse_series field.

    Returns
    -------
    FilterTrace
        estimates are the means of the post-resampling (equally weighted)
        ensembles.
    """
    if nudge is None:
        nudge = NudgeConfig.identity()
    if rng is None:
        rng = RngStream(0)
    obs = np.asarray(observations, dtype=float).reshape(-1, spec.obs_dim)
    T = obs.shape[0]

    ens = init_ensemble(spec, n_particles, rng)
    estimates = np.empty((T, spec.state_dim))
    inc_loglik = np.empty(T)
    for t in range(T):
        ens, inc_loglik[t] = pf_step(ens, spec, nudge, obs[t])
        estimates[t] = np.mean(ens.particles, axis=0)

    series = None
    if truth is not None:
        series = nmse(truth, estimates)
    return FilterTrace(
        estimates=estimates,
        inc_loglik=inc_loglik,
        total_loglik=float(np.sum(inc_loglik)),
        nmse_series=series,
    )


def nmse(truth, estimates):
    """Per-step squared error normalized by the mean trajectory energy.

    NMSE_t = ||x_t - xhat_t||^2 / ((1/T) sum_s ||x_s||^2), the denominator
    computed once over the full trajectory.
    """
    truth = np.asarray(truth, dtype=float)
    estimates = np.asarray(estimates, dtype=float)
    if truth.shape != estimates.shape:
        raise ValueError(
            f"truth shape {truth.shape} does not match estimates shape {estimates.shape}"
        )
    denom = np.mean(np.sum(truth * truth, axis=-1))
    if denom == 0.0:
        raise ValueError("all-zero truth trajectory has no energy to normalize by")
    return np.sum((truth - estimates) ** 2, axis=-1) / denom

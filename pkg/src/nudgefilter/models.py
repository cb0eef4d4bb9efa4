"""Benchmark systems: a 4-D controlled linear-Gaussian tracker and stochastic Lorenz 63."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from .core import (
    ControlledLinearGaussianTransition,
    DivergedState,
    GaussianBelief,
    LinearGaussianTransition,
    Lorenz63Transition,
    ObservationModel,
    RngStream,
    SsmSpec,
    euler_maruyama,
    lorenz_drift,
    psd_factor,
)

__all__ = [
    "Lgssm4Config",
    "Lorenz63Config",
    "lgssm4_spec",
    "simulate_lgssm4",
    "lorenz_spec",
    "lorenz_drift",
    "lorenz_transition",
    "simulate_lorenz",
    "dataset_to_csv",
]

# Control gain that steers the 4-D tracker toward its target state.
_L_GAIN = (
    (-0.0134, 0.0, -0.0381, 0.0),
    (0.0, -0.0134, 0.0, -0.0381),
)

LORENZ_THETA = (10.0, 28.0, 8.0 / 3.0)
LORENZ_B_MISMATCH = 11.0 / 5.0


@dataclass(frozen=True)
class Lgssm4Config:
    """4-D position/velocity tracker regulated toward x_star.

    sigma_obs scales the observation covariance (R = sigma_obs * I4);
    q_scale scales the process noise covariance, kept overridable for
    noise-free diagnostics. mu0/p0 initialize both the data generator
    and the filters.
    """

    kappa: float = 0.04
    x_star: Tuple[float, ...] = (140.0, 140.0, 0.0, 0.0)
    L: Tuple[Tuple[float, ...], ...] = _L_GAIN
    sigma_obs: float = 0.1
    T: int = 100
    seed: int = 0
    mu0: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    p0_scale: float = 1.0
    q_scale: float = 1.0

    def matrices(self):
        """Assemble (A, B, Q, C, R) from kappa and the noise scales."""
        k = self.kappa
        eye2 = np.eye(2)
        A = np.block([[eye2, k * eye2], [np.zeros((2, 2)), eye2]])
        B = np.vstack([np.zeros((2, 2)), eye2])
        Q = self.q_scale * np.block(
            [
                [(k**3 / 3.0) * eye2, (k**2 / 2.0) * eye2],
                [(k**2 / 2.0) * eye2, k * eye2],
            ]
        )
        C = np.eye(4)
        R = self.sigma_obs * np.eye(4)
        return A, B, Q, C, R

    def prior(self) -> GaussianBelief:
        return GaussianBelief(np.asarray(self.mu0, dtype=float), self.p0_scale * np.eye(4))


def lgssm4_spec(cfg: Lgssm4Config, misspecified: bool) -> SsmSpec:
    """Model spec for the tracker.

    misspecified=False keeps the control term B L (x - x_star) in the
    transition mean; misspecified=True drops it, leaving N(Ax, Q). The
    closed-loop matrix of the controlled kernel must be a stable regulator.
    """
    A, B, Q, C, R = cfg.matrices()
    if misspecified:
        transition = LinearGaussianTransition(A, Q)
    else:
        L = np.asarray(cfg.L, dtype=float)
        x_star = np.asarray(cfg.x_star, dtype=float)
        transition = ControlledLinearGaussianTransition(A, B, L, x_star, Q)
        F, _ = transition.affine()
        radius = np.max(np.abs(np.linalg.eigvals(F)))
        if radius >= 1.0:
            raise ValueError(f"closed-loop spectral radius {radius:.6f} is not stable")
    return SsmSpec(
        prior=cfg.prior(),
        transition=transition,
        observation=ObservationModel(C, R),
    )


def simulate_lgssm4(cfg: Lgssm4Config, rng):
    """Generate a trajectory and observations under the controlled kernel.

    Returns
    -------
    truth : ndarray, shape (T+1, 4)
        States including the initial draw x0 ~ N(mu0, p0_scale I).
    observations : ndarray, shape (T, 4)
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    A, B, Q, C, R = cfg.matrices()
    L = np.asarray(cfg.L, dtype=float)
    x_star = np.asarray(cfg.x_star, dtype=float)
    BL = B @ L

    q_factor = psd_factor(Q)
    r_factor = psd_factor(R)
    p0_factor = psd_factor(cfg.p0_scale * np.eye(4))

    truth = np.empty((cfg.T + 1, 4))
    observations = np.empty((cfg.T, 4))
    truth[0] = np.asarray(cfg.mu0, dtype=float) + p0_factor @ gen.standard_normal(4)
    for t in range(1, cfg.T + 1):
        x = truth[t - 1]
        truth[t] = A @ x + BL @ (x - x_star) + q_factor @ gen.standard_normal(4)
        observations[t - 1] = C @ truth[t] + r_factor @ gen.standard_normal(4)
    return truth, observations


@dataclass(frozen=True)
class Lorenz63Config:
    """Stochastic Lorenz 63, Euler-Maruyama discretized, partially observed.

    theta = (S, R, B); the filter kernel performs n0 Euler iterations of
    step h between observations. obs_dims selects observed coordinates
    (1-based): (1,) or (1, 2). The prior is N(prior_mean, prior_var I).
    """

    theta: Tuple[float, float, float] = LORENZ_THETA
    h: float = 1e-3
    n0: int = 40
    T: int = 500
    sigma2: float = 1.0
    obs_dims: Tuple[int, ...] = (1,)
    prior_mean: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    prior_var: float = 20.0

    def __post_init__(self):
        if tuple(self.obs_dims) not in ((1,), (1, 2)):
            raise ValueError("obs_dims must be (1,) or (1, 2)")
        if not (self.h > 0) or self.n0 < 1:
            raise ValueError("h must be positive and n0 at least 1")
        if not (self.sigma2 >= 0):
            raise ValueError("sigma2 must be non-negative")
        object.__setattr__(self, "theta", tuple(float(v) for v in self.theta))
        object.__setattr__(self, "obs_dims", tuple(int(d) for d in self.obs_dims))

    def with_b_mismatch(self, eps: float = LORENZ_B_MISMATCH) -> "Lorenz63Config":
        """Perturb only the third parameter: theta~ = (S, R, B + eps)."""
        s, r, b = self.theta
        return replace(self, theta=(s, r, b + eps))

    def with_doubled_theta(self) -> "Lorenz63Config":
        """Double all three parameters: theta^ = 2 theta."""
        return replace(self, theta=tuple(2.0 * v for v in self.theta))

    def observation_matrix(self):
        H = np.zeros((len(self.obs_dims), 3))
        for row, dim in enumerate(self.obs_dims):
            H[row, dim - 1] = 1.0
        return H

    def prior(self) -> GaussianBelief:
        return GaussianBelief(
            np.asarray(self.prior_mean, dtype=float), self.prior_var * np.eye(3)
        )


def lorenz_spec(cfg: Lorenz63Config) -> SsmSpec:
    """Model spec whose kernel integrates cfg.theta between observations."""
    H = cfg.observation_matrix()
    Rm = cfg.sigma2 * np.eye(H.shape[0])
    return SsmSpec(
        prior=cfg.prior(),
        transition=Lorenz63Transition(np.asarray(cfg.theta), cfg.h, cfg.n0),
        observation=ObservationModel(H, Rm),
    )


def lorenz_transition(x, cfg: Lorenz63Config, rng):
    """Propagate a state through one observation interval (n0 Euler iterations)."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    x = np.asarray(x, dtype=float)
    noise_shape = (cfg.n0,) + x.shape
    return euler_maruyama(x, cfg.theta, cfg.h, gen.standard_normal(noise_shape))


def simulate_lorenz(cfg: Lorenz63Config, rng):
    """Generate truth at observation times and noisy partial observations.

    Returns
    -------
    truth : ndarray, shape (T, 3)
        States at times t * n0, t = 1..T.
    observations : ndarray, shape (T, d_y)
        y_t = H x_t + v_t with v_t ~ N(0, sigma2 I).

    Raises
    ------
    DivergedState
        If the trajectory leaves the finite range.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    H = cfg.observation_matrix()
    d_y = H.shape[0]
    prior = cfg.prior()
    x = prior.mean + psd_factor(prior.cov) @ gen.standard_normal(3)

    truth = np.empty((cfg.T, 3))
    observations = np.empty((cfg.T, d_y))
    sigma = np.sqrt(cfg.sigma2)
    for t in range(cfg.T):
        noise = gen.standard_normal((cfg.n0, 3))
        try:
            x = euler_maruyama(x, cfg.theta, cfg.h, noise)
        except DivergedState as err:
            raise DivergedState(
                f"simulated trajectory diverged at observation step {t + 1} "
                f"(Euler iteration {err.iteration})",
                iteration=err.iteration,
                step=t + 1,
            ) from None
        truth[t] = x
        observations[t] = H @ x + sigma * gen.standard_normal(d_y)
    return truth, observations


def dataset_to_csv(path, truth, observations):
    """Write aligned truth/observation rows as CSV columns t, x1..xd, y1..yd."""
    truth = np.asarray(truth, dtype=float)
    observations = np.asarray(observations, dtype=float)
    if truth.shape[0] != observations.shape[0]:
        raise ValueError("truth and observations must have the same number of rows")
    d_x, d_y = truth.shape[1], observations.shape[1]
    header = (
        ["t"]
        + [f"x{i}" for i in range(1, d_x + 1)]
        + [f"y{i}" for i in range(1, d_y + 1)]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(truth.shape[0]):
            row = [t + 1] + [f"{v:.17g}" for v in truth[t]] + [f"{v:.17g}" for v in observations[t]]
            writer.writerow(row)

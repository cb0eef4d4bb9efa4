"""Shared state-space model primitives: Gaussian beliefs, model specs, RNG streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.linalg import solve_triangular

# Relative PSD tolerance: smallest eigenvalue may not fall below
# -PSD_RTOL * largest eigenvalue.
PSD_RTOL = 1e-10


class CholeskyFailure(ValueError):
    """A covariance matrix violated its positive-(semi)definiteness contract."""


class DivergedState(RuntimeError):
    """A simulated or propagated state left the finite range.

    Attributes
    ----------
    iteration : int
        Euler iteration (0-based) at which the first non-finite value appeared.
    step : int or None
        Observation step, when known by the caller that raised.
    """

    def __init__(self, message, iteration, step=None):
        super().__init__(message)
        self.iteration = iteration
        self.step = step


class DegenerateEnsemble(RuntimeError):
    """Every particle weight vanished; the filter cannot continue.

    Attributes
    ----------
    step : int
        Observation step (1-based) at which degeneracy occurred.
    """

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


def ensure_finite(arr, name):
    """Raise ValueError if `arr` contains NaN or infinities."""
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr!r}")


def _as_float_array(value, name):
    arr = np.asarray(value, dtype=float)
    ensure_finite(arr, name)
    return arr


@dataclass(frozen=True)
class RngStream:
    """Deterministic random stream addressed by (seed, stream_id).

    Identical (seed, stream_id) always reproduce identical draw sequences.
    Substreams for independent consumers (steps, particles, replications)
    are derived by extending the key, never by sharing generator state.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative integers")

    def generator(self, *keys: int) -> np.random.Generator:
        """Fresh generator for this stream, optionally keyed by extra integers."""
        return np.random.default_rng([self.seed, self.stream_id, *keys])


@dataclass(frozen=True)
class GaussianBelief:
    """Gaussian distribution with a symmetrized, PSD-checked covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _as_float_array(self.mean, "mean")
        cov = _as_float_array(self.cov, "cov")
        if mean.ndim != 1:
            raise ValueError(f"mean must be a vector, got shape {mean.shape}")
        if cov.shape != (mean.size, mean.size):
            raise ValueError(
                f"cov shape {cov.shape} does not match mean dimension {mean.size}"
            )
        cov = 0.5 * (cov + cov.T)
        evals = np.linalg.eigvalsh(cov)
        if evals[0] < -PSD_RTOL * max(evals[-1], 0.0):
            raise CholeskyFailure(
                f"covariance is not positive semi-definite: min eigenvalue {evals[0]:.3e}"
            )
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def _chol_lower(mat, what):
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as err:
        raise CholeskyFailure(f"{what} is not positive definite") from err


def gaussian_logpdf(x, belief: GaussianBelief):
    """Log density of `x` under `belief`, normalizing constant included.

    Parameters
    ----------
    x : array, shape (d,) or (..., d)
        Point(s) at which to evaluate. Leading axes are broadcast as a batch.
    belief : GaussianBelief
        Must have positive definite covariance.

    Returns
    -------
    float or ndarray
        Scalar for a single point, array of logpdfs for a batch.
    """
    x = np.asarray(x, dtype=float)
    d = belief.dim
    if x.shape[-1] != d:
        raise ValueError(f"x has trailing dimension {x.shape[-1]}, expected {d}")
    chol = _chol_lower(belief.cov, "covariance")
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    dev = np.atleast_2d(x - belief.mean)
    z = solve_triangular(chol, dev.T, lower=True)
    quad = np.sum(z * z, axis=0)
    out = -0.5 * (d * math.log(2.0 * math.pi) + logdet + quad)
    out = out.reshape(x.shape[:-1])
    return float(out) if x.ndim == 1 else out


def psd_factor(cov):
    """Matrix F with F @ F.T = cov, valid for any PSD matrix.

    Uses Cholesky when the matrix is positive definite and an eigenvalue
    square root otherwise, so singular covariances (including the zero
    matrix) are handled exactly.
    """
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        evals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
        if evals[0] < -PSD_RTOL * max(evals[-1], 0.0):
            raise CholeskyFailure(
                f"covariance is indefinite: min eigenvalue {evals[0]:.3e}"
            ) from None
        return vecs * np.sqrt(np.clip(evals, 0.0, None))


def sample_gaussian(belief: GaussianBelief, rng):
    """One draw from `belief`.

    `rng` may be an RngStream (the draw is then a pure function of the
    stream key) or a np.random.Generator (stateful, advances the stream).
    A zero covariance returns the mean exactly.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    factor = psd_factor(belief.cov)
    return belief.mean + factor @ gen.standard_normal(belief.dim)


# ---------------------------------------------------------------------------
# Transition kernels


@dataclass(frozen=True)
class LinearGaussianTransition:
    """Kernel x_t ~ N(A x_{t-1}, Q)."""

    A: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        A = _as_float_array(self.A, "A")
        Q = _as_float_array(self.Q, "Q")
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        if Q.shape != A.shape:
            raise ValueError(f"Q shape {Q.shape} does not match A shape {A.shape}")
        Q = 0.5 * (Q + Q.T)
        _chol_lower(Q, "Q")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Q", Q)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def affine(self):
        """Mean map as (F, c) with E[x_t | x_{t-1}] = F x_{t-1} + c."""
        return self.A, np.zeros(self.dim)


@dataclass(frozen=True)
class ControlledLinearGaussianTransition:
    """Kernel x_t ~ N(A x_{t-1} + B L (x_{t-1} - x_star), Q)."""

    A: np.ndarray
    B: np.ndarray
    L: np.ndarray
    x_star: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        A = _as_float_array(self.A, "A")
        B = _as_float_array(self.B, "B")
        L = _as_float_array(self.L, "L")
        x_star = _as_float_array(self.x_star, "x_star")
        Q = _as_float_array(self.Q, "Q")
        d = A.shape[0]
        if A.shape != (d, d):
            raise ValueError(f"A must be square, got shape {A.shape}")
        if B.shape[0] != d or L.shape[1] != d or B.shape[1] != L.shape[0]:
            raise ValueError(
                f"control shapes incompatible: A {A.shape}, B {B.shape}, L {L.shape}"
            )
        if x_star.shape != (d,):
            raise ValueError(f"x_star shape {x_star.shape}, expected ({d},)")
        if Q.shape != (d, d):
            raise ValueError(f"Q shape {Q.shape}, expected ({d}, {d})")
        Q = 0.5 * (Q + Q.T)
        _chol_lower(Q, "Q")
        for name, val in (("A", A), ("B", B), ("L", L), ("x_star", x_star), ("Q", Q)):
            object.__setattr__(self, name, val)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def affine(self):
        BL = self.B @ self.L
        return self.A + BL, -BL @ self.x_star


def lorenz_drift(x, theta):
    """Drift field of the three-dimensional chaotic convection system.

    f(x) = (S (x2 - x1), x1 (R - x3) - x2, x1 x2 - B x3) with theta = (S, R, B).
    `x` may be a single (3,) state or a batch with trailing dimension 3.
    """
    x = np.asarray(x, dtype=float)
    s, r, b = theta
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    return np.stack(
        [s * (x2 - x1), x1 * (r - x3) - x2, x1 * x2 - b * x3], axis=-1
    )


def euler_maruyama(x, theta, h, noise):
    """Iterate x <- x + h f(x) + sqrt(h) u_k for each noise row u_k.

    Parameters
    ----------
    x : array, shape (3,) or (N, 3)
        Starting state(s).
    theta : sequence of three floats
        Drift parameters (S, R, B).
    h : float
        Integration step.
    noise : array, shape (n_steps, 3) or (n_steps, N, 3)
        Pre-drawn standard normal increments, one leading row per iteration.

    Raises
    ------
    DivergedState
        If any state stops being finite; carries the iteration index.
    """
    x = np.asarray(x, dtype=float)
    sqrt_h = math.sqrt(h)
    for k in range(noise.shape[0]):
        x = x + h * lorenz_drift(x, theta) + sqrt_h * noise[k]
        if not np.all(np.isfinite(x)):
            raise DivergedState(
                f"state diverged at Euler iteration {k}", iteration=k
            )
    return x


@dataclass(frozen=True)
class Lorenz63Transition:
    """Kernel given by n0 Euler iterations of the stochastic convection SDE."""

    theta: np.ndarray
    h: float = 1e-3
    n0: int = 40

    def __post_init__(self):
        theta = _as_float_array(self.theta, "theta")
        if theta.shape != (3,):
            raise ValueError(f"theta must have three entries, got shape {theta.shape}")
        if not (self.h > 0):
            raise ValueError("h must be positive")
        if self.n0 < 1:
            raise ValueError("n0 must be at least 1")
        object.__setattr__(self, "theta", theta)

    @property
    def dim(self) -> int:
        return 3


Transition = Union[
    LinearGaussianTransition, ControlledLinearGaussianTransition, Lorenz63Transition
]


@dataclass(frozen=True)
class ObservationModel:
    """Observation y_t ~ N(C x_t, Rm)."""

    C: np.ndarray
    Rm: np.ndarray

    def __post_init__(self):
        C = _as_float_array(self.C, "C")
        Rm = _as_float_array(self.Rm, "Rm")
        if C.ndim != 2:
            raise ValueError(f"C must be a matrix, got shape {C.shape}")
        if Rm.shape != (C.shape[0], C.shape[0]):
            raise ValueError(
                f"Rm shape {Rm.shape} does not match observation dimension {C.shape[0]}"
            )
        Rm = 0.5 * (Rm + Rm.T)
        _chol_lower(Rm, "Rm")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "Rm", Rm)

    @property
    def obs_dim(self) -> int:
        return self.C.shape[0]

    @property
    def state_dim(self) -> int:
        return self.C.shape[1]

    def noise_belief(self) -> GaussianBelief:
        return GaussianBelief(np.zeros(self.obs_dim), self.Rm)

    def loglik(self, y, x):
        """log N(y; C x, Rm) for a single state or a batch of states."""
        x = np.asarray(x, dtype=float)
        residual = np.asarray(y, dtype=float) - x @ self.C.T
        return gaussian_logpdf(residual, self.noise_belief())


@dataclass(frozen=True)
class SsmSpec:
    """A complete state-space model: prior, transition kernel, observation model."""

    prior: GaussianBelief
    transition: Transition
    observation: ObservationModel

    def __post_init__(self):
        if self.transition.dim != self.prior.dim:
            raise ValueError(
                f"transition dimension {self.transition.dim} does not match "
                f"prior dimension {self.prior.dim}"
            )
        if self.observation.state_dim != self.prior.dim:
            raise ValueError(
                f"observation operator expects state dimension "
                f"{self.observation.state_dim}, prior has {self.prior.dim}"
            )

    @property
    def state_dim(self) -> int:
        return self.prior.dim

    @property
    def obs_dim(self) -> int:
        return self.observation.obs_dim


@dataclass
class FilterTrace:
    """Per-step output of a filtering run.

    estimates[t-1] is the state estimate after assimilating y_t,
    inc_loglik[t-1] the incremental log evidence of y_t, and total_loglik
    their sum. nmse_series holds the normalized squared errors when the
    true trajectory was supplied.
    """

    estimates: np.ndarray
    inc_loglik: np.ndarray
    total_loglik: float
    nmse_series: Optional[np.ndarray] = None

    def __post_init__(self):
        self.estimates = np.asarray(self.estimates, dtype=float)
        self.inc_loglik = np.asarray(self.inc_loglik, dtype=float)
        if self.estimates.shape[:1] != self.inc_loglik.shape:
            raise ValueError(
                f"estimates rows {self.estimates.shape[:1]} do not match "
                f"inc_loglik shape {self.inc_loglik.shape}"
            )

    def __len__(self) -> int:
        return self.inc_loglik.size

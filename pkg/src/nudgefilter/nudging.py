"""Likelihood-increasing nudge maps and their closed form for Gaussian observations."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .core import ensure_finite

GRADIENT_ASCENT = "gradient_ascent"
IDENTITY = "identity"

_FAMILIES = (GRADIENT_ASCENT, IDENTITY)


class NotInvertible(ValueError):
    """The affine nudge map has no inverse."""


@dataclass(frozen=True)
class NudgeConfig:
    """Which nudge family to apply and with what step size.

    family : "gradient_ascent" or "identity".
    gamma : step size, a single float or a per-step schedule.
    lipschitz : gradient Lipschitz constant L of the log likelihood,
        required for gradient_ascent; every step size must satisfy
        0 <= gamma < 2 / L, the open interval on which one ascent step
        cannot decrease the likelihood.
    """

    family: str = IDENTITY
    gamma: Union[float, Sequence[float]] = 0.0
    lipschitz: Optional[float] = None

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown nudge family {self.family!r}")
        gamma = self.gamma
        if np.ndim(gamma) == 0:
            gamma = float(gamma)
        else:
            gamma = tuple(float(g) for g in gamma)
            if not gamma:
                raise ValueError("gamma schedule must not be empty")
        object.__setattr__(self, "gamma", gamma)
        gammas = (gamma,) if isinstance(gamma, float) else gamma
        if any(g < 0 for g in gammas):
            raise ValueError("gamma must be non-negative")
        if self.family == GRADIENT_ASCENT:
            if self.lipschitz is None or not (self.lipschitz > 0):
                raise ValueError("gradient_ascent requires a positive lipschitz constant")
            bound = 2.0 / self.lipschitz
            if any(g >= bound for g in gammas):
                raise ValueError(
                    f"gamma must lie in [0, {bound:g}) for lipschitz={self.lipschitz:g}"
                )

    @classmethod
    def identity(cls) -> "NudgeConfig":
        return cls(family=IDENTITY, gamma=0.0)

    @property
    def is_identity(self) -> bool:
        if self.family == IDENTITY:
            return True
        gammas = (self.gamma,) if isinstance(self.gamma, float) else self.gamma
        return all(g == 0.0 for g in gammas)

    def gamma_at(self, t: int) -> float:
        """Step size for observation step t (1-based)."""
        if self.family == IDENTITY:
            return 0.0
        if isinstance(self.gamma, float):
            return self.gamma
        if not 1 <= t <= len(self.gamma):
            raise ValueError(
                f"step {t} outside gamma schedule of length {len(self.gamma)}"
            )
        return self.gamma[t - 1]


@dataclass(frozen=True)
class AffineNudge:
    """Nudge map x -> M x + b."""

    M: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float)
        b = np.asarray(self.b, dtype=float)
        ensure_finite(M, "M")
        ensure_finite(b, "b")
        if M.ndim != 2 or M.shape[0] != M.shape[1] or b.shape != (M.shape[0],):
            raise ValueError(f"incompatible shapes M {M.shape}, b {b.shape}")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "b", b)

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.M.T + self.b


def grad_log_likelihood(x, y, C, Rm):
    """Gradient of log N(y; C x, Rm) with respect to x: C^T Rm^{-1} (y - C x).

    `x` may be a single state or a batch with states along the leading axes.
    """
    x = np.asarray(x, dtype=float)
    C = np.asarray(C, dtype=float)
    residual = np.asarray(y, dtype=float) - x @ C.T
    weight = np.linalg.solve(np.asarray(Rm, dtype=float), C)
    return residual @ weight


def lipschitz_constant(C, Rm) -> float:
    """Spectral norm of C^T Rm^{-1} C, the Lipschitz constant of the gradient."""
    C = np.asarray(C, dtype=float)
    H = C.T @ np.linalg.solve(np.asarray(Rm, dtype=float), C)
    evals = np.linalg.eigvalsh(0.5 * (H + H.T))
    return float(evals[-1])


def apply_nudge(x, cfg: NudgeConfig, grad, t: int = 1):
    """One nudge step x + gamma * grad; returns x unchanged when the step is zero."""
    x = np.asarray(x, dtype=float)
    gamma = cfg.gamma_at(t)
    if gamma == 0.0:
        return x
    grad = np.asarray(grad, dtype=float)
    ensure_finite(grad, "grad")
    return x + gamma * grad


def affine_nudge_gaussian(C, Rm, y, gamma: float) -> AffineNudge:
    """Gradient-ascent nudge for a linear-Gaussian observation, as an affine map.

    x + gamma C^T Rm^{-1} (y - C x) = M x + b with M = I - gamma C^T Rm^{-1} C
    and b = gamma C^T Rm^{-1} y. A singular M (reached at the degenerate step
    size that collapses the kernel onto the likelihood maximiser) is allowed
    but reported with a RuntimeWarning.
    """
    C = np.asarray(C, dtype=float)
    Rm = np.asarray(Rm, dtype=float)
    y = np.asarray(y, dtype=float)
    H = C.T @ np.linalg.solve(Rm, C)
    M = np.eye(C.shape[1]) - gamma * 0.5 * (H + H.T)
    b = gamma * (C.T @ np.linalg.solve(Rm, y))
    evals = np.abs(np.linalg.eigvalsh(M))
    if evals[0] <= 1e-12 * max(evals[-1], 1.0):
        warnings.warn(
            "nudge map is singular: the nudged kernel is degenerate along "
            "some state directions (likelihood-maximiser regime)",
            RuntimeWarning,
            stacklevel=2,
        )
    return AffineNudge(M, b)


def invert_affine_nudge(nudge: AffineNudge, x):
    """Solve M z + b = x for z; raises NotInvertible when M is singular."""
    x = np.asarray(x, dtype=float)
    with np.errstate(all="ignore"):
        try:
            z = np.linalg.solve(nudge.M, (x - nudge.b).T).T
        except np.linalg.LinAlgError as err:
            raise NotInvertible("nudge map is singular") from err
    if not np.all(np.isfinite(z)):
        raise NotInvertible("nudge map is numerically singular")
    return z

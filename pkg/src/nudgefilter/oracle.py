"""Brute-force verification oracles on tiny finite-state hidden Markov models.

Everything here is exact: evidences come from the forward algorithm, path
posteriors from full enumeration, and the Gaussian total-variation check from
dense quadrature. None of it touches the kalman or particle modules, so these
routines can vouch for them independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

MAX_STATES = 6
MAX_PATHS = 1_000_000
_ATOL = 1e-12

VARIANTS = ("base", "nudged", "alternative")


class OracleViolation(AssertionError):
    """An exact check that should hold by theory failed on a concrete instance."""


def _check_stochastic(mat, what):
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{what} must be a square matrix, got shape {mat.shape}")
    if np.any(mat < 0.0):
        raise ValueError(f"{what} has negative entries")
    rows = mat.sum(axis=1)
    if np.max(np.abs(rows - 1.0)) > _ATOL:
        raise ValueError(f"{what} rows must sum to 1 within {_ATOL}")
    return mat


@dataclass(frozen=True)
class FiniteHmm:
    """A fully enumerable hidden Markov model with per-step nudge maps.

    prior: initial distribution over the n states.
    kernels: T row-stochastic transition matrices, one per step.
    likelihood_vecs: T positive vectors, g_t evaluated at each state.
    nudge_maps: T integer state-to-state maps, each likelihood-non-decreasing
        (g_t at the image state is never below g_t at the source state).
    """

    prior: np.ndarray
    kernels: np.ndarray
    likelihood_vecs: np.ndarray
    nudge_maps: np.ndarray

    def __post_init__(self):
        prior = np.asarray(self.prior, dtype=float)
        kernels = np.asarray(self.kernels, dtype=float)
        gs = np.asarray(self.likelihood_vecs, dtype=float)
        maps = np.asarray(self.nudge_maps, dtype=np.int64)
        if prior.ndim != 1:
            raise ValueError("prior must be a vector")
        n = prior.size
        if n > MAX_STATES:
            raise ValueError(f"at most {MAX_STATES} states supported, got {n}")
        if np.any(prior < 0.0) or abs(prior.sum() - 1.0) > _ATOL:
            raise ValueError("prior must be a probability vector")
        if kernels.ndim != 3 or kernels.shape[1:] != (n, n):
            raise ValueError("kernels must have shape (T, n, n)")
        horizon = kernels.shape[0]
        for t in range(horizon):
            _check_stochastic(kernels[t], f"kernel {t + 1}")
        if gs.shape != (horizon, n):
            raise ValueError("likelihood_vecs must have shape (T, n)")
        if np.any(gs <= 0.0):
            raise ValueError("likelihood values must be strictly positive")
        if maps.shape != (horizon, n):
            raise ValueError("nudge_maps must have shape (T, n)")
        if np.any(maps < 0) or np.any(maps >= n):
            raise ValueError("nudge map targets out of range")
        moved = np.take_along_axis(gs, maps, axis=1)
        if np.any(moved - gs < -_ATOL):
            raise ValueError("nudge maps must be likelihood-non-decreasing")
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "kernels", kernels)
        object.__setattr__(self, "likelihood_vecs", gs)
        object.__setattr__(self, "nudge_maps", maps)
        for arr in (prior, kernels, gs, maps):
            arr.setflags(write=False)

    @property
    def n_states(self) -> int:
        return self.prior.size

    @property
    def horizon(self) -> int:
        return self.kernels.shape[0]

    def with_maps(self, nudge_maps) -> "FiniteHmm":
        return replace(self, nudge_maps=np.asarray(nudge_maps, dtype=np.int64))

    def with_identity_maps(self) -> "FiniteHmm":
        ident = np.tile(np.arange(self.n_states), (self.horizon, 1))
        return self.with_maps(ident)

    def to_jsonable(self) -> dict:
        return {
            "prior": self.prior.tolist(),
            "kernels": self.kernels.tolist(),
            "likelihood_vecs": self.likelihood_vecs.tolist(),
            "nudge_maps": self.nudge_maps.tolist(),
        }


def pushforward_matrix(alpha: np.ndarray, n: int) -> np.ndarray:
    """0/1 matrix P with P[k, alpha[k]] = 1; right-multiplying a kernel by P
    moves each column's mass to the map image."""
    proj = np.zeros((n, n))
    proj[np.arange(n), np.asarray(alpha, dtype=np.int64)] = 1.0
    return proj


def _step_matrices(hmm: FiniteHmm, variant: str):
    """Effective (kernel, likelihood) pairs for one of the three model variants.

    base: the model as given.
    nudged: each kernel row pushed through that step's map, likelihood intact.
    alternative: the map composed into the next kernel's argument instead,
        with the likelihood evaluated at the mapped state.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    n = hmm.n_states
    out = []
    for t in range(hmm.horizon):
        kern = hmm.kernels[t]
        g = hmm.likelihood_vecs[t]
        if variant == "nudged":
            kern = kern @ pushforward_matrix(hmm.nudge_maps[t], n)
        elif variant == "alternative":
            if t > 0:
                kern = kern[hmm.nudge_maps[t - 1], :]
            g = g[hmm.nudge_maps[t]]
        out.append((kern, g))
    return out


def exact_evidence(hmm: FiniteHmm, variant: str = "base") -> float:
    """Marginal likelihood of the observation sequence baked into the g vectors,
    computed by the forward algorithm (exact up to float rounding)."""
    vec = hmm.prior.copy()
    for kern, g in _step_matrices(hmm, variant):
        vec = (vec @ kern) * g
    return float(vec.sum())


def _unnormalized_path_table(hmm: FiniteHmm, variant: str) -> np.ndarray:
    """Joint weight of every state path x_{1:T} (initial state marginalized
    out); the table sums to the evidence."""
    n, horizon = hmm.n_states, hmm.horizon
    if n**horizon > MAX_PATHS:
        raise ValueError(
            f"enumeration bound exceeded: {n}^{horizon} > {MAX_PATHS} paths"
        )
    steps = _step_matrices(hmm, variant)
    kern, g = steps[0]
    joint = (hmm.prior @ kern) * g
    for kern, g in steps[1:]:
        joint = joint[..., None] * (kern * g[None, :])
    return joint


def exact_path_measure(hmm: FiniteHmm, variant: str = "base") -> np.ndarray:
    """Posterior probability of every state path x_{1:T}, the initial state
    marginalized out.  Returns an array of shape (n,) * T summing to 1."""
    joint = _unnormalized_path_table(hmm, variant)
    total = joint.sum()
    if not total > 0.0:
        raise ValueError("evidence vanished; path posterior undefined")
    joint = joint / total
    if abs(joint.sum() - 1.0) > 1e-12:
        raise OracleViolation("normalized path table does not sum to 1")
    return joint


def path_expectation(path_table: np.ndarray, phi: np.ndarray) -> float:
    """Expectation of a path function given as a table of the same shape."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != path_table.shape:
        raise ValueError("phi table shape must match the path table")
    return float(np.sum(path_table * phi))


def smoothing_marginals(hmm: FiniteHmm, variant: str = "base") -> np.ndarray:
    """Per-step posterior state marginals via forward-backward, shape (T, n).

    An independent route to the same quantities as summing the enumerated
    path table over all other axes."""
    steps = _step_matrices(hmm, variant)
    horizon, n = hmm.horizon, hmm.n_states
    fwd = np.empty((horizon, n))
    vec = hmm.prior.copy()
    for t, (kern, g) in enumerate(steps):
        vec = (vec @ kern) * g
        fwd[t] = vec
    bwd = np.empty((horizon, n))
    vec = np.ones(n)
    bwd[horizon - 1] = vec
    for t in range(horizon - 1, 0, -1):
        kern, g = steps[t]
        vec = kern @ (g * vec)
        bwd[t - 1] = vec
    marg = fwd * bwd
    return marg / marg.sum(axis=1, keepdims=True)


def check_path_error_bound(hmm: FiniteHmm, phi: np.ndarray) -> tuple[float, float]:
    """Exact two-sided comparison of the path-posterior perturbation bound.

    lhs: |E_base[phi] - E_nudged[phi]| under the respective path posteriors.
    rhs: 2 sup|phi| D / Z_base, with D the L1 distance between the two
    unnormalized posterior path tables and Z_base the base evidence.

    This is the provable form.  The looser variant that substitutes the
    evidence difference |Z_base - Z_nudged| for D (which D dominates by the
    triangle inequality) is NOT a valid bound: equal evidences do not force
    equal posteriors, and naive_path_error_rhs below can sit at zero while
    lhs is positive.  Raises OracleViolation if the provable form fails
    beyond rounding slack.
    """
    w_base = _unnormalized_path_table(hmm, "base")
    w_nudged = _unnormalized_path_table(hmm, "nudged")
    z_base = w_base.sum()
    z_nudged = w_nudged.sum()
    lhs = abs(
        float(np.sum(w_base * phi)) / z_base - float(np.sum(w_nudged * phi)) / z_nudged
    )
    l1_dist = float(np.sum(np.abs(w_base - w_nudged)))
    rhs = 2.0 * np.max(np.abs(phi)) * l1_dist / z_base
    if lhs > rhs + 1e-12:
        raise OracleViolation(
            f"path error bound violated: lhs={lhs!r} > rhs={rhs!r}"
        )
    return lhs, float(rhs)


def naive_path_error_rhs(hmm: FiniteHmm, phi: np.ndarray) -> float:
    """The evidence-difference form 2 sup|phi| |Z_base - Z_nudged| / Z_base.

    Kept for reference only: it is not a valid bound on the path-posterior
    error (see check_path_error_bound), and randomized instances violate it
    routinely."""
    z_base = exact_evidence(hmm, "base")
    z_nudged = exact_evidence(hmm, "nudged")
    return float(2.0 * np.max(np.abs(phi)) * abs(z_base - z_nudged) / z_base)


def move_toward_argmax_maps(likelihood_vecs: np.ndarray, gamma: float) -> np.ndarray:
    """Grid-step nudge family on an ordered state set.

    Each state moves floor(gamma * distance) grid steps toward that step's
    likelihood peak: the identity at gamma=0, the full jump onto the argmax at
    gamma=1.  Likelihood-non-decreasing whenever each g_t is unimodal in the
    state order.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    gs = np.asarray(likelihood_vecs, dtype=float)
    horizon, n = gs.shape
    states = np.arange(n)
    maps = np.empty((horizon, n), dtype=np.int64)
    for t in range(horizon):
        peak = int(np.argmax(gs[t]))
        dist = np.abs(states - peak)
        step = np.floor(gamma * dist).astype(np.int64)
        maps[t] = states + np.sign(peak - states).astype(np.int64) * step
    return maps


def check_grid_existence(hmm: FiniteHmm, gammas: Sequence[float] | None = None) -> dict:
    """Sweep the grid-step nudge family and verify the existence guarantee.

    Asserts the nudged evidence matches the base evidence exactly at gamma=0
    and is at least the base evidence at some strictly positive grid gamma.
    Returns the full sweep so callers can inspect the gain profile.
    """
    if gammas is None:
        gammas = np.linspace(0.0, 1.0, 11)
    gammas = np.asarray(gammas, dtype=float)
    if gammas[0] != 0.0:
        raise ValueError("gamma grid must include 0 as its first point")
    base_ev = exact_evidence(hmm, "base")
    evidences = np.empty(gammas.size)
    for i, gamma in enumerate(gammas):
        maps = move_toward_argmax_maps(hmm.likelihood_vecs, gamma)
        evidences[i] = exact_evidence(hmm.with_maps(maps), "nudged")
    scale = max(1.0, abs(base_ev))
    equal_at_zero = abs(evidences[0] - base_ev) <= 1e-12 * scale
    gains = evidences - base_ev
    exists = bool(np.any(gains[1:] >= -1e-12 * scale))
    report = {
        "gammas": gammas,
        "evidences": evidences,
        "base_evidence": base_ev,
        "max_gain": float(gains.max()),
        "equal_at_zero": equal_at_zero,
        "exists": exists,
    }
    if not equal_at_zero:
        raise OracleViolation(f"gamma=0 must reproduce the base evidence: {report}")
    if not exists:
        raise OracleViolation(f"no grid gamma attains the base evidence: {report}")
    return report


def maximiser_maps(hmm: FiniteHmm) -> np.ndarray:
    """Maps sending every state to that step's likelihood argmax."""
    peaks = np.argmax(hmm.likelihood_vecs, axis=1)
    return np.repeat(peaks[:, None], hmm.n_states, axis=1)


def check_maximiser_inequality(hmm: FiniteHmm) -> tuple[float, float, float]:
    """Nudging with the per-step argmax map yields evidence equal to the
    product of likelihood maxima, strictly above the base evidence whenever
    the base path law can miss a maximal-likelihood state.

    Returns (nudged evidence, base evidence, product of per-step maxima).
    """
    nudged_ev = exact_evidence(hmm.with_maps(maximiser_maps(hmm)), "nudged")
    base_ev = exact_evidence(hmm, "base")
    prod_max = float(np.prod(hmm.likelihood_vecs.max(axis=1)))
    scale = max(1.0, prod_max)
    if abs(nudged_ev - prod_max) > 1e-12 * scale:
        raise OracleViolation(
            f"maximiser-map evidence {nudged_ev!r} != product of maxima {prod_max!r}"
        )
    # Probability, under the base path law weighted only by argmax hits, of
    # passing through a likelihood-maximal state at every step.
    vec = hmm.prior.copy()
    for t in range(hmm.horizon):
        g = hmm.likelihood_vecs[t]
        on_peak = (g >= g.max() - 0.0).astype(float)
        vec = (vec @ hmm.kernels[t]) * on_peak
    always_on_peak = float(vec.sum())
    if always_on_peak < 1.0 - 1e-12:
        if not nudged_ev > base_ev + 1e-15 * scale:
            raise OracleViolation(
                f"expected strict gain: nudged {nudged_ev!r} vs base {base_ev!r}"
            )
    elif abs(nudged_ev - base_ev) > 1e-12 * scale:
        raise OracleViolation(
            f"expected equality when every base path is maximal: "
            f"nudged {nudged_ev!r} vs base {base_ev!r}"
        )
    return nudged_ev, base_ev, prod_max


def check_gaussian_tv_bound(mu1, mu2, cov) -> tuple[float, float]:
    """Quadrature total-variation distance between two equal-covariance
    Gaussians against the closed-form mean-difference bound.

    Only d=1 is supported (dense quadrature); the bound is still evaluated
    through the eigendecomposition route so the matrix formula gets exercised.
    Returns (tv estimate, bound) and raises OracleViolation if tv exceeds the
    bound beyond quadrature slack.
    """
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=float))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if mu1.shape != (1,) or mu2.shape != (1,) or cov.shape != (1, 1):
        raise ValueError("total-variation quadrature supports d=1 only")
    if cov[0, 0] <= 0.0:
        raise ValueError("covariance must be positive definite")
    evals, evecs = np.linalg.eigh(cov)
    half_whitener = (evecs * evals**-0.5) @ evecs.T
    bound = 0.5 * np.linalg.norm(half_whitener, 2) * np.linalg.norm(mu1 - mu2)
    sigma = float(np.sqrt(cov[0, 0]))
    lo = min(mu1[0], mu2[0]) - 12.0 * sigma
    hi = max(mu1[0], mu2[0]) + 12.0 * sigma
    xs = np.linspace(lo, hi, 20001)
    norm_const = 1.0 / (sigma * np.sqrt(2.0 * np.pi))
    p1 = norm_const * np.exp(-0.5 * ((xs - mu1[0]) / sigma) ** 2)
    p2 = norm_const * np.exp(-0.5 * ((xs - mu2[0]) / sigma) ** 2)
    tv = 0.5 * float(np.trapezoid(np.abs(p1 - p2), xs))
    if tv > bound + 1e-6:
        raise OracleViolation(f"TV {tv!r} exceeds bound {bound!r}")
    return tv, float(bound)


def _unimodal_vector(rng: np.random.Generator, n: int) -> np.ndarray:
    """Positive vector rising to a random peak and falling after it."""
    peak = int(rng.integers(n))
    vals = np.sort(rng.uniform(0.1, 3.0, n))[::-1]
    order = np.argsort(np.abs(np.arange(n) - peak), kind="stable")
    out = np.empty(n)
    out[order] = vals
    return out


def random_hmm(
    rng: np.random.Generator,
    n_states: int | None = None,
    horizon: int | None = None,
    unimodal: bool = False,
) -> FiniteHmm:
    """Random fully supported instance with likelihood-non-decreasing maps.

    With unimodal=True every g_t is unimodal in the state order, so the
    grid-step family of move_toward_argmax_maps is valid for it at any gamma.
    """
    n = int(n_states) if n_states is not None else int(rng.integers(2, 5))
    horizon_ = int(horizon) if horizon is not None else int(rng.integers(2, 5))
    prior = rng.dirichlet(np.ones(n))
    kernels = rng.dirichlet(np.ones(n), size=(horizon_, n))
    if unimodal:
        gs = np.stack([_unimodal_vector(rng, n) for _ in range(horizon_)])
    else:
        gs = rng.uniform(0.1, 3.0, (horizon_, n))
    maps = np.empty((horizon_, n), dtype=np.int64)
    for t in range(horizon_):
        for x in range(n):
            candidates = np.flatnonzero(gs[t] >= gs[t, x])
            maps[t, x] = int(rng.choice(candidates))
    return FiniteHmm(prior, kernels, gs, maps)


def random_path_function(rng: np.random.Generator, hmm: FiniteHmm) -> np.ndarray:
    """Bounded path function enumerated as a table of shape (n,) * T."""
    shape = (hmm.n_states,) * hmm.horizon
    return rng.uniform(-1.0, 1.0, size=shape)


def run_all_checks(seed: int = 0, instances_per_check: int | None = None) -> dict:
    """Randomized exact verification sweep; the backbone of `expcli verify`.

    Draws fresh instances for five check families (evidence equality of the
    two nudged constructions, the path-posterior perturbation bound, the
    grid-family existence guarantee, the argmax-map inequality, and the
    Gaussian total-variation bound).  Returns a report dict whose "failures"
    list carries every offending instance in serialized form; "ok" is True
    when that list is empty.
    """
    rng = np.random.default_rng([seed, 0x0AC1E])
    counts = {
        "evidence_equality": 60,
        "path_error_bound": 60,
        "grid_existence": 50,
        "maximiser_inequality": 50,
        "tv_bound": 100,
    }
    if instances_per_check is not None:
        counts = {k: int(instances_per_check) for k in counts}
    failures: list[dict] = []
    report: dict = {"seed": seed, "checks": {}}

    def record(check: str, detail: str, instance: dict):
        failures.append({"check": check, "detail": detail, "instance": instance})

    worst = 0.0
    for _ in range(counts["evidence_equality"]):
        hmm = random_hmm(rng)
        ev_nudged = exact_evidence(hmm, "nudged")
        ev_alt = exact_evidence(hmm, "alternative")
        gap = abs(ev_nudged - ev_alt) / max(1.0, abs(ev_nudged))
        worst = max(worst, gap)
        if gap > 1e-12:
            record(
                "evidence_equality",
                f"nudged {ev_nudged!r} vs alternative {ev_alt!r}",
                hmm.to_jsonable(),
            )
        ident = hmm.with_identity_maps()
        evs = [exact_evidence(ident, v) for v in VARIANTS]
        if max(evs) - min(evs) > 1e-12 * max(1.0, abs(evs[0])):
            record(
                "evidence_equality",
                f"identity maps must collapse the variants, got {evs!r}",
                ident.to_jsonable(),
            )
    report["checks"]["evidence_equality"] = {
        "instances": counts["evidence_equality"],
        "worst_relative_gap": worst,
    }

    worst = 0.0
    naive_violations = 0
    for _ in range(counts["path_error_bound"]):
        hmm = random_hmm(rng)
        phi = random_path_function(rng, hmm)
        try:
            lhs, rhs = check_path_error_bound(hmm, phi)
            worst = max(worst, lhs - rhs)
            if lhs > naive_path_error_rhs(hmm, phi) + 1e-12:
                naive_violations += 1
        except OracleViolation as err:
            record("path_error_bound", str(err), hmm.to_jsonable())
    report["checks"]["path_error_bound"] = {
        "instances": counts["path_error_bound"],
        "worst_slack_violation": worst,
        "naive_form_violations": naive_violations,
    }

    n_exist = 0
    for _ in range(counts["grid_existence"]):
        hmm = random_hmm(rng, unimodal=True)
        try:
            rep = check_grid_existence(hmm)
            n_exist += int(rep["exists"])
        except OracleViolation as err:
            record("grid_existence", str(err), hmm.to_jsonable())
    report["checks"]["grid_existence"] = {
        "instances": counts["grid_existence"],
        "existence_count": n_exist,
    }

    for _ in range(counts["maximiser_inequality"]):
        hmm = random_hmm(rng)
        try:
            check_maximiser_inequality(hmm)
        except OracleViolation as err:
            record("maximiser_inequality", str(err), hmm.to_jsonable())
    report["checks"]["maximiser_inequality"] = {
        "instances": counts["maximiser_inequality"]
    }

    worst = 0.0
    for _ in range(counts["tv_bound"]):
        mu1 = rng.normal(0.0, 2.0)
        mu2 = mu1 + rng.normal(0.0, 1.0)
        var = rng.uniform(0.05, 4.0)
        try:
            tv, bound = check_gaussian_tv_bound([mu1], [mu2], [[var]])
            worst = max(worst, tv - bound)
        except OracleViolation as err:
            record(
                "tv_bound",
                str(err),
                {"mu1": mu1, "mu2": mu2, "var": var},
            )
    report["checks"]["tv_bound"] = {
        "instances": counts["tv_bound"],
        "worst_slack_violation": worst,
    }

    report["n_instances_total"] = int(sum(counts.values()))
    report["failures"] = failures
    report["ok"] = not failures
    return report

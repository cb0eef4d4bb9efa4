"""Bayesian filtering with nudged state-space models.

A nudged model replaces the transition kernel K_t by its pushforward
through a likelihood-non-decreasing map built from the incoming
observation; the package provides exact Kalman and bootstrap particle
filters for both the original and the nudged kernels, model builders
for a 4-D linear-Gaussian tracker and the stochastic Lorenz 63 system,
a finite-state brute-force verification suite, and an experiment runner
(see the ``expcli`` console script).
"""

from .core import (
    CholeskyFailure,
    ControlledLinearGaussianTransition,
    DegenerateEnsemble,
    DivergedState,
    FilterTrace,
    GaussianBelief,
    LinearGaussianTransition,
    Lorenz63Transition,
    ObservationModel,
    RngStream,
    SsmSpec,
    euler_maruyama,
    gaussian_logpdf,
    lorenz_drift,
    psd_factor,
    sample_gaussian,
)
from .experiments import (
    EXPERIMENTS,
    SCENARIOS,
    ExperimentConfig,
    RunReport,
    load_config,
    run_experiment,
    run_lgssm_sweep,
    run_lorenz_mc,
    run_lorenz_single,
)
from .kalman import KalmanState, kf_predict, kf_update, nudged_kf_predict, run_kf
from .models import (
    LORENZ_B_MISMATCH,
    LORENZ_THETA,
    Lgssm4Config,
    Lorenz63Config,
    lgssm4_spec,
    lorenz_spec,
    lorenz_transition,
    simulate_lgssm4,
    simulate_lorenz,
)
from .nudging import (
    GRADIENT_ASCENT,
    AffineNudge,
    NotInvertible,
    NudgeConfig,
    affine_nudge_gaussian,
    apply_nudge,
    grad_log_likelihood,
    invert_affine_nudge,
    lipschitz_constant,
)
from .oracle import (
    FiniteHmm,
    OracleViolation,
    check_gaussian_tv_bound,
    check_grid_existence,
    check_maximiser_inequality,
    check_path_error_bound,
    exact_evidence,
    exact_path_measure,
    maximiser_maps,
    move_toward_argmax_maps,
    pushforward_matrix,
    random_hmm,
    run_all_checks,
    smoothing_marginals,
)
from .particle import (
    ParticleEnsemble,
    init_ensemble,
    nmse,
    pf_step,
    resample_multinomial,
    resample_systematic,
    run_pf,
)

__version__ = "0.1.0"

__all__ = [
    "AffineNudge",
    "CholeskyFailure",
    "ControlledLinearGaussianTransition",
    "DegenerateEnsemble",
    "DivergedState",
    "EXPERIMENTS",
    "ExperimentConfig",
    "FilterTrace",
    "FiniteHmm",
    "GRADIENT_ASCENT",
    "GaussianBelief",
    "KalmanState",
    "LORENZ_B_MISMATCH",
    "LORENZ_THETA",
    "Lgssm4Config",
    "LinearGaussianTransition",
    "Lorenz63Config",
    "Lorenz63Transition",
    "NotInvertible",
    "NudgeConfig",
    "ObservationModel",
    "OracleViolation",
    "ParticleEnsemble",
    "RngStream",
    "RunReport",
    "SCENARIOS",
    "SsmSpec",
    "__version__",
    "affine_nudge_gaussian",
    "apply_nudge",
    "check_gaussian_tv_bound",
    "check_grid_existence",
    "check_maximiser_inequality",
    "check_path_error_bound",
    "euler_maruyama",
    "exact_evidence",
    "exact_path_measure",
    "gaussian_logpdf",
    "grad_log_likelihood",
    "init_ensemble",
    "invert_affine_nudge",
    "kf_predict",
    "kf_update",
    "lgssm4_spec",
    "lipschitz_constant",
    "load_config",
    "lorenz_drift",
    "lorenz_spec",
    "lorenz_transition",
    "maximiser_maps",
    "move_toward_argmax_maps",
    "nmse",
    "nudged_kf_predict",
    "pf_step",
    "psd_factor",
    "pushforward_matrix",
    "random_hmm",
    "resample_multinomial",
    "resample_systematic",
    "run_all_checks",
    "run_experiment",
    "run_kf",
    "run_lgssm_sweep",
    "run_lorenz_mc",
    "run_lorenz_single",
    "run_pf",
    "sample_gaussian",
    "simulate_lgssm4",
    "simulate_lorenz",
    "smoothing_marginals",
]

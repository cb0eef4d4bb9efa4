"""Finite-state verification suite: exact evidences, bounds, map families."""

import itertools

import numpy as np
import pytest

from nudgefilter import (
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
from nudgefilter.oracle import naive_path_error_rhs, random_path_function


def _two_state_hand_example():
    """Uniform kernel on two states, likelihood doubled on state 0.

    Base evidence: each step contributes E[g] = 0.5 * 2 + 0.5 * 1 = 1.5.
    Nudging with the map sending both states to the argmax (state 0)
    makes every step contribute 2.
    """
    prior = np.array([0.5, 0.5])
    kernels = np.array([[[0.5, 0.5], [0.5, 0.5]]])
    likelihood = np.array([[2.0, 1.0]])
    maps = np.array([[0, 0]])
    return FiniteHmm(
        prior=prior, kernels=kernels, likelihood_vecs=likelihood, nudge_maps=maps
    )


class TestFiniteHmmValidation:
    def test_rejects_non_stochastic_kernel(self):
        with pytest.raises(ValueError):
            FiniteHmm(
                prior=np.array([1.0, 0.0]),
                kernels=np.array([[[0.7, 0.7], [0.5, 0.5]]]),
                likelihood_vecs=np.array([[1.0, 1.0]]),
                nudge_maps=np.array([[0, 1]]),
            )

    def test_rejects_likelihood_decreasing_map(self):
        # moving state 0 (likelihood 2) to state 1 (likelihood 1) is not
        # a valid nudge map and must fail at construction
        with pytest.raises(ValueError):
            FiniteHmm(
                prior=np.array([0.5, 0.5]),
                kernels=np.array([[[0.5, 0.5], [0.5, 0.5]]]),
                likelihood_vecs=np.array([[2.0, 1.0]]),
                nudge_maps=np.array([[1, 1]]),
            )

    def test_rejects_negative_likelihood(self):
        with pytest.raises(ValueError):
            FiniteHmm(
                prior=np.array([0.5, 0.5]),
                kernels=np.array([[[0.5, 0.5], [0.5, 0.5]]]),
                likelihood_vecs=np.array([[2.0, -1.0]]),
                nudge_maps=np.array([[0, 1]]),
            )

    def test_identity_maps_always_valid(self):
        hmm = _two_state_hand_example().with_identity_maps()
        np.testing.assert_array_equal(hmm.nudge_maps, [[0, 1]])


class TestExactEvidence:
    def test_hand_example_base(self):
        assert exact_evidence(_two_state_hand_example(), "base") == pytest.approx(1.5)

    def test_hand_example_nudged(self):
        assert exact_evidence(_two_state_hand_example(), "nudged") == pytest.approx(2.0)

    def test_hand_example_alternative_matches_nudged(self):
        hmm = _two_state_hand_example()
        assert exact_evidence(hmm, "alternative") == pytest.approx(
            exact_evidence(hmm, "nudged"), abs=1e-15
        )

    def test_identity_maps_collapse_variants(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            hmm = random_hmm(rng).with_identity_maps()
            base = exact_evidence(hmm, "base")
            assert exact_evidence(hmm, "nudged") == pytest.approx(base, rel=1e-13)
            assert exact_evidence(hmm, "alternative") == pytest.approx(base, rel=1e-13)

    def test_evidence_matches_path_enumeration(self):
        rng = np.random.default_rng(1)
        hmm = random_hmm(rng)
        n, T = hmm.n_states, hmm.horizon
        total = 0.0
        for path in itertools.product(range(n), repeat=T):
            p = hmm.prior[:]
            prob = float(
                sum(
                    hmm.prior[i] * hmm.kernels[0][i, path[0]]
                    for i in range(n)
                )
            )
            weight = prob * hmm.likelihood_vecs[0][path[0]]
            for t in range(1, T):
                weight *= (
                    hmm.kernels[t][path[t - 1], path[t]]
                    * hmm.likelihood_vecs[t][path[t]]
                )
            total += weight
        assert exact_evidence(hmm, "base") == pytest.approx(total, rel=1e-12)


class TestPushforward:
    def test_matrix_is_deterministic_kernel(self):
        P = pushforward_matrix(np.array([1, 1, 0]), 3)
        np.testing.assert_array_equal(
            P, [[0.0, 1.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]
        )

    def test_composition_with_kernel_reroutes_mass(self):
        hmm = _two_state_hand_example()
        P = pushforward_matrix(hmm.nudge_maps[0], 2)
        pushed = hmm.kernels[0] @ P
        np.testing.assert_allclose(pushed, [[1.0, 0.0], [1.0, 0.0]])


class TestPathMeasure:
    def test_normalizes(self):
        rng = np.random.default_rng(2)
        hmm = random_hmm(rng)
        table = exact_path_measure(hmm, "base")
        assert table.sum() == pytest.approx(1.0, abs=1e-12)

    def test_smoothing_marginals_match_enumeration(self):
        rng = np.random.default_rng(3)
        hmm = random_hmm(rng)
        table = exact_path_measure(hmm, "base")
        marginals = smoothing_marginals(hmm, "base")
        for t in range(hmm.horizon):
            axes = tuple(a for a in range(hmm.horizon) if a != t)
            np.testing.assert_allclose(
                marginals[t], table.sum(axis=axes), atol=1e-12
            )


class TestPathErrorBound:
    def test_holds_on_random_instances(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            hmm = random_hmm(rng)
            phi = random_path_function(rng, hmm)
            lhs, rhs = check_path_error_bound(hmm, phi)
            assert lhs <= rhs + 1e-12

    def test_naive_form_has_a_counterexample(self):
        """The bound stated via the evidence difference alone fails.

        Two states, one step, uniform kernel, CONSTANT likelihood g = (2, 2),
        nudge map sending both states to state 0. Both evidences equal 2,
        so the naive right-hand side vanishes, yet phi = (1, -1) separates
        the path measures: the nudged one concentrates on state 0.
        """
        hmm = FiniteHmm(
            prior=np.array([0.5, 0.5]),
            kernels=np.array([[[0.5, 0.5], [0.5, 0.5]]]),
            likelihood_vecs=np.array([[2.0, 2.0]]),
            nudge_maps=np.array([[0, 0]]),
        )
        phi = np.array([1.0, -1.0])
        assert exact_evidence(hmm, "base") == pytest.approx(2.0)
        assert exact_evidence(hmm, "nudged") == pytest.approx(2.0)
        naive_rhs = naive_path_error_rhs(hmm, phi)
        assert naive_rhs == pytest.approx(0.0, abs=1e-15)

        base = exact_path_measure(hmm, "base")
        nudged = exact_path_measure(hmm, "nudged")
        lhs = abs(float(base @ phi) - float(nudged @ phi))
        assert lhs == pytest.approx(1.0)

        checked_lhs, corrected_rhs = check_path_error_bound(hmm, phi)
        assert checked_lhs == pytest.approx(lhs)
        assert corrected_rhs == pytest.approx(2.0)
        assert checked_lhs <= corrected_rhs


class TestGridFamily:
    def test_zero_step_is_identity(self):
        g = np.array([[1.0, 3.0, 2.0, 0.5]])
        maps = move_toward_argmax_maps(g, 0.0)
        np.testing.assert_array_equal(maps, [[0, 1, 2, 3]])

    def test_full_step_reaches_argmax(self):
        g = np.array([[1.0, 3.0, 2.0, 0.5]])
        maps = move_toward_argmax_maps(g, 1.0)
        np.testing.assert_array_equal(maps, [[1, 1, 1, 1]])

    def test_half_step_moves_halfway(self):
        g = np.array([[1.0, 2.0, 4.0, 3.0]])
        # argmax at index 2; distances (2, 1, 0, 1); floor(0.5 * d) = (1, 0, 0, 0)
        maps = move_toward_argmax_maps(g, 0.5)
        np.testing.assert_array_equal(maps, [[1, 1, 2, 3]])

    def test_existence_of_improving_step(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            hmm = random_hmm(rng, unimodal=True)
            report = check_grid_existence(hmm)
            assert report["exists"]
            assert report["equal_at_zero"]
            assert report["evidences"][0] == pytest.approx(
                report["base_evidence"], rel=1e-12
            )

    def test_grid_must_start_at_zero(self):
        with pytest.raises(ValueError):
            check_grid_existence(_two_state_hand_example(), gammas=[0.5, 1.0])


class TestMaximiserMaps:
    def test_maps_point_at_argmax(self):
        hmm = _two_state_hand_example()
        np.testing.assert_array_equal(maximiser_maps(hmm), [[0, 0]])

    def test_evidence_is_product_of_maxima(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            hmm = random_hmm(rng)
            nudged, base, prod_max = check_maximiser_inequality(hmm)
            assert nudged == pytest.approx(
                float(np.prod(hmm.likelihood_vecs.max(axis=1))), rel=1e-12
            )
            assert nudged == pytest.approx(prod_max, rel=1e-12)
            assert nudged >= base - 1e-12

    def test_strict_gain_on_hand_example(self):
        nudged, base, _ = check_maximiser_inequality(_two_state_hand_example())
        assert nudged == pytest.approx(2.0)
        assert base == pytest.approx(1.5)
        assert nudged > base


class TestGaussianTvBound:
    def test_frozen_scalar_case(self):
        tv, bound = check_gaussian_tv_bound(
            np.array([0.0]), np.array([0.1]), np.eye(1)
        )
        assert tv == pytest.approx(0.039877611, abs=1e-6)
        assert bound == pytest.approx(0.05, abs=1e-12)
        assert tv <= bound

    def test_equal_means_zero_distance(self):
        tv, bound = check_gaussian_tv_bound(
            np.array([0.3]), np.array([0.3]), 2.0 * np.eye(1)
        )
        assert tv == pytest.approx(0.0, abs=1e-9)
        assert bound == pytest.approx(0.0, abs=1e-15)

    def test_holds_across_scales(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            var = float(rng.uniform(0.2, 5.0))
            mu1 = rng.normal(size=1)
            mu2 = mu1 + rng.normal(scale=0.5, size=1)
            tv, bound = check_gaussian_tv_bound(mu1, mu2, var * np.eye(1))
            assert tv <= bound + 1e-6


class TestRunAllChecks:
    def test_small_suite_passes(self):
        report = run_all_checks(seed=123, instances_per_check=5)
        assert report["ok"]
        assert report["n_instances_total"] == 25
        assert report["failures"] == []

    def test_zero_instances_is_vacuous(self):
        report = run_all_checks(seed=0, instances_per_check=0)
        assert report["ok"]
        assert report["n_instances_total"] == 0

    def test_deterministic_given_seed(self):
        a = run_all_checks(seed=9, instances_per_check=3)
        b = run_all_checks(seed=9, instances_per_check=3)
        assert a["checks"] == b["checks"]

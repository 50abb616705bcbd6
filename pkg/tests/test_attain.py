import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eqodds.attain import (DegeneratePredictorError, DomainTooLargeError, WrongLawError,
                           all_tables, check_thm4, corollary_ratio, gaussian_q, q_grid_gap,
                           search_fair_deterministic)
from eqodds.noise import TABLE2_SCM, LinearScm, NoiseLaw
from eqodds.probcore import DeterministicClassifier, DiscreteJoint, eo_violation, positive_rates
from eqodds.simulate import appendix_joint, random_joint

GAUSS = LinearScm(0.7, 0.6, 0.9, 0.6, NoiseLaw("gaussian", 0.4), NoiseLaw("gaussian", 0.4),
                  NoiseLaw("gaussian", 0.2))


class TestCheckThm4:
    def test_expl_identity_table(self):
        rep = check_thm4(appendix_joint("expL"), DeterministicClassifier(np.array([[1, 0], [0, 1]])))
        assert rep.holds
        assert rep.failed_condition == "none"

    def test_coverage_failure(self):
        # group 0 never predicts 1 while group 1 sometimes does
        rep = check_thm4(appendix_joint("expR"), DeterministicClassifier(np.array([[0, 0], [0, 1]])))
        assert not rep.holds
        assert rep.failed_condition == "coverage"
        assert rep.witness

    def test_matching_failure(self):
        rep = check_thm4(appendix_joint("expR"), DeterministicClassifier(np.array([[0, 1], [0, 1]])))
        assert not rep.holds
        assert rep.failed_condition == "matching"
        assert rep.max_gap == pytest.approx(0.4)

    def test_constant_holds(self):
        joint = random_joint(np.random.default_rng(0), (3, 4, 2))
        assert check_thm4(joint, DeterministicClassifier.constant(1, 3, 4)).holds


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_condition_matches_violation_on_random_joints(seed):
    joint = random_joint(np.random.default_rng(seed))
    for f in all_tables(2, 2):
        holds = check_thm4(joint, f).holds
        assert holds == (eo_violation(positive_rates(joint, f)) <= 1e-9)


def test_indep_joint_has_nonconstant_fair_tables():
    fair = search_fair_deterministic(appendix_joint("indep"))
    assert any(not f.is_constant() for f in fair)


def test_expr_search_returns_constants_only():
    fair = search_fair_deterministic(appendix_joint("expR"))
    assert len(fair) == 2
    assert all(f.is_constant() for f in fair)


def test_search_cap():
    joint = DiscreteJoint(np.full((3, 7, 2), 1 / 42))
    with pytest.raises(DomainTooLargeError):
        search_fair_deterministic(joint)


def test_all_tables_count():
    assert len(list(all_tables(2, 3))) == 64


class TestGaussianQ:
    def test_ratio_makes_q_constant_in_a(self):
        r = corollary_ratio(GAUSS)
        gap = q_grid_gap(GAUSS, r, 1.0, np.linspace(-1, 2, 7), np.linspace(-1, 2, 7),
                         np.linspace(-1, 2, 7))
        assert gap <= 1e-12

    def test_other_ratio_leaves_gap(self):
        r = corollary_ratio(GAUSS)
        gap = q_grid_gap(GAUSS, 1.5 * r, 1.0, [0.0, 1.0], [0.0, 1.0], [0.0, 0.5])
        assert gap > 1e-3

    def test_q_is_a_density_in_yhat(self):
        # integrating Q over yhat gives |beta| (change of variables x -> yhat)
        grid = np.linspace(-6, 6, 20001)
        vals = [gaussian_q(GAUSS, 0.3, 0.5, 1.0, 0.4, v) for v in grid]
        assert np.trapezoid(vals, grid) == pytest.approx(0.5, rel=1e-6)

    def test_ratio_closed_form(self):
        s = GAUSS
        expected = ((s.b * s.d * s.c * s.var_ex - s.q * s.var_e)
                    / (s.c ** 2 * s.var_ex + s.var_e))
        assert corollary_ratio(s) == pytest.approx(expected)

    def test_zero_beta(self):
        with pytest.raises(DegeneratePredictorError):
            gaussian_q(GAUSS, 1.0, 0.0, 0.0, 0.0, 0.0)

    def test_non_gaussian_rejected(self):
        with pytest.raises(WrongLawError):
            corollary_ratio(TABLE2_SCM)

    def test_independent_a_and_y_rejected(self):
        scm = LinearScm(1.0, -1.0, 1.0, 1.0)
        with pytest.raises(ValueError, match="dependent"):
            gaussian_q(scm, 0.0, 1.0, 0.0, 0.0, 0.0)

    def test_value_is_finite_and_positive(self):
        v = gaussian_q(GAUSS, 0.1, 1.0, 0.0, 0.0, 0.0)
        assert v > 0 and math.isfinite(v)


def test_x_only_table_fair_when_x_independent_of_a_given_y():
    f = DeterministicClassifier(np.array([[0, 1], [0, 1]]))
    assert check_thm4(appendix_joint("indep"), f).holds


def test_expl_search_contains_identity_and_flip():
    fair = search_fair_deterministic(appendix_joint("expL"))
    eq = DeterministicClassifier(np.array([[1, 0], [0, 1]]))
    for f in (DeterministicClassifier.constant(0, 2, 2), DeterministicClassifier.constant(1, 2, 2),
              eq, eq.flipped()):
        assert f in fair


def test_indep_search_contains_every_x_only_table():
    fair = search_fair_deterministic(appendix_joint("indep"))
    for row in ([0, 0], [0, 1], [1, 0], [1, 1]):
        assert DeterministicClassifier(np.array([row, row])) in fair


def test_five_point_grid_and_perturbation():
    r = corollary_ratio(GAUSS)
    grid = np.linspace(-0.5, 1.5, 5)
    assert q_grid_gap(GAUSS, r, 1.0, grid, grid, grid) <= 1e-12
    assert q_grid_gap(GAUSS, r + 0.1, 1.0, grid, grid, grid) > 0


def test_hypothesis_violation_q_b_zero():
    scm = LinearScm(0.0, 0.0, 0.9, 0.6)
    with pytest.raises(ValueError):
        gaussian_q(scm, 0.0, 1.0, 0.0, 0.0, 0.0)


@pytest.mark.parametrize("b, d", [(0.0, 0.6), (0.6, 0.0)])
def test_ratio_zero_without_hidden_path(b, d):
    assert corollary_ratio(LinearScm(0.0, b, 0.9, d)) == 0


def test_ratio_small_noise_limit():
    tiny = NoiseLaw("gaussian", 1e-4)
    scm = LinearScm(0.7, 0.6, 0.9, 0.6, NoiseLaw("gaussian", 0.4), tiny, tiny)
    assert corollary_ratio(scm) == pytest.approx(0.6 * 0.6 / 0.9, rel=1e-6)

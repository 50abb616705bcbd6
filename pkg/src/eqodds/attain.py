"""Deciding whether deterministic predictors can satisfy Equalized Odds.

Discrete classification uses the set conditions on the level sets of ``f``;
linear-Gaussian regression uses the closed-form conditional density of X
given (A, Y).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .noise import LinearScm, NoiseLaw  # noqa: F401  (re-exported)
from .probcore import DeterministicClassifier, DimensionError, DiscreteJoint

EXACT_TOL = 1e-9
FLOAT_TOL = 1e-6
SEARCH_CAP = 20


class DegeneratePredictorError(ValueError):
    pass


class WrongLawError(ValueError):
    pass


class DomainTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class ConditionReport:
    holds: bool
    failed_condition: str  # "none", "coverage" or "matching"
    witness: tuple = ()
    max_gap: float = 0.0


def default_tol(joint: DiscreteJoint) -> float:
    return EXACT_TOL if joint.exact else FLOAT_TOL


def check_thm4(joint: DiscreteJoint, f: DeterministicClassifier,
               tol: Optional[float] = None) -> ConditionReport:
    """Evaluate the coverage and matching conditions for a deterministic table.

    Coverage: every label that ``f`` outputs at all is produced by some x in
    every group.
    Matching: for each label, the conditional mass of x mapped to it is the
    same across groups, for each y.
    """
    if tol is None:
        tol = default_tol(joint)
    if joint.y_levels != 2:
        raise DimensionError("binary Y required")
    if f.f.shape != (joint.a_levels, joint.x_levels):
        raise DimensionError(f"classifier shape {f.f.shape} does not match joint "
                             f"{(joint.a_levels, joint.x_levels)}")
    cond = joint.p_x_given_ay()
    groups = range(joint.a_levels)
    level_sets = {(yh, a): [x for x in range(joint.x_levels) if f.f[a, x] == yh]
                  for yh in (0, 1) for a in groups}

    max_gap = 0.0
    witness: tuple = ()
    for yh, y in itertools.product((0, 1), (0, 1)):
        mass = {a: sum((cond[a, x, y] for x in level_sets[yh, a]), 0) for a in groups}
        for a, a2 in itertools.combinations(groups, 2):
            gap = abs(mass[a] - mass[a2])
            if gap > max_gap:
                max_gap, witness = gap, (yh, a, a2, y)

    for yh in (0, 1):
        missing = [a for a in groups if not level_sets[yh, a]]
        # a label f never outputs is vacuous; a label output in only some groups is not
        if missing and len(missing) < joint.a_levels:
            if not witness:
                other = next(a for a in groups if a != missing[0]) if joint.a_levels > 1 else missing[0]
                witness = (yh, missing[0], other, 0)
            return ConditionReport(False, "coverage", witness, float(max_gap))
    if max_gap > tol:
        return ConditionReport(False, "matching", witness, float(max_gap))
    return ConditionReport(True, "none", (), float(max_gap))


def all_tables(a_levels: int, x_levels: int):
    """Every binary table of shape (a_levels, x_levels), in counting order."""
    cells = a_levels * x_levels
    for code in range(2 ** cells):
        bits = [(code >> k) & 1 for k in range(cells)]
        yield DeterministicClassifier(np.array(bits, dtype=int).reshape(a_levels, x_levels))


def search_fair_deterministic(joint: DiscreteJoint,
                              tol: Optional[float] = None) -> list[DeterministicClassifier]:
    """All deterministic tables satisfying Equalized Odds, by exhaustive enumeration.

    A vectorized rate computation screens the ``2**(|A||X|)`` tables; each
    survivor is confirmed with :func:`check_thm4`.
    """
    if tol is None:
        tol = default_tol(joint)
    cells = joint.a_levels * joint.x_levels
    if cells > SEARCH_CAP:
        raise DomainTooLargeError(
            f"|A|*|X| = {cells} exceeds the enumeration cap of {SEARCH_CAP} cells "
            f"(2**{SEARCH_CAP} tables)")
    cond = np.asarray(joint.p_x_given_ay(), dtype=float)
    screen = max(tol, 1e-9) * 10 + 1e-12
    found = []
    chunk = 1 << 16
    weights = 1 << np.arange(cells)
    for start in range(0, 2 ** cells, chunk):
        codes = np.arange(start, min(start + chunk, 2 ** cells))
        tables = ((codes[:, None] & weights) > 0).astype(float).reshape(-1, joint.a_levels,
                                                                        joint.x_levels)
        rates = np.einsum("nax,axy->nay", tables, cond)
        spread = (rates.max(axis=1) - rates.min(axis=1)).max(axis=1)
        for idx in np.nonzero(spread <= screen)[0]:
            clf = DeterministicClassifier(tables[idx].astype(int))
            if check_thm4(joint, clf, tol).holds:
                found.append(clf)
    return found


def _conditional_x_params(scm: LinearScm, a: float, y: float) -> tuple[float, float]:
    var_x = scm.var_ex
    denom = scm.c ** 2 * var_x + scm.var_e
    mu = scm.q * a + scm.c * var_x * (y - (scm.q * scm.c + scm.b * scm.d) * a) / denom
    var = (1.0 - scm.c ** 2 * var_x / denom) * var_x
    return mu, var


def _require_gaussian(scm: LinearScm) -> None:
    if not scm.is_gaussian:
        raise WrongLawError("closed form needs Gaussian E_X, E_H and E_Y; for non-Gaussian "
                            "noise no linear predictor satisfies Equalized Odds")


def gaussian_q(scm: LinearScm, alpha: float, beta: float, a: float, y: float,
               yhat: float) -> float:
    """Density of X given (A=a, Y=y) at the unique x with ``alpha*a + beta*x = yhat``."""
    if beta == 0:
        raise DegeneratePredictorError("beta must be nonzero for a predictor that uses X")
    _require_gaussian(scm)
    scm.check_theorem_hypotheses()
    mu, var = _conditional_x_params(scm, a, y)
    x = (yhat - alpha * a) / beta
    return math.exp(-(x - mu) ** 2 / (2 * var)) / math.sqrt(2 * math.pi * var)


def corollary_ratio(scm: LinearScm) -> float:
    """The coefficient ratio ``alpha / beta`` making ``alpha*A + beta*X`` satisfy EO."""
    _require_gaussian(scm)
    denom = scm.c ** 2 * scm.var_ex + scm.var_e
    if not denom > 0:
        raise ValueError("denominator c^2 var(E_X) + var(E) must be positive")
    return (scm.b * scm.d * scm.c * scm.var_ex - scm.q * scm.var_e) / denom


def q_grid_gap(scm: LinearScm, alpha: float, beta: float, a_values, y_values,
               yhat_values) -> float:
    """Largest ``|Q(a, y, yhat) - Q(a', y, yhat)|`` over a grid."""
    gap = 0.0
    for y, yh in itertools.product(y_values, yhat_values):
        qs = [gaussian_q(scm, alpha, beta, a, y, yh) for a in a_values]
        gap = max(gap, max(qs) - min(qs))
    return gap

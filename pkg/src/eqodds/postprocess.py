"""Post-processing and in-processing feasible areas as linear programs.

Post-processing randomizes a base prediction per group with
``beta[a, yhat] = P(Ytilde = 1 | a, Yhat = yhat)``. In-processing optimizes a
stochastic table ``p1[a, x]`` directly. Both problems are linear in their
variables because positive rates are linear in the table entries.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from . import lp
from .probcore import (Classifier, DeterministicClassifier, DimensionError, DiscreteJoint,
                       RocPoint, StochasticClassifier, positive_rates)
from .rocgeom import ConvexRegion, feasible_area_post, region_from_chains

DEFAULT_GRID = 101


class DegenerateInputError(ValueError):
    pass


class ConditioningError(ValueError):
    pass


@dataclass(frozen=True)
class PostParams:
    """``beta0[a] = P(Yt=1 | a, Yhat=0)`` and ``beta1[a] = P(Yt=1 | a, Yhat=1)``."""

    beta0: tuple[float, ...]
    beta1: tuple[float, ...]

    def __post_init__(self):
        if len(self.beta0) != len(self.beta1):
            raise DimensionError("beta0 and beta1 need one entry per group")
        if any(not (-1e-12 <= b <= 1 + 1e-12) for b in (*self.beta0, *self.beta1)):
            raise ValueError("post-processing probabilities must lie in [0, 1]")

    @classmethod
    def identity(cls, groups: int) -> "PostParams":
        return cls((0.0,) * groups, (1.0,) * groups)


def postprocess_rates(rates_hat: Mapping[int, RocPoint], beta: PostParams) -> dict[int, RocPoint]:
    """Rates after randomizing: ``rate = beta1 * rate_hat + beta0 * (1 - rate_hat)``."""
    out = {}
    for a, r in rates_hat.items():
        b0, b1 = beta.beta0[a], beta.beta1[a]
        out[a] = RocPoint(b1 * r.fpr + b0 * (1 - r.fpr), b1 * r.tpr + b0 * (1 - r.tpr))
    return out


def joint_ayyhat(joint: DiscreteJoint, clf: Classifier) -> np.ndarray:
    """Table ``P(a, y, yhat)`` of shape (A, 2, 2) for a classifier under a joint."""
    p1 = np.asarray(clf.p1_table(), dtype=float)
    p = np.asarray(joint.p, dtype=float)
    out = np.zeros((joint.a_levels, 2, 2))
    out[:, :, 1] = np.einsum("ax,axy->ay", p1, p)
    out[:, :, 0] = p.sum(axis=1) - out[:, :, 1]
    return out


def _loss_coefficients(p_ay: np.ndarray, costs: tuple[float, float]):
    """Expected loss as ``const + sum_a (w0[a] * fpr_a - w1[a] * tpr_a)``."""
    c_fp, c_fn = costs
    w0 = c_fp * p_ay[:, 0]
    w1 = c_fn * p_ay[:, 1]
    return w0, w1, float(w1.sum())


def expected_loss(p_ay: np.ndarray, rates: Mapping[int, RocPoint], costs=(1.0, 1.0)) -> float:
    w0, w1, const = _loss_coefficients(np.asarray(p_ay, dtype=float), costs)
    return const + sum(w0[a] * r.fpr - w1[a] * r.tpr for a, r in rates.items())


def fit_postprocess(table_ayyhat, costs: tuple[float, float] = (1.0, 1.0),
                    tau: float = 0.0, require_nontrivial: bool = False):
    """Loss-minimizing EO post-processing of a base classifier.

    Parameters
    ----------
    table_ayyhat : array (A, 2, 2)
        Joint probabilities ``P(a, y, yhat)``.
    costs : (false-positive cost, false-negative cost)
    tau : float
        Allowed gap between each group's rates and the shared rates; 0 means
        exact Equalized Odds.
    require_nontrivial : bool
        Raise :class:`DegenerateInputError` if some group's base rates lie on
        the diagonal, where only trivial fair predictors exist.

    Returns
    -------
    (PostParams, RocPoint, float)
        Optimal parameters, the shared rate point and the expected loss.
    """
    t = np.asarray(table_ayyhat, dtype=float)
    if t.ndim != 3 or t.shape[1:] != (2, 2):
        raise DimensionError("expected a table of shape (A, 2, 2) over (a, y, yhat)")
    p_ay = t.sum(axis=2)
    if np.any(p_ay <= 0):
        raise ValueError("every (a, y) cell needs positive probability")
    n_a = t.shape[0]
    hat = t[:, :, 1] / p_ay  # P(yhat = 1 | a, y)
    if require_nontrivial and np.any(np.abs(hat[:, 1] - hat[:, 0]) <= 1e-12):
        raise DegenerateInputError("a group's base rates lie on the diagonal")
    w0, w1, const = _loss_coefficients(p_ay, costs)
    # variables: beta0[0..A), beta1[0..A), shared fpr, shared tpr
    nv = 2 * n_a + 2
    c = np.zeros(nv)
    rows, rhs = [], []
    for a in range(n_a):
        for y in (0, 1):
            row = np.zeros(nv)
            row[a] = 1 - hat[a, y]
            row[n_a + a] = hat[a, y]
            row[2 * n_a + y] = -1.0
            rows.append(row)
            rhs.append(0.0)
            c[a] += (w0[a] if y == 0 else -w1[a]) * (1 - hat[a, y])
            c[n_a + a] += (w0[a] if y == 0 else -w1[a]) * hat[a, y]
    lb = np.zeros(nv)
    ub = np.ones(nv)
    if tau == 0:
        res = lp.solve(lp.LpProblem(c, A_eq=np.array(rows), b_eq=np.array(rhs), lb=lb, ub=ub))
    else:
        A = np.array(rows)
        res = lp.solve(lp.LpProblem(c, A_ub=np.vstack([A, -A]),
                                    b_ub=np.full(2 * len(rows), tau), lb=lb, ub=ub))
    beta = PostParams(tuple(np.clip(res.x[:n_a], 0, 1)), tuple(np.clip(res.x[n_a:2 * n_a], 0, 1)))
    point = RocPoint(float(res.x[2 * n_a]), float(res.x[2 * n_a + 1]))
    return beta, point, const + res.fun


def bayes_classifier(joint: DiscreteJoint, costs=(1.0, 1.0)) -> DeterministicClassifier:
    """Cost-minimizing deterministic table; ties go to label 0."""
    p = np.asarray(joint.p, dtype=float)
    c_fp, c_fn = costs
    return DeterministicClassifier((c_fn * p[:, :, 1] > c_fp * p[:, :, 0]).astype(int))


def pseudo_betas(joint: DiscreteJoint, in_clf: Classifier, opt_clf: Classifier) -> np.ndarray:
    """Coefficients ``beta[yhat, a, y] = sum_x P(Yin=1|a,x) P(x|a,y,Yopt=yhat)``.

    Keeps exact arithmetic for exact joints and tables. Raises
    :class:`ConditioningError` when some ``P(a, y, yhat)`` is zero.
    """
    p_in = in_clf.p1_table()
    p_opt = opt_clf.p1_table()
    shape = (joint.a_levels, joint.x_levels)
    if p_in.shape != shape or p_opt.shape != shape:
        raise DimensionError("classifier tables must match the joint's (a, x) levels")
    p = joint.p
    out = np.empty((2, joint.a_levels, 2), dtype=object if joint.exact else float)
    for yh, a, y in itertools.product((0, 1), range(joint.a_levels), (0, 1)):
        weights = [(p_opt[a, x] if yh == 1 else 1 - p_opt[a, x]) * p[a, x, y]
                   for x in range(joint.x_levels)]
        total = sum(weights)
        if total == 0:
            raise ConditioningError(f"P(a={a}, y={y}, yhat={yh}) is zero")
        out[yh, a, y] = sum(p_in[a, x] * w for x, w in enumerate(weights)) / total
    return out


class _SweepLp:
    """EO-constrained LPs over a stochastic table ``p1[a, x]`` plus the shared tpr."""

    def __init__(self, joint: DiscreteJoint, extra_eq: Sequence[np.ndarray] = ()):
        p = np.asarray(joint.p, dtype=float)
        cond = p / p.sum(axis=1, keepdims=True)
        n_a, n_x = p.shape[0], p.shape[1]
        self.nv = n_a * n_x + 1
        rows = []
        for a in range(n_a):
            row_f = np.zeros(self.nv)
            row_f[a * n_x:(a + 1) * n_x] = cond[a, :, 0]
            row_t = np.zeros(self.nv)
            row_t[a * n_x:(a + 1) * n_x] = cond[a, :, 1]
            row_t[-1] = -1.0
            rows.append(("fpr", row_f))
            rows.append(("tpr", row_t))
        self.rows = rows
        self.extra = [np.append(np.asarray(r, dtype=float), 0.0) for r in extra_eq]
        self.ub = np.ones(self.nv)

    def tpr_range(self, fpr: float) -> Optional[tuple[float, float]]:
        A = [r for _, r in self.rows] + self.extra
        b = [fpr if kind == "fpr" else 0.0 for kind, _ in self.rows] + [0.0] * len(self.extra)
        A = np.array(A)
        b = np.array(b)
        out = []
        for sign in (1.0, -1.0):
            c = np.zeros(self.nv)
            c[-1] = sign
            try:
                res = lp.solve(lp.LpProblem(c, A_eq=A, b_eq=b, ub=self.ub))
            except lp.Infeasible:
                return None
            out.append(res.x[-1])
        return out[0], out[1]


def _sweep(sweeper: _SweepLp, grid: int) -> ConvexRegion:
    fprs, lows, highs = [], [], []
    for f in np.linspace(0.0, 1.0, grid):
        rng = sweeper.tpr_range(float(f))
        if rng is None:
            continue
        fprs.append(float(f))
        lows.append(min(max(rng[0], 0.0), 1.0))
        highs.append(min(max(rng[1], 0.0), 1.0))
    return region_from_chains(fprs, lows, highs)


def feasible_area_in(joint: DiscreteJoint, grid: int = DEFAULT_GRID) -> ConvexRegion:
    """EO feasible area of stochastic classifiers on ``(A, X)``, swept over fpr."""
    return _sweep(_SweepLp(joint), grid)


def feasible_in_contains(joint: DiscreteJoint, point, tol: float = 1e-6) -> bool:
    """Exact membership of a rate point in the in-processing feasible area.

    Solves the tpr range LP at the point's fpr, so no sweep grid is involved.
    """
    fpr, tpr = float(point[0]), float(point[1])
    sweeper = _SweepLp(joint)
    for f in (fpr, min(max(fpr, 0.0), 1.0)):
        rng = sweeper.tpr_range(f)
        if rng is not None and rng[0] - tol <= tpr <= rng[1] + tol and abs(f - fpr) <= tol:
            return True
    return False


def pseudo_constraint_rows(joint: DiscreteJoint, opt_clf: Classifier) -> list[np.ndarray]:
    """Linear rows in ``p1[a, x]`` encoding ``beta[yhat, a, 0] == beta[yhat, a, 1]``.

    Pairs where one conditioning cell has zero probability carry no
    constraint: that beta never enters a positive rate.
    """
    p = np.asarray(joint.p, dtype=float)
    p_opt = np.asarray(opt_clf.p1_table(), dtype=float)
    n_a, n_x = p.shape[0], p.shape[1]
    rows = []
    for a, yh in itertools.product(range(n_a), (0, 1)):
        w_opt = p_opt[a] if yh == 1 else 1 - p_opt[a]
        coefs = []
        for y in (0, 1):
            w = w_opt * p[a, :, y]
            total = w.sum()
            if total <= 1e-15:
                break
            coefs.append(w / total)
        else:
            row = np.zeros(n_a * n_x)
            row[a * n_x:(a + 1) * n_x] = coefs[0] - coefs[1]
            if np.any(np.abs(row) > 1e-15):
                rows.append(row)
    return rows


def feasible_area_in_pseudo(joint: DiscreteJoint, opt_clf: Classifier,
                            grid: int = DEFAULT_GRID) -> ConvexRegion:
    """In-processing feasible area with the extra pseudo-constraint equalities."""
    return _sweep(_SweepLp(joint, pseudo_constraint_rows(joint, opt_clf)), grid)


class _PostSweepLp:
    """Sweep LP over post-processing parameters of a fixed base classifier."""

    def __init__(self, table_ayyhat):
        t = np.asarray(table_ayyhat, dtype=float)
        self.hat = t[:, :, 1] / t.sum(axis=2)
        self.n_a = t.shape[0]

    def tpr_range(self, fpr: float):
        n_a = self.n_a
        nv = 2 * n_a + 1
        rows, rhs = [], []
        for a in range(n_a):
            for y in (0, 1):
                row = np.zeros(nv)
                row[a] = 1 - self.hat[a, y]
                row[n_a + a] = self.hat[a, y]
                if y == 1:
                    row[-1] = -1.0
                rows.append(row)
                rhs.append(fpr if y == 0 else 0.0)
        out = []
        for sign in (1.0, -1.0):
            c = np.zeros(nv)
            c[-1] = sign
            try:
                res = lp.solve(lp.LpProblem(c, A_eq=np.array(rows), b_eq=np.array(rhs),
                                            ub=np.ones(nv)))
            except lp.Infeasible:
                return None
            out.append(res.x[-1])
        return out[0], out[1]


def feasible_area_post_sweep(table_ayyhat, grid: int = DEFAULT_GRID) -> ConvexRegion:
    """Post-processing feasible area by the same fpr sweep used for in-processing."""
    return _sweep(_PostSweepLp(table_ayyhat), grid)


def feasible_area_post_exact(joint: DiscreteJoint, opt_clf: Classifier) -> ConvexRegion:
    """Exact polygon of the post-processing feasible area of ``opt_clf``."""
    return feasible_area_post(positive_rates(joint.to_float(), opt_clf))


def fit_inprocess(joint: DiscreteJoint, costs=(1.0, 1.0), tau: float = 0.0,
                  extra_eq: Sequence[np.ndarray] = ()):
    """Loss-minimizing stochastic table ``p1[a, x]`` under (approximate) EO.

    Returns ``(StochasticClassifier, RocPoint, loss)`` where the point holds the
    shared rates (exact when ``tau == 0``).
    """
    p = np.asarray(joint.p, dtype=float)
    n_a, n_x = p.shape[0], p.shape[1]
    p_ay = p.sum(axis=1)
    cond = p / p_ay[:, None, :]
    w0, w1, const = _loss_coefficients(p_ay, costs)
    nv = n_a * n_x + 2
    c = np.zeros(nv)
    rows = []
    for a in range(n_a):
        sl = slice(a * n_x, (a + 1) * n_x)
        c[sl] += w0[a] * cond[a, :, 0] - w1[a] * cond[a, :, 1]
        for y in (0, 1):
            row = np.zeros(nv)
            row[sl] = cond[a, :, y]
            row[n_a * n_x + y] = -1.0
            rows.append(row)
    A = np.array(rows)
    extra = [np.concatenate([np.asarray(r, dtype=float), [0.0, 0.0]]) for r in extra_eq]
    ub = np.ones(nv)
    if tau == 0:
        A_eq = np.vstack([A] + extra) if extra else A
        res = lp.solve(lp.LpProblem(c, A_eq=A_eq, b_eq=np.zeros(A_eq.shape[0]), ub=ub))
    else:
        kw = {}
        if extra:
            kw = {"A_eq": np.array(extra), "b_eq": np.zeros(len(extra))}
        res = lp.solve(lp.LpProblem(c, A_ub=np.vstack([A, -A]),
                                    b_ub=np.full(2 * A.shape[0], tau), ub=ub, **kw))
    table = np.clip(res.x[:n_a * n_x].reshape(n_a, n_x), 0.0, 1.0)
    point = RocPoint(float(res.x[-2]), float(res.x[-1]))
    return StochasticClassifier(table), point, const + res.fun

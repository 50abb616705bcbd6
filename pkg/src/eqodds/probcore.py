"""Exact finite probability arithmetic for binary classification.

Joint tables are indexed ``p[a, x, y]``. Entries may be floats or
:class:`fractions.Fraction` (exact mode); every operation here keeps
whatever number type it is given, so exact inputs give exact outputs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, NamedTuple, Optional, Union

import numpy as np

FLOAT_TOL = 1e-12


class DimensionError(ValueError):
    """Raised when table arities do not agree."""


class UndefinedRateError(ValueError):
    """Raised when a group lacks rows for one of the labels."""


class RocPoint(NamedTuple):
    fpr: float
    tpr: float

    def flipped(self) -> "RocPoint":
        return RocPoint(1 - self.fpr, 1 - self.tpr)


def _is_exact(arr: np.ndarray) -> bool:
    return arr.dtype == object


def _as_table(values, exact: bool) -> np.ndarray:
    if exact:
        arr = np.array(values, dtype=object)
        return np.vectorize(Fraction, otypes=[object])(arr)
    return np.asarray(values, dtype=float)


class DiscreteJoint:
    """Joint probability table over finite ``A x X x Y``.

    Parameters
    ----------
    p : array-like of shape (a_levels, x_levels, y_levels)
        Probabilities. Strings or Fractions are kept exact when ``exact``.
    exact : bool
        Store entries as :class:`~fractions.Fraction`.
    """

    def __init__(self, p, exact: bool = False):
        table = _as_table(p, exact)
        if table.ndim != 3:
            raise DimensionError(f"joint table must be 3-d (a, x, y), got shape {table.shape}")
        if any(s < 1 for s in table.shape):
            raise DimensionError("every axis needs at least one level")
        if exact:
            if any(v < 0 for v in table.flat):
                raise ValueError("probabilities must be nonnegative")
            if sum(table.flat) != 1:
                raise ValueError(f"probabilities sum to {sum(table.flat)}, not 1")
        else:
            if not np.all(np.isfinite(table)) or np.any(table < 0):
                raise ValueError("probabilities must be finite and nonnegative")
            if abs(table.sum() - 1.0) > FLOAT_TOL:
                raise ValueError(f"probabilities sum to {table.sum()!r}, not 1")
        p_ay = table.sum(axis=1)
        if any(v <= 0 for v in p_ay.flat):
            bad = [tuple(int(i) for i in idx) for idx in zip(*np.nonzero(p_ay <= 0))]
            raise ValueError(f"P(A=a, Y=y) must be positive for every cell; zero at (a, y) = {bad}")
        self.p = table
        self.p.flags.writeable = False

    @classmethod
    def from_conditionals(cls, p_ay, p_x_given_ay, exact: bool = False) -> "DiscreteJoint":
        """Build from ``P(a, y)`` (shape (A, Y)) and ``P(x | a, y)`` (shape (A, X, Y))."""
        p_ay = _as_table(p_ay, exact)
        cond = _as_table(p_x_given_ay, exact)
        if cond.ndim != 3 or p_ay.shape != (cond.shape[0], cond.shape[2]):
            raise DimensionError("P(a,y) must have shape (A, Y) matching P(x|a,y) of shape (A, X, Y)")
        return cls(cond * p_ay[:, None, :], exact=exact)

    @property
    def exact(self) -> bool:
        return _is_exact(self.p)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.p.shape  # type: ignore[return-value]

    @property
    def a_levels(self) -> int:
        return self.p.shape[0]

    @property
    def x_levels(self) -> int:
        return self.p.shape[1]

    @property
    def y_levels(self) -> int:
        return self.p.shape[2]

    def p_ay(self) -> np.ndarray:
        return self.p.sum(axis=1)

    def p_x_given_ay(self) -> np.ndarray:
        return self.p / self.p_ay()[:, None, :]

    def p_y_given_ax(self) -> np.ndarray:
        """``P(y | a, x)``; cells with ``P(a, x) = 0`` are filled with zeros."""
        p_ax = self.p.sum(axis=2)
        out = np.zeros_like(self.p)
        for a, x in itertools.product(range(self.a_levels), range(self.x_levels)):
            if p_ax[a, x] > 0:
                out[a, x] = self.p[a, x] / p_ax[a, x]
        return out

    def to_float(self) -> "DiscreteJoint":
        return DiscreteJoint(self.p.astype(float)) if self.exact else self

    def __eq__(self, other) -> bool:
        return isinstance(other, DiscreteJoint) and np.array_equal(self.p, other.p)

    def __repr__(self) -> str:
        kind = "exact" if self.exact else "float"
        return f"DiscreteJoint(shape={self.shape}, {kind})"


@dataclass(frozen=True)
class DeterministicClassifier:
    """Label table ``f[a, x]`` with entries in ``{0, 1}``."""

    f: np.ndarray

    def __post_init__(self):
        table = np.asarray(self.f, dtype=int)
        if table.ndim != 2:
            raise DimensionError("classifier table must be 2-d (a, x)")
        if not np.all((table == 0) | (table == 1)):
            raise ValueError("classifier labels must be 0 or 1")
        table.flags.writeable = False
        object.__setattr__(self, "f", table)

    @classmethod
    def constant(cls, label: int, a_levels: int, x_levels: int) -> "DeterministicClassifier":
        return cls(np.full((a_levels, x_levels), label, dtype=int))

    def flipped(self) -> "DeterministicClassifier":
        return DeterministicClassifier(1 - self.f)

    def p1_table(self) -> np.ndarray:
        return self.f.astype(int)

    def is_constant(self) -> bool:
        return bool(np.all(self.f == self.f.flat[0]))

    def __eq__(self, other) -> bool:
        return isinstance(other, DeterministicClassifier) and np.array_equal(self.f, other.f)

    def __hash__(self) -> int:
        return hash(self.f.tobytes())


@dataclass(frozen=True, eq=False)
class StochasticClassifier:
    """Table ``p1[a, x] = P(Yhat = 1 | a, x)``."""

    p1: np.ndarray

    def __post_init__(self):
        table = np.asarray(self.p1)
        if table.dtype != object:
            table = table.astype(float)
        if table.ndim != 2:
            raise DimensionError("classifier table must be 2-d (a, x)")
        if any(not (0 <= v <= 1) for v in table.flat):
            raise ValueError("entries of a stochastic classifier must lie in [0, 1]")
        table = table.copy()
        table.flags.writeable = False
        object.__setattr__(self, "p1", table)

    def flipped(self) -> "StochasticClassifier":
        return StochasticClassifier(1 - self.p1)

    def p1_table(self) -> np.ndarray:
        return self.p1


Classifier = Union[DeterministicClassifier, StochasticClassifier]


def _check_binary(joint: DiscreteJoint) -> None:
    if joint.y_levels != 2:
        raise DimensionError(
            f"binary Y required for classification rates, joint has {joint.y_levels} labels"
        )


def positive_rates(joint: DiscreteJoint, clf: Classifier) -> dict[int, RocPoint]:
    """Per-group ``(P(Yhat=1 | a, Y=0), P(Yhat=1 | a, Y=1))`` by exact summation over x."""
    _check_binary(joint)
    table = clf.p1_table()
    if table.shape != (joint.a_levels, joint.x_levels):
        raise DimensionError(
            f"classifier shape {table.shape} does not match joint (a, x) = "
            f"{(joint.a_levels, joint.x_levels)}"
        )
    cond = joint.p_x_given_ay()
    rates = {}
    for a in range(joint.a_levels):
        fpr = sum(table[a, x] * cond[a, x, 0] for x in range(joint.x_levels))
        tpr = sum(table[a, x] * cond[a, x, 1] for x in range(joint.x_levels))
        rates[a] = RocPoint(fpr, tpr)
    return rates


def eo_violation(rates: Mapping[int, RocPoint]):
    """Largest absolute gap in FPR or TPR between any two groups."""
    if not rates:
        raise ValueError("eo_violation needs at least one group")
    points = list(rates.values())
    fprs = [p.fpr for p in points]
    tprs = [p.tpr for p in points]
    return max(max(fprs) - min(fprs), max(tprs) - min(tprs))


def accuracy(joint: DiscreteJoint, clf: Classifier):
    """Expected accuracy of ``clf`` under ``joint``."""
    rates = positive_rates(joint, clf)
    p_ay = joint.p_ay()
    return sum(p_ay[a, 0] * (1 - r.fpr) + p_ay[a, 1] * r.tpr for a, r in rates.items())


@dataclass(eq=False)
class Sample:
    """Finite dataset of ``(a, x, y)`` rows with an optional prediction column.

    ``x`` is stored as a 2-d float array (n, d). ``codebook`` maps a column
    name to the sorted labels its integer codes stand for.
    """

    a: np.ndarray
    x: np.ndarray
    y: np.ndarray
    yhat: Optional[np.ndarray] = None
    feature_names: tuple[str, ...] = ()
    protected_name: str = "a"
    target_name: str = "y"
    codebook: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float).reshape(-1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        self.x = x
        n = self.a.shape[0]
        if n < 1:
            raise ValueError("a sample needs at least one row")
        if self.y.shape[0] != n or self.x.shape[0] != n:
            raise DimensionError("columns a, x, y must have the same number of rows")
        if self.yhat is not None:
            self.yhat = np.asarray(self.yhat, dtype=float).reshape(-1)
            if self.yhat.shape[0] != n:
                raise DimensionError("prediction column length differs from the sample")
        if not self.feature_names:
            self.feature_names = tuple(f"x{i}" for i in range(self.x.shape[1]))
        if len(self.feature_names) != self.x.shape[1]:
            raise DimensionError("feature_names must match the number of feature columns")

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def with_predictions(self, yhat) -> "Sample":
        return Sample(self.a, self.x, self.y, yhat, self.feature_names,
                      self.protected_name, self.target_name, dict(self.codebook))

    def subset(self, idx) -> "Sample":
        yhat = None if self.yhat is None else self.yhat[idx]
        return Sample(self.a[idx], self.x[idx], self.y[idx], yhat, self.feature_names,
                      self.protected_name, self.target_name, dict(self.codebook))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        same_pred = (self.yhat is None and other.yhat is None) or (
            self.yhat is not None and other.yhat is not None
            and np.array_equal(self.yhat, other.yhat))
        return (np.array_equal(self.a, other.a) and np.array_equal(self.x, other.x)
                and np.array_equal(self.y, other.y) and same_pred
                and self.feature_names == other.feature_names
                and self.codebook == other.codebook)


def empirical_rates(s: Sample) -> dict[int, RocPoint]:
    """Plug-in estimates of per-group positive rates from a sample with predictions.

    Predictions may be hard labels or probabilities of predicting 1.
    """
    if s.yhat is None:
        raise ValueError("sample has no prediction column")
    if not np.all((s.y == 0) | (s.y == 1)):
        raise DimensionError("empirical rates need a binary target")
    rates = {}
    for a in np.unique(s.a):
        in_group = s.a == a
        cells = []
        for y in (0, 1):
            mask = in_group & (s.y == y)
            if not mask.any():
                raise UndefinedRateError(f"group a={a:g} has no rows with y={y}")
            cells.append(float(s.yhat[mask].mean()))
        key = int(a) if float(a).is_integer() else a
        rates[key] = RocPoint(*cells)
    return rates


def empirical_joint(s: Sample, exact: bool = False) -> DiscreteJoint:
    """Frequency table of a sample with integer-coded a, a single x column and binary y."""
    a = s.a.astype(int)
    x = s.x[:, 0].astype(int)
    y = s.y.astype(int)
    if s.x.shape[1] != 1 or np.any(a != s.a) or np.any(x != s.x[:, 0]) or np.any(y != s.y):
        raise DimensionError("empirical_joint needs integer codes and a single feature column")
    shape = (a.max() + 1, x.max() + 1, 2)
    counts = np.zeros(shape, dtype=int)
    np.add.at(counts, (a, x, y), 1)
    if exact:
        return DiscreteJoint(np.vectorize(lambda c: Fraction(int(c), s.n), otypes=[object])(counts),
                             exact=True)
    return DiscreteJoint(counts / s.n)

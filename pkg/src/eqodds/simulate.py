"""Synthetic data and file ingestion.

Randomness comes from numpy's ``Generator(PCG64(seed))``; every generator
here is a pure function of its parameters and seed.
"""

from __future__ import annotations

import csv
import io
import json
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .noise import TABLE2_SCM, TABLE3_SCM, LinearScm, NoiseLaw
from .probcore import DiscreteJoint, Sample

__all__ = [
    "IngestionError", "NoiseLaw", "LinearScm", "TABLE2_SCM", "TABLE3_SCM", "rng_for",
    "gen_linear_scm", "gen_discrete", "appendix_joint", "load_csv", "dump_csv",
    "joint_to_json", "joint_from_json", "read_joint", "classifier_from_json",
]


class IngestionError(ValueError):
    pass


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def gen_linear_scm(scm: LinearScm, n: int, seed: int, a_law: str = "bernoulli",
                   thm1: bool = False) -> Sample:
    """Draw ``n`` rows of ``(A, X, Y)`` from the linear model; the hidden H is dropped.

    ``a_law`` is ``"bernoulli"`` (fair coin on {0, 1}) or ``"uniform"`` (U[0, 1]).
    With ``thm1`` the model must satisfy ``c != 0`` and ``qc + bd != 0``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if thm1:
        scm.check_theorem_hypotheses()
    rng = rng_for(seed)
    if a_law == "bernoulli":
        a = rng.integers(0, 2, n).astype(float)
    elif a_law == "uniform":
        a = rng.uniform(0.0, 1.0, n)
    else:
        raise ValueError(f"unknown law for A: {a_law!r}")
    x = scm.q * a + scm.e_x.sample(rng, n)
    h = scm.b * a + scm.e_h.sample(rng, n)
    y = scm.c * x + scm.d * h + scm.e_y.sample(rng, n)
    return Sample(a, x, y, feature_names=("x",))


def gen_discrete(joint: DiscreteJoint, n: int, seed: int) -> Sample:
    """Multinomial sample of ``n`` rows from a joint table (codes a, x, y)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = rng_for(seed)
    p = np.asarray(joint.p, dtype=float).reshape(-1)
    p = p / p.sum()
    counts = rng.multinomial(n, p)
    cells = np.repeat(np.arange(p.size), counts)
    rng.shuffle(cells)
    a, x, y = np.unravel_index(cells, joint.shape)
    return Sample(a, x, y, feature_names=("x",))


_APPENDIX_P_AY = [["0.2", "0.4"], ["0.3", "0.1"]]
# P(X=1 | a, y) keyed (a, y)
_APPENDIX_X1 = {
    "expL": {(0, 0): "0.3", (1, 0): "0.7", (0, 1): "0.8", (1, 1): "0.2"},
    "expR": {(0, 0): "0.4", (1, 0): "0.7", (0, 1): "0.6", (1, 1): "0.2"},
    # X independent of A given Y; the values themselves are illustrative
    "indep": {(0, 0): "0.3", (1, 0): "0.3", (0, 1): "0.8", (1, 1): "0.8"},
}


def appendix_joint(name: str, exact: bool = True) -> DiscreteJoint:
    """Binary A, X, Y joints with ``P(A, Y) = [[.2, .4], [.3, .1]]``.

    ``name`` is ``"expL"`` (a deterministic fair f exists), ``"expR"`` (none
    exists) or ``"indep"`` (X independent of A given Y).
    """
    try:
        x1 = _APPENDIX_X1[name]
    except KeyError:
        raise ValueError(f"unknown appendix joint {name!r}; expected one of "
                         f"{sorted(_APPENDIX_X1)}") from None
    cond = [[[0, 0], [0, 0]], [[0, 0], [0, 0]]]
    for (a, y), v in x1.items():
        cond[a][1][y] = Fraction(v)
        cond[a][0][y] = 1 - Fraction(v)
    joint = DiscreteJoint.from_conditionals([[Fraction(v) for v in row] for row in _APPENDIX_P_AY],
                                            cond, exact=True)
    return joint if exact else joint.to_float()


def _parse_number(cell: str) -> Optional[float]:
    try:
        return float(cell)
    except ValueError:
        return None


def load_csv(source, protected: str, target: str, pred_col: Optional[str] = None) -> Sample:
    """Read a headed CSV into a :class:`Sample`.

    Columns other than the protected, target and prediction columns are
    features. A column holding any non-numeric cell is categorical: its values
    are coded by their position in sorted order and the labels go to
    ``Sample.codebook``.
    """
    if isinstance(source, (str, Path)):
        text = Path(source).read_text()
    else:
        text = source.read()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise IngestionError("CSV is empty (header row required)")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    if not body:
        raise IngestionError("CSV has a header but no data rows")
    for col in [protected, target] + ([pred_col] if pred_col else []):
        if col not in header:
            raise IngestionError(f"column {col!r} not found in header {header}")
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise IngestionError(f"row {i}: expected {len(header)} cells, found {len(r)}")
        for name, cell in zip(header, r):
            if cell.strip() == "":
                raise IngestionError(f"row {i}: empty cell in column {name!r}")

    columns: dict[str, np.ndarray] = {}
    codebook: dict[str, list[str]] = {}
    for j, name in enumerate(header):
        cells = [r[j].strip() for r in body]
        nums = [_parse_number(c) for c in cells]
        if all(v is not None for v in nums):
            columns[name] = np.array(nums, dtype=float)
        else:
            labels = sorted(set(cells))
            index = {lab: k for k, lab in enumerate(labels)}
            columns[name] = np.array([index[c] for c in cells], dtype=float)
            codebook[name] = labels
    features = [h for h in header if h not in (protected, target, pred_col)]
    x = np.column_stack([columns[h] for h in features]) if features else np.zeros((len(body), 0))
    return Sample(columns[protected], x, columns[target],
                  columns[pred_col] if pred_col else None,
                  feature_names=tuple(features), protected_name=protected, target_name=target,
                  codebook=codebook)


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def dump_csv(s: Sample, pred_name: str = "yhat") -> str:
    """Serialize a sample; categorical columns are written back as their labels."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    names = [s.protected_name, *s.feature_names, s.target_name]
    if s.yhat is not None:
        names.append(pred_name)
    w.writerow(names)
    cols = [s.a, *s.x.T, s.y] + ([s.yhat] if s.yhat is not None else [])
    for i in range(s.n):
        row = []
        for name, col in zip(names, cols):
            v = col[i]
            row.append(s.codebook[name][int(v)] if name in s.codebook else _fmt(v))
        w.writerow(row)
    return out.getvalue()


def joint_to_json(joint: DiscreteJoint) -> str:
    """Keyed table: ``{"shape": [A, X, Y], "exact": bool, "p": {"a,x,y": value}}``.

    Exact joints store values as fraction strings like ``"3/50"``.
    """
    entries = {}
    for idx in np.ndindex(*joint.shape):
        v = joint.p[idx]
        entries[",".join(map(str, idx))] = str(v) if joint.exact else float(v)
    return json.dumps({"format": "eqodds-joint/1", "shape": list(joint.shape),
                       "exact": joint.exact, "p": entries}, indent=1, sort_keys=True)


def joint_from_json(text: str) -> DiscreteJoint:
    doc = json.loads(text)
    try:
        shape = tuple(int(s) for s in doc["shape"])
        exact = bool(doc.get("exact", False))
        entries = doc["p"]
    except (KeyError, TypeError, ValueError) as err:
        raise IngestionError(f"malformed joint file: {err}") from None
    table = np.zeros(shape, dtype=object if exact else float)
    if exact:
        table[...] = Fraction(0)
    for key, v in entries.items():
        idx = tuple(int(k) for k in key.split(","))
        table[idx] = Fraction(str(v)) if exact else float(v)
    return DiscreteJoint(table, exact=exact)


def read_joint(path) -> DiscreteJoint:
    return joint_from_json(Path(path).read_text())


def classifier_from_json(text: str):
    """``{"f": [[...]]}`` for a label table or ``{"p1": [[...]]}`` for probabilities."""
    from .probcore import DeterministicClassifier, StochasticClassifier

    doc = json.loads(text)
    if "f" in doc:
        return DeterministicClassifier(np.array(doc["f"], dtype=int))
    if "p1" in doc:
        return StochasticClassifier(np.array(doc["p1"], dtype=float))
    raise IngestionError("classifier file needs an 'f' or 'p1' table")


def random_joint(rng: np.random.Generator, shape: Sequence[int] = (2, 2, 2),
                 concentration: float = 1.0) -> DiscreteJoint:
    """Dirichlet-distributed joint table (every cell positive almost surely)."""
    p = rng.dirichlet(np.full(int(np.prod(shape)), concentration)).reshape(shape)
    p = p / p.sum()
    return DiscreteJoint(p)

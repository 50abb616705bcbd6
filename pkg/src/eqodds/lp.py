"""Small dense two-phase simplex with Bland's rule.

Problems here have at most a few hundred variables, so a full tableau is
fine. Bland's rule (lowest eligible index enters, lowest basic index wins
ratio ties) guarantees termination on the degenerate vertices that ROC
polygons produce.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

TOL = 1e-10


class LpError(RuntimeError):
    pass


class Infeasible(LpError):
    pass


class Unbounded(LpError):
    pass


@dataclass
class LpProblem:
    """minimize ``c @ x`` s.t. ``A_eq x = b_eq``, ``A_ub x <= b_ub``, ``lb <= x <= ub``.

    ``ub`` entries may be ``inf``.
    """

    c: np.ndarray
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    A_ub: Optional[np.ndarray] = None
    b_ub: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.size
        self.A_eq, self.b_eq = _rows(self.A_eq, self.b_eq, n, "equality")
        self.A_ub, self.b_ub = _rows(self.A_ub, self.b_ub, n, "inequality")
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(-1)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).reshape(-1)
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bounds must have one entry per variable")
        if not np.all(np.isfinite(self.lb)):
            raise ValueError("lower bounds must be finite")
        if np.any(self.lb > self.ub):
            raise Infeasible("a lower bound exceeds its upper bound")

    @property
    def n_vars(self) -> int:
        return self.c.size


def _rows(A, b, n, kind):
    if A is None:
        return np.zeros((0, n)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.shape != (b.size, n):
        raise ValueError(f"{kind} constraints have shape {A.shape}, expected ({b.size}, {n})")
    return A, b


@dataclass
class LpResult:
    x: np.ndarray
    fun: float
    iterations: int


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    for r in range(T.shape[0]):
        if r != row and T[r, col] != 0.0:
            T[r] -= T[r, col] * T[row]


def _run_simplex(T: np.ndarray, basis: list[int], n_cols: int, max_iter: int) -> int:
    """Minimize the objective stored in the last row of T (reduced costs).

    Columns ``>= n_cols`` are never allowed to enter.
    """
    it = 0
    m = T.shape[0] - 1
    while True:
        cost = T[-1, :n_cols]
        entering = next((j for j in range(n_cols) if cost[j] < -TOL), None)
        if entering is None:
            return it
        col = T[:m, entering]
        best = None
        for i in range(m):
            if col[i] > TOL:
                ratio = T[i, -1] / col[i]
                if (best is None or ratio < best[0] - TOL
                        or (abs(ratio - best[0]) <= TOL and basis[i] < basis[best[1]])):
                    best = (ratio, i)
        if best is None:
            raise Unbounded("objective is unbounded below")
        _pivot(T, best[1], entering)
        basis[best[1]] = entering
        it += 1
        if it > max_iter:
            raise LpError("simplex iteration limit reached")


def solve(problem: LpProblem, max_iter: int = 50_000) -> LpResult:
    """Solve an :class:`LpProblem`; raises :class:`Infeasible` or :class:`Unbounded`."""
    n = problem.n_vars
    lb, ub = problem.lb, problem.ub
    # shift x = lb + z, z >= 0
    A_eq, b_eq = problem.A_eq, problem.b_eq - problem.A_eq @ lb
    A_ub, b_ub = problem.A_ub, problem.b_ub - problem.A_ub @ lb
    finite_ub = np.nonzero(np.isfinite(ub))[0]
    if finite_ub.size:
        extra = np.zeros((finite_ub.size, n))
        extra[np.arange(finite_ub.size), finite_ub] = 1.0
        A_ub = np.vstack([A_ub, extra])
        b_ub = np.concatenate([b_ub, (ub - lb)[finite_ub]])
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq
    n_slack = m_ub
    # rows: [A_ub | I | 0] z = b_ub ; [A_eq | 0 | 0] z = b_eq ; then artificials
    A = np.zeros((m, n + n_slack))
    A[:m_ub, :n] = A_ub
    A[:m_ub, n:n + n_slack] = np.eye(m_ub)
    A[m_ub:, :n] = A_eq
    b = np.concatenate([b_ub, b_eq])
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1
    n_struct = n + n_slack
    T = np.zeros((m + 1, n_struct + m + 1))
    T[:m, :n_struct] = A
    T[:m, n_struct:n_struct + m] = np.eye(m)
    T[:m, -1] = b
    basis = list(range(n_struct, n_struct + m))
    # phase 1: minimize the sum of artificials
    T[-1, :n_struct] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    iters = _run_simplex(T, basis, n_struct, max_iter)
    if -T[-1, -1] > 1e-8 * max(1.0, np.abs(b).max(initial=0.0)):
        raise Infeasible(f"no feasible point (phase-1 residual {-T[-1, -1]:.3e})")
    # drive artificials out of the basis where possible
    for i, var in enumerate(basis):
        if var >= n_struct:
            j = next((j for j in range(n_struct) if abs(T[i, j]) > 1e-9), None)
            if j is not None:
                _pivot(T, i, j)
                basis[i] = j
    keep = [i for i, var in enumerate(basis) if var < n_struct]
    T = np.vstack([T[keep], T[-1:]])
    basis = [basis[i] for i in keep]
    T = np.delete(T, np.s_[n_struct:n_struct + m], axis=1)
    # phase 2
    c = np.concatenate([problem.c, np.zeros(n_slack)])
    T[-1, :] = 0.0
    T[-1, :n_struct] = c
    for i, var in enumerate(basis):
        T[-1] -= c[var] * T[i]
    iters += _run_simplex(T, basis, n_struct, max_iter)
    z = np.zeros(n_struct)
    for i, var in enumerate(basis):
        z[var] = T[i, -1]
    x = lb + z[:n]
    return LpResult(x=x, fun=float(problem.c @ x), iterations=iters)

"""Kernel measure of conditional dependence and a local-permutation CI test.

The statistic measures dependence between a prediction ``t`` and the
protected feature ``a`` given the label ``y``. With centered Gram matrices
``G`` and ridge ``c = n * ridge``, each variable gets the regularized
projection ``R = G (G + c I)^-1``, and

    kmcd = Tr[R_tz (I - R_z) R_a (I - R_z)]

where ``tz`` is the pair ``(t, y)`` (product RBF kernel) and ``z`` is ``y``.
Both factors are positive semidefinite, so the trace is nonnegative.

Small samples use dense eigendecompositions and support an exact gradient
in ``t``. Large samples use pivoted incomplete Cholesky factors.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

MIN_N = 8


class KernelArgumentError(ValueError):
    pass


class DegenerateTestWarning(UserWarning):
    pass


@dataclass(frozen=True)
class KernelConfig:
    """Kernel and test settings.

    bandwidth : ``"median"`` for the median heuristic per variable,
        ``"variance"`` for ``sigma^2 = var`` (smooth in the data, so the
        statistic is differentiable everywhere), or a fixed sigma.
    ridge : regularizer per sample; the ridge added to ``G`` is ``n * ridge``.
    perms : permutation count for :func:`ci_test`.
    bins : y-quantile bins for the local permutation; ``None`` means
        ``max(4, ceil(n ** (1/3)))``.
    a_kernel : ``"auto"``, ``"delta"`` or ``"rbf"``. Auto uses the delta
        kernel when ``a`` takes at most 20 integer values.
    dense_max_n : largest n handled with dense eigendecompositions.
    max_rank, chol_tol : incomplete Cholesky limits for larger n.
    """

    bandwidth: Union[str, float] = "median"
    ridge: float = 1e-3
    perms: int = 199
    bins: Optional[int] = None
    a_kernel: str = "auto"
    dense_max_n: int = 1000
    max_rank: int = 400
    chol_tol: float = 1e-7

    def __post_init__(self):
        if not self.ridge > 0:
            raise ValueError("ridge must be positive")
        if self.perms < 19:
            raise ValueError("use at least 19 permutations")
        if self.bins is not None and self.bins < 2:
            raise ValueError("need at least 2 bins")
        if self.a_kernel not in ("auto", "delta", "rbf"):
            raise ValueError(f"unknown a_kernel {self.a_kernel!r}")
        if isinstance(self.bandwidth, str):
            if self.bandwidth not in ("median", "variance"):
                raise ValueError("bandwidth must be 'median', 'variance' or a positive number")
        elif not self.bandwidth > 0:
            raise ValueError("fixed bandwidth must be positive")

    def n_bins(self, n: int) -> int:
        return self.bins if self.bins is not None else max(4, math.ceil(n ** (1.0 / 3.0)))

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class CiTestResult:
    statistic: float
    p_value: float
    n: int
    perms: int
    bins: int
    config: dict = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [f"statistic={self.statistic:.10g}", f"p_value={self.p_value:.6g}",
               f"n={self.n}", f"perms={self.perms}", f"bins={self.bins}"]
        out += [f"config.{k}={v}" for k, v in sorted(self.config.items())]
        return out


def _validate(t, a, y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t = np.asarray(t, dtype=float).reshape(-1)
    a = np.asarray(a, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if not (t.size == a.size == y.size):
        raise KernelArgumentError("t, a and y must have equal lengths")
    if t.size < MIN_N:
        raise KernelArgumentError(f"need at least {MIN_N} samples, got {t.size}")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(a)) and np.all(np.isfinite(y))):
        raise KernelArgumentError("inputs contain NaN or infinite values")
    return t, a, y


def _pair_sq(v: np.ndarray) -> np.ndarray:
    return (v[:, None] - v[None, :]) ** 2


def _median_sq(v: np.ndarray, limit: int = 1000) -> float:
    """Median heuristic on squared distances; evenly spaced subsample beyond ``limit``."""
    if v.size > limit:
        v = v[np.linspace(0, v.size - 1, limit).astype(int)]
    iu = np.triu_indices(v.size, 1)
    med = float(np.median(_pair_sq(v)[iu]))
    return med if med > 0 else 1.0


def _var_sq(v: np.ndarray) -> float:
    var = float(np.var(v))
    return var if var > 0 else 1.0


def _sigma_sq(v: np.ndarray, cfg: KernelConfig) -> float:
    if cfg.bandwidth == "median":
        return _median_sq(v)
    if cfg.bandwidth == "variance":
        return _var_sq(v)
    return float(cfg.bandwidth) ** 2


def _a_is_discrete(a: np.ndarray, cfg: KernelConfig) -> bool:
    if cfg.a_kernel == "delta":
        return True
    if cfg.a_kernel == "rbf":
        return False
    return bool(np.all(a == np.round(a))) and np.unique(a).size <= 20


def _rbf(v: np.ndarray, s2: float) -> np.ndarray:
    return np.exp(-_pair_sq(v) / (2.0 * s2))


def _center(K: np.ndarray) -> np.ndarray:
    return K - K.mean(axis=0, keepdims=True) - K.mean(axis=1, keepdims=True) + K.mean()


def _dense_factor(K: np.ndarray, c: float):
    lam, U = np.linalg.eigh(_center(K))
    lam = np.clip(lam, 0.0, None)
    w = lam / (lam + c)
    keep = w > 1e-14
    return U[:, keep], w[keep]


def _incomplete_cholesky(kernel_column, n: int, max_rank: int, tol: float) -> np.ndarray:
    diag = np.ones(n)
    L = np.zeros((n, max_rank))
    m = 0
    while m < max_rank:
        j = int(np.argmax(diag))
        if diag[j] <= tol:
            break
        col = kernel_column(j) - L[:, :m] @ L[j, :m]
        L[:, m] = col / math.sqrt(diag[j])
        diag -= L[:, m] ** 2
        diag[j] = 0.0
        m += 1
    return L[:, :m]


def _lowrank_factor(L: np.ndarray, c: float):
    Lc = L - L.mean(axis=0, keepdims=True)
    U, s, _ = np.linalg.svd(Lc, full_matrices=False)
    w = s ** 2 / (s ** 2 + c)
    keep = w > 1e-14
    return U[:, keep], w[keep]


def _onehot_factor(a: np.ndarray, c: float):
    levels = np.unique(a)
    phi = (a[:, None] == levels[None, :]).astype(float)
    return _lowrank_factor(phi, c)


class _Factors:
    """Ridge projections ``R = U diag(w) U^T`` for the three variables."""

    def __init__(self, t, a, y, cfg: KernelConfig):
        n = t.size
        self.n = n
        self.c = n * cfg.ridge
        self.s2_t = _sigma_sq(t, cfg)
        self.s2_y = _sigma_sq(y, cfg)
        self.dense = n <= cfg.dense_max_n
        c = self.c
        self.Ua, self.wa = _a_factor(a, cfg, self.dense)
        if self.dense:
            Ky = _rbf(y, self.s2_y)
            self.Uz, self.wz = _dense_factor(Ky, c)
            self.Ux, self.wx = _dense_factor(_rbf(t, self.s2_t) * Ky, c)
        else:
            def col_y(j):
                return np.exp(-(y - y[j]) ** 2 / (2 * self.s2_y))

            def col_x(j):
                return np.exp(-(t - t[j]) ** 2 / (2 * self.s2_t)) * col_y(j)

            self.Uz, self.wz = _lowrank_factor(
                _incomplete_cholesky(col_y, n, cfg.max_rank, cfg.chol_tol), c)
            self.Ux, self.wx = _lowrank_factor(
                _incomplete_cholesky(col_x, n, cfg.max_rank, cfg.chol_tol), c)
        # (I - R_z) U_x scaled by sqrt(w_x)
        Q = self.Ux - self.Uz @ (self.wz[:, None] * (self.Uz.T @ self.Ux))
        self.Q = Q * np.sqrt(self.wx)[None, :]

    def statistic(self, Ua: np.ndarray) -> float:
        proj = self.Q.T @ Ua
        return float(np.sum(self.wa[None, :] * proj ** 2))


def _a_factor(a: np.ndarray, cfg: KernelConfig, dense: bool):
    n = a.size
    c = n * cfg.ridge
    if _a_is_discrete(a, cfg):
        return _onehot_factor(a, c)
    s2_a = _sigma_sq(a, cfg)
    if dense:
        return _dense_factor(_rbf(a, s2_a), c)
    La = _incomplete_cholesky(lambda j: np.exp(-(a - a[j]) ** 2 / (2 * s2_a)), n,
                              cfg.max_rank, cfg.chol_tol)
    return _lowrank_factor(La, c)


def kmcd(t, a, y, cfg: KernelConfig = KernelConfig()) -> float:
    """Conditional dependence of ``t`` and ``a`` given ``y`` (nonnegative)."""
    t, a, y = _validate(t, a, y)
    fac = _Factors(t, a, y, cfg)
    return fac.statistic(fac.Ua)


def _median_sq_grad(t: np.ndarray, limit: int = 1000) -> tuple[float, np.ndarray]:
    """Median of squared pairwise distances and its gradient in ``t``.

    Uses the same subsample as :func:`_median_sq`.
    """
    n = t.size
    idx = np.linspace(0, n - 1, limit).astype(int) if n > limit else np.arange(n)
    iu, ju = np.triu_indices(idx.size, 1)
    iu, ju = idx[iu], idx[ju]
    d2 = (t[iu] - t[ju]) ** 2
    order = np.argsort(d2, kind="stable")
    m = d2.size
    picks = [order[m // 2]] if m % 2 else [order[m // 2 - 1], order[m // 2]]
    med = float(np.mean(d2[picks]))
    grad = np.zeros(n)
    if med <= 0:
        return 1.0, grad
    for k in picks:
        i, j = iu[k], ju[k]
        g = 2.0 * (t[i] - t[j]) / len(picks)
        grad[i] += g
        grad[j] -= g
    return med, grad


def _dense_value_grad(t: np.ndarray, y: np.ndarray, Ra: np.ndarray,
                      cfg: KernelConfig) -> tuple[float, np.ndarray]:
    # the statistic is linear in R_a, so Ra may also be a difference of two projections
    n = t.size
    c = n * cfg.ridge
    if cfg.bandwidth == "median":
        s2_t, ds2 = _median_sq_grad(t)
        s2_y = _median_sq(y)
    elif cfg.bandwidth == "variance":
        s2_t = _var_sq(t)
        ds2 = 2.0 * (t - t.mean()) / n if np.var(t) > 0 else np.zeros(n)
        s2_y = _var_sq(y)
    else:
        s2_t = s2_y = float(cfg.bandwidth) ** 2
        ds2 = np.zeros(n)
    D = t[:, None] - t[None, :]
    Kt = np.exp(-D ** 2 / (2 * s2_t))
    Ky = _rbf(y, s2_y)
    Kx = Kt * Ky

    def inv_shift(G):
        lam, U = np.linalg.eigh(G)
        return (U / (np.clip(lam, 0.0, None) + c)) @ U.T

    Gx = _center(Kx)
    Sx = inv_shift(Gx)
    Sz = inv_shift(_center(Ky))
    # I - R_z = c S_z ;  W = (I - R_z) R_a (I - R_z)
    W = (c * Sz) @ Ra @ (c * Sz)
    Rx = np.eye(n) - c * Sx
    value = float(np.sum(Rx * W))
    M = c * (Sx @ W @ Sx)
    N = _center(M)
    P = N * Kx
    grad = -(2.0 / s2_t) * np.sum(P * D, axis=1)
    if np.any(ds2):
        grad += np.sum(P * D ** 2) / (2.0 * s2_t ** 2) * ds2
    return value, grad


def _dense_ra(a: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    Ua, wa = _a_factor(a, cfg, dense=True)
    return (Ua * wa) @ Ua.T


def kmcd_and_grad(t, a, y, cfg: KernelConfig = KernelConfig()) -> tuple[float, np.ndarray]:
    """Statistic and its exact gradient with respect to ``t`` (dense path only)."""
    t, a, y = _validate(t, a, y)
    return _dense_value_grad(t, y, _dense_ra(a, cfg), cfg)


def kmcd_excess_and_grad(t, a, y, a_null, cfg: KernelConfig = KernelConfig()
                         ) -> tuple[float, np.ndarray]:
    """``kmcd(t, a, y) - kmcd(t, a_null, y)`` and its gradient with respect to ``t``.

    With ``a_null`` a within-bin shuffle of ``a`` (see :func:`local_permutation`)
    the subtracted term estimates the statistic's value under conditional
    independence, which removes the finite-sample bias that grows with the
    effective rank of the Gram matrix of ``t``. The excess can be negative.
    """
    t, a, y = _validate(t, a, y)
    a_null = np.asarray(a_null, dtype=float).reshape(-1)
    if a_null.shape != a.shape:
        raise KernelArgumentError("a_null must have the same length as a")
    return _dense_value_grad(t, y, _dense_ra(a, cfg) - _dense_ra(a_null, cfg), cfg)


def kmcd_grad(t, a, y, cfg: KernelConfig = KernelConfig()) -> np.ndarray:
    """Exact gradient of :func:`kmcd` with respect to ``t``."""
    return kmcd_and_grad(t, a, y, cfg)[1]


def _bin_labels(y: np.ndarray, bins: int) -> np.ndarray:
    ranks = np.argsort(np.argsort(y, kind="stable"), kind="stable")
    return (ranks * bins) // y.size


def local_permutation(y, bins: int, rng: np.random.Generator) -> np.ndarray:
    """Index permutation that shuffles rows only within y-quantile bins."""
    y = np.asarray(y, dtype=float).reshape(-1)
    labels = _bin_labels(y, bins)
    perm = np.arange(y.size)
    for b in range(bins):
        g = np.nonzero(labels == b)[0]
        if g.size > 1:
            perm[g] = rng.permutation(g)
    return perm


def ci_test(t, a, y, cfg: KernelConfig = KernelConfig(), seed: int = 0) -> CiTestResult:
    """Test ``t`` independent of ``a`` given ``y`` with a local-permutation null.

    ``a`` is shuffled only among rows sharing a y-quantile bin, and
    ``p = (1 + #{permuted >= observed}) / (perms + 1)``.
    """
    t, a, y = _validate(t, a, y)
    n = t.size
    bins = cfg.n_bins(n)
    labels = _bin_labels(y, bins)
    groups = [np.nonzero(labels == b)[0] for b in range(bins)]
    groups = [g for g in groups if g.size]
    if all(np.unique(a[g]).size <= 1 for g in groups):
        warnings.warn("a is constant within every y bin; the test has no power",
                      DegenerateTestWarning, stacklevel=2)
        return CiTestResult(kmcd(t, a, y, cfg), 1.0, n, cfg.perms, bins, cfg.as_dict())
    fac = _Factors(t, a, y, cfg)
    Ua = fac.Ua
    observed = fac.statistic(Ua)
    rng = np.random.Generator(np.random.PCG64(seed))
    exceed = 0
    perm = np.arange(n)
    # ties within floating noise count as exceeding
    slack = 1e-12 * max(1.0, abs(observed))
    for _ in range(cfg.perms):
        for g in groups:
            perm[g] = rng.permutation(g)
        if fac.statistic(Ua[perm]) >= observed - slack:
            exceed += 1
    p = (1 + exceed) / (cfg.perms + 1)
    return CiTestResult(observed, p, n, cfg.perms, bins, cfg.as_dict())

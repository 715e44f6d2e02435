"""Supermarket model with Poisson arrivals and batch phase-type service (GI/M/1 type)."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import solve_banded

from .core import (
    ALGEBRA_TOL,
    BlockGenerator,
    ChoiceDecomposition,
    TailSequence,
    hadamard_power,
    stationary_vector,
)
from .errors import ConvergenceError, StabilityError

EPS = 1e-12
RESIDUAL_TOL = 1e-10
MAX_ITER = 1_000_000


@dataclass(frozen=True, eq=False)
class BatchPhService:
    """Batch service: a PH(alpha, T) duration that clears ``k`` customers w.p. ``b[k-1]``."""

    alpha: np.ndarray
    T: np.ndarray
    b: np.ndarray = field(default_factory=lambda: np.array([1.0]))

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float, ndmin=1)
        T = np.array(self.T, dtype=float, ndmin=2)
        b = np.array(self.b, dtype=float, ndmin=1)
        m = len(alpha)
        if T.shape != (m, m):
            raise ValueError(f"T has shape {T.shape}, expected {(m, m)}")
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(T)) and np.all(np.isfinite(b))):
            raise ValueError("service parameters must be finite")
        if np.any(alpha < 0) or abs(alpha.sum() - 1.0) > ALGEBRA_TOL:
            raise ValueError("alpha must be a probability vector")
        if np.any(np.diag(T) >= 0) or np.any(T[~np.eye(m, dtype=bool)] < 0):
            raise ValueError("T needs a negative diagonal and non-negative off-diagonal")
        T0 = -T.sum(axis=1)
        if np.any(T0 < -ALGEBRA_TOL) or not np.any(T0 > 0):
            raise ValueError("exit vector -T e must be non-negative and non-zero")
        if len(b) == 0 or np.any(b < 0) or abs(b.sum() - 1.0) > ALGEBRA_TOL:
            raise ValueError("batch distribution b must be a probability vector")
        for name, val in (("alpha", alpha), ("T", T), ("b", b)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def m(self):
        return len(self.alpha)

    @cached_property
    def T0(self):
        return np.clip(-self.T.sum(axis=1), 0.0, None)

    @cached_property
    def _stationary(self):
        eta = stationary_vector(self.T + np.outer(self.T0, self.alpha))
        return eta, float(eta @ self.T0)

    @property
    def eta(self):
        return self._stationary[0]

    @property
    def mu(self):
        """Service completion rate ``eta T0``; equals ``1 / (-alpha T^{-1} e)``."""
        return self._stationary[1]

    @cached_property
    def mean_duration(self):
        return float(-self.alpha @ np.linalg.solve(self.T, np.ones(self.m)))

    @property
    def b_bar(self):
        return float(np.arange(1, len(self.b) + 1) @ self.b)

    @cached_property
    def b_tail(self):
        """``B_l = sum_{k>=l} b_k`` for ``l = 1..len(b)``."""
        return self.b[::-1].cumsum()[::-1]

    @classmethod
    def exponential(cls, mu, b=(1.0,)):
        return cls([1.0], [[-mu]], b)


def ph_stationary(service):
    """Stationary vector ``eta`` of ``T + T0 alpha`` and the rate ``mu = eta T0``."""
    return service.eta, service.mu


@dataclass(frozen=True, eq=False)
class Gim1Model:
    lam: float
    service: BatchPhService
    d: int = 2

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("arrival rate must be positive")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError("choice number d must be a positive integer")
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "d", int(self.d))

    @property
    def rho(self):
        return self.lam / (self.service.mu * self.service.b_bar)

    @property
    def load(self):
        """``lambda / mu``: the coefficient that appears after contracting the balance equations with ``e``."""
        return self.lam / self.service.mu

    @cached_property
    def theta(self):
        return float(hadamard_power(self.service.eta, self.d).sum())


@dataclass(frozen=True, eq=False)
class RenewalInverse:
    """First column ``u_0 = 1, u_1, ...`` of the inverse of the Toeplitz matrix with ``1`` and ``-b_l``."""

    u: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        for name in ("u", "b"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def apply(self, x):
        """Row vector times the inverse: ``y_j = sum_{i>=j} x_i u_{i-j}``."""
        x = np.asarray(x, dtype=float)
        n = len(x)
        if n > len(self.u):
            raise ValueError("sequence longer than the stored inverse")
        full = np.convolve(x[::-1], self.u[:n])[:n]
        return full[::-1]

    def forward(self, y):
        return toeplitz_forward(self.b, y)


def toeplitz_forward(b, y):
    """Row vector times the Toeplitz matrix: ``x_j = y_j - sum_l b_l y_{j+l}``."""
    y = np.asarray(y, dtype=float)
    out = y.copy()
    for l, bl in enumerate(b, start=1):
        if l >= len(y):
            break
        out[:-l] -= bl * y[l:]
    return out


def renewal_inverse(b, K):
    """``u_j = sum_{i=1}^{j} b_i u_{j-i}`` for ``j = 0..K``."""
    b = np.asarray(b, dtype=float)
    if abs(b.sum() - 1.0) > ALGEBRA_TOL:
        raise ValueError("batch distribution must sum to 1")
    u = np.zeros(K + 1)
    u[0] = 1.0
    for j in range(1, K + 1):
        n = min(j, len(b))
        u[j] = b[:n] @ u[j - 1::-1][:n]
    return RenewalInverse(u, b)


def _solve_level(rhs, c, d):
    """Non-negative root of ``x + c x^d = rhs``."""
    if rhs <= 0.0:
        return 0.0
    if d == 1:
        return rhs / (1.0 + c)
    if d == 2:
        return 2.0 * rhs / (1.0 + np.sqrt(1.0 + 4.0 * c * rhs))
    x = rhs  # g is convex and increasing, so Newton from above decreases monotonically
    for _ in range(100):
        step = (x + c * x ** d - rhs) / (1.0 + c * d * x ** (d - 1))
        x_new = max(x - step, 0.0)
        if abs(x - x_new) <= 1e-17 + 1e-16 * x:
            return x_new
        x = x_new
    return x


def _aggregate(r, b, B_tail, load, c, d):
    """Aggregate balance residuals ``(B0, B1, B2..BK)`` for a truncated tail ``r``."""
    K = len(r)
    pad = np.concatenate([r, np.zeros(len(b))])
    up = np.zeros(K)
    for l, bl in enumerate(b, start=1):
        up += bl * pad[l:l + K]
    rd = r ** d
    prev = np.concatenate([[load / c if c > 0 else 0.0], rd[:-1]])
    res = np.empty(K + 1)
    n = min(K, len(B_tail))
    res[0] = r[:n] @ B_tail[:n] - load
    res[1:] = c * (prev - rd) - r + up
    return res


def _solve_linear(K, b, load, c):
    # d = 1: (1 + c) r(k) - c r(k-1) - sum_l b_l r(k+l) = [k == 1] load
    L = len(b)
    ab = np.zeros((L + 2, K))  # upper bandwidth L, lower bandwidth 1
    ab[L, :] = 1.0 + c
    for l, bl in enumerate(b, start=1):
        ab[L - l, l:] = -bl
    ab[L + 1, :-1] = -c
    rhs = np.zeros(K)
    rhs[0] = load
    return np.clip(solve_banded((1, L), ab, rhs), 0.0, None)


def gim1_fixed_point(model, K=None, eps=EPS, residual_tol=RESIDUAL_TOL, max_iter=MAX_ITER,
                     tail_tol=None, max_levels=4096):
    """Aggregate fixed point ``pi_k = r(k) eta`` (``pi_0 = 1``) on levels ``1..K``.

    Solves the balance system obtained by contracting the level equations with
    ``e``.  With ``c = (lambda/mu) theta`` and ``r(0)^d c`` read as
    ``lambda/mu`` at level 1::

        sum_l r(l) B_l = lambda/mu
        c [r(k-1)^d - r(k)^d] - r(k) + sum_l b_l r(k+l) = 0,   k >= 1

    Each sweep evaluates ``r(k-1)^d`` at the previous iterate and
    back-substitutes from level ``K`` down, solving the scalar equation
    ``r + c r^d = rhs`` at every level.  Starting from zero the iterates
    increase monotonically.  Sweeps stop once ``change q/(1-q) < eps``, with
    ``q`` the larger of the linear bound ``c max(u)`` and the observed ratio
    of successive changes, and the balance residuals of levels ``1..K`` are
    below ``residual_tol``.  Without ``K`` the level count doubles until
    ``r(K) < tail_tol`` (default ``eps``).
    """
    if model.rho >= 1.0:
        raise StabilityError(f"load rho = {model.rho:.6g} >= 1")
    if K is not None:
        return _gim1_solve(model, int(K), eps, residual_tol, max_iter)
    tail_tol = eps if tail_tol is None else tail_tol
    K = 8
    while True:
        seq = _gim1_solve(model, K, eps, residual_tol, max_iter)
        if seq.r[-1] < tail_tol:
            return seq
        if 2 * K > max_levels:
            raise ConvergenceError(f"tail r(K) = {seq.r[-1]:.3e} still above {tail_tol:g} at K = {K}",
                                   iterate=seq.r, residuals=seq.info["residuals"])
        K *= 2


def _gim1_solve(model, K, eps, residual_tol, max_iter):
    if K < 1:
        raise ValueError("need at least one level")
    svc = model.service
    b, B_tail = svc.b, svc.b_tail
    d, load, theta = model.d, model.load, model.theta
    c = load * theta
    u = renewal_inverse(b, K)
    bound = c * float(u.u.max())

    if d == 1:
        r = _solve_linear(K, b, load, c)
        iters, monotone = 1, True
    else:
        r = np.zeros(K)
        monotone = True
        L = len(b)
        prev_change = np.inf
        for iters in range(1, max_iter + 1):
            old = r
            old_d = old ** d
            new = np.zeros(K + L)
            for k in range(K, 0, -1):
                hi = min(L, K - k)
                up = b[:hi] @ new[k:k + hi] if hi else 0.0
                lower = load if k == 1 else c * old_d[k - 2]
                new[k - 1] = _solve_level(lower + up, c, d)
            r = new[:K]
            if np.any(r < old - 1e-15 * (1.0 + old)):
                monotone = False
            change = float(np.abs(r - old).max())
            # a contraction with rate q has |r - r*| <= change q / (1 - q); the
            # nonlinear sweep can contract slower than the linear bound, so q
            # also takes the observed ratio of successive changes
            q = max(bound, change / prev_change)
            prev_change = change
            if change == 0.0 or (q < 1.0 and change * q < eps * (1.0 - q)):
                # (B0) is the sum of the level equations up to the truncation term
                res = _aggregate(r, b, B_tail, load, c, d)
                if np.abs(res[1:]).max() < residual_tol:
                    break
        else:
            res = _aggregate(r, b, B_tail, load, c, d)
            raise ConvergenceError(f"no convergence after {max_iter} sweeps (last change {change:.2e})",
                                   iterate=r, residuals=res)
    res = _aggregate(r, b, B_tail, load, c, d)
    info = {
        "theta": theta, "rho": model.rho, "load": load, "iterations": iters,
        "monotone": monotone, "contraction_bound": bound, "residuals": res,
        "eps": eps,
    }
    return TailSequence(svc.eta, r, np.ones(1), info)


def gim1_decomposition(model, K):
    """Right part (arrivals, choice ``d``) and left part (batch PH service, choice 1)."""
    if K < 2:
        raise ValueError("need at least K = 2 levels")
    svc = model.service
    m, lam = svc.m, model.lam
    dims = (1,) + (m,) * K
    T0 = svc.T0[:, None]
    T0a = T0 @ svc.alpha[None, :]
    eye = np.eye(m)
    right = {(0, 0): [[-lam]], (0, 1): lam * svc.alpha[None, :]}
    left = {}
    for k in range(1, K + 1):
        right[(k, k)] = -lam * eye
        if k < K:
            right[(k, k + 1)] = lam * eye
        left[(k, k)] = svc.T
        tail = svc.b_tail[k - 1] if k <= len(svc.b) else 0.0
        if tail:
            left[(k, 0)] = tail * T0
        for l in range(1, k):
            if l <= len(svc.b) and svc.b[l - 1]:
                left[(k, k - l)] = svc.b[l - 1] * T0a
    right_part = BlockGenerator(dims, right, frozenset({K}))
    left_part = BlockGenerator(dims, left)
    return ChoiceDecomposition(left_part + right_part, ((1, left_part),), ((model.d, right_part),))


@dataclass(frozen=True, eq=False)
class Gim1Residual:
    aggregate: np.ndarray
    vector: list
    level0: float

    @property
    def aggregate_sup(self):
        return float(np.abs(self.aggregate).max())

    @property
    def vector_sup(self):
        return max(float(np.abs(v).max()) for v in self.vector)


def gim1_aggregate_residual(seq, model):
    """Aggregate balance residuals plus the full vector residuals at ``pi_k = r(k) eta``.

    ``aggregate[0]`` is the level-0 mass balance, ``aggregate[k]`` the
    contracted level-``k`` equation.  ``vector[k-1]`` is the phase-resolved
    residual of level ``k``; it is exact only for single-phase service.
    """
    svc = model.service
    b, d, lam = svc.b, model.d, model.lam
    r = np.asarray(seq.r)
    K = len(r)
    c = model.load * model.theta
    agg = _aggregate(r, b, svc.b_tail, model.load, c, d)

    eta = svc.eta
    pis = [np.ones(1)] + [rk * eta for rk in r]
    pow_d = [hadamard_power(p, d) for p in pis]
    T0a = np.outer(svc.T0, svc.alpha)
    level0 = -lam + sum(pis[l] @ svc.T0 * (svc.b_tail[l - 1] if l <= len(b) else 0.0)
                        for l in range(1, K + 1))
    vector = []
    for k in range(1, K + 1):
        inflow = lam * svc.alpha if k == 1 else lam * pow_d[k - 1]
        v = inflow - lam * pow_d[k] + pis[k] @ svc.T
        for l, bl in enumerate(b, start=1):
            if k + l <= K:
                v = v + bl * (pis[k + l] @ T0a)
        vector.append(v)
    return Gim1Residual(agg, vector, float(level0))


__all__ = [
    "BatchPhService", "Gim1Model", "RenewalInverse", "Gim1Residual", "ph_stationary",
    "renewal_inverse", "toeplitz_forward", "gim1_fixed_point", "gim1_decomposition",
    "gim1_aggregate_residual",
]

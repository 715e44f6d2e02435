"""Supermarket model with BMAP arrivals and exponential service (M/G/1 type)."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .core import (
    ALGEBRA_TOL,
    BlockGenerator,
    ChoiceDecomposition,
    TailSequence,
    hadamard_power,
    stationary_vector,
)
from .errors import InstabilityError, StabilityError

TAIL_TOL = 1e-14


def _matrix(a, name):
    arr = np.array(a, dtype=float, ndmin=2)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class BmapDescriptor:
    """Batch Markovian arrival process ``(C, D_1, ..., D_B)``.

    ``D[k-1]`` holds the rate matrix for batches of size ``k``.
    """

    C: np.ndarray
    D: tuple

    def __post_init__(self):
        C = _matrix(self.C, "C")
        D = tuple(_matrix(Dk, f"D_{k + 1}") for k, Dk in enumerate(self.D))
        if not D:
            raise ValueError("at least one arrival matrix D_1 is required")
        m = C.shape[0]
        if any(Dk.shape != (m, m) for Dk in D):
            raise ValueError("all D_k must match the shape of C")
        if np.any(np.diag(C) >= 0):
            raise ValueError("C must have a strictly negative diagonal")
        off = C[~np.eye(m, dtype=bool)]
        if np.any(off < 0):
            raise ValueError("C must have non-negative off-diagonal entries")
        if any(np.any(Dk < 0) for Dk in D):
            raise ValueError("arrival matrices D_k must be non-negative")
        rows = (C + sum(D)).sum(axis=1)
        if np.abs(rows).max() > ALGEBRA_TOL * max(1.0, np.abs(C).max()):
            raise ValueError(f"C + sum(D_k) must have zero row sums (max {np.abs(rows).max():.2e})")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)

    @property
    def m(self):
        return self.C.shape[0]

    @property
    def B(self):
        return len(self.D)

    @cached_property
    def generator(self):
        return self.C + sum(self.D)

    @classmethod
    def poisson(cls, lam):
        return cls([[-lam]], ([[lam]],))


def bmap_stationary(bmap):
    """Stationary phase vector ``gamma`` of ``C + sum D_k`` and the arrival rate."""
    gamma = stationary_vector(bmap.generator)
    weighted = sum((k + 1) * Dk for k, Dk in enumerate(bmap.D))
    lam = float(gamma @ weighted.sum(axis=1))
    return gamma, lam


@dataclass(frozen=True, eq=False)
class Mg1Model:
    bmap: BmapDescriptor
    mu: float
    d: int = 2

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("service rate mu must be positive")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError("choice number d must be a positive integer")
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "d", int(self.d))

    @cached_property
    def _stationary(self):
        return bmap_stationary(self.bmap)

    @property
    def gamma(self):
        return self._stationary[0]

    @property
    def lam(self):
        return self._stationary[1]

    @cached_property
    def lam_k(self):
        """``lambda_k = gamma (sum_{i>=k} D_i) e`` for ``k = 1..B`` (index ``k-1``)."""
        per_batch = np.array([self.gamma @ Dk.sum(axis=1) for Dk in self.bmap.D])
        return per_batch[::-1].cumsum()[::-1]

    @property
    def rho_k(self):
        return self.lam_k / self.mu

    @property
    def rho(self):
        return self.lam / self.mu

    @cached_property
    def base(self):
        return hadamard_power(self.gamma, 1.0 / self.d) if self.d > 1 else np.array(self.gamma)

    @property
    def theta(self):
        return 1.0 / float(self.base.sum())


def mg1_fixed_point(model, K=None, tail_tol=TAIL_TOL, max_levels=100_000):
    """Super-exponential fixed point ``pi_k = r(k) gamma^(1/d)``.

    ``pi_0 = theta gamma^(1/d)``, ``r(1) = theta^(d+1) rho_1`` and
    ``r(k) = theta^(d+1) rho_k + theta sum_{i<k} r(i)^d rho_{k-i}``.
    Without ``K`` the recursion stops at the first level with
    ``r(K) < tail_tol``.
    """
    rho = model.rho
    if rho >= 1.0:
        raise StabilityError(f"load rho = {rho:.6g} >= 1")
    d, theta = model.d, model.theta
    rk = model.rho_k
    B = len(rk)
    lead = theta ** (d + 1)
    cap = K if K is not None else max_levels
    r = np.zeros(cap)
    powers = np.zeros(cap)
    for k in range(1, cap + 1):
        val = lead * rk[k - 1] if k <= B else 0.0
        lo = max(1, k - B)
        if k > 1:
            # sum_{i=lo}^{k-1} r(i)^d rho_{k-i}
            i = np.arange(lo, k)
            val += theta * float(powers[i - 1] @ rk[k - i - 1])
        if val > theta or not np.isfinite(val):
            raise InstabilityError(f"tail recursion stopped decaying at level {k} (r = {val:.3e})")
        r[k - 1] = val
        powers[k - 1] = val ** d
        if K is None and val < tail_tol:
            r = r[:k]
            break
    else:
        if K is None:
            raise InstabilityError(f"tail still above {tail_tol:g} after {max_levels} levels")
    info = {"theta": theta, "rho": rho, "lambda": model.lam, "d": d, "tail_tol": tail_tol}
    return TailSequence(model.base, r, theta * model.base, info)


def mg1_decomposition(model, K):
    """Left (service, choice 1) and right (arrivals, choice ``d``) parts on levels ``0..K``."""
    if K < 2:
        raise ValueError("need at least K = 2 levels")
    bmap = model.bmap
    m = bmap.m
    dims = (m,) * (K + 1)
    eye = np.eye(m)
    right, left = {}, {}
    open_levels = set()
    for k in range(K + 1):
        right[(k, k)] = bmap.C
        for j, Dj in enumerate(bmap.D, start=1):
            if k + j <= K:
                right[(k, k + j)] = Dj
            elif np.any(Dj):
                open_levels.add(k)
        if k >= 1:
            left[(k, k)] = -model.mu * eye
            left[(k, k - 1)] = model.mu * eye
    right_part = BlockGenerator(dims, right, frozenset(open_levels))
    left_part = BlockGenerator(dims, left)
    return ChoiceDecomposition(left_part + right_part, ((1, left_part),), ((model.d, right_part),))


@dataclass(frozen=True, eq=False)
class Mg1Residual:
    """Scalar recursion residuals, tail-vanishing terms and vector diagnostics."""

    scalar: np.ndarray
    tail_terms: np.ndarray
    vector: list = field(default_factory=list)

    @property
    def scalar_sup(self):
        return float(np.abs(self.scalar).max())

    @property
    def tail_sup(self):
        return float(np.abs(self.tail_terms).max())

    @property
    def vector_sup(self):
        return max(float(np.abs(v).max()) for v in self.vector)


def mg1_aggregate_residual(seq, model):
    """Residuals of the aggregated scalar recursions and the full vector equations.

    The scalar part re-evaluates ``r(k)`` from the matrices directly:
    ``r(k) = (theta/mu) [pi_0^d sum_{i>=k} D_i e + sum_{j<k} pi_j^d sum_{i>=k-j} D_i e]``.
    The vector part evaluates the level balance equations at
    ``pi_k = r(k) gamma^(1/d)``; it vanishes only after contraction with
    ``e`` when the BMAP has more than one phase.
    """
    bmap, d, mu = model.bmap, model.d, model.mu
    theta = seq.info.get("theta", model.theta)
    K = seq.K
    B = bmap.B
    tails = np.cumsum([Dk.sum(axis=1) for Dk in bmap.D][::-1], axis=0)[::-1]  # tails[k-1] = sum_{i>=k} D_i e
    pis = [seq.level(k) for k in range(K + 1)]
    pow_d = [hadamard_power(p, d) for p in pis]

    scalar = np.zeros(K)
    for k in range(1, K + 1):
        acc = 0.0
        for j in range(max(0, k - B), k):
            acc += pow_d[j] @ tails[k - j - 1]
        scalar[k - 1] = seq.r[k - 1] - theta / mu * acc

    gen_e = bmap.generator.sum(axis=1)
    tail_terms = np.array([seq.r[j] ** d * (model.gamma @ gen_e) for j in range(K)])

    vector = [pow_d[0] @ bmap.C + mu * pis[1]]
    for k in range(1, K + 1):
        v = pow_d[k] @ bmap.C - mu * pis[k]
        if k < K:
            v = v + mu * pis[k + 1]
        for l in range(max(0, k - B), k):
            v = v + pow_d[l] @ bmap.D[k - l - 1]
        vector.append(v)
    return Mg1Residual(scalar, tail_terms, vector)


__all__ = [
    "BmapDescriptor", "Mg1Model", "Mg1Residual", "bmap_stationary", "mg1_fixed_point",
    "mg1_decomposition", "mg1_aggregate_residual",
]

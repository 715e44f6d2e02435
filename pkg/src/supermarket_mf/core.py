"""General Markovian supermarket framework.

A supermarket model is described by a block-structured generator ``Q`` on
levels ``0..K`` (level = queue length, phase = environment/service stage)
split into left (output) and right (input) parts, each tagged with a choice
number.  The fraction measure ``S`` evolves as

    dS/dt = sum_l S^{(.f_l)} Q_left(f_l) + sum_k S^{(.d_k)} Q_right(d_k)

where ``S^{(.p)}`` is the entrywise power.  Infinite models are truncated at
level ``K`` with ``S_k = 0`` for ``k > K``; rows that lose outflow to the
dropped levels are flagged *open*.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from types import MappingProxyType
from typing import Mapping

import numpy as np
import scipy.linalg

from .errors import IntegrationError, TruncationWarning

ALGEBRA_TOL = 1e-12
INTEGRATION_TOL = 1e-8
BOUNDARY_MASS_TOL = 1e-8


def _frozen(a, ndim=None):
    arr = np.array(a, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Violation:
    """One failed invariant: what failed, where, and by how much."""

    kind: str
    location: tuple
    value: float

    def __str__(self):
        return f"{self.kind} at {self.location}: {self.value:.3e}"


@dataclass(frozen=True, eq=False)
class BlockGenerator:
    """Level-by-level block matrix ``Q_{i,j}`` of a block-structured chain.

    Missing blocks are zero.  ``open_levels`` lists boundary levels whose rows
    are exempt from the zero-row-sum check because truncation removed their
    outflow targets.
    """

    level_dims: tuple
    blocks: Mapping
    open_levels: frozenset = frozenset()

    def __post_init__(self):
        dims = tuple(int(m) for m in self.level_dims)
        if not dims or min(dims) < 1:
            raise ValueError("level dimensions must be positive integers")
        blocks = {}
        for (i, j), mat in self.blocks.items():
            i, j = int(i), int(j)
            if not (0 <= i < len(dims) and 0 <= j < len(dims)):
                raise ValueError(f"block ({i}, {j}) outside levels 0..{len(dims) - 1}")
            arr = _frozen(mat, ndim=2)
            if arr.shape != (dims[i], dims[j]):
                raise ValueError(
                    f"block ({i}, {j}) has shape {arr.shape}, expected {(dims[i], dims[j])}"
                )
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"block ({i}, {j}) has non-finite entries")
            blocks[(i, j)] = arr
        object.__setattr__(self, "level_dims", dims)
        object.__setattr__(self, "blocks", MappingProxyType(blocks))
        object.__setattr__(self, "open_levels", frozenset(int(k) for k in self.open_levels))

    @property
    def n_levels(self):
        return len(self.level_dims)

    @cached_property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.level_dims)])

    @property
    def size(self):
        return int(self.offsets[-1])

    def block(self, i, j):
        if (i, j) in self.blocks:
            return self.blocks[(i, j)]
        return np.zeros((self.level_dims[i], self.level_dims[j]))

    @cached_property
    def dense(self):
        out = np.zeros((self.size, self.size))
        off = self.offsets
        for (i, j), mat in self.blocks.items():
            out[off[i]:off[i + 1], off[j]:off[j + 1]] += mat
        out.setflags(write=False)
        return out

    @classmethod
    def from_dense(cls, matrix, level_dims, open_levels=()):
        matrix = np.asarray(matrix, dtype=float)
        off = np.concatenate([[0], np.cumsum(level_dims)])
        if matrix.shape != (off[-1], off[-1]):
            raise ValueError("matrix shape does not match level dimensions")
        blocks = {}
        for i in range(len(level_dims)):
            for j in range(len(level_dims)):
                sub = matrix[off[i]:off[i + 1], off[j]:off[j + 1]]
                if np.any(sub != 0):
                    blocks[(i, j)] = sub
        return cls(tuple(level_dims), blocks, frozenset(open_levels))

    def open_rows(self):
        """Boolean mask over flat states marking rows of open levels."""
        mask = np.zeros(self.size, dtype=bool)
        for k in self.open_levels:
            mask[self.offsets[k]:self.offsets[k + 1]] = True
        return mask

    def row_sums(self):
        return self.dense.sum(axis=1)

    def closed(self):
        """Copy whose open rows get their lost outflow folded back into the diagonal."""
        dense = np.array(self.dense)
        deficit = dense.sum(axis=1)
        mask = self.open_rows()
        idx = np.flatnonzero(mask)
        dense[idx, idx] -= deficit[idx]
        return BlockGenerator.from_dense(dense, self.level_dims)

    def __add__(self, other):
        if not isinstance(other, BlockGenerator):
            return NotImplemented
        if other.level_dims != self.level_dims:
            raise ValueError("level dimensions differ")
        blocks = dict(self.blocks)
        for key, mat in other.blocks.items():
            blocks[key] = blocks[key] + mat if key in blocks else mat
        return BlockGenerator(self.level_dims, blocks, self.open_levels | other.open_levels)

    def level_of(self, flat_index):
        k = int(np.searchsorted(self.offsets, flat_index, side="right") - 1)
        return k, int(flat_index - self.offsets[k])

    def violations(self, tol=ALGEBRA_TOL, strict_diagonal=False):
        """Sign-pattern and row-sum violations.

        With ``strict_diagonal`` the diagonal must be strictly negative (full
        generators); otherwise only ``<= 0`` is required (decomposition parts).
        """
        found = []
        A = self.dense
        n = self.size
        off_diag = A[~np.eye(n, dtype=bool)].reshape(n, n - 1) if n > 1 else np.zeros((n, 0))
        for r, c in zip(*np.nonzero(off_diag < -tol)):
            c_full = c if c < r else c + 1
            found.append(Violation("negative off-diagonal rate",
                                   (self.level_of(r), self.level_of(c_full)), A[r, c_full]))
        diag = np.diag(A)
        for r in np.flatnonzero(diag > tol):
            found.append(Violation("positive diagonal", (self.level_of(r),), diag[r]))
        if strict_diagonal:
            for r in np.flatnonzero(diag >= 0):
                k, _ = self.level_of(r)
                if k not in self.open_levels:
                    found.append(Violation("non-negative diagonal", (self.level_of(r),), diag[r]))
        sums = A.sum(axis=1)
        mask = self.open_rows()
        for r in np.flatnonzero((np.abs(sums) > tol) & ~mask):
            found.append(Violation("nonzero row sum", (self.level_of(r),), sums[r]))
        return found


@dataclass(frozen=True, eq=False)
class ChoiceDecomposition:
    """Split of a generator into left/right parts tagged with choice numbers.

    ``left_parts`` carry output choice numbers ``f_l``, ``right_parts`` input
    choice numbers ``d_k``; both are sequences of ``(choice, BlockGenerator)``.
    """

    generator: BlockGenerator
    left_parts: tuple
    right_parts: tuple

    def __post_init__(self):
        left = tuple((int(c), p) for c, p in self.left_parts)
        right = tuple((int(c), p) for c, p in self.right_parts)
        for c, p in left + right:
            if c < 1:
                raise ValueError("choice numbers must be positive integers")
            if p.level_dims != self.generator.level_dims:
                raise ValueError("part level dimensions differ from the generator")
        object.__setattr__(self, "left_parts", left)
        object.__setattr__(self, "right_parts", right)

    @property
    def level_dims(self):
        return self.generator.level_dims

    @property
    def choice_numbers(self):
        return tuple(c for c, _ in self.left_parts + self.right_parts)

    @property
    def is_linear(self):
        return all(c == 1 for c in self.choice_numbers)

    def total(self):
        parts = [p for _, p in self.left_parts + self.right_parts]
        out = parts[0]
        for p in parts[1:]:
            out = out + p
        return out

    @cached_property
    def power_terms(self):
        # parts sharing a choice number share one Hadamard power
        terms = {}
        for c, p in self.left_parts + self.right_parts:
            terms[c] = terms[c] + p.dense if c in terms else np.array(p.dense)
        return tuple(sorted(terms.items()))


def validate_decomposition(dec, tol=ALGEBRA_TOL):
    """Return every violated decomposition invariant; empty when all hold."""
    report = []
    gen = dec.generator
    for side, parts in (("left", dec.left_parts), ("right", dec.right_parts)):
        for idx, (choice, part) in enumerate(parts):
            tag = f"{side}[{idx}] (choice {choice})"
            for (i, j), mat in part.blocks.items():
                wrong = j > i if side == "left" else j < i
                if wrong and np.any(np.abs(mat) > tol):
                    report.append(Violation(f"{tag}: block outside the {side} triangle",
                                            (i, j), float(np.abs(mat).max())))
            exempt = part.open_levels | gen.open_levels
            check = BlockGenerator(part.level_dims, part.blocks, exempt)
            for v in check.violations(tol):
                report.append(Violation(f"{tag}: {v.kind}", v.location, v.value))
    diff = dec.total().dense - gen.dense
    for r, c in zip(*np.nonzero(np.abs(diff) > tol)):
        report.append(Violation("parts do not sum to the generator",
                                (gen.level_of(r), gen.level_of(c)), diff[r, c]))
    return report


@dataclass(frozen=True, eq=False)
class FractionMeasure:
    """Truncated per-level row vectors ``S_0 .. S_K`` at a given time."""

    levels: tuple
    time: float = 0.0

    def __post_init__(self):
        levels = tuple(_frozen(v, ndim=1) for v in self.levels)
        if not levels:
            raise ValueError("a fraction measure needs at least level 0")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "time", float(self.time))

    @property
    def dims(self):
        return tuple(len(v) for v in self.levels)

    @cached_property
    def flat(self):
        out = np.concatenate(self.levels)
        out.setflags(write=False)
        return out

    @classmethod
    def from_flat(cls, vec, dims, time=0.0):
        off = np.concatenate([[0], np.cumsum(dims)])
        vec = np.asarray(vec, dtype=float)
        if len(vec) != off[-1]:
            raise ValueError("vector length does not match level dimensions")
        return cls(tuple(vec[off[k]:off[k + 1]] for k in range(len(dims))), time)

    @classmethod
    def empty(cls, dims, level0=None):
        """Empty-system state: ``S_0`` as given (uniform by default), higher levels zero."""
        if level0 is None:
            level0 = np.full(dims[0], 1.0 / dims[0])
        return cls((np.asarray(level0, dtype=float),) + tuple(np.zeros(m) for m in dims[1:]))

    def aggregate(self):
        return np.array([v.sum() for v in self.levels])

    def with_time(self, t):
        return FractionMeasure(self.levels, t)

    def padded(self, dims):
        """Same measure on a (longer) level range; extra levels are zero."""
        if tuple(dims[:len(self.dims)]) != self.dims:
            raise ValueError("existing level dimensions must be a prefix of the new ones")
        extra = tuple(np.zeros(m) for m in dims[len(self.dims):])
        return FractionMeasure(self.levels + extra, self.time)

    def violations(self, tol=1e-10):
        found = []
        s0 = self.levels[0]
        if np.any(s0 < -tol):
            found.append(Violation("negative level-0 entry", (0,), float(s0.min())))
        if abs(s0.sum() - 1.0) > tol:
            found.append(Violation("level-0 mass differs from 1", (0,), float(s0.sum() - 1.0)))
        for k, v in enumerate(self.levels[1:], start=1):
            if np.any(v < -tol):
                found.append(Violation("negative entry", (k,), float(v.min())))
        dims = self.dims
        if len(set(dims[1:])) == 1:
            for k in range(1, len(dims) - 1):
                gap = self.levels[k + 1] - self.levels[k]
                if np.any(gap > tol):
                    found.append(Violation("tail not monotone", (k, k + 1), float(gap.max())))
        return found


@dataclass(frozen=True, eq=False)
class TailSequence:
    """Fixed point of the form ``pi_k = r(k) * base`` for ``k >= 1``.

    ``r[0]`` holds ``r(1)``.  ``info`` carries solver diagnostics.
    """

    base: np.ndarray
    r: np.ndarray
    pi0: np.ndarray
    info: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "base", _frozen(self.base, ndim=1))
        object.__setattr__(self, "r", _frozen(self.r, ndim=1))
        object.__setattr__(self, "pi0", _frozen(np.atleast_1d(self.pi0), ndim=1))
        object.__setattr__(self, "info", MappingProxyType(dict(self.info)))

    @property
    def K(self):
        return len(self.r)

    def level(self, k):
        return self.pi0 if k == 0 else self.r[k - 1] * self.base

    def levels(self):
        return FractionMeasure((self.pi0,) + tuple(rk * self.base for rk in self.r))

    def aggregate(self):
        return np.concatenate([[self.pi0.sum()], self.r * self.base.sum()])


def hadamard_power(v, p):
    """Entrywise ``p``-th power of a vector.

    ``p`` may be an int, a :class:`fractions.Fraction` or a float.  A
    non-integer power of a negative entry raises ``ValueError``.
    """
    v = np.asarray(v, dtype=float)
    if p <= 0:
        raise ValueError("power must be positive")
    if Fraction(p).denominator == 1:
        p = int(p)
        return v.copy() if p == 1 else v ** p
    if np.any(v < 0):
        raise ValueError("negative entry raised to a fractional power")
    return v ** float(p)


def _check_dims(S, dec):
    if S.dims != dec.level_dims:
        raise ValueError(f"fraction measure has level dims {S.dims}, decomposition {dec.level_dims}")


def _raw_rhs(s, terms):
    out = np.zeros_like(s)
    for p, M in terms:
        out += (s if p == 1 else s ** p) @ M
    return out


def mean_field_rhs(S, dec):
    """Right-hand side ``dS_k/dt`` of the mean-field ODE, one vector per level."""
    _check_dims(S, dec)
    flat = _raw_rhs(S.flat, dec.power_terms)
    return list(FractionMeasure.from_flat(flat, S.dims).levels)


def fixed_point_residual(pi, dec):
    """Residual vectors of the fixed-point system at ``pi`` and their sup-norm."""
    res = mean_field_rhs(pi, dec)
    sup = max(float(np.abs(v).max()) for v in res)
    return res, sup


def _rk4(f, y, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(S0, dec, t_end, *, step=0.01, tol=INTEGRATION_TOL, adaptive=True,
              sample_times=None, level0="auto", min_step=1e-9):
    """Integrate the truncated mean-field ODE from ``S0`` over ``[t0, t0 + t_end]``.

    Classic RK4.  With ``adaptive`` each step is checked against two half
    steps and halved until the estimated local error is below ``tol``.

    ``level0`` selects how the constraint ``S_0 e = 1`` is kept:

    ``"normalize"``
        integrate ``F(S) - (F_0(S) e) S``, the time derivative of ``c(t) W(t)``
        with ``c = 1 / W_0 e``.  For all-linear decompositions this is exactly
        the renormalised solution ``c S(0) exp(Qt)``.
    ``"pin"``
        hold ``S_0`` fixed and integrate the remaining levels with ``F``.  For
        scalar level 0 this is the usual tail-fraction dynamics.
    ``"auto"`` (default)
        ``"normalize"`` when every choice number is 1, ``"pin"`` otherwise.

    Returns the states at ``sample_times`` (absolute times; default the two
    end points).
    """
    _check_dims(S0, dec)
    if t_end < 0:
        raise ValueError("t_end must be non-negative")
    if level0 == "auto":
        level0 = "normalize" if dec.is_linear else "pin"
    if level0 not in ("normalize", "pin"):
        raise ValueError(f"unknown level0 mode {level0!r}")
    bad = [v for v in S0.violations(INTEGRATION_TOL) if v.kind.startswith(("negative level-0", "level-0"))]
    if bad:
        raise ValueError(f"initial state invalid: {bad[0]}")

    dims = S0.dims
    m0 = dims[0]
    terms = dec.power_terms
    t0 = S0.time
    t_stop = t0 + t_end
    if sample_times is None:
        sample_times = [t0] if t_end == 0 else [t0, t_stop]
    targets = sorted(float(t) for t in sample_times)
    if targets and (targets[0] < t0 - 1e-12 or targets[-1] > t_stop + 1e-12):
        raise ValueError("sample times must lie inside the integration window")

    if level0 == "normalize":
        def f(y):
            F = _raw_rhs(y, terms)
            return F - F[:m0].sum() * y
    else:
        def f(y):
            F = _raw_rhs(y, terms)
            F[:m0] = 0.0
            return F

    y = np.array(S0.flat)
    t = t0
    h = float(step)
    out = []
    for target in targets:
        while target - t > 1e-12 * max(1.0, abs(target)):
            h_try = min(h, target - t)
            if adaptive:
                while True:
                    full = _rk4(f, y, h_try)
                    half = _rk4(f, _rk4(f, y, 0.5 * h_try), 0.5 * h_try)
                    err = float(np.abs(half - full).max()) / 15.0
                    if err <= tol and np.all(np.isfinite(half)):
                        break
                    h_try *= 0.5
                    h = min(h, h_try)
                    if h_try < min_step:
                        raise IntegrationError(
                            f"step size underflow at t={t:.6g} (error {err:.2e})",
                            FractionMeasure.from_flat(y, dims, t))
                y_new = half
                if err < tol / 64.0 and h < step:
                    h = min(2.0 * h, step)
            else:
                y_new = _rk4(f, y, h_try)
            drift = abs(y_new[:m0].sum() - 1.0)
            if not np.all(np.isfinite(y_new)) or drift > INTEGRATION_TOL or y_new.min() < -INTEGRATION_TOL:
                raise IntegrationError(
                    f"invariant violated at t={t + h_try:.6g} (level-0 drift {drift:.2e}, "
                    f"min entry {np.nanmin(y_new):.2e})",
                    FractionMeasure.from_flat(y, dims, t))
            y = y_new
            t += h_try
        t = target
        out.append(FractionMeasure.from_flat(y, dims, t))
    return out


def _boundary_mass(Q, S):
    if not Q.open_levels:
        return 0.0
    return float(sum(S.levels[k].sum() for k in Q.open_levels))


def reference_linear_solution(Q, S0, t):
    """``c S(0) exp(Qt)`` with ``c = 1 / W_0(t) e`` for the all-linear model.

    The exponential comes from scipy's scaling-and-squaring Pade routine.
    Warns with :class:`TruncationWarning` if more than ``1e-8`` of the mass
    sits on open boundary levels.
    """
    if S0.dims != Q.level_dims:
        raise ValueError("state and generator level dimensions differ")
    W = S0.flat @ scipy.linalg.expm(np.asarray(Q.dense) * float(t))
    c = 1.0 / W[:Q.level_dims[0]].sum()
    S = FractionMeasure.from_flat(c * W, S0.dims, S0.time + t)
    mass = _boundary_mass(Q, S)
    if mass > BOUNDARY_MASS_TOL:
        warnings.warn(f"boundary levels hold mass {mass:.2e}; raise the truncation level",
                      TruncationWarning, stacklevel=2)
    return S


def _gth(A):
    """Stationary vector of an irreducible generator by GTH state reduction.

    Uses only the off-diagonal rates, so open (leaky) boundary rows behave as
    if their lost outflow were reflected.
    """
    P = np.array(A, dtype=float)
    np.fill_diagonal(P, 0.0)
    n = P.shape[0]
    for k in range(n - 1, 0, -1):
        s = P[k, :k].sum()
        if s <= 0.0:
            raise np.linalg.LinAlgError(f"generator is reducible (state {k} cannot reach lower states)")
        P[:k, k] /= s
        P[:k, :k] += np.outer(P[:k, k], P[k, :k])
    x = np.zeros(n)
    x[0] = 1.0
    for k in range(1, n):
        x[k] = x[:k] @ P[:k, k]
    if not np.all(np.isfinite(x)):
        raise np.linalg.LinAlgError("stationary solve produced non-finite values")
    return x / x.sum()


def _is_irreducible(A):
    from scipy.sparse.csgraph import connected_components

    adj = (np.asarray(A) != 0) & ~np.eye(A.shape[0], dtype=bool)
    n_comp, _ = connected_components(adj, directed=True, connection="strong")
    return n_comp == 1


def stationary_vector(A):
    """Probability vector ``w`` with ``w A = 0`` for an irreducible generator matrix."""
    A = np.asarray(A, dtype=float)
    if A.shape[0] > 1 and not _is_irreducible(A):
        raise np.linalg.LinAlgError("generator is reducible")
    if A.shape[0] == 1:
        return np.ones(1)
    return _gth(A)


def truncated_stationary_vector(Q):
    """Fixed point of the all-linear model: stationary vector rescaled to ``pi_0 e = 1``."""
    w = stationary_vector(Q.dense)
    m0 = Q.level_dims[0]
    pi = FractionMeasure.from_flat(w / w[:m0].sum(), Q.level_dims)
    mass = _boundary_mass(Q, FractionMeasure.from_flat(w, Q.level_dims))
    if mass > BOUNDARY_MASS_TOL:
        warnings.warn(f"boundary levels hold probability {mass:.2e}; raise the truncation level",
                      TruncationWarning, stacklevel=2)
    return pi


def birth_death(lam, mu, K):
    """Truncated scalar birth-death split (levels 0..K) used by several builders.

    Returns ``(left, right)`` parts: services ``mu`` downwards and arrivals
    ``lam`` upwards; the top level is open in the right part.
    """
    dims = (1,) * (K + 1)
    left, right = {}, {}
    for k in range(K + 1):
        right[(k, k)] = [[-lam]]
        if k < K:
            right[(k, k + 1)] = [[lam]]
        if k >= 1:
            left[(k, k)] = [[-mu]]
            left[(k, k - 1)] = [[mu]]
    return (BlockGenerator(dims, left),
            BlockGenerator(dims, right, frozenset({K})))


def default_levels(tail, tol=1e-14, minimum=2):
    """Smallest K with ``tail[K-1] < tol`` (``tail[0]`` is level 1), at least ``minimum``."""
    tail = np.asarray(tail)
    below = np.flatnonzero(tail < tol)
    K = int(below[0]) + 1 if below.size else len(tail)
    return max(K, minimum)


__all__ = [
    "BlockGenerator", "ChoiceDecomposition", "FractionMeasure", "TailSequence", "Violation",
    "hadamard_power", "validate_decomposition", "mean_field_rhs", "fixed_point_residual",
    "integrate", "reference_linear_solution", "truncated_stationary_vector",
    "stationary_vector", "birth_death", "default_levels",
]


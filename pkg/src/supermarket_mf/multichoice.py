"""Scalar models with several choice numbers.

* the mobile server: arrivals join the shortest of ``d`` lines, a single
  roving server works on the longest of ``f`` lines;
* the multi-class model: class ``i`` arrives at rate ``lambda_i`` and joins
  the shortest of ``d_i`` queues.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ChoiceDecomposition, birth_death
from .errors import StabilityError

TAIL_TOL = 1e-14


def _check_choice(x, name):
    if int(x) != x or x < 1:
        raise ValueError(f"{name} must be a positive integer")
    return int(x)


@dataclass(frozen=True)
class MobileServerModel:
    lam: float
    mu: float
    d: int = 2
    f: int = 1

    def __post_init__(self):
        if not (self.lam > 0 and self.mu > 0):
            raise ValueError("rates must be positive")
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "d", _check_choice(self.d, "d"))
        object.__setattr__(self, "f", _check_choice(self.f, "f"))

    @property
    def rho(self):
        return self.lam / self.mu

    @property
    def regime(self):
        if self.d > self.f:
            return "doubly-exponential"
        if self.d == self.f:
            return "geometric"
        return "transient"

    @property
    def limit(self):
        """``lim pi_k``; zero unless ``d < f``."""
        if self.d < self.f:
            return self.rho ** (1.0 / (self.f - self.d))
        return 0.0


def mobile_exponent(d, f, k, method="closed"):
    """Exponent ``e_k`` with ``pi_k = rho^{e_k}``.

    ``closed`` uses ``((d/f)^k - 1) / (d - f)`` (or ``k/f`` when ``d == f``);
    ``sum`` adds ``(1/f) sum_{i<k} (d/f)^i`` term by term.
    """
    k = np.asarray(k, dtype=float)
    q = d / f
    if method == "sum":
        kmax = int(k.max()) if k.size else 0
        partial = np.concatenate([[0.0], np.cumsum(q ** np.arange(kmax))]) / f
        return partial[k.astype(int)]
    if method != "closed":
        raise ValueError(f"unknown method {method!r}")
    if d == f:
        return k / f
    with np.errstate(over="ignore"):
        return (np.power(q, k) - 1.0) / (d - f)


@dataclass(frozen=True, eq=False)
class MobileFixedPoint:
    pi: np.ndarray
    regime: str
    limit: float

    @property
    def K(self):
        return len(self.pi) - 1


def mobile_fixed_point(model, K=None, tail_tol=TAIL_TOL, max_levels=100_000):
    """Closed-form fixed point ``pi_0 .. pi_K`` with its regime and limit.

    ``K`` is required in the transient regime (``d < f``) where the tail does
    not vanish; otherwise it defaults to the first level below ``tail_tol``.
    """
    rho = model.rho
    if K is None:
        if model.regime == "transient":
            raise ValueError("the transient regime needs an explicit level count K")
        if rho >= 1.0:
            raise StabilityError(f"tail does not vanish for rho = {rho:.6g} >= 1")
        # smallest K with rho^{e_K} < tail_tol, found on the exponent scale
        target = np.log(tail_tol) / np.log(rho)
        K = 1
        while mobile_exponent(model.d, model.f, K) <= target:
            K += 1
            if K > max_levels:
                raise ValueError(f"tail above {tail_tol:g} after {max_levels} levels")
    ks = np.arange(K + 1)
    with np.errstate(under="ignore"):
        pi = np.power(rho, mobile_exponent(model.d, model.f, ks))
    pi[0] = 1.0
    return MobileFixedPoint(pi, model.regime, model.limit)


def mobile_residual(pi, model):
    """``|pi_0 - 1|`` followed by ``|pi_k^f - rho pi_{k-1}^d|`` for ``k = 1..K``."""
    pi = np.asarray(getattr(pi, "pi", pi), dtype=float)
    res = np.empty(len(pi))
    res[0] = abs(pi[0] - 1.0)
    res[1:] = np.abs(pi[1:] ** model.f - model.rho * pi[:-1] ** model.d)
    return res


@dataclass(frozen=True)
class MultiClassModel:
    classes: tuple
    mu: float

    def __post_init__(self):
        classes = tuple((float(lam), _check_choice(d, "d_i")) for lam, d in self.classes)
        if not classes:
            raise ValueError("need at least one class")
        if any(lam <= 0 for lam, _ in classes) or not self.mu > 0:
            raise ValueError("rates must be positive")
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "mu", float(self.mu))

    @property
    def rho_i(self):
        return np.array([lam / self.mu for lam, _ in self.classes])

    @property
    def d_i(self):
        return np.array([d for _, d in self.classes])

    @property
    def rho(self):
        return float(self.rho_i.sum())

    @property
    def lam(self):
        return float(sum(lam for lam, _ in self.classes))

    def merged(self):
        """Equivalent model with classes of equal ``d_i`` merged."""
        rates = {}
        for lam, d in self.classes:
            rates[d] = rates.get(d, 0.0) + lam
        return MultiClassModel(tuple((lam, d) for d, lam in sorted(rates.items())), self.mu)


def multiclass_fixed_point(model, K=None, tail_tol=TAIL_TOL, max_levels=100_000):
    """``delta_0 = 1``, ``delta_1 = rho``, ``delta_k = sum_i delta_{k-1}^{d_i} rho_i``."""
    if model.rho >= 1.0:
        raise StabilityError(f"load rho = {model.rho:.6g} >= 1")
    rho_i, d_i = model.rho_i, model.d_i
    cap = max_levels if K is None else K
    delta = [1.0]
    for _ in range(cap):
        delta.append(float(np.sum(delta[-1] ** d_i * rho_i)))
        if K is None and delta[-1] < tail_tol:
            break
    else:
        if K is None:
            raise ValueError(f"tail above {tail_tol:g} after {max_levels} levels")
    return np.array(delta)


def multiclass_residual(delta, model):
    """Level balance ``mu (delta_{k+1} - delta_k) + sum_i lambda_i (delta_{k-1}^{d_i} - delta_k^{d_i})``.

    Entry 0 is the level-0 balance ``mu delta_1 - sum_i lambda_i``; the last
    level uses ``delta_{K+1} = 0``.
    """
    delta = np.asarray(delta, dtype=float)
    lam = model.rho_i * model.mu
    d_i = model.d_i
    nxt = np.concatenate([delta[1:], [0.0]])
    res = np.empty(len(delta))
    res[0] = model.mu * nxt[0] - lam.sum() * delta[0]
    for k in range(1, len(delta)):
        arrivals = np.sum(lam * (delta[k - 1] ** d_i - delta[k] ** d_i))
        res[k] = arrivals - model.mu * (delta[k] - nxt[k])
    return res


def multichoice_decompositions(model, K):
    """Choice decomposition of a mobile-server or multi-class model on levels ``0..K``."""
    if K < 2:
        raise ValueError("need at least K = 2 levels")
    if isinstance(model, MobileServerModel):
        left, right = birth_death(model.lam, model.mu, K)
        return ChoiceDecomposition(left + right, ((model.f, left),), ((model.d, right),))
    if isinstance(model, MultiClassModel):
        left = birth_death(1.0, model.mu, K)[0]
        rights = tuple((d, birth_death(lam, model.mu, K)[1]) for lam, d in model.classes)
        total = left
        for _, part in rights:
            total = total + part
        return ChoiceDecomposition(total, ((1, left),), rights)
    raise TypeError(f"unsupported model type {type(model).__name__}")


__all__ = [
    "MobileServerModel", "MobileFixedPoint", "MultiClassModel", "mobile_exponent",
    "mobile_fixed_point", "mobile_residual", "multiclass_fixed_point", "multiclass_residual",
    "multichoice_decompositions",
]

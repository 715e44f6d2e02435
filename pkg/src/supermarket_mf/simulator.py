"""Discrete-event simulation of finite-n supermarket systems.

Every supported model is a continuous-time Markov chain with exponential
clocks, so each replication runs a competing-exponentials loop: draw the
next event time from the total rate, then pick the event in proportion to
its rate.  Per-replication seeds come from ``SeedSequence(seed).spawn``, so
results depend only on the seed and the configuration, never on how
replications are scheduled.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, is_dataclass

import numpy as np

from .core import FractionMeasure, TailSequence
from .errors import SimulationError
from .gim1 import Gim1Model, gim1_fixed_point
from .mg1 import Mg1Model, bmap_stationary, mg1_fixed_point
from .multichoice import MobileServerModel, MultiClassModel, mobile_fixed_point, multiclass_fixed_point

THREADS_ENV = "SUPERMARKET_MF_THREADS"
CSV_COLUMNS = ("time", "level", "phase", "mean_fraction", "std_error", "replications")


class _Uniforms:
    """Buffered U(0,1) draws from a numpy Generator."""

    __slots__ = ("rng", "buf", "i", "size")

    def __init__(self, rng, size=1 << 15):
        self.rng = rng
        self.size = size
        self.buf = rng.random(size).tolist()
        self.i = 0

    def __call__(self):
        if self.i == self.size:
            self.buf = self.rng.random(self.size).tolist()
            self.i = 0
        u = self.buf[self.i]
        self.i += 1
        return u

    def exp(self, rate):
        return -math.log(1.0 - self()) / rate

    def index(self, n):
        return min(int(self() * n), n - 1)


def _select(q, indices, u, longest):
    best = None
    ties = []
    for i in indices:
        v = q[i]
        if best is None or (v > best if longest else v < best):
            best = v
            ties = [i]
        elif v == best and i not in ties:
            ties.append(i)
    if len(ties) == 1:
        return ties[0]
    return ties[min(int(u * len(ties)), len(ties) - 1)]


def power_of_d_select(queue_lengths, indices, rng):
    """Index of a shortest queue among ``indices``; ties split uniformly."""
    return _select(queue_lengths, list(indices), rng.random(), longest=False)


def longest_of_f_select(queue_lengths, indices, rng):
    """Index of a longest queue among ``indices``; ties split uniformly."""
    return _select(queue_lengths, list(indices), rng.random(), longest=True)


def _sample_indices(u, n, k, replace):
    if replace or k >= n:
        return [u.index(n) for _ in range(k)]
    out = []
    while len(out) < k:
        i = u.index(n)
        if i not in out:
            out.append(i)
    return out


def _cumulative(weights):
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    return (np.cumsum(w) / total).tolist(), float(total)


def _pick(cum, u):
    for i, c in enumerate(cum):
        if u < c:
            return i
    return len(cum) - 1


@dataclass(frozen=True, eq=False)
class BmapStream:
    times: np.ndarray
    batches: np.ndarray
    phases: np.ndarray
    occupancy: np.ndarray
    horizon: float


def _bmap_table(bmap, n):
    """Per-phase cumulative event tables over (phase change j | batch k to j)."""
    m = bmap.m
    tables = []
    for i in range(m):
        weights, outcomes = [], []
        for j in range(m):
            if j != i and bmap.C[i, j] > 0:
                weights.append(bmap.C[i, j])
                outcomes.append((0, j))
        for k, Dk in enumerate(bmap.D, start=1):
            for j in range(m):
                if Dk[i, j] > 0:
                    weights.append(Dk[i, j])
                    outcomes.append((k, j))
        cum, total = _cumulative(weights)
        tables.append((cum, n * total, outcomes))
    return tables


def sample_bmap_stream(bmap, n, horizon, rng, phase0=None):
    """One BMAP path with rates scaled by ``n``; returns arrival events and phase occupancy."""
    u = _Uniforms(rng)
    tables = _bmap_table(bmap, n)
    if phase0 is None:
        phase0 = _pick(np.cumsum(bmap_stationary(bmap)[0]).tolist(), u())
    phase = phase0
    t = 0.0
    times, batches, phases = [], [], []
    occ = np.zeros(bmap.m)
    while True:
        cum, rate, outcomes = tables[phase]
        dt = u.exp(rate)
        if t + dt >= horizon:
            occ[phase] += horizon - t
            break
        occ[phase] += dt
        t += dt
        k, j = outcomes[_pick(cum, u())]
        if k:
            times.append(t)
            batches.append(k)
            phases.append(phase)
        phase = j
    return BmapStream(np.array(times), np.array(batches, dtype=int), np.array(phases, dtype=int),
                      occ / horizon, horizon)


def _ph_tables(service):
    m = service.m
    rows = []
    for i in range(m):
        weights = [service.T[i, j] if j != i else 0.0 for j in range(m)] + [service.T0[i]]
        cum, total = _cumulative(weights)
        rows.append((cum, total))
    return rows


def sample_ph_batch_service(service, rng, size=None):
    """Draw ``(duration, batch size)`` from the batch PH service law.

    With ``size`` returns two arrays of that length.
    """
    u = _Uniforms(rng, 4096)
    rows = _ph_tables(service)
    alpha_cum = np.cumsum(service.alpha).tolist()
    b_cum = np.cumsum(service.b).tolist()
    m = service.m

    def one():
        i = _pick(alpha_cum, u())
        total = 0.0
        while True:
            cum, rate = rows[i]
            total += u.exp(rate)
            j = _pick(cum, u())
            if j == m:
                return total, _pick(b_cum, u()) + 1
            i = j

    if size is None:
        return one()
    draws = [one() for _ in range(int(size))]
    return np.array([d for d, _ in draws]), np.array([b for _, b in draws], dtype=int)


@dataclass(frozen=True)
class SimConfig:
    """Simulation run description.

    ``initial`` is ``"empty"``, ``"fixed_point"`` or a sequence of aggregate
    tail fractions ``s_1, s_2, ...`` (fraction of queues with at least ``k``
    customers).  ``levels`` fixes the reported level count; by default it is
    the largest queue length seen.  Time averages are taken over
    ``[warmup, horizon]``.

    ``mobile_rule`` sets which of the ``f`` sampled lines the mobile server
    visits: ``"longest"`` or ``"shortest"`` (it idles when that line is
    empty).  Only the second has the level rates ``mu (x_k^f - x_{k+1}^f)``
    of the mean-field equations; the first is the stated service policy.
    """

    n: int
    model: object
    horizon: float
    warmup: float = 0.0
    seed: int = 0
    sample_times: tuple = ()
    replications: int = 1
    initial: object = "empty"
    levels: int | None = None
    replace: bool = True
    max_events: int = 200_000_000
    workers: int | None = None
    mobile_rule: str = "longest"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")
        if int(self.replications) != self.replications or self.replications < 1:
            raise ValueError("replications must be a positive integer")
        if not (0 <= self.warmup < self.horizon):
            raise ValueError("need 0 <= warmup < horizon")
        if self.mobile_rule not in ("longest", "shortest"):
            raise ValueError(f"unknown mobile_rule {self.mobile_rule!r}")
        if not isinstance(self.model, (Mg1Model, Gim1Model, MobileServerModel, MultiClassModel)):
            raise TypeError(f"unsupported model type {type(self.model).__name__}")
        times = tuple(sorted(float(t) for t in self.sample_times)) or (float(self.horizon),)
        if times[0] < 0 or times[-1] > self.horizon:
            raise ValueError("sample times must lie in [0, horizon]")
        object.__setattr__(self, "sample_times", times)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "replications", int(self.replications))


@dataclass(eq=False)
class SimState:
    """Finite-n state at the end of a replication."""

    queue_lengths: list
    phases: list
    clock: float
    arrivals: int
    departures: int
    events: int


class _Recorder:
    """Counts ``n_k^{(p)}`` with snapshots and time-weighted areas."""

    def __init__(self, n, P, sample_times, warmup, horizon):
        self.n = n
        self.P = P
        self.cnt = [[0] * P]
        self.area = [[0.0] * P]
        self.last = [[0.0] * P]
        self.samples = list(sample_times)
        self.ptr = 0
        self.snaps = []
        self.warmup = warmup
        self.horizon = horizon
        self.active = False

    def _grow(self, k):
        while len(self.cnt) <= k:
            self.cnt.append([0] * self.P)
            self.area.append([0.0] * self.P)
            self.last.append([0.0] * self.P)

    def add(self, k, p, delta, t):
        if k >= len(self.cnt):
            self._grow(k)
        if self.active:
            self.area[k][p] += self.cnt[k][p] * (t - self.last[k][p])
            self.last[k][p] = t
        self.cnt[k][p] += delta

    def advance(self, t_next):
        """Take snapshots and open the averaging window up to ``t_next``."""
        while self.ptr < len(self.samples) and self.samples[self.ptr] <= t_next:
            self.snaps.append([row[:] for row in self.cnt])
            self.ptr += 1
        if not self.active and t_next >= self.warmup:
            self.active = True
            for row in self.last:
                for p in range(self.P):
                    row[p] = self.warmup

    def finish(self):
        self.advance(self.horizon)
        for k, row in enumerate(self.cnt):
            for p in range(self.P):
                self.area[k][p] += row[p] * (self.horizon - self.last[k][p])
                self.last[k][p] = self.horizon

    def arrays(self, L):
        def pad(rows):
            out = np.zeros((L + 1, self.P))
            for k, row in enumerate(rows[:L + 1]):
                out[k] = row
            return out

        snaps = np.stack([pad(s) for s in self.snaps]) / self.n
        avg = pad(self.area) / (self.n * (self.horizon - self.warmup))
        return snaps, avg

    @property
    def max_level(self):
        for k in range(len(self.cnt) - 1, -1, -1):
            if any(self.cnt[k]) or any(a > 0 for a in self.area[k]):
                return k
        return 0


def _initial_tail(cfg):
    init = cfg.initial
    model = cfg.model
    if isinstance(init, str):
        if init == "empty":
            return []
        if init != "fixed_point":
            raise ValueError(f"unknown initial state {init!r}")
        if isinstance(model, Mg1Model):
            seq = mg1_fixed_point(model, tail_tol=0.5 / cfg.n)
            return list(seq.r * seq.base.sum())
        if isinstance(model, Gim1Model):
            return list(gim1_fixed_point(model, tail_tol=0.5 / cfg.n).r)
        if isinstance(model, MobileServerModel):
            fp = mobile_fixed_point(model, K=None if model.regime != "transient" else 50,
                                    tail_tol=0.5 / cfg.n)
            return list(fp.pi[1:])
        return list(multiclass_fixed_point(model, tail_tol=0.5 / cfg.n)[1:])
    tail = [float(x) for x in init]
    if any(a < b for a, b in zip(tail, tail[1:])) or any(x < 0 or x > 1 for x in tail):
        raise ValueError("initial tail fractions must be non-increasing values in [0, 1]")
    return tail


def _initial_queues(n, tail):
    counts = [int(round(n * s)) for s in tail]
    q = [0] * n
    for c in counts:
        for s in range(min(c, n)):
            q[s] += 1
    return q


class _BusySet:
    """Servers with at least one customer, O(1) insert/remove/uniform pick."""

    __slots__ = ("items", "pos")

    def __init__(self):
        self.items = []
        self.pos = {}

    def add(self, s):
        self.pos[s] = len(self.items)
        self.items.append(s)

    def remove(self, s):
        i = self.pos.pop(s)
        last = self.items.pop()
        if last != s:
            self.items[i] = last
            self.pos[last] = i

    def __len__(self):
        return len(self.items)


def _run(cfg, seed_seq):
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    u = _Uniforms(rng)
    model = cfg.model
    n = cfg.n
    q = _initial_queues(n, _initial_tail(cfg))
    if isinstance(model, Mg1Model):
        return _run_mg1(cfg, model, u, q)
    if isinstance(model, Gim1Model):
        return _run_gim1(cfg, model, u, q)
    if isinstance(model, MobileServerModel):
        return _run_mobile(cfg, model, u, q)
    return _run_multiclass(cfg, model, u, q)


def _check(q, arrivals, departures, initial):
    if arrivals - departures + initial != sum(q):
        raise SimulationError("customer conservation violated")


def _run_mg1(cfg, model, u, q):
    n, mu, d, replace = cfg.n, model.mu, model.d, cfg.replace
    bmap = model.bmap
    tables = _bmap_table(bmap, n)
    phase = _pick(np.cumsum(model.gamma).tolist(), u())
    rec = _Recorder(n, bmap.m, cfg.sample_times, cfg.warmup, cfg.horizon)
    busy = _BusySet()
    rec.add(0, phase, n, 0.0)
    for s, v in enumerate(q):
        for k in range(1, v + 1):
            rec.add(k, phase, 1, 0.0)
        if v:
            busy.add(s)
    initial = sum(q)
    t, events, arrivals, departures = 0.0, 0, 0, 0
    while True:
        cum, a_rate, outcomes = tables[phase]
        s_rate = mu * len(busy)
        total = a_rate + s_rate
        t_next = t + u.exp(total)
        rec.advance(t_next)
        if t_next >= cfg.horizon:
            break
        t = t_next
        events += 1
        if events > cfg.max_events:
            raise SimulationError(f"event budget {cfg.max_events} exhausted at t={t:.4g}")
        if u() * total < s_rate:
            s = busy.items[u.index(len(busy))]
            rec.add(q[s], phase, -1, t)
            q[s] -= 1
            departures += 1
            if q[s] == 0:
                busy.remove(s)
            continue
        k, j = outcomes[_pick(cum, u())]
        if k:
            s = _select(q, _sample_indices(u, n, d, replace), u(), False)
            v = q[s]
            for lev in range(v + 1, v + k + 1):
                rec.add(lev, phase, 1, t)
            if v == 0:
                busy.add(s)
            q[s] = v + k
            arrivals += k
        if j != phase:
            for lev in range(len(rec.cnt)):
                c = rec.cnt[lev][phase]
                if c:
                    rec.add(lev, phase, -c, t)
                    rec.add(lev, j, c, t)
            phase = j
    rec.finish()
    _check(q, arrivals, departures, initial)
    return rec, SimState(q, [phase], t, arrivals, departures, events)


def _run_gim1(cfg, model, u, q):
    n, lam, d, replace = cfg.n, model.lam, model.d, cfg.replace
    svc = model.service
    m = svc.m
    rows = _ph_tables(svc)
    exit_rates = [r[1] for r in rows]
    alpha_cum = np.cumsum(svc.alpha).tolist()
    eta_cum = np.cumsum(svc.eta).tolist()
    b_cum = np.cumsum(svc.b).tolist()
    rec = _Recorder(n, m, cfg.sample_times, cfg.warmup, cfg.horizon)
    rec.add(0, 0, n, 0.0)
    busy = [_BusySet() for _ in range(m)]
    ph = [0] * n
    for s, v in enumerate(q):
        if v:
            ph[s] = _pick(eta_cum, u())
            busy[ph[s]].add(s)
            for k in range(1, v + 1):
                rec.add(k, ph[s], 1, 0.0)
    initial = sum(q)
    t, events, arrivals, departures = 0.0, 0, 0, 0
    a_rate = n * lam
    while True:
        weights = [len(busy[i]) * exit_rates[i] for i in range(m)]
        s_rate = sum(weights)
        total = a_rate + s_rate
        t_next = t + u.exp(total)
        rec.advance(t_next)
        if t_next >= cfg.horizon:
            break
        t = t_next
        events += 1
        if events > cfg.max_events:
            raise SimulationError(f"event budget {cfg.max_events} exhausted at t={t:.4g}")
        x = u() * total
        if x < a_rate:
            s = _select(q, _sample_indices(u, n, d, replace), u(), False)
            v = q[s]
            if v == 0:
                ph[s] = _pick(alpha_cum, u())
                busy[ph[s]].add(s)
            rec.add(v + 1, ph[s], 1, t)
            q[s] = v + 1
            arrivals += 1
            continue
        x -= a_rate
        i = 0
        while i < m - 1 and x >= weights[i]:
            x -= weights[i]
            i += 1
        s = busy[i].items[u.index(len(busy[i]))]
        j = _pick(rows[i][0], u())
        v = q[s]
        if j < m:
            busy[i].remove(s)
            busy[j].add(s)
            for lev in range(1, v + 1):
                rec.add(lev, i, -1, t)
                rec.add(lev, j, 1, t)
            ph[s] = j
            continue
        # batch completion: remove min(batch, queue) customers
        served = min(_pick(b_cum, u()) + 1, v)
        for lev in range(v - served + 1, v + 1):
            rec.add(lev, i, -1, t)
        left = v - served
        busy[i].remove(s)
        if left:
            j = _pick(alpha_cum, u())
            busy[j].add(s)
            for lev in range(1, left + 1):
                rec.add(lev, i, -1, t)
                rec.add(lev, j, 1, t)
            ph[s] = j
        q[s] = left
        departures += served
    rec.finish()
    _check(q, arrivals, departures, initial)
    return rec, SimState(q, ph, t, arrivals, departures, events)


def _run_mobile(cfg, model, u, q):
    n, d, f, replace = cfg.n, model.d, model.f, cfg.replace
    longest = cfg.mobile_rule == "longest"
    rec = _Recorder(n, 1, cfg.sample_times, cfg.warmup, cfg.horizon)
    rec.add(0, 0, n, 0.0)
    for v in q:
        for k in range(1, v + 1):
            rec.add(k, 0, 1, 0.0)
    initial = sum(q)
    a_rate, s_rate = n * model.lam, n * model.mu
    total = a_rate + s_rate
    t, events, arrivals, departures = 0.0, 0, 0, 0
    while True:
        t_next = t + u.exp(total)
        rec.advance(t_next)
        if t_next >= cfg.horizon:
            break
        t = t_next
        events += 1
        if events > cfg.max_events:
            raise SimulationError(f"event budget {cfg.max_events} exhausted at t={t:.4g}")
        if u() * total < a_rate:
            s = _select(q, _sample_indices(u, n, d, replace), u(), False)
            q[s] += 1
            rec.add(q[s], 0, 1, t)
            arrivals += 1
        else:
            # the server visits the longest (or shortest) of f sampled lines; an empty pick idles
            s = _select(q, _sample_indices(u, n, f, replace), u(), longest)
            if q[s]:
                rec.add(q[s], 0, -1, t)
                q[s] -= 1
                departures += 1
    rec.finish()
    _check(q, arrivals, departures, initial)
    return rec, SimState(q, [], t, arrivals, departures, events)


def _run_multiclass(cfg, model, u, q):
    n, mu, replace = cfg.n, model.mu, cfg.replace
    lam_cum, a_rate = _cumulative([lam for lam, _ in model.classes])
    a_rate *= n
    choices = [d for _, d in model.classes]
    rec = _Recorder(n, 1, cfg.sample_times, cfg.warmup, cfg.horizon)
    rec.add(0, 0, n, 0.0)
    busy = _BusySet()
    for s, v in enumerate(q):
        for k in range(1, v + 1):
            rec.add(k, 0, 1, 0.0)
        if v:
            busy.add(s)
    initial = sum(q)
    t, events, arrivals, departures = 0.0, 0, 0, 0
    while True:
        s_rate = mu * len(busy)
        total = a_rate + s_rate
        t_next = t + u.exp(total)
        rec.advance(t_next)
        if t_next >= cfg.horizon:
            break
        t = t_next
        events += 1
        if events > cfg.max_events:
            raise SimulationError(f"event budget {cfg.max_events} exhausted at t={t:.4g}")
        if u() * total < a_rate:
            d = choices[_pick(lam_cum, u())]
            s = _select(q, _sample_indices(u, n, d, replace), u(), False)
            if q[s] == 0:
                busy.add(s)
            q[s] += 1
            rec.add(q[s], 0, 1, t)
            arrivals += 1
        else:
            s = busy.items[u.index(len(busy))]
            rec.add(q[s], 0, -1, t)
            q[s] -= 1
            departures += 1
            if q[s] == 0:
                busy.remove(s)
    rec.finish()
    _check(q, arrivals, departures, initial)
    return rec, SimState(q, [], t, arrivals, departures, events)


def _level_dims(model, L):
    if isinstance(model, Mg1Model):
        return (model.bmap.m,) * (L + 1)
    if isinstance(model, Gim1Model):
        return (1,) + (model.service.m,) * L
    return (1,) * (L + 1)


def _flatten(arr, dims):
    """(..., L+1, P) array to flat vectors following ``dims``."""
    parts = [arr[..., k, :m] for k, m in enumerate(dims)]
    return np.concatenate(parts, axis=-1)


@dataclass(eq=False)
class EmpiricalMeasure:
    """Replicated empirical fraction measures.

    ``values`` has shape ``(R, T, N)`` with flat per-time vectors laid out by
    ``dims``; ``time_avg`` has shape ``(R, N)`` and holds the per-replication
    time averages over ``window``.
    """

    times: np.ndarray
    dims: tuple
    values: np.ndarray
    time_avg: np.ndarray
    window: tuple
    n: int
    final_states: list = field(default_factory=list, repr=False)

    @property
    def replications(self):
        return self.values.shape[0]

    @property
    def levels(self):
        return len(self.dims) - 1

    def _stats(self, data):
        mean = data.mean(axis=0)
        if data.shape[0] > 1:
            se = data.std(axis=0, ddof=1) / math.sqrt(data.shape[0])
        else:
            se = np.zeros_like(mean)
        return mean, se

    def mean(self):
        return self._stats(self.values)[0]

    def std_error(self):
        return self._stats(self.values)[1]

    def time_average(self):
        """Mean and standard error of the per-replication time averages."""
        return self._stats(self.time_avg)

    def measure(self, index=-1):
        return FractionMeasure.from_flat(self.mean()[index], self.dims, self.times[index])

    def aggregate(self, data):
        """Sum the phases of each level: ``(..., N)`` to ``(..., L+1)``."""
        off = np.concatenate([[0], np.cumsum(self.dims)])
        return np.stack([data[..., off[k]:off[k + 1]].sum(axis=-1) for k in range(len(self.dims))], axis=-1)

    def aggregate_stats(self, which="samples"):
        data = self.values if which == "samples" else self.time_avg
        return self._stats(self.aggregate(data))

    def rows(self, which="samples"):
        if which == "samples":
            mean, se = self._stats(self.values)
            times = self.times
        else:
            mean, se = self._stats(self.time_avg[:, None, :])
            times = np.array([self.window[1]])
        off = np.concatenate([[0], np.cumsum(self.dims)])
        for ti, t in enumerate(times):
            for k, m in enumerate(self.dims):
                for p in range(m):
                    idx = off[k] + p
                    yield (t, k, p, mean[ti, idx], se[ti, idx], self.replications)


def _worker_count(cfg):
    if cfg.workers is not None:
        return max(1, int(cfg.workers))
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def _run_one(args):
    cfg, seed_seq = args
    rec, state = _run(cfg, seed_seq)
    return rec, state


def simulate(cfg):
    """Run ``cfg.replications`` independent replications and collect the empirical measure."""
    seeds = np.random.SeedSequence(int(cfg.seed)).spawn(cfg.replications)
    jobs = [(cfg, s) for s in seeds]
    workers = min(_worker_count(cfg), cfg.replications)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    L = cfg.levels if cfg.levels is not None else max(max(r.max_level for r, _ in results), 1)
    dims = _level_dims(cfg.model, L)
    values, avgs = [], []
    for rec, _ in results:
        snaps, avg = rec.arrays(L)
        values.append(_flatten(snaps, dims))
        avgs.append(_flatten(avg, dims))
    return EmpiricalMeasure(
        times=np.array(cfg.sample_times), dims=dims, values=np.stack(values),
        time_avg=np.stack(avgs), window=(cfg.warmup, cfg.horizon), n=cfg.n,
        final_states=[s for _, s in results],
    )


@dataclass(frozen=True, eq=False)
class Comparison:
    """``distances`` is the sup over levels per sample time, ``level_sup`` the
    sup over sample times per compared level; ``diff`` holds the raw
    ``empirical - predicted`` array (times x levels)."""

    distances: np.ndarray
    z_scores: np.ndarray
    levels: np.ndarray
    diff: np.ndarray

    @property
    def level_sup(self):
        return np.abs(self.diff).max(axis=0)

    @property
    def sup(self):
        return float(np.abs(self.diff).max())


def _predicted_aggregate(pred, L):
    if isinstance(pred, TailSequence):
        agg = pred.aggregate()
    elif isinstance(pred, FractionMeasure):
        agg = pred.aggregate()
    else:
        agg = np.asarray(getattr(pred, "pi", pred), dtype=float)
    out = np.zeros(L + 1)
    k = min(L + 1, len(agg))
    out[:k] = agg[:k]
    return out


def compare_to_mean_field(emp, predicted, which="samples", levels=None):
    """Sup-norm distance between empirical and predicted level fractions.

    Comparison is phase-aggregated.  ``predicted`` is a TailSequence,
    FractionMeasure or array of level fractions (used for every sample time),
    or a list of FractionMeasure matched to the sample times.  ``which``
    selects the sample-time snapshots or the time averages.  ``levels``
    restricts the compared levels (default: all).
    """
    mean, se = emp.aggregate_stats(which)
    mean = np.atleast_2d(mean)
    se = np.atleast_2d(se)
    L = emp.levels
    if isinstance(predicted, (list, tuple)) and predicted and isinstance(predicted[0], FractionMeasure):
        if len(predicted) != mean.shape[0]:
            raise ValueError("one predicted measure per sample time is required")
        pred = np.stack([_predicted_aggregate(p, L) for p in predicted])
    else:
        pred = np.broadcast_to(_predicted_aggregate(predicted, L), mean.shape)
    sel = np.arange(L + 1) if levels is None else np.asarray(list(levels))
    if sel.max() > L:
        raise ValueError(f"levels beyond the simulated range 0..{L}")
    diff = mean[:, sel] - pred[:, sel]
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se[:, sel] > 0, diff / se[:, sel], np.where(diff == 0, 0.0, np.inf))
    return Comparison(np.abs(diff).max(axis=1), z, sel, diff)


def write_csv(emp, path, which="samples"):
    """Write ``emp.rows(which)`` to a path or an open text stream."""
    if hasattr(path, "write"):
        _write_rows(emp, path, which)
        return
    with open(path, "w", newline="") as fh:
        _write_rows(emp, fh, which)


def _write_rows(emp, fh, which):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for t, k, p, mean, se, r in emp.rows(which):
        w.writerow([repr(float(t)), k, p, repr(float(mean)), repr(float(se)), r])


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if is_dataclass(obj):
        return {k: _jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    return obj


def write_manifest(cfg, path, extra=None):
    """Echo the full configuration and derived seeds as JSON."""
    seeds = np.random.SeedSequence(int(cfg.seed)).spawn(cfg.replications)
    data = {
        "model_type": type(cfg.model).__name__,
        "model": _jsonable(cfg.model),
        "n": cfg.n, "horizon": cfg.horizon, "warmup": cfg.warmup, "seed": int(cfg.seed),
        "sample_times": list(cfg.sample_times), "replications": cfg.replications,
        "initial": _jsonable(cfg.initial), "levels": cfg.levels, "replace": cfg.replace,
        "mobile_rule": cfg.mobile_rule,
        "replication_seeds": [[int(x) for x in s.generate_state(2)] for s in seeds],
    }
    if extra:
        data.update(_jsonable(extra))
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


__all__ = [
    "SimConfig", "SimState", "EmpiricalMeasure", "Comparison", "BmapStream",
    "power_of_d_select", "longest_of_f_select", "sample_bmap_stream",
    "sample_ph_batch_service", "simulate", "compare_to_mean_field", "write_csv",
    "write_manifest",
]


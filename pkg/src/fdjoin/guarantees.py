"""Adjusted recall targets, guaranteed threshold selection and the precision extension.

The failure event for a worst-case positive-distance dataset D with n rows is:
some threshold vector misses the true target T on D while a uniform sample
of k rows still shows recall >= T'. On the one-hot datasets built here the
event reduces to excluding a_i of axis i's largest values. It happens iff some
(a_1..a_r) with sum(a) >= x hides at most m sampled rows, where

    x = n - ceil(n*T) + 1      (fewest misses that break the true target)
    m = k - ceil(k*T')         (most sampled misses the sample target allows)
"""
from __future__ import annotations

import json
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass
from itertools import combinations, product
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .core import DomainError, GuaranteeInfeasible, Pair
from .scaffold import ThresholdResult, min_cost_threshold

log = logging.getLogger(__name__)

CONSTRUCTIONS = ("tight", "short", "uniform")
_EPS = 1e-9
_CHUNK = 8192


class InstanceTooLarge(DomainError):
    """Exhaustive enumeration would visit too many subsets."""


def _ceil(x: float) -> int:
    return math.ceil(x - _EPS)


def required_hits(target: float, size: int) -> int:
    """Smallest count c with c / size >= target."""
    return max(0, _ceil(target * size))


# -- worst-case datasets -------------------------------------------------------------

def axis_length(n: int, r: int, target: float, construction: str = "short") -> int:
    if construction == "short":
        return _ceil(n * (1 - target)) - 1
    if construction == "tight":
        return n - required_hits(target, n) + 1
    if construction == "uniform":
        return n // r
    raise DomainError(f"unknown construction {construction!r}")


@dataclass(frozen=True)
class WorstCaseDataset:
    """n one-hot rows in r dimensions: axis i carries the values 1..u once each, the rest are zero."""

    n: int
    r: int
    u: int
    target: float
    construction: str = "short"

    @property
    def zeros(self) -> int:
        return self.n - self.r * self.u

    @property
    def misses_to_fail(self) -> int:
        return self.n - required_hits(self.target, self.n) + 1

    @property
    def rows(self) -> np.ndarray:
        out = np.zeros((self.n, self.r), dtype=np.int64)
        for i in range(self.r):
            out[i * self.u:(i + 1) * self.u, i] = np.arange(1, self.u + 1)
        return out


def worst_case_dataset(n_plus: int, r: int, target: float,
                       construction: str = "short") -> WorstCaseDataset:
    """Build the one-hot worst case.

    ``short`` uses u = ceil(n(1-T)) - 1. ``tight`` uses u = n - ceil(nT) + 1,
    the fewest misses that break the target. ``uniform`` spreads n // r values
    per axis.
    """
    if r < 1 or n_plus < 1:
        raise DomainError("need n_plus >= 1 and r >= 1")
    u = axis_length(n_plus, r, target, construction)
    if u < 1:
        raise DomainError(f"axis length u={u} < 1: target {target} is too close to 1 for n+={n_plus}")
    if r * u > n_plus:
        raise DomainError(f"r={r} axes of {u} values do not fit in n+={n_plus} rows")
    return WorstCaseDataset(n_plus, r, u, target, construction)


# -- exact failure probability (enumeration oracle) ---------------------------------

MAX_SUBSETS = 1_000_000


def failure_prob_exact(D: WorstCaseDataset, k: int, target: float, sample_targets):
    """Exact failure probability by enumerating every k-subset of D's rows.

    Every threshold vector on the grid {-1, 0, .., u}^r is tried; a subset
    fails at T' if some threshold has true recall below ``target`` yet
    sample recall >= T'. Returns a float for a scalar T', else an array.
    """
    scalar = np.isscalar(sample_targets)
    tps = np.atleast_1d(np.asarray(sample_targets, dtype=float))
    n_sub = math.comb(D.n, k)
    if n_sub > MAX_SUBSETS:
        raise InstanceTooLarge(f"C({D.n},{k}) = {n_sub} subsets exceeds {MAX_SUBSETS}")
    rows = D.rows
    need_true = required_hits(target, D.n)
    subsets = np.array(list(combinations(range(D.n), k)), dtype=np.int64).reshape(n_sub, k)
    best = np.full(n_sub, -1, dtype=np.int64)  # most sampled rows any failing threshold admits
    for theta in product(range(-1, D.u + 1), repeat=D.r):
        admitted = np.all(rows <= np.asarray(theta), axis=1)
        if admitted.sum() >= need_true:
            continue
        np.maximum(best, admitted[subsets].sum(axis=1), out=best)
    out = np.array([np.mean(best >= required_hits(t, k)) for t in tps])
    return float(out[0]) if scalar else out


def failure_prob_single_axis(n: int, u: int, k: int, target: float, sample_target: float) -> float:
    """Closed form for r = 1: hypergeometric tail of sampled rows among the top x values."""
    x = n - required_hits(target, n) + 1
    if x > u:
        return 0.0
    m = k - required_hits(sample_target, k)
    if m < 0:
        return 0.0
    return float(stats.hypergeom.cdf(m, n, x, k))


# -- Monte-Carlo failure probability ------------------------------------------------

def _sorted_axis_draws(rng: np.random.Generator, u: int, counts: np.ndarray, width: int) -> np.ndarray:
    """Per trial, the smallest ``width`` values of a uniform counts[t]-subset of 1..u (pad u+1)."""
    c = len(counts)
    kmax = int(counts.max()) if c else 0
    out = np.full((c, width), u + 1, dtype=np.int64)
    if kmax == 0:
        return out
    if kmax * kmax * 4 < u:
        # collisions are rare: draw with replacement and redraw rows holding duplicates
        draws = rng.integers(1, u + 1, size=(c, kmax))
        cols = np.arange(kmax)[None, :]
        todo = np.arange(c)
        while len(todo):
            sub = np.where(cols < counts[todo, None], draws[todo], u + 1 + cols)
            s = np.sort(sub, axis=1)
            dup = np.any((np.diff(s, axis=1) == 0) & (s[:, 1:] <= u), axis=1)
            todo = todo[dup]
            if len(todo):
                draws[todo] = rng.integers(1, u + 1, size=(len(todo), kmax))
        sub = np.where(cols < counts[:, None], draws, u + 1)
        s = np.sort(sub, axis=1)
    else:
        keys = rng.random((c, u))
        part = np.argpartition(keys, kmax - 1, axis=1)[:, :kmax] if kmax < u else \
            np.tile(np.arange(u), (c, 1))
        order = np.argsort(np.take_along_axis(keys, part, axis=1), axis=1)
        ranked = np.take_along_axis(part, order, axis=1) + 1
        ranked = np.where(np.arange(ranked.shape[1])[None, :] < counts[:, None], ranked, u + 1)
        s = np.sort(ranked, axis=1)
    w = min(width, s.shape[1])
    out[:, :w] = s[:, :w]
    return out


def _min_hidden_budget(D: WorstCaseDataset, k: int, budget: int, rng: np.random.Generator,
                       size: int) -> np.ndarray:
    """Per trial: fewest sampled rows that must be excluded to exclude >= x rows in total.

    Values above ``budget`` are reported as budget + 1.
    """
    x = D.misses_to_fail
    colors = [D.u] * D.r + ([D.zeros] if D.zeros > 0 else [])
    counts = rng.multivariate_hypergeometric(colors, k, size=size)
    width = budget + 1
    best = None
    for i in range(D.r):
        s = _sorted_axis_draws(rng, D.u, counts[:, i], width)
        # g[j]: most axis values excludable while hiding only j sampled rows
        g = np.minimum(s - 1, D.u)
        if best is None:
            best = g
        else:
            nxt = np.full_like(best, -1)
            for b in range(width):
                nxt[:, b] = np.max(best[:, b::-1][:, :b + 1] + g[:, :b + 1], axis=1)
            best = nxt
    ok = best >= x
    return np.where(ok.any(axis=1), ok.argmax(axis=1), budget + 1)


class _BudgetCache:
    """LRU of per-trial budgets, extended in fixed chunks so any N reuses a prefix."""

    def __init__(self, capacity: int = 512):
        self.capacity = capacity
        self._data: OrderedDict = OrderedDict()

    def get(self, D: WorstCaseDataset, k: int, budget: int, seed: int, n_trials: int) -> np.ndarray:
        key = (D.n, D.r, D.u, D.misses_to_fail, k, budget, seed)
        have = self._data.pop(key, np.zeros(0, dtype=np.int64))
        chunks = [have]
        done = len(have)
        while done < n_trials:
            ss = np.random.SeedSequence(entropy=[seed, D.n, D.r, D.u], spawn_key=(done // _CHUNK,))
            chunks.append(_min_hidden_budget(D, k, budget, np.random.default_rng(ss), _CHUNK))
            done += _CHUNK
        arr = np.concatenate(chunks) if len(chunks) > 1 else have
        self._data[key] = arr
        while len(self._data) > self.capacity:
            self._data.popitem(last=False)
        return arr[:n_trials]


_BUDGETS = _BudgetCache()


def hoeffding_half_width(n_trials: int, delta1: float) -> float:
    return math.sqrt(math.log(1.0 / delta1) / (2.0 * n_trials))


@dataclass(frozen=True)
class McEstimate:
    p: float
    half_width: float
    n_trials: int


def failure_prob_mc(D: WorstCaseDataset, k: int, target: float, sample_targets, n_trials: int,
                    seed: int = 0, delta1: float = 0.01):
    """Monte-Carlo failure estimate with its one-sided Hoeffding half-width.

    All sample targets share the same simulated samples. Trials are produced
    in seeded chunks, so the first N trials are identical for every N.
    """
    if n_trials < 1:
        raise DomainError("need at least one trial")
    if abs(target - D.target) > 1e-12:
        D = WorstCaseDataset(D.n, D.r, D.u, target, D.construction)
    scalar = np.isscalar(sample_targets)
    tps = np.atleast_1d(np.asarray(sample_targets, dtype=float))
    ms = np.array([k - required_hits(t, k) for t in tps])
    hw = hoeffding_half_width(n_trials, delta1)
    budget = int(max(0, min(k, ms.max())))
    f = _BUDGETS.get(D, k, budget, seed, n_trials)
    out = []
    for m in ms:
        if m < 0:
            p = 0.0
        elif m >= k:
            p = 1.0 if D.misses_to_fail <= D.r * D.u else 0.0
        else:
            p = float(np.mean(f <= m))
        out.append(McEstimate(p, hw, n_trials))
    return out[0] if scalar else out


# -- sample-size bounds and delta budgeting ------------------------------------------

def estimate_n_plus_bounds(k_prime: int, k_plus: int, n: int, delta2: float) -> tuple[float, float]:
    """Hoeffding interval for the number of positives among n pairs, from k_plus hits in k_prime draws."""
    if k_prime < 1:
        raise DomainError("need k' >= 1")
    h = math.sqrt(math.log(1.0 / delta2) / (2.0 * k_prime))
    rate = k_plus / k_prime
    lo = max(n * (rate - h), float(max(k_plus, 1)))
    return lo, n * (rate + h)


@dataclass(frozen=True)
class DeltaBudget:
    delta: float
    delta1: float
    delta2: float
    delta3: float
    n_trials: int

    @classmethod
    def split(cls, delta: float, k_plus: int, n: int, k_prime: int,
              precision: float = 0.01) -> "DeltaBudget":
        """delta2 = delta/10 and delta3 = 0.8 delta. delta1 covers every (n+, T') estimate."""
        if not 0 < delta < 1:
            raise DomainError("delta must lie in (0, 1)")
        d2 = delta / 10
        h = math.sqrt(math.log(1.0 / d2) / (2.0 * k_prime))
        d1 = delta / (10 * 2 * k_plus * n * h)
        trials = math.ceil(math.log(1.0 / d1) / (2 * precision ** 2))
        return cls(delta, d1, d2, 0.8 * delta, trials)


# -- adjusted target ---------------------------------------------------------------------

@dataclass(frozen=True)
class AdjTargetQuery:
    k_plus: int
    r: int
    target: float
    delta: float
    n_lo: float
    n_hi: float
    n_trials: int | None = None
    seed: int = 0
    delta1: float | None = None
    construction: str = "tight"
    evaluator: str = "mc"
    max_points: int = 40

    def budget(self) -> tuple[float, float, int]:
        """(delta1, delta3, N) for this query."""
        d1 = self.delta1
        if d1 is None:
            # standalone query: cover every integer n+ in the range and every T'
            d1 = self.delta / (20 * self.k_plus * max(1.0, self.n_hi))
        trials = self.n_trials or math.ceil(math.log(1.0 / d1) / (2 * 0.01 ** 2))
        return d1, 0.8 * self.delta, trials


def check_guarantee_conditions(k_plus: int, r: int, target: float) -> None:
    if target >= 1:
        raise DomainError("a recall target of 1 cannot be certified from a sample; "
                          "the guarantee needs T < 1")
    limit = 1.0 / (1.0 - target)
    if not k_plus > limit:
        raise DomainError(f"guarantee needs k+ > 1/(1-T) = {limit:.3g}, got k+={k_plus}; "
                          "sample more positives")
    if not r <= limit + 1e-9:
        raise DomainError(f"guarantee needs r <= 1/(1-T) = {limit:.3g}, got r={r} clauses")


def sample_target_grid(target: float, k_plus: int) -> list[float]:
    grid = []
    i = 1
    while target + i / k_plus <= 1 + 1e-12:
        grid.append(min(1.0, target + i / k_plus))
        i += 1
    if grid and abs(grid[-1] - 1.0) < 1e-12:
        grid[-1] = 1.0
    if not grid or grid[-1] < 1.0:
        grid.append(1.0)
    return grid


def _shape_key(n: int, r: int, target: float, construction: str) -> tuple[int, int]:
    return axis_length(n, r, target, construction), n - required_hits(target, n) + 1


def _last_with_key_at_most(lo: int, hi: int, key, bound) -> int:
    """Largest n in [lo, hi] with key(n) <= bound (key is non-decreasing); assumes key(lo) <= bound."""
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if key(mid) <= bound:
            lo = mid
        else:
            hi = mid - 1
    return lo


def evaluation_points(n_lo: float, n_hi: float, k_plus: int, r: int, target: float,
                      construction: str, n_cap: int | None = None, max_points: int = 40) -> list[int]:
    """Integer n+ values at which to evaluate the worst case.

    The dataset shape (u, x) is piecewise constant in n+. Within one piece,
    adding zero rows only dilutes the sample, so the piece's right end is its
    worst member. With more pieces than ``max_points``, right ends are taken at
    a fixed geometric lattice of u values so neighbouring queries share points.
    """
    lo = max(k_plus, math.ceil(n_lo - _EPS), 1)
    hi = math.floor(n_hi + _EPS)
    if n_cap is not None:
        hi = min(hi, n_cap)
    if hi < lo:
        hi = lo
    key = lambda n: _shape_key(n, r, target, construction)  # noqa: E731
    points = []
    n = lo
    while n <= hi and len(points) <= max_points:
        end = _last_with_key_at_most(n, hi, key, key(n))
        points.append(end)
        n = end + 1
    if n > hi:
        return points
    ukey = lambda n: axis_length(n, r, target, construction)  # noqa: E731
    u_lo, u_hi = ukey(lo), ukey(hi)
    ratio = 1.02
    while True:
        lattice = sorted({int(math.ceil(ratio ** j)) for j in range(0, 2000)
                          if u_lo <= math.ceil(ratio ** j) <= u_hi})
        if len(lattice) + 2 <= max_points:
            break
        ratio *= 1.25
    pts = {_last_with_key_at_most(lo, hi, ukey, max(u, u_lo)) for u in lattice}
    pts.add(_last_with_key_at_most(lo, hi, ukey, u_lo))
    pts.add(hi)
    return sorted(pts)


@dataclass(frozen=True)
class AdjTargetResult:
    sample_target: float
    worst_bound: float
    points: tuple[int, ...]
    n_trials: int
    delta1: float
    delta3: float


def _failure_bounds(q: AdjTargetQuery, n_hat: int, grid: list[float], d1: float, trials: int) -> np.ndarray:
    try:
        D = worst_case_dataset(n_hat, q.r, q.target, q.construction)
    except DomainError:
        return np.ones(len(grid))
    if q.evaluator == "exact":
        if q.r == 1:
            return np.array([failure_prob_single_axis(D.n, D.u, q.k_plus, q.target, t) for t in grid])
        return np.asarray(failure_prob_exact(D, q.k_plus, q.target, grid))
    seed = int(np.random.SeedSequence([q.seed, n_hat]).generate_state(1)[0])
    ests = failure_prob_mc(D, q.k_plus, q.target, grid, trials, seed=seed, delta1=d1)
    return np.array([e.p + e.half_width for e in ests])


def adj_target(q: AdjTargetQuery, n_cap: int | None = None) -> AdjTargetResult:
    """Smallest T' on the 1/k+ grid whose worst-case failure bound is <= delta3 (inf if none)."""
    check_guarantee_conditions(q.k_plus, q.r, q.target)
    if q.evaluator not in ("mc", "exact"):
        raise DomainError(f"unknown evaluator {q.evaluator!r}")
    d1, d3, trials = q.budget()
    grid = sample_target_grid(q.target, q.k_plus)
    points = evaluation_points(q.n_lo, q.n_hi, q.k_plus, q.r, q.target, q.construction,
                               n_cap=n_cap, max_points=q.max_points)
    worst = np.zeros(len(grid))
    for n_hat in points:
        np.maximum(worst, _failure_bounds(q, n_hat, grid, d1, trials), out=worst)
    ok = np.flatnonzero(worst <= d3)
    if len(ok) == 0:
        return AdjTargetResult(math.inf, float(worst[-1]), tuple(points), trials, d1, d3)
    i = int(ok[0])
    return AdjTargetResult(grid[i], float(worst[i]), tuple(points), trials, d1, d3)


class AdjTargetTable:
    """JSON-backed table of adjusted targets, one row per query."""

    FIELDS = ("k_plus", "r", "T", "delta", "N", "seed", "n_lo", "n_hi", "construction")

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.rows: list[dict] = []
        if self.path and self.path.exists():
            self.rows = json.loads(self.path.read_text())

    @staticmethod
    def _row_key(q: AdjTargetQuery, trials: int) -> dict:
        return {"k_plus": q.k_plus, "r": q.r, "T": q.target, "delta": q.delta, "N": trials,
                "seed": q.seed, "n_lo": q.n_lo, "n_hi": q.n_hi, "construction": q.construction}

    def lookup(self, q: AdjTargetQuery) -> float | None:
        key = self._row_key(q, q.budget()[2])
        for row in self.rows:
            if all(row.get(f) == key[f] for f in self.FIELDS):
                tp = row["T_prime"]
                return math.inf if tp == "inf" else float(tp)
        return None

    def resolve(self, q: AdjTargetQuery, n_cap: int | None = None) -> float:
        hit = self.lookup(q)
        if hit is not None:
            return hit
        res = adj_target(q, n_cap=n_cap)
        row = self._row_key(q, res.n_trials)
        row["T_prime"] = "inf" if math.isinf(res.sample_target) else res.sample_target
        self.rows.append(row)
        self.save()
        return res.sample_target

    def save(self) -> None:
        if self.path is None:
            return
        rows = sorted(self.rows, key=lambda r: json.dumps(r, sort_keys=True))
        self.path.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")


# -- guaranteed thresholds ------------------------------------------------------------

@dataclass(frozen=True)
class GuaranteedThresholds:
    thresholds: tuple[float, ...]
    sample_target: float
    search: ThresholdResult | None
    budget: DeltaBudget | None
    n_plus_bounds: tuple[float, float] | None


def select_guaranteed_thresholds(C: np.ndarray, labels: np.ndarray, target: float, delta: float,
                                 n_universe: int, seed: int = 0, construction: str = "tight",
                                 n_trials: int | None = None, evaluator: str = "mc",
                                 max_points: int = 40,
                                 table: AdjTargetTable | None = None) -> GuaranteedThresholds:
    """Thresholds whose true recall is >= target with probability >= 1 - delta.

    ``C`` is the (r, k') clause-distance matrix of a sample drawn independently
    of the one the scaffold was built on.
    """
    C = np.asarray(C, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    r, k_prime = C.shape
    if r == 0:
        return GuaranteedThresholds((), target, None, None, None)
    k_plus = int(labels.sum())
    check_guarantee_conditions(k_plus, r, target)
    budget = DeltaBudget.split(delta, k_plus, n_universe, k_prime)
    bounds = estimate_n_plus_bounds(k_prime, k_plus, n_universe, budget.delta2)
    q = AdjTargetQuery(k_plus, r, target, delta, bounds[0], bounds[1],
                       n_trials=n_trials or budget.n_trials, seed=seed, delta1=budget.delta1,
                       construction=construction, evaluator=evaluator, max_points=max_points)
    if table is not None:
        tp = table.resolve(q, n_cap=n_universe)
    else:
        tp = adj_target(q, n_cap=n_universe).sample_target
    if math.isinf(tp):
        raise GuaranteeInfeasible(
            f"no adjusted target certifies recall {target} at delta={delta} with k+={k_plus} "
            f"positives and r={r} clauses; label a larger threshold sample")
    res = min_cost_threshold(C, labels, tp)
    log.info("adjusted target %.4f (k+=%d, r=%d) -> thresholds %s", tp, k_plus, r, res.thresholds)
    return GuaranteedThresholds(res.thresholds, tp, res, budget, bounds)


# -- precision extension -------------------------------------------------------------------

def precision_lower_bound(hits: int, n: int, level: float) -> float:
    """One-sided Clopper-Pearson lower bound at error ``level``."""
    if n == 0 or hits == 0:
        return 0.0
    return float(stats.beta.ppf(level, hits, n - hits + 1))


def precision_subsets(candidates: Sequence[Pair], dists: Mapping[str, np.ndarray],
                      labeled: Mapping[Pair, bool], precision_target: float, delta_half: float,
                      order: Sequence[str] | None = None) -> tuple[set[Pair], list[dict]]:
    """Pre-accept pairs whose featurization distance certifies precision >= target.

    For each featurization in turn, the remaining candidates are sorted by
    distance; the longest distance prefix whose labeled members give a
    Clopper-Pearson lower bound >= target (at level delta_half / |featurizations|)
    is accepted and removed from further consideration.
    """
    if precision_target >= 1:
        return set(), []
    order = list(order or dists)
    if not order:
        return set(), []
    level = delta_half / len(order)
    candidates = list(candidates)
    remaining = np.ones(len(candidates), dtype=bool)
    lab_mask = np.array([p in labeled for p in candidates], dtype=bool)
    lab_val = np.array([bool(labeled.get(p, False)) for p in candidates], dtype=bool)
    accepted: set[Pair] = set()
    report = []
    for fid in order:
        d = np.asarray(dists[fid], dtype=float)
        idx = np.flatnonzero(remaining & np.isfinite(d))
        if not len(idx):
            continue
        idx = idx[np.argsort(d[idx], kind="stable")]
        dv = d[idx]
        n_lab = np.cumsum(lab_mask[idx])
        n_hit = np.cumsum(lab_mask[idx] & lab_val[idx])
        ends = np.flatnonzero(np.append(dv[1:] != dv[:-1], True))  # last index of each distance value
        best_end = -1
        for e in ends:
            if precision_lower_bound(int(n_hit[e]), int(n_lab[e]), level) >= precision_target:
                best_end = int(e)
        if best_end < 0:
            continue
        take = idx[:best_end + 1]
        remaining[take] = False
        accepted.update(candidates[i] for i in take)
        report.append({"featurization": fid, "threshold": float(dv[best_end]), "accepted": len(take),
                       "labeled": int(n_lab[best_end]), "labeled_true": int(n_hit[best_end])})
    return accepted, report


def construction_diagnostic(n: int, r: int, k: int, target: float, sample_target: float) -> dict:
    """Exact failure probability of each worst-case construction (small instances only)."""
    out = {}
    for c in CONSTRUCTIONS:
        try:
            D = worst_case_dataset(n, r, target, c)
        except DomainError as exc:
            out[c] = {"error": str(exc)}
            continue
        out[c] = {"u": D.u, "p": failure_prob_exact(D, k, target, sample_target)}
    return out

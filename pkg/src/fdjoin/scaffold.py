"""CNF scaffolds over featurizations, the minimum-cost threshold search and greedy construction.

Every clause shares one threshold across its predicates, so a clause reduces
to the minimum of its members' normalized distances and a scaffold with r
clauses becomes an r-dimensional point per pair. All searches below work on
that (r, m) matrix of clause distances plus a boolean label vector.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import DomainError, Pair
from .distances import INF, apply_normalization

log = logging.getLogger(__name__)

# grids with more cells than this are searched clause-by-clause instead of in one histogram
GRID_CELL_LIMIT = 2_000_000


@dataclass(frozen=True)
class LogicalScaffold:
    """Clauses of featurization ids; an empty scaffold is the constant-true predicate."""

    clauses: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        cl = tuple(tuple(c) for c in self.clauses)
        for c in cl:
            if not c:
                raise DomainError("clauses must be nonempty")
            if len(set(c)) != len(c):
                raise DomainError(f"duplicate featurization in clause {c}")
        object.__setattr__(self, "clauses", cl)

    @property
    def r(self) -> int:
        return len(self.clauses)

    def featurization_ids(self) -> list[str]:
        return list(dict.fromkeys(f for c in self.clauses for f in c))

    def add_clause(self, fid: str) -> "LogicalScaffold":
        return LogicalScaffold(self.clauses + ((fid,),))

    def add_disjunct(self, i: int, fid: str) -> "LogicalScaffold":
        cl = list(self.clauses)
        cl[i] = cl[i] + (fid,)
        return LogicalScaffold(tuple(cl))

    def __str__(self) -> str:
        if not self.clauses:
            return "TRUE"
        parts = []
        for c in self.clauses:
            inner = " | ".join(c)
            parts.append(f"({inner})" if len(c) > 1 and len(self.clauses) > 1 else inner)
        return " & ".join(parts)


@dataclass
class FeaturizedDecomposition:
    scaffold: LogicalScaffold
    thresholds: tuple[float, ...]
    normalization: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        self.thresholds = tuple(float(t) for t in self.thresholds)
        if len(self.thresholds) != self.scaffold.r:
            raise DomainError("need exactly one threshold per clause")
        missing = set(self.scaffold.featurization_ids()) - set(self.normalization)
        if missing:
            raise DomainError(f"no normalization for {sorted(missing)}")

    def to_dict(self) -> dict:
        enc = lambda x: "inf" if math.isinf(x) else x  # noqa: E731
        return {
            "clauses": [{"featurizations": list(c), "threshold": enc(t)}
                        for c, t in zip(self.scaffold.clauses, self.thresholds)],
            "normalization": {k: [lo, hi] for k, (lo, hi) in sorted(self.normalization.items())},
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "FeaturizedDecomposition":
        dec = lambda x: INF if x == "inf" else float(x)  # noqa: E731
        clauses = tuple(tuple(c["featurizations"]) for c in obj["clauses"])
        return cls(LogicalScaffold(clauses), tuple(dec(c["threshold"]) for c in obj["clauses"]),
                   {k: (float(v[0]), float(v[1])) for k, v in obj["normalization"].items()})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "FeaturizedDecomposition":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- distances -> clause matrix ---------------------------------------------------

def fit_normalization(fids: Sequence[str], raw: Mapping[str, np.ndarray]) -> dict[str, tuple[float, float]]:
    """Min/max of the finite raw distances of each featurization."""
    out = {}
    for fid in fids:
        arr = np.asarray(raw[fid], dtype=float)
        fin = arr[np.isfinite(arr)]
        if fin.size == 0:
            log.warning("featurization %s has no finite distance on the sample", fid)
            out[fid] = (0.0, 0.0)
        else:
            out[fid] = (float(fin.min()), float(fin.max()))
    return out


def normalize_all(raw: Mapping[str, np.ndarray], norm: Mapping[str, tuple[float, float]]) -> dict:
    return {fid: apply_normalization(raw[fid], *norm[fid]) for fid in norm if fid in raw}


def clause_matrix(scaffold: LogicalScaffold, dists: Mapping[str, np.ndarray], m: int | None = None) -> np.ndarray:
    """(r, m) matrix of per-clause min-reduced normalized distances."""
    if scaffold.r == 0:
        return np.zeros((0, m if m is not None else 0))
    rows = [np.min(np.vstack([np.asarray(dists[f], dtype=float) for f in c]), axis=0)
            for c in scaffold.clauses]
    return np.vstack(rows)


def clause_min_reduce(clause: Sequence[str], pair: Pair, store, phis: Mapping, norm: Mapping) -> float:
    """Minimum normalized distance over a clause's featurizations for one pair."""
    best = INF
    for fid in clause:
        raw = store.featurization_distance(phis[fid], pair)
        best = min(best, float(apply_normalization([raw], *norm[fid])[0]))
    return best


def admitted_mask(C: np.ndarray, thresholds: Sequence[float], m: int | None = None) -> np.ndarray:
    C = np.asarray(C, dtype=float)
    if C.shape[0] == 0:
        return np.ones(C.shape[1] if m is None else m, dtype=bool)
    th = np.asarray(thresholds, dtype=float)[:, None]
    return np.all(C <= th, axis=0)


def recall_and_fp(C: np.ndarray, labels: np.ndarray, thresholds: Sequence[float]) -> tuple[float, float]:
    """Sample recall and false-positive share of the admitted set (0 when nothing is admitted)."""
    labels = np.asarray(labels, dtype=bool)
    if not labels.any():
        raise DomainError("recall needs at least one positive")
    adm = admitted_mask(C, thresholds, len(labels))
    pos = int((adm & labels).sum())
    tot = int(adm.sum())
    return pos / int(labels.sum()), ((tot - pos) / tot if tot else 0.0)


# -- minimum-cost thresholds ---------------------------------------------------------

@dataclass(frozen=True)
class ThresholdResult:
    thresholds: tuple[float, ...]
    cost: float
    recall: float
    admitted_pos: int
    admitted_neg: int


def _required(target: float, n_pos: int) -> int:
    return max(0, math.ceil(target * n_pos - 1e-9))


def _candidates(C: np.ndarray, labels: np.ndarray, need: int, cap: int | None) -> list[np.ndarray]:
    """Per clause: distinct finite positive distances that keep >= need positives, then +inf."""
    out = []
    for row in C:
        pos = np.sort(row[labels])
        floor = pos[need - 1] if need >= 1 else -INF
        vals = np.unique(pos[np.isfinite(pos) & (pos >= floor)])
        if cap is not None and len(vals) > cap:
            q = np.quantile(vals, np.linspace(0, 1, cap), method="higher")
            vals = np.unique(q)
        out.append(np.append(vals, INF))
    return out


def _grid_best(idx: np.ndarray, labels: np.ndarray, shape: tuple[int, ...], need: int):
    """Best cell of a full grid. idx[i, j] = smallest candidate position admitting point j on clause i.

    Returns (neg, tot, flat_index) or None when no cell reaches ``need``.
    """
    ok = np.all(idx < np.asarray(shape)[:, None], axis=0)
    pos_hist = np.zeros(shape, dtype=np.int64)
    neg_hist = np.zeros(shape, dtype=np.int64)
    sel = tuple(idx[:, ok & labels])
    np.add.at(pos_hist, sel, 1)
    sel = tuple(idx[:, ok & ~labels])
    np.add.at(neg_hist, sel, 1)
    for ax in range(len(shape)):
        pos_hist = np.cumsum(pos_hist, axis=ax)
        neg_hist = np.cumsum(neg_hist, axis=ax)
    pos, neg = pos_hist.ravel(), neg_hist.ravel()
    tot = pos + neg
    feasible = pos >= need
    if not feasible.any():
        return None
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(tot > 0, neg / np.where(tot > 0, tot, 1), 0.0)
    frac = np.where(feasible, frac, np.inf)
    best_f = frac.min()
    cand = np.flatnonzero(frac == best_f)
    cand = cand[tot[cand] == tot[cand].min()]
    flat = int(cand[0])
    return int(neg[flat]), int(tot[flat]), flat


def min_cost_threshold(C: np.ndarray, labels: np.ndarray, target: float,
                       max_candidates: int | None = None,
                       cell_limit: int = GRID_CELL_LIMIT) -> ThresholdResult:
    """Thresholds minimizing the admitted false-positive share subject to sample recall >= target.

    Ties go to the smaller admitted set, then to the lexicographically
    smallest threshold vector. ``max_candidates`` thins each clause's grid to
    that many quantiles (approximate; off by default).
    """
    C = np.asarray(C, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise DomainError("threshold search needs at least one positive")
    r, m = C.shape
    need = _required(target, n_pos)
    if r == 0:
        neg = int((~labels).sum())
        return ThresholdResult((), neg / m if m else 0.0, 1.0, n_pos, neg)
    cands = _candidates(C, labels, max(need, 1), max_candidates)
    idx = np.vstack([np.searchsorted(c, row, side="left") for c, row in zip(cands, C)])
    shape = tuple(len(c) for c in cands)

    # split clauses into an outer loop and an inner histogram that fits in memory
    split = 0
    while math.prod(shape[split:]) > cell_limit and split < r - 1:
        split += 1
    best = None  # (neg, tot, outer index tuple, inner flat)
    inner_shape = shape[split:]
    for outer in itertools.product(*(range(s) for s in shape[:split])):
        keep = np.ones(m, dtype=bool)
        for i, t in enumerate(outer):
            keep &= idx[i] <= t
        if int((keep & labels).sum()) < need:
            continue
        got = _grid_best(idx[split:, keep], labels[keep], inner_shape, need)
        if got is None:
            continue
        neg, tot, flat = got
        if best is None or neg * best[1] < best[0] * tot or (
                neg * best[1] == best[0] * tot and tot < best[1]):
            best = (neg, tot, outer, flat)
    # theta = all +inf always reaches the target, so best is set
    neg, tot, outer, flat = best
    cell = tuple(outer) + tuple(int(x) for x in np.unravel_index(flat, inner_shape))
    theta = tuple(float(cands[i][t]) for i, t in enumerate(cell))
    pos = tot - neg
    return ThresholdResult(theta, neg / tot if tot else 0.0, pos / n_pos, pos, neg)


def naive_min_cost_threshold(C: np.ndarray, labels: np.ndarray, target: float) -> ThresholdResult:
    """Reference search over every distinct sample distance per clause (plus +inf).

    Exponential; meant for small instances and as a cross-check.
    """
    C = np.asarray(C, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    need = _required(target, n_pos)
    grids = [np.append(np.unique(row[np.isfinite(row)]), INF) for row in C]
    best, best_key = None, None
    for theta in itertools.product(*grids):
        adm = admitted_mask(C, theta, len(labels))
        pos = int((adm & labels).sum())
        if pos < need:
            continue
        tot = int(adm.sum())
        key = ((tot - pos) / tot if tot else 0.0, tot, theta)
        if best_key is None or key < best_key:
            best_key, best = key, ThresholdResult(tuple(float(t) for t in theta), key[0],
                                                  pos / n_pos, pos, tot - pos)
    return best


# -- greedy scaffold construction --------------------------------------------------

@dataclass(frozen=True)
class TraceStep:
    phase: str          # "conjunct" | "disjunct"
    fid: str
    clause: int
    cost: float
    scaffold: str


def default_clause_cap(target: float) -> int:
    if target >= 1:
        return 1 << 30
    return int(math.floor(1.0 / (1.0 - target) + 1e-9))


def greedy_build(fids: Sequence[str], dists: Mapping[str, np.ndarray], labels: np.ndarray,
                 target: float, gamma: float = 0.05, r_cap: int | None = None,
                 max_candidates: int | None = None) -> tuple[LogicalScaffold, list[TraceStep]]:
    """Grow a CNF greedily: conjuncts first, then one pass of disjunct additions.

    ``dists`` maps featurization id to normalized distances over the sample
    whose labels are given. A change is kept only when it lowers the cost by
    more than ``gamma``.
    """
    if not fids:
        raise DomainError("greedy construction needs at least one featurization")
    labels = np.asarray(labels, dtype=bool)
    m = len(labels)
    r_cap = default_clause_cap(target) if r_cap is None else r_cap

    def cost(sc: LogicalScaffold) -> float:
        return min_cost_threshold(clause_matrix(sc, dists, m), labels, target,
                                  max_candidates=max_candidates).cost

    scaffold = LogicalScaffold()
    current = cost(scaffold)
    trace: list[TraceStep] = []
    remaining = list(fids)
    while remaining and scaffold.r < r_cap:
        costs = [cost(scaffold.add_clause(f)) for f in remaining]
        j = int(np.argmin(costs))
        if not costs[j] < current - gamma:
            break
        scaffold = scaffold.add_clause(remaining.pop(j))
        current = costs[j]
        trace.append(TraceStep("conjunct", scaffold.clauses[-1][0], scaffold.r - 1, current, str(scaffold)))
        log.debug("conjunct %s -> cost %.4f", scaffold.clauses[-1][0], current)
    for f in fids:
        for i in range(scaffold.r):
            if f in scaffold.clauses[i]:
                continue
            trial = scaffold.add_disjunct(i, f)
            c = cost(trial)
            if c < current - gamma:
                scaffold, current = trial, c
                trace.append(TraceStep("disjunct", f, i, c, str(scaffold)))
                log.debug("disjunct %s into clause %d -> cost %.4f", f, i, c)
    return scaffold, trace


# -- decompositions over feature stores ------------------------------------------------

def sample_clause_matrix(scaffold: LogicalScaffold, pairs: Sequence[Pair], store, phis: Mapping,
                         norm: Mapping) -> np.ndarray:
    """Clause matrix of a scaffold over a list of pairs, read from a feature store."""
    raw = {f: store.pair_distances(phis[f], pairs) for f in scaffold.featurization_ids()}
    return clause_matrix(scaffold, normalize_all(raw, norm), len(pairs))


def eval_decomposition(decomp: FeaturizedDecomposition, pairs: Sequence[Pair], store,
                       phis: Mapping) -> list[Pair]:
    """Pairs admitted by the decomposition, in input order."""
    pairs = list(pairs)
    if decomp.scaffold.r == 0 or not pairs:
        return pairs
    raw = {f: store.pair_distances(phis[f], pairs) for f in decomp.scaffold.featurization_ids()}
    C = clause_matrix(decomp.scaffold, normalize_all(raw, decomp.normalization), len(pairs))
    mask = admitted_mask(C, decomp.thresholds)
    return [p for p, keep in zip(pairs, mask) if keep]

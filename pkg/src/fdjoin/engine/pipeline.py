"""End-to-end join: label, generate featurizations, build the scaffold, certify thresholds, refine."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np

from ..candidates import CandidateGenConfig, FeaturizationGenerator, get_candidate_featurizations
from ..core import (DataError, DomainError, JoinSpec, LabeledSample, Pair, PairSampler, RecordSet,
                    approx_token_count, is_self_join, universe_size)
from ..distances import EmbeddingProvider, apply_normalization
from ..extraction import BaseClient, CallLog, Featurization, FeatureStore, judge_pair
from ..guarantees import AdjTargetTable, precision_subsets, select_guaranteed_thresholds
from ..scaffold import (FeaturizedDecomposition, LogicalScaffold, TraceStep, fit_normalization,
                        greedy_build, normalize_all, sample_clause_matrix)

log = logging.getLogger(__name__)

PHASES = ("labeling", "construction", "inference", "refinement")


@dataclass
class PipelineConfig:
    k_positive_gen: int = 50
    k_positive_thresh: int = 200
    gamma: float = 0.05
    r_cap: int | None = None  # clause limit; None uses floor(1 / (1 - T))
    candidates: CandidateGenConfig = field(default_factory=CandidateGenConfig)
    seed: int = 0
    parallelism: int = 1
    expected_rate: float | None = None  # caps sampling at 50 k+ / rate draws when set
    construction: str = "tight"
    mc_trials: int | None = None
    max_points: int = 40
    precision_sample: int = 200
    max_candidates: int | None = None
    block_cells: int = 4_000_000
    cache_dir: str | None = None
    adj_table: str | None = None

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        obj = dict(obj)
        cand = obj.pop("candidates", None)
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise DomainError(f"unknown config keys {sorted(unknown)}")
        cfg = cls(**obj)
        if cand is not None:
            cfg.candidates = CandidateGenConfig(**cand)
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CostLedger:
    """Token counts per phase and call kind, priced per kind (default 1 unit per token)."""

    tokens: dict[str, dict[str, int]] = field(default_factory=dict)
    prices: dict[str, float] = field(default_factory=lambda: {"judge": 1.0, "complete": 1.0, "embed": 1.0})

    @classmethod
    def from_call_log(cls, call_log: CallLog, prices: dict[str, float] | None = None) -> "CostLedger":
        led = cls() if prices is None else cls(prices=dict(prices))
        for ph in PHASES:
            led.tokens[ph] = {}
        for rec in call_log.records:
            bucket = led.tokens.setdefault(rec.phase, {})
            bucket[rec.kind] = bucket.get(rec.kind, 0) + rec.tokens
        return led

    def phase_cost(self, phase: str) -> float:
        return sum(self.prices.get(k, 1.0) * t for k, t in self.tokens.get(phase, {}).items())

    def phase_costs(self) -> dict[str, float]:
        return {ph: self.phase_cost(ph) for ph in self.tokens}

    @property
    def total(self) -> float:
        return sum(self.phase_costs().values())

    @property
    def total_tokens(self) -> int:
        return sum(sum(v.values()) for v in self.tokens.values())


def all_pairs_tokens(left: RecordSet, right: RecordSet, spec: JoinSpec,
                     tokenizer: Callable[[str], int] = approx_token_count) -> int:
    """Tokens needed to judge every pair once."""
    if tokenizer is not approx_token_count:
        self_join = is_self_join(left, right)
        return sum(tokenizer(spec.render(l.text, r.text)) for i, l in enumerate(left)
                   for j, r in enumerate(right) if not (self_join and i == j))
    base, nl, nr = spec.slot_counts()
    ll = np.array([len(t) for t in left.texts], dtype=np.int64)
    rl = np.array([len(t) for t in right.texts], dtype=np.int64)
    total = 0
    step = max(1, 4_000_000 // max(1, len(rl)))
    for s in range(0, len(ll), step):
        chars = base + nl * ll[s:s + step, None] + nr * rl[None, :]
        tok = -(-chars // 4)
        total += int(tok.sum())
        if is_self_join(left, right):
            idx = np.arange(s, min(s + step, len(ll)))
            total -= int(tok[idx - s, idx].sum())
    return total


def cost_ratio(ledger: CostLedger, left: RecordSet, right: RecordSet, spec: JoinSpec,
               tokenizer: Callable[[str], int] = approx_token_count) -> float:
    return ledger.total / (ledger.prices.get("judge", 1.0) * all_pairs_tokens(left, right, spec, tokenizer))


class _Labeler:
    """Judges sampled pairs in sampler order, remembering every label it paid for."""

    def __init__(self, client: BaseClient, spec: JoinSpec, left: RecordSet, right: RecordSet,
                 sampler: PairSampler, known: dict[Pair, bool]):
        self.client, self.spec, self.left, self.right = client, spec, left, right
        self.sampler = sampler
        self.known = known

    def until_positives(self, k_plus: int, cap: int) -> LabeledSample:
        pairs, labels = [], []
        npos = 0
        while npos < k_plus and len(pairs) < cap and self.sampler.remaining:
            batch = self.sampler.draw(min(self.sampler.remaining, cap - len(pairs), 256))
            for p in batch:
                y = judge_pair(self.client, self.spec, self.left, self.right, p)
                self.known[p] = y
                pairs.append(p)
                labels.append(y)
                npos += y
                if npos >= k_plus:
                    break
        if npos == 0:
            raise DataError(f"no positives found after judging {len(pairs)} sampled pairs "
                            f"(cap {cap}, universe {self.sampler.size})")
        if npos < k_plus:
            log.warning("sampling cap reached with %d of %d positives", npos, k_plus)
        return LabeledSample(pairs, labels, None)


def refine(candidates: Iterable[Pair], pre_accepted: Iterable[Pair], client: BaseClient, spec: JoinSpec,
           left: RecordSet, right: RecordSet, known: dict[Pair, bool] | None = None,
           parallelism: int = 1) -> set[Pair]:
    """Keep pre-accepted pairs and every other candidate the judge confirms.

    Labels already paid for (``known``) are reused instead of judged again.
    """
    pre = set(pre_accepted)
    known = known or {}
    todo = [p for p in candidates if p not in pre and p not in known]
    reused = {p for p in candidates if p not in pre and known.get(p, False)}
    judge = lambda p: judge_pair(client, spec, left, right, p)  # noqa: E731
    if parallelism > 1 and client.allows_concurrency:
        with ThreadPoolExecutor(parallelism) as pool:
            verdicts = list(pool.map(judge, todo))
    else:
        verdicts = [judge(p) for p in todo]
    return pre | reused | {p for p, y in zip(todo, verdicts) if y}


def evaluate_universe(decomp: FeaturizedDecomposition, store: FeatureStore,
                      phis: dict[str, Featurization], block_cells: int = 4_000_000) -> list[Pair]:
    """All pairs of L x R admitted by the decomposition (self-join diagonal excluded)."""
    left, right = store.left, store.right
    nl, nr = len(left), len(right)
    self_join = is_self_join(left, right)
    lids, rids = left.ids, right.ids
    fids = decomp.scaffold.featurization_ids()
    for f in fids:
        store.ensure(phis[f], "left")
        store.ensure(phis[f], "right")
    rows = max(1, block_cells // max(1, nr))
    cols = np.arange(nr)
    out = []
    for s in range(0, nl, rows):
        ridx = np.arange(s, min(nl, s + rows))
        if decomp.scaffold.r == 0:
            mask = np.ones((len(ridx), nr), dtype=bool)
        else:
            norm = {f: apply_normalization(store.distance_block(phis[f], ridx, cols),
                                           *decomp.normalization[f]) for f in fids}
            mask = np.ones((len(ridx), nr), dtype=bool)
            for clause, th in zip(decomp.scaffold.clauses, decomp.thresholds):
                cmin = np.minimum.reduce([norm[f] for f in clause])
                mask &= cmin <= th
        if self_join:
            mask[np.arange(len(ridx)), ridx] = False
        a, b = np.nonzero(mask)
        out.extend((lids[s + i], rids[j]) for i, j in zip(a.tolist(), b.tolist()))
    return out


@dataclass
class JoinResult:
    pairs: set[Pair]
    ledger: CostLedger
    decomposition: FeaturizedDecomposition
    featurizations: list[Featurization]
    trace: list[TraceStep]
    sample_target: float
    candidates: int
    pre_accepted: int
    diagnostics: dict = field(default_factory=dict)


def fdj_join(left: RecordSet, right: RecordSet, spec: JoinSpec, config: PipelineConfig,
             client: BaseClient, generator: FeaturizationGenerator,
             provider: EmbeddingProvider | None = None) -> JoinResult:
    """Run the full featurized-decomposition join and return confirmed pairs with their cost."""
    call_log = client.call_log
    store = FeatureStore(left, right, client, provider, cache_dir=config.cache_dir, call_log=call_log,
                         parallelism=config.parallelism)
    n_universe = universe_size(left, right)
    if n_universe == 0:
        raise DataError("the pair universe is empty")
    sampler = PairSampler(left, right, config.seed)
    known: dict[Pair, bool] = {}
    labeler = _Labeler(client, spec, left, right, sampler, known)

    def cap_for(k_plus: int) -> int:
        if config.expected_rate:
            return min(n_universe, math.ceil(50 * k_plus / config.expected_rate))
        return n_universe

    with call_log.in_phase("labeling"):
        S = labeler.until_positives(config.k_positive_gen, cap_for(config.k_positive_gen))
    log.info("generation sample: %d pairs, %d positive", S.k, S.k_plus)

    with call_log.in_phase("construction"):
        phis, rounds = get_candidate_featurizations(spec, S, generator, config.candidates, store)
        by_id = {p.id: p for p in phis}
        if phis:
            raw = {p.id: store.pair_distances(p, S.pairs) for p in phis}
            norm = fit_normalization([p.id for p in phis], raw)
            scaffold, trace = greedy_build([p.id for p in phis], normalize_all(raw, norm), S.label_array(),
                                           spec.recall_target, gamma=config.gamma, r_cap=config.r_cap,
                                           max_candidates=config.max_candidates)
        else:
            log.warning("NO FEATURIZATIONS: falling back to the constant-true decomposition; "
                        "every pair will be judged")
            norm, scaffold, trace = {}, LogicalScaffold(), []
    log.info("scaffold: %s", scaffold)

    delta_recall = spec.failure_prob / 2 if spec.precision_target < 1 else spec.failure_prob
    thresholds: tuple[float, ...] = ()
    sample_target = spec.recall_target
    if scaffold.r:
        with call_log.in_phase("labeling"):
            S2 = labeler.until_positives(config.k_positive_thresh, cap_for(config.k_positive_thresh))
        log.info("threshold sample: %d pairs, %d positive", S2.k, S2.k_plus)
        with call_log.in_phase("construction"):
            C = sample_clause_matrix(scaffold, S2.pairs, store, by_id, norm)
        if spec.recall_target >= 1:
            thresholds = tuple(math.inf for _ in scaffold.clauses)
            sample_target = 1.0
        else:
            table = AdjTargetTable(config.adj_table) if config.adj_table else None
            got = select_guaranteed_thresholds(C, S2.label_array(), spec.recall_target, delta_recall,
                                               n_universe, seed=config.seed,
                                               construction=config.construction,
                                               n_trials=config.mc_trials, max_points=config.max_points,
                                               table=table)
            thresholds, sample_target = got.thresholds, got.sample_target
    used = {f: norm[f] for f in scaffold.featurization_ids()}
    decomp = FeaturizedDecomposition(scaffold, thresholds, used)

    with call_log.in_phase("inference"):
        cands = evaluate_universe(decomp, store, by_id, config.block_cells)
    log.info("decomposition admits %d of %d pairs", len(cands), n_universe)

    pre: set[Pair] = set()
    prec_report: list = []
    if spec.precision_target < 1 and cands and phis:
        rng = np.random.default_rng([config.seed, 1])
        take = rng.choice(len(cands), size=min(config.precision_sample, len(cands)), replace=False)
        with call_log.in_phase("refinement"):
            labeled = {}
            for i in sorted(take.tolist()):
                p = cands[i]
                if p not in known:
                    known[p] = judge_pair(client, spec, left, right, p)
                labeled[p] = known[p]
        with call_log.in_phase("inference"):
            d = {f.id: store.pair_distances(f, cands) for f in phis}
        pre, prec_report = precision_subsets(cands, d, labeled, spec.precision_target,
                                             spec.failure_prob / 2, order=[f.id for f in phis])
        if not pre:
            log.info("no featurization certifies the precision target; refining everything")

    with call_log.in_phase("refinement"):
        result = refine(cands, pre, client, spec, left, right, known, config.parallelism)

    ledger = CostLedger.from_call_log(call_log)
    diag = {"generation_sample": S.k, "generation_positives": S.k_plus, "rounds": len(rounds),
            "scaffold": str(scaffold), "precision_subsets": prec_report}
    if scaffold.r:
        diag.update({"threshold_sample": S2.k, "threshold_positives": S2.k_plus})
    return JoinResult(result, ledger, decomp, phis, trace, sample_target, len(cands), len(pre), diag)

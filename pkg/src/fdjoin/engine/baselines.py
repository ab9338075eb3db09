"""Optimal embedding-similarity cascade, tuned with full ground truth (a lower bound for cascades)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from ..core import DomainError, JoinSpec, Pair, RecordSet, approx_token_count, is_self_join
from ..distances import CachedEmbedder, EmbeddingProvider
from .pipeline import all_pairs_tokens


@dataclass
class CascadeResult:
    pairs: set[Pair]
    cost_ratio: float
    judged: int
    accepted: int
    accept_above: float
    judge_from: float
    judge_tokens: int
    embed_tokens: int


def _scores(left: RecordSet, right: RecordSet, provider: EmbeddingProvider) -> np.ndarray:
    emb = CachedEmbedder(provider) if not isinstance(provider, CachedEmbedder) else provider
    el = emb.embed(left.texts)
    er = el if is_self_join(left, right) else emb.embed(right.texts)
    return el @ er.T


def optimal_cascade_baseline(left: RecordSet, right: RecordSet, truth: Iterable[Pair],
                             provider: EmbeddingProvider, target: float, spec: JoinSpec,
                             tokenizer: Callable[[str], int] = approx_token_count) -> CascadeResult:
    """Best two-threshold cascade on cosine similarity given the true answer.

    Pairs scoring above every negative are accepted unjudged. Pairs scoring
    between the weakest true pair still needed for the recall target and that
    bound are judged. Everything below is dropped. Only join-execution cost
    counts: judged prompts plus one embedding per record.
    """
    truth = set(truth)
    if not truth:
        raise DomainError("the cascade baseline needs a nonempty truth set")
    S = _scores(left, right, provider)
    li = {rid: i for i, rid in enumerate(left.ids)}
    ri = {rid: j for j, rid in enumerate(right.ids)}
    valid = np.ones_like(S, dtype=bool)
    if is_self_join(left, right):
        np.fill_diagonal(valid, False)
    is_true = np.zeros_like(valid)
    for l, r in truth:
        is_true[li[l], ri[r]] = True
    true_scores = np.sort(S[is_true])[::-1]
    need = math.ceil(target * len(true_scores) - 1e-9)
    judge_from = float(true_scores[need - 1]) if need >= 1 else math.inf
    neg = valid & ~is_true
    accept_above = float(S[neg].max()) if neg.any() else -math.inf
    accepted = valid & (S > accept_above) & (S >= judge_from)
    judged = valid & (S >= judge_from) & (S <= accept_above)
    base, nl, nr = spec.slot_counts()
    ll = np.array([len(t) for t in left.texts])
    rl = np.array([len(t) for t in right.texts])
    a, b = np.nonzero(judged)
    if tokenizer is approx_token_count:
        judge_tokens = int(np.sum(-(-(base + nl * ll[a] + nr * rl[b]) // 4)))
    else:
        judge_tokens = sum(tokenizer(spec.render(left[i].text, right[j].text)) for i, j in zip(a, b))
    texts = left.texts if is_self_join(left, right) else left.texts + right.texts
    embed_tokens = sum(provider.token_count(t) for t in texts)
    lids, rids = left.ids, right.ids
    out = {(lids[i], rids[j]) for i, j in zip(*np.nonzero(accepted))}
    out |= {(lids[i], rids[j]) for i, j in zip(a, b) if is_true[i, j]}
    ratio = (judge_tokens + embed_tokens) / all_pairs_tokens(left, right, spec, tokenizer)
    return CascadeResult(out, ratio, int(judged.sum()), int(accepted.sum()), accept_above, judge_from,
                         judge_tokens, embed_tokens)

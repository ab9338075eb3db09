"""Candidate featurization generation: cost-to-cover evaluation, example picking, generators.

The loop alternates between asking a generator for new featurizations from a
handful of labeled example pairs and re-scoring the labeled sample to find
positives that no featurization separates well from the negatives.
"""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from string import Template
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .core import DomainError, JoinSpec, LabeledSample, Pair
from .distances import DistanceKind
from .extraction import (OUTPUT_VARIANTS, BaseClient, CodeExtractor, Featurization, FeatureStore,
                         LlmExtractor, TransportError)

log = logging.getLogger(__name__)


@dataclass
class CandidateGenConfig:
    max_iter: int = 8
    beta: int = 10
    alpha: float | None = None  # None -> max(1, ceil(0.02 * |negatives|))
    seed: int = 0

    def __post_init__(self):
        if self.max_iter < 1:
            raise DomainError("max_iter must be >= 1")
        if self.beta < 2 or self.beta % 2:
            raise DomainError("beta must be even and >= 2")
        if self.alpha is not None and self.alpha < 0:
            raise DomainError("alpha must be >= 0")

    def resolved_alpha(self, n_neg: int) -> float:
        return self.alpha if self.alpha is not None else max(1, math.ceil(0.02 * n_neg))


@dataclass
class Example:
    pair: Pair
    left_text: str
    right_text: str
    label: bool
    features: dict = field(default_factory=dict)  # fid -> (left value, right value)


class FeaturizationGenerator(Protocol):
    def generate(self, examples: Sequence[Example], join_prompt: str,
                 existing: Sequence[Featurization]) -> list[Featurization]: ...


def dedupe(new: Sequence[Featurization], existing: Sequence[Featurization]) -> list[Featurization]:
    """Drop featurizations whose id or structural fingerprint is already present."""
    ids = {p.id for p in existing}
    prints = {p.fingerprint() for p in existing}
    out = []
    for phi in new:
        fp = phi.fingerprint()
        if phi.id in ids or fp in prints:
            log.info("dropping duplicate featurization %s", phi.id)
            continue
        ids.add(phi.id)
        prints.add(fp)
        out.append(phi)
    return out


# -- cost to cover ----------------------------------------------------------------------

def cover_costs(dists: Mapping[str, np.ndarray], labels: np.ndarray) -> np.ndarray:
    """Cost to cover of every positive in sample order (+inf when there are no featurizations)."""
    labels = np.asarray(labels, dtype=bool)
    out = np.full(int(labels.sum()), math.inf)
    for d in dists.values():
        d = np.asarray(d, dtype=float)
        neg = np.sort(d[~labels])
        np.minimum(out, np.searchsorted(neg, d[labels], side="right"), out=out)
    return out


def cost_to_cover(pair: Pair, phis: Sequence[Featurization], negatives: Sequence[Pair],
                  store: FeatureStore) -> float:
    """Fewest sample negatives some single featurization must admit to admit ``pair``."""
    best = math.inf
    for phi in phis:
        d = float(store.pair_distances(phi, [pair])[0])
        neg = store.pair_distances(phi, list(negatives)) if negatives else np.zeros(0)
        best = min(best, int(np.sum(neg <= d)))
    return best


def evaluate_and_pick_examples(dists: Mapping[str, np.ndarray], labels: np.ndarray,
                               config: CandidateGenConfig,
                               rng: np.random.Generator) -> tuple[list[int], np.ndarray]:
    """Indices of examples to show the generator next, plus every positive's cover cost.

    Returns no indices once every positive's cost is below alpha.
    """
    labels = np.asarray(labels, dtype=bool)
    pos_idx = np.flatnonzero(labels)
    neg_idx = np.flatnonzero(~labels)
    costs = cover_costs(dists, labels)
    alpha = config.resolved_alpha(len(neg_idx))
    if len(costs) == 0 or costs.max() < alpha:
        return [], costs
    half = config.beta // 2
    order = np.argsort(-costs, kind="stable")[:half]
    chosen = pos_idx[order]
    witness = np.zeros(len(neg_idx), dtype=bool)
    for d in dists.values():
        d = np.asarray(d, dtype=float)
        witness |= d[neg_idx] <= d[chosen].max()
    negs = neg_idx[witness]
    if len(negs) > half:
        negs = np.sort(rng.choice(negs, size=half, replace=False))
    return sorted(chosen.tolist()) + negs.tolist(), costs


def _initial_examples(labels: np.ndarray, beta: int, rng: np.random.Generator) -> list[int]:
    half = beta // 2
    pos = np.flatnonzero(labels)
    neg = np.flatnonzero(~labels)
    take_p = np.sort(rng.choice(pos, size=min(half, len(pos)), replace=False))
    take_n = np.sort(rng.choice(neg, size=min(half, len(neg)), replace=False)) if len(neg) else []
    return list(take_p) + list(take_n)


@dataclass
class GenerationRound:
    iteration: int
    new_ids: list[str]
    picked: list[int]
    max_cost: float


def get_candidate_featurizations(spec: JoinSpec, sample: LabeledSample, generator: FeaturizationGenerator,
                                 config: CandidateGenConfig, store: FeatureStore
                                 ) -> tuple[list[Featurization], list[GenerationRound]]:
    """Grow the featurization set until the labeled sample is covered or rounds run out."""
    labels = sample.label_array()
    if not labels.any():
        raise DomainError("candidate generation needs at least one positive")
    rng = np.random.default_rng(config.seed)
    picked = [int(i) for i in _initial_examples(labels, config.beta, rng)]
    phis: list[Featurization] = []
    dists: dict[str, np.ndarray] = {}
    history: list[GenerationRound] = []
    empty_streak = 0
    for it in range(config.max_iter):
        examples = _examples(sample, picked, phis, store)
        try:
            new = dedupe(generator.generate(examples, spec.join_prompt, list(phis)), phis)
        except TransportError as exc:
            log.warning("generator failed in round %d: %s", it, exc)
            new = []
        for phi in new:
            dists[phi.id] = store.pair_distances(phi, sample.pairs)
        phis.extend(new)
        empty_streak = 0 if new else empty_streak + 1
        picked, costs = evaluate_and_pick_examples(dists, labels, config, rng)
        max_cost = float(costs.max()) if len(costs) else 0.0
        history.append(GenerationRound(it, [p.id for p in new], list(picked), max_cost))
        log.info("generation round %d: +%d featurizations, max cover cost %s", it, len(new), max_cost)
        if not picked:
            break
        if empty_streak >= 2:
            log.warning("generator produced nothing twice in a row with coverage still "
                        "insufficient (max cover cost %s); stopping", max_cost)
            break
    return phis, history


def _examples(sample: LabeledSample, idx: Sequence[int], phis: Sequence[Featurization],
              store: FeatureStore) -> list[Example]:
    out = []
    for i in idx:
        l, r = sample.pairs[i]
        feats = {}
        for phi in phis:
            store.ensure_pairs(phi, [(l, r)])
            feats[phi.id] = (store.value(phi, "left", l), store.value(phi, "right", r))
        out.append(Example((l, r), store.left.text(l), store.right.text(r), sample.labels[i], feats))
    return out


# -- generators ------------------------------------------------------------------------------

class ScriptedGenerator:
    """Hands out a fixed sequence of featurization batches, one per call."""

    def __init__(self, playbook: Sequence[Sequence[Featurization]]):
        self._batches = [list(b) for b in playbook]
        self.calls = 0

    def generate(self, examples, join_prompt, existing) -> list[Featurization]:
        self.calls += 1
        if not self._batches:
            return []
        return dedupe(self._batches.pop(0), existing)


DEFAULT_PROMPTS = {
    "get-featurization-descriptions": (
        "We want to decide cheaply whether pairs of records satisfy this condition:\n"
        "$join_prompt\n\nLabeled example pairs:\n$examples\n\n"
        "Features already in use (do not repeat them):\n$existing\n\n"
        "Suggest new features that can be extracted from each record separately and compared "
        "with a distance, so that matching pairs end up close. Reply with a JSON list of short "
        "feature descriptions."),
    "get-feature-description-for-col": (
        "Condition: $join_prompt\nFeature: $description\nExample $side records:\n$records\n\n"
        "Describe precisely what should be taken from a $side record for this feature, "
        "including the expected output type (text, number, date, or a list of these)."),
    "should-use-llm": (
        "Feature to obtain from a record: $description\n"
        "Answer with exactly one word:\n"
        "Extract - the value is written verbatim in the record;\n"
        "Infer - the value must be derived with reasoning or background knowledge;\n"
        "Split - the whole record should be compared piece by piece."),
    "get-extraction-prompt": (
        "Write an instruction that makes a language model return this feature for one record: "
        "$description\nThe instruction must contain the placeholder {text} where the record goes. "
        "Reply with JSON: {\"prompt\": ..., \"output\": one of $outputs}."),
    "get-extraction-code": (
        "Pick a built-in extractor for this feature: $description\nAvailable extractors and "
        "parameters:\n$registry\nExample records:\n$records\n"
        "Reply with JSON: {\"name\": ..., \"params\": {...}}."),
    "get-distance-func": (
        "Feature: $description\nLeft values: $left_values\nRight values: $right_values\n"
        "Choose the distance for comparing them, one of: word_overlap_similarity (same words), "
        "semantic_similarity (same meaning, different words), arithmetic_similarity (numbers), "
        "date_similarity (dates). Reply with the name only."),
}

REGISTRY_HELP = (
    "pattern_scan(pattern, group=0, flags='', all=false, split=null, lower=false)\n"
    "token_at(index=0, lower=false)\n"
    "number_capture(index=0, all=false)\n"
    "date_capture(all=false)\n"
    "full_text(lower=false)")


@dataclass
class PromptPack:
    templates: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_PROMPTS))

    @classmethod
    def from_dir(cls, path: str | Path) -> "PromptPack":
        """Load ``<role>.txt`` files; roles without a file keep the built-in template."""
        pack = cls()
        for role in DEFAULT_PROMPTS:
            f = Path(path) / f"{role}.txt"
            if f.exists():
                pack.templates[role] = f.read_text(encoding="utf-8")
        return pack

    def render(self, role: str, **slots) -> str:
        return Template(self.templates[role]).safe_substitute(**{k: str(v) for k, v in slots.items()})


def _json_reply(text: str):
    m = re.search(r"(\{.*\}|\[.*\])", text, re.DOTALL)
    if not m:
        raise ValueError("no JSON in reply")
    return json.loads(m.group(1))


_SENTENCES = {"name": "pattern_scan", "params": {"pattern": r"[^.!?\n]+", "all": True}}


class LlmGenerator:
    """Multi-call generation pipeline.

    The LLM proposes feature descriptions. For each description and side it
    writes a per-side description, chooses between LLM and code extraction,
    and returns a prompt or a registry extractor spec. A distance kind is then
    picked (by value type when obvious, else by asking). A malformed reply
    skips that description only. ``validator`` may inspect or repair each new
    featurization and return None to drop it.
    """

    def __init__(self, client: BaseClient, prompts: PromptPack | None = None,
                 validator: Callable[[Featurization, Sequence[Example]], Featurization | None] | None = None,
                 id_prefix: str = "gen"):
        self.client = client
        self.prompts = prompts or PromptPack()
        self.validator = validator
        self.id_prefix = id_prefix
        self._counter = 0

    def _ask(self, role: str, **slots) -> str:
        return self.client.complete(self.prompts.render(role, **slots))

    def generate(self, examples, join_prompt, existing) -> list[Featurization]:
        ex_text = "\n".join(
            f"- left: {e.left_text!r} | right: {e.right_text!r} | match: {'yes' if e.label else 'no'}"
            + (f" | features: {json.dumps({k: [str(v) for v in vals] for k, vals in e.features.items()})}"
               if e.features else "")
            for e in examples)
        existing_text = "\n".join(f"- {p.id}: {p.description or p.kind.value}" for p in existing) or "(none)"
        out: list[Featurization] = []
        try:
            raw = self._ask("get-featurization-descriptions", join_prompt=join_prompt,
                            examples=ex_text, existing=existing_text)
        except TransportError as exc:
            log.warning("description request failed: %s", exc)
            return out
        try:
            descriptions = [str(d) for d in _json_reply(raw)]
        except (ValueError, TypeError):
            descriptions = [ln.strip("-* ").strip() for ln in raw.splitlines() if ln.strip()]
        for desc in descriptions:
            try:
                phi = self._instantiate(desc, examples, join_prompt, existing + out)
            except TransportError as exc:
                log.warning("client failed while building %r: %s; returning partial batch", desc, exc)
                break
            except (ValueError, KeyError, TypeError, IndexError, DomainError) as exc:
                log.warning("skipping feature %r: %s", desc, exc)
                continue
            if phi is not None and self.validator is not None:
                phi = self.validator(phi, examples)
            if phi is not None:
                out.extend(dedupe([phi], existing + out))
        return out

    def _extractor(self, desc: str, side: str, examples, join_prompt):
        records = "\n".join(f"- {(e.left_text if side == 'left' else e.right_text)!r}" for e in examples[:6])
        col_desc = self._ask("get-feature-description-for-col", join_prompt=join_prompt,
                             description=desc, side=side, records=records)
        decision = self._ask("should-use-llm", description=col_desc).strip().split()[0].strip(".:").lower()
        if decision == "infer":
            spec = _json_reply(self._ask("get-extraction-prompt", description=col_desc,
                                         outputs=", ".join(OUTPUT_VARIANTS)))
            return LlmExtractor(str(spec["prompt"]), str(spec.get("output", "text")))
        if decision == "split":
            return CodeExtractor(_SENTENCES["name"], tuple(sorted(_SENTENCES["params"].items())))
        if decision == "extract":
            spec = _json_reply(self._ask("get-extraction-code", description=col_desc,
                                         registry=REGISTRY_HELP, records=records))
            return CodeExtractor(str(spec["name"]), tuple(sorted(dict(spec.get("params", {})).items())))
        raise ValueError(f"unrecognized extraction decision {decision!r}")

    def _instantiate(self, desc, examples, join_prompt, existing) -> Featurization:
        left = self._extractor(desc, "left", examples, join_prompt)
        right = self._extractor(desc, "right", examples, join_prompt)
        kind = _obvious_kind(left, right)
        if kind is None:
            lv = [_safe_apply(left, e.left_text) for e in examples[:5]]
            rv = [_safe_apply(right, e.right_text) for e in examples[:5]]
            kind = DistanceKind.parse(self._ask("get-distance-func", description=desc,
                                                left_values=lv, right_values=rv))
        taken = {p.id for p in existing}
        while True:
            self._counter += 1
            fid = f"{self.id_prefix}{self._counter}"
            if fid not in taken:
                break
        return Featurization(fid, kind, left, right, desc)


def _obvious_kind(left, right) -> DistanceKind | None:
    outs = set()
    for ext in (left, right):
        if isinstance(ext, LlmExtractor):
            outs.add(ext.output.replace("_list", ""))
        elif ext.name == "number_capture":
            outs.add("number")
        elif ext.name == "date_capture":
            outs.add("date")
        else:
            outs.add("text")
    if outs == {"number"}:
        return DistanceKind.ARITHMETIC
    if outs == {"date"}:
        return DistanceKind.DATE
    return None


def _safe_apply(ext, text: str):
    if isinstance(ext, CodeExtractor):
        try:
            return ext(text)
        except Exception:  # display only
            return None
    return "(llm)"

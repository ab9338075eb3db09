"""Record sets, pair samples, join specifications and the quality metrics.

Records are addressed by caller-supplied string ids; internally every set keeps
a dense index so pair distances can live in plain numpy matrices.
"""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

log = logging.getLogger(__name__)

Pair = tuple[str, str]

DEFAULT_JOIN_PROMPT = (
    "Decide whether the two records below satisfy the join condition.\n"
    "Record A: {l}\nRecord B: {r}\nAnswer yes or no."
)

# universes at or below this size are sampled through one full permutation
_PERMUTATION_LIMIT = 4_000_000


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class StateError(RuntimeError):
    """An object is not in the state an operation requires."""


class ConfigError(RuntimeError):
    """A required collaborator or setting is missing."""


class DataError(ValueError):
    """An input file is missing or malformed."""


class GuaranteeInfeasible(RuntimeError):
    """The requested recall guarantee cannot be certified with the given sample."""


def approx_token_count(text: str) -> int:
    """Default tokenizer: one token per four characters, rounded up."""
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class Record:
    id: str
    text: str


class RecordSet:
    """An ordered, immutable collection of text records with unique ids."""

    def __init__(self, records: Iterable[Record | tuple[str, str]], side: str = "left"):
        recs = []
        for rec in records:
            if not isinstance(rec, Record):
                rid, text = rec
                rec = Record(str(rid), str(text))
            recs.append(rec)
        self._records: tuple[Record, ...] = tuple(recs)
        self._index = {}
        for i, rec in enumerate(self._records):
            if rec.id in self._index:
                raise DomainError(f"duplicate record id {rec.id!r}")
            self._index[rec.id] = i
        self.side = side

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[Record]:
        return iter(self._records)

    def __getitem__(self, i: int) -> Record:
        return self._records[i]

    def __contains__(self, rid: str) -> bool:
        return rid in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, RecordSet) and self._records == other._records

    def __hash__(self) -> int:
        return hash(self._records)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self._records]

    @property
    def texts(self) -> list[str]:
        return [r.text for r in self._records]

    def index(self, rid: str) -> int:
        try:
            return self._index[rid]
        except KeyError:
            raise DomainError(f"unknown record id {rid!r}") from None

    def text(self, rid: str) -> str:
        return self._records[self.index(rid)].text

    def subset(self, ids: Iterable[str]) -> "RecordSet":
        keep = set(ids)
        return RecordSet([r for r in self._records if r.id in keep], side=self.side)

    @classmethod
    def from_jsonl(cls, path: str | Path, side: str = "left") -> "RecordSet":
        path = Path(path)
        if not path.exists():
            raise DataError(f"dataset file not found: {path}")
        recs = []
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    recs.append(Record(str(obj["id"]), str(obj["text"])))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise DataError(f"{path}:{lineno}: bad record ({exc})") from exc
        try:
            return cls(recs, side=side)
        except DomainError as exc:
            raise DataError(f"{path}: {exc}") from exc

    def to_jsonl(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for rec in self._records:
                fh.write(json.dumps({"id": rec.id, "text": rec.text}, ensure_ascii=False) + "\n")


def load_truth(path: str | Path) -> frozenset[Pair]:
    """Read a JSON-Lines file of {"left_id", "right_id"} positive pairs."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"truth file not found: {path}")
    pairs = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pairs.add((str(obj["left_id"]), str(obj["right_id"])))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad truth row ({exc})") from exc
    return frozenset(pairs)


def save_pairs(pairs: Iterable[Pair], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for l, r in sorted(pairs):
            fh.write(json.dumps({"left_id": l, "right_id": r}) + "\n")


def is_self_join(left: RecordSet, right: RecordSet) -> bool:
    return left is right or left == right


def universe_size(left: RecordSet, right: RecordSet) -> int:
    """Number of candidate pairs; a self-join drops the (i, i) diagonal."""
    if is_self_join(left, right):
        return len(left) * (len(left) - 1)
    return len(left) * len(right)


def decode_pair_index(flat: np.ndarray, n_left: int, n_right: int, self_join: bool):
    """Map flat universe indices to (left index, right index) arrays."""
    flat = np.asarray(flat, dtype=np.int64)
    if self_join:
        i, j = np.divmod(flat, n_left - 1)
        j = j + (j >= i)
        return i, j
    return np.divmod(flat, n_right)


class PairSampler:
    """Draws distinct pairs of L x R uniformly at random without replacement.

    The generator is numpy's PCG64 (``numpy.random.default_rng(seed)``). For
    universes up to a few million pairs a single permutation is drawn up front
    and consumed in order; larger universes use rejection of already-drawn flat
    indices, which keeps every new draw uniform over the undrawn pairs.
    Successive ``draw`` calls never repeat a pair, so a sampler hands out
    disjoint samples.
    """

    def __init__(self, left: RecordSet, right: RecordSet, seed: int | None = 0):
        self.left, self.right = left, right
        self.self_join = is_self_join(left, right)
        self.size = universe_size(left, right)
        self._rng = np.random.default_rng(seed)
        self._perm = None
        self._pos = 0
        self._seen: set[int] = set()
        if self.size <= _PERMUTATION_LIMIT:
            self._perm = self._rng.permutation(self.size)

    @property
    def drawn(self) -> int:
        return self._pos if self._perm is not None else len(self._seen)

    @property
    def remaining(self) -> int:
        return self.size - self.drawn

    def draw_indices(self, k: int) -> np.ndarray:
        if k > self.remaining:
            raise DomainError(f"cannot draw {k} pairs, only {self.remaining} remain")
        if self._perm is not None:
            out = self._perm[self._pos:self._pos + k]
            self._pos += k
            return out
        out = []
        while len(out) < k:
            for idx in self._rng.integers(0, self.size, size=2 * (k - len(out)) + 8):
                idx = int(idx)
                if idx not in self._seen:
                    self._seen.add(idx)
                    out.append(idx)
                    if len(out) == k:
                        break
        return np.asarray(out, dtype=np.int64)

    def draw(self, k: int) -> list[Pair]:
        idx = self.draw_indices(k)
        li, ri = decode_pair_index(idx, len(self.left), len(self.right), self.self_join)
        lids, rids = self.left.ids, self.right.ids
        return [(lids[a], rids[b]) for a, b in zip(li.tolist(), ri.tolist())]


@dataclass
class LabeledSample:
    """Uniformly sampled pairs with (optionally) their oracle labels."""

    pairs: list[Pair]
    labels: list[bool] | None = None
    seed: int | None = None

    def __post_init__(self):
        self.pairs = [tuple(p) for p in self.pairs]
        if self.labels is not None:
            self.labels = [bool(x) for x in self.labels]
            if len(self.labels) != len(self.pairs):
                raise DomainError("pairs and labels differ in length")
        if len(set(self.pairs)) != len(self.pairs):
            raise DomainError("sample contains repeated pairs")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def k(self) -> int:
        return len(self.pairs)

    @property
    def k_plus(self) -> int:
        self._require_labels()
        return sum(self.labels)

    def label_array(self) -> np.ndarray:
        self._require_labels()
        return np.asarray(self.labels, dtype=bool)

    def _require_labels(self):
        if self.labels is None:
            raise StateError("sample is unlabeled")


def sample_uniform_pairs(left: RecordSet, right: RecordSet, k: int, seed: int = 0) -> LabeledSample:
    """Draw k distinct pairs of L x R uniformly; labels are left unset."""
    size = universe_size(left, right)
    if k > size or k < 0:
        raise DomainError(f"k={k} exceeds the {size} available pairs")
    return LabeledSample(PairSampler(left, right, seed).draw(k), None, seed)


def split_pos_neg(sample: LabeledSample) -> tuple[list[Pair], list[Pair]]:
    if sample.labels is None:
        raise StateError("cannot split an unlabeled sample")
    pos = [p for p, y in zip(sample.pairs, sample.labels) if y]
    neg = [p for p, y in zip(sample.pairs, sample.labels) if not y]
    return pos, neg


def recall(result: Iterable[Pair], truth: Iterable[Pair]) -> float:
    truth = set(truth)
    if not truth:
        raise DomainError("recall is undefined for an empty truth set")
    return len(truth & set(result)) / len(truth)


def precision(result: Iterable[Pair], truth: Iterable[Pair]) -> float:
    result = set(result)
    if not result:
        raise DomainError("precision is undefined for an empty result")
    return len(result & set(truth)) / len(result)


_SLOT = re.compile(r"\{(l|r)\}")


@dataclass(frozen=True)
class JoinSpec:
    """Targets and the natural-language join condition."""

    recall_target: float = 0.9
    precision_target: float = 1.0
    failure_prob: float = 0.1
    join_prompt: str = DEFAULT_JOIN_PROMPT

    def __post_init__(self):
        if not 0 < self.recall_target <= 1:
            raise DomainError("recall target must lie in (0, 1]")
        if not 0 < self.precision_target <= 1:
            raise DomainError("precision target must lie in (0, 1]")
        if not 0 < self.failure_prob < 1:
            raise DomainError("failure probability must lie in (0, 1)")
        if "{l}" not in self.join_prompt or "{r}" not in self.join_prompt:
            raise DomainError("join prompt needs both {l} and {r} slots")

    def render(self, left_text: str, right_text: str) -> str:
        # single pass so record text containing "{r}" is never re-substituted
        return _SLOT.sub(lambda m: left_text if m.group(1) == "l" else right_text, self.join_prompt)

    def slot_counts(self) -> tuple[int, int, int]:
        """(template length without slots, #{l}, #{r})."""
        nl = self.join_prompt.count("{l}")
        nr = self.join_prompt.count("{r}")
        return len(self.join_prompt) - 3 * (nl + nr), nl, nr

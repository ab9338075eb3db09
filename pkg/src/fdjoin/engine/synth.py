"""Synthetic person-likes-movie corpus with a known self-join answer."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ..core import DomainError, Pair, RecordSet
from ..distances import DistanceKind
from ..extraction import CodeExtractor, Featurization
from . import wordlists


@dataclass(frozen=True)
class SynthConfig:
    n: int = 200
    persons_per_sentence: int = 1
    distractor_length_level: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise DomainError("need at least 2 movies")
        if self.persons_per_sentence < 1 or self.distractor_length_level < 0:
            raise DomainError("persons_per_sentence >= 1 and distractor level >= 0 required")


def _name_pool(count: int, rng: np.random.Generator) -> list[str]:
    full = [f"{a} {b}" for a, b in itertools.product(wordlists.FIRST_NAMES, wordlists.LAST_NAMES)]
    if count > len(full):
        raise DomainError(f"name pool holds {len(full)} names, {count} requested")
    return [full[i] for i in rng.choice(len(full), size=count, replace=False)]


def _title_pool(count: int, rng: np.random.Generator) -> list[str]:
    full = [f"The {a} {b}" for a, b in itertools.product(wordlists.TITLE_ADJECTIVES, wordlists.TITLE_NOUNS)]
    if count > len(full):
        raise DomainError(f"title pool holds {len(full)} titles, {count} requested")
    return [full[i] for i in rng.choice(len(full), size=count, replace=False)]


def _join_names(names: list[str]) -> str:
    if len(names) == 1:
        return names[0]
    return ", ".join(names[:-1]) + " and " + names[-1]


def _filler(level: int, rng: np.random.Generator) -> str:
    picks = rng.choice(len(wordlists.FILLER_SENTENCES), size=level, replace=True)
    return ". ".join(wordlists.FILLER_SENTENCES[i] for i in picks)


def synth_generate(cfg: SynthConfig) -> tuple[RecordSet, frozenset[Pair]]:
    """Build the corpus and its self-join truth (ordered row pairs sharing a person).

    Each of ``persons_per_sentence`` layers holds n people. Under a layer's
    random permutation s, person i appears on the rows (s(i), 1) and
    (s(i+1 mod n), 0), so every person is on two rows and every movie has two
    rows. Row order is shuffled.
    """
    rng = np.random.default_rng(cfg.seed)
    n, p = cfg.n, cfg.persons_per_sentence
    names = _name_pool(n * p, rng)
    titles = _title_pool(n, rng)
    row_people: dict[tuple[int, int], list[int]] = {(j, s): [] for j in range(n) for s in (0, 1)}
    for layer in range(p):
        perm = rng.permutation(n)
        for i in range(n):
            person = layer * n + i
            row_people[(int(perm[i]), 1)].append(person)
            row_people[(int(perm[(i + 1) % n]), 0)].append(person)
    keys = [(j, s) for j in range(n) for s in (0, 1)]
    order = rng.permutation(len(keys))
    variants = None
    if cfg.distractor_length_level > 0:
        variants = [(_filler(cfg.distractor_length_level, rng), _filler(cfg.distractor_length_level, rng))
                    for _ in range(2)]
    records, people_of = [], {}
    for pos, k in enumerate(order):
        j, s = keys[k]
        people = row_people[(j, s)]
        who = [names[q] for q in people]
        verb = "likes" if len(who) == 1 else "like"
        core = f"{_join_names(who)} {verb} the movie {titles[j]}"
        if variants is not None:
            pre, post = variants[int(rng.integers(2))]
            text = f"{pre}. For example, {core}. {post}."
        else:
            text = core
        rid = f"r{pos:05d}"
        records.append((rid, text))
        people_of[rid] = set(people)
    truth = frozenset((a, b) for a, b in itertools.permutations(people_of, 2)
                      if people_of[a] & people_of[b])
    return RecordSet(records, side="left"), truth


NAME_PATTERN = r"(?:^|\. )(?:For example, )?([^.]*?) likes? the movie"
NAME_SPLIT = r",\s*(?:and\s+)?|\s+and\s+"
TITLE_PATTERN = r"the movie (The [A-Z][a-z]+ [A-Z][a-z]+)"


def name_overlap_featurization(fid: str = "names") -> Featurization:
    """Word overlap between the lists of people named in each sentence."""
    ext = CodeExtractor("pattern_scan", (("group", 1), ("pattern", NAME_PATTERN), ("split", NAME_SPLIT)))
    return Featurization(fid, DistanceKind.WORD_OVERLAP, ext, ext, "people who like the movie")


def title_overlap_featurization(fid: str = "title") -> Featurization:
    ext = CodeExtractor("pattern_scan", (("group", 1), ("pattern", TITLE_PATTERN)))
    return Featurization(fid, DistanceKind.WORD_OVERLAP, ext, ext, "movie title")


SYNTH_JOIN_PROMPT = (
    "Do the two sentences below mention at least one person in common?\n"
    "Sentence 1: {l}\nSentence 2: {r}\nAnswer yes or no."
)

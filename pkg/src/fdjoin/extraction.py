"""Feature extractors, featurizations, LLM clients and cached feature tables.

Code extractors come from a small registry of named, parameterized functions;
model-generated source code is never executed. LLM extractors render a prompt
with a ``{text}`` slot and parse the reply into the declared output variant.
"""
from __future__ import annotations

import datetime as dt
import json
import logging
import os
import re
import threading
import time
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

from .core import (ConfigError, DomainError, JoinSpec, Pair, RecordSet, StateError,
                   approx_token_count, is_self_join)
from .distances import (INF, CachedEmbedder, DistanceKind, EmbeddingProvider, distance,
                        tokens)

log = logging.getLogger(__name__)

OUTPUT_VARIANTS = ("text", "number", "date", "text_list", "number_list", "date_list")

_NUMBER = re.compile(r"[-+]?(?:\d[\d,]*(?:\.\d+)?|\.\d+)")
_ISO_DATE = re.compile(r"\b(\d{4})-(\d{2})-(\d{2})\b")
_NULLISH = {"", "none", "null", "n/a", "na", "unknown", "missing"}


def _to_number(s: str):
    try:
        return float(s.replace(",", ""))
    except ValueError:
        return None


def _dates(text: str) -> list[dt.date]:
    out = []
    for m in _ISO_DATE.finditer(text):
        try:
            out.append(dt.date(int(m.group(1)), int(m.group(2)), int(m.group(3))))
        except ValueError:
            continue
    return out


# -- code extractor registry -------------------------------------------------

def _flags(spec: str) -> int:
    table = {"i": re.IGNORECASE, "m": re.MULTILINE, "s": re.DOTALL}
    out = 0
    for ch in spec:
        out |= table[ch]
    return out


def _pattern_scan(pattern: str, group: int = 0, flags: str = "", all: bool = False,
                  split: str | None = None, lower: bool = False):
    rx = re.compile(pattern, _flags(flags))
    splitter = re.compile(split) if split else None

    def run(text: str):
        if all:
            found = [m.group(group) for m in rx.finditer(text)]
        else:
            m = rx.search(text)
            found = [m.group(group)] if m else []
        if splitter:
            found = [piece for f in found for piece in splitter.split(f)]
        found = [f.strip() for f in found if f and f.strip()]
        if lower:
            found = [f.lower() for f in found]
        if not found:
            return None
        return found if (all or splitter) else found[0]

    return run


def _token_at(index: int = 0, lower: bool = False):
    def run(text: str):
        toks = [t.strip(".,;:!?\"'()[]") for t in text.split()]
        toks = [t for t in toks if t]
        if not -len(toks) <= index < len(toks):
            return None
        tok = toks[index]
        return tok.lower() if lower else tok

    return run


def _number_capture(index: int = 0, all: bool = False):
    def run(text: str):
        nums = [n for n in (_to_number(m) for m in _NUMBER.findall(text)) if n is not None]
        if all:
            return nums or None
        return nums[index] if -len(nums) <= index < len(nums) else None

    return run


def _date_capture(all: bool = False):
    def run(text: str):
        found = _dates(text)
        if all:
            return found or None
        return found[0] if found else None

    return run


def _full_text(lower: bool = False):
    def run(text: str):
        text = text.strip()
        return text.lower() if lower else text

    return run


REGISTRY: dict[str, Callable[..., Callable[[str], object]]] = {
    "pattern_scan": _pattern_scan,
    "token_at": _token_at,
    "number_capture": _number_capture,
    "date_capture": _date_capture,
    "full_text": _full_text,
}


def parse_output(raw: str, output: str):
    """Parse an LLM reply into the declared variant; anything unparseable is missing."""
    raw = (raw or "").strip()
    if raw.lower() in _NULLISH:
        return None
    if output == "text":
        return raw
    if output == "number":
        m = _NUMBER.search(raw)
        return _to_number(m.group(0)) if m else None
    if output == "date":
        found = _dates(raw)
        return found[0] if found else None
    if output == "number_list":
        nums = [n for n in (_to_number(m) for m in _NUMBER.findall(raw)) if n is not None]
        return nums or None
    if output == "date_list":
        return _dates(raw) or None
    if output == "text_list":
        items = None
        if raw.startswith("["):
            try:
                items = [str(x) for x in json.loads(raw)]
            except (json.JSONDecodeError, TypeError):
                items = None
        if items is None:
            items = re.split(r"[\n;]|,\s*", raw)
        items = [i.strip().lstrip("-* ").strip() for i in items]
        items = [i for i in items if i and i.lower() not in _NULLISH]
        return items or None
    raise DomainError(f"unknown output variant {output!r}")


# -- extractors and featurizations ----------------------------------------------

@dataclass(frozen=True)
class CodeExtractor:
    name: str
    params: tuple = ()

    def __post_init__(self):
        if self.name not in REGISTRY:
            raise DomainError(f"no registered extractor named {self.name!r}")
        if isinstance(self.params, Mapping):
            object.__setattr__(self, "params", tuple(sorted(self.params.items())))
        # build once to surface bad params early
        object.__setattr__(self, "_fn", REGISTRY[self.name](**dict(self.params)))

    def __call__(self, text: str):
        return self._fn(text)

    def to_spec(self) -> dict:
        return {"type": "code", "name": self.name, "params": dict(self.params)}


@dataclass(frozen=True)
class LlmExtractor:
    prompt: str
    output: str = "text"

    def __post_init__(self):
        if "{text}" not in self.prompt:
            raise DomainError("extraction prompt needs a {text} slot")
        if self.output not in OUTPUT_VARIANTS:
            raise DomainError(f"unknown output variant {self.output!r}")

    def render(self, text: str) -> str:
        return self.prompt.replace("{text}", text)

    def to_spec(self) -> dict:
        return {"type": "llm", "prompt": self.prompt, "output": self.output}


Extractor = CodeExtractor | LlmExtractor


def extractor_from_spec(spec: Mapping) -> Extractor:
    kind = spec.get("type")
    if kind == "code":
        return CodeExtractor(spec["name"], tuple(sorted(dict(spec.get("params", {})).items())))
    if kind == "llm":
        return LlmExtractor(spec["prompt"], spec.get("output", "text"))
    raise DomainError(f"unknown extractor type {kind!r}")


@dataclass(frozen=True)
class Featurization:
    """A distance kind plus one extractor per side."""

    id: str
    kind: DistanceKind
    left: Extractor
    right: Extractor
    description: str = ""

    def __post_init__(self):
        if not isinstance(self.kind, DistanceKind):
            object.__setattr__(self, "kind", DistanceKind.parse(str(self.kind)))

    def fingerprint(self) -> str:
        return json.dumps([self.kind.value, self.left.to_spec(), self.right.to_spec()],
                          sort_keys=True)

    def to_spec(self) -> dict:
        return {"id": self.id, "kind": self.kind.value, "description": self.description,
                "left": self.left.to_spec(), "right": self.right.to_spec()}

    @classmethod
    def from_spec(cls, spec: Mapping) -> "Featurization":
        return cls(str(spec["id"]), DistanceKind.parse(spec["kind"]),
                   extractor_from_spec(spec["left"]), extractor_from_spec(spec["right"]),
                   spec.get("description", ""))


def load_featurizations(path: str | Path) -> list[Featurization]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    phis = [Featurization.from_spec(s) for s in data]
    if len({p.id for p in phis}) != len(phis):
        raise DomainError("featurization ids must be unique")
    return phis


def save_featurizations(phis: Sequence[Featurization], path: str | Path) -> None:
    Path(path).write_text(json.dumps([p.to_spec() for p in phis], indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


# -- value (de)serialization for the on-disk cache ------------------------------

def encode_value(v):
    if v is None:
        return None
    if isinstance(v, (list, tuple)):
        return {"list": [encode_value(x) for x in v]}
    if isinstance(v, dt.date):
        return {"date": v.isoformat()}
    if isinstance(v, str):
        return {"text": v}
    return {"number": float(v)}


def decode_value(obj):
    if obj is None:
        return None
    ((tag, payload),) = obj.items()
    if tag == "list":
        return [decode_value(x) for x in payload]
    if tag == "date":
        return dt.date.fromisoformat(payload)
    if tag == "text":
        return payload
    return float(payload)


# -- LLM clients -------------------------------------------------------------------

class TransportError(RuntimeError):
    """A client could not reach its backend."""


@dataclass
class CallRecord:
    phase: str
    kind: str  # judge | complete | embed
    tokens: int
    pair: Pair | None = None


class CallLog:
    """Thread-safe accumulation of per-call token counts, tagged by phase."""

    def __init__(self):
        self.records: list[CallRecord] = []
        self.phase = "unassigned"
        self._lock = threading.Lock()

    def add(self, kind: str, tokens: int, pair: Pair | None = None, phase: str | None = None):
        with self._lock:
            self.records.append(CallRecord(phase or self.phase, kind, int(tokens), pair))

    @contextmanager
    def in_phase(self, name: str):
        prev, self.phase = self.phase, name
        try:
            yield self
        finally:
            self.phase = prev

    def tokens(self, phase: str | None = None, kind: str | None = None) -> int:
        return sum(r.tokens for r in self.records
                   if (phase is None or r.phase == phase) and (kind is None or r.kind == kind))

    def judged_pairs(self, phase: str | None = None) -> list[Pair]:
        return [r.pair for r in self.records
                if r.kind == "judge" and (phase is None or r.phase == phase)]


class BaseClient:
    """Shared logging and retry logic; subclasses implement ``_complete``/``_judge``."""

    allows_concurrency = True

    def __init__(self, tokenizer=approx_token_count, call_log: CallLog | None = None,
                 retries: int = 2, backoff: float = 0.5):
        self.tokenizer = tokenizer
        self.call_log = call_log if call_log is not None else CallLog()
        self.retries = retries
        self.backoff = backoff

    def token_count(self, prompt: str) -> int:
        return self.tokenizer(prompt)

    def _with_retry(self, fn, *args):
        for attempt in range(self.retries + 1):
            try:
                return fn(*args)
            except TransportError:
                if attempt == self.retries:
                    raise
                log.warning("transport failure, retry %d/%d", attempt + 1, self.retries)
                time.sleep(self.backoff * 2 ** attempt)

    def complete(self, prompt: str) -> str:
        out = self._with_retry(self._complete, prompt)
        self.call_log.add("complete", self.token_count(prompt))
        return out

    def judge(self, prompt: str, pair: Pair | None = None) -> bool:
        out = self._with_retry(self._judge, prompt, pair)
        self.call_log.add("judge", self.token_count(prompt), pair)
        return bool(out)

    def _complete(self, prompt: str) -> str:
        raise NotImplementedError

    def _judge(self, prompt: str, pair: Pair | None) -> bool:
        raise NotImplementedError


class OracleBackend(BaseClient):
    """Answers join judgements from ground truth while logging prompt tokens.

    ``judge`` needs the pair hint that ``judge_pair`` passes along with the
    prompt. ``complete`` delegates to an optional responder (defaults to an
    empty reply, which every extractor parses as missing).
    """

    def __init__(self, truth: Iterable[Pair], responder: Callable[[str], str] | None = None,
                 **kw):
        super().__init__(**kw)
        self.truth = frozenset(tuple(p) for p in truth)
        self.responder = responder

    def _judge(self, prompt: str, pair: Pair | None) -> bool:
        if pair is None:
            raise ConfigError("the oracle backend needs the pair being judged")
        return tuple(pair) in self.truth

    def _complete(self, prompt: str) -> str:
        return self.responder(prompt) if self.responder else ""


class ScriptedClient(BaseClient):
    """Replays canned completions in order (or via a callable); useful in tests."""

    def __init__(self, replies: Sequence[str] | Callable[[str], str] = (),
                 judge_fn: Callable[[str, Pair | None], bool] | None = None, **kw):
        super().__init__(**kw)
        self._replies = replies if callable(replies) else list(replies)
        self._judge_fn = judge_fn
        self.prompts: list[str] = []

    def _complete(self, prompt: str) -> str:
        self.prompts.append(prompt)
        if callable(self._replies):
            return self._replies(prompt)
        if not self._replies:
            raise TransportError("scripted client has no replies left")
        return self._replies.pop(0)

    def _judge(self, prompt: str, pair: Pair | None) -> bool:
        if self._judge_fn is None:
            return self._complete(prompt).strip().lower().startswith("y")
        return self._judge_fn(prompt, pair)


class HttpClient(BaseClient):
    """Minimal JSON-over-HTTP client.

    POSTs ``{"model", "prompt"}`` to ``url`` and reads ``{"text"}`` back. The
    bearer token comes from the ``FDJOIN_API_KEY`` environment variable.
    """

    def __init__(self, url: str | None = None, model: str = "default", timeout: float = 60.0,
                 opener=None, **kw):
        super().__init__(**kw)
        self.url = url or os.environ.get("FDJOIN_LLM_URL")
        self.api_key = os.environ.get("FDJOIN_API_KEY")
        if not self.url:
            raise ConfigError("HttpClient needs a url (or FDJOIN_LLM_URL)")
        if not self.api_key:
            raise ConfigError("FDJOIN_API_KEY is not set")
        self.model = model
        self.timeout = timeout
        self._open = opener or urllib.request.urlopen

    def _complete(self, prompt: str) -> str:
        body = json.dumps({"model": self.model, "prompt": prompt}).encode("utf-8")
        req = urllib.request.Request(self.url, data=body, method="POST", headers={
            "Content-Type": "application/json", "Authorization": f"Bearer {self.api_key}"})
        try:
            with self._open(req, timeout=self.timeout) as resp:
                return json.loads(resp.read().decode("utf-8"))["text"]
        except OSError as exc:
            raise TransportError(str(exc)) from exc

    def _judge(self, prompt: str, pair: Pair | None) -> bool:
        return self._complete(prompt).strip().lower().startswith("y")


def judge_pair(client: BaseClient, spec: JoinSpec, left: RecordSet, right: RecordSet,
               pair: Pair) -> bool:
    """Render the join prompt for one pair and ask the client."""
    l, r = pair
    prompt = spec.render(left.text(l), right.text(r))
    return client.judge(prompt, pair=(l, r))


# -- extraction ----------------------------------------------------------------------

def _cache_file(cache_dir: Path, fid: str, side: str) -> Path:
    safe = re.sub(r"[^A-Za-z0-9_.-]", "_", fid)
    return cache_dir / safe / f"{side}.json"


def extract_all(extractor: Extractor, records: RecordSet, client: BaseClient | None = None, *,
                ids: Iterable[str] | None = None, known: Mapping[str, object] | None = None,
                cache_dir: str | Path | None = None, fid: str | None = None,
                side: str | None = None, parallelism: int = 1) -> dict[str, object]:
    """Extract one feature value per record (or per id in ``ids``).

    Values already in ``known`` or in the on-disk cache are reused; only the
    rest are computed. Extractor failures turn into missing values.
    """
    if isinstance(extractor, LlmExtractor) and client is None:
        raise ConfigError("an LLM extractor needs a client")
    wanted = records.ids if ids is None else list(dict.fromkeys(ids))
    out: dict[str, object] = dict(known or {})
    path = None
    if cache_dir is not None and fid is not None:
        path = _cache_file(Path(cache_dir), fid, side or records.side)
        if path.exists():
            cached = json.loads(path.read_text(encoding="utf-8"))
            for rid, enc in cached.items():
                out.setdefault(rid, decode_value(enc))
    todo = [rid for rid in wanted if rid not in out]

    def one(rid: str):
        text = records.text(rid)
        if not text.strip():
            return None
        if isinstance(extractor, LlmExtractor):
            return parse_output(client.complete(extractor.render(text)), extractor.output)
        try:
            return extractor(text)
        except Exception as exc:  # registry functions should not fail, but never abort a join
            log.warning("extractor %s failed on record %s: %s", extractor.name, rid, exc)
            return None

    if todo:
        if parallelism > 1 and isinstance(extractor, LlmExtractor) and client.allows_concurrency:
            with ThreadPoolExecutor(parallelism) as pool:
                vals = list(pool.map(one, todo))
        else:
            vals = [one(rid) for rid in todo]
        out.update(zip(todo, vals))
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            merged = {}
            if path.exists():
                merged = json.loads(path.read_text(encoding="utf-8"))
            merged.update({rid: encode_value(out[rid]) for rid in out})
            path.write_text(json.dumps(merged, sort_keys=True), encoding="utf-8")
    return {rid: out[rid] for rid in wanted}


@dataclass
class _Elements:
    """Flattened per-record element lists for vectorized distance blocks."""

    starts: np.ndarray   # per record offset into the element arrays
    counts: np.ndarray   # per record element count (0 = missing)
    payload: object      # CSR incidence, float array or embedding matrix
    sizes: np.ndarray | None = None  # token-set sizes for word overlap


class FeatureStore:
    """Feature tables for every featurization on both sides, plus distance memos.

    Values are extracted lazily and shared between featurizations whose
    extractor on a side is identical; for a self-join the left and right
    tables of the same extractor coincide.
    """

    def __init__(self, left: RecordSet, right: RecordSet, client: BaseClient | None = None,
                 provider: EmbeddingProvider | None = None, cache_dir: str | Path | None = None,
                 call_log: CallLog | None = None, parallelism: int = 1):
        self.left, self.right = left, right
        self.self_join = is_self_join(left, right)
        self.client = client
        self.call_log = call_log or (client.call_log if client is not None else CallLog())
        if provider is not None and not isinstance(provider, CachedEmbedder):
            provider = CachedEmbedder(provider)
        self.provider = provider
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.parallelism = parallelism
        self._values: dict[tuple[str, str], dict[str, object]] = {}
        self._memo: dict[tuple[str, str, str], float] = {}
        self._full: dict[str, np.ndarray] = {}

    # values --------------------------------------------------------------
    def _key(self, phi: Featurization, side: str) -> tuple[str, str]:
        ext = phi.left if side == "left" else phi.right
        set_tag = "left" if (side == "left" or self.self_join) else "right"
        return json.dumps(ext.to_spec(), sort_keys=True), set_tag

    def _records(self, side: str) -> RecordSet:
        return self.left if side == "left" else self.right

    def ensure(self, phi: Featurization, side: str, ids: Iterable[str] | None = None) -> None:
        key = self._key(phi, side)
        table = self._values.setdefault(key, {})
        records = self._records(side)
        wanted = records.ids if ids is None else list(ids)
        if all(rid in table for rid in wanted):
            return
        ext = phi.left if side == "left" else phi.right
        got = extract_all(ext, records, self.client, ids=wanted, known=table,
                          cache_dir=self.cache_dir, fid=phi.id, side=side,
                          parallelism=self.parallelism)
        table.update(got)

    def ensure_pairs(self, phi: Featurization, pairs: Iterable[Pair]) -> None:
        pairs = list(pairs)
        self.ensure(phi, "left", dict.fromkeys(p[0] for p in pairs))
        self.ensure(phi, "right", dict.fromkeys(p[1] for p in pairs))

    def is_extracted(self, phi: Featurization, side: str, rid: str) -> bool:
        return rid in self._values.get(self._key(phi, side), {})

    def value(self, phi: Featurization, side: str, rid: str):
        table = self._values.get(self._key(phi, side), {})
        if rid not in table:
            raise StateError(f"{phi.id}: {side} record {rid!r} has not been extracted")
        return table[rid]

    def table(self, phi: Featurization, side: str) -> dict[str, object]:
        return dict(self._values.get(self._key(phi, side), {}))

    # distances -----------------------------------------------------------
    def featurization_distance(self, phi: Featurization, pair: Pair) -> float:
        """phi(l, r) for one pair; both sides must already be extracted."""
        key = (phi.id, pair[0], pair[1])
        if key not in self._memo:
            a = self.value(phi, "left", pair[0])
            b = self.value(phi, "right", pair[1])
            self._memo[key] = self._scalar(phi.kind, a, b)
        return self._memo[key]

    def _scalar(self, kind: DistanceKind, a, b) -> float:
        if kind is DistanceKind.SEMANTIC:
            before = self._provider().new_tokens
            d = distance(kind, a, b, self._provider())
            self._log_embed(before)
            return d
        return distance(kind, a, b)

    def _provider(self) -> CachedEmbedder:
        if self.provider is None:
            raise ConfigError("semantic featurizations need an embedding provider")
        return self.provider

    def _log_embed(self, before: int) -> None:
        spent = self.provider.new_tokens - before
        if spent:
            self.call_log.add("embed", spent)

    def pair_distances(self, phi: Featurization, pairs: Sequence[Pair]) -> np.ndarray:
        """Distances for a list of pairs, extracting any missing values first."""
        if not pairs:
            return np.zeros(0)
        self.ensure_pairs(phi, pairs)
        lidx = np.fromiter((self.left.index(p[0]) for p in pairs), dtype=np.int64, count=len(pairs))
        ridx = np.fromiter((self.right.index(p[1]) for p in pairs), dtype=np.int64, count=len(pairs))
        if phi.id in self._full:
            return self._full[phi.id][lidx, ridx]
        ul, l_inv = np.unique(lidx, return_inverse=True)
        ur, r_inv = np.unique(ridx, return_inverse=True)
        out = np.empty(len(pairs))
        rows_per_block = max(1, 2_000_000 // max(1, len(ur)))
        order = np.argsort(l_inv, kind="stable")
        bounds = np.searchsorted(l_inv[order], np.arange(0, len(ul) + rows_per_block, rows_per_block))
        for b in range(len(bounds) - 1):
            sel = order[bounds[b]:bounds[b + 1]]
            if not len(sel):
                continue
            lo = b * rows_per_block
            block = self.distance_block(phi, ul[lo:lo + rows_per_block], ur)
            out[sel] = block[l_inv[sel] - lo, r_inv[sel]]
        return out

    def full_matrix(self, phi: Featurization) -> np.ndarray:
        """All-pairs distance matrix (diagonal included even for self-joins)."""
        if phi.id not in self._full:
            self.ensure(phi, "left")
            self.ensure(phi, "right")
            self._full[phi.id] = self.distance_block(
                phi, np.arange(len(self.left)), np.arange(len(self.right)))
        return self._full[phi.id]

    def distance_block(self, phi: Featurization, left_idx: np.ndarray,
                       right_idx: np.ndarray) -> np.ndarray:
        """Vectorized distances between the given left and right record indices."""
        lids = [self.left[i].id for i in np.asarray(left_idx).tolist()]
        rids = [self.right[j].id for j in np.asarray(right_idx).tolist()]
        self.ensure(phi, "left", lids)
        self.ensure(phi, "right", rids)
        lvals = [self.value(phi, "left", rid) for rid in lids]
        rvals = [self.value(phi, "right", rid) for rid in rids]
        return self._block(phi.kind, lvals, rvals)

    def _block(self, kind: DistanceKind, lvals: list, rvals: list) -> np.ndarray:
        out = np.full((len(lvals), len(rvals)), INF)
        if not lvals or not rvals:
            return out
        if kind is DistanceKind.WORD_OVERLAP:
            le, re_ = self._token_elements([lvals, rvals])
        else:
            le, re_ = (self._elements(kind, v) for v in (lvals, rvals))
        if not le.counts.any() or not re_.counts.any():
            return out
        if kind is DistanceKind.WORD_OVERLAP:
            inter = (le.payload @ re_.payload.T).toarray().astype(float)
            union = le.sizes[:, None] + re_.sizes[None, :] - inter
            with np.errstate(invalid="ignore", divide="ignore"):
                elem = np.where(union > 0, 1.0 - inter / np.where(union > 0, union, 1), 0.0)
        elif kind is DistanceKind.SEMANTIC:
            elem = np.clip(1.0 - le.payload @ re_.payload.T, 0.0, 2.0)
        else:
            elem = np.abs(le.payload[:, None] - re_.payload[None, :])
        lrows = np.flatnonzero(le.counts)
        rcols = np.flatnonzero(re_.counts)
        reduced = np.minimum.reduceat(elem, le.starts[lrows], axis=0)
        reduced = np.minimum.reduceat(reduced, re_.starts[rcols], axis=1)
        out[np.ix_(lrows, rcols)] = reduced
        return out

    @staticmethod
    def _flatten(values: list) -> tuple[list, np.ndarray, np.ndarray]:
        flat, counts = [], np.zeros(len(values), dtype=np.int64)
        for i, v in enumerate(values):
            items = [] if v is None else (list(v) if isinstance(v, (list, tuple)) else [v])
            items = [x for x in items if x is not None]
            counts[i] = len(items)
            flat.extend(items)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]]) if len(values) else counts
        return flat, starts, counts

    def _elements(self, kind: DistanceKind, values: list) -> _Elements:
        flat, starts, counts = self._flatten(values)
        for x in flat:
            expected = {"semantic": str, "arithmetic": (int, float, np.integer, np.floating),
                        "date": dt.date}[kind.value]
            if not isinstance(x, expected) or isinstance(x, bool):
                raise TypeError(f"{kind.value} distance got {type(x).__name__}")
        if kind is DistanceKind.SEMANTIC:
            prov = self._provider()
            before = prov.new_tokens
            payload = prov.embed(flat) if flat else np.zeros((0, prov.dim))
            self._log_embed(before)
        elif kind is DistanceKind.DATE:
            payload = np.array([(x.date() if isinstance(x, dt.datetime) else x).toordinal()
                                for x in flat], dtype=float)
        else:
            payload = np.array(flat, dtype=float)
        return _Elements(starts, counts, payload)

    def _token_elements(self, sides: list[list]) -> tuple[_Elements, _Elements]:
        vocab: dict[str, int] = {}
        built = []
        for values in sides:
            flat, starts, counts = self._flatten(values)
            rows, cols = [], []
            sizes = np.zeros(len(flat))
            for e, x in enumerate(flat):
                if not isinstance(x, str):
                    raise TypeError(f"word_overlap distance got {type(x).__name__}")
                toks = tokens(x)
                sizes[e] = len(toks)
                for t in toks:
                    rows.append(e)
                    cols.append(vocab.setdefault(t, len(vocab)))
            built.append((flat, starts, counts, rows, cols, sizes))
        out = []
        for flat, starts, counts, rows, cols, sizes in built:
            mat = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)),
                                    shape=(len(flat), max(1, len(vocab))))
            out.append(_Elements(starts, counts, mat, sizes))
        return out[0], out[1]

import datetime as dt
import json

import numpy as np
import pytest

from fdjoin.core import ConfigError, DomainError, JoinSpec, RecordSet, StateError
from fdjoin.distances import HashingEmbedder, distance
from fdjoin.extraction import (CallLog, CodeExtractor, Featurization, FeatureStore, HttpClient, LlmExtractor,
                               OracleBackend, ScriptedClient, TransportError, decode_value, encode_value,
                               extract_all, judge_pair, load_featurizations, parse_output,
                               save_featurizations)


def code(name, **params):
    return CodeExtractor(name, tuple(sorted(params.items())))


def test_date_capture_iso_example():
    ext = code("date_capture")
    assert ext("Released on 2019-07-04, re-released 2020-01-01") == dt.date(2019, 7, 4)
    assert code("date_capture", all=True)("a 2019-07-04 b 2020-01-01") == [dt.date(2019, 7, 4),
                                                                             dt.date(2020, 1, 1)]
    assert ext("no date; 2019-02-30 is invalid") is None


def test_registry_extractors():
    assert code("number_capture")("costs $1,250.50 today") == 1250.5
    assert code("number_capture", index=-1)("1 then 2 then 3") == 3.0
    assert code("token_at", index=1, lower=True)("Hello, World!") == "world"
    assert code("token_at", index=5)("too short") is None
    assert code("full_text", lower=True)("  ABC ") == "abc"
    scan = code("pattern_scan", pattern=r"by (\w+)", group=1, all=True)
    assert scan("by Ann and by Bob") == ["Ann", "Bob"]
    split = code("pattern_scan", pattern=r"cast: ([^.]*)", group=1, split=r",\s*")
    assert split("cast: A, B, C. end") == ["A", "B", "C"]
    assert scan("nobody") is None


def test_unknown_extractor_and_bad_prompt():
    with pytest.raises(DomainError):
        CodeExtractor("nope")
    with pytest.raises(DomainError):
        LlmExtractor("no slot here")
    with pytest.raises(DomainError):
        LlmExtractor("x {text}", output="blob")


@pytest.mark.parametrize("raw,output,expected", [
    ("42", "number", 42.0),
    ("The answer is -3.5 units", "number", -3.5),
    ("N/A", "number", None),
    ("2021-12-31", "date", dt.date(2021, 12, 31)),
    ('["a", "b"]', "text_list", ["a", "b"]),
    ("- a\n- b; c", "text_list", ["a", "b", "c"]),
    ("1, 2 and 3", "number_list", [1.0, 2.0, 3.0]),
    ("  hi  ", "text", "hi"),
    ("unknown", "text", None),
])
def test_parse_output(raw, output, expected):
    assert parse_output(raw, output) == expected


def test_scripted_llm_extraction_parses_number():
    client = ScriptedClient(["42"])
    rs = RecordSet([("a", "some text")])
    got = extract_all(LlmExtractor("Year of {text}?", "number"), rs, client)
    assert got == {"a": 42.0}
    assert client.prompts == ["Year of some text?"]
    assert client.call_log.tokens(kind="complete") == 5  # ceil(18/4)


def test_llm_extraction_without_client():
    with pytest.raises(ConfigError):
        extract_all(LlmExtractor("{text}"), RecordSet([("a", "x")]))


def test_extraction_cache_is_transparent(tmp_path):
    rs = RecordSet([("a", "n 1"), ("b", "n 2"), ("c", "")])
    client = ScriptedClient(lambda p: p.split()[-1])
    ext = LlmExtractor("value {text}", "number")
    first = extract_all(ext, rs, client, cache_dir=tmp_path, fid="f", side="left")
    calls = len(client.prompts)
    again = extract_all(ext, rs, client, cache_dir=tmp_path, fid="f", side="left")
    assert first == again == {"a": 1.0, "b": 2.0, "c": None}
    assert calls == 2  # the empty record is never sent
    assert len(client.prompts) == calls
    assert (tmp_path / "f" / "left.json").exists()


def test_value_codec_round_trip():
    for v in [None, "x", 3.0, dt.date(2000, 1, 2), ["a", None], [1.0, [dt.date(1999, 1, 1)]]]:
        assert decode_value(json.loads(json.dumps(encode_value(v)))) == v


def test_featurization_spec_round_trip(tmp_path):
    phis = [Featurization("f1", "word_overlap_similarity", code("full_text"),
                          LlmExtractor("get {text}", "text_list"), "desc")]
    save_featurizations(phis, tmp_path / "f.json")
    back = load_featurizations(tmp_path / "f.json")
    assert back == phis
    assert back[0].fingerprint() == phis[0].fingerprint()


def test_judge_logs_prompt_tokens():
    L = RecordSet([("a", "x" * 40)])
    R = RecordSet([("b", "y" * 40)], "right")
    spec = JoinSpec(join_prompt="{l}" + "-" * 20 + "{r}")  # 100 characters once rendered
    client = OracleBackend({("a", "b")})
    assert judge_pair(client, spec, L, R, ("a", "b")) is True
    assert client.call_log.records[-1].tokens == 25
    assert client.call_log.judged_pairs() == [("a", "b")]


def test_oracle_needs_pair_hint():
    with pytest.raises(ConfigError):
        OracleBackend(set()).judge("prompt")


def test_call_log_phases():
    log = CallLog()
    with log.in_phase("labeling"):
        log.add("judge", 5, ("a", "b"))
        with log.in_phase("refinement"):
            log.add("judge", 7, ("c", "d"))
        log.add("complete", 3)
    assert log.tokens("labeling") == 8
    assert log.tokens("refinement", "judge") == 7
    assert log.phase == "unassigned"


def test_retry_then_give_up():
    class Flaky(ScriptedClient):
        fails = 1

        def _complete(self, prompt):
            if self.fails:
                self.fails -= 1
                raise TransportError("down")
            return "ok"

    c = Flaky(backoff=0)
    assert c.complete("p") == "ok"
    dead = ScriptedClient([], retries=1, backoff=0)
    with pytest.raises(TransportError):
        dead.complete("p")


def test_http_client_needs_configuration(monkeypatch):
    monkeypatch.delenv("FDJOIN_LLM_URL", raising=False)
    monkeypatch.delenv("FDJOIN_API_KEY", raising=False)
    with pytest.raises(ConfigError):
        HttpClient()


def test_http_client_round_trip(monkeypatch):
    import io

    monkeypatch.setenv("FDJOIN_API_KEY", "k")
    seen = {}

    class Resp(io.BytesIO):
        def __enter__(self):
            return self

        def __exit__(self, *a):
            return False

    def opener(req, timeout):
        seen["auth"] = req.headers["Authorization"]
        seen["body"] = json.loads(req.data)
        return Resp(b'{"text": "yes"}')

    c = HttpClient("http://example.invalid", opener=opener)
    assert c.judge("is it?") is True
    assert seen == {"auth": "Bearer k", "body": {"model": "default", "prompt": "is it?"}}


# -- feature store -----------------------------------------------------------------

LEFT = RecordSet([("l0", "Ann Lee, 2001-05-01, 12 apples"), ("l1", "Bob Ray 1999-12-31 7"),
                  ("l2", "nothing here"), ("l3", "Cid Max and Ann 2003-03-03 100")], "left")
RIGHT = RecordSet([("r0", "Ann 2001-05-09 10"), ("r1", "Ray 1.5"), ("r2", "Max Lee 2002-01-01")], "right")

PHIS = [
    Featurization("words", "word_overlap", code("full_text"), code("full_text")),
    Featurization("names", "word_overlap", code("pattern_scan", pattern=r"[A-Z][a-z]+", all=True),
                  code("pattern_scan", pattern=r"[A-Z][a-z]+", all=True)),
    Featurization("num", "arithmetic", code("number_capture", index=-1), code("number_capture", index=-1)),
    Featurization("nums", "arithmetic", code("number_capture", all=True), code("number_capture", all=True)),
    Featurization("when", "date", code("date_capture"), code("date_capture")),
    Featurization("sem", "semantic", code("full_text"), code("full_text")),
]


@pytest.mark.parametrize("phi", PHIS, ids=lambda p: p.id)
def test_vectorized_block_matches_scalar_distance(phi):
    emb = HashingEmbedder(dim=16, seed=2)
    store = FeatureStore(LEFT, RIGHT, provider=emb)
    block = store.distance_block(phi, np.arange(4), np.arange(3))
    for i, l in enumerate(LEFT):
        for j, r in enumerate(RIGHT):
            a = store.value(phi, "left", l.id)
            b = store.value(phi, "right", r.id)
            assert block[i, j] == pytest.approx(distance(phi.kind, a, b, emb), abs=1e-12)
    pairs = [(l.id, r.id) for l in LEFT for r in RIGHT][::-1]
    flat = store.pair_distances(phi, pairs)
    assert flat == pytest.approx([block[LEFT.index(a), RIGHT.index(b)] for a, b in pairs])


def test_store_value_before_extraction_raises():
    store = FeatureStore(LEFT, RIGHT)
    with pytest.raises(StateError):
        store.value(PHIS[0], "left", "l0")
    store.ensure_pairs(PHIS[0], [("l0", "r0")])
    assert store.is_extracted(PHIS[0], "left", "l0")
    assert not store.is_extracted(PHIS[0], "left", "l1")


def test_store_shares_extractions_between_featurizations():
    client = ScriptedClient(lambda p: "5")
    ext = LlmExtractor("num {text}", "number")
    a = Featurization("a", "arithmetic", ext, ext)
    b = Featurization("b", "arithmetic", ext, code("number_capture"))
    store = FeatureStore(LEFT, LEFT, client)
    store.ensure(a, "left")
    store.ensure(a, "right")  # self-join: same table
    store.ensure(b, "left")
    assert len(client.prompts) == len(LEFT)


def test_semantic_store_logs_embedding_tokens():
    store = FeatureStore(LEFT, RIGHT, provider=HashingEmbedder(dim=8))
    store.full_matrix(PHIS[-1])
    expected = sum(-(-len(t) // 4) for t in LEFT.texts + RIGHT.texts)
    assert store.call_log.tokens(kind="embed") == expected

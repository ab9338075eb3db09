import itertools
import math

import numpy as np
import pytest

from fdjoin.core import DomainError
from fdjoin.scaffold import (FeaturizedDecomposition, LogicalScaffold, admitted_mask, clause_matrix,
                             clause_min_reduce, default_clause_cap, eval_decomposition, fit_normalization,
                             greedy_build, min_cost_threshold, naive_min_cost_threshold, recall_and_fp)

INF = math.inf


class DictStore:
    """Feature-store stand-in that serves precomputed raw distances."""

    def __init__(self, table):
        self.table = table  # fid -> {pair: distance}

    def pair_distances(self, phi, pairs):
        return np.array([self.table[phi][p] for p in pairs], dtype=float)

    def featurization_distance(self, phi, pair):
        return self.table[phi][pair]


IDENTITY = lambda fids: {f: (0.0, 1.0) for f in fids}  # noqa: E731


def test_scaffold_structure_and_str():
    sc = LogicalScaffold().add_clause("a").add_clause("b").add_disjunct(0, "c")
    assert sc.clauses == (("a", "c"), ("b",))
    assert str(sc) == "(a | c) & b"
    assert str(LogicalScaffold()) == "TRUE"
    assert sc.featurization_ids() == ["a", "c", "b"]
    with pytest.raises(DomainError):
        sc.add_disjunct(0, "a")
    with pytest.raises(DomainError):
        LogicalScaffold(((),))


def test_decomposition_round_trip(tmp_path):
    d = FeaturizedDecomposition(LogicalScaffold((("a", "b"), ("c",))), (0.125, INF),
                                {"a": (0.0, 3.5), "b": (1.0, 1.0), "c": (-2.0, 0.1)})
    d.save(tmp_path / "d.json")
    back = FeaturizedDecomposition.load(tmp_path / "d.json")
    assert back == d
    d.save(tmp_path / "e.json")
    assert (tmp_path / "d.json").read_bytes() == (tmp_path / "e.json").read_bytes()


def test_fit_normalization_ignores_inf():
    norm = fit_normalization(["a", "b"], {"a": np.array([3.0, INF, 1.0]), "b": np.array([INF])})
    assert norm == {"a": (1.0, 3.0), "b": (0.0, 0.0)}


@pytest.mark.parametrize("values,expected", [([0.4], 0.4), ([0.7, 0.2, INF], 0.2), ([INF, INF], INF)])
def test_clause_min_reduce_examples(values, expected):
    fids = [f"f{i}" for i in range(len(values))]
    store = DictStore({f: {("l", "r"): v} for f, v in zip(fids, values)})
    got = clause_min_reduce(fids, ("l", "r"), store, {f: f for f in fids}, IDENTITY(fids))
    assert got == expected


def test_eval_decomposition_trivial_cases():
    pairs = [("a", str(i)) for i in range(4)]
    store = DictStore({"f": {p: 0.5 for p in pairs}})
    empty = FeaturizedDecomposition(LogicalScaffold(), (), {})
    assert eval_decomposition(empty, pairs, store, {}) == pairs
    low = FeaturizedDecomposition(LogicalScaffold((("f",),)), (0.1,), IDENTITY(["f"]))
    assert eval_decomposition(low, pairs, store, {"f": "f"}) == []


def test_eval_decomposition_truth_table():
    # (f1 <= .3 or f2 <= .3) and f3 <= .5, evaluated by hand for six pairs
    pairs = [("p", str(i)) for i in range(6)]
    raw = {
        "f1": [0.1, 0.9, 0.9, 0.2, INF, 0.3],
        "f2": [0.9, 0.2, 0.9, 0.1, 0.3, INF],
        "f3": [0.5, 0.4, 0.1, 0.9, 0.0, INF],
    }
    expected = [True, True, False, False, True, False]
    store = DictStore({f: dict(zip(pairs, v)) for f, v in raw.items()})
    d = FeaturizedDecomposition(LogicalScaffold((("f1", "f2"), ("f3",))), (0.3, 0.5), IDENTITY(raw))
    got = eval_decomposition(d, pairs, store, {f: f for f in raw})
    assert got == [p for p, keep in zip(pairs, expected) if keep]


def test_recall_and_fp_examples():
    labels = np.array([1] * 5 + [0] * 5, bool)
    C = np.array([[0.1, 0.2, 0.3, 0.4, 0.9, 0.1, 0.2, 0.8, 0.8, 0.8]])
    assert recall_and_fp(C, labels, [0.5]) == (0.8, pytest.approx(2 / 6))
    assert recall_and_fp(C, labels, [INF]) == (1.0, 0.5)
    assert recall_and_fp(C, labels, [0.0]) == (0.0, 0.0)


def test_recall_and_fp_against_recount():
    rng = np.random.default_rng(11)
    C = rng.random((2, 30))
    labels = rng.random(30) < 0.4
    th = [0.6, 0.7]
    rec, fp = recall_and_fp(C, labels, th)
    adm = [all(C[i, j] <= th[i] for i in range(2)) for j in range(30)]
    pos = sum(a and y for a, y in zip(adm, labels))
    assert rec == pos / labels.sum()
    assert fp == (sum(adm) - pos) / sum(adm)


def test_admitted_mask_empty_scaffold_admits_all():
    assert admitted_mask(np.zeros((0, 3)), ()).tolist() == [True] * 3


def test_min_cost_single_clause_scan():
    # one clause: scan the positive distances from the ceil(T*P)-th smallest upward
    rng = np.random.default_rng(2)
    for _ in range(50):
        m = int(rng.integers(4, 20))
        labels = rng.random(m) < 0.5
        labels[0] = True
        C = rng.integers(0, 6, size=(1, m)).astype(float)
        T = float(rng.choice([0.5, 0.8, 0.9, 1.0]))
        pos = np.unique(C[0, labels])
        need = math.ceil(T * labels.sum() - 1e-9)
        best = None
        for theta in pos:
            adm = C[0] <= theta
            if (adm & labels).sum() < need:
                continue
            key = ((adm & ~labels).sum() / adm.sum(), adm.sum())
            if best is None or key < best[0]:
                best = (key, theta)
        res = min_cost_threshold(C, labels, T)
        assert res.thresholds == (best[1],)
        assert res.cost == pytest.approx(best[0][0])


def test_min_cost_smallest_feasible_when_negatives_interleave():
    # a negative just above each later positive: the ceil(T*P)-th positive is optimal
    labels = np.array([1, 1, 1, 1, 1, 0, 0, 0, 0], bool)
    C = np.array([[0.5, 0.6, 0.7, 0.8, 0.9, 0.0, 0.75, 0.85, 0.95]])
    res = min_cost_threshold(C, labels, 0.6)
    assert res.thresholds == (0.7,)
    assert res.cost == pytest.approx(1 / 4)


def test_min_cost_two_clauses_matches_naive():
    rng = np.random.default_rng(5)
    for _ in range(30):
        labels = np.r_[np.ones(5, bool), np.zeros(8, bool)]
        C = rng.random((2, 13)).round(2)
        assert min_cost_threshold(C, labels, 0.8) == naive_min_cost_threshold(C, labels, 0.8)


def test_min_cost_split_path_matches_naive():
    rng = np.random.default_rng(6)
    for _ in range(20):
        labels = rng.random(14) < 0.5
        labels[:2] = True
        C = rng.integers(0, 5, size=(3, 14)).astype(float)
        C[rng.random(C.shape) < 0.1] = INF
        exact = naive_min_cost_threshold(C, labels, 0.75)
        assert min_cost_threshold(C, labels, 0.75, cell_limit=3) == exact


def test_min_cost_needs_positive():
    with pytest.raises(DomainError):
        min_cost_threshold(np.zeros((1, 3)), np.zeros(3, bool), 0.9)


def test_max_candidates_thins_grid_but_keeps_recall():
    rng = np.random.default_rng(8)
    labels = rng.random(200) < 0.3
    C = rng.random((2, 200))
    res = min_cost_threshold(C, labels, 0.9, max_candidates=5)
    assert res.recall >= 0.9
    assert res.cost >= min_cost_threshold(C, labels, 0.9).cost


def test_greedy_perfect_separator():
    labels = np.array([1, 1, 1, 0, 0, 0], bool)
    d = {"good": np.array([0.0, 0.1, 0.1, 0.9, 1.0, 0.8]), "noise": np.array([0.5, 0.1, 0.9, 0.2, 0.3, 0.4])}
    sc, trace = greedy_build(list(d), d, labels, 0.9)
    assert sc.clauses == (("good",),)
    assert [t.cost for t in trace] == [0.0]


def test_greedy_gamma_one_gives_empty_scaffold():
    labels = np.array([1, 0, 1, 0], bool)
    d = {"a": np.array([0.0, 1.0, 0.0, 1.0])}
    sc, trace = greedy_build(["a"], d, labels, 0.9, gamma=1.0)
    assert sc.r == 0 and trace == []
    with pytest.raises(DomainError):
        greedy_build([], {}, labels, 0.9)


def test_greedy_costs_strictly_drop_and_respect_cap():
    rng = np.random.default_rng(9)
    for trial in range(15):
        m = 40
        labels = rng.random(m) < 0.4
        labels[0] = True
        d = {f"f{i}": rng.random(m) for i in range(5)}
        for cap in (1, 2, None):
            sc, trace = greedy_build(list(d), d, labels, 0.8, gamma=0.01, r_cap=cap)
            assert sc.r <= (cap if cap is not None else default_clause_cap(0.8))
            costs = [t.cost for t in trace]
            assert all(b < a - 0.01 for a, b in zip(costs, costs[1:]))


def test_clause_matrix_of_empty_scaffold():
    assert clause_matrix(LogicalScaffold(), {}, 4).shape == (0, 4)


def test_threshold_search_handles_all_infinite_positive():
    labels = np.array([1, 1, 0], bool)
    C = np.array([[INF, 0.2, 0.1]])
    res = min_cost_threshold(C, labels, 1.0)
    assert res.thresholds == (INF,)
    res = min_cost_threshold(C, labels, 0.5)
    # admitting everything (FP 1/3) beats stopping at 0.2 (FP 1/2)
    assert res.thresholds == (INF,) and res.admitted_neg == 1


def test_exhaustive_tiny_grid_equivalence():
    # every labeling of 4 pairs with one clause over the values {0, 1}
    for bits in itertools.product([0, 1], repeat=4):
        for lab in itertools.product([False, True], repeat=4):
            labels = np.array(lab)
            if not labels.any():
                continue
            C = np.array([bits], dtype=float)
            assert min_cost_threshold(C, labels, 0.5) == naive_min_cost_threshold(C, labels, 0.5)

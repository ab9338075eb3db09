"""Benchmark runs (FDJ, optimal cascade, all pairs) and their JSON/CSV/PNG reports."""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ..candidates import ScriptedGenerator  # noqa: E402
from ..core import JoinSpec, Pair, RecordSet, precision, recall  # noqa: E402
from ..distances import HashingEmbedder  # noqa: E402
from ..extraction import Featurization, OracleBackend  # noqa: E402
from .baselines import optimal_cascade_baseline  # noqa: E402
from .pipeline import PHASES, PipelineConfig, cost_ratio, fdj_join  # noqa: E402
from .synth import SYNTH_JOIN_PROMPT, SynthConfig, name_overlap_featurization, synth_generate  # noqa: E402

log = logging.getLogger(__name__)

REPORT_VERSION = 1
CSV_FIELDS = ["dataset", "persons", "method", "T", "delta", "seed", "recall", "precision", "cost_ratio",
              *[f"cost_{p}" for p in PHASES], "total_cost", "total_tokens", "refinement_judged_tokens"]


def _safe_precision(result, truth) -> float:
    return precision(result, truth) if result else 1.0


def bench_dataset(name: str, left: RecordSet, right: RecordSet, truth: frozenset[Pair], spec: JoinSpec,
                  config: PipelineConfig, featurizations: Sequence[Featurization], embed_seed: int = 0,
                  extra: dict | None = None) -> list[dict]:
    """One row per method for a single dataset."""
    extra = extra or {}
    common = {"dataset": name, "T": spec.recall_target, "delta": spec.failure_prob, "seed": config.seed,
              **extra}
    client = OracleBackend(truth)
    res = fdj_join(left, right, spec, config, client, ScriptedGenerator([list(featurizations)]))
    judged = sum(r.tokens for r in client.call_log.records if r.phase == "refinement" and r.kind == "judge")
    rows = [{**common, "method": "fdj", "recall": recall(res.pairs, truth),
             "precision": _safe_precision(res.pairs, truth),
             "cost_ratio": cost_ratio(res.ledger, left, right, spec),
             "phase_costs": res.ledger.phase_costs(), "total_cost": res.ledger.total,
             "total_tokens": res.ledger.total_tokens, "refinement_judged_tokens": judged,
             "scaffold": str(res.decomposition.scaffold), "sample_target": res.sample_target}]
    cas = optimal_cascade_baseline(left, right, truth, HashingEmbedder(seed=embed_seed),
                                   spec.recall_target, spec)
    rows.append({**common, "method": "optimal_cascade", "recall": recall(cas.pairs, truth),
                 "precision": _safe_precision(cas.pairs, truth), "cost_ratio": cas.cost_ratio,
                 "phase_costs": {"refinement": float(cas.judge_tokens), "inference": float(cas.embed_tokens)},
                 "total_cost": float(cas.judge_tokens + cas.embed_tokens),
                 "total_tokens": cas.judge_tokens + cas.embed_tokens,
                 "refinement_judged_tokens": cas.judge_tokens})
    rows.append({**common, "method": "all_pairs", "recall": 1.0, "precision": 1.0, "cost_ratio": 1.0,
                 "phase_costs": {}, "total_cost": None, "total_tokens": None,
                 "refinement_judged_tokens": None})
    return rows


def bench_synthetic(persons: Sequence[int], n: int = 200, distractor_level: int = 0, seed: int = 0,
                    target: float = 0.9, delta: float = 0.1,
                    config: PipelineConfig | None = None) -> list[dict]:
    rows = []
    for p in persons:
        L, truth = synth_generate(SynthConfig(n, p, distractor_level, seed))
        spec = JoinSpec(target, 1.0, delta, SYNTH_JOIN_PROMPT)
        cfg = config or PipelineConfig(seed=seed)
        rows += bench_dataset(f"synthetic-n{n}-p{p}", L, L, truth, spec, cfg, [name_overlap_featurization()],
                              embed_seed=seed, extra={"persons": p})
    return rows


def write_report(rows: list[dict], out_dir: str | Path) -> dict[str, Path]:
    """metrics.json, metrics.csv and cost_ratio.png under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / "metrics.json", "csv": out / "metrics.csv", "png": out / "cost_ratio.png"}
    paths["json"].write_text(json.dumps({"version": REPORT_VERSION, "runs": rows}, indent=2, sort_keys=True)
                             + "\n")
    with paths["csv"].open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            flat = dict(row)
            for ph in PHASES:
                flat[f"cost_{ph}"] = row.get("phase_costs", {}).get(ph, 0.0)
            flat.setdefault("persons", "")
            w.writerow(flat)
    _plot(rows, paths["png"])
    return paths


def _plot(rows: list[dict], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    methods = list(dict.fromkeys(r["method"] for r in rows))
    have_persons = all("persons" in r for r in rows)
    for m in methods:
        sel = [r for r in rows if r["method"] == m]
        if have_persons:
            ax.plot([r["persons"] for r in sel], [r["cost_ratio"] for r in sel], marker="o", label=m)
        else:
            ax.bar([m], [sel[0]["cost_ratio"]], label=m)
    if have_persons:
        ax.set_xlabel("persons per sentence")
    ax.set_ylabel("cost ratio")
    ax.set_ylim(bottom=0)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)

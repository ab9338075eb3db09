"""Command-line entry point: join, adjtarget, synth, bench, validate-guarantee.

Exit codes: 0 success, 2 usage, 3 guarantee infeasible, 4 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .candidates import CandidateGenConfig, LlmGenerator, PromptPack, ScriptedGenerator
from .core import (DEFAULT_JOIN_PROMPT, ConfigError, DataError, DomainError, GuaranteeInfeasible, JoinSpec,
                   RecordSet, load_truth, precision, recall, save_pairs)
from .extraction import HttpClient, OracleBackend, load_featurizations
from .guarantees import AdjTargetQuery, AdjTargetTable, adj_target

log = logging.getLogger("fdjoin")

EXIT_USAGE, EXIT_INFEASIBLE, EXIT_DATA = 2, 3, 4


def _dump(obj, path: str | Path | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _inf_safe(x):
    return "inf" if isinstance(x, float) and math.isinf(x) else x


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _pipeline_config(args):
    from .engine.pipeline import PipelineConfig

    raw = {}
    if getattr(args, "config", None):
        p = Path(args.config)
        if not p.exists():
            raise DataError(f"config file not found: {p}")
        raw = json.loads(p.read_text())
    raw.pop("join_prompt", None)
    cfg = PipelineConfig.from_dict(raw)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.candidates = CandidateGenConfig(cfg.candidates.max_iter, cfg.candidates.beta,
                                            cfg.candidates.alpha, args.seed)
    if args.k_gen is not None:
        cfg.k_positive_gen = args.k_gen
    if args.k_thresh is not None:
        cfg.k_positive_thresh = args.k_thresh
    if getattr(args, "mc_trials", None) is not None:
        cfg.mc_trials = args.mc_trials
    return cfg, raw


def cmd_join(args) -> int:
    from .engine.pipeline import cost_ratio, fdj_join

    cfg, _ = _pipeline_config(args)
    prompt = DEFAULT_JOIN_PROMPT
    if args.config:
        prompt = json.loads(Path(args.config).read_text()).get("join_prompt", prompt)
    if args.join_prompt:
        prompt = args.join_prompt
    spec = JoinSpec(args.recall_target, args.precision_target, args.delta, prompt)
    left = RecordSet.from_jsonl(args.left, "left")
    right = RecordSet.from_jsonl(args.right, "right") if args.right else left
    truth = load_truth(args.truth) if args.truth else None
    if args.client == "oracle":
        if truth is None:
            raise ConfigError("the oracle client needs --truth")
        client = OracleBackend(truth)
    else:
        client = HttpClient()
    if args.featurizations:
        generator = ScriptedGenerator([load_featurizations(args.featurizations)])
    else:
        pack = PromptPack.from_dir(args.prompts) if args.prompts else PromptPack()
        generator = LlmGenerator(client, pack)
    res = fdj_join(left, right, spec, cfg, client, generator)
    if args.out:
        save_pairs(res.pairs, args.out)
    if args.decomposition:
        res.decomposition.save(args.decomposition)
    report = {
        "version": 1, "pairs": len(res.pairs), "candidates": res.candidates, "pre_accepted": res.pre_accepted,
        "scaffold": str(res.decomposition.scaffold), "thresholds": [_inf_safe(t) for t in res.decomposition.thresholds],
        "sample_target": _inf_safe(res.sample_target), "phase_costs": res.ledger.phase_costs(),
        "total_cost": res.ledger.total, "cost_ratio": cost_ratio(res.ledger, left, right, spec),
        "T": spec.recall_target, "T_P": spec.precision_target, "delta": spec.failure_prob, "seed": cfg.seed,
        "featurizations": [p.id for p in res.featurizations], "diagnostics": res.diagnostics,
    }
    if truth:
        report["recall"] = recall(res.pairs, truth)
        report["precision"] = precision(res.pairs, truth) if res.pairs else 1.0
    _dump(report, args.report)
    return 0


def cmd_adjtarget(args) -> int:
    q = AdjTargetQuery(args.k_plus, args.r, args.target, args.delta, args.n_lo, args.n_hi,
                       n_trials=args.trials, seed=args.seed, construction=args.construction,
                       evaluator=args.evaluator)
    if args.table:
        tp = AdjTargetTable(args.table).resolve(q)
        _dump({"T_prime": _inf_safe(tp)}, None)
    else:
        res = adj_target(q)
        _dump({"T_prime": _inf_safe(res.sample_target), "worst_bound": res.worst_bound,
               "points": list(res.points), "N": res.n_trials}, None)
    return 0


def cmd_synth(args) -> int:
    from .engine.synth import SynthConfig, synth_generate

    L, truth = synth_generate(SynthConfig(args.n, args.persons, args.distractor_level, args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    L.to_jsonl(out / "records.jsonl")
    save_pairs(truth, out / "truth.jsonl")
    log.info("wrote %d records and %d truth pairs to %s", len(L), len(truth), out)
    return 0


def cmd_bench(args) -> int:
    from .engine.report import bench_dataset, bench_synthetic, write_report

    cfg, raw = _pipeline_config(args)
    if args.left:
        if not (args.truth and args.featurizations):
            raise ConfigError("bench on a dataset needs --truth and --featurizations")
        left = RecordSet.from_jsonl(args.left, "left")
        right = RecordSet.from_jsonl(args.right, "right") if args.right else left
        prompt = args.join_prompt or DEFAULT_JOIN_PROMPT
        spec = JoinSpec(args.recall_target, 1.0, args.delta, prompt)
        rows = bench_dataset(Path(args.left).stem, left, right, load_truth(args.truth), spec, cfg,
                             load_featurizations(args.featurizations), embed_seed=cfg.seed)
    else:
        rows = bench_synthetic(args.persons, n=args.n, distractor_level=args.distractor_level,
                               seed=cfg.seed, target=args.recall_target, delta=args.delta, config=cfg)
    paths = write_report(rows, args.out)
    log.info("report written: %s", ", ".join(str(p) for p in paths.values()))
    return 0


def cmd_validate(args) -> int:
    from .engine.validation import guarantee_trials

    s = guarantee_trials(args.n_pos, args.n_neg, args.r, args.target, args.delta, args.k_plus, args.trials,
                         args.seed, args.construction, args.mc_trials)
    _dump({"trials": s.trials, "failures": s.failures, "infeasible": s.infeasible,
           "failure_rate": s.failure_rate, "delta": args.delta, "T": args.target, "r": args.r,
           "k_plus": args.k_plus, "min_recall": min(s.recalls) if s.recalls else None}, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fdjoin", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def pipeline_flags(p):
        p.add_argument("--config", help="JSON file of pipeline settings")
        p.add_argument("--seed", type=int)
        p.add_argument("--k-gen", type=int, help="positives in the generation sample")
        p.add_argument("--k-thresh", type=int, help="positives in the threshold sample")
        p.add_argument("--mc-trials", type=int)
        p.add_argument("--recall-target", type=float, default=0.9)
        p.add_argument("--delta", type=float, default=0.1)
        p.add_argument("--join-prompt")

    p = sub.add_parser("join", help="run the featurized-decomposition join")
    pipeline_flags(p)
    p.add_argument("--left", required=True)
    p.add_argument("--right", help="defaults to --left (self-join)")
    p.add_argument("--truth", help="ground-truth pairs (required by the oracle client)")
    p.add_argument("--precision-target", type=float, default=1.0)
    p.add_argument("--client", choices=["oracle", "http"], default="oracle")
    p.add_argument("--featurizations", help="JSON featurization specs (skips LLM generation)")
    p.add_argument("--prompts", help="directory of prompt templates")
    p.add_argument("--out", help="write confirmed pairs here (JSON Lines)")
    p.add_argument("--report", help="write the run report here (stdout otherwise)")
    p.add_argument("--decomposition", help="write the decomposition here")
    p.set_defaults(func=cmd_join)

    p = sub.add_parser("adjtarget", help="compute (and cache) an adjusted recall target")
    p.add_argument("--k-plus", type=int, required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--n-lo", type=float, required=True, help="lower bound on the number of positives")
    p.add_argument("--n-hi", type=float, required=True)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--construction", choices=["tight", "short", "uniform"], default="tight")
    p.add_argument("--evaluator", choices=["mc", "exact"], default="mc")
    p.add_argument("--table", help="JSON cache table to read/extend")
    p.set_defaults(func=cmd_adjtarget)

    p = sub.add_parser("synth", help="generate the synthetic movie corpus")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--persons", type=int, default=1)
    p.add_argument("--distractor-level", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="compare FDJ, the optimal cascade and all-pairs judging")
    pipeline_flags(p)
    p.add_argument("--left")
    p.add_argument("--right")
    p.add_argument("--truth")
    p.add_argument("--featurizations")
    p.add_argument("--persons", type=_int_list, default=[1, 3, 5])
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--distractor-level", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("validate-guarantee", help="repeated-trial recall failure experiment")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--k-plus", type=int, default=30)
    p.add_argument("--r", type=int, default=1)
    p.add_argument("--target", type=float, default=0.9)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--n-pos", type=int, default=500)
    p.add_argument("--n-neg", type=int, default=4500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--construction", choices=["tight", "short", "uniform"], default="tight")
    p.add_argument("--mc-trials", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GuaranteeInfeasible as exc:
        log.error("%s", exc)
        return EXIT_INFEASIBLE
    except DataError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except (DomainError, ConfigError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())

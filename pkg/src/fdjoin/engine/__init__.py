"""Pipeline, baselines, synthetic data and benchmark reporting."""
from .baselines import CascadeResult, optimal_cascade_baseline
from .pipeline import (PHASES, CostLedger, JoinResult, PipelineConfig, all_pairs_tokens, cost_ratio,
                       evaluate_universe, fdj_join, refine)
from .synth import (SYNTH_JOIN_PROMPT, SynthConfig, name_overlap_featurization, synth_generate,
                    title_overlap_featurization)
from .validation import adversarial_population, guarantee_trials

__all__ = [
    "CascadeResult", "optimal_cascade_baseline", "PHASES", "CostLedger", "JoinResult", "PipelineConfig",
    "all_pairs_tokens", "cost_ratio", "evaluate_universe", "fdj_join", "refine", "SYNTH_JOIN_PROMPT",
    "SynthConfig", "name_overlap_featurization", "synth_generate", "title_overlap_featurization",
    "adversarial_population", "guarantee_trials",
]

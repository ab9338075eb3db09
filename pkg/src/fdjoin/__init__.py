"""Approximate LLM-judged joins driven by cheap featurized CNF filters with a recall guarantee."""
from .core import (ConfigError, DataError, DomainError, GuaranteeInfeasible, JoinSpec, LabeledSample,
                   PairSampler, Record, RecordSet, StateError, precision, recall, sample_uniform_pairs,
                   split_pos_neg)
from .distances import DistanceKind, HashingEmbedder, distance, min_max_normalize
from .extraction import (CodeExtractor, Featurization, FeatureStore, HttpClient, LlmExtractor,
                         OracleBackend, ScriptedClient, extract_all, judge_pair)
from .scaffold import (FeaturizedDecomposition, LogicalScaffold, eval_decomposition, greedy_build,
                       min_cost_threshold)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "DomainError", "GuaranteeInfeasible", "JoinSpec", "LabeledSample",
    "PairSampler", "Record", "RecordSet", "StateError", "precision", "recall", "sample_uniform_pairs",
    "split_pos_neg", "DistanceKind", "HashingEmbedder", "distance", "min_max_normalize", "CodeExtractor",
    "Featurization", "FeatureStore", "HttpClient", "LlmExtractor", "OracleBackend", "ScriptedClient",
    "extract_all", "judge_pair", "FeaturizedDecomposition", "LogicalScaffold", "eval_decomposition",
    "greedy_build", "min_cost_threshold",
]

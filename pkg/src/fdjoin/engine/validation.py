"""Repeated-trial check of the recall guarantee on adversarial distance populations."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..core import GuaranteeInfeasible
from ..guarantees import select_guaranteed_thresholds, worst_case_dataset
from ..scaffold import admitted_mask

log = logging.getLogger(__name__)


def adversarial_population(n_pos: int, n_neg: int, r: int, target: float, seed: int = 0,
                           construction: str = "tight") -> tuple[np.ndarray, np.ndarray]:
    """Clause distances (r, n) with one-hot worst-case positives and uniform negatives.

    Positive axis values 1..u are scaled into (0, 1]; negatives are uniform on
    [0, 1]^r, so the cheapest thresholds sit as low as the sample allows.
    """
    D = worst_case_dataset(n_pos, r, target, construction)
    pos = D.rows.T / D.u
    rng = np.random.default_rng(seed)
    neg = rng.random((r, n_neg))
    C = np.hstack([pos, neg])
    labels = np.r_[np.ones(n_pos, dtype=bool), np.zeros(n_neg, dtype=bool)]
    return C, labels


@dataclass
class TrialSummary:
    trials: int
    failures: int
    infeasible: int
    recalls: list[float]

    @property
    def failure_rate(self) -> float:
        return self.failures / self.trials


def guarantee_trials(n_pos: int = 500, n_neg: int = 4500, r: int = 1, target: float = 0.9,
                     delta: float = 0.1, k_plus: int = 30, trials: int = 200, seed: int = 0,
                     construction: str = "tight", n_trials_mc: int | None = None) -> TrialSummary:
    """Draw until k_plus positives, certify thresholds, and count runs whose true recall < target.

    A run where no adjusted target exists counts as infeasible, not as a failure.
    """
    C, labels = adversarial_population(n_pos, n_neg, r, target, seed, construction)
    n = C.shape[1]
    failures = infeasible = 0
    recalls = []
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        order = rng.permutation(n)
        hits = np.cumsum(labels[order])
        stop = int(np.searchsorted(hits, k_plus)) + 1
        idx = order[:stop]
        try:
            got = select_guaranteed_thresholds(C[:, idx], labels[idx], target, delta, n, seed=seed,
                                               construction=construction, n_trials=n_trials_mc)
        except GuaranteeInfeasible:
            infeasible += 1
            continue
        rec = float(admitted_mask(C[:, labels], got.thresholds).mean())
        recalls.append(rec)
        failures += rec < target
    return TrialSummary(trials, failures, infeasible, recalls)

"""Confidence measures for attribute estimates and confident-subset selection.

Every score is oriented so that larger means more confident.
"""
from __future__ import annotations

import math
from typing import Hashable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import xlogy

from .estimator import EstimatorModel, mc_dropout_moments
from .exceptions import LengthMismatch, MixedMeasures, ZeroVector

MEASURES = ("sigmoid", "entropy", "mc_dropout", "oracle", "random")


class ConfidenceScore(NamedTuple):
    value: float
    measure: str


def sigmoid_confidence(a_hat) -> np.ndarray | float:
    """Sum of the estimates that exceed 0.5 (per row for 2-D input)."""
    a = np.asarray(a_hat, dtype=np.float64)
    return np.where(a > 0.5, a, 0.0).sum(axis=-1)


def entropy_confidence(a_hat) -> np.ndarray | float:
    """Negative joint Bernoulli entropy (nats), assuming independent attributes."""
    a = np.asarray(a_hat, dtype=np.float64)
    # xlogy gives 0 ln 0 = 0, so exact binary entries contribute nothing
    return (xlogy(a, a) + xlogy(1.0 - a, 1.0 - a)).sum(axis=-1)


def oracle_confidence(a_hat, truth) -> np.ndarray | float:
    """Negative cosine dissimilarity to the true PHOC; needs labels."""
    a = np.asarray(a_hat, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if a.shape != t.shape:
        raise LengthMismatch(f"shape {a.shape} != {t.shape}")
    na = np.linalg.norm(a, axis=-1)
    nt = np.linalg.norm(t, axis=-1)
    if np.any(na == 0) or np.any(nt == 0):
        raise ZeroVector("oracle confidence undefined for a zero vector")
    return (a * t).sum(axis=-1) / (na * nt) - 1.0


def mc_dropout_confidence(model: EstimatorModel, images, passes: int = 100,
                          rng: Optional[np.random.Generator] = None) -> np.ndarray | float:
    """Negative mean per-attribute sample variance over stochastic dropout passes."""
    rng = rng if rng is not None else np.random.default_rng(0)
    single = np.asarray(images).ndim == 2
    _, var = mc_dropout_moments(model, images, passes, rng)
    score = -var.mean(axis=-1)
    return float(score[0]) if single else score


def conf_sigmoid(a_hat) -> ConfidenceScore:
    return ConfidenceScore(float(sigmoid_confidence(a_hat)), "sigmoid")


def conf_entropy(a_hat) -> ConfidenceScore:
    return ConfidenceScore(float(entropy_confidence(a_hat)), "entropy")


def conf_oracle(a_hat, truth) -> ConfidenceScore:
    return ConfidenceScore(float(oracle_confidence(a_hat, truth)), "oracle")


def conf_mc_dropout(model: EstimatorModel, image, passes: int = 100,
                    rng: Optional[np.random.Generator] = None) -> ConfidenceScore:
    return ConfidenceScore(float(mc_dropout_confidence(model, image, passes, rng)), "mc_dropout")


def top_fraction_indices(scores, fraction: float) -> np.ndarray:
    """Indices of the ceil(fraction * n) best scores, best first, ties by index."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    scores = np.asarray(scores, dtype=np.float64)
    j = math.ceil(round(fraction * len(scores), 9))
    order = np.lexsort((np.arange(len(scores)), -scores))
    return order[:j]


def select_top_fraction(items: Sequence[tuple[Hashable, ConfidenceScore]], fraction: float) -> list:
    """Ids of the most confident ``fraction`` of ``items``, most confident first.

    Ties are broken by ascending id. All scores must come from one measure.
    """
    measures = {score.measure for _, score in items}
    if len(measures) > 1:
        raise MixedMeasures(f"scores from several measures: {sorted(measures)}")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    ranked = sorted(items, key=lambda it: (-it[1].value, it[0]))
    j = math.ceil(round(fraction * len(items), 9))
    return [i for i, _ in ranked[:j]]

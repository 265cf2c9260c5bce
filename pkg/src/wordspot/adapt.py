"""Confidence-gated self-training on an unlabeled target corpus.

Each cycle estimates attributes for every unlabeled image, keeps the most
confident fraction, labels it with the nearest lexicon entry, balances and
augments the pseudo-labeled set and trains on it. Pseudo-labels from earlier
cycles are discarded.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .confidence import (MEASURES, entropy_confidence, mc_dropout_confidence, oracle_confidence,
                         sigmoid_confidence, top_fraction_indices)
from .corpus import AffineBounds, balance_and_augment
from .estimator import AdamState, EstimatorModel, TrainSchedule, forward, save_model, train
from .exceptions import EmptyCorpus, EmptyLexicon
from .phoc import canonicalize, phoc_matrix
from .spotting import Lexicon, evaluate_map, recognize_batch

logger = logging.getLogger(__name__)


@dataclass
class AdaptSchedule:
    cycles: int = 20
    fraction_early: float = 0.10
    fraction_late: float = 0.60
    switch_cycle: int = 10
    augmented_size: int = 10000
    lr: float = 1e-5
    epochs: int = 1
    batch_size: int = 10
    weight_decay: float = 5e-5
    measure: str = "sigmoid"
    mc_passes: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.cycles < 1:
            raise ValueError("cycles must be >= 1")
        for name in ("fraction_early", "fraction_late"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.measure not in MEASURES:
            raise ValueError(f"measure must be one of {MEASURES}")
        if self.augmented_size < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("augmented_size, epochs and batch_size must be positive")

    def fraction(self, cycle_index: int) -> float:
        """Selection fraction for the zero-based ``cycle_index``."""
        return self.fraction_early if cycle_index < self.switch_cycle else self.fraction_late


@dataclass
class CycleReport:
    cycle: int
    selected: int
    fraction: float
    mean_confidence: float
    distinct_labels: int
    losses: list = field(default_factory=list)
    pseudo_label_accuracy: Optional[float] = None
    map_qbs: Optional[float] = None
    map_qbe: Optional[float] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class PseudoLabeledSet:
    indices: np.ndarray
    attributes: np.ndarray
    confidences: np.ndarray
    labels: list[str]
    targets: np.ndarray


def _cycle_rngs(seed: int, cycle_index: int):
    ss = np.random.SeedSequence([seed, cycle_index])
    score_ss, aug_ss, train_ss = ss.spawn(3)
    return (np.random.default_rng(score_ss), np.random.default_rng(aug_ss),
            int(train_ss.generate_state(1)[0]))


def confidence_scores(measure: str, model: EstimatorModel, images: np.ndarray, attributes: np.ndarray,
                      rng: np.random.Generator, mc_passes: int = 100,
                      truth: Optional[np.ndarray] = None) -> np.ndarray:
    if measure == "sigmoid":
        return sigmoid_confidence(attributes)
    if measure == "entropy":
        return entropy_confidence(attributes)
    if measure == "mc_dropout":
        return mc_dropout_confidence(model, images, mc_passes, rng)
    if measure == "random":
        return rng.random(len(attributes))
    if measure == "oracle":
        if truth is None:
            raise ValueError("the oracle measure needs ground-truth PHOCs")
        return oracle_confidence(attributes, truth)
    raise ValueError(f"unknown measure {measure!r}")


def pseudo_label(model: EstimatorModel, images: np.ndarray, lexicon: Lexicon, schedule: AdaptSchedule,
                 cycle_index: int, rng: np.random.Generator,
                 truth_phocs: Optional[np.ndarray] = None) -> PseudoLabeledSet:
    """Estimate, score, select and label the confident part of ``images``."""
    attributes = forward(model, images)
    scores = confidence_scores(schedule.measure, model, images, attributes, rng,
                               schedule.mc_passes, truth_phocs)
    chosen = top_fraction_indices(scores, schedule.fraction(cycle_index))
    lex_idx, _ = recognize_batch(attributes[chosen], lexicon)
    labels = [lexicon.words[i] for i in lex_idx]
    # targets are the lexicon PHOCs, never the estimates
    return PseudoLabeledSet(chosen, attributes[chosen], scores[chosen], labels, lexicon.phocs[lex_idx])


def run_cycle(model: EstimatorModel, unlabeled, lexicon: Lexicon, schedule: AdaptSchedule,
              cycle_index: int, truth: Optional[Sequence[str]] = None,
              bounds: AffineBounds = AffineBounds()) -> tuple[EstimatorModel, CycleReport]:
    """One self-training cycle; ``model`` is updated in place and returned.

    ``truth`` (canonical transcriptions of ``unlabeled``) is only read by the
    oracle measure and for the pseudo-label accuracy diagnostic.
    """
    images = np.asarray(unlabeled)
    if len(images) == 0:
        raise EmptyCorpus("no unlabeled images")
    if len(lexicon) == 0:
        raise EmptyLexicon("lexicon is empty")
    score_rng, aug_rng, train_seed = _cycle_rngs(schedule.seed, cycle_index)
    truth_phocs = None
    if schedule.measure == "oracle":
        if truth is None:
            raise ValueError("the oracle measure needs ground-truth transcriptions")
        truth_phocs = phoc_matrix(truth, model.phoc_config)
    pls = pseudo_label(model, images, lexicon, schedule, cycle_index, score_rng, truth_phocs)
    samples = [(images[i], lab) for i, lab in zip(pls.indices, pls.labels)]
    size = max(schedule.augmented_size, len(set(pls.labels)))
    augmented = balance_and_augment(samples, size, aug_rng, bounds)
    x = np.stack([img for img, _ in augmented])
    y = np.stack([lexicon.phocs[lexicon.index(lab)] for _, lab in augmented]).astype(np.float32)
    tsched = TrainSchedule.epochs(len(x), schedule.epochs, schedule.lr, schedule.batch_size,
                                  schedule.weight_decay, train_seed)
    _, losses = train(model, x, y, tsched, AdamState(weight_decay=schedule.weight_decay))
    accuracy = None
    if truth is not None:
        accuracy = float(np.mean([pls.labels[k] == canonicalize(truth[i])
                                  for k, i in enumerate(pls.indices)]))
    report = CycleReport(
        cycle=cycle_index + 1,
        selected=len(pls.indices),
        fraction=schedule.fraction(cycle_index),
        mean_confidence=float(np.mean(pls.confidences)),
        distinct_labels=len(set(pls.labels)),
        losses=[float(l) for l in losses],
        pseudo_label_accuracy=accuracy,
    )
    return model, report


def adapt(model: EstimatorModel, unlabeled, lexicon: Lexicon, schedule: AdaptSchedule,
          truth: Optional[Sequence[str]] = None, diagnostics: Optional[tuple] = None,
          log_path=None, checkpoint_dir=None,
          callback: Optional[Callable[[CycleReport], None]] = None) -> tuple[EstimatorModel, list[CycleReport]]:
    """Run ``schedule.cycles`` self-training cycles.

    ``diagnostics`` is an optional labeled ``(images, transcriptions)`` pair;
    QbS and QbE mAP on it are recorded after every cycle. Reports are appended
    as JSON lines to ``log_path`` and checkpoints written as
    ``cycle_<k>.wsaf`` to ``checkpoint_dir`` when given.
    """
    reports = []
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    for k in range(schedule.cycles):
        model, report = run_cycle(model, unlabeled, lexicon, schedule, k, truth)
        if diagnostics is not None:
            d_images, d_text = diagnostics
            gallery = forward(model, d_images)
            report.map_qbs = evaluate_map("qbs", gallery, d_text, model.phoc_config).mAP
            report.map_qbe = evaluate_map("qbe", gallery, d_text, model.phoc_config).mAP
        logger.info("cycle %d: selected %d, %d labels, acc %s, qbs %s", k + 1, report.selected,
                    report.distinct_labels, report.pseudo_label_accuracy, report.map_qbs)
        if log_path is not None:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(report.to_json() + "\n")
        if checkpoint_dir is not None:
            save_model(model, Path(checkpoint_dir) / f"cycle_{k + 1}.wsaf")
        if callback is not None:
            callback(report)
        reports.append(report)
    return model, reports

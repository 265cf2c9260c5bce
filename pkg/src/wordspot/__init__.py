"""Annotation-free word spotting with PHOC attribute embeddings.

Core pieces: PHOC encoding (:mod:`wordspot.phoc`), a small numpy attribute CNN
(:mod:`wordspot.estimator`), confidence measures, cosine-based spotting and
recognition, and confidence-gated self-training on unlabeled target images
(:mod:`wordspot.adapt`).
"""
from .adapt import AdaptSchedule, CycleReport, adapt, run_cycle
from .confidence import (conf_entropy, conf_mc_dropout, conf_oracle, conf_sigmoid,
                         select_top_fraction)
from .estimator import EstimatorModel, TrainSchedule, forward, init_model, load_model, save_model, train
from .models import AttributeEstimator, SelfTrainingAdapter
from .phoc import PhocConfig, PhocEncoder, phoc_of_string
from .spotting import Lexicon, average_precision, d_cos, evaluate_map, load_lexicon, recognize

__version__ = "0.1.0"

__all__ = [
    "AdaptSchedule", "CycleReport", "adapt", "run_cycle",
    "conf_entropy", "conf_mc_dropout", "conf_oracle", "conf_sigmoid", "select_top_fraction",
    "EstimatorModel", "TrainSchedule", "forward", "init_model", "load_model", "save_model", "train",
    "AttributeEstimator", "SelfTrainingAdapter",
    "PhocConfig", "PhocEncoder", "phoc_of_string",
    "Lexicon", "average_precision", "d_cos", "evaluate_map", "load_lexicon", "recognize",
]

"""scikit-learn style wrappers around the attribute CNN and self-training."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .adapt import AdaptSchedule, adapt
from .estimator import (AdamState, EstimatorModel, TrainSchedule, default_architecture, forward,
                        init_model, train)
from .phoc import Alphabet, PhocConfig, phoc_matrix
from .spotting import Lexicon, evaluate_map, load_lexicon, recognize_batch
from .validation import check_fraction, check_images, check_words


class AttributeEstimator(TransformerMixin, BaseEstimator):
    """Attribute CNN mapping word images to PHOC estimates.

    ``transform`` returns the sigmoid attribute estimates, ``predict``
    recognizes words by nearest lexicon entry and ``score`` is QbS mAP.

    Parameters
    ----------
    segments : sequence of (int, float)
        Training iterations and learning rate of each stage.
    batch_size : int
    weight_decay : float
    dropout : float
        Dropout probability of the hidden fully connected layer.
    levels : sequence of int
        PHOC pyramid levels.
    alphabet : str
        PHOC alphabet.
    lexicon : sequence of str, optional
        Recognition vocabulary used by ``predict``.
    warm_start : bool
        Continue from the current weights (and optimizer state) on refit.
    random_state : int
        Seed for initialization, shuffling and dropout.
    """

    def __init__(self, segments=((4000, 1e-4), (500, 1e-5)), batch_size: int = 10,
                 weight_decay: float = 5e-5, dropout: float = 0.5, levels=(1, 2, 4, 8),
                 alphabet: str = "abcdefghijklmnopqrstuvwxyz0123456789",
                 lexicon: Optional[Sequence[str]] = None, warm_start: bool = False,
                 random_state: int = 0):
        self.segments = segments
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.dropout = dropout
        self.levels = levels
        self.alphabet = alphabet
        self.lexicon = lexicon
        self.warm_start = warm_start
        self.random_state = random_state

    def _phoc_config(self) -> PhocConfig:
        return PhocConfig(tuple(self.levels), Alphabet(self.alphabet))

    @classmethod
    def from_model(cls, model: EstimatorModel, **params) -> "AttributeEstimator":
        """Wrap an already trained model."""
        cfg = model.phoc_config
        est = cls(levels=cfg.levels, alphabet=cfg.alphabet.symbols, dropout=model.dropout, **params)
        est.model_ = model
        est.loss_curve_ = []
        est._optimizer = None
        return est

    def fit(self, X, y):
        """Train on images ``X`` with transcriptions ``y``."""
        config = self._phoc_config()
        X = check_images(X)
        words = check_words(y, len(X), config.alphabet)
        if not (self.warm_start and hasattr(self, "model_")):
            arch = default_architecture(config.dim, self.dropout)
            self.model_ = init_model(arch, seed=self.random_state, phoc_config=config,
                                     geometry=X.shape[1:])
            self._optimizer = None
            self.loss_curve_ = []
        if self._optimizer is None:
            self._optimizer = AdamState(weight_decay=self.weight_decay)
        schedule = TrainSchedule([tuple(s) for s in self.segments], self.batch_size,
                                 self.weight_decay, self.random_state + len(self.loss_curve_))
        _, trace = train(self.model_, X, phoc_matrix(words, config).astype(np.float32),
                         schedule, self._optimizer)
        self.loss_curve_ = self.loss_curve_ + list(trace)
        self.n_features_out_ = config.dim
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return forward(self.model_, check_images(X, self.model_.geometry))

    def _lexicon(self) -> Lexicon:
        if self.lexicon is None:
            raise ValueError("predict needs a lexicon")
        if isinstance(self.lexicon, Lexicon):
            return self.lexicon
        return load_lexicon(self.lexicon, self.model_.phoc_config)

    def predict(self, X) -> np.ndarray:
        """Nearest lexicon word for every image."""
        lex = self._lexicon()
        idx, _ = recognize_batch(self.transform(X), lex)
        return np.array([lex.words[i] for i in idx], dtype=object)

    def score(self, X, y) -> float:
        """QbS mAP of the images ``X`` with transcriptions ``y``."""
        gallery = self.transform(X)
        words = check_words(y, len(gallery), self.model_.phoc_config.alphabet)
        return evaluate_map("qbs", gallery, words, self.model_.phoc_config).mAP


class SelfTrainingAdapter(TransformerMixin, BaseEstimator):
    """Adapts a fitted ``AttributeEstimator`` to unlabeled images.

    ``fit(X)`` runs confidence-gated self-training on ``X`` with the given
    lexicon; labels passed as ``y`` are only used by the oracle measure and
    for the pseudo-label accuracy diagnostic.

    Parameters
    ----------
    estimator : AttributeEstimator
        Fitted starting point; it is not modified.
    lexicon : sequence of str
    measure : {"sigmoid", "entropy", "mc_dropout", "oracle", "random"}
    cycles, switch_cycle : int
    fraction_early, fraction_late : float
    augmented_size : int
    learning_rate : float
    mc_passes : int
    random_state : int
    """

    def __init__(self, estimator: AttributeEstimator, lexicon: Sequence[str] = (), measure: str = "sigmoid",
                 cycles: int = 20, switch_cycle: int = 10, fraction_early: float = 0.10,
                 fraction_late: float = 0.60, augmented_size: int = 10000, learning_rate: float = 1e-5,
                 mc_passes: int = 100, random_state: int = 0):
        self.estimator = estimator
        self.lexicon = lexicon
        self.measure = measure
        self.cycles = cycles
        self.switch_cycle = switch_cycle
        self.fraction_early = fraction_early
        self.fraction_late = fraction_late
        self.augmented_size = augmented_size
        self.learning_rate = learning_rate
        self.mc_passes = mc_passes
        self.random_state = random_state

    def fit(self, X, y=None):
        check_is_fitted(self.estimator, "model_")
        check_fraction(self.fraction_early, "fraction_early")
        check_fraction(self.fraction_late, "fraction_late")
        base = self.estimator.model_
        X = check_images(X, base.geometry)
        truth = None if y is None else check_words(y, len(X), base.phoc_config.alphabet, allow_empty=True)
        lexicon = self.lexicon if isinstance(self.lexicon, Lexicon) else load_lexicon(self.lexicon,
                                                                                      base.phoc_config)
        schedule = AdaptSchedule(cycles=self.cycles, fraction_early=self.fraction_early,
                                 fraction_late=self.fraction_late, switch_cycle=self.switch_cycle,
                                 augmented_size=self.augmented_size, lr=self.learning_rate,
                                 batch_size=self.estimator.batch_size,
                                 weight_decay=self.estimator.weight_decay, measure=self.measure,
                                 mc_passes=self.mc_passes, seed=self.random_state)
        self.model_, self.reports_ = adapt(base.copy(), X, lexicon, schedule, truth=truth)
        self.n_features_out_ = self.model_.output_dim
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return forward(self.model_, check_images(X, self.model_.geometry))

    @property
    def adapted_estimator_(self) -> AttributeEstimator:
        """The adapted model wrapped as an ``AttributeEstimator``."""
        check_is_fitted(self, "model_")
        return AttributeEstimator.from_model(self.model_, lexicon=self.estimator.lexicon,
                                             batch_size=self.estimator.batch_size,
                                             weight_decay=self.estimator.weight_decay)

"""Two-style synthetic adaptation benchmark.

A model is trained on printed-glyph style A renderings of frequent English
words and adapted to an unlabeled style B corpus (rounded glyphs, heavier
slant and noise). The lexicon is the most frequent English words; a fraction
of the target vocabulary lies outside it. Everything is derived from one seed.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .adapt import AdaptSchedule, CycleReport, adapt
from .corpus import normalize
from .estimator import EstimatorModel, TrainSchedule, forward, init_model, train
from .phoc import PhocConfig, phoc_matrix
from .spotting import Lexicon, english_words, evaluate_map, load_lexicon
from .synth import STYLE_A, STYLE_B, StyleFamily, render_words


@dataclass(frozen=True)
class BenchmarkConfig:
    lexicon_size: int = 1000
    source_images: int = 2000
    target_types: int = 250
    oov_fraction: float = 0.10
    oov_pool: int = 5000
    zipf_exponent: float = 0.6
    unlabeled_images: int = 1000
    test_images: int = 500
    source_style: StyleFamily = STYLE_A
    target_style: StyleFamily = STYLE_B
    init_segments: tuple = ((4000, 1e-3), (500, 1e-4))
    batch_size: int = 10
    weight_decay: float = 5e-5
    cycles: int = 8
    switch_cycle: int = 4
    fraction_early: float = 0.10
    fraction_late: float = 0.60
    augmented_size: int = 2000
    adapt_lr: float = 1e-5
    mc_passes: int = 20

    def schedule(self, measure: str, seed: int) -> AdaptSchedule:
        return AdaptSchedule(cycles=self.cycles, fraction_early=self.fraction_early,
                             fraction_late=self.fraction_late, switch_cycle=self.switch_cycle,
                             augmented_size=self.augmented_size, lr=self.adapt_lr,
                             batch_size=self.batch_size, weight_decay=self.weight_decay,
                             measure=measure, mc_passes=self.mc_passes, seed=seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["source_style"] = self.source_style.to_dict()
        d["target_style"] = self.target_style.to_dict()
        return d


@dataclass
class Benchmark:
    config: BenchmarkConfig
    seed: int
    lexicon: Lexicon
    source_images: np.ndarray
    source_words: list[str]
    unlabeled_images: np.ndarray
    unlabeled_words: list[str]
    test_images: np.ndarray
    test_words: list[str]
    oov_types: list[str] = field(default_factory=list)

    @property
    def oov_rate(self) -> float:
        """Fraction of unlabeled tokens whose word is missing from the lexicon."""
        return float(np.mean([w not in self.lexicon for w in self.unlabeled_words]))


def _render(words: Sequence[str], style: StyleFamily, rng: np.random.Generator) -> np.ndarray:
    return np.stack([normalize(img) for img in render_words(words, style, rng)])


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("source", "vocab", "target", "test")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def make_benchmark(config: BenchmarkConfig = BenchmarkConfig(), seed: int = 0,
                   phoc_config: Optional[PhocConfig] = None) -> Benchmark:
    """Render the source, unlabeled target and labeled test sets for ``seed``."""
    phoc_config = phoc_config or PhocConfig()
    rngs = _streams(seed)
    english = english_words(config.lexicon_size + config.oov_pool)
    lexicon = load_lexicon(english[:config.lexicon_size], phoc_config)

    source_words = [str(w) for w in rngs["source"].choice(lexicon.words, config.source_images)]
    source_images = _render(source_words, config.source_style, rngs["source"])

    n_oov = int(round(config.oov_fraction * config.target_types))
    vrng = rngs["vocab"]
    in_lex = list(vrng.choice(lexicon.words, config.target_types - n_oov, replace=False))
    oov = list(vrng.choice(english[config.lexicon_size:], n_oov, replace=False))
    types = [str(w) for w in in_lex + oov]
    # Zipf-like frequencies assigned to types in random order
    p = 1.0 / np.arange(1, len(types) + 1) ** config.zipf_exponent
    vrng.shuffle(p)
    p /= p.sum()
    unlabeled_words = [str(w) for w in rngs["target"].choice(types, config.unlabeled_images, p=p)]
    unlabeled_images = _render(unlabeled_words, config.target_style, rngs["target"])
    test_words = [str(w) for w in rngs["test"].choice(types, config.test_images, p=p)]
    test_images = _render(test_words, config.target_style, rngs["test"])
    return Benchmark(config, seed, lexicon, source_images, source_words, unlabeled_images,
                     unlabeled_words, test_images, test_words, [str(w) for w in oov])


def train_initial(bench: Benchmark, seed: Optional[int] = None) -> tuple[EstimatorModel, list[float]]:
    """Train a fresh model on the style A source set."""
    seed = bench.seed if seed is None else seed
    cfg = bench.config
    model = init_model(seed=seed, phoc_config=bench.lexicon.phoc_config)
    targets = phoc_matrix(bench.source_words, bench.lexicon.phoc_config).astype(np.float32)
    schedule = TrainSchedule(list(cfg.init_segments), batch_size=cfg.batch_size,
                             weight_decay=cfg.weight_decay, seed=seed)
    return train(model, bench.source_images, targets, schedule)


def evaluate(model: EstimatorModel, images: np.ndarray, words: Sequence[str]) -> dict[str, float]:
    gallery = forward(model, images)
    return {"qbs": evaluate_map("qbs", gallery, words, model.phoc_config).mAP,
            "qbe": evaluate_map("qbe", gallery, words, model.phoc_config).mAP}


@dataclass
class AdaptationResult:
    measure: str
    seed: int
    initial: dict
    final: dict
    reports: list[CycleReport]
    seconds: float

    @property
    def gain(self) -> dict:
        return {k: self.final[k] - self.initial[k] for k in self.initial}


def run_adaptation(model: EstimatorModel, bench: Benchmark, measure: str,
                   seed: Optional[int] = None, initial: Optional[dict] = None) -> AdaptationResult:
    """Adapt a copy of ``model`` to the unlabeled set and score it on the test set.

    Ground truth of the unlabeled set is handed to ``adapt`` for the oracle
    measure and the pseudo-label accuracy diagnostic only.
    """
    seed = bench.seed if seed is None else seed
    start = time.perf_counter()
    initial = initial or evaluate(model, bench.test_images, bench.test_words)
    adapted, reports = adapt(model.copy(), bench.unlabeled_images, bench.lexicon,
                             bench.config.schedule(measure, seed), truth=bench.unlabeled_words)
    final = evaluate(adapted, bench.test_images, bench.test_words)
    return AdaptationResult(measure, seed, initial, final, reports, time.perf_counter() - start)

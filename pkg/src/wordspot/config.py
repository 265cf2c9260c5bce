"""Run configuration: JSON file merged over defaults and validated up front."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .adapt import AdaptSchedule
from .confidence import MEASURES
from .phoc import DEFAULT_SYMBOLS, Alphabet, PhocConfig
from .synth import STYLES, StyleFamily

DEFAULT_CONFIG: dict[str, Any] = {
    "seed": 0,
    "phoc": {"levels": [1, 2, 4, 8], "alphabet": DEFAULT_SYMBOLS, "overlap_threshold": 0.5},
    "estimator": {
        "dropout": 0.5,
        "segments": [[4000, 1e-4], [500, 1e-5]],
        "batch_size": 10,
        "weight_decay": 5e-5,
    },
    "synth": {"words": None, "wordlist": None, "per_word": 1, "style": "A", "scale_jitter": True},
    "adapt": {
        "cycles": 20,
        "fraction_early": 0.10,
        "fraction_late": 0.60,
        "switch_cycle": 10,
        "augmented_size": 10000,
        "lr": 1e-5,
        "epochs": 1,
        "measure": "sigmoid",
        "mc_passes": 100,
    },
    "paths": {
        "train_manifest": None,
        "target_manifest": None,
        "eval_manifest": None,
        "lexicon": None,
        "lexicon_size": 10000,
        "model": None,
        "out": None,
    },
}

SUBSTREAMS = ("synth", "init", "train", "adapt", "dropout")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict) and key != "style":
            if not isinstance(value, dict):
                raise ConfigError(f"{where}{key} must be an object")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    raw: dict

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Optional[dict] = None) -> "RunConfig":
        data: dict = {}
        if path is not None:
            try:
                with open(path, encoding="utf-8") as fh:
                    data = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            if not isinstance(data, dict):
                raise ConfigError("config root must be a JSON object")
        raw = _merge(DEFAULT_CONFIG, data)
        for section, values in (overrides or {}).items():
            if isinstance(values, dict):
                raw[section].update({k: v for k, v in values.items() if v is not None})
            elif values is not None:
                raw[section] = values
        cfg = cls(raw)
        cfg.validate()
        return cfg

    # sections -------------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def phoc(self) -> PhocConfig:
        p = self.raw["phoc"]
        return PhocConfig(tuple(p["levels"]), Alphabet(p["alphabet"]), float(p["overlap_threshold"]))

    @property
    def segments(self) -> list[tuple[int, float]]:
        return [(int(n), float(lr)) for n, lr in self.raw["estimator"]["segments"]]

    @property
    def style(self) -> StyleFamily:
        s = self.raw["synth"]["style"]
        if isinstance(s, str):
            if s not in STYLES:
                raise ConfigError(f"synth.style: unknown style {s!r}, choose from {sorted(STYLES)}")
            return STYLES[s]
        return StyleFamily.from_dict(s)

    def adapt_schedule(self, measure: Optional[str] = None) -> AdaptSchedule:
        a = dict(self.raw["adapt"])
        if measure is not None:
            a["measure"] = measure
        e = self.raw["estimator"]
        return AdaptSchedule(cycles=int(a["cycles"]), fraction_early=float(a["fraction_early"]),
                             fraction_late=float(a["fraction_late"]), switch_cycle=int(a["switch_cycle"]),
                             augmented_size=int(a["augmented_size"]), lr=float(a["lr"]),
                             epochs=int(a["epochs"]), batch_size=int(e["batch_size"]),
                             weight_decay=float(e["weight_decay"]), measure=a["measure"],
                             mc_passes=int(a["mc_passes"]), seed=self.stream_seed("adapt"))

    def path(self, name: str) -> Optional[Path]:
        value = self.raw["paths"].get(name)
        return None if value in (None, "") else Path(value)

    def stream_seed(self, name: str) -> int:
        """64-bit seed of a named substream derived from the run seed."""
        ss = np.random.SeedSequence([self.seed, SUBSTREAMS.index(name)])
        return int(ss.generate_state(1, dtype=np.uint64)[0])

    def rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng(self.stream_seed(name))

    # validation -----------------------------------------------------------

    def validate(self) -> None:
        """Raise ConfigError naming the first offending field."""
        seed = self.raw["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
            raise ConfigError("seed: must be an integer in [0, 2^64)")
        try:
            self.phoc
        except ValueError as exc:
            raise ConfigError(f"phoc: {exc}") from exc
        e = self.raw["estimator"]
        try:
            segs = self.segments
        except (TypeError, ValueError) as exc:
            raise ConfigError("estimator.segments: expected a list of [iterations, lr] pairs") from exc
        if not segs or any(n < 0 or lr <= 0 for n, lr in segs):
            raise ConfigError("estimator.segments: iterations must be >= 0 and lr > 0")
        if not 0.0 <= float(e["dropout"]) < 1.0:
            raise ConfigError("estimator.dropout: must lie in [0, 1)")
        if int(e["batch_size"]) < 1:
            raise ConfigError("estimator.batch_size: must be positive")
        if float(e["weight_decay"]) < 0:
            raise ConfigError("estimator.weight_decay: must be non-negative")
        try:
            self.style
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"synth.style: {exc}") from exc
        if int(self.raw["synth"]["per_word"]) < 1:
            raise ConfigError("synth.per_word: must be positive")
        if self.raw["adapt"]["measure"] not in MEASURES:
            raise ConfigError(f"adapt.measure: must be one of {MEASURES}")
        try:
            self.adapt_schedule()
        except ValueError as exc:
            raise ConfigError(f"adapt: {exc}") from exc
        if int(self.raw["paths"]["lexicon_size"]) < 1:
            raise ConfigError("paths.lexicon_size: must be positive")

    def require_paths(self, *names: str) -> None:
        """Check that the named input paths are set and exist."""
        for name in names:
            p = self.path(name)
            if p is None:
                raise ConfigError(f"paths.{name}: required")
            if not p.exists():
                raise ConfigError(f"paths.{name}: {p} does not exist")

"""Pyramidal Histogram of Characters (PHOC) string embeddings."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import EmptyWord

DEFAULT_SYMBOLS = "abcdefghijklmnopqrstuvwxyz0123456789"
DEFAULT_LEVELS = (1, 2, 4, 8)


@dataclass(frozen=True)
class Alphabet:
    symbols: str = DEFAULT_SYMBOLS

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("alphabet symbols must be unique")
        if not self.symbols:
            raise ValueError("alphabet must not be empty")

    @property
    def size(self) -> int:
        return len(self.symbols)

    def index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.symbols)}


@dataclass(frozen=True)
class PhocConfig:
    levels: tuple[int, ...] = DEFAULT_LEVELS
    alphabet: Alphabet = field(default_factory=Alphabet)
    overlap_threshold: float = 0.5

    def __post_init__(self):
        levels = tuple(int(l) for l in self.levels)
        object.__setattr__(self, "levels", levels)
        if not levels or any(l < 1 for l in levels):
            raise ValueError("levels must be positive integers")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("levels must be strictly increasing")
        if not 0.0 < self.overlap_threshold <= 1.0:
            raise ValueError("overlap_threshold must lie in (0, 1]")

    @property
    def dim(self) -> int:
        return phoc_dim(self)

    @property
    def config_hash(self) -> str:
        """Short identifier binding vectors and models to this configuration."""
        key = f"{self.alphabet.symbols}|{','.join(map(str, self.levels))}|{self.overlap_threshold!r}"
        return hashlib.sha1(key.encode("utf-8")).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "levels": list(self.levels),
            "alphabet": self.alphabet.symbols,
            "overlap_threshold": self.overlap_threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhocConfig":
        return cls(
            levels=tuple(d.get("levels", DEFAULT_LEVELS)),
            alphabet=Alphabet(d.get("alphabet", DEFAULT_SYMBOLS)),
            overlap_threshold=float(d.get("overlap_threshold", 0.5)),
        )


def phoc_dim(config: PhocConfig) -> int:
    return config.alphabet.size * sum(config.levels)


def canonicalize(word: str, alphabet: Alphabet | None = None) -> str:
    """Lowercase ``word`` and drop every character outside the alphabet."""
    alphabet = alphabet or Alphabet()
    allowed = set(alphabet.symbols)
    return "".join(c for c in word.lower() if c in allowed)


def phoc_of_string(word: str, config: PhocConfig | None = None) -> np.ndarray:
    """Binary PHOC of ``word`` as a uint8 vector of length ``config.dim``.

    Layout is level-major, region-minor with the character index innermost.
    A character at position i of an n-character word occupies [i/n, (i+1)/n];
    it activates region r of level l when the overlap with [r/l, (r+1)/l] is
    at least ``overlap_threshold / n``.

    Raises:
        EmptyWord: if nothing is left after canonicalization.
    """
    config = config or PhocConfig()
    canon = canonicalize(word, config.alphabet)
    if not canon:
        raise EmptyWord(f"word {word!r} has no characters in the alphabet")
    char_index = config.alphabet.index()
    a = config.alphabet.size
    n = len(canon)
    out = np.zeros(phoc_dim(config), dtype=np.uint8)
    offset = 0
    # exact rational arithmetic scaled by n*l keeps the inclusive tie exact
    for level in config.levels:
        for i, c in enumerate(canon):
            ci = char_index[c]
            # region r overlaps [i*l, (i+1)*l] / (n*l) with [r*n, (r+1)*n] / (n*l)
            lo_r = (i * level) // n
            hi_r = min(level - 1, ((i + 1) * level) // n)
            for r in range(lo_r, hi_r + 1):
                ov = min((i + 1) * level, (r + 1) * n) - max(i * level, r * n)
                if ov > 0 and ov >= config.overlap_threshold * level:
                    out[offset + r * a + ci] = 1
        offset += level * a
    return out


def phoc_matrix(words: Iterable[str], config: PhocConfig | None = None) -> np.ndarray:
    config = config or PhocConfig()
    rows = [phoc_of_string(w, config) for w in words]
    if not rows:
        return np.zeros((0, phoc_dim(config)), dtype=np.uint8)
    return np.vstack(rows)


class PhocEncoder(TransformerMixin, BaseEstimator):
    """Stateless transformer turning strings into PHOC rows.

    Parameters
    ----------
    levels : sequence of int
        Pyramid levels.
    alphabet : str
        Ordered symbols; characters outside it are dropped.
    overlap_threshold : float
        Fraction of a character's span that must fall inside a region.
    """

    def __init__(self, levels: Sequence[int] = DEFAULT_LEVELS, alphabet: str = DEFAULT_SYMBOLS,
                 overlap_threshold: float = 0.5):
        self.levels = levels
        self.alphabet = alphabet
        self.overlap_threshold = overlap_threshold

    @property
    def config_(self) -> PhocConfig:
        return PhocConfig(tuple(self.levels), Alphabet(self.alphabet), self.overlap_threshold)

    def fit(self, X=None, y=None):
        self.n_features_out_ = phoc_dim(self.config_)
        return self

    def transform(self, X):
        return phoc_matrix(X, self.config_)

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.input_tags.string = True
        tags.requires_fit = False
        return tags

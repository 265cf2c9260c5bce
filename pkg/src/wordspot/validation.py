"""Input validation helpers shared by the estimator wrappers and the CLI."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .corpus import INPUT_HEIGHT, INPUT_WIDTH, normalize
from .exceptions import EmptyDataset, GeometryMismatch, LengthMismatch, MalformedImage
from .phoc import Alphabet, canonicalize


def check_images(X, geometry: tuple[int, int] = (INPUT_HEIGHT, INPUT_WIDTH)) -> np.ndarray:
    """Return ``X`` as a float32 ``(n, h, w)`` batch at the model geometry.

    Accepts a 3-D array already at ``geometry`` or a sequence of 2-D images of
    any size; the latter are size-normalized. Values must lie in [0, 1].
    """
    if isinstance(X, np.ndarray) and X.ndim == 3:
        if X.shape[1:] != tuple(geometry):
            raise GeometryMismatch(f"images are {X.shape[1:]}, model expects {tuple(geometry)}")
        batch = X.astype(np.float32, copy=False)
    else:
        items = list(X) if not (isinstance(X, np.ndarray) and X.ndim == 2) else [X]
        batch = []
        for img in items:
            img = np.asarray(img, dtype=np.float32)
            if img.ndim != 2 or img.size == 0:
                raise MalformedImage(f"expected a non-empty 2-D image, got shape {img.shape}")
            if img.shape != tuple(geometry):
                img = normalize(img, *geometry)
            batch.append(img)
        batch = np.stack(batch) if batch else np.zeros((0, *geometry), np.float32)
    if len(batch) == 0:
        raise EmptyDataset("no images given")
    if not np.all(np.isfinite(batch)) or batch.min() < 0.0 or batch.max() > 1.0:
        raise MalformedImage("pixel values must be finite and lie in [0, 1]")
    return batch


def check_words(y: Sequence[str], n: Optional[int] = None, alphabet: Optional[Alphabet] = None,
                allow_empty: bool = False) -> list[str]:
    """Canonicalize transcriptions and check their count against ``n``."""
    if isinstance(y, str):
        raise TypeError("expected a sequence of strings, got a single string")
    words = [canonicalize(str(w), alphabet) if alphabet else canonicalize(str(w)) for w in y]
    if n is not None and len(words) != n:
        raise LengthMismatch(f"{len(words)} transcriptions for {n} images")
    if not allow_empty and any(not w for w in words):
        raise ValueError("a transcription has no symbol of the alphabet")
    return words


def check_fraction(value: float, name: str = "fraction") -> float:
    value = float(value)
    if not 0.0 < value <= 1.0:
        raise ValueError(f"{name} must lie in (0, 1], got {value}")
    return value


def check_generator(seed) -> np.random.Generator:
    """A numpy Generator from ``None``, an int, a SeedSequence or a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)

"""Test oracles shared by the unit and acceptance suites."""
import itertools
from fractions import Fraction

import numpy as np

from wordspot.estimator import init_model, loss_and_grad
from wordspot.phoc import Alphabet, PhocConfig

SYMBOLS = "abcdefghijklmnopqrstuvwxyz0123456789"


def oracle_phoc(word, levels=(1, 2, 4, 8), symbols=SYMBOLS, threshold=Fraction(1, 2)):
    """Enumerate every (occurrence, level, region) pair with exact interval overlap."""
    n = len(word)
    out = []
    for level in levels:
        for r in range(level):
            block = [0] * len(symbols)
            lo_r, hi_r = Fraction(r, level), Fraction(r + 1, level)
            for i, ch in enumerate(word):
                lo_c, hi_c = Fraction(i, n), Fraction(i + 1, n)
                overlap = min(hi_r, hi_c) - max(lo_r, lo_c)
                if overlap > 0 and overlap >= threshold * (hi_c - lo_c):
                    block[symbols.index(ch)] = 1
            out.extend(block)
    return np.array(out, dtype=np.uint8)


def tiny_architecture(output_dim, dropout=0.5, hidden=6, filters=2):
    return [
        {"type": "conv", "filters": filters, "kernel": 3},
        {"type": "relu"},
        {"type": "maxpool", "size": 2},
        {"type": "flatten"},
        {"type": "dense", "units": hidden},
        {"type": "relu"},
        {"type": "dropout", "p": dropout},
        {"type": "dense", "units": output_dim},
        {"type": "sigmoid"},
    ]


def two_conv_architecture(output_dim, dropout=0.5):
    return [
        {"type": "conv", "filters": 2, "kernel": 3},
        {"type": "relu"},
        {"type": "maxpool", "size": 2},
        {"type": "conv", "filters": 3, "kernel": 3},
        {"type": "relu"},
        {"type": "maxpool", "size": 2},
        {"type": "flatten"},
        {"type": "dense", "units": 5},
        {"type": "relu"},
        {"type": "dropout", "p": dropout},
        {"type": "dense", "units": output_dim},
        {"type": "sigmoid"},
    ]


SMALL_CONFIG = PhocConfig(levels=(1, 2), alphabet=Alphabet("abcd"))


def random_case(seed, architecture_fn=tiny_architecture, geometry=(8, 12), batch=3):
    """A float64 model with random weights, random images and binary targets."""
    rng = np.random.default_rng(seed)
    D = SMALL_CONFIG.dim
    model = init_model(architecture_fn(D), seed=seed, phoc_config=SMALL_CONFIG, geometry=geometry,
                       dtype=np.float64)
    # non-zero biases so that every gradient path is exercised
    for p in model.params:
        p += rng.normal(0, 0.1, p.shape)
    x = rng.random((batch, *geometry))
    t = (rng.random((batch, D)) < 0.3).astype(np.float64)
    return model, x, t


def finite_difference_error(model, x, t, seed=0, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    Dropout masks are replayed by reseeding the rng for every evaluation.
    """
    _, grads = loss_and_grad(model, x, t, "train", np.random.default_rng(seed))
    worst = 0.0
    for p, g in zip(model.params, grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + step
            lp, _ = loss_and_grad(model, x, t, "train", np.random.default_rng(seed))
            p[idx] = old - step
            lm, _ = loss_and_grad(model, x, t, "train", np.random.default_rng(seed))
            p[idx] = old
            num = (lp - lm) / (2 * step)
            ana = g[idx]
            denom = max(abs(num) + abs(ana), 1e-8)
            worst = max(worst, abs(num - ana) / denom)
    return worst


def ap_by_enumeration(relevance):
    """Average precision from precision@k at every relevant rank, in pure Python."""
    hits, total = 0, 0.0
    for k, r in enumerate(relevance, 1):
        if r:
            hits += 1
            total += hits / k
    return total / hits


def all_binary_lists(max_len):
    for n in range(1, max_len + 1):
        for bits in itertools.product((0, 1), repeat=n):
            if any(bits):
                yield list(bits)


# Hand-built protocol cases. Each gallery row stands in for the estimate of
# one manifest image; expected APs were worked out by ranking by hand.

# QbE: unit vectors at the given angles, so ranking follows angular distance.
QBE_LABELS = ["the", "cat", "the", "cat", "dog", "the", "dog", "cat", "sun", "dog"]
QBE_ANGLES = [0, 7, 15, 24, 34, 45, 57, 70, 84, 100]
QBE_STOPWORDS = {"the"}
# query id -> AP with the query excluded and "the" as stopword; "sun" has no
# other instance and is skipped
QBE_EXPECTED_AP = {1: 13 / 42, 3: 13 / 42, 4: 17 / 72, 6: 13 / 42, 7: 5 / 24, 9: 11 / 30}
QBE_EXPECTED_MAP = 274 / 945
QBE_EXPECTED_MAP_NO_STOPWORDS = 7009 / 22680

# QbS: PHOC with one level over "abc", i.e. plain character presence.
QBS_CONFIG = PhocConfig(levels=(1,), alphabet=Alphabet("abc"))
QBS_LABELS = ["a", "b", "a", "ab", "c", "b", "c", "a", "ab", "c"]
QBS_GALLERY = [(1, 0, 0), (0.2, 1, 0), (1, 0.5, 0), (1, 1, 0.1), (0, 0, 1),
               (1, 0.3, 0), (0.9, 0.1, 0.2), (0.6, 0.6, 0.5), (0.4, 1, 0), (0.1, 0.2, 1)]
QBS_STOPWORDS = {"c"}
QBS_EXPECTED_AP = {"a": 2 / 3, "b": 2 / 3, "ab": 5 / 6, "c": 11 / 12}
QBS_EXPECTED_MAP = 13 / 18
QBS_EXPECTED_MAP_NO_STOPWORDS = 37 / 48


def qbe_gallery():
    rad = np.deg2rad(QBE_ANGLES)
    return np.stack([np.cos(rad), np.sin(rad)], axis=1)


def write_protocol_manifest(directory, labels):
    """Write blank images and a manifest for ``labels``; returns the manifest path."""
    from wordspot.corpus import Manifest, ManifestEntry, write_image, write_manifest
    entries = []
    for i, label in enumerate(labels):
        name = f"img_{i:02d}.pgm"
        write_image(np.zeros((8, 24)), directory / name)
        entries.append(ManifestEntry(name, label))
    path = directory / "manifest.tsv"
    write_manifest(Manifest(entries), path)
    return path

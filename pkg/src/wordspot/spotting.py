"""Lexicons, cosine ranking, lexicon-based recognition and mAP evaluation."""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .exceptions import (EmptyGallery, EmptyLexicon, LengthMismatch, NoQueries, NoRelevant,
                         ZeroVector)
from .phoc import PhocConfig, canonicalize, phoc_of_string

_TIE_EPS = 1e-12


def d_cos(u, v) -> float:
    """Cosine dissimilarity ``1 - cos(u, v)``."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise LengthMismatch(f"lengths differ: {u.size} vs {v.size}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ZeroVector("cosine dissimilarity undefined for a zero vector")
    return float(1.0 - np.dot(u, v) / (nu * nv))


def _unit_rows(m: np.ndarray) -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroVector("zero row in cosine computation")
    return m / norms


def cosine_dissimilarities(queries, items) -> np.ndarray:
    """Matrix of ``d_cos(queries[i], items[j])``."""
    return 1.0 - _unit_rows(queries) @ _unit_rows(items).T


@dataclass
class Lexicon:
    words: list[str]
    phocs: np.ndarray
    phoc_config: PhocConfig = field(default_factory=PhocConfig)

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self._index

    def __post_init__(self):
        self._index = {w: i for i, w in enumerate(self.words)}
        self._unit = _unit_rows(self.phocs) if len(self.words) else np.zeros((0, self.phocs.shape[-1]))

    def index(self, word: str) -> int:
        return self._index[word]


def load_lexicon(source: Union[str, Path, Iterable[str]], phoc_config: Optional[PhocConfig] = None,
                 limit: Optional[int] = None) -> Lexicon:
    """Build a lexicon from a word-per-line file or an iterable of words.

    Words are canonicalized and deduplicated keeping the first occurrence;
    words that canonicalize to nothing are dropped. In files, blank lines and
    lines starting with ``#`` are skipped.
    """
    config = phoc_config or PhocConfig()
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            raw = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    else:
        raw = list(source)
    words, seen = [], set()
    for w in raw:
        c = canonicalize(w, config.alphabet)
        if c and c not in seen:
            seen.add(c)
            words.append(c)
            if limit is not None and len(words) >= limit:
                break
    if not words:
        raise EmptyLexicon("lexicon has no usable entries")
    phocs = np.vstack([phoc_of_string(w, config) for w in words])
    return Lexicon(words, phocs, config)


def english_words(n: int = 10000) -> list[str]:
    """The ``n`` most frequent English words shipped with the package."""
    text = resources.files("wordspot").joinpath("data/english_10k.txt").read_text(encoding="utf-8")
    words = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    return words[:n]


class RecognitionResult(NamedTuple):
    label: str
    dissimilarity: float
    index: int


def recognize_batch(attributes, lexicon: Lexicon) -> tuple[np.ndarray, np.ndarray]:
    """Nearest lexicon entry for every row; returns (indices, dissimilarities)."""
    if len(lexicon) == 0:
        raise EmptyLexicon("cannot recognize with an empty lexicon")
    d = 1.0 - _unit_rows(attributes) @ lexicon._unit.T
    best = d.min(axis=1, keepdims=True)
    # first index within rounding of the minimum gives the lowest-index tie rule
    idx = np.argmax(d <= best + _TIE_EPS, axis=1)
    return idx, d[np.arange(len(d)), idx]


def recognize(a_hat, lexicon: Lexicon) -> RecognitionResult:
    idx, dis = recognize_batch(np.asarray(a_hat)[None], lexicon)
    i = int(idx[0])
    return RecognitionResult(lexicon.words[i], float(dis[0]), i)


@dataclass
class RankedList:
    query_id: object
    items: list[tuple[int, float]]

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.items]


def rank(query_vector, gallery, query_id=None, ids: Optional[Sequence[int]] = None) -> RankedList:
    """Sort gallery rows by ascending cosine dissimilarity, ties by id."""
    gallery = np.atleast_2d(np.asarray(gallery, dtype=np.float64))
    if gallery.size == 0 or len(gallery) == 0:
        raise EmptyGallery("gallery is empty")
    ids = np.arange(len(gallery)) if ids is None else np.asarray(ids)
    d = cosine_dissimilarities(np.asarray(query_vector)[None], gallery)[0]
    order = np.lexsort((ids, d))
    return RankedList(query_id, [(int(ids[k]), float(d[k])) for k in order])


def rank_qbs(query: str, gallery, phoc_config: Optional[PhocConfig] = None) -> RankedList:
    return rank(phoc_of_string(query, phoc_config or PhocConfig()), gallery, query_id=query)


def rank_qbe(query_image, gallery, model) -> RankedList:
    from .estimator import forward
    return rank(forward(model, query_image), gallery)


def average_precision(relevance: Sequence[int]) -> float:
    """Non-interpolated AP: mean of precision@k over the relevant ranks k."""
    rel = np.asarray(relevance, dtype=bool)
    n_rel = int(rel.sum())
    if n_rel == 0:
        raise NoRelevant("average precision needs at least one relevant item")
    hits = np.cumsum(rel)
    ranks = np.arange(1, len(rel) + 1)
    return float(np.sum(hits[rel] / ranks[rel]) / n_rel)


class QueryResult(NamedTuple):
    query_id: int
    query: str
    ap: float
    num_relevant: int


@dataclass
class MapResult:
    protocol: str
    per_query: list[QueryResult]

    @property
    def mAP(self) -> float:
        return float(np.mean([q.ap for q in self.per_query]))

    def to_tsv(self) -> str:
        lines = ["query_id\tquery\tap\tnum_relevant"]
        lines += [f"{q.query_id}\t{q.query}\t{q.ap:.6f}\t{q.num_relevant}" for q in self.per_query]
        lines.append(f"mAP\t{self.mAP:.4f}")
        return "\n".join(lines) + "\n"


def evaluate_map(protocol: str, gallery, transcriptions: Sequence[str],
                 phoc_config: Optional[PhocConfig] = None, exclude_self: bool = True,
                 stopwords: Iterable[str] = ()) -> MapResult:
    """Mean average precision of a gallery of attribute estimates.

    ``qbe`` uses every gallery row as a query once (optionally without itself
    in its ranked list); ``qbs`` queries every unique transcription once with
    its PHOC. Relevance is equality of canonical transcriptions. Stopwords are
    never queries but stay in the gallery; QbE queries without any other
    relevant item are skipped.

    Raises:
        NoQueries: if no valid query remains.
    """
    if protocol not in ("qbe", "qbs"):
        raise ValueError(f"unknown protocol {protocol!r}")
    config = phoc_config or PhocConfig()
    gallery = np.atleast_2d(np.asarray(gallery, dtype=np.float64))
    if len(gallery) != len(transcriptions):
        raise LengthMismatch("gallery and transcriptions differ in length")
    if len(gallery) == 0:
        raise EmptyGallery("gallery is empty")
    labels = np.array([canonicalize(t or "", config.alphabet) for t in transcriptions], dtype=object)
    stop = {canonicalize(s, config.alphabet) for s in stopwords}
    ids = np.arange(len(gallery))
    results = []
    if protocol == "qbe":
        d = cosine_dissimilarities(gallery, gallery)
        for q in range(len(gallery)):
            label = labels[q]
            if not label or label in stop:
                continue
            keep = ids != q if exclude_self else np.ones(len(ids), dtype=bool)
            rel = labels[keep] == label
            if not rel.any():
                continue
            order = np.lexsort((ids[keep], d[q, keep]))
            results.append(QueryResult(q, label, average_precision(rel[order]), int(rel.sum())))
    else:
        queries = list(dict.fromkeys(l for l in labels if l and l not in stop))
        if queries:
            qv = np.vstack([phoc_of_string(w, config) for w in queries])
            d = cosine_dissimilarities(qv, gallery)
            for qi, label in enumerate(queries):
                rel = labels == label
                order = np.lexsort((ids, d[qi]))
                results.append(QueryResult(qi, label, average_precision(rel[order]), int(rel.sum())))
    if not results:
        raise NoQueries(f"no valid {protocol} queries")
    return MapResult(protocol, results)

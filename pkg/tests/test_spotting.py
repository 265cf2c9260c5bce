import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import (QBE_EXPECTED_AP, QBE_EXPECTED_MAP, QBE_EXPECTED_MAP_NO_STOPWORDS, QBE_LABELS,
                     QBE_STOPWORDS, QBS_CONFIG, QBS_EXPECTED_AP, QBS_EXPECTED_MAP,
                     QBS_EXPECTED_MAP_NO_STOPWORDS, QBS_GALLERY, QBS_LABELS, QBS_STOPWORDS,
                     all_binary_lists, ap_by_enumeration, qbe_gallery, write_protocol_manifest)
from wordspot.corpus import read_manifest
from wordspot.estimator import forward
from wordspot.exceptions import (EmptyGallery, EmptyLexicon, LengthMismatch, NoQueries, NoRelevant,
                                 ZeroVector)
from wordspot.phoc import PhocConfig, phoc_matrix, phoc_of_string
from wordspot.spotting import (average_precision, cosine_dissimilarities, d_cos, english_words,
                               evaluate_map, load_lexicon, rank, rank_qbe, rank_qbs, recognize,
                               recognize_batch)


def unit(deg):
    r = math.radians(deg)
    return [math.cos(r), math.sin(r)]


# d_cos -------------------------------------------------------------------

def test_d_cos_examples():
    assert d_cos([0.3, 0.7], [0.3, 0.7]) == pytest.approx(0.0, abs=1e-12)
    assert d_cos([1, 0], [0, 1]) == pytest.approx(1.0)
    assert d_cos([1, 1], [1, 0]) == pytest.approx(1 - 1 / math.sqrt(2))


def test_d_cos_errors():
    with pytest.raises(ZeroVector):
        d_cos([0, 0], [1, 0])
    with pytest.raises(LengthMismatch):
        d_cos([1, 0, 0], [1, 0])


@given(st.lists(st.floats(0.01, 10), min_size=2, max_size=10), st.floats(0.1, 100))
def test_d_cos_scale_invariant_and_bounded(u, c):
    v = list(reversed(u))
    d = d_cos(u, v)
    assert -1e-12 <= d <= 2
    assert d_cos([c * x for x in u], v) == pytest.approx(d, abs=1e-12)


def test_cosine_matrix_matches_pairwise(rng):
    q, g = rng.random((3, 5)), rng.random((4, 5))
    m = cosine_dissimilarities(q, g)
    for i in range(3):
        for j in range(4):
            assert m[i, j] == pytest.approx(d_cos(q[i], g[j]), abs=1e-12)


# lexicon and recognition --------------------------------------------------

def test_lexicon_dedupe_and_drop():
    lex = load_lexicon(["The", "the", "of", "!!", "Of", "and"])
    assert lex.words == ["the", "of", "and"]
    assert lex.phocs.shape == (3, 540)


def test_lexicon_from_file(tmp_path):
    p = tmp_path / "lex.txt"
    p.write_text("# header\nthe\n\nof\nand\n", encoding="utf-8")
    assert load_lexicon(p).words == ["the", "of", "and"]
    assert load_lexicon(p, limit=2).words == ["the", "of"]


def test_empty_lexicon():
    with pytest.raises(EmptyLexicon):
        load_lexicon(["!!", ""])


def test_english_words_shipped():
    words = english_words(100)
    assert len(words) == 100
    assert words[0] == "the"


def test_recognize_exact_match():
    lex = load_lexicon(["the", "of", "and"])
    res = recognize(phoc_of_string("of"), lex)
    assert res.label == "of"
    assert res.dissimilarity == pytest.approx(0.0, abs=1e-12)
    assert res.index == 1


def test_recognize_single_entry(rng):
    lex = load_lexicon(["word"])
    assert recognize(rng.random(540), lex).label == "word"


def test_recognize_tie_goes_to_lower_index():
    lex = load_lexicon(["ab", "cd"], PhocConfig(levels=(1,)))
    a_hat = (lex.phocs[0] + lex.phocs[1]) / 2
    assert recognize(a_hat, lex).label == "ab"
    swapped = load_lexicon(["cd", "ab"], PhocConfig(levels=(1,)))
    assert recognize(a_hat, swapped).label == "cd"


def test_recognize_out_of_vocabulary_maps_to_nearest():
    lex = load_lexicon(["cat", "dog", "house"])
    assert recognize(phoc_of_string("cats"), lex).label == "cat"


def test_recognize_batch_matches_single(rng):
    lex = load_lexicon(english_words(50))
    a = rng.random((6, 540))
    idx, dis = recognize_batch(a, lex)
    for row, i, d in zip(a, idx, dis):
        res = recognize(row, lex)
        assert res.index == i
        assert res.dissimilarity == pytest.approx(d)


# ranking ------------------------------------------------------------------

def test_rank_qbs_exact_match_first(rng):
    gallery = rng.random((5, 540))
    gallery[3] = phoc_of_string("word")
    ranked = rank_qbs("word", gallery)
    assert ranked.ids[0] == 3
    assert ranked.items[0][1] == pytest.approx(0.0, abs=1e-12)


def test_rank_singleton_and_empty():
    assert rank([1.0, 0.0], [[0.5, 0.5]]).ids == [0]
    with pytest.raises(EmptyGallery):
        rank([1.0, 0.0], np.zeros((0, 2)))


def test_rank_ties_by_id():
    gallery = [[0, 1], [1, 0], [0, 2], [2, 0]]
    assert rank([1, 0], gallery).ids == [1, 3, 0, 2]
    assert rank([1, 0], gallery, ids=[9, 8, 7, 6]).ids == [6, 8, 7, 9]


def test_rank_qbe_self_match(tiny_model, rng):
    images = rng.random((4, 8, 12)).astype(np.float32)
    gallery = forward(tiny_model, images)
    ranked = rank_qbe(images[2], gallery, tiny_model)
    assert ranked.ids[0] == 2
    assert ranked.items[0][1] == pytest.approx(0.0, abs=1e-6)


@given(st.lists(st.lists(st.floats(0.01, 1), min_size=3, max_size=3), min_size=1, max_size=8),
       st.lists(st.floats(0.1, 10), min_size=8, max_size=8))
def test_rank_invariant_to_row_scaling(rows, scales):
    gallery = np.array(rows)
    scaled = gallery * np.array(scales[:len(rows)])[:, None]
    d1 = [d for _, d in rank([1, 2, 3], gallery).items]
    d2 = [d for _, d in rank([1, 2, 3], scaled).items]
    np.testing.assert_allclose(d1, d2, atol=1e-12)


# average precision ---------------------------------------------------------

def test_ap_examples():
    assert average_precision([1, 0, 1, 0]) == pytest.approx(0.8333, abs=1e-4)
    assert average_precision([1, 1, 1]) == 1.0
    assert average_precision([0, 0, 0, 0, 1]) == pytest.approx(1 / 5)


def test_ap_no_relevant():
    with pytest.raises(NoRelevant):
        average_precision([0, 0])


def test_ap_exhaustive_against_enumeration():
    count = 0
    for rel in all_binary_lists(8):
        assert average_precision(rel) == pytest.approx(ap_by_enumeration(rel), abs=1e-12)
        count += 1
    assert count == 2 ** 9 - 2 - 8


@given(st.lists(st.booleans(), min_size=1, max_size=40).filter(any))
def test_ap_bounds_and_swap_monotone(rel):
    ap = average_precision(rel)
    assert 0 < ap <= 1
    # moving a relevant item one rank up never lowers AP
    for k in range(1, len(rel)):
        if rel[k] and not rel[k - 1]:
            better = list(rel)
            better[k - 1], better[k] = True, False
            assert average_precision(better) >= ap
            break


# mAP protocols -------------------------------------------------------------

def test_five_item_qbe_by_hand():
    gallery = [unit(a) for a in (0, 100, 10, 22, 45)]
    result = evaluate_map("qbe", gallery, ["a", "b", "a", "c", "a"])
    assert [q.query_id for q in result.per_query] == [0, 2, 4]
    np.testing.assert_allclose([q.ap for q in result.per_query], [5 / 6, 5 / 6, 7 / 12])
    assert result.mAP == pytest.approx(0.75)


def test_qbe_counts_queries_with_exclude_self():
    result = evaluate_map("qbe", [unit(0), unit(30), unit(60)], ["x", "y", "x"])
    assert len(result.per_query) == 2


def test_qbe_without_exclusion_ranks_self_first():
    result = evaluate_map("qbe", qbe_gallery(), QBE_LABELS, exclude_self=False)
    # every image is a query and finds itself at rank 1
    assert len(result.per_query) == 10
    sun = [q for q in result.per_query if q.query == "sun"][0]
    assert sun.ap == 1.0


def test_qbe_ten_images_by_hand():
    result = evaluate_map("qbe", qbe_gallery(), QBE_LABELS, stopwords=QBE_STOPWORDS)
    got = {q.query_id: q.ap for q in result.per_query}
    assert got.keys() == QBE_EXPECTED_AP.keys()
    for qid, ap in QBE_EXPECTED_AP.items():
        assert got[qid] == pytest.approx(ap, abs=1e-12)
    assert result.mAP == pytest.approx(QBE_EXPECTED_MAP, abs=1e-12)
    plain = evaluate_map("qbe", qbe_gallery(), QBE_LABELS)
    assert plain.mAP == pytest.approx(QBE_EXPECTED_MAP_NO_STOPWORDS, abs=1e-12)


def test_qbs_ten_images_by_hand():
    result = evaluate_map("qbs", QBS_GALLERY, QBS_LABELS, QBS_CONFIG, stopwords=QBS_STOPWORDS)
    got = {q.query: q.ap for q in result.per_query}
    assert list(got) == ["a", "b", "ab"]
    for word in got:
        assert got[word] == pytest.approx(QBS_EXPECTED_AP[word], abs=1e-12)
    assert result.mAP == pytest.approx(QBS_EXPECTED_MAP, abs=1e-12)
    plain = evaluate_map("qbs", QBS_GALLERY, QBS_LABELS, QBS_CONFIG)
    assert plain.mAP == pytest.approx(QBS_EXPECTED_MAP_NO_STOPWORDS, abs=1e-12)


def test_stopwords_stay_as_distractors():
    # dropping the stopword images would move the second "a" up a rank
    kept = [i for i, w in enumerate(QBS_LABELS) if w not in QBS_STOPWORDS]
    shrunk = evaluate_map("qbs", [QBS_GALLERY[i] for i in kept], [QBS_LABELS[i] for i in kept],
                          QBS_CONFIG)
    a_shrunk = [q.ap for q in shrunk.per_query if q.query == "a"][0]
    assert a_shrunk == pytest.approx(34 / 45)
    assert a_shrunk != pytest.approx(QBS_EXPECTED_AP["a"])


def test_protocols_from_manifest(tmp_path):
    manifest = read_manifest(write_protocol_manifest(tmp_path, QBE_LABELS))
    assert len(manifest.load_images()) == 10
    result = evaluate_map("qbe", qbe_gallery(), manifest.transcriptions, stopwords=QBE_STOPWORDS)
    assert result.mAP == pytest.approx(QBE_EXPECTED_MAP, abs=1e-12)


def test_perfect_oracle_qbs_is_one():
    words = ["alpha", "beta", "gamma", "delta", "omega"]
    assert evaluate_map("qbs", phoc_matrix(words), words).mAP == 1.0


def test_qbs_canonicalizes_and_queries_each_word_once():
    words = ["The", "the", "cat"]
    result = evaluate_map("qbs", phoc_matrix(["the", "the", "cat"]), words)
    assert [q.query for q in result.per_query] == ["the", "cat"]
    assert result.per_query[0].num_relevant == 2


def test_no_queries_and_bad_input():
    with pytest.raises(NoQueries):
        evaluate_map("qbe", [unit(0), unit(10)], ["a", "b"])
    with pytest.raises(NoQueries):
        evaluate_map("qbs", [unit(0)], ["the"], stopwords=["the"])
    with pytest.raises(LengthMismatch):
        evaluate_map("qbs", [unit(0)], ["a", "b"])
    with pytest.raises(ValueError):
        evaluate_map("both", [unit(0)], ["a"])


def test_map_tsv_format():
    result = evaluate_map("qbe", [unit(a) for a in (0, 100, 10, 22, 45)], ["a", "b", "a", "c", "a"])
    lines = result.to_tsv().splitlines()
    assert lines[0] == "query_id\tquery\tap\tnum_relevant"
    assert lines[1] == "0\ta\t0.833333\t2"
    assert lines[-1] == "mAP\t0.7500"

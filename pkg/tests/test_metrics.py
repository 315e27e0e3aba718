import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcap.metrics import (EvalReport, bleu_all, bleu_n, bleu_stats, cider, lcs_length, ngrams,
                             rouge_l, score_corpus)

from oracles import lcs_bruteforce, ngram_counts_bruteforce


def test_bleu_identity():
    assert bleu_n(["the cat sat on the mat"], [["the cat sat on the mat"]], 4) == 1.0


def test_bleu_hand_example():
    assert round(bleu_n(["the cat sat"], [["the cat sat down"]], 1), 6) == 0.716531
    assert abs(bleu_n(["the cat sat"], [["the cat sat down"]], 1) - math.exp(1 - 4 / 3)) < 1e-15


def test_bleu_no_overlap():
    assert bleu_n(["x y z"], [["a b c"]], 1) == 0.0


def test_bleu_closest_reference_length():
    _, _, c, r = bleu_stats(["a b c"], [["a b", "a b c d e f", "a b c d"]])
    assert (c, r) == (3, 2)  # ties go to the shorter reference


def test_bleu_clipping():
    matches, totals, _, _ = bleu_stats(["the the the the"], [["the cat", "the the"]], 1)
    assert matches == [2] and totals == [4]


def test_bleu_empty_set():
    with pytest.raises(ValueError, match="empty"):
        bleu_n([], [], 4)


tok = st.sampled_from("abcde")


@settings(max_examples=60, deadline=None)
@given(st.lists(tok, max_size=12), st.integers(1, 4))
def test_ngrams_match_bruteforce(tokens, n):
    assert dict(ngrams(tokens, n)) == ngram_counts_bruteforce(tokens, n)


@settings(max_examples=60, deadline=None)
@given(st.lists(tok, min_size=1, max_size=8), st.lists(st.lists(tok, min_size=1, max_size=8), min_size=1, max_size=3))
def test_bleu_clipping_oracle_and_range(cand, refs):
    matches, totals, _, _ = bleu_stats([cand], [refs])
    for n in range(1, 5):
        c = ngram_counts_bruteforce(cand, n)
        clipped = sum(min(v, max(ngram_counts_bruteforce(r, n).get(g, 0) for r in refs)) for g, v in c.items())
        assert matches[n - 1] == clipped and totals[n - 1] == sum(c.values())
    for b in bleu_all([cand], [refs]):
        assert 0.0 <= b <= 1.0 + 1e-12


def test_rouge_examples():
    assert rouge_l(["a b c"], [["a b c"]]) == 1.0
    assert round(rouge_l(["a b c"], [["a c d"]]), 6) == 0.666667
    assert rouge_l(["a b"], [["c d"]]) == 0.0


def test_rouge_takes_best_reference():
    _, each = rouge_l(["a b c"], [["x y z", "a b c"]], per_image=True)
    assert each == [1.0]


@settings(max_examples=80, deadline=None)
@given(st.lists(tok, max_size=9), st.lists(tok, max_size=9))
def test_lcs_oracle(a, b):
    assert lcs_length(a, b) == lcs_bruteforce(a, b)


def test_cider_hand_example():
    cands = ["a red circle here", "one blue square there"]
    refs = [[c] for c in cands]
    score, each = cider(cands, refs, per_image=True)
    assert abs(score - 10.0) < 1e-12 and all(abs(s - 10.0) < 1e-12 for s in each)
    # three tokens have no 4-gram, so that order contributes 0
    assert abs(cider(["red circle here", "blue square there"], [["red circle here"], ["blue square there"]]) - 7.5) < 1e-12


def test_cider_zero_overlap():
    _, each = cider(["zz yy", "blue square"], [["red circle"], ["blue square"]], per_image=True)
    assert each[0] == 0.0


def test_cider_needs_two_images():
    with pytest.raises(ValueError, match="degenerate idf"):
        cider(["a"], [["a"]])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.lists(tok, min_size=1, max_size=6),
                          st.lists(st.lists(tok, min_size=1, max_size=6), min_size=1, max_size=3)),
                min_size=2, max_size=5))
def test_cider_non_negative(pairs):
    cands, refs = [c for c, _ in pairs], [r for _, r in pairs]
    _, each = cider(cands, refs, per_image=True)
    assert all(s >= 0 for s in each)


def test_score_corpus_oracle_candidates():
    refs = [["a red circle", "there is a red circle"], ["a blue square and a bar", "a box"]]
    report = score_corpus([1, 2], [r[0] for r in refs], refs)
    assert report.bleu[3] == 1.0 and report.rouge_l == 1.0
    assert report == score_corpus([1, 2], [r[0] for r in refs], refs)
    d = report.to_dict()
    assert d["METEOR"] == "not computed" and d["SPICE"] == "not computed"
    assert [p["image_id"] for p in d["per_image"]] == [1, 2]
    assert report.table().splitlines()[0].split("|")[0].strip() == "BLEU-1"


def test_single_image_report_has_no_cider():
    report = score_corpus([1], ["a cat"], [["a cat"]])
    assert report.cider is None and "n/a" in report.table()
    assert isinstance(report, EvalReport)

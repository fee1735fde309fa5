import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wordrank.metrics import (
    EVAL_GRADES,
    EmptyPositivesError,
    QueryContext,
    RelevanceSpec,
    ZeroIdealError,
    average_precision,
    average_precision_rows,
    dcg,
    levenshtein,
    mean_average_precision,
    ndcg,
    ndcg_rows,
    rank_of,
    relevance,
    top_n_edit_distance_rows,
    top_n_mean_edit_distance,
)

from oracles import brute_ap, brute_ndcg, recursive_edit_distance

words = st.text(alphabet="abcd", max_size=7)


def pattern_ctx(pattern):
    """Context whose relevance-by-rank is ``pattern`` under descending scores."""
    n = len(pattern)
    scores = np.linspace(1.0, 0.0, n)
    return scores, QueryContext.from_relevance(pattern, positives=np.array(pattern) > 0)


class TestLevenshtein:
    @pytest.mark.parametrize(
        "a, b, d",
        [("abc", "abc", 0), ("kitten", "sitting", 3), ("", "abcd", 4), ("abcd", "", 4), ("", "", 0), ("bank", "banks", 1)],
    )
    def test_values(self, a, b, d):
        assert levenshtein(a, b) == d

    def test_kitten_by_oracle(self):
        assert recursive_edit_distance("kitten", "sitting") == 3

    @given(words, words)
    def test_matches_recursive_search(self, a, b):
        assert levenshtein(a, b) == recursive_edit_distance(a, b)

    @given(words, words, words)
    def test_metric_axioms(self, a, b, c):
        assert levenshtein(a, b) == levenshtein(b, a)
        assert (levenshtein(a, b) == 0) == (a == b)
        assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


class TestRelevance:
    def test_linear(self):
        assert relevance(RelevanceSpec.linear(4), "jones", "jones") == 4
        assert relevance(RelevanceSpec.linear(4), "jones", "jonas") == 3
        assert relevance(RelevanceSpec.linear(4), "abcdefg", "hijklmn") == 0

    def test_evaluation_table(self):
        spec = RelevanceSpec.evaluation()
        assert relevance(spec, "bank", "banks") == 15
        assert [spec.from_distance(d) for d in range(7)] == [20, 15, 10, 5, 3, 0, 0]

    def test_binary(self):
        spec = RelevanceSpec.binary()
        assert relevance(spec, "bank", "bank") == 1
        assert relevance(spec, "bank", "banks") == 0

    def test_table_must_be_non_increasing(self):
        with pytest.raises(ValueError):
            RelevanceSpec("table", table={0: 1.0, 1: 2.0})
        with pytest.raises(ValueError):
            RelevanceSpec("fuzzy")

    def test_default_grades(self):
        assert EVAL_GRADES == {0: 20.0, 1: 15.0, 2: 10.0, 3: 5.0, 4: 3.0}


class TestRankOf:
    def test_examples(self):
        s = [0.9, 0.5, 0.7]
        assert rank_of(2, s) == 1 + sum(v > 0.7 for v in s)
        assert rank_of(2, s) == 2
        assert rank_of(0, s) == 1
        assert all(rank_of(i, [0.3] * 4) == 1 for i in range(4))

    def test_subset(self):
        assert rank_of(2, [0.9, 0.5, 0.7], subset=[1, 2]) == 1
        with pytest.raises(IndexError):
            rank_of(0, [0.9, 0.5, 0.7], subset=[1, 2])

    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=10, unique=True))
    def test_bijection_for_distinct_scores(self, s):
        assert sorted(rank_of(i, s) for i in range(len(s))) == list(range(1, len(s) + 1))


class TestAveragePrecision:
    @pytest.mark.parametrize(
        "pattern, expected",
        [([1, 1, 0], 1.0), ([1, 0, 1], 0.5 * (1 / 1 + 2 / 3)), ([0, 0, 1], 1 / 3)],
    )
    def test_patterns(self, pattern, expected):
        scores, ctx = pattern_ctx(pattern)
        assert average_precision(scores, ctx) == pytest.approx(expected)
        assert brute_ap(scores, pattern) == pytest.approx(expected)

    def test_no_positive_is_an_error(self):
        scores, ctx = pattern_ctx([0, 0])
        with pytest.raises(EmptyPositivesError):
            average_precision(scores, ctx)

    def test_ties_favour_lower_index(self):
        ctx = QueryContext.from_relevance([0, 1], positives=[False, True])
        assert average_precision([0.5, 0.5], ctx) == pytest.approx(0.5)

    def test_excluded_item_is_ignored(self):
        ctx = QueryContext.from_relevance([0, 0, 1], positives=[0, 0, 1], retrieved=[False, True, True])
        assert average_precision([0.9, 0.1, 0.5], ctx) == 1.0

    def test_rejects_non_finite(self):
        _, ctx = pattern_ctx([1, 0])
        with pytest.raises(ValueError):
            average_precision([np.nan, 0.0], ctx)

    def test_map(self):
        assert mean_average_precision([1.0, 1.0]) == 1.0
        assert mean_average_precision([0.5, 1.0]) == 0.75
        with pytest.raises(ValueError):
            mean_average_precision([])

    def test_perfect_iff_positives_first(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            pos = rng.random(6) < 0.4
            if not pos.any():
                continue
            s = rng.permutation(6).astype(float)
            ctx = QueryContext.from_relevance(pos.astype(float), positives=pos)
            on_top = s[pos].min() > s[~pos].max(initial=-1)
            assert (average_precision(s, ctx) == 1.0) == on_top


class TestDCG:
    def test_two_item_sums(self):
        s = np.array([1.0, 0.0])
        ctx = QueryContext.from_relevance([3, 0])
        assert dcg(s, ctx) == pytest.approx(3.0)
        ctx = QueryContext.from_relevance([0, 3])
        assert dcg(s, ctx) == pytest.approx(3 / math.log2(3))
        assert dcg(s, ctx) == pytest.approx(1.8927892607)
        assert ndcg(s, ctx) == pytest.approx(1 / math.log2(3))
        assert ndcg(s, ctx) == pytest.approx(0.6309297536)

    def test_zero_relevance(self):
        ctx = QueryContext.from_relevance([0, 0, 0])
        assert dcg([0.1, 0.2, 0.3], ctx) == 0.0
        with pytest.raises(ZeroIdealError):
            ndcg([0.1, 0.2, 0.3], ctx)

    def test_perfect_and_single(self):
        ctx = QueryContext.from_relevance([5, 3, 3, 0])
        assert ndcg([4, 3, 2, 1], ctx) == pytest.approx(1.0)
        assert ndcg([0.2], QueryContext.from_relevance([7])) == 1.0

    def test_from_transcriptions_regrades(self):
        ctx = QueryContext.from_transcriptions("bank", ["banks", "bank", "zzzzzzz"])
        assert list(ctx.gains) == [15, 20, 0]
        assert list(ctx.ideal_order) == [1, 0, 2]
        lin = ctx.gains_for(RelevanceSpec.linear(4))
        assert list(lin) == [3, 4, 0]
        assert ndcg([0.9, 0.5, 0.1], ctx, RelevanceSpec.linear(4)) == pytest.approx(
            (3 + 4 / math.log2(3)) / (4 + 3 / math.log2(3))
        )


@settings(max_examples=200)
@given(
    st.lists(st.integers(0, 4), min_size=1, max_size=8),
    st.randoms(use_true_random=False),
)
def test_invariant_under_increasing_transform(gains, rnd):
    n = len(gains)
    s = np.array(rnd.sample(range(-50, 50), n)) / 50.0
    t = np.exp(3 * s) + 2.0
    ctx = QueryContext.from_relevance(gains, positives=np.array(gains) == 4)
    if any(g > 0 for g in gains):
        assert ndcg(t, ctx) == pytest.approx(ndcg(s, ctx))
        assert 0.0 <= ndcg(s, ctx) <= 1.0 + 1e-12
    if ctx.positives.any():
        assert average_precision(t, ctx) == pytest.approx(average_precision(s, ctx))


def test_brute_force_small_galleries():
    rng = np.random.default_rng(0)
    for n in range(1, 7):
        for pattern in itertools.product([0, 1], repeat=n):
            if not any(pattern):
                continue
            for _ in range(3):
                s = rng.integers(0, 4, n) / 4.0  # coarse grid forces ties
                gains = [p * rng.integers(1, 5) for p in pattern]
                ctx = QueryContext.from_relevance(gains, positives=np.array(pattern, bool))
                assert average_precision(s, ctx) == pytest.approx(brute_ap(s, pattern), abs=1e-12)
                assert ndcg(s, ctx) == pytest.approx(brute_ndcg(s, gains), abs=1e-12)


def test_row_variants_agree_with_scalar():
    rng = np.random.default_rng(1)
    S = rng.normal(size=(20, 9))
    gains = rng.integers(0, 3, size=(20, 9)).astype(float)
    pos = gains == 2
    ret = rng.random((20, 9)) > 0.2
    pos &= ret
    ap = average_precision_rows(S, pos, ret)
    nd = ndcg_rows(S, gains, ret)
    for q in range(20):
        ctx = QueryContext.from_relevance(np.where(ret[q], gains[q], 0), positives=pos[q], retrieved=ret[q])
        if pos[q].any():
            assert ap[q] == pytest.approx(average_precision(S[q], ctx))
        else:
            assert np.isnan(ap[q])
        if (gains[q] * ret[q]).any():
            assert nd[q] == pytest.approx(ndcg(S[q], ctx))


class TestTopN:
    def test_examples(self):
        ctx = QueryContext.from_transcriptions("abc", ["abc", "xyz", "abd"])
        assert top_n_mean_edit_distance([0.9, 0.5, 0.1], ctx, 1) == 0.0
        assert top_n_mean_edit_distance([0.9, 0.5, 0.1], ctx, 2) == 1.5
        assert top_n_mean_edit_distance([0.9, 0.5, 0.1], ctx, 2, ideal=True) == 0.5
        with pytest.raises(ValueError):
            top_n_mean_edit_distance([0.9, 0.5, 0.1], ctx, 4)

    def test_ideal_is_lower_envelope(self):
        rng = np.random.default_rng(2)
        D = rng.integers(0, 8, size=(15, 30))
        S = rng.normal(size=(15, 30))
        model, ideal = top_n_edit_distance_rows(S, D, max_n=30)
        assert np.all(ideal <= model + 1e-12)
        for q in range(3):
            pool = sorted(D[q])
            for n in (1, 5, 30):
                # brute ideal: smallest n distances
                assert np.mean(pool[:n]) <= np.mean(D[q][np.argsort(-S[q], kind="stable")][:n])

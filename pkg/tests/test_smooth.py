import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wordrank.core import finite_difference_check
from wordrank.metrics import (
    EmptyPositivesError,
    QueryContext,
    ZeroIdealError,
    average_precision,
    ndcg,
)
from wordrank.smooth import (
    SmoothConfig,
    ap_loss_masked,
    loss_ap,
    loss_ndcg,
    ndcg_loss_masked,
    pairwise_terms,
    sigmoid_indicator,
    smooth_ap,
    smooth_ndcg,
)

from oracles import brute_ap, brute_ndcg

SHARP = SmoothConfig(tau=1e-4)


def separated_scores(rng, n, gap=0.01):
    """Distinct scores with every pairwise gap at least ``gap``."""
    return rng.permutation(n) * gap + rng.uniform(-1, 0)


class TestSigmoid:
    def test_values(self):
        assert sigmoid_indicator(0.0, 0.3) == 0.5
        assert sigmoid_indicator(1.0, 1.0) == pytest.approx(1 / (1 + math.exp(-1)))
        assert sigmoid_indicator(1.0, 1.0) == pytest.approx(0.7310585786)

    def test_saturates_without_overflow(self):
        with np.errstate(over="raise"):
            assert sigmoid_indicator(1e6, 1e-4) == 1.0
            assert sigmoid_indicator(-1e6, 1e-4) == 0.0

    def test_vectorised(self):
        x = np.array([-1.0, 0.0, 1.0])
        np.testing.assert_allclose(sigmoid_indicator(x, 0.5), 1 / (1 + np.exp(-x / 0.5)))


class TestSmoothAP:
    def test_single_item(self):
        ctx = QueryContext.from_relevance([1], positives=[True])
        assert smooth_ap([0.3], ctx) == 1.0

    def test_all_positive(self):
        ctx = QueryContext.from_relevance([1, 1, 1], positives=[True] * 3)
        assert smooth_ap([0.1, -0.4, 0.9], ctx, SmoothConfig(tau=1.0)) == pytest.approx(1.0)

    def test_no_positive(self):
        ctx = QueryContext.from_relevance([0, 0], positives=[False, False])
        with pytest.raises(EmptyPositivesError):
            smooth_ap([0.1, 0.2], ctx)

    def test_monotone_in_lone_positive_score(self):
        rng = np.random.default_rng(4)
        for _ in range(300):
            n = rng.integers(2, 10)
            pos = np.zeros(n, bool)
            pos[rng.integers(n)] = True
            s = rng.normal(size=n)
            ctx = QueryContext.from_relevance(pos.astype(float), positives=pos)
            cfg = SmoothConfig(tau=rng.choice([0.01, 0.1, 1.0]))
            bumped = s.copy()
            bumped[pos] += rng.uniform(0, 1)
            assert smooth_ap(bumped, ctx, cfg) >= smooth_ap(s, ctx, cfg) - 1e-12

    def test_raising_a_positive_past_a_positive_can_lower_it(self):
        # Two positives stuck below a negative: lifting one of them lowers its
        # own positives-above count, which the smooth ratio penalises more
        # than the other positive gains. Exact AP is unchanged.
        ctx = QueryContext.from_relevance([1, 1, 0], positives=[True, True, False])
        cfg = SmoothConfig(tau=0.1)
        before, after = [-0.95, -1.0, 1.0], [-0.75, -1.0, 1.0]
        assert average_precision(before, ctx) == average_precision(after, ctx)
        assert smooth_ap(after, ctx, cfg) < smooth_ap(before, ctx, cfg) - 0.01


class TestSmoothNDCG:
    def test_single_item(self):
        assert smooth_ndcg([0.3], QueryContext.from_relevance([2.0])) == 1.0

    def test_equal_relevance_three_items(self):
        ctx = QueryContext.from_relevance([1.0, 1.0, 1.0])
        ideal = 1 + 1 / math.log2(3) + 0.5
        # with tied scores every item has smooth rank 2
        assert smooth_ndcg([0.0, 0.0, 0.0], ctx, SmoothConfig(tau=1.0)) == pytest.approx(3 / math.log2(3) / ideal)
        assert smooth_ndcg([0.0, 0.5, 1.0], ctx, SmoothConfig(tau=1.0)) < 1.0
        assert smooth_ndcg([0.0, 0.5, 1.0], ctx, SHARP) == pytest.approx(1.0, abs=1e-9)

    def test_zero_ideal(self):
        with pytest.raises(ZeroIdealError):
            smooth_ndcg([0.1, 0.2], QueryContext.from_relevance([0, 0]))

    def test_uses_config_relevance_for_transcribed_context(self):
        ctx = QueryContext.from_transcriptions("bank", ["banks", "bank", "zzzzzzz"])
        lin = QueryContext.from_relevance([3, 4, 0])
        s = [0.9, 0.5, 0.1]
        assert smooth_ndcg(s, ctx, SmoothConfig(tau=0.1)) == pytest.approx(smooth_ndcg(s, lin, SmoothConfig(tau=0.1)))

    def test_never_above_one(self):
        rng = np.random.default_rng(6)
        for _ in range(2000):
            n = rng.integers(1, 25)
            gains = rng.integers(0, 5, size=(1, n)).astype(float)
            if not gains.any():
                continue
            s = rng.normal(size=(1, n)) * rng.choice([0.0, 0.01, 1.0])
            out = ndcg_loss_masked(s, gains, np.ones((1, n), bool), 10 ** rng.uniform(-3, 1))
            assert out.value >= -1e-12


def test_sharp_limit_matches_exact_metrics():
    rng = np.random.default_rng(11)
    for _ in range(300):
        n = int(rng.integers(1, 33))
        s = separated_scores(rng, n)
        gains = rng.integers(0, 5, n).astype(float)
        pos = gains == 4
        if pos.any():
            ctx = QueryContext.from_relevance(gains, positives=pos)
            assert abs(smooth_ap(s, ctx, SHARP) - average_precision(s, ctx)) <= 1e-3
            assert average_precision(s, ctx) == pytest.approx(brute_ap(s, pos))
        if gains.any():
            ctx = QueryContext.from_relevance(gains)
            assert abs(smooth_ndcg(s, ctx, SHARP) - ndcg(s, ctx)) <= 1e-3
            assert ndcg(s, ctx) == pytest.approx(brute_ndcg(s, gains))


@settings(max_examples=100)
@given(
    st.lists(st.floats(-1, 1), min_size=2, max_size=10),
    st.floats(-5, 5),
    st.sampled_from([0.01, 0.1, 1.0]),
)
def test_shift_invariance(scores, shift, tau):
    s = np.array(scores)
    gains = np.arange(len(s)) % 3 + (np.arange(len(s)) == 0) * 2
    ctx = QueryContext.from_relevance(gains.astype(float), positives=gains == 2)
    cfg = SmoothConfig(tau=tau)
    assert smooth_ndcg(s + shift, ctx, cfg) == pytest.approx(smooth_ndcg(s, ctx, cfg), abs=1e-9)
    assert smooth_ap(s + shift, ctx, cfg) == pytest.approx(smooth_ap(s, ctx, cfg), abs=1e-9)


def random_batch(rng, q=8, n=16):
    sim = rng.uniform(-1, 1, size=(q, n))
    gains = rng.integers(0, 5, size=(q, n)).astype(float)
    gains[:, 0] = 4  # at least one positive and a nonzero ideal per query
    perm = np.array([rng.permutation(n) for _ in range(q)])
    gains = np.take_along_axis(gains, perm, axis=1)
    ctxs = [QueryContext.from_relevance(g, positives=g == 4) for g in gains]
    return sim, ctxs


class TestLosses:
    def test_separated_batch_is_near_zero(self):
        rng = np.random.default_rng(1)
        sim, ctxs = random_batch(rng)
        # rank by gain with unit gaps between items
        for q, c in enumerate(ctxs):
            sim[q] = (c.gains * 20 + np.arange(16)) / 100.0
        assert loss_ap(sim, ctxs, SHARP).value == pytest.approx(0.0, abs=1e-3)
        assert loss_ndcg(sim, ctxs, SHARP).value == pytest.approx(0.0, abs=1e-3)

    def test_single_item_constant(self):
        ctx = [QueryContext.from_relevance([1.0], positives=[True])]
        for fn in (loss_ap, loss_ndcg):
            out = fn(np.array([[0.4]]), ctx)
            assert out.value == 0.0
            assert np.all(out.gradient == 0.0)

    def test_bounds_and_shapes(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            sim, ctxs = random_batch(rng)
            for fn in (loss_ap, loss_ndcg):
                out = fn(sim, ctxs, SmoothConfig(tau=rng.choice([0.01, 1.0])))
                assert 0.0 <= out.value <= 1.0
                assert out.gradient.shape == sim.shape
                assert np.all(np.isfinite(out.gradient))

    def test_errors_propagate(self):
        sim = np.zeros((1, 2))
        with pytest.raises(EmptyPositivesError):
            loss_ap(sim, [QueryContext.from_relevance([1, 1], positives=[False, False])])
        with pytest.raises(ZeroIdealError):
            loss_ndcg(sim, [QueryContext.from_relevance([0, 0])])
        with pytest.raises(ValueError):
            loss_ap(np.zeros((1, 3)), [QueryContext.from_relevance([1, 1], positives=[True, True])])

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        sim, ctxs = random_batch(rng)
        perm = rng.permutation(16)
        permuted = [QueryContext.from_relevance(c.gains[perm], positives=c.positives[perm]) for c in ctxs]
        for fn in (loss_ap, loss_ndcg):
            a = fn(sim, ctxs, SmoothConfig(tau=0.1))
            b = fn(sim[:, perm], permuted, SmoothConfig(tau=0.1))
            assert b.value == pytest.approx(a.value, abs=1e-12)
            np.testing.assert_allclose(b.gradient, a.gradient[:, perm], atol=1e-12)

    @pytest.mark.parametrize("tau", [0.1, 1.0])
    def test_gradients_match_finite_differences(self, tau):
        rng = np.random.default_rng(int(tau * 10))
        cfg = SmoothConfig(tau=tau)
        for _ in range(10):
            sim, ctxs = random_batch(rng)
            for fn in (loss_ap, loss_ndcg):
                out = fn(sim, ctxs, cfg)
                params = {"sim": sim.copy()}
                err = finite_difference_check(lambda p: fn(p["sim"], ctxs, cfg).value, params, {"sim": out.gradient})
                assert err <= 1e-3


def test_masked_losses_drop_and_count():
    sim = np.array([[0.1, 0.2, 0.3], [0.3, 0.2, 0.1]])
    pos = np.array([[True, False, False], [False, False, False]])
    ret = np.ones_like(pos)
    out = ap_loss_masked(sim, pos, ret, 0.1)
    assert (out.n_queries, out.n_dropped) == (1, 1)
    assert np.all(out.gradient[1] == 0)
    gains = np.array([[1.0, 0, 0], [0, 0, 0]])
    out = ndcg_loss_masked(sim, gains, ret, 0.1)
    assert (out.n_queries, out.n_dropped) == (1, 1)


def test_shared_pairwise_terms_give_same_result():
    rng = np.random.default_rng(9)
    sim = rng.normal(size=(5, 7))
    gains = rng.integers(0, 3, size=(5, 7)).astype(float)
    ret = rng.random((5, 7)) > 0.1
    pos = (gains == 2) & ret
    pre = pairwise_terms(sim, 0.2)
    a = ap_loss_masked(sim, pos, ret, 0.2)
    b = ap_loss_masked(sim, pos, ret, 0.2, pre)
    assert a.value == b.value
    np.testing.assert_array_equal(a.gradient, b.gradient)
    a = ndcg_loss_masked(sim, gains, ret, 0.2)
    b = ndcg_loss_masked(sim, gains, ret, 0.2, pre)
    assert a.value == b.value

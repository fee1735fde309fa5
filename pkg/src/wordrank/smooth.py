"""Smooth (differentiable) surrogates of AP and nDCG.

The integer rank of item ``i`` is ``1 + #{j : s_j > s_i}``. Replacing the
indicator with a temperature-controlled sigmoid of ``s_j - s_i`` turns the
rank, and every metric built on it, into a smooth function of the scores.
Gradients w.r.t. the similarity matrix are derived in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .metrics import (
    EmptyPositivesError,
    QueryContext,
    RelevanceSpec,
    ZeroIdealError,
)

__all__ = [
    "SmoothConfig",
    "LossOutput",
    "sigmoid_indicator",
    "smooth_ap",
    "smooth_ndcg",
    "loss_ap",
    "loss_ndcg",
    "ap_loss_masked",
    "ndcg_loss_masked",
    "pairwise_terms",
]

_LN2 = np.log(2.0)


@dataclass(frozen=True)
class SmoothConfig:
    tau: float = 0.01
    relevance: RelevanceSpec = field(default_factory=lambda: RelevanceSpec.linear(4))

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")


@dataclass
class LossOutput:
    value: float
    gradient: np.ndarray
    n_queries: int = 0
    n_dropped: int = 0


def sigmoid_indicator(x, tau: float):
    """``1 / (1 + exp(-x / tau))`` without overflow for large ``|x / tau|``."""
    # tanh form saturates cleanly instead of overflowing exp()
    out = 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64) / tau))
    return out if out.ndim else float(out)


def pairwise_terms(sim: np.ndarray, tau: float):
    """G[q, i, j] = sigmoid((s_qj - s_qi) / tau) and its derivative w.r.t. the difference."""
    diff = sim[:, None, :] - sim[:, :, None]
    g = sigmoid_indicator(diff, tau)
    return g, g * (1.0 - g) / tau


def _rows(pairwise, s, keep, tau):
    if pairwise is None:
        return pairwise_terms(s, tau)
    g, dg = pairwise
    return g[keep], dg[keep]


def _scatter(coef: np.ndarray) -> np.ndarray:
    """Fold dL/dG[q,i,j] * G'[q,i,j] into dL/ds: +coef on s_j, -coef on s_i."""
    return coef.sum(axis=1) - coef.sum(axis=2)


def ap_loss_masked(sim, positives, retrieved, tau: float, pairwise=None) -> LossOutput:
    """``1 - mean smooth-AP`` over the rows of ``sim`` that have a positive.

    ``positives`` and ``retrieved`` are boolean masks shaped like ``sim``;
    rows without any positive are dropped and counted. ``pairwise`` may
    carry ``pairwise_terms(sim, tau)`` when several losses share ``sim``.
    """
    sim = np.asarray(sim, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool) & retrieved
    ret = np.asarray(retrieved, dtype=bool)
    keep = pos.any(axis=1)
    grad = np.zeros_like(sim)
    n_q = int(keep.sum())
    if n_q == 0:
        return LossOutput(0.0, grad, 0, len(sim))
    s, p, w = sim[keep], pos[keep], ret[keep]
    n = s.shape[1]
    g, dg = _rows(pairwise, s, keep, tau)
    offdiag = ~np.eye(n, dtype=bool)
    # pairs (i, j): i a positive, j any other retrieved item
    all_pairs = p[:, :, None] & w[:, None, :] & offdiag
    pos_pairs = all_pairs & p[:, None, :]
    num = 1.0 + np.sum(g * pos_pairs, axis=2)
    den = 1.0 + np.sum(g * all_pairs, axis=2)
    n_pos = p.sum(axis=1, keepdims=True)
    ratio = np.where(p, num / den, 0.0)
    ap = ratio.sum(axis=1) / n_pos[:, 0]

    # d(-AP/Q)/dG via numerator and denominator of every positive
    d_num = np.where(p, -1.0 / (n_pos * den), 0.0) / n_q
    d_den = np.where(p, num / (n_pos * den**2), 0.0) / n_q
    coef = (d_num[:, :, None] * pos_pairs + d_den[:, :, None] * all_pairs) * dg
    grad[keep] = _scatter(coef)
    return LossOutput(float(1.0 - ap.mean()), grad, n_q, len(sim) - n_q)


def _ideal_dcg(gains: np.ndarray, retrieved: np.ndarray) -> np.ndarray:
    g = np.where(retrieved, gains, 0.0)
    g = -np.sort(-g, axis=1)
    disc = 1.0 / np.log2(np.arange(2, g.shape[1] + 2))
    return g @ disc


def ndcg_loss_masked(sim, gains, retrieved, tau: float, pairwise=None) -> LossOutput:
    """``1 - mean smooth-nDCG``; the ideal DCG is exact and score-free."""
    sim = np.asarray(sim, dtype=np.float64)
    ret = np.asarray(retrieved, dtype=bool)
    gains = np.where(ret, np.asarray(gains, dtype=np.float64), 0.0)
    ideal = _ideal_dcg(gains, ret)
    keep = ideal > 0
    grad = np.zeros_like(sim)
    n_q = int(keep.sum())
    if n_q == 0:
        return LossOutput(0.0, grad, 0, len(sim))
    s, r, w, z = sim[keep], gains[keep], ret[keep], ideal[keep]
    n = s.shape[1]
    g, dg = _rows(pairwise, s, keep, tau)
    pairs = w[:, :, None] & w[:, None, :] & ~np.eye(n, dtype=bool)
    arg = 2.0 + np.sum(g * pairs, axis=2)
    disc = np.log2(arg)
    val = np.sum(np.where(w, r / disc, 0.0), axis=1) / z

    d_arg = np.where(w, r / (disc**2 * arg * _LN2), 0.0) / (z[:, None] * n_q)
    coef = d_arg[:, :, None] * pairs * dg
    grad[keep] = _scatter(coef)
    return LossOutput(float(1.0 - val.mean()), grad, n_q, len(sim) - n_q)


def _stack(ctxs: Sequence[QueryContext], n: int):
    if len(ctxs) == 0:
        raise ValueError("need at least one query")
    for c in ctxs:
        if len(c.gains) != n:
            raise ValueError("context length does not match similarity row")
    return (
        np.stack([c.positives for c in ctxs]),
        np.stack([c.retrieved for c in ctxs]),
    )


def smooth_ap(scores, ctx: QueryContext, cfg: SmoothConfig = SmoothConfig()) -> float:
    if not ctx.positives.any():
        raise EmptyPositivesError("query has no relevant items")
    out = ap_loss_masked(np.asarray(scores, dtype=np.float64)[None], ctx.positives[None], ctx.retrieved[None], cfg.tau)
    return 1.0 - out.value


def smooth_ndcg(scores, ctx: QueryContext, cfg: SmoothConfig = SmoothConfig()) -> float:
    gains = ctx.gains if ctx.distances is None else ctx.gains_for(cfg.relevance)
    out = ndcg_loss_masked(np.asarray(scores, dtype=np.float64)[None], gains[None], ctx.retrieved[None], cfg.tau)
    if out.n_queries == 0:
        raise ZeroIdealError("every retrieved item has zero relevance")
    return 1.0 - out.value


def loss_ap(sim, ctxs: Sequence[QueryContext], cfg: SmoothConfig = SmoothConfig()) -> LossOutput:
    sim = np.asarray(sim, dtype=np.float64)
    pos, ret = _stack(ctxs, sim.shape[1])
    if not pos.any(axis=1).all():
        raise EmptyPositivesError("every query needs at least one positive")
    return ap_loss_masked(sim, pos, ret, cfg.tau)


def loss_ndcg(sim, ctxs: Sequence[QueryContext], cfg: SmoothConfig = SmoothConfig()) -> LossOutput:
    sim = np.asarray(sim, dtype=np.float64)
    _, ret = _stack(ctxs, sim.shape[1])
    gains = np.stack([c.gains if c.distances is None else c.gains_for(cfg.relevance) for c in ctxs])
    out = ndcg_loss_masked(sim, gains, ret, cfg.tau)
    if out.n_dropped:
        raise ZeroIdealError("every query needs a nonzero ideal DCG")
    return out

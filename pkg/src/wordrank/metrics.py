"""Exact ranking metrics, edit distance and relevance functions.

Everything here is non-differentiable and serves as ground truth for the
smooth surrogates in :mod:`wordrank.smooth`.

Rankings are obtained by a stable descending sort on the scores, so ties
are broken toward the smaller gallery index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "EVAL_GRADES",
    "RelevanceSpec",
    "QueryContext",
    "EmptyPositivesError",
    "ZeroIdealError",
    "levenshtein",
    "edit_distance_matrix",
    "relevance",
    "rank_of",
    "ranking",
    "average_precision",
    "mean_average_precision",
    "dcg",
    "idcg",
    "ndcg",
    "top_n_mean_edit_distance",
    "average_precision_rows",
    "ndcg_rows",
    "top_n_edit_distance_rows",
]

# Evaluation grades for edit distances 0..4; anything further is irrelevant.
EVAL_GRADES: dict[int, float] = {0: 20.0, 1: 15.0, 2: 10.0, 3: 5.0, 4: 3.0}


class EmptyPositivesError(ValueError):
    """Raised when AP is requested for a query without relevant items."""


class ZeroIdealError(ValueError):
    """Raised when nDCG is requested but every gallery item has zero gain."""


def levenshtein(a: str, b: str) -> int:
    """Minimum number of single-character edits turning ``a`` into ``b``."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def edit_distance_matrix(rows: Sequence[str], cols: Sequence[str]) -> np.ndarray:
    """Pairwise Levenshtein distances as an integer matrix."""
    cache: dict[tuple[str, str], int] = {}
    out = np.empty((len(rows), len(cols)), dtype=np.int64)
    for i, a in enumerate(rows):
        for j, b in enumerate(cols):
            key = (a, b) if a <= b else (b, a)
            d = cache.get(key)
            if d is None:
                d = cache[key] = levenshtein(a, b)
            out[i, j] = d
    return out


@dataclass(frozen=True)
class RelevanceSpec:
    """How a candidate transcription is graded against the query.

    ``binary`` gives 1 on exact match, ``linear`` gives
    ``max(0, gamma - d)`` and ``table`` looks the edit distance ``d`` up in
    ``table`` (0 when absent).
    """

    mode: str = "binary"
    gamma: int = 4
    table: Mapping[int, float] = field(default_factory=lambda: dict(EVAL_GRADES))

    def __post_init__(self):
        if self.mode not in ("binary", "linear", "table"):
            raise ValueError(f"unknown relevance mode {self.mode!r}")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.mode == "table":
            keys = sorted(self.table)
            vals = [self.table[k] for k in keys]
            if any(v < 0 for v in vals) or any(b > a for a, b in zip(vals, vals[1:])):
                raise ValueError("table scores must be non-negative and non-increasing")

    @classmethod
    def binary(cls) -> "RelevanceSpec":
        return cls("binary")

    @classmethod
    def linear(cls, gamma: int = 4) -> "RelevanceSpec":
        return cls("linear", gamma=gamma)

    @classmethod
    def evaluation(cls) -> "RelevanceSpec":
        return cls("table", table=dict(EVAL_GRADES))

    def from_distance(self, d):
        """Vectorised grade for edit distance(s) ``d``."""
        d = np.asarray(d)
        if self.mode == "binary":
            out = (d == 0).astype(np.float64)
        elif self.mode == "linear":
            out = np.maximum(0, self.gamma - d).astype(np.float64)
        else:
            out = np.zeros(d.shape, dtype=np.float64)
            for k, v in self.table.items():
                out[d == k] = v
        return out if out.ndim else float(out)


def relevance(spec: RelevanceSpec, query: str, candidate: str) -> float:
    if spec.mode == "binary":
        return float(query == candidate)
    return spec.from_distance(levenshtein(query, candidate))


@dataclass(frozen=True)
class QueryContext:
    """Everything about a query that is independent of the scores.

    Attributes
    ----------
    gains : graded relevance of every gallery item (used by nDCG).
    positives : boolean mask of exact matches (used by AP).
    retrieved : boolean mask of the items taking part in the ranking;
        items outside it (e.g. the query itself in QbE) are ignored.
    distances : edit distance of every gallery item to the query, if known.
    """

    gains: np.ndarray
    positives: np.ndarray
    retrieved: np.ndarray
    distances: np.ndarray | None = None
    query: str | None = None
    gallery: tuple[str, ...] | None = None

    def __post_init__(self):
        n = len(self.gains)
        if len(self.positives) != n or len(self.retrieved) != n:
            raise ValueError("gains, positives and retrieved must have equal length")
        if np.any(self.positives & ~self.retrieved):
            raise ValueError("positives must be a subset of the retrieved set")

    @classmethod
    def from_transcriptions(
        cls,
        query: str,
        gallery: Sequence[str],
        spec: RelevanceSpec | None = None,
        exclude: Sequence[int] = (),
    ) -> "QueryContext":
        spec = spec or RelevanceSpec.evaluation()
        dist = edit_distance_matrix([query], gallery)[0]
        retrieved = np.ones(len(gallery), dtype=bool)
        retrieved[list(exclude)] = False
        return cls(
            gains=np.asarray(spec.from_distance(dist), dtype=np.float64).reshape(-1),
            positives=(dist == 0) & retrieved,
            retrieved=retrieved,
            distances=dist,
            query=query,
            gallery=tuple(gallery),
        )

    @classmethod
    def from_relevance(cls, gains, positives=None, retrieved=None) -> "QueryContext":
        """Build a context straight from a relevance vector.

        Without explicit ``positives`` the items with the maximal nonzero
        gain are taken as positives.
        """
        gains = np.asarray(gains, dtype=np.float64)
        if retrieved is None:
            retrieved = np.ones(len(gains), dtype=bool)
        retrieved = np.asarray(retrieved, dtype=bool)
        if positives is None:
            top = gains[retrieved].max(initial=0.0)
            positives = (gains == top) & (gains > 0) & retrieved
        return cls(gains=gains, positives=np.asarray(positives, dtype=bool), retrieved=retrieved)

    def gains_for(self, spec: RelevanceSpec | None) -> np.ndarray:
        if spec is None:
            return self.gains
        if self.distances is None:
            raise ValueError("context has no transcriptions to grade with a new spec")
        return np.asarray(spec.from_distance(self.distances), dtype=np.float64).reshape(-1)

    @property
    def ideal_order(self) -> np.ndarray:
        """Retrieved indices sorted by descending gain (stable)."""
        idx = np.flatnonzero(self.retrieved)
        return idx[np.argsort(-self.gains[idx], kind="stable")]


def _check_scores(scores, n: int) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or len(scores) != n:
        raise ValueError(f"expected {n} scores, got shape {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    return scores


def ranking(scores, retrieved=None) -> np.ndarray:
    """Gallery indices in descending score order; ties keep index order."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    if retrieved is not None:
        order = order[np.asarray(retrieved, dtype=bool)[order]]
    return order


def rank_of(i: int, scores, subset=None) -> int:
    """1 + number of items in ``subset`` scoring strictly above item ``i``."""
    scores = np.asarray(scores, dtype=np.float64)
    subset = np.arange(len(scores)) if subset is None else np.asarray(subset)
    if i not in set(subset.tolist()):
        raise IndexError(f"item {i} is not part of the subset")
    return 1 + int(np.sum(scores[subset] > scores[i]))


def average_precision(scores, ctx: QueryContext) -> float:
    scores = _check_scores(scores, len(ctx.gains))
    n_pos = int(ctx.positives.sum())
    if n_pos == 0:
        raise EmptyPositivesError("query has no relevant items")
    rel = ctx.positives[ranking(scores, ctx.retrieved)]
    hits = np.cumsum(rel)
    ranks = np.arange(1, len(rel) + 1)
    return float(np.sum((hits / ranks)[rel]) / n_pos)


def mean_average_precision(per_query: Sequence[float]) -> float:
    if len(per_query) == 0:
        raise ValueError("mAP needs at least one query")
    return float(np.mean(per_query))


def _discounts(n: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, n + 2))


def dcg(scores, ctx: QueryContext, spec: RelevanceSpec | None = None) -> float:
    scores = _check_scores(scores, len(ctx.gains))
    gains = ctx.gains_for(spec)[ranking(scores, ctx.retrieved)]
    return float(np.sum(gains * _discounts(len(gains))))


def idcg(ctx: QueryContext, spec: RelevanceSpec | None = None) -> float:
    gains = ctx.gains_for(spec)[ctx.retrieved]
    gains = np.sort(gains)[::-1]
    return float(np.sum(gains * _discounts(len(gains))))


def ndcg(scores, ctx: QueryContext, spec: RelevanceSpec | None = None) -> float:
    ideal = idcg(ctx, spec)
    if ideal <= 0:
        raise ZeroIdealError("every retrieved item has zero relevance")
    return dcg(scores, ctx, spec) / ideal


def top_n_mean_edit_distance(scores, ctx: QueryContext, n: int, ideal: bool = False) -> float:
    """Mean edit distance of the top ``n`` results to the query.

    With ``ideal=True`` the ranking sorts by edit distance instead of score,
    giving the lower envelope any model curve is bounded by.
    """
    if ctx.distances is None:
        raise ValueError("context carries no edit distances")
    n_ret = int(ctx.retrieved.sum())
    if not 1 <= n <= n_ret:
        raise ValueError(f"n must be in [1, {n_ret}], got {n}")
    if ideal:
        order = ranking(-ctx.distances.astype(np.float64), ctx.retrieved)
    else:
        order = ranking(_check_scores(scores, len(ctx.gains)), ctx.retrieved)
    return float(np.mean(ctx.distances[order[:n]]))


def _row_rankings(scores: np.ndarray, retrieved: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # excluded items sink to the bottom; they are masked out again below
    keyed = np.where(retrieved, scores, -np.inf)
    order = np.argsort(-keyed, axis=1, kind="stable")
    return order, np.take_along_axis(retrieved, order, axis=1)


def average_precision_rows(scores, positives, retrieved=None) -> np.ndarray:
    """Exact AP of every row of a score matrix; NaN where a row has no positive."""
    scores = np.asarray(scores, dtype=np.float64)
    retrieved = np.ones(scores.shape, dtype=bool) if retrieved is None else np.asarray(retrieved, dtype=bool)
    positives = np.asarray(positives, dtype=bool) & retrieved
    order, valid = _row_rankings(scores, retrieved)
    rel = np.take_along_axis(positives, order, axis=1) & valid
    hits = np.cumsum(rel, axis=1)
    prec = hits / np.arange(1, scores.shape[1] + 1)
    n_pos = rel.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n_pos > 0, np.sum(prec * rel, axis=1) / n_pos, np.nan)


def ndcg_rows(scores, gains, retrieved=None) -> np.ndarray:
    """Exact nDCG of every row; NaN where the ideal DCG is zero."""
    scores = np.asarray(scores, dtype=np.float64)
    retrieved = np.ones(scores.shape, dtype=bool) if retrieved is None else np.asarray(retrieved, dtype=bool)
    gains = np.where(retrieved, np.asarray(gains, dtype=np.float64), 0.0)
    order, _ = _row_rankings(scores, retrieved)
    disc = _discounts(scores.shape[1])
    actual = np.take_along_axis(gains, order, axis=1) @ disc
    ideal = -np.sort(-gains, axis=1) @ disc
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(ideal > 0, actual / ideal, np.nan)


def top_n_edit_distance_rows(scores, distances, retrieved=None, max_n: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Mean top-n edit distance curves (model, ideal) averaged over rows."""
    scores = np.asarray(scores, dtype=np.float64)
    distances = np.asarray(distances)
    retrieved = np.ones(scores.shape, dtype=bool) if retrieved is None else np.asarray(retrieved, dtype=bool)
    max_n = min(max_n, int(retrieved.sum(axis=1).min()))
    model_order, _ = _row_rankings(scores, retrieved)
    ideal_order, _ = _row_rankings(-distances.astype(np.float64), retrieved)
    n = np.arange(1, max_n + 1)
    model = np.cumsum(np.take_along_axis(distances, model_order[:, :max_n], axis=1), axis=1) / n
    ideal = np.cumsum(np.take_along_axis(distances, ideal_order[:, :max_n], axis=1), axis=1) / n
    return model.mean(axis=0), ideal.mean(axis=0)

"""Query-by-string / query-by-example retrieval and evaluation reports."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset
from .encoders import WordSample
from .metrics import (
    RelevanceSpec,
    average_precision_rows,
    edit_distance_matrix,
    ndcg_rows,
    top_n_edit_distance_rows,
)
from .model import WordSpotterModel

log = logging.getLogger(__name__)

__all__ = [
    "RetrievalResult",
    "EvalReport",
    "query_by_string",
    "query_by_example",
    "evaluate",
    "write_report",
    "BOX_ED_CAP",
]

BOX_ED_CAP = 7


@dataclass
class RetrievalResult:
    query: str
    ranked_ids: list[str]
    similarities: np.ndarray
    transcriptions: list[str]
    edit_distances: np.ndarray

    def format(self, top: int = 10) -> str:
        lines = [f"Query: {self.query}"]
        for rank, (sid, word, sim, ed) in enumerate(
            zip(self.ranked_ids[:top], self.transcriptions, self.similarities, self.edit_distances), 1
        ):
            flag = "*" if ed == 0 else " "
            lines.append(f"{rank:3d} {flag} {word:<16s} ED={ed:<2d} sim={sim:+.4f}  {sid}")
        return "\n".join(lines)


def _rank(query_label: str, query_word: str, sims: np.ndarray, gallery: Sequence[WordSample]) -> RetrievalResult:
    ids = np.array([g.id for g in gallery])
    # descending similarity, ties by ascending id
    order = np.lexsort((ids, -sims))
    words = [gallery[i].transcription for i in order]
    eds = edit_distance_matrix([query_word], words)[0] if words else np.zeros(0, dtype=np.int64)
    return RetrievalResult(query_label, ids[order].tolist(), sims[order], words, eds)


def query_by_string(text: str, gallery: Sequence[WordSample], model: WordSpotterModel) -> RetrievalResult:
    text = text.lower()
    q = model.embed_strings([text])[0]
    sims = model.embed_samples(gallery) @ q if gallery else np.zeros(0)
    return _rank(text, text, sims, gallery)


def query_by_example(sample: WordSample, gallery: Sequence[WordSample], model: WordSpotterModel) -> RetrievalResult:
    """Rank ``gallery`` against ``sample``; the sample itself is left out."""
    rest = [g for g in gallery if g.id != sample.id]
    q = model.embed_samples([sample])[0]
    sims = model.embed_samples(rest) @ q if rest else np.zeros(0)
    return _rank(sample.id, sample.transcription, sims, rest)


@dataclass
class EvalReport:
    qbs_map: float
    qbs_ndcg: float
    qbe_map: float
    qbe_ndcg: float
    n_qbs: int
    n_qbe_ap: int
    n_qbe_ndcg: int
    topn_model: np.ndarray
    topn_ideal: np.ndarray
    box_groups: dict[int, np.ndarray] = field(repr=False)
    dropped: dict[str, int] = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "qbs": {"mAP": self.qbs_map, "nDCG": self.qbs_ndcg, "queries": self.n_qbs},
            "qbe": {"mAP": self.qbe_map, "nDCG": self.qbe_ndcg, "queries_ap": self.n_qbe_ap, "queries_ndcg": self.n_qbe_ndcg},
            "top10_mean_ed": {"model": float(self.topn_model[9]), "ideal": float(self.topn_ideal[9])}
            if len(self.topn_model) >= 10
            else {},
            "dropped_queries": self.dropped,
            "query_protocol": "QbS queries are the unique test transcriptions; QbE queries are all test samples, self excluded",
        }


def _nanmean(x: np.ndarray) -> float:
    x = x[~np.isnan(x)]
    return float(x.mean()) if len(x) else float("nan")


def evaluate(
    model: WordSpotterModel,
    dataset: Dataset,
    relevance: RelevanceSpec | None = None,
    split: str = "test",
    max_n: int = 50,
    params=None,
    with_qbe: bool = True,
    with_extras: bool = True,
) -> EvalReport:
    """QbS and QbE mAP / nDCG on one split, plus top-n and box-plot data.

    AP uses exact-match relevance; nDCG grades by ``relevance`` (evaluation
    table by default). Queries without positives (AP) or with zero ideal
    DCG (nDCG) are dropped and counted.
    """
    relevance = relevance or RelevanceSpec.evaluation()
    gallery = dataset.split(split)
    if not gallery:
        raise ValueError(f"split {split!r} is empty")
    lex_ed = dataset.edit_distances
    g_lab = dataset.labels(gallery)
    g_emb = model.embed_samples(gallery, params)

    q_words = sorted({s.transcription for s in gallery})
    q_lab = np.array([dataset.lexicon.index(w) for w in q_words])
    q_emb = model.embed_strings(q_words, params)
    S = q_emb @ g_emb.T
    D = lex_ed[np.ix_(q_lab, g_lab)]
    qbs_ap = average_precision_rows(S, D == 0)
    qbs_nd = ndcg_rows(S, relevance.from_distance(D))
    dropped = {"qbs_ap": int(np.isnan(qbs_ap).sum()), "qbs_ndcg": int(np.isnan(qbs_nd).sum())}

    qbe_map = qbe_ndcg = float("nan")
    n_qbe_ap = n_qbe_nd = 0
    if with_qbe:
        Se = g_emb @ g_emb.T
        De = lex_ed[np.ix_(g_lab, g_lab)]
        ret = ~np.eye(len(gallery), dtype=bool)
        qbe_ap = average_precision_rows(Se, De == 0, ret)
        qbe_nd = ndcg_rows(Se, relevance.from_distance(De), ret)
        qbe_map, qbe_ndcg = _nanmean(qbe_ap), _nanmean(qbe_nd)
        n_qbe_ap, n_qbe_nd = int((~np.isnan(qbe_ap)).sum()), int((~np.isnan(qbe_nd)).sum())
        dropped.update(qbe_ap=len(gallery) - n_qbe_ap, qbe_ndcg=len(gallery) - n_qbe_nd)
    if any(dropped.values()):
        log.info("dropped queries: %s", dropped)

    topn_model = topn_ideal = np.zeros(0)
    box: dict[int, np.ndarray] = {}
    if with_extras:
        topn_model, topn_ideal = top_n_edit_distance_rows(S, D, max_n=max_n)
        groups = np.minimum(D, BOX_ED_CAP)
        box = {k: S[groups == k] for k in range(BOX_ED_CAP + 1)}

    return EvalReport(
        qbs_map=_nanmean(qbs_ap),
        qbs_ndcg=_nanmean(qbs_nd),
        qbe_map=qbe_map,
        qbe_ndcg=qbe_ndcg,
        n_qbs=len(q_words),
        n_qbe_ap=n_qbe_ap,
        n_qbe_ndcg=n_qbe_nd,
        topn_model=topn_model,
        topn_ideal=topn_ideal,
        box_groups=box,
        dropped=dropped,
    )


def write_report(report: EvalReport, out_dir, meta: dict | None = None) -> dict[str, Path]:
    """Write metrics.csv, topn.csv, boxplot.csv and summary.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / f"{k}.csv" for k in ("metrics", "topn", "boxplot")}
    paths["summary"] = out / "summary.json"
    with open(paths["metrics"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "metric", "value"])
        w.writerow(["QbS", "mAP", repr(report.qbs_map)])
        w.writerow(["QbS", "nDCG", repr(report.qbs_ndcg)])
        w.writerow(["QbE", "mAP", repr(report.qbe_map)])
        w.writerow(["QbE", "nDCG", repr(report.qbe_ndcg)])
    with open(paths["topn"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "model_ed", "ideal_ed"])
        for n, (m, i) in enumerate(zip(report.topn_model, report.topn_ideal), 1):
            w.writerow([n, repr(float(m)), repr(float(i))])
    with open(paths["boxplot"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["edit_distance", "similarity"])
        for k, vals in report.box_groups.items():
            label = f"{k}+" if k == BOX_ED_CAP else str(k)
            for v in vals:
                w.writerow([label, repr(float(v))])
    summary = report.summary()
    summary.update(meta or {})
    paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return paths

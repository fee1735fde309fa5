"""Joint training of the string and visual encoders on ranking objectives.

Each batch of N (sample, transcription) pairs is used three ways: visual
queries against the visual batch, string queries against the string batch
and string queries against the visual batch. Same-modality queries leave
themselves out of the gallery; cross-modal queries keep their own sample,
which is their true match. An L1 term pulls each visual embedding onto the
(frozen) embedding of its transcription.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .core import Adam, OptimizerConfig, Params, clip_global_norm, config_hash
from .data import Dataset
from .encoders import WordSample
from .model import WordSpotterModel
from .retrieval import evaluate
from .smooth import ap_loss_masked, ndcg_loss_masked, pairwise_terms

log = logging.getLogger(__name__)

__all__ = [
    "TERMS",
    "MODE_TERMS",
    "TrainConfig",
    "Batch",
    "CombinedLoss",
    "weighted_sample_epoch",
    "mix_within_class",
    "combined_loss",
    "train",
    "TrainResult",
]

TERMS = ("img_ap", "img_ndcg", "str_ndcg", "cross_ap", "cross_ndcg", "l1")
MODE_TERMS = {
    "join": TERMS,
    "ap": ("img_ap", "cross_ap", "l1"),
    "ndcg": ("img_ndcg", "str_ndcg", "cross_ndcg", "l1"),
}
ARCH_KEYS = ("char_dim", "rnn_hidden", "proj", "head_hidden", "window", "depth")
HISTORY_FIELDS = ("epoch", "lr", "loss") + TERMS + ("clipped", "test_qbs_map", "test_qbs_ndcg", "test_qbe_map", "test_qbe_ndcg")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "join"
    batch_size: int = 48
    epochs: int = 30
    samples_per_epoch: int = 9000
    alpha: float = 0.5
    tau: float = 0.1
    gamma: int = 4
    optimizer: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig(learning_rate=1e-3, decay_epochs=(22, 27))
    )
    seed: int = 0
    noise_sigma: float = 0.0
    clip_norm: float = 5.0
    per_class: int = 4
    mix: bool = True
    term_weights: tuple[tuple[str, float], ...] = ()
    arch: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        if self.mode not in MODE_TERMS:
            raise ValueError(f"mode must be one of {sorted(MODE_TERMS)}, got {self.mode!r}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.per_class < 1:
            raise ValueError("per_class must be positive")
        if self.epochs < 1 or self.samples_per_epoch < 1:
            raise ValueError("epochs and samples_per_epoch must be positive")
        if self.alpha < 0 or self.noise_sigma < 0:
            raise ValueError("alpha and noise_sigma must be non-negative")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.gamma < 1:
            raise ValueError("gamma must be a positive integer")
        if isinstance(self.optimizer, dict):
            object.__setattr__(self, "optimizer", OptimizerConfig(**self.optimizer))
        weights = dict(self.term_weights)
        unknown = set(weights) - set(TERMS)
        if unknown:
            raise ValueError(f"unknown loss terms {sorted(unknown)}")
        object.__setattr__(self, "term_weights", tuple(sorted(weights.items())))
        arch = dict(self.arch)
        unknown = set(arch) - set(ARCH_KEYS)
        if unknown:
            raise ValueError(f"unknown architecture keys {sorted(unknown)}")
        object.__setattr__(self, "arch", tuple(sorted((k, int(v)) for k, v in arch.items())))

    def weights(self) -> dict[str, float]:
        """Effective weight of every term: 0 outside the mode, else 1 unless overridden."""
        w = {t: (1.0 if t in MODE_TERMS[self.mode] else 0.0) for t in TERMS}
        for t, v in self.term_weights:
            if t in MODE_TERMS[self.mode]:
                w[t] = float(v)
        w["l1"] *= self.alpha
        return w

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizer"]["decay_epochs"] = list(self.optimizer.decay_epochs)
        d["term_weights"] = dict(self.term_weights)
        d["arch"] = dict(self.arch)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "optimizer" in d and isinstance(d["optimizer"], dict):
            opt = dict(d["optimizer"])
            if "decay_epochs" in opt:
                opt["decay_epochs"] = tuple(opt["decay_epochs"])
            d["optimizer"] = OptimizerConfig(**opt)
        if "term_weights" in d and isinstance(d["term_weights"], dict):
            d["term_weights"] = tuple(d["term_weights"].items())
        if "arch" in d and isinstance(d["arch"], dict):
            d["arch"] = tuple(d["arch"].items())
        return cls(**d)


@dataclass
class Batch:
    features: list[np.ndarray]
    transcriptions: list[str]
    labels: np.ndarray

    def __post_init__(self):
        if not len(self.features) == len(self.transcriptions) == len(self.labels):
            raise ValueError("batch fields are misaligned")


def weighted_sample_epoch(
    samples: Sequence[WordSample],
    labels: np.ndarray,
    samples_per_epoch: int,
    batch_size: int,
    rng: np.random.Generator,
    per_class: int = 1,
) -> Iterator[np.ndarray]:
    """Yield index batches drawn with replacement, balanced across classes.

    Each draw picks a sample with probability proportional to
    ``1 / count(its class)``, so every class is equally likely. With
    ``per_class > 1`` every draw is followed by ``per_class - 1`` further
    samples of the same class, which guarantees in-batch positives. A
    trailing batch smaller than 2 is dropped.
    """
    if len(samples) == 0:
        raise ValueError("cannot sample from an empty dataset")
    if per_class < 1:
        raise ValueError("per_class must be positive")
    labels = np.asarray(labels)
    classes, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    w = 1.0 / counts[inverse]
    n_groups = -(-samples_per_epoch // per_class)
    draws = rng.choice(len(samples), size=n_groups, replace=True, p=w / w.sum())
    if per_class > 1:
        members = [np.flatnonzero(inverse == c) for c in range(len(classes))]
        draws = np.concatenate(
            [[d, *rng.choice(members[inverse[d]], size=per_class - 1, replace=True)] for d in draws]
        )[:samples_per_epoch]
    for start in range(0, samples_per_epoch, batch_size):
        chunk = draws[start : start + batch_size]
        if len(chunk) >= 2:
            yield chunk


def mix_within_class(
    idx: np.ndarray, samples: Sequence[WordSample], members: dict, rng: np.random.Generator
) -> list[np.ndarray]:
    """Fresh views built element-wise from the training samples of the same word.

    Samples of one word share a length, so entry ``(t, d)`` of the new view is
    entry ``(t, d)`` of a randomly chosen sibling. Content is preserved while
    the per-element noise is recombined, which breaks memorisation of the
    few stored noise patterns.
    """
    out = []
    for i in idx:
        stack = np.stack([samples[p].features for p in members[samples[i].transcription]])
        pick = rng.integers(len(stack), size=stack.shape[1:])
        out.append(np.take_along_axis(stack, pick[None], axis=0)[0])
    return out


@dataclass
class CombinedLoss:
    value: float
    grads: Params
    terms: dict[str, float]
    dropped: dict[str, int]


def _self_masks(ed: np.ndarray, gamma: int):
    n = len(ed)
    ret = ~np.eye(n, dtype=bool)
    return ret, (ed == 0) & ret, np.maximum(0, gamma - ed).astype(np.float64) * ret


def combined_loss(
    batch: Batch,
    model: WordSpotterModel,
    cfg: TrainConfig,
    edit_distances: np.ndarray,
    params: Params | None = None,
    l1_target: np.ndarray | None = None,
    with_grads: bool = True,
) -> CombinedLoss:
    """Weighted sum of the ranking terms and the L1 alignment term.

    ``edit_distances`` is the batch x batch Levenshtein matrix. The L1 term
    treats the string embeddings as constants (``l1_target`` replaces them
    when given), so its gradient reaches the visual encoder only. With
    ``with_grads=False`` only the forward pass runs and ``grads`` is empty.
    """
    params = model.params if params is None else params
    weights = cfg.weights()
    ex, x_cache = model.visual_encoder.forward(batch.features, params)
    # repeated words are encoded once; rows are expanded and gradients summed back
    words, inverse = np.unique(np.asarray(batch.transcriptions, dtype=object), return_inverse=True)
    ey_unique, y_cache = model.string_encoder.forward(list(words), params)
    ey = ey_unique[inverse]
    ed = np.asarray(edit_distances)
    ret_self, pos_self, gain_self = _self_masks(ed, cfg.gamma)
    ret_cross = np.ones_like(ret_self)
    pos_cross = ed == 0
    gain_cross = np.maximum(0, cfg.gamma - ed).astype(np.float64)

    terms: dict[str, float] = {}
    dropped: dict[str, int] = {}
    d_ex = np.zeros_like(ex)
    d_ey = np.zeros_like(ey)
    sxx = syy = syx = None
    pxx = pyx = None
    if weights["img_ap"] or weights["img_ndcg"]:
        sxx = ex @ ex.T
        pxx = pairwise_terms(sxx, cfg.tau)
    if weights["str_ndcg"]:
        syy = ey @ ey.T
    if weights["cross_ap"] or weights["cross_ndcg"]:
        syx = ey @ ex.T
        pyx = pairwise_terms(syx, cfg.tau)

    def add(name, out, sim_kind):
        terms[name] = out.value
        dropped[name] = out.n_dropped
        w = weights[name]
        g = w * out.gradient
        if sim_kind == "xx":
            d_ex[:] += (g + g.T) @ ex
        elif sim_kind == "yy":
            d_ey[:] += (g + g.T) @ ey
        else:
            d_ey[:] += g @ ex
            d_ex[:] += g.T @ ey

    if weights["img_ap"]:
        add("img_ap", ap_loss_masked(sxx, pos_self, ret_self, cfg.tau, pxx), "xx")
    if weights["img_ndcg"]:
        add("img_ndcg", ndcg_loss_masked(sxx, gain_self, ret_self, cfg.tau, pxx), "xx")
    if weights["str_ndcg"]:
        add("str_ndcg", ndcg_loss_masked(syy, gain_self, ret_self, cfg.tau), "yy")
    if weights["cross_ap"]:
        add("cross_ap", ap_loss_masked(syx, pos_cross, ret_cross, cfg.tau, pyx), "yx")
    if weights["cross_ndcg"]:
        add("cross_ndcg", ndcg_loss_masked(syx, gain_cross, ret_cross, cfg.tau, pyx), "yx")
    if weights["l1"]:
        target = ey if l1_target is None else l1_target
        diff = ex - target
        terms["l1"] = float(np.abs(diff).sum(axis=1).mean())
        d_ex += weights["l1"] * np.sign(diff) / len(ex)

    total = sum(weights[k] * v for k, v in terms.items())
    if not np.isfinite(total):
        raise FloatingPointError(f"non-finite loss: {terms}")
    if not with_grads:
        return CombinedLoss(float(total), {}, terms, dropped)
    grads = model.visual_encoder.backward(d_ex, x_cache, params)
    d_ey_unique = np.zeros_like(ey_unique)
    np.add.at(d_ey_unique, inverse, d_ey)
    grads.update(model.string_encoder.backward(d_ey_unique, y_cache, params))
    return CombinedLoss(float(total), grads, terms, dropped)


@dataclass
class TrainResult:
    model: WordSpotterModel
    best_params: Params
    best_epoch: int
    history: list[dict]
    config: TrainConfig

    def history_csv(self) -> str:
        return history_to_csv(self.history)


def history_to_csv(history: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_FIELDS)
    for row in history:
        w.writerow([row[k] if isinstance(row[k], (int, str)) else repr(float(row[k])) for k in HISTORY_FIELDS])
    return buf.getvalue()


def train(
    dataset: Dataset,
    cfg: TrainConfig = TrainConfig(),
    run_dir=None,
    evaluate_every: int = 1,
    eval_qbe: bool = True,
) -> TrainResult:
    """Run the full schedule; keep the parameters with the best test QbS mAP.

    With ``run_dir`` the manifest, metric history (CSV) and the best and
    final checkpoints are written there.
    """
    train_set, test_set = dataset.train, dataset.test
    if not train_set:
        raise ValueError("dataset has no training samples")
    rng = np.random.default_rng(cfg.seed)
    model = WordSpotterModel(dataset.alphabet, seed=int(rng.integers(2**31)), **dict(cfg.arch))
    opt = Adam(model.params, cfg.optimizer)
    lex_ed = dataset.edit_distances
    labels = dataset.labels(train_set)
    members: dict[str, list[int]] = {}
    for i, s in enumerate(train_set):
        members.setdefault(s.transcription, []).append(i)
    history: list[dict] = []
    best_map, best_epoch, best_params = -1.0, -1, model.copy_params()

    run_path = Path(run_dir) if run_dir is not None else None
    if run_path is not None:
        run_path.mkdir(parents=True, exist_ok=True)
        manifest = {
            "config": cfg.to_dict(),
            "config_hash": config_hash(cfg.to_dict()),
            "seed": cfg.seed,
            "dataset_hash": dataset.content_hash(),
            "loss_terms": {k: v for k, v in cfg.weights().items() if v},
            "invocation": sys.argv,
        }
        (run_path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        sums = dict.fromkeys(("loss",) + TERMS, 0.0)
        n_steps = clipped = 0
        lr = cfg.optimizer.lr_at(epoch)
        for idx in weighted_sample_epoch(
            train_set, labels, cfg.samples_per_epoch, cfg.batch_size, rng, cfg.per_class
        ):
            if cfg.mix:
                feats = mix_within_class(idx, train_set, members, rng)
            else:
                feats = [train_set[i].features for i in idx]
            if cfg.noise_sigma > 0:
                feats = [f + cfg.noise_sigma * rng.standard_normal(f.shape) for f in feats]
            batch = Batch(feats, [train_set[i].transcription for i in idx], labels[idx])
            try:
                out = combined_loss(batch, model, cfg, lex_ed[np.ix_(batch.labels, batch.labels)])
            except FloatingPointError as exc:
                raise FloatingPointError(f"epoch {epoch} step {n_steps}: {exc}") from exc
            norm = clip_global_norm(out.grads, cfg.clip_norm)
            if norm > cfg.clip_norm:
                clipped += 1
            lr = opt.step(model.params, out.grads, epoch)
            sums["loss"] += out.value
            for k, v in out.terms.items():
                sums[k] += v
            n_steps += 1
        if clipped:
            log.info("epoch %d: clipped %d/%d steps at norm %.1f", epoch, clipped, n_steps, cfg.clip_norm)

        row = {"epoch": epoch, "lr": lr, "clipped": clipped}
        row.update({k: v / n_steps for k, v in sums.items()})
        if test_set and (epoch % evaluate_every == 0 or epoch == cfg.epochs - 1):
            rep = evaluate(model, dataset, with_qbe=eval_qbe, with_extras=False)
            row.update(test_qbs_map=rep.qbs_map, test_qbs_ndcg=rep.qbs_ndcg, test_qbe_map=rep.qbe_map, test_qbe_ndcg=rep.qbe_ndcg)
            if rep.qbs_map > best_map:
                best_map, best_epoch, best_params = rep.qbs_map, epoch, model.copy_params()
        else:
            row.update(dict.fromkeys(("test_qbs_map", "test_qbs_ndcg", "test_qbe_map", "test_qbe_ndcg"), float("nan")))
        history.append(row)
        log.info(
            "epoch %d loss %.4f qbs mAP %.4f nDCG %.4f (%.1fs)",
            epoch, row["loss"], row["test_qbs_map"], row["test_qbs_ndcg"], time.perf_counter() - t0,
        )

    if best_epoch < 0:
        best_epoch, best_params = cfg.epochs - 1, model.copy_params()
    result = TrainResult(model, best_params, best_epoch, history, cfg)
    if run_path is not None:
        (run_path / "history.csv").write_text(result.history_csv())
        meta = {"config_hash": config_hash(cfg.to_dict()), "seed": cfg.seed, "epochs_done": cfg.epochs}
        model.save(run_path / "final.ckpt", opt.state(), meta)
        WordSpotterModel(dataset.alphabet, params=best_params, **model.arch).save(
            run_path / "best.ckpt", meta={**meta, "best_epoch": best_epoch, "best_test_qbs_map": best_map}
        )
    return result

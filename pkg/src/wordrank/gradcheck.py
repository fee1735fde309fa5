"""Finite-difference suite for the ranking losses and the full training chain."""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

from .core import finite_difference_check
from .encoders import Alphabet, synth_render
from .metrics import QueryContext, edit_distance_matrix
from .model import WordSpotterModel
from .smooth import SmoothConfig, loss_ap, loss_ndcg
from .training import Batch, TrainConfig, combined_loss

__all__ = ["random_loss_batch", "loss_errors", "chain_error", "GradcheckReport", "run_suite"]

CHAIN_ARCH = dict(char_dim=6, rnn_hidden=5, proj=8, head_hidden=6, window=3, depth=2)
_LETTERS = Alphabet(string.ascii_lowercase[:6])


def random_loss_batch(rng: np.random.Generator, q: int = 8, n: int = 16):
    """Similarity matrix in [-1, 1] with graded relevance; every row has a positive."""
    sim = rng.uniform(-1.0, 1.0, size=(q, n))
    gains = rng.integers(0, 5, size=(q, n)).astype(np.float64)
    gains[np.arange(q), rng.integers(0, n, size=q)] = 4.0
    return sim, [QueryContext.from_relevance(g, positives=g == 4) for g in gains]


def loss_errors(seed: int, tau: float, q: int = 8, n: int = 16) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    sim, ctxs = random_loss_batch(rng, q, n)
    cfg = SmoothConfig(tau=tau)
    out = {}
    for name, fn in (("loss_ap", loss_ap), ("loss_ndcg", loss_ndcg)):
        grad = fn(sim, ctxs, cfg).gradient
        params = {"sim": sim.copy()}
        out[name] = finite_difference_check(lambda p: fn(p["sim"], ctxs, cfg).value, params, {"sim": grad})
    return out


def chain_error(seed: int, tau: float, batch_size: int = 4, mode: str = "join", max_coords: int | None = 4) -> float:
    """Encoders -> cosine similarities -> combined loss, on a small random model.

    The string embeddings inside the L1 term are held fixed, matching the
    stop-gradient the training step applies.
    """
    rng = np.random.default_rng(seed)
    model = WordSpotterModel(_LETTERS, seed=seed, **CHAIN_ARCH)
    base = ["".join(rng.choice(list(str(_LETTERS)), size=rng.integers(2, 6))) for _ in range(batch_size - 1)]
    words = base + [base[0]]  # one repeated word gives every AP query a chance at a positive
    feats = [synth_render(w, 0.3, int(rng.integers(2**31)), _LETTERS).features for w in words]
    batch = Batch(feats, words, np.arange(batch_size))
    ed = edit_distance_matrix(words, words)
    cfg = TrainConfig(mode=mode, tau=tau)
    target = model.embed_strings(words)
    out = combined_loss(batch, model, cfg, ed, l1_target=target)
    return finite_difference_check(
        lambda p: combined_loss(batch, model, cfg, ed, params=p, l1_target=target, with_grads=False).value,
        model.params,
        out.grads,
        max_coords=max_coords,
        rng=rng,
    )


@dataclass
class GradcheckReport:
    tolerance: float
    worst: dict[str, float] = field(default_factory=dict)
    failures: list[tuple[str, int, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def lines(self) -> list[str]:
        out = [f"{k:<18s} max relative error {v:.3e}" for k, v in sorted(self.worst.items())]
        out += [f"FAIL {name} seed={seed} tau={tau} error={err:.3e}" for name, seed, tau, err in self.failures]
        return out


def run_suite(
    seeds=range(100), taus=(0.1, 1.0), tolerance: float = 1e-3, chain: bool = True, chain_coords: int = 1
) -> GradcheckReport:
    """Loss gradients are checked on every coordinate; the chain probes
    ``chain_coords`` random coordinates of each parameter tensor per batch,
    which over 100 seeds still covers every tensor many times."""
    rep = GradcheckReport(tolerance)

    def record(name, seed, tau, err):
        key = f"{name}@tau={tau:g}"
        rep.worst[key] = max(rep.worst.get(key, 0.0), err)
        if not err <= tolerance:
            rep.failures.append((name, seed, tau, err))

    for tau in taus:
        for seed in seeds:
            for name, err in loss_errors(seed, tau).items():
                record(name, seed, tau, err)
            if chain:
                record("chain", seed, tau, chain_error(seed, tau, max_coords=chain_coords))
    return rep

"""String encoder (char embedding + 2-layer BiGRU) and visual-proxy encoder.

Both encoders map their input into the same 64-d unit sphere. They are
stateless objects describing an architecture; trainable weights live in a
shared parameter dict under the ``psi.`` (string) and ``phi.`` (visual)
prefixes, and each exposes ``forward`` / ``backward`` for the hand-derived
reverse pass.

The visual encoder does not see pixels. A "word image" here is a sequence
of noisy one-hot character vectors (see :func:`synth_render`), which keeps
the structure of the retrieval problem at a fraction of the cost.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import Params, l2_normalize, l2_normalize_backward

__all__ = [
    "Alphabet",
    "WordSample",
    "synth_render",
    "pad_sequences",
    "StringEncoder",
    "VisualEncoder",
]

EMBED_DIM = 64


class Alphabet:
    """Ordered character set with a char -> index map."""

    def __init__(self, chars: Iterable[str]):
        chars = tuple(chars)
        if len(set(chars)) != len(chars):
            raise ValueError("alphabet contains duplicate characters")
        if any(len(c) != 1 for c in chars):
            raise ValueError("alphabet entries must be single characters")
        self.chars = chars
        self.index = {c: i for i, c in enumerate(chars)}

    @classmethod
    def from_words(cls, words: Iterable[str]) -> "Alphabet":
        return cls(sorted(set("".join(words))))

    def __len__(self):
        return len(self.chars)

    def __eq__(self, other):
        return isinstance(other, Alphabet) and self.chars == other.chars

    def __repr__(self):
        return f"Alphabet({''.join(self.chars)!r})"

    def __str__(self):
        return "".join(self.chars)

    def encode(self, word: str) -> np.ndarray:
        try:
            return np.array([self.index[c] for c in word], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"character {exc.args[0]!r} of {word!r} is not in the alphabet") from None


@dataclass
class WordSample:
    id: str
    transcription: str
    features: np.ndarray
    split: str = "train"
    seed: int = 0
    sigma: float = 0.0


def synth_render(
    transcription: str,
    noise_sigma: float,
    rng_seed: int,
    alphabet: Alphabet,
    sample_id: str = "",
    split: str = "train",
) -> WordSample:
    """One-hot character sequence plus i.i.d. Gaussian noise."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    ids = alphabet.encode(transcription)
    feats = np.zeros((len(ids), len(alphabet)))
    feats[np.arange(len(ids)), ids] = 1.0
    if noise_sigma > 0:
        feats += noise_sigma * np.random.default_rng(rng_seed).standard_normal(feats.shape)
    return WordSample(sample_id, transcription, feats, split, rng_seed, noise_sigma)


def pad_sequences(seqs: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad a list of ``(T_i, ...)`` arrays; returns ``(padded, mask)``."""
    if len(seqs) == 0:
        raise ValueError("no sequences to pad")
    lengths = [len(s) for s in seqs]
    if min(lengths) == 0:
        raise ValueError("empty sequence")
    first = np.asarray(seqs[0])
    out = np.zeros((len(seqs), max(lengths)) + first.shape[1:], dtype=first.dtype)
    mask = np.zeros((len(seqs), max(lengths)))
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return out, mask


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _gru_forward(X, mask, W, U, b, reverse):
    """Run one GRU direction over a padded batch.

    Padded steps leave the state untouched, so the state after the last
    processed step is the final state of each sequence (for the reverse
    direction, the state after position 0).
    """
    B, T, _ = X.shape
    H = U.shape[0]
    XW = X @ W + b
    h = np.zeros((B, H))
    hs = np.zeros((B, T, H))
    steps = range(T - 1, -1, -1) if reverse else range(T)
    cache = []
    for t in steps:
        xw = XW[:, t]
        hu = h @ U[:, : 2 * H]
        z = _sigmoid(xw[:, :H] + hu[:, :H])
        r = _sigmoid(xw[:, H : 2 * H] + hu[:, H:])
        rh = r * h
        n = np.tanh(xw[:, 2 * H :] + rh @ U[:, 2 * H :])
        m = mask[:, t, None]
        h_new = m * ((1.0 - z) * h + z * n) + (1.0 - m) * h
        cache.append((t, h, z, r, rh, n))
        h = h_new
        hs[:, t] = h
    return hs, h, cache


def _gru_backward(X, mask, W, U, cache, d_hs, d_last):
    B, T, D = X.shape
    H = U.shape[0]
    dU = np.zeros_like(U)
    dXW = np.zeros((B, T, 3 * H))
    dh = d_last.copy()
    for t, h, z, r, rh, n in reversed(cache):
        dh = dh + d_hs[:, t]
        m = mask[:, t, None]
        d_new = m * dh
        d_prev = (1.0 - m) * dh + d_new * (1.0 - z)
        dz = d_new * (n - h)
        da_n = d_new * z * (1.0 - n * n)
        dU[:, 2 * H :] += rh.T @ da_n
        d_rh = da_n @ U[:, 2 * H :].T
        d_prev += d_rh * r
        da_zr = np.concatenate([dz * z * (1.0 - z), d_rh * h * r * (1.0 - r)], axis=1)
        dU[:, : 2 * H] += h.T @ da_zr
        d_prev += da_zr @ U[:, : 2 * H].T
        dXW[:, t, : 2 * H] = da_zr
        dXW[:, t, 2 * H :] = da_n
        dh = d_prev
    flat = dXW.reshape(-1, 3 * H)
    dW = X.reshape(-1, D).T @ flat
    db = flat.sum(axis=0)
    dX = dXW @ W.T
    return dX, dW, dU, db


class StringEncoder:
    """Characters -> embedding table -> BiGRU stack -> affine head -> unit 64-d."""

    prefix = "psi."

    def __init__(self, alphabet: Alphabet, char_dim: int = 32, hidden: int = 64, layers: int = 2, out_dim: int = EMBED_DIM):
        self.alphabet = alphabet
        self.char_dim = char_dim
        self.hidden = hidden
        self.layers = layers
        self.out_dim = out_dim

    def init_params(self, rng: np.random.Generator) -> Params:
        H = self.hidden
        p = {"psi.embed": rng.uniform(-1.0, 1.0, size=(len(self.alphabet), self.char_dim))}
        in_dim = self.char_dim
        for layer in range(self.layers):
            for d in "fb":
                k = f"psi.gru{layer}.{d}."
                p[k + "W"] = _uniform(rng, in_dim, (in_dim, 3 * H))
                p[k + "U"] = _uniform(rng, H, (H, 3 * H))
                p[k + "b"] = _uniform(rng, H, (3 * H,))
            in_dim = 2 * H
        p["psi.head.W"] = _uniform(rng, 2 * H, (2 * H, self.out_dim))
        p["psi.head.b"] = _uniform(rng, 2 * H, (self.out_dim,))
        return p

    def _batch(self, words: Sequence[str]):
        if isinstance(words, str):
            words = [words]
        if any(len(w) == 0 for w in words):
            raise ValueError("cannot encode an empty string")
        return pad_sequences([self.alphabet.encode(w) for w in words])

    def forward(self, words: Sequence[str], params: Params):
        ids, mask = self._batch(words)
        x = params["psi.embed"][ids]
        caches = []
        for layer in range(self.layers):
            k = f"psi.gru{layer}."
            hs_f, last_f, c_f = _gru_forward(x, mask, params[k + "f.W"], params[k + "f.U"], params[k + "f.b"], False)
            hs_b, last_b, c_b = _gru_forward(x, mask, params[k + "b.W"], params[k + "b.U"], params[k + "b.b"], True)
            caches.append((x, c_f, c_b))
            x = np.concatenate([hs_f, hs_b], axis=2)
        final = np.concatenate([last_f, last_b], axis=1)
        raw = final @ params["psi.head.W"] + params["psi.head.b"]
        return l2_normalize(raw), (ids, mask, caches, final, raw)

    def encode(self, words: Sequence[str], params: Params) -> np.ndarray:
        return self.forward(words, params)[0]

    def backward(self, d_emb: np.ndarray, cache, params: Params) -> Params:
        ids, mask, caches, final, raw = cache
        H = self.hidden
        grads = {}
        d_raw = l2_normalize_backward(raw, d_emb)
        grads["psi.head.W"] = final.T @ d_raw
        grads["psi.head.b"] = d_raw.sum(axis=0)
        d_final = d_raw @ params["psi.head.W"].T
        d_last_f, d_last_b = d_final[:, :H], d_final[:, H:]
        d_seq = np.zeros(caches[-1][0].shape[:2] + (2 * H,))
        for layer in reversed(range(self.layers)):
            x, c_f, c_b = caches[layer]
            k = f"psi.gru{layer}."
            dx_f, grads[k + "f.W"], grads[k + "f.U"], grads[k + "f.b"] = _gru_backward(
                x, mask, params[k + "f.W"], params[k + "f.U"], c_f, d_seq[:, :, :H], d_last_f
            )
            dx_b, grads[k + "b.W"], grads[k + "b.U"], grads[k + "b.b"] = _gru_backward(
                x, mask, params[k + "b.W"], params[k + "b.U"], c_b, d_seq[:, :, H:], d_last_b
            )
            d_seq = dx_f + dx_b
            d_last_f = d_last_b = np.zeros_like(d_last_f)
        d_embed = np.zeros_like(params["psi.embed"])
        np.add.at(d_embed, ids[mask > 0], d_seq[mask > 0])
        grads["psi.embed"] = d_embed
        return grads


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1])


def _windows(X: np.ndarray, width: int) -> np.ndarray:
    """Stack each step with its neighbours: ``(B, T, D) -> (B, T, width * D)``.

    Steps outside the sequence read as zeros; padded batches already hold
    zeros past each sequence's end.
    """
    if width == 1:
        return X
    half = width // 2
    B, T, D = X.shape
    padded = np.zeros((B, T + 2 * half, D))
    padded[:, half : half + T] = X
    return np.concatenate([padded[:, k : k + T] for k in range(width)], axis=2)


class VisualEncoder:
    """Local-window affine + ReLU per step, masked mean pool, two-layer head.

    Each step sees ``window`` neighbouring feature vectors, a 1-d analogue of
    a convolutional receptive field. Mean pooling makes the encoder
    indifferent to sequence length, the way global average pooling lets a
    CNN accept images of any width.
    """

    prefix = "phi."

    def __init__(
        self,
        in_dim: int,
        proj: int = 128,
        hidden: int = 128,
        out_dim: int = EMBED_DIM,
        window: int = 3,
        depth: int = 1,
    ):
        if window < 1 or window % 2 == 0:
            raise ValueError("window must be a positive odd integer")
        if depth < 1:
            raise ValueError("depth must be at least 1")
        self.depth = depth
        self.in_dim = in_dim
        self.proj = proj
        self.hidden = hidden
        self.out_dim = out_dim
        self.window = window

    def init_params(self, rng: np.random.Generator) -> Params:
        fan = self.in_dim * self.window
        params = {
            "phi.proj.W": _uniform(rng, fan, (fan, self.proj)),
            "phi.proj.b": _uniform(rng, fan, (self.proj,)),
        }
        for k in range(1, self.depth):
            params[f"phi.step{k}.W"] = _uniform(rng, self.proj, (self.proj, self.proj))
            params[f"phi.step{k}.b"] = _uniform(rng, self.proj, (self.proj,))
        return params | {
            "phi.fc1.W": _uniform(rng, self.proj, (self.proj, self.hidden)),
            "phi.fc1.b": _uniform(rng, self.proj, (self.hidden,)),
            "phi.fc2.W": _uniform(rng, self.hidden, (self.hidden, self.out_dim)),
            "phi.fc2.b": _uniform(rng, self.hidden, (self.out_dim,)),
        }

    def forward(self, seqs: Sequence[np.ndarray], params: Params):
        X, mask = pad_sequences([np.asarray(s, dtype=np.float64) for s in seqs])
        if X.shape[2] != self.in_dim:
            raise ValueError(f"expected {self.in_dim} features per step, got {X.shape[2]}")
        X = _windows(X, self.window)
        acts = [np.maximum(X @ params["phi.proj.W"] + params["phi.proj.b"], 0.0)]
        for k in range(1, self.depth):
            acts.append(np.maximum(acts[-1] @ params[f"phi.step{k}.W"] + params[f"phi.step{k}.b"], 0.0))
        A = acts[-1]
        lengths = mask.sum(axis=1, keepdims=True)
        pooled = np.einsum("btp,bt->bp", A, mask) / lengths
        h1 = np.tanh(pooled @ params["phi.fc1.W"] + params["phi.fc1.b"])
        raw = h1 @ params["phi.fc2.W"] + params["phi.fc2.b"]
        return l2_normalize(raw), (X, mask, lengths, acts, pooled, h1, raw)

    def encode(self, seqs: Sequence[np.ndarray], params: Params) -> np.ndarray:
        return self.forward(seqs, params)[0]

    def backward(self, d_emb: np.ndarray, cache, params: Params) -> Params:
        X, mask, lengths, acts, pooled, h1, raw = cache
        d_raw = l2_normalize_backward(raw, d_emb)
        g = {"phi.fc2.W": h1.T @ d_raw, "phi.fc2.b": d_raw.sum(axis=0)}
        d_a1 = (d_raw @ params["phi.fc2.W"].T) * (1.0 - h1 * h1)
        g["phi.fc1.W"] = pooled.T @ d_a1
        g["phi.fc1.b"] = d_a1.sum(axis=0)
        d_pooled = d_a1 @ params["phi.fc1.W"].T
        d_A = (d_pooled / lengths)[:, None, :] * mask[:, :, None]
        d_pre = d_A * (acts[-1] > 0)
        for k in range(self.depth - 1, 0, -1):
            g[f"phi.step{k}.W"] = _flat(acts[k - 1]).T @ _flat(d_pre)
            g[f"phi.step{k}.b"] = d_pre.sum(axis=(0, 1))
            d_pre = (d_pre @ params[f"phi.step{k}.W"].T) * (acts[k - 1] > 0)
        g["phi.proj.W"] = _flat(X).T @ _flat(d_pre)
        g["phi.proj.b"] = d_pre.sum(axis=(0, 1))
        return g

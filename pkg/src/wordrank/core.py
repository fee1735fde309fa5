"""Numerical substrate: normalisation, cosine similarity, Adam, gradient checks.

Parameters are plain ``dict[str, np.ndarray]`` of float64 arrays. Encoders
prefix their names (``psi.``, ``phi.``) so a single dict holds the whole
model and a single optimizer updates it.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

log = logging.getLogger(__name__)

Params = dict[str, np.ndarray]

__all__ = [
    "Params",
    "l2_normalize",
    "l2_normalize_backward",
    "cosine_similarity",
    "OptimizerConfig",
    "Adam",
    "clip_global_norm",
    "finite_difference_check",
    "save_checkpoint",
    "load_checkpoint",
    "config_hash",
]


def l2_normalize(v: np.ndarray, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=axis, keepdims=True)
    if np.any(norm == 0):
        raise ValueError("cannot normalize a zero vector")
    return v / norm


def l2_normalize_backward(v: np.ndarray, d_out: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. ``v`` of ``l2_normalize(v)`` given ``d_out`` (row-wise)."""
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    y = v / norm
    return (d_out - y * np.sum(y * d_out, axis=-1, keepdims=True)) / norm


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dot product of unit vectors; works on single vectors or row matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1 and b.ndim == 1:
        return float(a @ b)
    return np.atleast_2d(a) @ np.atleast_2d(b).T


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-4
    decay_factor: float = 0.25
    decay_epochs: tuple[int, ...] = (25, 40)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.decay_factor < 1:
            raise ValueError("decay_factor must lie in (0, 1)")
        if any(b <= a for a, b in zip(self.decay_epochs, self.decay_epochs[1:])):
            raise ValueError("decay_epochs must be strictly increasing")
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch index."""
        passed = sum(1 for e in self.decay_epochs if epoch >= e)
        return self.learning_rate * self.decay_factor**passed


class Adam:
    """Adam with bias correction, optional decoupled weight decay and a step-wise epoch schedule."""

    def __init__(self, params: Mapping[str, np.ndarray], cfg: OptimizerConfig = OptimizerConfig()):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Params, grads: Mapping[str, np.ndarray], epoch: int = 0) -> float:
        for k, g in grads.items():
            if k not in params:
                raise KeyError(f"gradient for unknown parameter {k!r}")
            if g.shape != params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {g.shape} vs {params[k].shape}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {k}")
        c = self.cfg
        lr = c.lr_at(epoch)
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * (g * g)
            if c.weight_decay:
                # decoupled decay, skipped for biases
                if params[k].ndim > 1:
                    params[k] *= 1.0 - lr * c.weight_decay
            params[k] -= lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)
        return lr

    def state(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        out["adam.t"] = np.array([float(self.t)])
        return out

    def load_state(self, tensors: Mapping[str, np.ndarray]) -> None:
        for k in self.m:
            self.m[k] = np.array(tensors[f"adam.m.{k}"])
            self.v[k] = np.array(tensors[f"adam.v.{k}"])
        self.t = int(tensors["adam.t"][0])


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def finite_difference_check(
    f: Callable[[Params], float],
    params: Params,
    analytic: Mapping[str, np.ndarray],
    h: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between ``analytic`` and central differences of ``f``.

    The relative error of a coordinate is ``|a - n| / max(|a|, |n|, floor)``
    where the floor (1e-6 of the largest gradient magnitude, at least 1e-10)
    keeps vanishing coordinates from dominating. With ``max_coords`` only a
    random subset of coordinates per tensor is probed.
    """
    rng = rng or np.random.default_rng(0)
    pairs = []
    for name, p in params.items():
        if name not in analytic:
            continue
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        a = analytic[name].reshape(-1)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            fp = f(params)
            flat[i] = old - h
            fm = f(params)
            flat[i] = old
            pairs.append((a[i], (fp - fm) / (2 * h)))
    if not pairs:
        return 0.0
    arr = np.array(pairs)
    floor = max(1e-6 * np.abs(arr).max(), 1e-10)
    denom = np.maximum(np.maximum(np.abs(arr[:, 0]), np.abs(arr[:, 1])), floor)
    return float(np.max(np.abs(arr[:, 0] - arr[:, 1]) / denom))


def config_hash(cfg) -> str:
    if hasattr(cfg, "__dataclass_fields__"):
        cfg = asdict(cfg)
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# Checkpoint layout (all integers little-endian):
#   b"WRCK"                 magic
#   u16                     format version
#   u32 n, n bytes          UTF-8 JSON metadata
#   u32                     tensor count
#   per tensor:
#     u16 n, n bytes        UTF-8 name
#     u8 ndim, ndim * u32   shape
#     prod(shape) * f64     C-order data, little-endian
CHECKPOINT_MAGIC = b"WRCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    meta_blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(meta_blob)))
        fh.write(meta_blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 6
    (n,) = struct.unpack_from("<I", data, pos)
    pos += 4
    meta = json.loads(data[pos : pos + n].decode("utf-8"))
    pos += n
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    return tensors, meta

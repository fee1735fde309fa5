"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .encoders import Alphabet

__all__ = ["check_sequences", "check_transcriptions"]


def check_sequences(X, n_features: int | None = None) -> list[np.ndarray]:
    """Validate a collection of ``(steps, features)`` arrays of possibly different lengths."""
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = list(X)
    if not isinstance(X, Sequence) and not isinstance(X, np.ndarray):
        raise TypeError(f"expected a sequence of 2-d arrays, got {type(X).__name__}")
    if len(X) == 0:
        raise ValueError("X is empty")
    out = []
    for i, x in enumerate(X):
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"X[{i}] must be 2-d (steps, features), got shape {arr.shape}")
        if arr.shape[0] == 0:
            raise ValueError(f"X[{i}] has no steps")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"X[{i}] contains non-finite values")
        out.append(arr)
    widths = {a.shape[1] for a in out}
    if len(widths) != 1:
        raise ValueError(f"inconsistent feature widths {sorted(widths)}")
    if n_features is not None and widths != {n_features}:
        raise ValueError(f"expected {n_features} features per step, got {widths.pop()}")
    return out


def check_transcriptions(y, alphabet: Alphabet, n: int | None = None) -> list[str]:
    words = [str(w).lower() for w in y]
    if n is not None and len(words) != n:
        raise ValueError(f"got {len(words)} transcriptions for {n} samples")
    for w in words:
        if not w:
            raise ValueError("empty transcription")
        alphabet.encode(w)
    return words

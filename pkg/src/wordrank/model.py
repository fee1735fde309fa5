"""The joint model: both encoders plus their parameters, and checkpoint I/O."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import Params, load_checkpoint, save_checkpoint
from .encoders import Alphabet, StringEncoder, VisualEncoder, WordSample


class WordSpotterModel:
    def __init__(self, alphabet: Alphabet, params: Params | None = None, seed: int = 0, **arch):
        self.alphabet = alphabet
        self.arch = {
            "char_dim": arch.get("char_dim", 32),
            "rnn_hidden": arch.get("rnn_hidden", 64),
            "proj": arch.get("proj", 128),
            "head_hidden": arch.get("head_hidden", 128),
            "window": arch.get("window", 5),
            "depth": arch.get("depth", 2),
        }
        self.string_encoder = StringEncoder(alphabet, self.arch["char_dim"], self.arch["rnn_hidden"])
        self.visual_encoder = VisualEncoder(
            len(alphabet), self.arch["proj"], self.arch["head_hidden"], window=self.arch["window"], depth=self.arch["depth"]
        )
        if params is None:
            rng = np.random.default_rng(seed)
            params = self.string_encoder.init_params(rng)
            params.update(self.visual_encoder.init_params(rng))
        self.params = params

    def embed_strings(self, words: Sequence[str], params: Params | None = None) -> np.ndarray:
        return self.string_encoder.encode(list(words), self.params if params is None else params)

    def embed_features(self, seqs: Sequence[np.ndarray], params: Params | None = None) -> np.ndarray:
        return self.visual_encoder.encode(list(seqs), self.params if params is None else params)

    def embed_samples(self, samples: Sequence[WordSample], params: Params | None = None) -> np.ndarray:
        return self.embed_features([s.features for s in samples], params)

    def copy_params(self) -> Params:
        return {k: v.copy() for k, v in self.params.items()}

    def save(self, path, extra_tensors: dict | None = None, meta: dict | None = None) -> None:
        tensors = dict(self.params)
        tensors.update(extra_tensors or {})
        m = {"alphabet": str(self.alphabet), "arch": self.arch}
        m.update(meta or {})
        save_checkpoint(path, tensors, m)

    @classmethod
    def load(cls, path) -> tuple["WordSpotterModel", dict[str, np.ndarray], dict]:
        """Returns the model, the non-parameter tensors (optimizer state) and metadata."""
        tensors, meta = load_checkpoint(path)
        params = {k: v for k, v in tensors.items() if k.startswith(("psi.", "phi."))}
        rest = {k: v for k, v in tensors.items() if k not in params}
        model = cls(Alphabet(meta["alphabet"]), params=params, **meta.get("arch", {}))
        return model, rest, meta

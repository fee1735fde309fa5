"""scikit-learn style wrapper around training and retrieval."""

from __future__ import annotations

import string

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import OptimizerConfig
from .data import Dataset
from .encoders import Alphabet, WordSample
from .metrics import average_precision_rows, edit_distance_matrix
from .training import TrainConfig, train
from .validation import check_sequences, check_transcriptions

__all__ = ["WordSpotter"]


class WordSpotter(TransformerMixin, BaseEstimator):
    """Learns a shared embedding for word "images" and their transcriptions.

    ``X`` is a list of ``(steps, features)`` arrays (one per word sample,
    lengths may differ) and ``y`` the matching transcriptions. After
    fitting, ``transform`` embeds samples, ``embed_strings`` embeds text,
    ``predict`` returns the closest word of the training vocabulary and
    ``score`` is the query-by-string mAP over ``X``.
    """

    def __init__(
        self,
        mode: str = "join",
        epochs: int = 30,
        batch_size: int = 48,
        samples_per_epoch: int = 9000,
        alpha: float = 0.5,
        tau: float = 0.1,
        gamma: int = 4,
        learning_rate: float = 1e-3,
        decay_epochs: tuple = (22, 27),
        per_class: int = 4,
        mix: bool = True,
        noise_sigma: float = 0.0,
        depth: int = 2,
        window: int = 5,
        alphabet: str = string.ascii_lowercase,
        random_state: int = 0,
    ):
        self.mode = mode
        self.epochs = epochs
        self.batch_size = batch_size
        self.samples_per_epoch = samples_per_epoch
        self.alpha = alpha
        self.tau = tau
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.decay_epochs = decay_epochs
        self.per_class = per_class
        self.mix = mix
        self.noise_sigma = noise_sigma
        self.depth = depth
        self.window = window
        self.alphabet = alphabet
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            mode=self.mode,
            batch_size=self.batch_size,
            epochs=self.epochs,
            samples_per_epoch=self.samples_per_epoch,
            alpha=self.alpha,
            tau=self.tau,
            gamma=self.gamma,
            optimizer=OptimizerConfig(learning_rate=self.learning_rate, decay_epochs=tuple(self.decay_epochs)),
            seed=int(self.random_state),
            noise_sigma=self.noise_sigma,
            per_class=self.per_class,
            mix=self.mix,
            arch=(("depth", self.depth), ("window", self.window)),
        )

    def fit(self, X, y):
        alphabet = Alphabet(self.alphabet)
        seqs = check_sequences(X, len(alphabet))
        words = check_transcriptions(y, alphabet, len(seqs))
        cfg = self._config()
        lexicon = list(dict.fromkeys(words))
        samples = [WordSample(f"x{i:06d}", w, s, "train") for i, (w, s) in enumerate(zip(words, seqs))]
        result = train(Dataset(lexicon, samples, alphabet), cfg)
        self.model_ = result.model
        self.history_ = result.history
        self.vocabulary_ = np.array(lexicon)
        self.n_features_in_ = len(alphabet)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.embed_features(check_sequences(X, self.n_features_in_))

    def embed_strings(self, words) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.embed_strings(check_transcriptions(words, self.model_.alphabet))

    def rank(self, query: str, X) -> np.ndarray:
        """Indices of ``X`` by decreasing similarity to the text ``query``; ties keep input order."""
        sims = self.transform(X) @ self.embed_strings([query])[0]
        return np.argsort(-sims, kind="stable")

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        S = self.transform(X) @ self.model_.embed_strings(list(self.vocabulary_)).T
        return self.vocabulary_[np.argmax(S, axis=1)]

    def score(self, X, y) -> float:
        """Query-by-string mAP: each distinct word of ``y`` queries the samples ``X``."""
        check_is_fitted(self, "model_")
        seqs = check_sequences(X, self.n_features_in_)
        words = check_transcriptions(y, self.model_.alphabet, len(seqs))
        queries = sorted(set(words))
        S = self.model_.embed_strings(queries) @ self.model_.embed_features(seqs).T
        relevant = edit_distance_matrix(queries, words) == 0
        return float(np.mean(average_precision_rows(S, relevant)))

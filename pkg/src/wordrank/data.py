"""Synthetic word-spotting datasets and their on-disk format.

Dataset file (UTF-8, tab separated)::

    #wordrank-dataset v1 alphabet=<characters>
    id  transcription  split  seed  sigma
    ...

One record per sample, fields in that order. Features are not stored: they
are re-rendered from ``(transcription, seed, sigma)`` on load, which keeps
files small and loads bit-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoders import Alphabet, WordSample, synth_render
from .metrics import edit_distance_matrix

__all__ = ["Dataset", "generate_dataset", "save_dataset", "load_dataset"]

HEADER_PREFIX = "#wordrank-dataset v1 alphabet="
FIELDS = ("id", "transcription", "split", "seed", "sigma")


@dataclass
class Dataset:
    lexicon: list[str]
    samples: list[WordSample]
    alphabet: Alphabet
    _ed: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        words = set(self.lexicon)
        if len(words) != len(self.lexicon):
            raise ValueError("lexicon words must be distinct")
        for s in self.samples:
            if s.transcription not in words:
                raise ValueError(f"sample {s.id} transcription {s.transcription!r} not in lexicon")
            if s.split not in ("train", "test"):
                raise ValueError(f"sample {s.id} has unknown split {s.split!r}")
        self._word_index = {w: i for i, w in enumerate(self.lexicon)}

    def split(self, name: str) -> list[WordSample]:
        return [s for s in self.samples if s.split == name]

    @property
    def train(self) -> list[WordSample]:
        return self.split("train")

    @property
    def test(self) -> list[WordSample]:
        return self.split("test")

    def labels(self, samples: Sequence[WordSample]) -> np.ndarray:
        return np.array([self._word_index[s.transcription] for s in samples], dtype=np.int64)

    @property
    def edit_distances(self) -> np.ndarray:
        """Lexicon x lexicon Levenshtein matrix, computed once."""
        if self._ed is None:
            self._ed = edit_distance_matrix(self.lexicon, self.lexicon)
        return self._ed

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(HEADER_PREFIX + str(self.alphabet) + "\n")
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(FIELDS)
        for s in self.samples:
            w.writerow([s.id, s.transcription, s.split, s.seed, repr(float(s.sigma))])
        return buf.getvalue()

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


def _random_word(rng: np.random.Generator, letters: str, lo: int, hi: int) -> str:
    n = int(rng.integers(lo, hi + 1))
    return "".join(letters[i] for i in rng.integers(0, len(letters), size=n))


def generate_dataset(
    lexicon_size: int = 100,
    samples_per_word: int = 20,
    word_length_range: tuple[int, int] = (3, 8),
    noise_sigma: float = 0.3,
    seed: int = 7,
    test_fraction: float = 0.25,
) -> Dataset:
    """Random lexicon over a-z with noisy renders, split per word class.

    Every word gets at least one train and one test sample.
    """
    if lexicon_size < 2:
        raise ValueError("lexicon_size must be at least 2")
    if samples_per_word < 2:
        raise ValueError("samples_per_word must be at least 2")
    lo, hi = word_length_range
    if not 1 <= lo <= hi:
        raise ValueError(f"bad word length range {word_length_range}")
    letters = string.ascii_lowercase
    capacity = sum(len(letters) ** n for n in range(lo, hi + 1))
    if capacity < lexicon_size:
        raise ValueError(f"only {capacity} distinct words of length {lo}-{hi} exist")

    rng = np.random.default_rng(seed)
    lexicon: list[str] = []
    seen: set[str] = set()
    attempts = 0
    while len(lexicon) < lexicon_size:
        attempts += 1
        if attempts > 100 * lexicon_size + 1000:
            raise ValueError("could not draw enough distinct words")
        w = _random_word(rng, letters, lo, hi)
        if w not in seen:
            seen.add(w)
            lexicon.append(w)

    alphabet = Alphabet(letters)
    n_test = min(samples_per_word - 1, max(1, math.ceil(samples_per_word * test_fraction)))
    samples = []
    for wi, word in enumerate(lexicon):
        seeds = rng.integers(0, 2**31 - 1, size=samples_per_word)
        test_slots = set(rng.permutation(samples_per_word)[:n_test].tolist())
        for k in range(samples_per_word):
            split = "test" if k in test_slots else "train"
            samples.append(synth_render(word, noise_sigma, int(seeds[k]), alphabet, f"w{wi:04d}_{k:03d}", split))
    return Dataset(lexicon, samples, alphabet)


def save_dataset(dataset: Dataset, path) -> None:
    Path(path).write_text(dataset.to_text(), encoding="utf-8")


def load_dataset(path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    first, _, body = text.partition("\n")
    if not first.startswith(HEADER_PREFIX):
        raise ValueError(f"{path}: missing dataset header")
    alphabet = Alphabet(first[len(HEADER_PREFIX) :])
    rows = list(csv.reader(io.StringIO(body), delimiter="\t"))
    if not rows or tuple(rows[0]) != FIELDS:
        raise ValueError(f"{path}: unexpected column header {rows[:1]}")
    samples, lexicon, seen = [], [], set()
    for sid, word, split, seed, sigma in rows[1:]:
        word = word.lower()
        samples.append(synth_render(word, float(sigma), int(seed), alphabet, sid, split))
        if word not in seen:
            seen.add(word)
            lexicon.append(word)
    return Dataset(lexicon, samples, alphabet)

"""Bag-of-words corpus over road-segment documents."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Corpus:
    """Documents keyed by road segment: each document is an array of word
    ids drawn from a flat vocabulary of size ``vocab_size``."""

    doc_keys: list
    docs: list[np.ndarray]
    vocab_size: int

    def __post_init__(self):
        self.docs = [np.asarray(d, dtype=np.int64) for d in self.docs]
        for d in self.docs:
            if d.size and (d.min() < 0 or d.max() >= self.vocab_size):
                raise ValueError("word id outside vocabulary")

    @property
    def n_docs(self) -> int:
        return len(self.docs)

    @property
    def total_words(self) -> int:
        return int(sum(d.size for d in self.docs))

    def word_counts(self, j: int) -> np.ndarray:
        return np.bincount(self.docs[j], minlength=self.vocab_size)

    def to_json(self) -> str:
        payload = {
            "format_version": 1,
            "vocab_size": self.vocab_size,
            "documents": {str(k): np.asarray(d).tolist() for k, d in zip(self.doc_keys, self.docs)},
        }
        return json.dumps(payload, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "Corpus":
        obj = json.loads(text)
        keys = sorted(obj["documents"], key=lambda s: (len(s), s))
        return Corpus(
            doc_keys=keys,
            docs=[np.asarray(obj["documents"][k], dtype=np.int64) for k in keys],
            vocab_size=int(obj["vocab_size"]),
        )

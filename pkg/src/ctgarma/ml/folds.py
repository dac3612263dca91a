"""Seed substreams and stratified fold assignment."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np


def substream(seed: int, *keys) -> int:
    """A 32-bit seed derived from ``seed`` and named keys."""
    words = [int(seed) & 0xFFFFFFFF]
    for key in keys:
        words.append(zlib.crc32(str(key).encode()) if not isinstance(key, int)
                     else key & 0xFFFFFFFF)
    return int(np.random.SeedSequence(words).generate_state(1)[0])


@dataclass(frozen=True)
class FoldPlan:
    folds: list[np.ndarray]
    seed: int

    def __len__(self) -> int:
        return len(self.folds)

    def train_index(self, i: int) -> np.ndarray:
        n = sum(len(f) for f in self.folds)
        return np.setdiff1d(np.arange(n), self.folds[i])

    def ids(self, patient_ids: Sequence[str]) -> list[list[str]]:
        return [[patient_ids[j] for j in fold] for fold in self.folds]


def stratified_kfold(labels, k: int = 5, seed: int = 0) -> FoldPlan:
    """Shuffle each class and deal its members round-robin over ``k`` folds.

    Dealing continues where the previous class stopped, so both the per-class
    and the total fold sizes differ by at most one.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(k)]
    offset = 0
    for cls in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == cls))
        for t, j in enumerate(members):
            buckets[(offset + t) % k].append(int(j))
        offset = (offset + len(members)) % k
    return FoldPlan([np.array(sorted(b), dtype=int) for b in buckets], seed)

"""Representation-space augmentation by permuting the second encoder's rows.

Augmented sample ``i`` pairs encoder-a's row ``i`` with encoder-b's row
``pi[i]`` and inherits label ``labels[pi[i]]``. Only the ``m`` training rows
are touched.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class PermutationPlan:
    pi: np.ndarray
    seed: int
    epoch: int = 0

    def __post_init__(self):
        pi = np.array(self.pi, dtype=np.int64)
        if pi.ndim != 1 or not np.array_equal(np.sort(pi), np.arange(len(pi))):
            raise ValueError("pi must be a permutation of 0..m-1")
        pi.setflags(write=False)
        object.__setattr__(self, "pi", pi)

    @property
    def size(self):
        return len(self.pi)

    def inverse(self):
        inv = np.empty_like(self.pi)
        inv[self.pi] = np.arange(len(self.pi))
        return inv

    def apply(self, rows):
        return np.asarray(rows)[self.pi]


@dataclass
class SampleBatch:
    original: ad.Var  # m x 2d
    augmented: ad.Var  # m x 2d
    labels: np.ndarray
    augmented_labels: np.ndarray
    row_ops: int = 0  # rows gathered by the permutation step


def draw_permutation(m, seed, epoch=0):
    """Uniform random bijection on ``range(m)`` keyed by ``(seed, epoch)``."""
    if m < 1:
        raise ValueError("cannot permute an empty training set")
    rng = np.random.default_rng([int(seed), 0x5045524D, int(epoch)])
    return PermutationPlan(rng.permutation(m), int(seed), int(epoch))


def build_batch(h_a_train, h_b_train, labels, plan):
    """Original rows ``[h_a | h_b]`` and augmented rows ``[h_a | h_b[pi]]``."""
    h_a, h_b = ad.const(h_a_train), ad.const(h_b_train)
    labels = np.asarray(labels, dtype=np.int64)
    m = h_a.shape[0]
    if h_b.shape[0] != m or len(labels) != m or plan.size != m:
        raise ValueError(f"row mismatch: h_a {h_a.shape}, h_b {h_b.shape}, "
                         f"labels {labels.shape}, plan {plan.size}")
    if h_a.value.ndim != 2 or h_b.value.ndim != 2:
        raise ValueError("representations must be matrices")
    permuted = ad.take_rows(h_b, plan.pi)
    return SampleBatch(
        original=ad.concat(h_a, h_b),
        augmented=ad.concat(h_a, permuted),
        labels=labels,
        augmented_labels=labels[plan.pi],
        row_ops=len(plan.pi),
    )

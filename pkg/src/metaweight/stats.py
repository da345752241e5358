"""Accuracy and the paired sign-flip permutation test."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backbones import Example, ModelState, example_features, forward
from .errors import DimensionError, DomainError
from .vectors import RngState


@dataclass(frozen=True, eq=False)
class PredictionRecord:
    """Predicted and true class per example, aligned by position."""

    predicted: np.ndarray
    true: np.ndarray

    def __post_init__(self):
        pred = np.asarray(self.predicted, dtype=np.int64)
        true = np.asarray(self.true, dtype=np.int64)
        if pred.ndim != 1 or true.ndim != 1 or pred.shape != true.shape:
            raise DimensionError("prediction and truth vectors must be 1-D and equal length")
        if len(pred) and (pred.min() < 0 or true.min() < 0):
            raise DomainError("class ids must be non-negative")
        pred.setflags(write=False)
        true.setflags(write=False)
        object.__setattr__(self, "predicted", pred)
        object.__setattr__(self, "true", true)

    def __len__(self) -> int:
        return int(self.predicted.shape[0])


def predict(model: ModelState, examples: Sequence[Example]) -> PredictionRecord:
    """Argmax class per example (lowest index wins ties)."""
    preds = np.fromiter(
        (int(np.argmax(forward(model, example_features(model.arch, ex)))) for ex in examples),
        dtype=np.int64,
        count=len(examples),
    )
    true = np.fromiter((ex.label for ex in examples), dtype=np.int64, count=len(examples))
    return PredictionRecord(preds, true)


def accuracy(record: PredictionRecord) -> float:
    """Fraction of correct predictions."""
    if len(record) == 0:
        raise DomainError("cannot score an empty prediction record")
    return float(np.mean(record.predicted == record.true))


def permutation_test(
    preds_a: PredictionRecord, preds_b: PredictionRecord, n_perm: int, rng: RngState
) -> float:
    """Two-sided paired sign-flip permutation test on per-example correctness.

    The statistic is |acc_a - acc_b|. Each permutation swaps the two
    methods' correctness per example with probability one half. The p-value
    uses the add-one estimator (1 + #{permuted >= observed}) / (1 + n_perm),
    so it is never zero and equals 1.0 when the predictions agree everywhere.
    """
    if n_perm < 1:
        raise DomainError("n_perm must be >= 1")
    if len(preds_a) != len(preds_b) or not np.array_equal(preds_a.true, preds_b.true):
        raise DomainError("permutation test needs two prediction records over the same examples")
    if len(preds_a) == 0:
        raise DomainError("cannot test empty prediction records")
    diff = (preds_a.predicted == preds_a.true).astype(np.float64) - (
        preds_b.predicted == preds_b.true
    )
    n = diff.shape[0]
    observed = abs(float(diff.mean()))
    exceed = 0
    chunk = max(1, min(n_perm, 4_000_000 // n))
    done = 0
    while done < n_perm:
        take = min(chunk, n_perm - done)
        signs = np.where(rng.uniforms(take * n).reshape(take, n) < 0.5, -1.0, 1.0)
        stats = np.abs(signs @ diff) / n
        exceed += int((stats >= observed).sum())
        done += take
    return (1 + exceed) / (1 + n_perm)

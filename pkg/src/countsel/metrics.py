"""Evaluation of pooled cross-validation predictions.

All metrics consume a PooledPredictions bundle: one predicted mean per
held-out observation, tagged with the fold that produced it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .glm import poisson_deviance


@dataclass(frozen=True)
class PooledPredictions:
    """Held-out predictions covering every observation exactly once.

    fold_sizes maps fold id to the size of the training set that produced
    that fold's predictions (the weight base for weighted_deviance).
    """

    row_ids: np.ndarray
    fold_ids: np.ndarray
    observed: np.ndarray
    predicted: np.ndarray
    fold_sizes: dict[int, int]

    def __post_init__(self) -> None:
        rows = np.asarray(self.row_ids, dtype=np.int64)
        folds = np.asarray(self.fold_ids, dtype=np.int64)
        y = np.asarray(self.observed, dtype=np.int64)
        mu = np.asarray(self.predicted, dtype=np.float64)
        if not (rows.shape == folds.shape == y.shape == mu.shape):
            raise ValueError("pooled prediction arrays differ in length")
        if len(np.unique(rows)) != rows.shape[0]:
            raise ValueError("duplicate row ids in pooled predictions")
        if np.any(mu <= 0.0):
            raise ValueError("pooled predictions must be strictly positive")
        for fid in np.unique(folds):
            if int(fid) not in self.fold_sizes:
                raise ValueError(f"fold {int(fid)} missing from fold_sizes")
        for size in self.fold_sizes.values():
            if size <= 0:
                raise ValueError("fold sizes must be positive")
        for name, arr in (
            ("row_ids", rows),
            ("fold_ids", folds),
            ("observed", y),
            ("predicted", mu),
        ):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return int(self.row_ids.shape[0])

    def fold_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_ids == fold)


def pooled_deviance(pooled: PooledPredictions) -> float:
    """Poisson deviance of all held-out predictions taken as one sample."""
    return poisson_deviance(pooled.observed, pooled.predicted)


def weighted_deviance(pooled: PooledPredictions) -> float:
    """Per-fold deviances combined with inverse training-size weights.

    sum_b(D_b / w_b) / sum_b(1 / w_b) where w_b is the training size behind
    fold b.  With equal fold sizes this reduces to the plain mean of the
    per-fold deviances.
    """
    num = 0.0
    den = 0.0
    for fold in sorted(pooled.fold_sizes):
        rows = pooled.fold_rows(fold)
        if rows.size == 0:
            continue
        d_b = poisson_deviance(pooled.observed[rows], pooled.predicted[rows])
        w_b = float(pooled.fold_sizes[fold])
        num += d_b / w_b
        den += 1.0 / w_b
    if den == 0.0:
        raise ValueError("no folds with observations")
    return num / den


def predictive_power(pooled: PooledPredictions) -> float:
    """Percentage of predictions within one half count of the observation.

    An observation counts as correctly predicted when
    -0.5 <= y - mu <= 0.5, both endpoints included.
    """
    residuals = pooled.observed - pooled.predicted
    hits = (residuals >= -0.5) & (residuals <= 0.5)
    return float(100.0 * np.mean(hits))


def score_ratio(score: float, score_null: float) -> tuple[float, float]:
    """Improvement over the null-model score: returns (R, r) with r = score/score_null and R = 1 - r."""
    if score_null <= 0.0:
        raise ValueError("null score must be positive")
    r = score / score_null
    return 1.0 - r, r

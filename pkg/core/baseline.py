"""
KNN Baseline
Coordinate-only k-nearest-neighbor yield regressor with k chosen by cross-validation
"""
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist
from sklearn.model_selection import KFold

from core.dataset import Dataset, SplitAssignment
from core.errors import ConfigError, InputError
from core.trainer import Metrics, evaluate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BaselineConfig:
    k_min: int = 1
    k_max: int = 20
    folds: int = 5

    def __post_init__(self):
        if self.k_min < 1 or self.k_max < self.k_min:
            raise ConfigError(f"Invalid k range {self.k_min}..{self.k_max}")
        if self.folds < 2:
            raise ConfigError(f"Need at least 2 folds, got {self.folds}")

    @property
    def k_range(self) -> range:
        return range(self.k_min, self.k_max + 1)


@dataclass
class KnnResult:
    best_k: int
    metrics: Metrics
    cv_table: pd.DataFrame = field(repr=False)

    def to_dict(self) -> Dict:
        return {'k': self.best_k, **self.metrics.to_dict()}

    def write(self, path: str):
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write('\n')


def knn_predict(train_coords, train_yields, query_coords, k: int) -> np.ndarray:
    """Mean yield of the k nearest training plots; ties keep training order"""
    train_coords = np.asarray(train_coords, dtype=np.float64).reshape(-1, 2)
    train_yields = np.asarray(train_yields, dtype=np.float64).reshape(-1)
    query_coords = np.asarray(query_coords, dtype=np.float64).reshape(-1, 2)
    if not 1 <= k <= train_coords.shape[0]:
        raise InputError(f"k={k} outside 1..{train_coords.shape[0]}")
    distances = cdist(query_coords, train_coords)
    nearest = np.argsort(distances, axis=1, kind='stable')[:, :k]
    return train_yields[nearest].mean(axis=1)


def knn_grid_search(ds: Dataset, split: SplitAssignment, k_range: Sequence[int] = range(1, 21),
                    folds: int = 5, seed: int = 0) -> KnnResult:
    """Pick k by K-fold CV RMSE on the training plots, then score it on the test plots"""
    k_values = list(k_range)
    if not k_values:
        raise ConfigError("Empty k range")
    train_idx = np.asarray(split.train_indices, dtype=np.int64)
    test_idx = np.asarray(split.test_indices, dtype=np.int64)
    if train_idx.size < folds:
        raise InputError(f"{train_idx.size} training plots cannot be split into {folds} folds")

    coords = ds.coordinates
    target = ds.target
    fold_splits = list(KFold(n_splits=folds, shuffle=True, random_state=seed).split(train_idx))
    smallest_fold_train = min(len(inner) for inner, _ in fold_splits)
    if max(k_values) > smallest_fold_train:
        raise InputError(f"k={max(k_values)} exceeds the {smallest_fold_train} plots in a CV training fold")

    rows = []
    for k in k_values:
        fold_rmse = []
        for inner, held in fold_splits:
            fit, val = train_idx[inner], train_idx[held]
            pred = knn_predict(coords[fit], target[fit], coords[val], k)
            fold_rmse.append(float(np.sqrt(np.mean((pred - target[val]) ** 2))))
        rows.append({'k': k, 'cv_rmse': float(np.mean(fold_rmse))})

    cv_table = pd.DataFrame(rows, columns=['k', 'cv_rmse'])
    best_k = int(cv_table.loc[cv_table['cv_rmse'].idxmin(), 'k'])

    pred = np.full(len(ds), np.nan)
    pred[test_idx] = knn_predict(coords[train_idx], target[train_idx], coords[test_idx], best_k)
    metrics = evaluate(pred, target, test_idx)
    logger.info(f"KNN baseline: best k={best_k}, test RMSE {metrics.rmse:.3f}, R2 {metrics.r2:.4f}")
    return KnnResult(best_k=best_k, metrics=metrics, cv_table=cv_table)

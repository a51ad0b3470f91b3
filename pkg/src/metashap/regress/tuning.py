"""K-fold cross-validated grid search over forest depth and tree count."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from metashap.errors import DomainError
from metashap.regress.forest import _fit_one
from metashap.regress.metrics import rmse


def kfold_indices(n, folds, seed):
    if folds < 2 or folds > n:
        raise DomainError(f"folds must lie in [2, {n}], got {folds}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


@dataclass(frozen=True)
class TuneResult:
    best_depth: int
    best_n_estimators: int
    depth_grid: tuple
    estimator_grid: tuple
    cv_rmse: np.ndarray  # (len(depth_grid), len(estimator_grid))

    @property
    def depth_curve(self):
        """CV RMSE against depth at the best tree count."""
        j = self.estimator_grid.index(self.best_n_estimators)
        return list(zip(self.depth_grid, self.cv_rmse[:, j].tolist()))

    @property
    def estimator_curve(self):
        """CV RMSE against tree count at the best depth."""
        i = self.depth_grid.index(self.best_depth)
        return list(zip(self.estimator_grid, self.cv_rmse[i, :].tolist()))

    def to_dict(self):
        return {
            "best_max_depth": self.best_depth,
            "best_n_estimators": self.best_n_estimators,
            "depth_grid": list(self.depth_grid),
            "estimator_grid": list(self.estimator_grid),
            "cv_rmse": self.cv_rmse.tolist(),
            "depth_curve": [{"max_depth": d, "cv_rmse": r} for d, r in self.depth_curve],
            "estimator_curve": [{"n_estimators": n, "cv_rmse": r} for n, r in self.estimator_curve],
        }


def _fold_scores(X, y, train_idx, test_idx, depth, estimator_grid, master_seed):
    """RMSE on one held-out fold for every tree count in the grid.

    Tree t depends only on (master_seed, t), so the forest with k trees is the
    first k trees of the largest forest.
    """
    n_max = max(estimator_grid)
    Xtr, ytr = X[train_idx], y[train_idx]
    preds = np.stack([
        _fit_one(Xtr, ytr, depth, master_seed, t, True).predict(X[test_idx]) for t in range(n_max)
    ])
    running = np.cumsum(preds, axis=0)
    return [rmse(y[test_idx], running[k - 1] / k) for k in estimator_grid]


def tune_forest(X, y, depth_grid, estimator_grid, folds=5, master_seed=0, jobs=1):
    """Grid search by k-fold CV RMSE; ties go to the shallower, then smaller, forest."""
    depth_grid = tuple(sorted(int(d) for d in depth_grid))
    estimator_grid = tuple(sorted(int(n) for n in estimator_grid))
    if not depth_grid or not estimator_grid:
        raise DomainError("tuning grids must be non-empty")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    parts = kfold_indices(len(y), folds, master_seed)
    tasks = []
    for depth in depth_grid:
        for k, test_idx in enumerate(parts):
            train_idx = np.sort(np.concatenate([p for i, p in enumerate(parts) if i != k]))
            tasks.append((depth, train_idx, test_idx))
    run = delayed(_fold_scores)
    if jobs == 1:
        scores = [_fold_scores(X, y, tr, te, d, estimator_grid, master_seed) for d, tr, te in tasks]
    else:
        scores = Parallel(n_jobs=jobs)(run(X, y, tr, te, d, estimator_grid, master_seed) for d, tr, te in tasks)
    cv = np.array(scores).reshape(len(depth_grid), folds, len(estimator_grid)).mean(axis=1)

    best = (0, 0)
    for i in range(len(depth_grid)):
        for j in range(len(estimator_grid)):
            if cv[i, j] < cv[best]:
                best = (i, j)
    return TuneResult(depth_grid[best[0]], estimator_grid[best[1]], depth_grid, estimator_grid, cv)

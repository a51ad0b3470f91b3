from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from metashap.errors import DomainError


def _pair(y, yhat):
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.shape != yhat.shape:
        raise DomainError(f"length mismatch: {y.size} targets vs {yhat.size} predictions")
    if y.size == 0:
        raise DomainError("metrics need at least one sample")
    return y, yhat


def rmse(y, yhat):
    """Root-mean-square error."""
    y, yhat = _pair(y, yhat)
    return math.sqrt(float(np.mean((y - yhat) ** 2)))


def r2(y, yhat):
    """Coefficient of determination, 1 - SS_res / SS_tot."""
    y, yhat = _pair(y, yhat)
    if y.size < 2:
        raise DomainError("R^2 needs at least two samples")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot <= 0:
        raise DomainError("R^2 is undefined for constant ground truth")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


@dataclass(frozen=True)
class Metrics:
    rmse: float
    r2: float
    n: int

    def to_dict(self):
        return asdict(self)


def score(y, yhat):
    return Metrics(rmse(y, yhat), r2(y, yhat), int(np.size(y)))

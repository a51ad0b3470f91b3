"""Polynomial least squares over all monomials of the input features."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from metashap.errors import DomainError


def monomial_powers(n_features, degree):
    """Exponent tuples for every monomial up to ``degree``, bias first, graded order."""
    powers = []
    for d in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(n_features), d):
            p = [0] * n_features
            for i in combo:
                p[i] += 1
            powers.append(tuple(p))
    return powers


def design_matrix(X, powers):
    X = np.asarray(X, dtype=float)
    P = np.array(powers, dtype=int)
    return np.prod(X[:, None, :] ** P[None, :, :], axis=2)


@dataclass(frozen=True)
class PolyLinearModel:
    degree: int
    coefficients: np.ndarray
    rank_deficient: bool = False
    n_features: int = 3

    @property
    def powers(self):
        return monomial_powers(self.n_features, self.degree)

    def predict(self, X):
        return design_matrix(X, self.powers) @ self.coefficients

    def to_dict(self):
        return {
            "kind": "poly",
            "degree": self.degree,
            "n_features": self.n_features,
            "coefficients": self.coefficients.tolist(),
            "rank_deficient": self.rank_deficient,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(int(data["degree"]), np.array(data["coefficients"], dtype=float),
                   bool(data.get("rank_deficient", False)), int(data.get("n_features", 3)))


def fit_poly_linear(X, y, degree):
    """Least-squares fit via QR of the column-equilibrated design matrix.

    A rank-deficient design falls back to the minimum-norm SVD solution (in the
    equilibrated basis) and is flagged on the model.
    """
    if not 1 <= degree <= 6:
        raise DomainError(f"degree must lie in [1, 6], got {degree}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or len(X) == 0 or len(X) != len(y):
        raise DomainError("training data must be a non-empty (n, d) array with n targets")
    powers = monomial_powers(X.shape[1], degree)
    A = design_matrix(X, powers)
    col_scale = np.linalg.norm(A, axis=0)
    col_scale[col_scale == 0] = 1.0
    As = A / col_scale

    rank_deficient = As.shape[0] < As.shape[1]
    if not rank_deficient:
        Q, R = np.linalg.qr(As, mode="reduced")
        diag = np.abs(np.diag(R))
        rank_deficient = diag.min() <= max(As.shape) * np.finfo(float).eps * diag.max()
    if rank_deficient:
        beta_s = np.linalg.lstsq(As, y, rcond=None)[0]
    else:
        beta_s = solve_triangular(R, Q.T @ y)
    return PolyLinearModel(degree, beta_s / col_scale, bool(rank_deficient), X.shape[1])

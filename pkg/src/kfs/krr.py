"""Weighted kernel ridge regression in dual form.

For a Gram matrix ``K`` the fit minimizes
``0.5 * mean((y - f(x))**2) + 0.5 * lam * ||f||_H^2``; by the representer
theorem ``f = sum_j alpha_j k(., x_j)`` with ``(K + n*lam*I) alpha = y``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .kernels import KernelSpec, gram_matrix

JITTER_START = 1e-12
JITTER_FACTOR = 10.0
JITTER_RETRIES = 4


class SolverError(RuntimeError):
    """The regularized Gram system could not be factorized."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DataError(ValueError):
    """Malformed design matrix or response."""


@dataclass(frozen=True)
class Dataset:
    """Design matrix and (centered) response.

    Use :meth:`from_arrays` to build one; it removes the mean of ``y`` and
    keeps it in ``y_mean`` so predictions can add it back.
    """

    X: np.ndarray
    y: np.ndarray
    y_mean: float = 0.0
    centered: bool = False
    feature_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=float)
        y = np.ascontiguousarray(self.y, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError(f"X must be a nonempty n x p matrix, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DataError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataError("X and y must be finite")
        if self.centered and abs(y.mean()) > 1e-12 * y.std() + 1e-15:
            raise DataError(f"y flagged as centered but has mean {y.mean():.3g}")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if not self.feature_names:
            names = tuple(f"x{l + 1}" for l in range(X.shape[1]))
            object.__setattr__(self, "feature_names", names)

    @classmethod
    def from_arrays(cls, X, y, center: bool = True, feature_names=()) -> "Dataset":
        y = np.asarray(y, dtype=float)
        if not center:
            return cls(X, y, feature_names=tuple(feature_names))
        mean = float(y.mean()) if y.size else 0.0
        yc = y - mean
        # a second pass removes the residual rounding error of the first
        yc = yc - yc.mean()
        return cls(X, yc, y_mean=mean, centered=True, feature_names=tuple(feature_names))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        """Rows of this dataset, re-centered around their own mean."""
        return Dataset.from_arrays(self.X[rows], self.y[rows] + self.y_mean,
                                   feature_names=self.feature_names)


@dataclass(frozen=True)
class KrrFit:
    alpha: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    rkhs_norm_sq: float
    objective: float
    jitter: float = 0.0


def solve_krr(K, y, lam: float, jitter: float | None = None, jitter_base: float | None = None) -> KrrFit:
    """Solve ``(K + n*lam*I) alpha = y`` by Cholesky factorization.

    Parameters
    ----------
    K : (n, n) array
        Symmetric positive semidefinite Gram matrix.
    y : (n,) array
        Responses.
    lam : float
        Ridge parameter, strictly positive.
    jitter : float, optional
        Force a fixed diagonal jitter instead of the automatic ladder.
    jitter_base : float, optional
        Scale of the jitter ladder, ``h(0)`` by default (taken as the
        largest diagonal entry of ``K``).

    Returns
    -------
    KrrFit

    Raises
    ------
    SolverError
        If the factorization fails even after the jitter ladder
        ``1e-12 * h(0) * 10**k`` for ``k < 4``.
    """
    K = np.asarray(K, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if K.shape != (n, n):
        raise DataError(f"K has shape {K.shape}, expected ({n}, {n})")
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    A = K + n * lam * np.eye(n)
    if jitter is not None:
        ladder = [float(jitter)]
    else:
        base = float(np.max(np.diag(K))) if jitter_base is None else float(jitter_base)
        base = base if base > 0 else 1.0
        ladder = [0.0] + [JITTER_START * base * JITTER_FACTOR ** k for k in range(JITTER_RETRIES)]
    for eps in ladder:
        try:
            factor = linalg.cho_factor(A + eps * np.eye(n) if eps else A, lower=True,
                                       check_finite=False)
        except linalg.LinAlgError:
            continue
        diag = np.diag(factor[0])
        if not np.all(np.isfinite(diag)) or np.any(diag <= 0):
            continue
        alpha = linalg.cho_solve(factor, y, check_finite=False)
        break
    else:
        with np.errstate(all="ignore"):
            eig = np.linalg.eigvalsh(A) if np.all(np.isfinite(A)) else np.array([np.nan])
        raise SolverError(
            "Cholesky factorization of K + n*lambda*I failed after jitter escalation",
            {"n": n, "lambda": lam, "min_eig": float(eig.min()), "max_eig": float(eig.max()),
             "condition": float(eig.max() / eig.min()) if eig.min() > 0 else float("inf"),
             "last_jitter": ladder[-1]})
    fitted = K @ alpha
    residuals = y - fitted
    norm_sq = max(float(alpha @ fitted), 0.0)
    objective = 0.5 * float(np.mean(residuals ** 2)) + 0.5 * lam * norm_sq
    return KrrFit(alpha, fitted, residuals, norm_sq, objective, eps)


def objective_value(spec: KernelSpec, data: Dataset, beta, lam: float, **kw) -> float:
    """The empirical KRR objective at feature weights ``beta`` (no l1 term)."""
    K = gram_matrix(spec, data, beta)
    return solve_krr(K, data.y, lam, jitter_base=spec.h0, **kw).objective


def fit_krr(spec: KernelSpec, data: Dataset, beta, lam: float, **kw) -> KrrFit:
    K = gram_matrix(spec, data, beta)
    return solve_krr(K, data.y, lam, jitter_base=spec.h0, **kw)

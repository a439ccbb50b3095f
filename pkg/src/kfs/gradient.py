"""Closed-form gradient of the empirical KRR objective.

With residuals ``r`` from the dual solve and pairwise distances
``d_ij = sum_l beta_l |X_il - X_jl|^q``, the objective
``J_n(beta) = 0.5 * mean(r**2) + 0.5 * lam * alpha' K alpha`` has

    dJ_n / dbeta_l = -1/(2 lam n^2) * sum_ij r_i r_j h'(d_ij) |X_il - X_jl|^q

The sum runs over all ordered pairs; the diagonal terms vanish because
``|X_il - X_il| = 0``.  At ``beta_l = 0`` this is the right derivative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import CoordinateDiffs, KernelError, KernelSpec, h_eval, h_prime_eval
from .krr import Dataset, KrrFit, solve_krr


@dataclass(frozen=True)
class GradientReport:
    grad: np.ndarray
    grad_regularized: np.ndarray
    pairwise_nsd_value: float
    sup_norm: float
    objective: float
    fit: KrrFit


def _diffs_for(spec: KernelSpec, X, diffs: CoordinateDiffs | None) -> CoordinateDiffs:
    if diffs is not None:
        if diffs.q != spec.q:
            raise KernelError("cached differences were built for a different q")
        return diffs
    return CoordinateDiffs(X, spec.q)


def pairwise_gradient(spec: KernelSpec, X, residuals, beta, lam: float,
                      diffs: CoordinateDiffs | None = None) -> np.ndarray:
    """Gradient of ``J_n`` from residuals via the pairwise double sum."""
    X = getattr(X, "X", X)
    residuals = np.asarray(residuals, dtype=float)
    diffs = _diffs_for(spec, X, diffs)
    n = diffs.n
    if residuals.shape != (n,):
        raise KernelError(f"residuals have shape {residuals.shape}, expected ({n},)")
    D = diffs.distances(beta)
    W = np.outer(residuals, residuals) * h_prime_eval(spec, D)
    return -diffs.weighted_sums(W) / (2.0 * lam * n * n)


def nsd_quadratic_form(spec: KernelSpec, X, residuals, beta) -> float:
    """``sum_ij r_i r_j h'(d_ij)``; nonpositive since ``-h'`` is completely monotone."""
    X = np.asarray(getattr(X, "X", X), dtype=float)
    r = np.asarray(residuals, dtype=float)
    D = CoordinateDiffs(X, spec.q, memory_budget=0).distances(beta)
    return float(r @ h_prime_eval(spec, D) @ r)


def gradient_sup_bound(spec: KernelSpec, data: Dataset, lam: float) -> float:
    """Data-dependent bound on ``||grad J_n||_inf`` valid for every feasible beta.

    Uses ``||r|| <= ||y||`` and ``|X_il - X_jl| <= 2 max|X|``.
    """
    spread = (2.0 * np.max(np.abs(data.X))) ** spec.q
    return abs(spec.h_prime0) * spread * float(np.mean(data.y ** 2)) / lam


class KrrObjective:
    """The penalized empirical objective ``J_n(beta) + gamma * ||beta||_1``.

    Holds the per-coordinate difference cache so repeated evaluations
    along an optimization path only pay for the Gram solve and the
    weighted reduction.
    """

    def __init__(self, spec: KernelSpec, data: Dataset, lam: float, gamma: float = 0.0,
                 diffs: CoordinateDiffs | None = None, jitter: float | None = None):
        if not lam > 0:
            raise ValueError(f"lambda must be positive, got {lam}")
        if gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {gamma}")
        self.spec = spec
        self.data = data
        self.lam = float(lam)
        self.gamma = float(gamma)
        self.jitter = jitter
        self.diffs = _diffs_for(spec, data.X, diffs)

    @property
    def p(self) -> int:
        return self.data.p

    def fit(self, beta) -> KrrFit:
        K = h_eval(self.spec, self.diffs.distances(beta))
        return solve_krr(K, self.data.y, self.lam, jitter=self.jitter, jitter_base=self.spec.h0)

    def value(self, beta) -> float:
        """Unpenalized ``J_n(beta)``."""
        return self.fit(beta).objective

    def penalized_value(self, beta) -> float:
        return self.value(beta) + self.gamma * float(np.sum(beta))

    def report(self, beta) -> GradientReport:
        beta = np.asarray(beta, dtype=float)
        D = self.diffs.distances(beta)
        K = h_eval(self.spec, D)
        fit = solve_krr(K, self.data.y, self.lam, jitter=self.jitter, jitter_base=self.spec.h0)
        r = fit.residuals
        n = self.data.n
        Hp = h_prime_eval(self.spec, D)
        W = np.outer(r, r) * Hp
        grad = -self.diffs.weighted_sums(W) / (2.0 * self.lam * n * n)
        return GradientReport(
            grad=grad,
            grad_regularized=grad + self.gamma,
            pairwise_nsd_value=float(W.sum()) / (n * n),
            sup_norm=float(np.max(np.abs(grad))),
            objective=fit.objective,
            fit=fit,
        )


def full_gradient(spec: KernelSpec, data: Dataset, beta, lam: float, gamma: float = 0.0,
                  diffs: CoordinateDiffs | None = None) -> GradientReport:
    """Gram matrix, dual solve and pairwise gradient at ``beta``."""
    return KrrObjective(spec, data, lam, gamma, diffs=diffs).report(beta)


def central_difference(func, x, step: float) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for l in range(x.size):
        e = np.zeros_like(x)
        e[l] = step
        grad[l] = (func(x + e) - func(x - e)) / (2.0 * step)
    return grad


def finite_diff_gradient(spec: KernelSpec, data: Dataset, beta, lam: float,
                         step: float = 1e-5) -> np.ndarray:
    """Central differences of ``J_n``; needs ``beta_l >= step`` everywhere."""
    beta = np.asarray(beta, dtype=float)
    if np.any(beta < step):
        raise ValueError("central differences need beta_l >= step for every coordinate")
    objective = KrrObjective(spec, data, lam)
    return central_difference(objective.value, beta, step)


def estimate_lipschitz(objective: KrrObjective, pairs: int = 5, radius: float = 1.0,
                       rng: np.random.Generator | None = None, beta0=None) -> float:
    """Empirical Lipschitz constant of ``grad J_n`` from random pairs.

    Pairs are drawn as ``beta0 + u`` and ``beta0 + u'`` with ``u, u'``
    uniform nonnegative vectors scaled to l1 norm at most ``radius``.
    Returns the largest observed ratio ``||dgrad|| / ||dbeta||``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    p = objective.p
    base = np.zeros(p) if beta0 is None else np.asarray(beta0, dtype=float)
    best = 0.0
    for _ in range(pairs):
        a, b = (base + radius * rng.uniform() * rng.dirichlet(np.ones(p)) for _ in range(2))
        ga = objective.report(a).grad
        gb = objective.report(b).grad
        step = np.linalg.norm(a - b)
        if step > 0:
            best = max(best, float(np.linalg.norm(ga - gb) / step))
    return best

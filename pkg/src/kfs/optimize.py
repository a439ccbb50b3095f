"""Projected gradient descent on the nonnegative l1 ball.

``pgd_select`` runs the plain algorithm from a given start, ``hier_select``
the multi-round variant that pins already-selected features at ``tau`` and
searches the remaining ones for interactions.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .gradient import GradientReport, KrrObjective
from .kernels import CoordinateDiffs, KernelSpec
from .krr import Dataset

log = logging.getLogger(__name__)


class OptimizationError(RuntimeError):
    """Descent could not be made monotone by step halving."""


def project_l1_nonneg(v, M: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{b >= 0, sum(b) <= M}``.

    The result is ``(v - theta)_+`` where ``theta = 0`` if the clipped
    vector already fits in the budget, and otherwise the water level
    found by a sort-and-scan over the descending entries of ``v``.
    """
    if not M > 0:
        raise ValueError(f"budget M must be positive, got {M}")
    v = np.asarray(v, dtype=float)
    w = np.maximum(v, 0.0)
    if w.sum() <= M:
        return w
    u = np.sort(w)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, u.size + 1)
    rho = np.nonzero(u * k > css - M)[0][-1]
    theta = (css[rho] - M) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


@dataclass(frozen=True)
class Beta:
    """Feasible feature weights: nonnegative with ``sum <= M``."""

    values: np.ndarray
    M: float

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError("beta must be a vector")
        if np.any(values < 0) or values.sum() > self.M + 1e-12:
            raise ValueError(f"beta is infeasible for budget M={self.M}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass
class SelectionConfig:
    """Hyperparameters of the selection run.

    ``stepsize="auto"`` resolves to ``1 / L`` with ``L`` an empirical
    Lipschitz constant of the gradient; steps that would increase the
    penalized objective are halved (at most ``max_halvings`` times).
    """

    lam: float
    gamma: float = 0.0
    M: float = 10.0
    stepsize: float | str = "auto"
    max_iters: int = 2000
    tol: float = 1e-7
    support_eps: float = 1e-8
    tau: float = 1.0
    seed: int = 0
    lipschitz_pairs: int = 5
    monotone_tol: float = 1e-12
    max_halvings: int = 20

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if not self.M > 0:
            raise ValueError(f"M must be positive, got {self.M}")
        if self.stepsize != "auto" and not (isinstance(self.stepsize, (int, float)) and self.stepsize > 0):
            raise ValueError(f"stepsize must be positive or 'auto', got {self.stepsize!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.support_eps < 0:
            raise ValueError("support_eps must be nonnegative")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SelectionResult:
    beta_final: Beta
    support: tuple[int, ...]
    objective_history: list[float]
    iterate_sup_changes: list[float]
    rounds: list[tuple[int, ...]] = field(default_factory=list)
    config_echo: dict = field(default_factory=dict)
    stepsize: float = float("nan")
    iterations: int = 0
    converged: bool = False
    ever_support: tuple[int, ...] = ()
    round_histories: list[list[float]] = field(default_factory=list)

    @property
    def beta(self) -> np.ndarray:
        return self.beta_final.values

    def to_dict(self, one_based: bool = False) -> dict:
        shift = 1 if one_based else 0
        return {
            "beta": [float(b) for b in self.beta],
            "M": self.beta_final.M,
            "support": [l + shift for l in self.support],
            "ever_support": [l + shift for l in self.ever_support],
            "rounds": [[l + shift for l in r] for r in self.rounds],
            "objective_history": list(self.objective_history),
            "iterate_sup_changes": list(self.iterate_sup_changes),
            "round_histories": [list(h) for h in self.round_histories],
            "stepsize": self.stepsize,
            "iterations": self.iterations,
            "converged": self.converged,
            "config": self.config_echo,
        }


StepCallback = Callable[[int, np.ndarray, GradientReport, np.ndarray], None]


def _support(beta: np.ndarray, eps: float) -> tuple[int, ...]:
    return tuple(int(l) for l in np.flatnonzero(beta > eps))


def resolve_stepsize(objective: KrrObjective, config: SelectionConfig, beta0: np.ndarray,
                     free: np.ndarray) -> float:
    """Turn ``config.stepsize`` into a number (``1/L`` for ``"auto"``)."""
    if config.stepsize != "auto":
        return float(config.stepsize)
    rng = np.random.default_rng(config.seed)
    p = beta0.size
    n_free = int(free.sum())
    radius = min(config.M, 1.0)
    best = 0.0
    for _ in range(config.lipschitz_pairs):
        pair = []
        for _ in range(2):
            b = beta0.copy()
            b[free] += radius * rng.uniform() * rng.dirichlet(np.ones(n_free))
            pair.append(b)
        a, b = pair
        dist = np.linalg.norm(a - b)
        if dist > 0:
            dg = objective.report(a).grad - objective.report(b).grad
            best = max(best, float(np.linalg.norm(dg[free]) / dist))
    if best <= 1e-300:
        return config.M
    return 1.0 / best


def _run_pgd(objective: KrrObjective, config: SelectionConfig, beta0: np.ndarray,
             pinned: Sequence[int], callback: StepCallback | None = None) -> SelectionResult:
    p = objective.p
    beta = np.array(beta0, dtype=float)
    free = np.ones(p, dtype=bool)
    free[list(pinned)] = False
    beta[~free] = config.tau
    gamma = config.gamma
    echo = config.to_dict()

    report = objective.report(beta)
    value = report.objective + gamma * float(beta.sum())
    history = [value]
    changes: list[float] = []
    ever = beta > config.support_eps
    if not free.any():
        return SelectionResult(Beta(beta, max(config.M, float(beta.sum()))),
                               _support(beta, config.support_eps), history, changes,
                               config_echo=echo, converged=True,
                               ever_support=_support(beta, config.support_eps))

    step = resolve_stepsize(objective, config, beta, free)
    halvings = 0
    converged = False
    iterations = 0
    for it in range(config.max_iters):
        while True:
            candidate = beta.copy()
            candidate[free] = project_l1_nonneg(beta[free] - step * report.grad_regularized[free],
                                                config.M)
            new_report = objective.report(candidate)
            new_value = new_report.objective + gamma * float(candidate.sum())
            if new_value <= value + config.monotone_tol:
                break
            halvings += 1
            if halvings > config.max_halvings:
                raise OptimizationError(
                    f"objective still increases after {config.max_halvings} step halvings "
                    f"(iteration {it}, step {step:.3g})")
            step *= 0.5
            log.debug("halving stepsize to %.3g at iteration %d", step, it)
        if callback is not None:
            callback(it, beta, report, candidate)
        change = float(np.max(np.abs(candidate - beta)))
        beta, report, value = candidate, new_report, new_value
        history.append(value)
        changes.append(change)
        ever |= beta > config.support_eps
        iterations = it + 1
        if change <= config.tol:
            converged = True
            break

    budget_total = config.M + config.tau * (p - int(free.sum()))
    return SelectionResult(
        beta_final=Beta(beta, budget_total),
        support=_support(beta, config.support_eps),
        objective_history=history,
        iterate_sup_changes=changes,
        config_echo=echo,
        stepsize=step,
        iterations=iterations,
        converged=converged,
        ever_support=tuple(int(l) for l in np.flatnonzero(ever)),
    )


def _objective(spec, data, config, diffs):
    if isinstance(spec, KrrObjective):
        return spec
    return KrrObjective(spec, data, config.lam, config.gamma, diffs=diffs)


def pgd_select(spec: KernelSpec, data: Dataset, config: SelectionConfig, beta0=None,
               diffs: CoordinateDiffs | None = None,
               callback: StepCallback | None = None) -> SelectionResult:
    """Projected gradient descent from ``beta0`` (zero by default)."""
    beta0 = np.zeros(data.p) if beta0 is None else np.asarray(getattr(beta0, "values", beta0), float)
    Beta(beta0, config.M)
    return _run_pgd(_objective(spec, data, config, diffs), config, beta0, (), callback)


def pgd_select_pinned(spec: KernelSpec, data: Dataset, config: SelectionConfig,
                      pinned: Sequence[int], beta0=None, diffs: CoordinateDiffs | None = None,
                      callback: StepCallback | None = None) -> SelectionResult:
    """PGD with ``beta[pinned] = tau`` held fixed.

    The free block starts at ``beta0`` restricted to it (zero by default)
    and is projected onto its own l1 ball of radius ``M``.
    """
    pinned = sorted({int(l) for l in pinned})
    if any(l < 0 or l >= data.p for l in pinned):
        raise ValueError(f"pinned indices must lie in [0, {data.p})")
    start = np.zeros(data.p) if beta0 is None else np.array(getattr(beta0, "values", beta0), float)
    start[pinned] = 0.0
    Beta(start, config.M)
    return _run_pgd(_objective(spec, data, config, diffs), config, start, pinned, callback)


def hier_select(spec: KernelSpec, data: Dataset, config: SelectionConfig,
                diffs: CoordinateDiffs | None = None) -> SelectionResult:
    """Multi-round selection that grows a pinned set until it stops changing.

    Round ``m`` pins the current set at ``tau`` and starts the free block
    at zero; its support is merged into the set.  At most ``p`` rounds.
    """
    objective = _objective(spec, data, config, diffs)
    selected: set[int] = set()
    rounds: list[tuple[int, ...]] = []
    histories: list[list[float]] = []
    result = None
    for _ in range(data.p):
        result = pgd_select_pinned(objective, data, config, sorted(selected))
        grown = selected | set(result.support)
        rounds.append(tuple(sorted(grown)))
        histories.append(result.objective_history)
        if grown == selected:
            break
        selected = grown
    result.rounds = rounds
    result.round_histories = histories
    result.support = tuple(sorted(set(result.support) | selected))
    return result

"""Monte-Carlo harness for the synthetic recovery experiments.

Every trial draws a fresh dataset from ``(seed, trial)`` and runs selection
from ``beta = 0`` at each penalty on the grid; the dataset is shared across
kernels and penalties within a trial.  Results are aggregated in trial
order, so a sweep is reproducible bit-for-bit from its arguments.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .gradient import KrrObjective
from .kernels import CoordinateDiffs, KernelSpec, laplace
from .krr import Dataset, SolverError
from .optimize import OptimizationError, SelectionConfig, hier_select, pgd_select, project_l1_nonneg
from .signals import BETA_STREAM, DATA_STREAM, ModelSpec, generate_raw, hierarchical_model, make_rng

log = logging.getLogger(__name__)

FIG1_GAMMAS = (0.0, 0.002, 0.005, 0.01, 0.02, 0.05, 0.20, 0.6, 2.0)
FIG2_GAMMAS = (0.0, 0.002, 0.005, 0.01, 0.02, 0.05, 0.2, 0.5, 1.0)
DESK_N = 200
DESK_P = 200
DESK_TRIALS = 20
DESK_MAX_ITERS = 500


@dataclass
class RocPoint:
    kernel: str
    q: int
    gamma: float
    tpr_per_signal: dict[int, float]
    fpr: float
    trials: int
    failures: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("a ROC point needs at least one trial")


@dataclass
class TrendPoint:
    n: int
    sup_dev: float
    seeds: int
    per_seed: list[float] = field(default_factory=list)


@dataclass
class TrialOutcome:
    """Selection outcome of one (kernel, gamma, trial) cell."""

    kernel: str
    gamma: float
    trial: int
    support: tuple[int, ...] = ()
    rounds: list[tuple[int, ...]] = field(default_factory=list)
    error: str | None = None


def _dataset(model: ModelSpec, n: int, seed: int, trial: int) -> Dataset:
    X, y = generate_raw(model, n, make_rng(seed, DATA_STREAM, trial))
    return Dataset.from_arrays(X, y)


def _run_trial(args) -> list[TrialOutcome]:
    model, kernels, gammas, n, base_config, seed, trial, hierarchical = args
    data = _dataset(model, n, seed, trial)
    outcomes = []
    for spec in kernels:
        diffs = CoordinateDiffs(data, spec.q)
        for gamma in gammas:
            config = replace(base_config, gamma=float(gamma))
            cell = TrialOutcome(spec.name, float(gamma), trial)
            try:
                if hierarchical:
                    result = hier_select(spec, data, config, diffs=diffs)
                    cell.rounds = list(result.rounds)
                else:
                    result = pgd_select(spec, data, config, diffs=diffs)
                cell.support = tuple(result.support)
            except (SolverError, OptimizationError) as exc:
                log.warning("trial %d, %s, gamma=%g failed: %s", trial, spec.name, gamma, exc)
                cell.error = f"{type(exc).__name__}: {exc}"
            outcomes.append(cell)
    return outcomes


def _aggregate(outcomes: Sequence[TrialOutcome], kernels, gammas, signals, p) -> dict[str, list[RocPoint]]:
    noise = p - len(signals)
    table: dict[str, list[RocPoint]] = {}
    for spec in kernels:
        points = []
        for gamma in gammas:
            cells = [c for c in outcomes if c.kernel == spec.name and c.gamma == float(gamma)]
            ok = [c for c in cells if c.error is None]
            failures = len(cells) - len(ok)
            if ok:
                tpr = {l: float(np.mean([l in c.support for c in ok])) for l in signals}
                fpr = float(np.mean([len(set(c.support) - set(signals)) / noise for c in ok])) if noise else 0.0
            else:
                tpr = {l: float("nan") for l in signals}
                fpr = float("nan")
            points.append(RocPoint(spec.name, spec.q, float(gamma), tpr, fpr, max(len(ok), 1), failures))
        table[spec.name] = points
    return table


def _sweep(model, kernels, gammas, n, config, trials, seed, hierarchical, workers):
    if not gammas:
        raise ValueError("the penalty grid is empty")
    if trials < 1:
        raise ValueError("need at least one trial")
    jobs = [(model, tuple(kernels), tuple(gammas), n, config, seed, t, hierarchical)
            for t in range(trials)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(_run_trial, jobs))
    else:
        per_trial = [_run_trial(job) for job in jobs]
    return [cell for cells in per_trial for cell in cells]


def default_config(lam: float, **overrides) -> SelectionConfig:
    params = dict(lam=lam, max_iters=DESK_MAX_ITERS)
    params.update(overrides)
    return SelectionConfig(**params)


def run_roc(model: ModelSpec, kernel_specs: Sequence[KernelSpec], gamma_grid=FIG1_GAMMAS,
            n: int = DESK_N, p: int | None = None, lam: float = 0.01, trials: int = DESK_TRIALS,
            seed: int = 0, config: SelectionConfig | None = None, workers: int = 1,
            return_outcomes: bool = False):
    """Recovery and false-positive frequencies along the penalty grid.

    Returns ``{kernel name: [RocPoint per gamma]}`` (and the raw per-trial
    outcomes when ``return_outcomes`` is set).
    """
    if p is not None and p != model.p:
        model = replace(model, p=p)
    config = default_config(lam) if config is None else replace(config, lam=lam)
    outcomes = _sweep(model, kernel_specs, gamma_grid, n, config, trials, seed, False, workers)
    table = _aggregate(outcomes, kernel_specs, gamma_grid, model.signal_indices, model.p)
    return (table, outcomes) if return_outcomes else table


def run_hier_experiment(n: int = DESK_N, p: int = DESK_P, sigma2: float = 1.0, lam: float = 0.01,
                        gamma_grid=FIG2_GAMMAS, trials: int = DESK_TRIALS, seed: int = 0,
                        kernel: KernelSpec | None = None, config: SelectionConfig | None = None,
                        workers: int = 1, return_outcomes: bool = False):
    """Hierarchical-interaction sweep with multi-round selection."""
    model = hierarchical_model(p, sigma2)
    kernel = laplace() if kernel is None else kernel
    config = default_config(lam) if config is None else replace(config, lam=lam)
    outcomes = _sweep(model, [kernel], gamma_grid, n, config, trials, seed, True, workers)
    points = _aggregate(outcomes, [kernel], gamma_grid, model.signal_indices, model.p)[kernel.name]
    return (points, outcomes) if return_outcomes else points


def random_betas(p: int, count: int, M: float, seed: int) -> np.ndarray:
    """``count`` random points of the feasible set, shared across sample sizes."""
    rng = make_rng(seed, BETA_STREAM)
    return np.array([project_l1_nonneg(rng.uniform(0.0, 1.0, p), M) for _ in range(count)])


def run_concentration_trend(model: ModelSpec, kernel: KernelSpec, lam: float, n_list: Sequence[int],
                            seeds: int, n_ref: int, n_beta: int = 5, M: float = 10.0,
                            base_seed: int = 0) -> list[TrendPoint]:
    """Sup-norm gap between gradients at size ``n`` and at ``n_ref``.

    For each seed one sample of size ``n_ref`` is drawn; the size-``n``
    sample is its first ``n`` rows (re-centered), so ``n = n_ref`` gives
    zero deviation.  ``sup_dev`` is the median over seeds of the largest
    ``||grad_n - grad_ref||_inf`` over ``n_beta`` shared random betas.
    """
    n_list = sorted(int(n) for n in n_list)
    if n_ref < 4 * max(n_list) and max(n_list) != n_ref:
        raise ValueError("n_ref must be at least four times the largest n")
    betas = random_betas(model.p, n_beta, M, base_seed)
    devs = {n: [] for n in n_list}
    for s in range(seeds):
        X, y = generate_raw(model, n_ref, make_rng(base_seed, DATA_STREAM, s))
        ref = Dataset.from_arrays(X, y)
        ref_obj = KrrObjective(kernel, ref, lam)
        ref_grads = [ref_obj.report(b).grad for b in betas]
        for n in n_list:
            sub = ref if n == n_ref else Dataset.from_arrays(X[:n], y[:n])
            obj = KrrObjective(kernel, sub, lam)
            devs[n].append(max(float(np.max(np.abs(obj.report(b).grad - g)))
                               for b, g in zip(betas, ref_grads)))
    return [TrendPoint(n, float(np.median(devs[n])), seeds, devs[n]) for n in n_list]


def roc_rows(table: dict[str, list[RocPoint]]) -> tuple[list[str], list[list]]:
    """Header and rows in the frozen column order ``kernel,q,gamma,fpr,tpr_k...,trials``."""
    signals = sorted({l for pts in table.values() for pt in pts for l in pt.tpr_per_signal})
    header = ["kernel", "q", "gamma", "fpr"] + [f"tpr_{l + 1}" for l in signals] + ["trials"]
    rows = []
    for name, points in table.items():
        for pt in points:
            rows.append([name, pt.q, repr(pt.gamma), repr(pt.fpr)]
                        + [repr(pt.tpr_per_signal[l]) for l in signals] + [pt.trials])
    return header, rows


def roc_csv(table: dict[str, list[RocPoint]]) -> str:
    header, rows = roc_rows(table)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def roc_json(table: dict[str, list[RocPoint]], config: dict) -> str:
    points = []
    for name, pts in table.items():
        for pt in pts:
            d = asdict(pt)
            d["tpr_per_signal"] = {str(l + 1): v for l, v in pt.tpr_per_signal.items()}
            points.append(d)
    return json.dumps({"schema": "kfs/1", "config": config, "points": points}, indent=2, sort_keys=True)

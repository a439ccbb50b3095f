import csv
import io
import json

import numpy as np
import pytest

from kfs.experiments import (FIG1_GAMMAS, FIG2_GAMMAS, RocPoint, default_config, random_betas, roc_csv, roc_json,
                             run_concentration_trend, run_hier_experiment, run_roc)
from kfs.gradient import gradient_sup_bound
from kfs.kernels import gaussian, laplace
from kfs.optimize import SelectionConfig
from kfs.signals import generate, main_effect_model

SMALL = dict(n=40, lam=0.05, config=default_config(0.05, max_iters=60))


def test_grids_match_protocols():
    assert FIG1_GAMMAS == (0.0, 0.002, 0.005, 0.01, 0.02, 0.05, 0.20, 0.6, 2.0)
    assert FIG2_GAMMAS == (0.0, 0.002, 0.005, 0.01, 0.02, 0.05, 0.2, 0.5, 1.0)


def test_heavy_penalty_selects_nothing():
    model = main_effect_model(10, 4.0)
    gamma = max(gradient_sup_bound(spec, generate(model, 40, 0, t), 0.05)
                for spec in (laplace(), gaussian()) for t in range(2))
    table = run_roc(model, [laplace(), gaussian()], (1.01 * gamma,), trials=2, **SMALL)
    for points in table.values():
        assert points[0].fpr == 0.0
        assert all(v == 0.0 for v in points[0].tpr_per_signal.values())


def test_roc_is_reproducible():
    model = main_effect_model(8, 4.0)
    a = run_roc(model, [laplace()], (0.0, 0.05), trials=1, seed=3, **SMALL)
    b = run_roc(model, [laplace()], (0.0, 0.05), trials=1, seed=3, **SMALL)
    assert a == b
    assert roc_csv(a) == roc_csv(b)


def test_parallel_trials_match_serial():
    model = main_effect_model(8, 4.0)
    serial = run_roc(model, [laplace()], (0.01,), trials=2, seed=1, **SMALL)
    parallel = run_roc(model, [laplace()], (0.01,), trials=2, seed=1, workers=2, **SMALL)
    assert serial == parallel


def test_roc_point_fields():
    model = main_effect_model(8, 4.0)
    table, outcomes = run_roc(model, [laplace(), gaussian()], (0.0, 0.2), trials=2, return_outcomes=True, **SMALL)
    assert list(table) == ["laplace", "gaussian"]
    assert len(outcomes) == 2 * 2 * 2
    for points in table.values():
        assert [pt.gamma for pt in points] == [0.0, 0.2]
        for pt in points:
            assert pt.trials == 2 and pt.failures == 0
            assert set(pt.tpr_per_signal) == {0, 1}
            assert 0 <= pt.fpr <= 1 and all(0 <= v <= 1 for v in pt.tpr_per_signal.values())


def test_failures_are_counted_not_raised():
    model = main_effect_model(6, 4.0)
    config = SelectionConfig(lam=0.01, stepsize=1e4, max_halvings=0, max_iters=20)
    table = run_roc(model, [laplace()], (0.0,), n=40, lam=0.01, trials=2, config=config)
    pt = table["laplace"][0]
    assert pt.failures == 2
    assert np.isnan(pt.fpr)


def test_fpr_nonincreasing_in_gamma():
    model = main_effect_model(10, 4.0)
    trials = 3
    table = run_roc(model, [laplace()], (0.0, 0.05, 0.6, 2.0), trials=trials, **SMALL)
    fprs = [pt.fpr for pt in table["laplace"]]
    assert all(b <= a + 2 / np.sqrt(trials) for a, b in zip(fprs, fprs[1:]))


def test_roc_requires_grid_and_trials():
    with pytest.raises(ValueError):
        run_roc(main_effect_model(5), [laplace()], (), n=20, trials=1)
    with pytest.raises(ValueError):
        run_roc(main_effect_model(5), [laplace()], (0.1,), n=20, trials=0)
    with pytest.raises(ValueError):
        RocPoint("laplace", 1, 0.1, {}, 0.0, 0)


def test_p_override_resizes_model():
    table = run_roc(main_effect_model(5), [laplace()], (0.05,), p=7, trials=1, **SMALL)
    assert table["laplace"][0].trials == 1


def test_hier_noiseless_heavy_penalty_is_empty():
    points, outcomes = run_hier_experiment(n=30, p=6, sigma2=0.0, lam=0.05, gamma_grid=(50.0,), trials=2,
                                           config=default_config(0.05, max_iters=30), return_outcomes=True)
    assert points[0].fpr == 0.0 and all(v == 0 for v in points[0].tpr_per_signal.values())
    assert all(c.rounds == [()] for c in outcomes)


def test_hier_reproducible():
    kw = dict(n=40, p=6, lam=0.05, gamma_grid=(0.05,), trials=1, seed=2,
              config=default_config(0.05, max_iters=40))
    a, oa = run_hier_experiment(return_outcomes=True, **kw)
    b, ob = run_hier_experiment(return_outcomes=True, **kw)
    assert a == b and oa == ob
    assert set(a[0].tpr_per_signal) == {0, 1, 2}


def test_random_betas_feasible_and_seeded():
    B = random_betas(6, 5, 2.0, 0)
    assert B.shape == (5, 6)
    assert np.all(B >= 0) and np.all(B.sum(axis=1) <= 2.0 + 1e-12)
    assert np.array_equal(B, random_betas(6, 5, 2.0, 0))


def test_trend_reference_point_is_zero():
    model = main_effect_model(4, 4.0)
    points = run_concentration_trend(model, laplace(), 0.1, [20, 80], seeds=2, n_ref=80)
    assert [pt.n for pt in points] == [20, 80]
    assert points[-1].sup_dev == 0.0
    assert points[0].sup_dev > 0 and len(points[0].per_seed) == 2


def test_trend_requires_large_reference():
    with pytest.raises(ValueError):
        run_concentration_trend(main_effect_model(4), laplace(), 0.1, [20, 40], seeds=1, n_ref=100)


def test_csv_and_json_layout():
    model = main_effect_model(8, 4.0)
    table = run_roc(model, [laplace(), gaussian()], (0.0, 0.05), trials=1, **SMALL)
    rows = list(csv.reader(io.StringIO(roc_csv(table))))
    assert rows[0] == ["kernel", "q", "gamma", "fpr", "tpr_1", "tpr_2", "trials"]
    assert [r[0] for r in rows[1:]] == ["laplace", "laplace", "gaussian", "gaussian"]
    assert rows[3][1] == "2"
    doc = json.loads(roc_json(table, {"lambda": 0.05}))
    assert doc["schema"] == "kfs/1" and doc["config"] == {"lambda": 0.05}
    assert set(doc["points"][0]["tpr_per_signal"]) == {"1", "2"}

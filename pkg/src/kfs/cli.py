"""Command-line front end: ``kfs {select,hier,experiment,gradcheck}``.

Exit codes: 0 success, 1 gradient check out of tolerance, 2 bad input or
flags, 3 numerical failure (the message names the stage).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import (DESK_N, DESK_P, DESK_TRIALS, FIG1_GAMMAS, FIG2_GAMMAS, default_config,
                          roc_csv, roc_json, run_concentration_trend, run_hier_experiment, run_roc)
from .gradient import finite_diff_gradient, full_gradient, nsd_quadratic_form
from .kernels import KernelError, default_threads, parse_kernel
from .krr import DataError, Dataset, SolverError
from .optimize import OptimizationError, SelectionConfig, hier_select, pgd_select
from .signals import DATA_STREAM, main_effect_model, make_rng

log = logging.getLogger("kfs")

SCHEMA = "kfs/1"
EXIT_OK, EXIT_TOLERANCE, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3

GRADCHECK_RTOL = 1e-5
GRADCHECK_NSD_TOL = 1e-10

# key -> (type, default); shared by flags and --config files
SELECT_KEYS = {
    "kernel": (str, "laplace"),
    "q": (int, None),
    "lambda": (float, None),
    "gamma": (float, 0.0),
    "M": (float, 10.0),
    "step": (str, "auto"),
    "max_iters": (int, 2000),
    "tol": (float, 1e-7),
    "support_eps": (float, 1e-8),
    "target": (str, None),
    "seed": (int, 0),
    "tau": (float, 1.0),
    "out": (str, "kfs-out"),
    "threads": (int, None),
}
EXPERIMENT_KEYS = {
    "protocol": (str, None),
    "kernel": (str, None),
    "q": (int, None),
    "lambda": (float, None),
    "gammas": (str, None),
    "sigma2": (float, None),
    "M": (float, 10.0),
    "max_iters": (int, None),
    "tol": (float, 1e-7),
    "n": (int, None),
    "p": (int, None),
    "trials": (int, DESK_TRIALS),
    "seed": (int, 0),
    "out": (str, "kfs-out"),
    "threads": (int, None),
}
GRADCHECK_KEYS = {
    "kernel": (str, None),
    "q": (int, None),
    "n": (int, 40),
    "p": (int, 8),
    "lambda": (float, 0.1),
    "seed": (int, 0),
    "step": (float, 1e-5),
    "threads": (int, None),
}


class UsageError(Exception):
    """Malformed flags, config or input data (exit 2)."""


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def _add_keys(parser: argparse.ArgumentParser, keys: dict, helps: dict):
    for key, (kind, _) in keys.items():
        kw = {"dest": key, "default": None, "help": helps.get(key)}
        kw["type"] = int if kind is int else float if kind is float else str
        parser.add_argument(_flag(key), **kw)
    parser.add_argument("--config", help="key=value file; flags override its entries")


HELP = {
    "kernel": "laplace, gaussian or mixture:t1:w1,t2:w2",
    "q": "distance exponent (1 or 2)",
    "lambda": "ridge parameter (required)",
    "gamma": "l1 penalty",
    "M": "l1 budget of the free weights",
    "step": "stepsize or 'auto'",
    "target": "response column (default: last column)",
    "out": "output directory",
    "threads": "worker count (default: KFS_THREADS or all cores)",
    "tau": "value of pinned weights in hierarchical rounds",
    "protocol": "fig1, fig2 or trend",
    "gammas": "comma-separated penalty grid",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kfs", description="Kernel feature selection.")
    parser.add_argument("--version", action="version", version=f"kfs {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, text in (("select", "projected gradient descent from beta = 0"),
                       ("hier", "multi-round selection for hierarchical interactions")):
        p = sub.add_parser(name, help=text)
        p.add_argument("input", help="CSV file with a header row")
        _add_keys(p, SELECT_KEYS, HELP)

    p = sub.add_parser("experiment", help="synthetic recovery sweeps and the concentration trend")
    _add_keys(p, EXPERIMENT_KEYS, HELP)

    p = sub.add_parser("gradcheck", help="closed-form gradient against finite differences")
    _add_keys(p, GRADCHECK_KEYS, HELP)
    return parser


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, quotes are stripped."""
    entries = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        entries[key.replace("-", "_")] = value.strip("\"'")
    return entries


def resolve_options(args: argparse.Namespace, keys: dict) -> dict:
    """Defaults, then the config file, then explicit flags."""
    options = {key: default for key, (_, default) in keys.items()}
    if getattr(args, "config", None):
        for key, raw in read_config_file(args.config).items():
            if key not in keys:
                raise UsageError(f"unknown config key {key!r}")
            kind = keys[key][0]
            try:
                options[key] = kind(raw)
            except ValueError as exc:
                raise UsageError(f"config key {key!r}: cannot parse {raw!r}") from exc
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            options[key] = value
    if "threads" in options and options["threads"] is None:
        options["threads"] = default_threads()
    return options


def load_csv(path, target: str | None = None) -> tuple[Dataset, str]:
    """Read a numeric CSV with a header row into a centered :class:`Dataset`.

    Columns whose entries are all non-numeric (labels, ids) are dropped;
    any other unparsable or non-finite entry is an error naming its line.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    # keep physical line numbers for error messages; blank lines are skipped
    numbered = [(i + 1, r) for i, r in enumerate(rows) if any(cell.strip() for cell in r)]
    if len(numbered) < 2:
        raise UsageError(f"{path}: need a header row and at least one data row")
    header = [h.strip() for h in numbered[0][1]]
    lines = [i for i, _ in numbered[1:]]
    body = [r for _, r in numbered[1:]]
    for line, row in zip(lines, body):
        if len(row) != len(header):
            raise UsageError(f"{path}: line {line} has {len(row)} fields, header has {len(header)}")

    def number(cell):
        try:
            return float(cell)
        except ValueError:
            return None

    parsed = [[number(cell) for cell in row] for row in body]
    keep = [j for j in range(len(header)) if any(row[j] is not None for row in parsed)]
    target = header[keep[-1]] if target is None and keep else target
    if target not in header:
        raise UsageError(f"{path}: target column {target!r} not found")
    t = header.index(target)
    if t not in keep:
        raise UsageError(f"{path}: target column {target!r} is not numeric")
    features = [j for j in keep if j != t]
    if not features:
        raise UsageError(f"{path}: no numeric feature columns")
    for k, row in enumerate(parsed):
        for j in keep:
            if row[j] is None or not math.isfinite(row[j]):
                raise UsageError(f"{path}: line {lines[k]} (data row {k + 1}), column {header[j]!r}: "
                                 f"non-finite or non-numeric value {body[k][j]!r}")
    arr = np.array([[row[j] for j in keep] for row in parsed])
    cols = {j: c for c, j in enumerate(keep)}
    X = arr[:, [cols[j] for j in features]]
    y = arr[:, cols[t]]
    data = Dataset.from_arrays(X, y, feature_names=tuple(header[j] for j in features))
    return data, target


def sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write(out_dir: Path, name: str, text: str) -> str:
    path = out_dir / name
    path.write_text(text)
    return str(path)


def write_manifest(out_dir: Path, command: str, config: dict, inputs, outputs, started: float,
                   extra: dict | None = None) -> str:
    manifest = {
        "schema": SCHEMA,
        "command": command,
        "config": config,
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": list(outputs),
        "wall_clock_seconds": time.perf_counter() - started,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "version": __version__,
    }
    manifest.update(extra or {})
    return _write(out_dir, "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _kernel(options) -> "KernelSpec":
    try:
        return parse_kernel(options["kernel"], options["q"])
    except KernelError as exc:
        raise UsageError(str(exc)) from exc


def _stepsize(text):
    if text == "auto":
        return "auto"
    try:
        return float(text)
    except ValueError as exc:
        raise UsageError(f"--step must be a number or 'auto', got {text!r}") from exc


def _selection_config(options) -> SelectionConfig:
    if options["lambda"] is None:
        raise UsageError("--lambda is required")
    try:
        return SelectionConfig(lam=options["lambda"], gamma=options["gamma"], M=options["M"],
                               stepsize=_stepsize(options["step"]), max_iters=options["max_iters"],
                               tol=options["tol"], support_eps=options["support_eps"],
                               tau=options["tau"], seed=options["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_select(args, hierarchical: bool = False) -> int:
    started = time.perf_counter()
    options = resolve_options(args, SELECT_KEYS)
    spec = _kernel(options)
    config = _selection_config(options)
    data, target = load_csv(args.input, options["target"])
    stage = "hierarchical selection" if hierarchical else "selection"
    try:
        result = hier_select(spec, data, config) if hierarchical else pgd_select(spec, data, config)
    except SolverError as exc:
        raise _StageFailure(f"KRR solve failed during {stage}: {exc} {exc.diagnostics}") from exc
    except OptimizationError as exc:
        raise _StageFailure(f"descent step failed during {stage}: {exc}") from exc

    out_dir = Path(options["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"schema": SCHEMA, "command": args.command, "kernel": spec.name, "q": spec.q,
               "target": target, "feature_names": list(data.feature_names),
               **result.to_dict(one_based=True)}
    payload["selected_features"] = [data.feature_names[l] for l in result.support]
    name = "hier.json" if hierarchical else "selection.json"
    outputs = [_write(out_dir, name, json.dumps(payload, indent=2) + "\n")]
    outputs.append(write_manifest(out_dir, args.command, options, [args.input], outputs, started,
                                  {"y_mean": data.y_mean}))
    print(f"support (1-based): {[l + 1 for l in result.support]}")
    return EXIT_OK


class _StageFailure(Exception):
    """Numerical failure in a named stage (exit 3)."""


def _gamma_grid(text, default):
    if text is None:
        return default
    try:
        grid = tuple(float(g) for g in text.split(",") if g.strip())
    except ValueError as exc:
        raise UsageError(f"malformed --gammas {text!r}") from exc
    if not grid:
        raise UsageError("--gammas is empty")
    return grid


def cmd_experiment(args) -> int:
    started = time.perf_counter()
    options = resolve_options(args, EXPERIMENT_KEYS)
    protocol = options["protocol"]
    if protocol not in ("fig1", "fig2", "trend"):
        raise UsageError(f"--protocol must be fig1, fig2 or trend, got {protocol!r}")
    n = options["n"] or DESK_N
    p = options["p"] or DESK_P
    out_dir = Path(options["out"])
    workers = max(1, int(options["threads"]))
    try:
        if protocol == "trend":
            lam = options["lambda"] or 0.1
            spec = _kernel({**options, "kernel": options["kernel"] or "laplace"})
            model = main_effect_model(options["p"] or 10, 4.0 if options["sigma2"] is None else options["sigma2"])
            n_list = (options["n"] // 8, options["n"] // 4, options["n"] // 2, options["n"]) if options["n"] else (100, 200, 400, 800)
            if min(n_list) < 2:
                raise UsageError("--n is too small for the trend protocol")
            points = run_concentration_trend(model, spec, lam, n_list, options["trials"],
                                             4 * max(n_list), M=options["M"], base_seed=options["seed"])
            out_dir.mkdir(parents=True, exist_ok=True)
            lines = ["n,sup_dev,seeds"] + [f"{pt.n},{pt.sup_dev!r},{pt.seeds}" for pt in points]
            outputs = [_write(out_dir, "trend.csv", "\n".join(lines) + "\n")]
            doc = {"schema": SCHEMA, "config": options,
                   "points": [{"n": pt.n, "sup_dev": pt.sup_dev, "seeds": pt.seeds,
                               "per_seed": pt.per_seed} for pt in points]}
            outputs.append(_write(out_dir, "trend.json", json.dumps(doc, indent=2, sort_keys=True) + "\n"))
        else:
            lam = options["lambda"] or 0.01
            overrides = {"M": options["M"], "tol": options["tol"], "seed": options["seed"]}
            if options["max_iters"]:
                overrides["max_iters"] = options["max_iters"]
            config = default_config(lam, **overrides)
            if protocol == "fig1":
                sigma2 = 4.0 if options["sigma2"] is None else options["sigma2"]
                kernels = ([_kernel(options)] if options["kernel"]
                           else [parse_kernel("laplace"), parse_kernel("gaussian")])
                table = run_roc(main_effect_model(p, sigma2), kernels,
                                _gamma_grid(options["gammas"], FIG1_GAMMAS), n=n, lam=lam,
                                trials=options["trials"], seed=options["seed"], config=config,
                                workers=workers)
            else:
                sigma2 = 1.0 if options["sigma2"] is None else options["sigma2"]
                kernel = _kernel(options) if options["kernel"] else None
                points = run_hier_experiment(n, p, sigma2, lam, _gamma_grid(options["gammas"], FIG2_GAMMAS),
                                             options["trials"], options["seed"], kernel=kernel,
                                             config=config, workers=workers)
                table = {points[0].kernel: points}
            out_dir.mkdir(parents=True, exist_ok=True)
            outputs = [_write(out_dir, "roc.csv", roc_csv(table)),
                       _write(out_dir, "roc.json", roc_json(table, {**options, "lambda": lam}) + "\n")]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    except SolverError as exc:
        raise _StageFailure(f"KRR solve failed during the {protocol} experiment: {exc}") from exc
    outputs.append(write_manifest(out_dir, "experiment", options, [], outputs, started))
    print("\n".join(outputs[:-1]))
    return EXIT_OK


def gradcheck_once(spec, n: int, p: int, lam: float, seed: int, step: float = 1e-5) -> tuple[float, float, float]:
    """Relative FD error, NSD form and its tolerance scale on one random problem.

    Returns ``(max_l |g_l - fd_l| / (1 + |g_l|), sum_ij r_i r_j h'(d_ij), scale)``
    with ``scale = n^2 |h'(0)| max r^2``.
    """
    rng = make_rng(seed, DATA_STREAM, n, p, spec.q)
    X = rng.standard_normal((n, p))
    y = X[:, 0] + 0.5 * np.sin(X[:, -1]) + 0.3 * rng.standard_normal(n)
    data = Dataset.from_arrays(X, y)
    beta = rng.uniform(0.1, 1.0, p)
    report = full_gradient(spec, data, beta, lam)
    fd = finite_diff_gradient(spec, data, beta, lam, step=step)
    rel = float(np.max(np.abs(report.grad - fd) / (1.0 + np.abs(report.grad))))
    r = report.fit.residuals
    nsd = nsd_quadratic_form(spec, X, r, beta)
    scale = n * n * abs(spec.h_prime0) * float(np.max(r * r))
    return rel, nsd, scale


def cmd_gradcheck(args) -> int:
    options = resolve_options(args, GRADCHECK_KEYS)
    if options["n"] < 1 or options["p"] < 1:
        raise UsageError("--n and --p must be positive")
    if not options["lambda"] > 0:
        raise UsageError("--lambda must be positive")
    qs = [options["q"]] if options["q"] is not None else [1, 2]
    ok = True
    for q in qs:
        if options["kernel"] is None:
            spec = parse_kernel("laplace" if q == 1 else "gaussian")
        else:
            spec = _kernel({**options, "q": q})
        try:
            rel, nsd, scale = gradcheck_once(spec, options["n"], options["p"], options["lambda"],
                                             options["seed"], options["step"])
        except SolverError as exc:
            raise _StageFailure(f"KRR solve failed during the gradient check (q={q}): {exc}") from exc
        passed = rel <= GRADCHECK_RTOL and nsd <= GRADCHECK_NSD_TOL * scale
        ok &= passed
        print(f"q={q} kernel={spec.name} max_rel_err={rel:.3e} nsd_form={nsd:.3e} "
              f"nsd_tol={GRADCHECK_NSD_TOL * scale:.3e} {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_TOLERANCE


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", None):
        os.environ["KFS_THREADS"] = str(args.threads)
    try:
        if args.command == "select":
            return cmd_select(args)
        if args.command == "hier":
            return cmd_select(args, hierarchical=True)
        if args.command == "experiment":
            return cmd_experiment(args)
        return cmd_gradcheck(args)
    except (UsageError, DataError) as exc:
        parser.print_usage(sys.stderr)
        print(f"kfs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _StageFailure as exc:
        print(f"kfs: numerical failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())

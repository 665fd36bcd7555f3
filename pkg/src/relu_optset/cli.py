"""Command-line entry point: dataset ingestion, experiment orchestration,
and artifact emission.

Configuration lives in a single INI file (sections of flat key = value
pairs); any default can be inspected with ``relu-optset --show-config``.
Commands write JSON/CSV artifacts into the output directory and return
exit codes by failure class: 2 for parse/input errors, 3 for solver
failures, 4 for certificate failures.
"""

import argparse
import configparser
import csv
import io
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import serialize
from .core import (
    BlockPartition,
    CertificateError,
    CglError,
    CglProblem,
    SolverError,
    objective,
    penalty_sum,
)
from .fixtures import (
    duplicate_columns_problem,
    gaussian_data,
    min_norm_interp_problem,
    one_neuron_closed_form,
    one_neuron_data,
    split_indices,
)
from .optimal_set import (
    describe_set,
    flag_fit_jumps,
    is_unique,
    lasso_general_position,
    max_norm_approx,
    min_norm,
    recover_dual,
    trace_path,
    tune_over_set,
)
from .pruning import approximate_prune_relu, is_minimal, optimal_prune
from .reformulation import (
    build_cgl,
    convex_to_relu,
    enumerate_patterns,
    one_d_lasso_build,
    one_d_lasso_to_network,
    predict,
    relu_objective,
    split_convex_weights,
)
from .sensitivity import fd_jacobian, jacobians
from .solver import SolverOptions, solve

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_SOLVER = 3
EXIT_CERTIFICATE = 4

DEFAULT_CONFIG = """\
[data]
source = synthetic
generator = gaussian
path =
n = 10
d = 2
noise = 0.1
seed = 0
split = 1.0
split_seed = 0

[model]
arch = gated
pattern_mode = sampled
pattern_count = 8
pattern_seed = 0
lambda = 0.1
lambda_grid =

[solver]
max_iters = 50000
kkt_tol = 1e-6
step_rule = fixed
al_penalty_init = 10
al_penalty_growth = 10
seed = 0

[prune]
target_width = 0
scores = ls_residual,magnitude,gradient,random

[sensitivity]
fd_step = 0

[output]
dir = out
"""


class ParseError(CglError):
    pass


@dataclass(eq=False)
class Dataset:
    Z: np.ndarray
    y: np.ndarray
    splits: list  # index arrays, possibly a single full split

    @property
    def train(self):
        return self.splits[0]


@dataclass(eq=False)
class ExperimentConfig:
    raw: configparser.ConfigParser
    seed_override: int | None = None
    out_override: str | None = None

    def get(self, section, key):
        return self.raw.get(section, key)

    def getint(self, section, key):
        return self.raw.getint(section, key)

    def getfloat(self, section, key):
        return self.raw.getfloat(section, key)

    @property
    def out_dir(self):
        return Path(self.out_override or self.get("output", "dir"))

    def seed(self, section, key):
        if self.seed_override is not None:
            return self.seed_override
        return self.getint(section, key)


def load_config(path=None, seed=None, out=None):
    parser = configparser.ConfigParser()
    parser.read_string(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ParseError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ParseError(f"malformed config {path}: {exc}") from exc
    cfg = ExperimentConfig(raw=parser, seed_override=seed, out_override=out)
    source = cfg.get("data", "source")
    if source not in ("synthetic", "csv"):
        raise ParseError(f"unknown data source {source!r}")
    if source == "csv" and not cfg.get("data", "path"):
        raise ParseError("csv source requires data.path")
    return cfg


def load_dataset(path):
    """CSV with a header row; the last column is the target."""
    rows = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ParseError(f"cannot open dataset {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: empty file")
        width = len(header)
        if width < 2:
            raise ParseError(f"{path}: need at least one feature and a target")
        for r, row in enumerate(reader, start=2):
            if len(row) != width:
                raise ParseError(f"{path}: row {r} has {len(row)} cells, expected {width}")
            vals = []
            for c, cell in enumerate(row, start=1):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}: non-numeric cell at row {r}, column {c}: {cell!r}"
                    ) from None
            rows.append(vals)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(data)):
        raise ParseError(f"{path}: non-finite values in data")
    return data[:, :-1], data[:, -1]


def build_dataset(cfg):
    source = cfg.get("data", "source")
    if source == "csv":
        Z, y = load_dataset(cfg.get("data", "path"))
    else:
        gen = cfg.get("data", "generator")
        seed = cfg.seed("data", "seed")
        n = cfg.getint("data", "n")
        d = cfg.getint("data", "d")
        noise = cfg.getfloat("data", "noise")
        if gen == "gaussian":
            Z, y = gaussian_data(seed, n, d, noise)
        elif gen == "duplicate_blocks":
            prob = duplicate_columns_problem()
            Z, y = prob.X, prob.y
        elif gen == "min_norm_interp":
            prob = min_norm_interp_problem(0.05)
            Z, y = prob.X, prob.y
        elif gen == "one_neuron":
            Z, y = one_neuron_data()
        else:
            raise ParseError(f"unknown generator {gen!r}")
    fractions = [float(f) for f in cfg.get("data", "split").split(",")]
    if len(fractions) == 1:
        splits = [np.arange(Z.shape[0])]
    else:
        splits = split_indices(Z.shape[0], fractions, cfg.getint("data", "split_seed"))
        if any(len(s) == 0 for s in splits):
            raise ParseError("a split fraction produced an empty subset")
    return Dataset(Z=Z, y=y, splits=splits)


def solver_options(cfg):
    return SolverOptions(
        max_iters=cfg.getint("solver", "max_iters"),
        kkt_tol=cfg.getfloat("solver", "kkt_tol"),
        step_rule=cfg.get("solver", "step_rule"),
        al_penalty_init=cfg.getfloat("solver", "al_penalty_init"),
        al_penalty_growth=cfg.getfloat("solver", "al_penalty_growth"),
        seed=cfg.getint("solver", "seed"),
    )


def build_patterns(cfg, Z):
    mode = cfg.get("model", "pattern_mode")
    if mode == "exhaustive":
        return enumerate_patterns(Z, mode="exhaustive")
    if mode == "sampled":
        return enumerate_patterns(
            Z,
            mode="sampled",
            count=cfg.getint("model", "pattern_count"),
            seed=cfg.seed("model", "pattern_seed"),
        )
    raise ParseError(f"unknown pattern mode {mode!r}")


def lambda_grid(cfg):
    spec = cfg.get("model", "lambda_grid")
    if not spec:
        raise ParseError("model.lambda_grid is required for this command")
    if ":" in spec:
        start, stop, count, scale = spec.split(":")
        start, stop, count = float(start), float(stop), int(count)
        if scale == "log":
            grid = np.geomspace(start, stop, count)
        elif scale == "linear":
            grid = np.linspace(start, stop, count)
        else:
            raise ParseError(f"unknown grid scale {scale!r}")
    else:
        grid = np.array([float(tok) for tok in spec.split(",")])
    grid = np.asarray(sorted(grid, reverse=True), dtype=float)
    if np.any(np.diff(grid) >= 0):
        raise ParseError("lambda grid must have distinct values")
    return grid


def _write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    Path(path).write_text(buf.getvalue())


def _mse(X, y, w):
    r = X @ w - y
    return float(r @ r) / len(y)


def _solve_on(cfg, dataset):
    train = dataset.train
    Z, y = dataset.Z[train], dataset.y[train]
    patterns = build_patterns(cfg, Z)
    lam = cfg.getfloat("model", "lambda")
    arch = cfg.get("model", "arch")
    problem = build_cgl(Z, y, patterns, lam, arch)
    result = solve(problem, solver_options(cfg))
    if not result.converged:
        raise SolverError(
            f"solver did not converge: violation "
            f"{result.report.max_violation:.3e}"
        )
    return Z, y, patterns, problem, result


def cmd_solve(cfg):
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    _, _, _, problem, result = _solve_on(cfg, build_dataset(cfg))
    doc = {
        "schema_version": serialize.SCHEMA_VERSION,
        "problem": serialize.problem_to_dict(problem),
        "weights": serialize.weights_to_dict(result.w),
        "dual": serialize.dual_to_dict(result.certificate),
        "report": serialize.kkt_report_to_dict(result.report),
        "objective": result.objective,
        "iterations": result.iterations,
    }
    serialize.dump_json(doc, out / "solution.json")
    return EXIT_OK


def cmd_describe(cfg):
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    _, _, _, problem, result = _solve_on(cfg, build_dataset(cfg))
    rho = recover_dual(problem, result.w, tol=solver_options(cfg).kkt_tol * 10)
    desc = describe_set(problem, result.w, rho, tol=solver_options(cfg).kkt_tol * 10)
    cert = is_unique(problem, result.w, rho)
    doc = {
        "schema_version": serialize.SCHEMA_VERSION,
        "y_hat": [float(v) for v in desc.y_hat],
        "equicorrelation": list(desc.equicorrelation),
        "support": list(desc.support),
        "support_certified": desc.support_certified,
        "v_vectors": {str(i): [float(x) for x in v] for i, v in desc.v_vectors.items()},
        "generators": [[float(x) for x in row] for row in desc.generators],
        "alpha0": [float(a) for a in desc.alpha0],
        "uniqueness": {
            "verdict": cert.verdict,
            "margin": None if cert.margin is None else float(cert.margin),
        },
    }
    serialize.dump_json(doc, out / "description.json")
    return EXIT_OK


def cmd_tune(cfg):
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(cfg)
    if len(dataset.splits) < 3:
        raise ParseError("tune requires a train,val,test split")
    Z, y, patterns, problem, result = _solve_on(cfg, dataset)
    tol = solver_options(cfg).kkt_tol * 10
    rho = recover_dual(problem, result.w, tol=tol)
    desc = describe_set(problem, result.w, rho, tol=tol)
    val, test = dataset.splits[1], dataset.splits[2]
    arch = cfg.get("model", "arch")

    def lift(split):
        sub = build_cgl(dataset.Z[split], dataset.y[split], patterns, problem.lam, arch)
        return sub.X, dataset.y[split]

    X_val, y_val = lift(val)
    X_test, y_test = lift(test)
    selections = {
        "min_norm": min_norm(desc),
        "max_norm": max_norm_approx(desc),
        "val_tuned": tune_over_set(desc, X_val, y_val),
        "test_tuned": tune_over_set(desc, X_test, y_test),
    }
    rows = []
    test_mses = {}
    for name, w_sel in selections.items():
        rows.append(
            [
                name,
                objective(problem, w_sel),
                _mse(X_val, y_val, w_sel),
                _mse(X_test, y_test, w_sel),
            ]
        )
        test_mses[name] = _mse(X_test, y_test, w_sel)
    max_diff = max(test_mses.values()) - min(test_mses.values())
    _write_csv(
        out / "tune.csv",
        ["selection", "train_objective", "val_mse", "test_mse"],
        rows,
    )
    doc = {
        "schema_version": serialize.SCHEMA_VERSION,
        "selections": {
            name: [float(x) for x in w_sel] for name, w_sel in selections.items()
        },
        "test_mse": test_mses,
        "max_diff": max_diff,
    }
    serialize.dump_json(doc, out / "tune.json")
    return EXIT_OK


def cmd_prune(cfg):
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(cfg)
    Z, y, patterns, problem, result = _solve_on(cfg, dataset)
    arch = cfg.get("model", "arch")
    tol = solver_options(cfg).kkt_tol * 10
    w_min, trace = optimal_prune(problem, result.w, result.certificate, tol=tol)
    serialize.dump_json(trace.to_dict(), out / "prune_trace.json")
    if arch == "relu":
        v, u = split_convex_weights(problem, patterns, result.w)
        net = convex_to_relu(v, u)
        target = cfg.getint("prune", "target_width")
        rows = []
        if len(dataset.splits) > 1:
            test = dataset.splits[-1]
            Z_test, y_test = dataset.Z[test], dataset.y[test]
        else:
            Z_test = y_test = None
        for method in cfg.get("prune", "scores").split(","):
            method = method.strip()
            _, curve = approximate_prune_relu(
                Z, y, net, target, score=method,
                seed=cfg.seed("solver", "seed"),
                Z_test=Z_test, y_test=y_test,
            )
            for point in curve:
                rows.append(
                    [point.round, point.width, point.train_mse,
                     point.test_mse, method]
                )
        _write_csv(
            out / "prune_curves.csv",
            ["round", "active_width", "train_mse", "test_mse", "method"],
            rows,
        )
    return EXIT_OK


def cmd_path(cfg):
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(cfg)
    train = dataset.train
    Z, y = dataset.Z[train], dataset.y[train]
    gen = cfg.get("data", "generator")
    grid = lambda_grid(cfg)
    if cfg.get("data", "source") == "synthetic" and gen == "one_neuron":
        path = one_neuron_closed_form(grid)
        flags = [False] + flag_fit_jumps(path.fits)
        rows = [
            [lam, obj, float(np.linalg.norm(fit)), 1, flag]
            for lam, obj, fit, flag in zip(path.lambdas, path.objective,
                                           path.fits, flags)
        ]
    else:
        patterns = build_patterns(cfg, Z)
        report = trace_path(
            Z, y, patterns, cfg.get("model", "arch"), grid, solver_options(cfg)
        )
        rows = [
            [r["lambda"], r["objective"], r["fit_norm"], r["support_size"],
             r["jump_flag"]]
            for r in report.rows()
        ]
    _write_csv(
        out / "path.csv",
        ["lambda", "objective", "fit_norm", "support_size", "jump_flag"],
        rows,
    )
    return EXIT_OK


def cmd_sensitivity(cfg):
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    _, _, _, problem, result = _solve_on(cfg, build_dataset(cfg))
    tol = solver_options(cfg).kkt_tol * 10
    w_min, _ = optimal_prune(problem, result.w, result.certificate, tol=tol)
    rho = recover_dual(problem, w_min, tol=tol)
    rep = jacobians(problem, w_min, rho, tol=tol)
    doc = {
        "schema_version": serialize.SCHEMA_VERSION,
        "present": rep.present,
        "licq": rep.licq,
        "scs": rep.scs,
        "reason": rep.reason,
        "active_blocks": list(rep.active_blocks),
        "d_condition": rep.d_condition,
    }
    serialize.dump_json(doc, out / "sensitivity.json")
    if rep.present:
        _write_csv(
            out / "jacobian_lambda.csv",
            ["coord", "dw_dlambda"],
            list(zip(rep.active_coords, rep.jacobian_lambda)),
        )
        rows = [
            [coord] + [float(x) for x in rep.jacobian_y[k]]
            for k, coord in enumerate(rep.active_coords)
        ]
        _write_csv(
            out / "jacobian_y.csv",
            ["coord"] + [f"y{j}" for j in range(problem.n)],
            rows,
        )
    return EXIT_OK


def cmd_patterns(cfg):
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(cfg)
    patterns = build_patterns(cfg, dataset.Z[dataset.train])
    serialize.dump_json(patterns.to_dict(), out / "patterns.json")
    return EXIT_OK


def cmd_probe_1d(cfg):
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    lam = cfg.getfloat("model", "lambda")
    opts = solver_options(cfg)
    results = {}
    rng = np.random.default_rng(cfg.seed("data", "seed"))
    for n in (2, 3, 4):
        Z = np.arange(n, dtype=float)
        y = rng.standard_normal(n) * 2.0
        built = one_d_lasso_build(Z, y, lam)
        res = solve(built.problem, opts)
        v = res.w
        b = built.intercept_for(v)
        net = one_d_lasso_to_network(v, b, Z)
        results[str(n)] = {
            "A": [[float(x) for x in row] for row in built.A],
            "general_position": bool(lasso_general_position(built.A)),
            "lasso_objective": built.lasso_objective(v, b),
            "network_objective": relu_objective(net, Z[:, None], y, lam),
        }
    doc = {"schema_version": serialize.SCHEMA_VERSION, "probes": results}
    serialize.dump_json(doc, out / "probe_1d.json")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "describe": cmd_describe,
    "tune": cmd_tune,
    "prune": cmd_prune,
    "path": cmd_path,
    "sensitivity": cmd_sensitivity,
    "patterns": cmd_patterns,
    "probe-1d": cmd_probe_1d,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="relu-optset",
        description="Constrained group lasso solvers and optimal-set analysis",
    )
    parser.add_argument("--show-config", action="store_true",
                        help="print the default configuration and exit")
    sub = parser.add_subparsers(dest="command")
    for name in COMMANDS:
        cp = sub.add_parser(name)
        cp.add_argument("--config", default=None)
        cp.add_argument("--seed", type=int, default=None)
        cp.add_argument("--out", default=None)
    args = parser.parse_args(argv)
    if args.show_config:
        sys.stdout.write(DEFAULT_CONFIG)
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_PARSE
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        return COMMANDS[args.command](cfg)
    except (ParseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except CertificateError as exc:
        print(f"certificate error: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATE


if __name__ == "__main__":
    sys.exit(main())

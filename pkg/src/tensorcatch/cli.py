"""Command-line interface: ``tensorcatch {fit,predict,cv,simulate,example1}``.

Every command accepts ``--config FILE`` holding ``key = value`` lines whose
keys are long option names (``n-lambda = 30``); options given on the command
line override the file.

Exit codes
----------
0  success
2  bad usage (argument parsing)
3  input/output failure (missing, unreadable or malformed file)
4  invalid data or shape (label problems, dimension mismatches, unknown model)
5  numerical failure (singular matrix)
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .classifier import (
    CovariateMismatchError,
    best_index,
    cross_validate,
    decision_scores,
    fit_catch,
)
from .estimation import LabeledDataset
from .io import load_dataset, load_model, save_model, write_predictions
from .simulation import (
    METHODS,
    UnknownModelError,
    example1_monte_carlo,
    example1_rates,
    get_spec,
    parse_spec_text,
    run_experiment,
)
from .solver import SolverConfig
from .tensor import CTBFormatError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DATA = 4
EXIT_NUMERIC = 5

logger = logging.getLogger("tensorcatch")

_FMT = "%.10g"


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _floats(text: str) -> list[float]:
    return [float(t) for t in str(text).replace(";", ",").split(",") if t.strip()]


def _add_solver_options(p: argparse.ArgumentParser):
    g = p.add_argument_group("solver")
    g.add_argument("--lambdas", type=_floats, help="comma-separated decreasing penalty values")
    g.add_argument("--n-lambda", type=int, default=50)
    g.add_argument("--lambda-min-ratio", type=float)
    g.add_argument("--max-sweeps", type=int, default=200)
    g.add_argument("--tol", type=float, default=1e-6)
    g.add_argument("--pd-gamma", type=float, default=1e-4)
    g.add_argument("--max-selected", type=int, help="stop the path once more positions are selected")


def _add_data_options(p: argparse.ArgumentParser, labels_required: bool = True):
    p.add_argument("--x", required=True, help="CTB tensor, observations along the last mode")
    p.add_argument("--y", required=labels_required, help="one-column CSV of labels 1..K")
    p.add_argument("--u", help="headerless CSV of covariates, one row per observation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tensorcatch", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value file of option defaults")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("fit", help="estimate a model and its penalty path")
    common(p)
    _add_data_options(p)
    p.add_argument("--out", required=True, help="model directory")
    p.add_argument("--val-x")
    p.add_argument("--val-y")
    p.add_argument("--val-u")
    p.add_argument("--select", choices=("last", "validation", "cv"),
                   help="path point to store (default: validation when --val-x is given, else last)")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    _add_solver_options(p)

    p = sub.add_parser("predict", help="classify new observations with a stored model")
    common(p)
    p.add_argument("--model", required=True, help="model directory written by fit")
    _add_data_options(p, labels_required=False)
    p.add_argument("--out", required=True, help="predictions CSV")

    p = sub.add_parser("cv", help="choose the penalty by stratified cross-validation")
    common(p)
    _add_data_options(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV of the cross-validation curve")
    _add_solver_options(p)

    p = sub.add_parser("simulate", help="Monte Carlo experiment on a catalog or custom model")
    common(p)
    p.add_argument("--model", help="catalog model name")
    p.add_argument("--spec", help="experiment spec file (key = value)")
    p.add_argument("--methods", default="catch", help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-test", type=int)
    p.add_argument("--threads", type=int, default=1, help="worker processes for replicates")
    p.add_argument("--out", help="results CSV (default: stdout)")
    _add_solver_options(p)

    p = sub.add_parser("example1", help="closed-form error rates of the two-class toy model")
    common(p)
    p.add_argument("--alpha", type=_floats, default=[0.0, 1.0, 2.0, 4.0, 8.0])
    p.add_argument("--monte-carlo", type=int, default=0, help="also simulate the (X11, U) rule with this many draws")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (default: stdout)")
    return parser


def _config_tokens(path: str) -> list[str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CLIError(f"cannot read config file {path}: {exc}", EXIT_IO) from exc
    tokens = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CLIError(f"{path}:{n}: expected 'key = value'", EXIT_USAGE)
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("_", "-")
        if value.lower() in ("true", "yes", "on"):
            tokens.append(f"--{key}")
        elif value.lower() not in ("false", "no", "off"):
            tokens += [f"--{key}", value]
    return tokens


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        # file values go first so explicit flags, parsed later, win
        argv = list(argv)
        at = argv.index(args.command) + 1
        args = parser.parse_args(argv[:at] + _config_tokens(args.config) + argv[at:])
    return args


def _solver_config(args, **extra) -> SolverConfig:
    return SolverConfig(
        lambdas=args.lambdas,
        n_lambda=args.n_lambda,
        lambda_min_ratio=args.lambda_min_ratio,
        max_sweeps=args.max_sweeps,
        tol=args.tol,
        pd_gamma=args.pd_gamma,
        max_selected=args.max_selected,
        **extra,
    )


def _dataset(x, y, u) -> LabeledDataset:
    X, Y, U = load_dataset(x, y, u)
    return LabeledDataset(X=X, Y=Y, U=U)


def _write_table(path: Optional[str], header: Sequence[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join("" if v is None else (_FMT % v if isinstance(v, float) else str(v))
                              for v in row))
    text = "\n".join(lines) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def cmd_fit(args) -> int:
    data = _dataset(args.x, args.y, args.u)
    config = _solver_config(args)
    val = _dataset(args.val_x, args.val_y, args.val_u) if args.val_x else None
    select = args.select or ("validation" if val is not None else "last")
    if select == "validation" and val is None:
        raise CLIError("--select validation needs --val-x and --val-y", EXIT_USAGE)
    if select == "cv":
        cv = cross_validate(data, config, folds=args.folds, seed=args.seed)
        config = _solver_config(args)
        config.lambdas = cv.lambdas
    fit = fit_catch(data, config)
    val_err = fit.path_errors(val) if val is not None else None
    if select == "validation":
        index = best_index(val_err)
    elif select == "cv":
        index = min(cv.best, len(fit.lambdas) - 1)
    else:
        index = len(fit.lambdas) - 1
    model = fit.model(index)
    out = Path(args.out)
    save_model(model, out)
    counts = fit.path.n_selected()
    rows = [
        (float(fit.lambdas[i]), int(counts[i]), float(fit.path.objectives[i]), int(fit.path.sweeps[i]),
         None if val_err is None else float(val_err[i]))
        for i in range(len(fit.lambdas))
    ]
    _write_table(str(out / "path_summary.csv"), ("lambda", "n_selected", "objective", "sweeps", "val_error"), rows)
    print(f"stored path point {index + 1}/{len(fit.lambdas)}: lambda={fit.lambdas[index]:.6g}, "
          f"selected={counts[index]}" + ("" if val_err is None else f", validation error={val_err[index]:.4f}"))
    if not np.all(fit.path.converged):
        logger.warning("some path points did not converge; see path_summary.csv")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    X, Y, U = load_dataset(args.x, args.y, args.u)
    if X.shape[:-1] != model.shape:
        raise CLIError(f"X has observation shape {X.shape[:-1]}, model expects {model.shape}", EXIT_DATA)
    n = X.shape[-1]
    if model.has_covariates and args.u is None:
        raise CovariateMismatchError("model was fit with covariates; pass --u")
    if not model.has_covariates and args.u is not None:
        raise CovariateMismatchError("model was fit without covariates; drop --u")
    if n == 0:
        write_predictions(args.out, np.zeros(0, dtype=np.int64), np.zeros((0, model.K)))
        return EXIT_OK
    scores = decision_scores(model, X, U)
    labels = np.argmax(scores, axis=1) + 1
    write_predictions(args.out, labels, scores)
    if Y is not None:
        print(f"error rate: {np.mean(labels != Y):.6f}")
    return EXIT_OK


def cmd_cv(args) -> int:
    data = _dataset(args.x, args.y, args.u)
    if args.folds < 2:
        raise CLIError("--folds must be at least 2", EXIT_USAGE)
    cv = cross_validate(data, _solver_config(args), folds=args.folds, seed=args.seed)
    rows = [(float(l), float(m), float(s)) for l, m, s in zip(cv.lambdas, cv.mean_error, cv.se)]
    _write_table(args.out, ("lambda", "mean_error", "se"), rows)
    print(f"selected lambda={cv.best_lambda:.6g} (path point {cv.best + 1}), "
          f"cv error={cv.mean_error[cv.best]:.4f}", file=sys.stderr if args.out is None else sys.stdout)
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.spec:
        try:
            text = Path(args.spec).read_text()
        except OSError as exc:
            raise CLIError(f"cannot read spec file {args.spec}: {exc}", EXIT_IO) from exc
        spec = parse_spec_text(text)
    elif args.model:
        spec = get_spec(args.model)
    else:
        raise CLIError("simulate needs --model or --spec", EXIT_USAGE)
    if args.n_test is not None:
        from dataclasses import replace

        spec = replace(spec, n_test=args.n_test)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise CLIError(f"unknown method {unknown[0]!r}; choose from {', '.join(METHODS)}", EXIT_DATA)
    max_sel = args.max_selected if args.max_selected is not None else sum(spec.class_sizes)
    config = _solver_config(args)
    config.max_selected = max_sel
    results = run_experiment(spec, methods, replicates=args.replicates, rng_seed=args.seed,
                             config=config, threads=args.threads)
    rows = []
    for m in methods:
        r = results[m]
        rows.append((m, spec.name, 100 * r.mean, 100 * r.se,
                     None if r.tpr is None else 100 * r.tpr,
                     None if r.fpr is None else 100 * r.fpr))
    _write_table(args.out, ("method", "model", "mean", "se", "tpr", "fpr"), rows)
    return EXIT_OK


def cmd_example1(args) -> int:
    header = ["alpha", "R_U", "R_X11_U", "R_X11", "R_X"]
    if args.monte_carlo:
        header.append("mc_X11_U")
    rows = []
    for a in args.alpha:
        r = example1_rates(a)
        row = [float(a), r["R(U)"], r["R(X11,U)"], r["R(X11)"], r["R(X)"]]
        if args.monte_carlo:
            row.append(example1_monte_carlo(a, args.monte_carlo, args.seed))
        rows.append(tuple(row))
    _write_table(args.out, header, rows)
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "cv": cmd_cv,
    "simulate": cmd_simulate,
    "example1": cmd_example1,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CLIError as exc:
        msg, code = str(exc), exc.code
    except (OSError, CTBFormatError) as exc:
        msg, code = str(exc), EXIT_IO
    except np.linalg.LinAlgError as exc:
        msg, code = f"numerical failure: {exc}", EXIT_NUMERIC
    except (ValueError, KeyError, UnknownModelError) as exc:
        msg, code = str(exc).strip("'\""), EXIT_DATA
    print(f"error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: fit variance components, run contrast tests,
and drive simulation studies from CSV inputs.

Exit codes: 0 success, 2 invalid input, 3 non-convergence, 4 singular or
confounded design, 5 bootstrap failure rate exceeded.  Reports are written
atomically; an error never leaves a partial file behind.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import __version__
from .bootstrap import TestResult, bootstrap_test
from .errors import (
    BootstrapFailureError,
    ConfoundedDesignError,
    DegenerateResponseError,
    MissingFixtureError,
    NonConvergenceError,
    NumericError,
    OutsideParameterSpaceError,
    SingularSystemError,
    VctestError,
)
from .ingest import InputTable, RandomSpec, build_model_inputs
from .model import ContrastSpec
from .optimizer import FitResult, NewtonOptions, fit_unconstrained
from .simharness import grid_from_manifest, grid_to_manifest, power_table

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NONCONVERGENCE = 3
EXIT_SINGULAR = 4
EXIT_BOOTSTRAP = 5


class _CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("WORKERS", "1")))
    except ValueError:
        return 1


def _add_model_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("data", help="CSV file with a header row (RFC 4180, UTF-8)")
    parser.add_argument("--response", required=True, help="response column name")
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument(
        "--random",
        action="append",
        metavar="FACTOR",
        help="random-effect factor column (repeatable; order fixes component order)",
    )
    group.add_argument(
        "--nested",
        metavar="OUTER/INNER",
        help="two nested grouping factors, outer/inner",
    )
    group.add_argument(
        "--crossed",
        metavar="A,B",
        help="two crossed grouping factors",
    )
    parser.add_argument(
        "--fixed",
        action="append",
        default=[],
        metavar="COL",
        help="fixed-effect column (numeric as-is, otherwise one-hot encoded); repeatable",
    )
    parser.add_argument("--kappa", type=float, default=1e-3, help="Hessian-repair ridge")
    parser.add_argument("--grad-tol", type=float, default=1e-6, help="gradient stopping tolerance")
    parser.add_argument("--max-iter", type=int, default=100)
    parser.add_argument("--out", help="write the JSON report here (atomic)")


def _random_spec(args) -> RandomSpec:
    if args.nested:
        parts = args.nested.split("/")
        if len(parts) != 2 or not all(parts):
            raise _CliError(EXIT_INPUT, "--nested expects OUTER/INNER")
        return RandomSpec("nested", tuple(parts))
    if args.crossed:
        parts = args.crossed.split(",")
        if len(parts) != 2 or not all(parts):
            raise _CliError(EXIT_INPUT, "--crossed expects A,B")
        return RandomSpec("crossed", tuple(p.strip() for p in parts))
    return RandomSpec("random", tuple(args.random))


def _load_model(args):
    table = InputTable.from_csv(args.data)
    spec = _random_spec(args)
    design, y, info = build_model_inputs(
        table, args.response, spec, tuple(args.fixed)
    )
    return design, y, info


def _options(args) -> NewtonOptions:
    return NewtonOptions(kappa=args.kappa, grad_tol=args.grad_tol, max_iter=args.max_iter)


def _fit_block(result: FitResult, names) -> dict:
    return {
        "tau_hat": result.tau_hat.tolist(),
        "components": list(names),
        "objective": result.objective,
        "grad_norm": result.grad_norm,
        "iterations": result.iterations,
        "halvings": result.halvings_total,
        "hessian_eigenvalues": result.hessian_eigenvalues.tolist(),
        "status": result.status.value,
    }


def _model_block(design, info) -> dict:
    return {
        "n": design.n,
        "p": design.p,
        "d": design.d,
        "block_sizes": list(design.block_sizes),
        "factors": info["factor_names"],
        "x_labels": info["x_labels"],
    }


def _report_skeleton(command: str) -> dict:
    return {
        "schema": 1,
        "tool": {"name": "vctest", "version": __version__},
        "command": command,
    }


def _emit_report(report: dict, out_path: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=False) + "\n"
    sys.stdout.write(text)
    if out_path:
        directory = os.path.dirname(os.path.abspath(out_path))
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(text)
            os.replace(tmp, out_path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def _cmd_fit(args) -> int:
    t0 = time.perf_counter()
    design, y, info = _load_model(args)
    result = fit_unconstrained(design, y, _options(args))
    if not result.converged:
        raise _CliError(
            EXIT_NONCONVERGENCE,
            f"fit did not converge: {result.status.value} {result.message}".strip(),
        )
    report = _report_skeleton("fit")
    report["model"] = _model_block(design, info)
    report["fit"] = _fit_block(result, info["factor_names"])
    report["timing_seconds"] = time.perf_counter() - t0
    _emit_report(report, args.out)
    return EXIT_OK


def _parse_contrast(text: str) -> np.ndarray:
    try:
        rows = [
            [float(v) for v in row.split(",")]
            for row in text.split(";")
            if row.strip()
        ]
    except ValueError as err:
        raise _CliError(EXIT_INPUT, f"could not parse --contrast: {err}") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise _CliError(EXIT_INPUT, "--contrast rows must be non-empty and equal length")
    return np.asarray(rows)


def _parse_alternative(text: str, d0: int):
    tokens = [t.strip() for t in text.split(",") if t.strip()]
    if tokens == ["two-sided"]:
        return "two-sided"
    if any(t == "two-sided" for t in tokens):
        raise _CliError(EXIT_INPUT, "two-sided cannot be mixed with cone constraints")
    if len(tokens) != d0:
        raise _CliError(
            EXIT_INPUT,
            f"--alt needs either 'two-sided' or one of greater/less/free per "
            f"contrast row ({d0} rows, got {len(tokens)} tokens)",
        )
    return tuple(tokens)


def _test_block(res: TestResult, contrast: ContrastSpec) -> dict:
    alt = contrast.alternative
    return {
        "contrast": contrast.a.tolist(),
        "alternative": alt if isinstance(alt, str) else list(alt),
        "statistic": res.statistic,
        "b": res.b,
        "seed": res.seed,
        "lr_obs": res.lr_obs,
        "tau_null": res.tau_null.tolist(),
        "p_two": res.p_two,
        "mc_se_two": res.mc_se_two,
        "p_one": res.p_one,
        "mc_se_one": res.mc_se_one,
        "n_failed": res.n_failed,
    }


def _dump_draws(res: TestResult, path: str, d: int) -> None:
    import csv as _csv

    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["b"] + [f"tau_star_{j + 1}" for j in range(d)] + ["lambda_star"])
        for i in range(res.b):
            row = [i + 1]
            row.extend(format(v, ".17g") for v in res.tau_star[i])
            row.append(format(res.lambda_star[i], ".17g"))
            writer.writerow(row)


def _cmd_test(args) -> int:
    t0 = time.perf_counter()
    design, y, info = _load_model(args)
    a = _parse_contrast(args.contrast)
    if a.shape[1] != design.d:
        raise _CliError(
            EXIT_INPUT,
            f"contrast has {a.shape[1]} columns but the model has {design.d} components",
        )
    alternative = _parse_alternative(args.alt, a.shape[0])
    try:
        contrast = ContrastSpec(a=a, alternative=alternative)
    except ValueError as err:
        raise _CliError(EXIT_INPUT, str(err)) from None
    res = bootstrap_test(
        design,
        y,
        contrast,
        b=args.bootstrap,
        opts=_options(args),
        seed=args.seed,
        statistic=args.statistic,
        workers=args.workers,
        plus_one=args.plus_one,
    )
    if args.dump_draws:
        _dump_draws(res, args.dump_draws, design.d)
    report = _report_skeleton("test")
    report["model"] = _model_block(design, info)
    report["fit"] = _fit_block(res.fit, info["factor_names"])
    report["fit_null"] = _fit_block(res.fit_null, info["factor_names"])
    report["test"] = _test_block(res, contrast)
    report["timing_seconds"] = time.perf_counter() - t0
    _emit_report(report, args.out)
    return EXIT_OK


def _cmd_simulate(args) -> int:
    try:
        with open(args.config) as fh:
            grid = grid_from_manifest(fh.read())
    except (OSError, ValueError, KeyError, TypeError) as err:
        raise _CliError(EXIT_INPUT, f"malformed manifest: {err}") from None
    if args.seed is not None:
        import dataclasses

        grid = dataclasses.replace(grid, seed=args.seed)
    manifest_out = args.manifest_out or args.out + ".manifest.json"
    power_table(grid, args.out, workers=args.workers, manifest_out=manifest_out)
    sys.stdout.write(grid_to_manifest(grid))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vctest",
        description=(
            "Fit Gaussian variance-components models over the full feasible "
            "parameter space and test linear contrasts of the components via "
            "a parametric bootstrap."
        ),
    )
    parser.add_argument("--version", action="version", version=f"vctest {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="estimate variance components")
    _add_model_arguments(p_fit)
    p_fit.set_defaults(func=_cmd_fit)

    p_test = sub.add_parser("test", help="bootstrap test of a linear contrast")
    _add_model_arguments(p_test)
    p_test.add_argument(
        "--contrast",
        required=True,
        help="contrast rows, e.g. '1,-1' or '1,-2,0,0;0,0,1,-3'",
    )
    p_test.add_argument(
        "--alt",
        default="two-sided",
        help="'two-sided', or one of greater/less/free per contrast row (comma separated)",
    )
    p_test.add_argument("--bootstrap", type=int, default=1000, metavar="B")
    p_test.add_argument("--seed", type=int, required=True)
    p_test.add_argument("--statistic", choices=["lr", "raw-minimum"], default="lr")
    p_test.add_argument("--workers", type=int, default=_default_workers())
    p_test.add_argument("--plus-one", action="store_true",
                        help="use the (B+1)-denominator finite-sample correction")
    p_test.add_argument("--dump-draws", metavar="PATH",
                        help="write per-replicate estimates and statistics as CSV")
    p_test.set_defaults(func=_cmd_test)

    p_sim = sub.add_parser("simulate", help="run a size/power simulation grid")
    p_sim.add_argument("--config", required=True, help="experiment manifest (JSON)")
    p_sim.add_argument("--out", required=True, help="results CSV path")
    p_sim.add_argument("--workers", type=int, default=_default_workers())
    p_sim.add_argument("--seed", type=int, default=None,
                       help="override the manifest seed")
    p_sim.add_argument("--manifest-out", default=None,
                       help="where to echo the resolved manifest (default OUT.manifest.json)")
    p_sim.set_defaults(func=_cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CliError as err:
        print(f"vctest: error: {err}", file=sys.stderr)
        return err.code
    except (ConfoundedDesignError, SingularSystemError) as err:
        print(f"vctest: singular design: {err}", file=sys.stderr)
        return EXIT_SINGULAR
    except NonConvergenceError as err:
        print(f"vctest: non-convergence: {err}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except BootstrapFailureError as err:
        print(f"vctest: bootstrap failure: {err}", file=sys.stderr)
        return EXIT_BOOTSTRAP
    except (
        DegenerateResponseError,
        MissingFixtureError,
        OutsideParameterSpaceError,
        NumericError,
        VctestError,
        ValueError,
        OSError,
    ) as err:
        print(f"vctest: error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

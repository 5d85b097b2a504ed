"""Command line interface: ``aasqp solve | experiment | analyze``.

Exit codes: 0 converged, 1 hard error, 2 iteration limit reached,
64 usage error or unreadable problem file, 66 missing run artifacts.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .anderson import parse_threshold
from .exceptions import AasqpError, ConfigurationError, MaxIterReached
from .nlp_model import PrimalDualIterate
from .ocp import OcpSpec, build_ocp_nlp
from .problems import interpolated_guess
from .sqp_engine import ConvergenceReport, SqpConfig, solve

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MAX_ITER = 2
EXIT_USAGE = 64
EXIT_NO_INPUT = 66

HESSIANS = ("exact+project", "exact+lm", "ggn", "scqp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _solver_flags(p):
    p.add_argument("--config", help="JSON file with solver options (flags override it)")
    p.add_argument("--hessian", choices=HESSIANS)
    p.add_argument("--zero-order", action="store_true", default=None)
    p.add_argument("--adjoint-correction", action="store_true", default=None)
    p.add_argument("--aa", "--with-anderson-acceleration", dest="aa", action="store_true", default=None)
    p.add_argument("--aa-depth", "--anderson-depth", dest="aa_depth", type=int)
    p.add_argument("--aa-damping", "--anderson-damping", dest="aa_damping", type=float)
    p.add_argument("--aa-threshold", "--anderson-activation-threshold", dest="aa_threshold", type=parse_threshold)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)


def build_parser():
    parser = _Parser(prog="aasqp", description="Anderson-accelerated SQP-type solvers")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ps = sub.add_parser("solve", help="solve an OCP described in a JSON file")
    ps.add_argument("problem")
    _solver_flags(ps)
    ps.add_argument("--out", default="out/solve")
    ps.add_argument("--seed", type=int, default=0)

    pe = sub.add_parser("experiment", help="run a canned experiment")
    pe.add_argument("name")
    pe.add_argument("--out", default="out")
    pe.add_argument("--jobs", type=int, default=1)
    pe.add_argument("--seed", type=int, default=0)

    pa = sub.add_parser("analyze", help="rate analysis of a finished solve run")
    pa.add_argument("run_dir")
    pa.add_argument("--tail-fraction", type=float, default=0.4)
    return parser


def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"{what} not found: {path}")
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {what} {path}: {exc}")


def resolve_config(args, file_options=None, n_v=None) -> SqpConfig:
    """Defaults, then the problem's ``solver`` block, then ``--config``, then flags.

    ``frozen_point`` may be the string ``"origin"`` (all zeros, needs ``n_v``).
    """
    options = {}
    options.update(file_options or {})
    if getattr(args, "config", None):
        options.update(_read_json(args.config, "config file"))
    flags = {
        "hessian": args.hessian,
        "zero_order": args.zero_order,
        "adjoint_correction": args.adjoint_correction,
        "with_anderson_acceleration": args.aa,
        "anderson_depth": args.aa_depth,
        "anderson_damping": args.aa_damping,
        "anderson_activation_threshold": args.aa_threshold,
        "kkt_tol": args.tol,
        "max_iter": args.max_iter,
    }
    options.update({k: v for k, v in flags.items() if v is not None})
    if options.get("frozen_point") == "origin":
        if n_v is None:
            raise UsageError("frozen_point 'origin' needs the problem size")
        options["frozen_point"] = [0.0] * n_v
    try:
        return SqpConfig.from_dict(options)
    except (TypeError, ValueError, ConfigurationError) as exc:
        raise UsageError(f"bad solver options: {exc}")


def load_problem(path):
    data = _read_json(path, "problem file")
    try:
        spec = OcpSpec.from_dict(data)
    except (TypeError, ValueError, KeyError) as exc:
        raise UsageError(f"invalid problem file {path}: {exc}")
    nlp = build_ocp_nlp(spec, data.get("integrator", "rk4"), int(data.get("steps_per_interval", 1)))
    guess = data.get("initial_guess") or {}
    z0 = interpolated_guess(nlp, guess.get("x_end"))
    return data, nlp, z0


def _jsonable(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return x


def cmd_solve(args) -> int:
    data, nlp, z0 = load_problem(args.problem)
    config = resolve_config(args, data.get("solver"), nlp.n_v)
    if config.zero_order and config.frozen_point is None:
        config = SqpConfig.from_dict({**config.to_dict(), "frozen_point": z0.v.tolist()})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    code = EXIT_OK
    try:
        z, report = solve(nlp, z0, config)
    except MaxIterReached as exc:
        z, report, code = exc.z, exc.report, EXIT_MAX_ITER
    report.to_csv(out / "report.csv")
    run = {
        "problem": {k: v for k, v in data.items() if k != "solver"},
        "config": {k: _jsonable(v) for k, v in config.to_dict().items()},
        "status": report.status,
        "iterations": report.iterations,
        "final_residual": report.rows[-1][report.measure],
        "measure": report.measure,
        "z_star": z.to_vector().tolist(),
        "active_set": list(report.active_sets[-1]) if report.active_sets else [],
    }
    (out / "run.json").write_text(json.dumps(run, indent=2) + "\n")
    print(f"status={report.status} iterations={report.iterations} {report.measure}={run['final_residual']:.3e}")
    return code


def cmd_experiment(args) -> int:
    from .experiments import EXPERIMENTS, format_table, run_named

    if args.name not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {args.name!r}; choose from {', '.join(EXPERIMENTS)}")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    result = run_named(args.name, args.out, jobs=args.jobs, seed=args.seed)
    print(format_table(result.table))
    failed = [name for name, run in result.runs.items() if run.error]
    for name in failed:
        print(f"{name}: {result.runs[name].error}", file=sys.stderr)
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .analysis import analyze_run

    run_dir = Path(args.run_dir)
    run_path, csv_path = run_dir / "run.json", run_dir / "report.csv"
    if not run_path.is_file() or not csv_path.is_file():
        print(f"missing run artifacts in {run_dir} (need run.json and report.csv)", file=sys.stderr)
        return EXIT_NO_INPUT
    run = json.loads(run_path.read_text())
    spec = OcpSpec.from_dict(run["problem"])
    nlp = build_ocp_nlp(spec, run["problem"].get("integrator", "rk4"), int(run["problem"].get("steps_per_interval", 1)))
    config = SqpConfig.from_dict(run["config"])
    z_star = PrimalDualIterate.from_vector(np.asarray(run["z_star"], dtype=float), nlp)
    report = ConvergenceReport.from_csv(csv_path, measure=run["measure"])
    summary = analyze_run(nlp, z_star, config, report, args.tail_fraction)
    text = json.dumps(summary, indent=2) + "\n"
    (run_dir / "analysis.json").write_text(text)
    print(text, end="")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "experiment": cmd_experiment, "analyze": cmd_analyze}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"aasqp: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AasqpError as exc:
        print(f"aasqp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

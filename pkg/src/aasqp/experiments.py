"""Canned cart-pendulum studies and a synthetic Anderson study.

Each experiment runs a list of solver configurations from one starting point
and writes ``<out>/<experiment>/<config>.csv``, ``summary.json`` and
``convergence.svg``. Everything is deterministic; rerunning an experiment
reproduces the CSV files byte for byte.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable
from xml.sax.saxutils import escape

import numpy as np

from .anderson import AndersonConfig, iterate_fixed_point
from .exceptions import AasqpError, MaxIterReached
from .nlp_model import PrimalDualIterate
from .problems import (
    stabilization_initial_guess,
    stabilization_ocp,
    swingup_initial_guess,
    swingup_ocp,
    threshold_initial_guess,
    threshold_ocp,
)
from .sqp_engine import ConvergenceReport, SqpConfig, kkt_residual, perturbation_vector, solve

TOLERANCES = (1e-1, 1e-4, 1e-6, 1e-8)
SCQP_AA_THRESHOLD = 0.1
THRESHOLD_GRID = (1e2, 1.0, 1e-2)


@dataclass
class ExperimentSpec:
    name: str
    build: Callable[[], tuple]  # returns (nlp, z0)
    configs: list  # [(name, SqpConfig)]
    tolerances: tuple = TOLERANCES


@dataclass
class RunResult:
    name: str
    report: ConvergenceReport | None
    z: PrimalDualIterate | None
    error: str | None = None


@dataclass
class ExperimentResult:
    name: str
    runs: dict = field(default_factory=dict)
    table: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def report(self, config_name) -> ConvergenceReport:
        return self.runs[config_name].report

    def summary(self) -> dict:
        configs = {}
        for name, run in self.runs.items():
            entry = {"status": "error" if run.error else run.report.status, "error": run.error}
            if run.report is not None:
                rep = run.report
                thetas = rep.theta_history
                entry.update(
                    iterations=rep.iterations,
                    final_residual=rep.rows[-1][rep.measure] if rep.rows else None,
                    measure=rep.measure,
                    max_theta=max(thetas) if thetas else None,
                )
            configs[name] = entry
        return {
            "experiment": self.name,
            "tolerances": list(TOLERANCES),
            "configs": configs,
            "iterations_to_tol": self.table,
            **self.extra,
        }


# ---------------------------------------------------------------------------
# experiment definitions
# ---------------------------------------------------------------------------


def _swingup():
    nlp = swingup_ocp()
    return nlp, swingup_initial_guess(nlp)


def _stabilization():
    nlp = stabilization_ocp()
    return nlp, stabilization_initial_guess(nlp)


def _threshold():
    nlp = threshold_ocp()
    return nlp, threshold_initial_guess(nlp)


def scqp_pendulum_spec(max_iter: int = 200, threshold: float = SCQP_AA_THRESHOLD) -> ExperimentSpec:
    """Swing-up: exact Hessian, GGN, SCQP and AA(m)-SCQP for m = 1, 5, 10."""
    scqp = SqpConfig(hessian="scqp", max_iter=max_iter)
    configs = [
        ("exact_project", SqpConfig(hessian="exact+project", max_iter=max_iter)),
        ("ggn", SqpConfig(hessian="ggn", max_iter=max_iter)),
        ("scqp", scqp),
    ]
    for m in (1, 5, 10):
        configs.append((f"aa{m}_scqp", scqp.with_anderson(enabled=True, depth=m, activation_threshold=threshold)))
    return ExperimentSpec("scqp_pendulum", _swingup, configs)


def zero_order_spec(max_iter: int = 300) -> ExperimentSpec:
    """Stabilization with GGN and the dynamics Jacobians frozen at the origin."""
    nlp = stabilization_ocp()
    base = SqpConfig(hessian="ggn", zero_order=True, frozen_point=np.zeros(nlp.n_v), max_iter=max_iter)
    return ExperimentSpec(
        "zero_order",
        _stabilization,
        [("zero_order", base), ("zero_order_aa1", base.with_anderson(enabled=True, depth=1))],
    )


def threshold_spec(max_iter: int = 200) -> ExperimentSpec:
    """Projected exact-Hessian SQP on the L1-augmented stabilization problem."""
    base = SqpConfig(hessian="exact+project", max_iter=max_iter)
    configs = [("plain", base), ("aa1", base.with_anderson(enabled=True, depth=1))]
    for delta in THRESHOLD_GRID:
        configs.append((f"aa1_delta_{delta:g}", base.with_anderson(enabled=True, depth=1, activation_threshold=delta)))
    return ExperimentSpec("threshold", _threshold, configs)


SPECS = {
    "scqp_pendulum": scqp_pendulum_spec,
    "zero_order": zero_order_spec,
    "threshold": threshold_spec,
}
EXPERIMENTS = (*SPECS, "aa_unit")


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


def run_config(nlp, z0, name, config) -> RunResult:
    try:
        z, rep = solve(nlp, z0, config)
        return RunResult(name, rep, z)
    except MaxIterReached as exc:
        return RunResult(name, exc.report, exc.z)
    except AasqpError as exc:
        return RunResult(name, None, None, error=f"{type(exc).__name__}: {exc}")


def _run_registered(exp_name, index):
    spec = SPECS[exp_name]()
    nlp, z0 = spec.build()
    name, config = spec.configs[index]
    run = run_config(nlp, z0, name, config)
    return run.name, run.report, None if run.z is None else run.z.to_vector(), run.error


def comparison_table(runs: dict, tolerances=TOLERANCES) -> dict:
    table = {}
    for name, run in runs.items():
        rep = run.report
        table[name] = {f"{tol:g}": (None if rep is None else rep.iterations_to(tol)) for tol in tolerances}
    return table


def format_table(table: dict) -> str:
    if not table:
        return ""
    tols = list(next(iter(table.values())))
    width = max(len(n) for n in table) + 2
    lines = ["config".ljust(width) + "".join(t.rjust(8) for t in tols)]
    for name, row in table.items():
        cells = ["-" if row[t] is None else str(row[t]) for t in tols]
        lines.append(name.ljust(width) + "".join(c.rjust(8) for c in cells))
    return "\n".join(lines)


def run_experiment(spec: ExperimentSpec, out_dir=None, jobs: int = 1) -> ExperimentResult:
    """Run every configuration of ``spec`` from the same starting point.

    Failures of single runs are recorded in the result and do not stop the
    experiment. With ``jobs > 1`` registered experiments run in worker
    processes; results do not depend on ``jobs``.
    """
    nlp, z0 = spec.build()
    result = ExperimentResult(spec.name)
    if jobs > 1 and spec.name in SPECS:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_registered, spec.name, i) for i in range(len(spec.configs))]
            for fut in futures:
                name, rep, zvec, err = fut.result()
                z = None if zvec is None else PrimalDualIterate.from_vector(zvec, nlp)
                result.runs[name] = RunResult(name, rep, z, err)
    else:
        for name, config in spec.configs:
            result.runs[name] = run_config(nlp, z0, name, config)
    result.table = comparison_table(result.runs, spec.tolerances)
    if spec.name == "zero_order":
        result.extra.update(_zero_order_extras(nlp, z0, spec, result))
    if out_dir is not None:
        write_outputs(result, Path(out_dir) / spec.name)
    return result


def _zero_order_extras(nlp, z0, spec, result):
    """Exact reference solution, perturbed-KKT check and the trajectories."""
    extra = {}
    exact = run_config(nlp, z0, "exact", SqpConfig(hessian="exact+project", max_iter=100))
    zo = result.runs["zero_order"]
    result.extra_runs = {"exact": exact}
    if zo.z is None or exact.z is None:
        return extra
    config = dict(spec.configs)["zero_order"]
    p = perturbation_vector(nlp, zo.z, config, frozen_point=config.frozen_point)
    extra["perturbed_kkt_inf"] = perturbed_kkt_residual(nlp, zo.z, p)
    extra["distance_to_exact_inf"] = float(np.max(np.abs(zo.z.v - exact.z.v)))
    extra["exact_iterations"] = exact.report.iterations
    result.trajectories = trajectory_rows(nlp, {"zero_order": zo.z, "exact": exact.z})
    return extra


def perturbed_kkt_residual(nlp, z: PrimalDualIterate, p) -> float:
    """KKT violation of ``min f(v) - p'v`` under the original constraints."""
    stat = nlp.lagrangian_gradient(z.v, z.lam, z.mu) - np.asarray(p, dtype=float)
    kkt = kkt_residual(nlp, z)
    return float(max(np.max(np.abs(stat)), np.max(np.abs(kkt.eq_feas), initial=0.0),
                     np.max(kkt.ineq_feas, initial=0.0), np.max(np.abs(kkt.comp), initial=0.0)))


def trajectory_rows(nlp, solutions: dict):
    layout = nlp.meta["layout"]
    header = ["k"]
    for label in solutions:
        header += [f"{label}_{s}" for s in ("p", "v", "theta", "omega", "u")]
    rows = [header]
    for k in range(layout.N + 1):
        row = [str(k)]
        for z in solutions.values():
            row += [repr(float(x)) for x in z.v[layout.x(k)]]
            row.append(repr(float(z.v[layout.u(k)][0])) if k < layout.N else "")
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# synthetic study
# ---------------------------------------------------------------------------


def linear_test_map(seed: int = 0, dim: int = 20, rate: float = 0.95):
    """Seeded nonsymmetric contraction ``z -> A z + b`` with spectral radius ``rate``."""
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eig = rate * np.linspace(1.0, 0.1, dim)
    T = np.triu(rng.standard_normal((dim, dim)) * 0.1, 1) + np.diag(eig)
    A = Q @ T @ Q.T
    b = rng.standard_normal(dim)
    return A, b, rng.standard_normal(dim)


def aa_unit_runs(seed: int = 0, n_iter: int = 40):
    """Plain and AA(m) iterations on two linear maps; returns ``{name: report}``."""
    maps = {
        "diag": (np.diag([0.9, 0.5, 0.1]), np.ones(3), np.zeros(3)),
        "random": linear_test_map(seed),
    }
    configs = {"plain": AndersonConfig(), "aa1": AndersonConfig(enabled=True, depth=1),
               "aa5": AndersonConfig(enabled=True, depth=5)}
    runs = {}
    for map_name, (A, b, z0) in maps.items():
        for cfg_name, cfg in configs.items():
            zs, res, thetas = iterate_fixed_point(lambda z, A=A, b=b: A @ z + b, z0, n_iter, cfg)
            rep = ConvergenceReport(measure="step_inf")
            accelerated = iter(thetas)
            for k, r in enumerate(res):
                theta = None
                if cfg.enabled and 1 <= k < len(res) - 1:
                    theta = next(accelerated, None)
                rep.log(k, math.nan, r, theta, theta is not None, math.nan)
            rep.converged, rep.status = True, "fixed_iterations"
            runs[f"{map_name}_{cfg_name}"] = RunResult(f"{map_name}_{cfg_name}", rep, None)
    return runs


def run_aa_unit(out_dir=None, seed: int = 0) -> ExperimentResult:
    result = ExperimentResult("aa_unit")
    result.runs = aa_unit_runs(seed)
    result.table = comparison_table(result.runs)
    ratio = result.runs["diag_aa1"].report.rows[10]["step_inf"] / result.runs["diag_plain"].report.rows[10]["step_inf"]
    result.extra["diag_aa1_over_plain_at_10"] = ratio
    result.extra["seed"] = seed
    if out_dir is not None:
        write_outputs(result, Path(out_dir) / "aa_unit")
    return result


def run_named(name: str, out_dir=None, jobs: int = 1, seed: int = 0) -> ExperimentResult:
    if name == "aa_unit":
        return run_aa_unit(out_dir, seed)
    if name not in SPECS:
        raise KeyError(name)
    return run_experiment(SPECS[name](), out_dir, jobs)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def write_outputs(result: ExperimentResult, directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    for name, run in result.runs.items():
        if run.report is not None:
            run.report.to_csv(directory / f"{name}.csv")
    rows = getattr(result, "trajectories", None)
    if rows:
        (directory / "trajectories.csv").write_text("\n".join(",".join(r) for r in rows) + "\n")
    (directory / "summary.json").write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    (directory / "table.txt").write_text(format_table(result.table) + "\n")
    series = {}
    for name, run in result.runs.items():
        if run.report is not None:
            series[name] = [r[run.report.measure] for r in run.report.rows]
    (directory / "convergence.svg").write_text(convergence_svg(series, title=result.name))


COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def convergence_svg(series: dict, title: str = "", width: int = 640, height: int = 420) -> str:
    """Log-scale residual-versus-iteration plot as a standalone SVG string."""
    left, right, top, bottom = 60, 150, 30, 40
    pw, ph = width - left - right, height - top - bottom
    vals = [v for ys in series.values() for v in ys if v > 0 and math.isfinite(v)]
    lo = math.floor(math.log10(min(vals))) if vals else -12
    hi = math.ceil(math.log10(max(vals))) if vals else 0
    if hi == lo:
        hi = lo + 1
    n_max = max((len(ys) for ys in series.values()), default=1)
    n_max = max(n_max - 1, 1)

    def sx(k):
        return left + pw * k / n_max

    def sy(v):
        return top + ph * (hi - math.log10(v)) / (hi - lo)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left}" y="18" font-family="sans-serif" font-size="13">{escape(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    step = max(1, (hi - lo) // 8)
    for e in range(lo, hi + 1, step):
        y = sy(10.0**e)
        out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" stroke="#dddddd"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" font-family="sans-serif" font-size="10" text-anchor="end">1e{e}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 8}" font-family="sans-serif" font-size="11" text-anchor="middle">iteration (0..{n_max})</text>')
    for i, (name, ys) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        pts = " ".join(f"{sx(k):.2f},{sy(v):.2f}" for k, v in enumerate(ys) if v > 0 and math.isfinite(v))
        if pts:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 14 * (i + 1)
        out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 35}" y="{ly}" font-family="sans-serif" font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


__all__ = [
    "ExperimentSpec",
    "ExperimentResult",
    "RunResult",
    "scqp_pendulum_spec",
    "zero_order_spec",
    "threshold_spec",
    "run_experiment",
    "run_named",
    "run_aa_unit",
    "comparison_table",
    "format_table",
    "convergence_svg",
    "perturbed_kkt_residual",
]

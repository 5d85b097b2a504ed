"""Full-step SQP-type iteration ``z_{k+1} = pi(z_k)`` and its driver.

There is no globalization: every iteration takes the full QP step. The
methods studied here are analysed locally and the experiments start inside
the convergence basin.

In zero-order mode the equality-constraint Jacobian is frozen at a reference
point, which makes the iteration converge to a perturbed problem; termination
then uses the fixed-point residual ``||pi(z_k) - z_k||_inf`` because the true
KKT residual stalls.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .anderson import AndersonConfig, AndersonState, aa_step, should_activate
from .exceptions import ConfigurationError, LinearizationFailure, MaxIterReached
from .hessians import HessianStrategy, hessian_for
from .nlp_model import Nlp, PrimalDualIterate
from .qp_solver import QpData, QpSolution, solve_qp


@dataclass(frozen=True)
class SqpConfig:
    hessian: HessianStrategy = field(default_factory=HessianStrategy)
    zero_order: bool = False
    frozen_point: Optional[np.ndarray] = None
    adjoint_correction: bool = False
    max_iter: int = 100
    kkt_tol: float = 1e-8
    qp_tol: float = 1e-10
    anderson: AndersonConfig = field(default_factory=AndersonConfig)

    def __post_init__(self):
        if isinstance(self.hessian, str):
            object.__setattr__(self, "hessian", HessianStrategy.from_string(self.hessian))
        if int(self.max_iter) < 1:
            raise ConfigurationError("max_iter must be >= 1")
        if not self.kkt_tol > 0:
            raise ConfigurationError("kkt_tol must be > 0")

    def with_anderson(self, **kwargs):
        return replace(self, anderson=replace(self.anderson, **kwargs))

    def to_dict(self):
        return {
            "hessian": self.hessian.kind,
            "lm_gamma": self.hessian.lm_gamma,
            "proj_eps": self.hessian.proj_eps,
            "zero_order": self.zero_order,
            "frozen_point": None if self.frozen_point is None else np.asarray(self.frozen_point).tolist(),
            "adjoint_correction": self.adjoint_correction,
            "max_iter": self.max_iter,
            "kkt_tol": self.kkt_tol,
            "qp_tol": self.qp_tol,
            **self.anderson.to_options(),
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        hess = HessianStrategy.from_string(
            data.pop("hessian", "scqp"),
            **{k: float(data.pop(k)) for k in ("lm_gamma", "proj_eps") if k in data},
        )
        aa_keys = {k: data.pop(k) for k in list(data) if k.startswith("anderson") or k == "with_anderson_acceleration"}
        frozen = data.pop("frozen_point", None)
        return cls(
            hessian=hess,
            frozen_point=None if frozen is None else np.asarray(frozen, dtype=float),
            anderson=AndersonConfig.from_options(aa_keys),
            **data,
        )


@dataclass
class KktResidual:
    stationarity: np.ndarray
    eq_feas: np.ndarray
    ineq_feas: np.ndarray
    comp: np.ndarray
    norm_inf: float


@dataclass
class LinearizationData:
    """QP ingredients at ``z_k``; ``G`` and ``H`` hold one column per constraint."""

    W: np.ndarray
    q: np.ndarray
    G: np.ndarray
    H: np.ndarray
    g0: np.ndarray
    h0: np.ndarray

    def qp(self):
        return QpData(W=self.W, q=self.q, G=self.G, g0=self.g0, H=self.H, h0=self.h0)


def _inf(x):
    return float(np.max(np.abs(x), initial=0.0))


def kkt_residual(nlp: Nlp, z: PrimalDualIterate) -> KktResidual:
    """KKT violation of the original NLP with exact first derivatives."""
    v = z.v
    g = np.asarray(nlp.g(v), dtype=float)
    h = np.asarray(nlp.h(v), dtype=float)
    stat = nlp.lagrangian_gradient(v, z.lam, z.mu)
    ineq = np.maximum(h, 0.0)
    comp = z.mu * h
    norm = max(_inf(stat), _inf(g), _inf(ineq), _inf(comp))
    return KktResidual(stat, g, ineq, comp, norm)


class SqpMap:
    """The fixed-point map ``pi`` of an SQP-type method.

    Keeps the frozen Jacobian (zero-order mode) and the last QP active set,
    which warm-starts the next call.
    """

    def __init__(self, nlp: Nlp, config: SqpConfig, frozen_point=None):
        self.nlp = nlp
        self.config = config
        self.frozen_jac_g = None
        if config.zero_order:
            vbar = config.frozen_point if config.frozen_point is not None else frozen_point
            if vbar is None:
                raise ConfigurationError("zero-order mode needs a frozen linearization point")
            self.frozen_point = np.asarray(vbar, dtype=float)
            self.frozen_jac_g = np.asarray(nlp.jac_g(self.frozen_point), dtype=float).reshape(nlp.n_g, nlp.n_v)
        self.last_solution: Optional[QpSolution] = None
        self.warm_start = None

    def constraint_jacobian(self, v):
        if self.frozen_jac_g is not None:
            return self.frozen_jac_g
        return np.asarray(self.nlp.jac_g(v), dtype=float).reshape(self.nlp.n_g, self.nlp.n_v)

    def gradient(self, z: PrimalDualIterate):
        """The possibly inexact objective gradient ``q(z)``."""
        q = np.asarray(self.nlp.grad_f(z.v), dtype=float)
        if self.config.zero_order and self.config.adjoint_correction:
            exact = np.asarray(self.nlp.jac_g(z.v), dtype=float).reshape(self.nlp.n_g, self.nlp.n_v)
            q = q + (exact - self.frozen_jac_g).T @ z.lam
        return q

    def linearize(self, z: PrimalDualIterate) -> LinearizationData:
        nlp = self.nlp
        v = z.v
        g0 = np.asarray(nlp.g(v), dtype=float)
        h0 = np.asarray(nlp.h(v), dtype=float)
        q = self.gradient(z)
        G = self.constraint_jacobian(v).T
        H = np.asarray(nlp.jac_h(v), dtype=float).reshape(nlp.n_h, nlp.n_v).T
        W = hessian_for(self.config.hessian, nlp, z, G=G)
        for name, arr in (("g", g0), ("h", h0), ("q", q), ("G", G), ("H", H), ("W", W)):
            if not np.all(np.isfinite(arr)):
                raise LinearizationFailure(f"non-finite values in {name}")
        return LinearizationData(W=W, q=q, G=G, H=H, g0=g0, h0=h0)

    def solve_subproblem(self, z: PrimalDualIterate, warm_start=None):
        lin = self.linearize(z)
        ws = self.warm_start if warm_start is None else warm_start
        sol = solve_qp(lin.qp(), warm_start=ws, tol=self.config.qp_tol)
        self.last_solution = sol
        self.warm_start = sol.active_set
        return PrimalDualIterate(z.v + sol.d, sol.lam, sol.mu), sol

    def __call__(self, z):
        if isinstance(z, PrimalDualIterate):
            return self.solve_subproblem(z)[0]
        z_it = PrimalDualIterate.from_vector(z, self.nlp)
        return self.solve_subproblem(z_it)[0].to_vector()


def sqp_step(nlp: Nlp, z: PrimalDualIterate, config: SqpConfig, warm_start=None) -> PrimalDualIterate:
    """One full SQP-type step ``pi(z)``."""
    return SqpMap(nlp, config, frozen_point=z.v).solve_subproblem(z, warm_start)[0]


def perturbation_vector(nlp: Nlp, z: PrimalDualIterate, config: SqpConfig, frozen_point=None) -> np.ndarray:
    """Gradient perturbation ``p`` collecting the derivative errors at ``z``.

    ``p = (grad f - q) + (grad g - G) lam + (grad h - H) mu``. At a fixed point
    the QP stationarity reads ``q + G lam + H mu = 0``, hence
    ``grad f - p + grad g lam + grad h mu = 0``: ``z`` is a KKT point of
    ``min f(v) - p'v`` subject to the original constraints.
    """
    pi = SqpMap(nlp, config, frozen_point=frozen_point)
    v = z.v
    q = pi.gradient(z)
    jg = np.asarray(nlp.jac_g(v), dtype=float).reshape(nlp.n_g, nlp.n_v)
    G = pi.constraint_jacobian(v)
    # jac_h is never approximated here, so its error block vanishes
    return (np.asarray(nlp.grad_f(v)) - q) + (jg - G).T @ z.lam


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("iter", "kkt_inf", "step_inf", "theta_k", "aa_active", "obj")


@dataclass
class ConvergenceReport:
    rows: list = field(default_factory=list)
    converged: bool = False
    status: str = "running"
    measure: str = "kkt_inf"
    active_sets: list = field(default_factory=list)

    def log(self, k, kkt_inf, step_inf, theta, aa_active, obj):
        self.rows.append(
            {
                "iter": int(k),
                "kkt_inf": float(kkt_inf),
                "step_inf": math.nan if step_inf is None else float(step_inf),
                "theta_k": math.nan if theta is None else float(theta),
                "aa_active": bool(aa_active),
                "obj": float(obj),
            }
        )

    @property
    def iterations(self):
        """Number of QP solves performed."""
        return sum(1 for r in self.rows if not math.isnan(r["step_inf"]))

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def theta_history(self):
        return [r["theta_k"] for r in self.rows if not math.isnan(r["theta_k"])]

    def iterations_to(self, tol, measure=None):
        """Index of the first logged iterate whose measure is ``<= tol`` (None if never)."""
        measure = measure or self.measure
        for r in self.rows:
            val = r[measure]
            if not math.isnan(val) and val <= tol:
                return r["iter"]
        return None

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow(
                [
                    r["iter"],
                    _fmt(r["kkt_inf"]),
                    _fmt(r["step_inf"]),
                    _fmt(r["theta_k"]),
                    int(r["aa_active"]),
                    _fmt(r["obj"]),
                ]
            )
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path, measure="kkt_inf"):
        rep = cls(measure=measure)
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rep.rows.append(
                    {
                        "iter": int(row["iter"]),
                        "kkt_inf": _parse(row["kkt_inf"]),
                        "step_inf": _parse(row["step_inf"]),
                        "theta_k": _parse(row["theta_k"]),
                        "aa_active": bool(int(row["aa_active"])),
                        "obj": _parse(row["obj"]),
                    }
                )
        return rep


def _fmt(x):
    return "" if math.isnan(x) else repr(float(x))


def _parse(s):
    return math.nan if s == "" else float(s)


def solve(
    nlp: Nlp,
    z0: PrimalDualIterate,
    config: SqpConfig,
    callback: Optional[Callable[[dict], None]] = None,
    raise_on_max_iter: bool = True,
):
    """Iterate ``pi`` (optionally Anderson-accelerated) until convergence.

    Exact mode stops once the KKT residual of the original NLP drops below
    ``kkt_tol``; zero-order mode stops once ``||pi(z_k) - z_k||_inf <= kkt_tol``
    and returns ``pi(z_k)``. Raises :class:`MaxIterReached` (carrying the
    report) when the iteration cap is hit, unless ``raise_on_max_iter`` is off.
    """
    aa = config.anderson
    pi = SqpMap(nlp, config, frozen_point=z0.v)
    state = AndersonState(depth=aa.depth)
    report = ConvergenceReport(measure="step_inf" if config.zero_order else "kkt_inf")
    z = z0.to_vector()
    n_v, n_g = nlp.n_v, nlp.n_g
    prev_active_set = None
    aa_on = False

    for k in range(config.max_iter + 1):
        zk = PrimalDualIterate(z[:n_v].copy(), z[n_v: n_v + n_g].copy(), z[n_v + n_g:].copy())
        kkt = kkt_residual(nlp, zk)
        obj = float(nlp.f(zk.v))
        if not config.zero_order and kkt.norm_inf <= config.kkt_tol:
            report.log(k, kkt.norm_inf, None, None, False, obj)
            report.converged, report.status = True, "converged"
            return zk, report
        if k == config.max_iter:
            report.log(k, kkt.norm_inf, None, None, False, obj)
            break

        phi_it, sol = pi.solve_subproblem(zk)
        phi = phi_it.to_vector()
        step_inf = _inf(phi - z)
        report.active_sets.append(sol.active_set)
        if config.zero_order and step_inf <= config.kkt_tol:
            report.log(k, kkt.norm_inf, step_inf, None, False, obj)
            report.converged, report.status = True, "converged"
            return phi_it, report

        score = step_inf if config.zero_order else kkt.norm_inf
        active = should_activate(score, aa)
        if active and not aa_on and not aa.seed_history:
            state.reset()
        if aa.reset_on_active_set_change and prev_active_set is not None and sol.active_set != prev_active_set:
            state.reset()
        aa_on = active
        prev_active_set = sol.active_set

        z_next, state = aa_step(state, z, phi, aa, accelerate=active)
        if callback is not None:
            callback({"iter": k, "z": z, "phi": phi, "state": state, "qp": sol, "kkt": kkt})
        report.log(k, kkt.norm_inf, step_inf, state.theta if state.accelerated else None, state.accelerated, obj)
        z = z_next

    report.status = "max_iter"
    zk = PrimalDualIterate(z[:n_v].copy(), z[n_v: n_v + n_g].copy(), z[n_v + n_g:].copy())
    if raise_on_max_iter:
        raise MaxIterReached(f"no convergence within {config.max_iter} iterations", z=zk, report=report)
    return zk, report

"""Local convergence analysis of SQP-type fixed points.

The iteration matrix is the Jacobian of the SQP map at a fixed point, taken by
central differences with the QP active set held fixed. Its spectral radius
predicts the asymptotic linear rate. For exact-derivative methods the reduced
Hessian pair ``(W_hat, Lambda_hat)`` gives the same rate as the smallest
``kappa`` with ``-kappa W_hat <= Lambda_hat - W_hat <= kappa W_hat``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from .dense_linalg import cholesky, nullspace_basis, spectral_radius, sym_eig
from .exceptions import AasqpError, ActiveSetUnstable, InsufficientTail, NoConvergence, RankDeficientConstraints
from .hessians import exact_hessian, hessian_for
from .nlp_model import Nlp, PrimalDualIterate
from .sqp_engine import ConvergenceReport, SqpConfig, SqpMap

NOISE_FLOOR = 1e-12
MIN_TAIL = 6


@dataclass
class RateEstimate:
    observed_rate: float
    predicted_kappa: float = math.nan
    tail_start: int = 0
    agreement: float = math.nan
    tail_length: int = 0

    def with_prediction(self, kappa: float) -> "RateEstimate":
        return RateEstimate(
            observed_rate=self.observed_rate,
            predicted_kappa=float(kappa),
            tail_start=self.tail_start,
            agreement=abs(self.observed_rate - float(kappa)),
            tail_length=self.tail_length,
        )


def active_inequalities(nlp: Nlp, z: PrimalDualIterate, tol: float = 1e-8) -> np.ndarray:
    """Indices with a positive multiplier (strict complementarity assumed)."""
    return np.flatnonzero(np.asarray(z.mu) > tol)


def _coordinates(nlp: Nlp, active) -> np.ndarray:
    n_v, n_g = nlp.n_v, nlp.n_g
    return np.concatenate([np.arange(n_v + n_g), n_v + n_g + np.asarray(active, dtype=int)])


def default_fd_step(z: PrimalDualIterate) -> float:
    return 1e-5 * (1.0 + float(np.max(np.abs(z.to_vector()), initial=0.0)))


def estimate_iteration_matrix(
    nlp: Nlp,
    z_star: PrimalDualIterate,
    config: SqpConfig,
    h_fd: float | None = None,
    frozen_point=None,
    fixed_point_tol: float = 1e-8,
) -> np.ndarray:
    """Central-difference Jacobian of ``pi`` at ``z_star``.

    Rows and columns cover ``(v, lam, mu_active)``; inactive multipliers stay
    at zero under small perturbations and carry no dynamics. Raises
    :class:`ActiveSetUnstable` when the margins are too thin for ``h_fd`` or
    when a perturbed QP picks a different active set.
    """
    h_fd = default_fd_step(z_star) if h_fd is None else float(h_fd)
    pi = SqpMap(nlp, config, frozen_point=z_star.v if frozen_point is None else frozen_point)
    base, sol = pi.solve_subproblem(z_star, warm_start=())
    active_set = sol.active_set
    res = float(np.max(np.abs(base.to_vector() - z_star.to_vector()), initial=0.0))
    if res > fixed_point_tol:
        raise NoConvergence(f"not a fixed point: ||pi(z) - z||_inf = {res:.3e}")

    active = np.asarray(sorted(active_set), dtype=int)
    h = np.asarray(nlp.h(z_star.v), dtype=float)
    inactive = np.setdiff1d(np.arange(nlp.n_h), active)
    if active.size and float(np.min(z_star.mu[active])) <= 10 * h_fd:
        raise ActiveSetUnstable("active multiplier within the finite-difference step")
    if inactive.size and float(np.min(np.abs(h[inactive]))) <= 10 * h_fd:
        raise ActiveSetUnstable("inactive constraint within the finite-difference step")

    idx = _coordinates(nlp, active)
    z0 = z_star.to_vector()
    A = np.empty((idx.size, idx.size))
    for col, j in enumerate(idx):
        images = []
        for sign in (1.0, -1.0):
            zp = z0.copy()
            zp[j] += sign * h_fd
            out, s = pi.solve_subproblem(PrimalDualIterate.from_vector(zp, nlp), warm_start=active_set)
            if s.active_set != active_set:
                raise ActiveSetUnstable(f"perturbing coordinate {j} changes the active set")
            images.append(out.to_vector()[idx])
        A[:, col] = (images[0] - images[1]) / (2 * h_fd)
    return A


def predicted_rate(A_star) -> float:
    return spectral_radius(A_star)


def kappa_bound_symmetric(W_hat, Lambda_hat) -> float:
    """Smallest ``kappa`` with ``-kappa W <= Lambda - W <= kappa W``."""
    W_hat = np.asarray(W_hat, dtype=float)
    Lambda_hat = np.asarray(Lambda_hat, dtype=float)
    if W_hat.size == 0:
        return 0.0
    L = cholesky(W_hat)
    E = Lambda_hat - W_hat
    M = solve_triangular(L, solve_triangular(L, E, lower=True).T, lower=True)
    lam, _ = sym_eig(0.5 * (M + M.T))
    return float(np.max(np.abs(lam)))


def necessary_condition_margin(W_hat, Lambda_hat) -> float:
    """Smallest eigenvalue of ``W_hat - Lambda_hat / 2``; local convergence needs it >= 0."""
    W_hat = np.asarray(W_hat, dtype=float)
    if W_hat.size == 0:
        return math.inf
    return float(sym_eig(W_hat - 0.5 * np.asarray(Lambda_hat, dtype=float))[0][0])


def reduced_matrices(nlp: Nlp, z_star: PrimalDualIterate, config: SqpConfig, active=None):
    """``(Z' W Z, Z' hess L Z)`` on the nullspace of the active constraints."""
    if active is None:
        active = active_inequalities(nlp, z_star)
    v = z_star.v
    jg = np.asarray(nlp.jac_g(v), dtype=float).reshape(nlp.n_g, nlp.n_v)
    jh = np.asarray(nlp.jac_h(v), dtype=float).reshape(nlp.n_h, nlp.n_v)
    C = np.vstack([jg, jh[np.asarray(active, dtype=int)]]).T
    if C.shape[1]:
        if C.shape[1] > C.shape[0] or np.linalg.matrix_rank(C) < C.shape[1]:
            raise RankDeficientConstraints("active constraint Jacobian is rank deficient")
        Z = nullspace_basis(C)
    else:
        Z = np.eye(nlp.n_v)
    W = hessian_for(config.hessian, nlp, z_star, G=jg.T)
    Lam = exact_hessian(nlp, z_star)
    return Z.T @ W @ Z, Z.T @ Lam @ Z


def observed_rate(report: ConvergenceReport, tail_fraction: float = 0.4, measure: str | None = None) -> RateEstimate:
    """Geometric mean of successive residual ratios over the final non-accelerated stretch."""
    if not 0.0 < tail_fraction <= 1.0:
        raise ValueError("tail_fraction must lie in (0, 1]")
    measure = measure or report.measure
    rows = [r for r in report.rows if not math.isnan(r[measure])]
    if not rows:
        raise InsufficientTail("empty report")
    r0 = rows[0][measure]
    usable = [r for r in rows if not r["aa_active"] and r[measure] > NOISE_FLOOR * r0]
    n_tail = math.ceil(tail_fraction * len(usable))
    if n_tail < MIN_TAIL:
        raise InsufficientTail(f"{n_tail} usable tail iterations, need {MIN_TAIL}")
    tail = usable[-n_tail:]
    logs = [
        math.log(b[measure] / a[measure])
        for a, b in zip(tail, tail[1:])
        if b["iter"] == a["iter"] + 1 and a[measure] > 0 and b[measure] > 0
    ]
    if len(logs) < MIN_TAIL - 1:
        raise InsufficientTail("too few consecutive tail iterations")
    return RateEstimate(
        observed_rate=math.exp(sum(logs) / len(logs)),
        tail_start=tail[0]["iter"],
        tail_length=len(tail),
    )


def analysis_summary(estimate: RateEstimate, kappa_bound=None, theta_history=()) -> dict:
    return {
        "observed_rate": estimate.observed_rate,
        "predicted_kappa": None if math.isnan(estimate.predicted_kappa) else estimate.predicted_kappa,
        "kappa_bound": None if kappa_bound is None else float(kappa_bound),
        "theta_history": [float(t) for t in theta_history],
    }


def write_summary(path, summary: dict, **extra):
    data = dict(summary)
    data.update(extra)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return data


def rate_estimate_dict(est: RateEstimate) -> dict:
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(est).items()}


def polish_fixed_point(nlp: Nlp, z: PrimalDualIterate, config: SqpConfig, tol: float = 1e-11, max_iter: int = 200):
    """Plain iterations of ``pi`` from ``z`` until the step falls below ``tol``."""
    pi = SqpMap(nlp, config, frozen_point=config.frozen_point if config.frozen_point is not None else z.v)
    for _ in range(max_iter):
        nxt, _ = pi.solve_subproblem(z)
        step = float(np.max(np.abs(nxt.to_vector() - z.to_vector()), initial=0.0))
        z = nxt
        if step <= tol:
            return z
    raise NoConvergence(f"fixed point not reached to {tol:g} in {max_iter} steps")


def analyze_run(nlp: Nlp, z_star: PrimalDualIterate, config: SqpConfig, report: ConvergenceReport,
                tail_fraction: float = 0.4) -> dict:
    """Observed rate, predicted spectral radius and, for exact derivatives, the reduced-matrix bound."""
    est = observed_rate(report, tail_fraction)
    z_star = polish_fixed_point(nlp, z_star, config)
    A = estimate_iteration_matrix(nlp, z_star, config, frozen_point=config.frozen_point)
    est = est.with_prediction(predicted_rate(A))
    kappa = margin = None
    if not config.zero_order:
        W_hat, Lambda_hat = reduced_matrices(nlp, z_star, config)
        margin = necessary_condition_margin(W_hat, Lambda_hat)
        try:
            kappa = kappa_bound_symmetric(W_hat, Lambda_hat)
        except AasqpError:
            kappa = None
    summary = analysis_summary(est, kappa, report.theta_history)
    summary.update(
        rate_estimate=rate_estimate_dict(est),
        necessary_condition_margin=margin,
        necessary_condition_holds=None if margin is None else bool(margin >= -1e-8),
        kappa_bounds_rate=None if kappa is None else bool(est.observed_rate <= kappa + 0.05),
    )
    return summary

"""Dense primal active-set solver for convex QPs.

Solves::

    min  0.5 d' W d + q' d
    s.t. g0 + G' d  = 0
         h0 + H' d <= 0

with ``G`` (``n_v x n_g``) and ``H`` (``n_v x n_h``) holding one column per
constraint. ``W`` only needs to be positive definite on the nullspace of the
equality constraints; each equality-constrained subproblem is solved by the
nullspace method and fails loudly if its reduced Hessian is singular.

When the equality-only minimizer violates an inequality, a feasible start is
produced by an elastic phase: one extra variable ``t >= 0`` relaxes every
inequality and is penalized linearly. Its solution seeds the main loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .exceptions import (
    AasqpError,
    Degenerate,
    Infeasible,
    NotPositiveDefinite,
    RankDeficientConstraints,
)

RANK_TOL = 1e-12


@dataclass
class QpData:
    W: np.ndarray
    q: np.ndarray
    G: np.ndarray
    g0: np.ndarray
    H: np.ndarray
    h0: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        n = self.q.size
        self.G = np.asarray(self.G, dtype=float).reshape(n, -1)
        self.g0 = np.asarray(self.g0, dtype=float).reshape(-1)
        self.H = np.asarray(self.H, dtype=float).reshape(n, -1)
        self.h0 = np.asarray(self.h0, dtype=float).reshape(-1)
        if self.W.shape != (n, n):
            raise ValueError("W must be n_v x n_v")
        if self.G.shape[1] != self.g0.size or self.H.shape[1] != self.h0.size:
            raise ValueError("constraint matrices and offsets disagree")

    @property
    def n_v(self):
        return self.q.size

    @property
    def n_g(self):
        return self.g0.size

    @property
    def n_h(self):
        return self.h0.size

    def objective(self, d):
        return 0.5 * float(d @ self.W @ d) + float(self.q @ d)


@dataclass
class QpSolution:
    d: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    active_set: tuple
    status: str = "optimal"
    iterations: int = 0
    extra: dict = field(default_factory=dict)


def dump_qp_text(qp: QpData, path) -> None:
    """Write ``qp`` as whitespace-separated blocks.

    Layout: a header line ``n_v n_g n_h``, then the blocks ``W``, ``q``, ``G``,
    ``g0``, ``H``, ``h0``, each introduced by a ``# <name> <rows> <cols>`` line
    and written row by row with ``%.17g``.
    """
    blocks = [
        ("W", qp.W),
        ("q", qp.q.reshape(-1, 1)),
        ("G", qp.G),
        ("g0", qp.g0.reshape(-1, 1)),
        ("H", qp.H),
        ("h0", qp.h0.reshape(-1, 1)),
    ]
    lines = [f"{qp.n_v} {qp.n_g} {qp.n_h}"]
    for name, mat in blocks:
        lines.append(f"# {name} {mat.shape[0]} {mat.shape[1]}")
        lines.extend(" ".join(f"{x:.17g}" for x in row) for row in mat)
    Path(path).write_text("\n".join(lines) + "\n")


def load_qp_text(path) -> QpData:
    lines = Path(path).read_text().splitlines()
    blocks = {}
    i = 1
    while i < len(lines):
        _, name, rows, cols = lines[i].split()
        rows, cols = int(rows), int(cols)
        data = [[float(x) for x in lines[i + 1 + r].split()] for r in range(rows)]
        blocks[name] = np.array(data, dtype=float).reshape(rows, cols)
        i += rows + 1
    return QpData(**{k: v if k in ("W", "G", "H") else v.reshape(-1) for k, v in blocks.items()})


# ---------------------------------------------------------------------------
# equality-constrained QP
# ---------------------------------------------------------------------------


def solve_eq_qp(W, q, G, g0):
    """Solve ``[[W, G], [G', 0]] (d, lam) = (-q, -g0)`` by the nullspace method."""
    W = np.asarray(W, dtype=float)
    q = np.asarray(q, dtype=float)
    n = q.size
    G = np.asarray(G, dtype=float).reshape(n, -1)
    g0 = np.asarray(g0, dtype=float).reshape(-1)
    m = G.shape[1]
    if m > n:
        raise RankDeficientConstraints("more constraints than variables")
    if m:
        Qf, Rf = np.linalg.qr(G, mode="complete")
        R = Rf[:m, :m]
        diag = np.abs(np.diag(R))
        if np.min(diag) <= RANK_TOL * max(1.0, np.max(diag)):
            raise RankDeficientConstraints("constraint matrix is rank deficient")
        Y, Z = Qf[:, :m], Qf[:, m:]
        dy = scipy.linalg.solve_triangular(R, -g0, trans="T")
        d_part = Y @ dy
    else:
        Z = np.eye(n)
        d_part = np.zeros(n)
    if Z.shape[1]:
        red = Z.T @ W @ Z
        red = 0.5 * (red + red.T)
        try:
            L = np.linalg.cholesky(red)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite("reduced Hessian is not positive definite") from None
        scale = max(1.0, float(np.max(np.abs(np.diag(red)))))
        if np.min(np.diag(L)) ** 2 <= 1e-14 * scale:
            raise NotPositiveDefinite("reduced Hessian is numerically singular")
        rhs = -Z.T @ (q + W @ d_part)
        dz = scipy.linalg.cho_solve((L, True), rhs)
        d = d_part + Z @ dz
    else:
        d = d_part
    if m:
        lam = scipy.linalg.solve_triangular(R, -Y.T @ (W @ d + q))
    else:
        lam = np.zeros(0)
    return d, lam


# ---------------------------------------------------------------------------
# inequality handling
# ---------------------------------------------------------------------------


def _independent_equalities(G, g0):
    """Column subset of ``G`` with full rank; raises Infeasible if inconsistent."""
    m = G.shape[1]
    if m == 0:
        return np.arange(0)
    _, r, perm = scipy.linalg.qr(G, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > RANK_TOL * max(diag[0], 1e-300)))
    if rank == m:
        return np.arange(m)
    keep = np.sort(perm[:rank])
    # consistency: does some d satisfy all equalities?
    sol = np.linalg.lstsq(G.T, -g0, rcond=None)[0]
    if np.max(np.abs(G.T @ sol + g0)) > 1e-8 * (1.0 + np.max(np.abs(g0))):
        raise Infeasible("equality constraints are inconsistent")
    return keep


def _primal_active_set(W, q, G, g0, H, h0, d, working, tol, max_iter):
    """Primal active-set loop started from a feasible ``d``.

    Returns ``(d, lam, mu_working, working, iterations)``.
    """
    n_g = G.shape[1]
    n_h = H.shape[1]
    working = list(working)
    for it in range(1, max_iter + 1):
        A = np.hstack([G, H[:, working]])
        b = np.concatenate([g0, h0[working]])
        d_eq, mult = solve_eq_qp(W, q, A, b)
        p = d_eq - d
        alpha, blocking = 1.0, None
        if n_h:
            wset = set(working)
            hp = H.T @ p
            pscale = 1e-14 * (1.0 + np.max(np.abs(d)) + np.max(np.abs(p)))
            for i in range(n_h):
                if i in wset or hp[i] <= pscale * np.max(np.abs(H[:, i])):
                    continue
                slack = max(-(h0[i] + H[:, i] @ d), 0.0)
                ratio = slack / hp[i]
                if ratio < alpha:
                    alpha, blocking = ratio, i
        if blocking is None:
            d = d_eq
            mu_w = mult[n_g:]
            if mu_w.size == 0 or np.min(mu_w) >= -tol:
                return d, mult[:n_g], mu_w, working, it
            j = int(np.argmin(mu_w))  # argmin picks the smallest index on ties
            working.pop(j)
        else:
            d = d + alpha * p
            working.append(blocking)
    raise Degenerate(f"active-set iteration cap {max_iter} reached")


def _feasible(H, h0, d, tol):
    return H.shape[1] == 0 or float(np.max(h0 + H.T @ d)) <= tol


def _elastic_start(qp, Gk, g0k, tol, max_iter):
    """Feasible point of the inequalities via a penalized slack variable."""
    n, n_h = qp.n_v, qp.n_h
    d0, _ = solve_eq_qp(qp.W, qp.q, Gk, g0k)
    t0 = max(0.0, float(np.max(qp.h0 + qp.H.T @ d0)))
    W_aug = np.zeros((n + 1, n + 1))
    W_aug[:n, :n] = qp.W
    W_aug[n, n] = 1.0
    G_aug = np.vstack([Gk, np.zeros((1, Gk.shape[1]))])
    H_aug = np.zeros((n + 1, n_h + 1))
    H_aug[:n, :n_h] = qp.H
    H_aug[n, :] = -1.0
    h0_aug = np.concatenate([qp.h0, [0.0]])
    penalty = 1e3 * (1.0 + np.max(np.abs(qp.q)) + np.max(np.abs(qp.W)))
    for _ in range(4):
        q_aug = np.concatenate([qp.q, [penalty]])
        y, _, _, working, _ = _primal_active_set(
            W_aug, q_aug, G_aug, g0k, H_aug, h0_aug,
            np.concatenate([d0, [t0]]), [], tol, max_iter,
        )
        if y[n] <= tol:
            d = y[:n]
            # the relaxed constraints are now within tol; snap to exact feasibility
            # is left to the main loop, which only needs slack >= -tol
            return d, [i for i in working if i < n_h]
        penalty *= 1e3
    raise Infeasible("no point satisfies the linearized inequalities")


def solve_qp(qp: QpData, warm_start: Optional[Sequence[int]] = None, tol: float = 1e-10, dump_path=None) -> QpSolution:
    """Solve a convex QP with the primal active-set method.

    ``warm_start`` is an initial working set of inequality indices; it is used
    when its equality-constrained minimizer is feasible, otherwise the solver
    starts cold.
    """
    try:
        return _solve_qp(qp, warm_start, tol)
    except AasqpError:
        if dump_path is not None:
            dump_qp_text(qp, dump_path)
        raise


def _solve_qp(qp, warm_start, tol):
    if tol <= 0:
        raise ValueError("tol must be positive")
    n_h = qp.n_h
    max_iter = 50 * (qp.n_v + n_h)
    keep = _independent_equalities(qp.G, qp.g0)
    Gk, g0k = qp.G[:, keep], qp.g0[keep]
    feas_tol = tol * (1.0 + np.max(np.abs(qp.h0), initial=0.0))

    start = None
    if warm_start:
        working = sorted({int(i) for i in warm_start if 0 <= int(i) < n_h})
        try:
            d_w, _ = solve_eq_qp(qp.W, qp.q, np.hstack([Gk, qp.H[:, working]]), np.concatenate([g0k, qp.h0[working]]))
        except (RankDeficientConstraints, NotPositiveDefinite):
            d_w = None
        if d_w is not None and _feasible(qp.H, qp.h0, d_w, feas_tol):
            start = (d_w, working)
    if start is None:
        d0, _ = solve_eq_qp(qp.W, qp.q, Gk, g0k)
        if _feasible(qp.H, qp.h0, d0, feas_tol):
            start = (d0, [])
        else:
            start = _elastic_start(qp, Gk, g0k, feas_tol, max_iter)
    d, lam_k, mu_w, working, iters = _primal_active_set(
        qp.W, qp.q, Gk, g0k, qp.H, qp.h0, start[0], start[1], tol, max_iter
    )
    lam = np.zeros(qp.n_g)
    lam[keep] = lam_k
    mu = np.zeros(n_h)
    if working:
        mu[working] = np.maximum(mu_w, 0.0)
    return QpSolution(d=d, lam=lam, mu=mu, active_set=tuple(sorted(working)), iterations=iters)


def kkt_violation(qp: QpData, sol: QpSolution) -> dict:
    """Blockwise violations of the QP optimality conditions (infinity norms)."""
    d, lam, mu = sol.d, sol.lam, sol.mu
    stat = qp.W @ d + qp.q + qp.G @ lam + qp.H @ mu
    eq = qp.g0 + qp.G.T @ d
    slack = qp.h0 + qp.H.T @ d
    return {
        "stationarity": float(np.max(np.abs(stat), initial=0.0)),
        "equality": float(np.max(np.abs(eq), initial=0.0)),
        "inequality": float(np.max(slack, initial=0.0)) if slack.size else 0.0,
        "dual": float(max(0.0, -np.min(mu, initial=0.0))),
        "complementarity": float(np.max(np.abs(mu * slack), initial=0.0)),
    }

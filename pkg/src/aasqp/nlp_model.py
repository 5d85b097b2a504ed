"""Nonlinear program container, primal-dual iterates and model utilities.

The NLP is ``min f(v) s.t. g(v) = 0, h(v) <= 0``. Jacobian callbacks return
matrices with one row per constraint (``n_g x n_v``); the QP layer transposes
them into the column-per-constraint layout it works with.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .exceptions import DimensionMismatch

Vector = np.ndarray
Matrix = np.ndarray


@dataclass(frozen=True)
class ConvexTerm:
    """A convex-over-nonlinear term ``outer(inner(v))``.

    ``inner_hess(v, w)`` returns ``sum_j w_j * Hess(inner_j)(v)`` and is only
    needed for exact Hessians; GGN and SCQP never call it.
    """

    inner: Callable[[Vector], Vector]
    inner_jac: Callable[[Vector], Matrix]
    outer: Callable[[Vector], float]
    outer_grad: Callable[[Vector], Vector]
    outer_hess: Callable[[Vector], Matrix]
    inner_hess: Optional[Callable[[Vector, Vector], Matrix]] = None

    def value(self, v):
        return self.outer(self.inner(v))

    def gradient(self, v):
        return self.inner_jac(v).T @ self.outer_grad(self.inner(v))

    def gauss_newton(self, v):
        jac = self.inner_jac(v)
        return jac.T @ self.outer_hess(self.inner(v)) @ jac

    def hessian(self, v):
        y = self.inner(v)
        out = self.gauss_newton(v)
        if self.inner_hess is not None:
            out = out + self.inner_hess(v, self.outer_grad(y))
        return out


def quadratic_term(weight: Matrix, offset: Optional[Vector] = None) -> ConvexTerm:
    """``0.5 * (v - offset)' weight (v - offset)`` as an identity-inner term."""
    weight = np.asarray(weight, dtype=float)
    n = weight.shape[0]
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    eye = np.eye(n)
    return ConvexTerm(
        inner=lambda v: np.asarray(v, dtype=float) - off,
        inner_jac=lambda v: eye,
        outer=lambda y: 0.5 * float(y @ weight @ y),
        outer_grad=lambda y: weight @ y,
        outer_hess=lambda y: weight,
        inner_hess=lambda v, w: np.zeros((n, n)),
    )


def linear_term(coeffs: Vector) -> ConvexTerm:
    """``coeffs' v``; zero curvature."""
    c = np.asarray(coeffs, dtype=float).reshape(1, -1)
    n = c.shape[1]
    return ConvexTerm(
        inner=lambda v: c @ np.asarray(v, dtype=float),
        inner_jac=lambda v: c,
        outer=lambda y: float(y[0]),
        outer_grad=lambda y: np.ones(1),
        outer_hess=lambda y: np.zeros((1, 1)),
        inner_hess=lambda v, w: np.zeros((n, n)),
    )


@dataclass
class Nlp:
    """Callbacks and dimensions of ``min f(v) s.t. g(v) = 0, h(v) <= 0``.

    ``objective_terms`` (if given) must sum to ``f``; ``constraint_terms`` maps
    an inequality index ``i`` to a term with ``h_i = term.value``. Both are
    used by the GGN and SCQP Hessians.
    """

    n_v: int
    n_g: int
    n_h: int
    f: Callable[[Vector], float]
    g: Callable[[Vector], Vector]
    h: Callable[[Vector], Vector]
    grad_f: Callable[[Vector], Vector]
    jac_g: Callable[[Vector], Matrix]
    jac_h: Callable[[Vector], Matrix]
    hess_lagrangian: Optional[Callable[[Vector, Vector, Vector], Matrix]] = None
    objective_terms: Optional[list] = None
    constraint_terms: dict = field(default_factory=dict)
    name: str = "nlp"
    meta: dict = field(default_factory=dict)

    def evaluate(self, v):
        """Evaluate all first-order quantities at ``v`` with dimension checks."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n_v,):
            raise DimensionMismatch(f"v has shape {v.shape}, expected ({self.n_v},)")
        out = {
            "f": float(self.f(v)),
            "g": np.asarray(self.g(v), dtype=float).reshape(-1),
            "h": np.asarray(self.h(v), dtype=float).reshape(-1),
            "grad_f": np.asarray(self.grad_f(v), dtype=float).reshape(-1),
            "jac_g": np.asarray(self.jac_g(v), dtype=float).reshape(self.n_g, self.n_v),
            "jac_h": np.asarray(self.jac_h(v), dtype=float).reshape(self.n_h, self.n_v),
        }
        if out["g"].shape != (self.n_g,) or out["h"].shape != (self.n_h,):
            raise DimensionMismatch("constraint callbacks returned wrong sizes")
        if out["grad_f"].shape != (self.n_v,):
            raise DimensionMismatch("gradient callback returned wrong size")
        return out

    def lagrangian_gradient(self, v, lam, mu):
        return self.grad_f(v) + self.jac_g(v).T @ lam + self.jac_h(v).T @ mu


@dataclass
class PrimalDualIterate:
    """``z = (v, lam, mu)``; stacked in that order by :meth:`to_vector`."""

    v: Vector
    lam: Vector
    mu: Vector

    @classmethod
    def zeros(cls, nlp: Nlp, v=None):
        v0 = np.zeros(nlp.n_v) if v is None else np.asarray(v, dtype=float).copy()
        return cls(v0, np.zeros(nlp.n_g), np.zeros(nlp.n_h))

    @classmethod
    def from_vector(cls, z, nlp: Nlp):
        z = np.asarray(z, dtype=float)
        if z.shape != (nlp.n_v + nlp.n_g + nlp.n_h,):
            raise DimensionMismatch(f"z has shape {z.shape}")
        a, b = nlp.n_v, nlp.n_v + nlp.n_g
        return cls(z[:a].copy(), z[a:b].copy(), z[b:].copy())

    def to_vector(self):
        return np.concatenate([self.v, self.lam, self.mu])


# ---------------------------------------------------------------------------
# L1 penalty via slacks
# ---------------------------------------------------------------------------


def reformulate_l1_penalty(nlp: Nlp, terms) -> Nlp:
    """Add ``sum_i w_i * |a_i' v + b_i|`` to the objective using slack pairs.

    ``terms`` is a list of ``(weight, a, b)``. Each term appends ``s+, s- >= 0``
    to the variables, ``w (s+ + s-)`` to the objective and the equality
    ``a' v + b - (s+ - s-) = 0``. Variables are ordered ``(v, s1+, s1-, ...)``.
    """
    terms = [(float(w), np.asarray(a, dtype=float).reshape(-1), float(b)) for w, a, b in terms]
    if not terms:
        return nlp
    for w, a, _ in terms:
        if w <= 0:
            raise ValueError("L1 weights must be positive")
        if a.shape != (nlp.n_v,):
            raise DimensionMismatch("L1 expression has wrong length")
    n0, ns = nlp.n_v, 2 * len(terms)
    n_v = n0 + ns
    weights = np.repeat([w for w, _, _ in terms], 2)
    a_mat = np.array([a for _, a, _ in terms])
    b_vec = np.array([b for _, _, b in terms])
    # slack map: s+ - s- per term
    d_mat = np.zeros((len(terms), ns))
    for i in range(len(terms)):
        d_mat[i, 2 * i] = 1.0
        d_mat[i, 2 * i + 1] = -1.0

    def split(v):
        v = np.asarray(v, dtype=float)
        return v[:n0], v[n0:]

    def f(v):
        x, s = split(v)
        return nlp.f(x) + float(weights @ s)

    def grad_f(v):
        x, _ = split(v)
        return np.concatenate([nlp.grad_f(x), weights])

    def g(v):
        x, s = split(v)
        return np.concatenate([nlp.g(x), a_mat @ x + b_vec - d_mat @ s])

    def jac_g(v):
        x, _ = split(v)
        top = np.hstack([nlp.jac_g(x).reshape(nlp.n_g, n0), np.zeros((nlp.n_g, ns))])
        return np.vstack([top, np.hstack([a_mat, -d_mat])])

    def h(v):
        x, s = split(v)
        return np.concatenate([nlp.h(x), -s])

    def jac_h(v):
        x, _ = split(v)
        top = np.hstack([nlp.jac_h(x).reshape(nlp.n_h, n0), np.zeros((nlp.n_h, ns))])
        return np.vstack([top, np.hstack([np.zeros((ns, n0)), -np.eye(ns)])])

    hess = None
    if nlp.hess_lagrangian is not None:

        def hess(v, lam, mu):
            x, _ = split(v)
            out = np.zeros((n_v, n_v))
            out[:n0, :n0] = nlp.hess_lagrangian(x, lam[: nlp.n_g], mu[: nlp.n_h])
            return out

    def lift(term: ConvexTerm) -> ConvexTerm:
        def inner_hess(v, w):
            out = np.zeros((n_v, n_v))
            if term.inner_hess is not None:
                out[:n0, :n0] = term.inner_hess(split(v)[0], w)
            return out

        return ConvexTerm(
            inner=lambda v: term.inner(split(v)[0]),
            inner_jac=lambda v: np.hstack(
                [term.inner_jac(split(v)[0]), np.zeros((len(term.inner(split(v)[0])), ns))]
            ),
            outer=term.outer,
            outer_grad=term.outer_grad,
            outer_hess=term.outer_hess,
            inner_hess=inner_hess,
        )

    objective_terms = None
    if nlp.objective_terms is not None:
        slack_cost = np.concatenate([np.zeros(n0), weights])
        objective_terms = [lift(t) for t in nlp.objective_terms] + [linear_term(slack_cost)]

    meta = dict(nlp.meta)
    meta["l1_slack_offset"] = n0
    return replace(
        nlp,
        n_v=n_v,
        n_g=nlp.n_g + len(terms),
        n_h=nlp.n_h + ns,
        f=f,
        g=g,
        h=h,
        grad_f=grad_f,
        jac_g=jac_g,
        jac_h=jac_h,
        hess_lagrangian=hess,
        objective_terms=objective_terms,
        constraint_terms={i: lift(t) for i, t in nlp.constraint_terms.items()},
        name=nlp.name + "+l1",
        meta=meta,
    )


# ---------------------------------------------------------------------------
# finite-difference derivative checks
# ---------------------------------------------------------------------------


def _fd_jacobian(fun, v, step):
    v = np.asarray(v, dtype=float)
    cols = []
    for j in range(v.size):
        e = np.zeros_like(v)
        e[j] = step
        cols.append((np.atleast_1d(fun(v + e)) - np.atleast_1d(fun(v - e))) / (2.0 * step))
    return np.array(cols).T


def _rel_err(a, b):
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def check_derivatives(nlp: Nlp, v, h_fd: float = 1e-5, lam=None, mu=None, rng=None) -> dict:
    """Worst relative error of each derivative callback against central differences.

    Returns a dict with keys ``grad_f``, ``jac_g``, ``jac_h`` and, when a
    Hessian callback exists, ``hess_lagrangian`` (checked with random
    multipliers unless ``lam``/``mu`` are given).
    """
    if h_fd <= 0:
        raise ValueError("h_fd must be positive")
    v = np.asarray(v, dtype=float)
    report = {
        "grad_f": _rel_err(nlp.grad_f(v), _fd_jacobian(nlp.f, v, h_fd).reshape(-1)),
        "jac_g": _rel_err(
            np.asarray(nlp.jac_g(v)).reshape(nlp.n_g, nlp.n_v),
            _fd_jacobian(nlp.g, v, h_fd).reshape(nlp.n_g, nlp.n_v),
        ),
        "jac_h": _rel_err(
            np.asarray(nlp.jac_h(v)).reshape(nlp.n_h, nlp.n_v),
            _fd_jacobian(nlp.h, v, h_fd).reshape(nlp.n_h, nlp.n_v),
        ),
    }
    if nlp.hess_lagrangian is not None:
        rng = np.random.default_rng(0) if rng is None else rng
        lam = rng.standard_normal(nlp.n_g) if lam is None else np.asarray(lam, dtype=float)
        mu = rng.uniform(0.0, 1.0, nlp.n_h) if mu is None else np.asarray(mu, dtype=float)
        fd = _fd_jacobian(lambda x: nlp.lagrangian_gradient(x, lam, mu), v, h_fd)
        report["hess_lagrangian"] = _rel_err(nlp.hess_lagrangian(v, lam, mu), 0.5 * (fd + fd.T))
    return report

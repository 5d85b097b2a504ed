"""Hessian approximations for the QP subproblem.

Strategy strings accepted by :meth:`HessianStrategy.from_string`:
``exact+project``, ``exact+lm``, ``ggn`` and ``scqp``. A bare ``exact`` is
rejected when building QP data, since an indefinite Hessian breaks the QP
solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dense_linalg import nullspace_basis, sym_eig
from .exceptions import ConfigurationError, MissingStructure
from .nlp_model import Nlp, PrimalDualIterate

DEFAULT_LM_GAMMA = 1e-4
DEFAULT_PROJ_EPS = 1e-6

KINDS = ("exact", "exact+lm", "exact+project", "ggn", "scqp")


@dataclass(frozen=True)
class HessianStrategy:
    """Which QP Hessian to build.

    With ``kind="exact+project"`` the exact Hessian is kept whenever its
    reduction onto the nullspace of the linearized equalities is positive
    definite (smallest eigenvalue at least ``proj_eps``), since the QP solver
    only needs that; otherwise the full matrix is projected. Set
    ``project_always`` to project unconditionally.
    """

    kind: str = "scqp"
    lm_gamma: float = DEFAULT_LM_GAMMA
    proj_eps: float = DEFAULT_PROJ_EPS
    project_always: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown Hessian strategy {self.kind!r}")
        if self.lm_gamma < 0:
            raise ConfigurationError("lm_gamma must be >= 0")
        if self.proj_eps <= 0:
            raise ConfigurationError("proj_eps must be > 0")

    @classmethod
    def from_string(cls, text: str, **params):
        return cls(kind=text.strip().lower(), **params)

    def __str__(self):
        return self.kind


def exact_hessian(nlp: Nlp, z: PrimalDualIterate) -> np.ndarray:
    if nlp.hess_lagrangian is None:
        raise MissingStructure("problem has no Hessian callback")
    W = np.asarray(nlp.hess_lagrangian(z.v, z.lam, z.mu), dtype=float)
    return 0.5 * (W + W.T)


def ggn_hessian(nlp: Nlp, z: PrimalDualIterate) -> np.ndarray:
    """Sum of ``J' Hess(outer) J`` over the objective terms."""
    if not nlp.objective_terms:
        raise MissingStructure("GGN needs convex-over-nonlinear objective terms")
    W = np.zeros((nlp.n_v, nlp.n_v))
    for term in nlp.objective_terms:
        W += term.gauss_newton(z.v)
    return 0.5 * (W + W.T)


def scqp_hessian(nlp: Nlp, z: PrimalDualIterate) -> np.ndarray:
    """GGN plus the outer curvature of convex inequality terms.

    Weights are the current multipliers ``mu_k`` clamped at zero, so the result
    stays positive semidefinite even for transiently negative estimates.
    """
    W = ggn_hessian(nlp, z)
    for i, term in sorted(nlp.constraint_terms.items()):
        weight = max(float(z.mu[i]), 0.0)
        if weight:
            W += weight * term.gauss_newton(z.v)
    return 0.5 * (W + W.T)


def levenberg_marquardt(W, gamma: float = DEFAULT_LM_GAMMA) -> np.ndarray:
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    W = np.asarray(W, dtype=float)
    return W + gamma * np.eye(W.shape[0])


def project_regularize(W, eps: float = DEFAULT_PROJ_EPS) -> np.ndarray:
    """Clip the spectrum of ``W`` from below at ``eps``."""
    if eps <= 0:
        raise ValueError("eps must be > 0")
    lam, V = sym_eig(W)
    if lam.size == 0 or lam[0] >= eps:
        return np.array(W, dtype=float)
    out = (V * np.maximum(lam, eps)) @ V.T
    return 0.5 * (out + out.T)


def reduced_min_eig(W, G) -> float:
    """Smallest eigenvalue of ``W`` restricted to ``{d : G' d = 0}``."""
    Z = nullspace_basis(G)
    if Z.shape[1] == 0:
        return np.inf
    return float(sym_eig(Z.T @ W @ Z)[0][0])


def hessian_for(strategy: HessianStrategy, nlp: Nlp, z: PrimalDualIterate, G=None) -> np.ndarray:
    """The QP Hessian ``W(z)`` for a strategy, regularized where needed.

    ``G`` (equality Jacobian, one column per constraint) enables the reduced
    curvature test of ``exact+project``; without it the projection is always
    applied.
    """
    kind = strategy.kind
    if kind == "exact":
        raise ConfigurationError("exact Hessian needs a regularizer: use exact+project or exact+lm")
    if kind == "exact+lm":
        return levenberg_marquardt(exact_hessian(nlp, z), strategy.lm_gamma)
    if kind == "exact+project":
        W = exact_hessian(nlp, z)
        if G is not None and not strategy.project_always and reduced_min_eig(W, G) >= strategy.proj_eps:
            return W
        return project_regularize(W, strategy.proj_eps)
    if kind == "ggn":
        return ggn_hessian(nlp, z)
    return scqp_hessian(nlp, z)

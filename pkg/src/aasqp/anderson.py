"""Anderson acceleration for fixed-point maps ``z -> phi(z)``.

The coefficient problem is solved in its unconstrained least-squares form:
with ``E`` holding the latest iterate differences and ``F`` the matching
residual differences (newest column first), ``gamma = argmin ||r_k - F gamma||``
and the next iterate is ``z_k - E gamma + beta (r_k - F gamma)``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, fields

import numpy as np

from .dense_linalg import qr_least_squares
from .exceptions import ConfigurationError, DegenerateSecant

# config-file / option names and their dataclass fields
OPTION_NAMES = {
    "with_anderson_acceleration": "enabled",
    "anderson_depth": "depth",
    "anderson_damping": "damping",
    "anderson_activation_threshold": "activation_threshold",
}


@dataclass(frozen=True)
class AndersonConfig:
    """Options of the accelerated iteration.

    ``activation_threshold`` is the KKT residual level below which accelerated
    steps are taken (``inf``: always). ``seed_history`` keeps the history that
    was recorded while inactive when acceleration switches on; by default it
    is discarded.
    """

    enabled: bool = False
    depth: int = 1
    damping: float = 1.0
    activation_threshold: float = math.inf
    collinearity_tol: float = 1e-14
    seed_history: bool = False
    reset_on_active_set_change: bool = True

    def __post_init__(self):
        if int(self.depth) < 1:
            raise ConfigurationError("anderson depth must be >= 1")
        if not 0.0 < float(self.damping) <= 1.0:
            raise ConfigurationError("anderson damping must lie in (0, 1]")
        if not float(self.activation_threshold) > 0.0:
            raise ConfigurationError("activation threshold must be positive")

    def to_options(self):
        out = {}
        for key, attr in OPTION_NAMES.items():
            value = getattr(self, attr)
            out[key] = "inf" if isinstance(value, float) and math.isinf(value) else value
        return out

    @classmethod
    def from_options(cls, options):
        kwargs = {}
        names = {f.name for f in fields(cls)}
        for key, value in options.items():
            attr = OPTION_NAMES.get(key, key)
            if attr not in names:
                raise ConfigurationError(f"unknown Anderson option {key!r}")
            if attr == "activation_threshold":
                value = parse_threshold(value)
            kwargs[attr] = value
        return cls(**kwargs)


def parse_threshold(value) -> float:
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity", "none"):
        return math.inf
    return float(value)


@dataclass
class AndersonState:
    """Bounded history of ``(z_j, r_j)`` pairs, oldest first."""

    depth: int = 1
    iterates: deque = field(default_factory=deque)
    residuals: deque = field(default_factory=deque)
    theta: float | None = None
    gamma: np.ndarray | None = None
    accelerated: bool = False
    degenerate: bool = False

    def reset(self):
        self.iterates.clear()
        self.residuals.clear()

    def push(self, z, r):
        self.iterates.append(np.array(z, dtype=float))
        self.residuals.append(np.array(r, dtype=float))
        while len(self.iterates) > self.depth + 1:
            self.iterates.popleft()
            self.residuals.popleft()

    @property
    def E(self):
        zs = list(self.iterates)[::-1]
        return _columns([zs[i] - zs[i + 1] for i in range(len(zs) - 1)], zs[0].size if zs else 0)

    @property
    def F(self):
        rs = list(self.residuals)[::-1]
        return _columns([rs[i] - rs[i + 1] for i in range(len(rs) - 1)], rs[0].size if rs else 0)


def _columns(cols, n):
    if not cols:
        return np.zeros((n, 0))
    return np.column_stack(cols)


def _plain(z_k, phi_zk, r_k, beta):
    if beta == 1.0:
        return np.array(phi_zk, dtype=float)
    return z_k + beta * r_k


def alpha_from_gamma(gamma) -> np.ndarray:
    """Affine weights ``alpha`` (oldest first) matching the least-squares ``gamma``."""
    g = np.asarray(gamma, dtype=float)[::-1]  # oldest first: gamma_{k-m+1}, ..., gamma_k
    if g.size == 0:
        return np.ones(1)
    return np.concatenate([[g[0]], np.diff(g), [1.0 - g[-1]]])


def aa_step(state: AndersonState, z_k, phi_zk, config: AndersonConfig, accelerate: bool = True):
    """One accelerated update; records ``(z_k, r_k)`` in ``state``.

    With ``accelerate=False`` (or no history yet) this is the damped plain step
    ``z_k + beta r_k``. Returns ``(z_next, state)``.
    """
    z_k = np.asarray(z_k, dtype=float)
    r_k = np.asarray(phi_zk, dtype=float) - z_k
    beta = float(config.damping)
    state.push(z_k, r_k)
    state.accelerated = False
    state.degenerate = False
    state.gamma = None
    state.theta = None
    if not accelerate or len(state.iterates) < 2:
        return _plain(z_k, phi_zk, r_k, beta), state

    F, E = state.F, state.E
    r_norm = float(np.linalg.norm(r_k))
    if r_norm == 0.0:
        state.theta = 1.0
        return z_k.copy(), state
    newest = F[:, 0]
    scale = r_norm + float(np.linalg.norm(state.residuals[-2]))
    if np.linalg.norm(newest) <= config.collinearity_tol * scale:
        state.degenerate = True
        # keep only the newest pair
        while len(state.iterates) > 1:
            state.iterates.popleft()
            state.residuals.popleft()
        return _plain(z_k, phi_zk, r_k, beta), state

    if F.shape[1] > F.shape[0]:
        # more secants than dimensions: keep the newest ones
        F, E = F[:, : F.shape[0]], E[:, : F.shape[0]]
    gamma = qr_least_squares(F, r_k)
    r_alpha = r_k - F @ gamma
    z_alpha = z_k - E @ gamma
    state.gamma = gamma
    state.theta = float(np.linalg.norm(r_alpha)) / r_norm
    state.accelerated = True
    return z_alpha + beta * r_alpha, state


def aa1_closed_form(z_k, z_prev, r_k, r_prev, collinearity_tol: float = 1e-14):
    """Depth-one, undamped update ``(1 - gamma) phi(z_k) + gamma phi(z_prev)``."""
    z_k, z_prev = np.asarray(z_k, dtype=float), np.asarray(z_prev, dtype=float)
    r_k, r_prev = np.asarray(r_k, dtype=float), np.asarray(r_prev, dtype=float)
    dr = r_k - r_prev
    den = float(dr @ dr)
    if math.sqrt(den) <= collinearity_tol * (np.linalg.norm(r_k) + np.linalg.norm(r_prev)) or den == 0.0:
        raise DegenerateSecant("residual difference vanishes")
    gamma = float(r_k @ dr) / den
    return (1.0 - gamma) * (z_k + r_k) + gamma * (z_prev + r_prev)


def broyden_reference_step(z_k, z_prev, r_k, r_prev, collinearity_tol: float = 1e-14):
    """Broyden's inverse update from ``B = -I`` applied to ``phi(z) - z = 0``.

    Kept as an independent check of :func:`aa1_closed_form`; it forms the
    updated matrix explicitly.
    """
    z_k, z_prev = np.asarray(z_k, dtype=float), np.asarray(z_prev, dtype=float)
    r_k, r_prev = np.asarray(r_k, dtype=float), np.asarray(r_prev, dtype=float)
    dz = z_k - z_prev
    dr = r_k - r_prev
    den = float(dr @ dr)
    if math.sqrt(den) <= collinearity_tol * (np.linalg.norm(r_k) + np.linalg.norm(r_prev)) or den == 0.0:
        raise DegenerateSecant("residual difference vanishes")
    B_prev = -np.eye(z_k.size)
    B = B_prev + np.outer(dz - B_prev @ dr, dr) / den
    return z_k - B @ r_k


def should_activate(kkt_norm_inf: float, config: AndersonConfig) -> bool:
    if kkt_norm_inf < 0:
        raise ValueError("residual norm must be nonnegative")
    return bool(config.enabled) and kkt_norm_inf < config.activation_threshold


def iterate_fixed_point(phi, z0, n_iter: int, config: AndersonConfig | None = None, measure=None):
    """Run ``n_iter`` (optionally accelerated) steps of ``z -> phi(z)``.

    The activation test uses ``measure(z, phi(z))`` (default: infinity norm of
    the residual). Returns the list of iterates ``z_0 .. z_{n_iter}`` and the
    list of residual norms ``||phi(z_k) - z_k||_2``, plus the gains.
    """
    config = config or AndersonConfig()
    state = AndersonState(depth=config.depth)
    z = np.asarray(z0, dtype=float)
    zs, res, thetas = [z.copy()], [], []
    active_prev = False
    for _ in range(n_iter):
        fz = np.asarray(phi(z), dtype=float)
        res.append(float(np.linalg.norm(fz - z)))
        score = measure(z, fz) if measure else float(np.max(np.abs(fz - z)))
        active = should_activate(score, config)
        if active and not active_prev and not config.seed_history:
            state.reset()
        active_prev = active
        z, state = aa_step(state, z, fz, config, accelerate=active)
        if state.theta is not None:
            thetas.append(state.theta)
        zs.append(z.copy())
    fz = np.asarray(phi(z), dtype=float)
    res.append(float(np.linalg.norm(fz - z)))
    return zs, res, thetas

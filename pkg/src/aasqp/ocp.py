"""Direct multiple-shooting transcription of small optimal control problems.

Decision variables are ordered ``(x_0, u_0, x_1, u_1, ..., x_{N-1}, u_{N-1}, x_N)``.
Equalities are ``x_0 - xbar_0`` followed by the shooting gaps
``x_{k+1} - F(x_k, u_k)``. Inequalities are the terminal constraints followed by
the control bounds ``u_k - u_max <= 0`` and ``u_min - u_k <= 0`` per stage.

Sensitivities of the integrator are propagated forward through the RK4 (or
Euler) stages. The dynamics part of the Lagrangian Hessian is obtained by
central differences of the contracted integrator Jacobian.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import DimensionMismatch
from .nlp_model import ConvexTerm, Nlp, quadratic_term

# ---------------------------------------------------------------------------
# dynamics models
# ---------------------------------------------------------------------------


class CartPendulum:
    """Frictionless cart-pole with state ``(p, v, theta, omega)`` and force input.

    ``theta = 0`` is the upright position and ``theta = pi`` hangs down, so the
    tip sits at ``(p - l sin(theta), l cos(theta))``. Gravity acts towards
    negative tip height: the downward rest state is an equilibrium.
    """

    nx = 4
    nu = 1
    outputs = ("tip",)

    def __init__(self, cart_mass=1.0, pole_mass=0.1, length=0.8, gravity=9.81):
        if length <= 0:
            raise ValueError("pendulum length must be positive")
        self.M = float(cart_mass)
        self.m = float(pole_mass)
        self.l = float(length)
        self.g = float(gravity)

    def to_dict(self):
        return {
            "name": "cart_pendulum",
            "cart_mass": self.M,
            "pole_mass": self.m,
            "length": self.l,
            "gravity": self.g,
        }

    def rhs(self, x, u):
        M, m, l, g = self.M, self.m, self.l, self.g
        _, vel, th, om = x
        F = u[0]
        s, c = np.sin(th), np.cos(th)
        den = M + m - m * c * c
        acc = (-m * l * s * om * om + m * g * c * s + F) / den
        alpha = (-m * l * c * s * om * om + F * c + (M + m) * g * s) / (l * den)
        return np.array([vel, acc, om, alpha])

    def jac(self, x, u):
        M, m, l, g = self.M, self.m, self.l, self.g
        _, vel, th, om = x
        F = u[0]
        s, c = np.sin(th), np.cos(th)
        den = M + m - m * c * c
        dden = 2.0 * m * c * s
        n1 = -m * l * s * om * om + m * g * c * s + F
        n2 = -m * l * c * s * om * om + F * c + (M + m) * g * s
        dn1_th = -m * l * c * om * om + m * g * (c * c - s * s)
        dn2_th = -m * l * (c * c - s * s) * om * om - F * s + (M + m) * g * c
        A = np.zeros((4, 4))
        A[0, 1] = 1.0
        A[2, 3] = 1.0
        A[1, 2] = (dn1_th * den - n1 * dden) / den**2
        A[1, 3] = -2.0 * m * l * s * om / den
        A[3, 2] = (dn2_th * den - n2 * dden) / (l * den**2)
        A[3, 3] = -2.0 * m * l * c * s * om / (l * den)
        B = np.array([[0.0], [1.0 / den], [0.0], [c / (l * den)]])
        return A, B

    def tip(self, x):
        return np.array([x[0] - self.l * np.sin(x[2]), self.l * np.cos(x[2])])

    def tip_jac(self, x):
        return np.array([[1.0, 0.0, -self.l * np.cos(x[2]), 0.0], [0.0, 0.0, -self.l * np.sin(x[2]), 0.0]])

    def tip_hess(self, x, w):
        out = np.zeros((4, 4))
        out[2, 2] = w[0] * self.l * np.sin(x[2]) - w[1] * self.l * np.cos(x[2])
        return out


class LinearDynamics:
    """``xdot = A x + B u``; defaults to ``A = 0``, ``B = eye(nx, nu)``."""

    outputs = ()

    def __init__(self, nx=1, nu=1, A=None, B=None):
        self.A = np.zeros((nx, nx)) if A is None else np.asarray(A, dtype=float)
        self.B = np.eye(nx, nu) if B is None else np.asarray(B, dtype=float)
        self.nx, self.nu = self.B.shape
        if self.A.shape != (self.nx, self.nx):
            raise DimensionMismatch("A and B disagree on the state dimension")

    def to_dict(self):
        return {"name": "linear_test", "A": self.A.tolist(), "B": self.B.tolist()}

    def rhs(self, x, u):
        return self.A @ x + self.B @ u

    def jac(self, x, u):
        return self.A, self.B


def make_dynamics(desc):
    """Build a dynamics model from a name or a JSON-style dict."""
    if isinstance(desc, str):
        desc = {"name": desc}
    desc = dict(desc)
    name = desc.pop("name")
    if name == "cart_pendulum":
        return CartPendulum(**desc)
    if name == "linear_test":
        return LinearDynamics(**desc)
    raise ValueError(f"unknown dynamics {name!r}")


# ---------------------------------------------------------------------------
# integrators with forward sensitivities
# ---------------------------------------------------------------------------


def _rk4_step(dyn, x, u, dt, sens):
    nx, nu = dyn.nx, dyn.nu
    seed = np.hstack([np.eye(nx), np.zeros((nx, nu))])
    ks, dks = [], []
    for c in (0.0, 0.5, 0.5, 1.0):
        if c == 0.0:
            xs, dxs = x, seed
        else:
            xs = x + c * dt * ks[-1]
            dxs = seed + c * dt * dks[-1] if sens else None
        ks.append(dyn.rhs(xs, u))
        if sens:
            A, B = dyn.jac(xs, u)
            dks.append(A @ dxs + np.hstack([np.zeros((nx, nx)), B]))
    x_next = x + dt / 6.0 * (ks[0] + 2 * ks[1] + 2 * ks[2] + ks[3])
    if not sens:
        return x_next, None
    return x_next, seed + dt / 6.0 * (dks[0] + 2 * dks[1] + 2 * dks[2] + dks[3])


def _euler_step(dyn, x, u, dt, sens):
    x_next = x + dt * dyn.rhs(x, u)
    if not sens:
        return x_next, None
    A, B = dyn.jac(x, u)
    return x_next, np.hstack([np.eye(dyn.nx) + dt * A, dt * B])


_STEPPERS = {"rk4": _rk4_step, "euler": _euler_step, "explicit-euler": _euler_step}


def integrate(dyn, x, u, h, integrator="rk4", steps=1, sens=True):
    """Simulate one shooting interval of length ``h``.

    Returns ``x_end`` and, with ``sens=True``, the ``nx x (nx + nu)``
    sensitivity ``d x_end / d (x, u)``.
    """
    step = _STEPPERS[integrator.lower()]
    nx, nu = dyn.nx, dyn.nu
    dt = h / steps
    xk = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    S = np.hstack([np.eye(nx), np.zeros((nx, nu))]) if sens else None
    for _ in range(steps):
        xk, J = step(dyn, xk, u, dt, sens)
        if sens:
            S = J[:, :nx] @ S
            S[:, nx:] += J[:, nx:]
    return xk, S


# ---------------------------------------------------------------------------
# problem description
# ---------------------------------------------------------------------------


@dataclass
class OcpSpec:
    """Optimal control problem over ``N`` equidistant intervals of a horizon ``T``.

    The cost is ``sum_k (s * x_k' Q x_k + u_k' R u_k) + x_N' Q_N x_N`` with
    ``s = T/N`` when ``state_cost_scaling == "dt"`` and ``s = 1`` otherwise.
    Terminal constraints are dicts, currently ``{"type": "ball", "output":
    "tip" | "state", "center": [...], "radius": r}`` meaning
    ``||y(x_N) - center||^2 - r^2 <= 0``.
    """

    N: int
    T: float
    dynamics: object
    x0: np.ndarray
    Q: Optional[np.ndarray] = None
    R: Optional[np.ndarray] = None
    Q_terminal: Optional[np.ndarray] = None
    state_cost_scaling: str = "none"
    u_min: Optional[np.ndarray] = None
    u_max: Optional[np.ndarray] = None
    terminal_constraints: list = field(default_factory=list)
    name: str = "ocp"

    def __post_init__(self):
        if not isinstance(self.dynamics, (CartPendulum, LinearDynamics)) and not hasattr(self.dynamics, "rhs"):
            self.dynamics = make_dynamics(self.dynamics)
        nx, nu = self.dynamics.nx, self.dynamics.nu
        if int(self.N) < 1 or float(self.T) <= 0:
            raise ValueError("need N >= 1 and T > 0")
        self.N, self.T = int(self.N), float(self.T)
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if self.x0.shape != (nx,):
            raise DimensionMismatch("x0 does not match the dynamics state dimension")
        self.Q = np.zeros((nx, nx)) if self.Q is None else _square(self.Q, nx)
        self.R = np.zeros((nu, nu)) if self.R is None else _square(self.R, nu)
        self.Q_terminal = np.zeros((nx, nx)) if self.Q_terminal is None else _square(self.Q_terminal, nx)
        if (self.u_min is None) != (self.u_max is None):
            raise ValueError("give both control bounds or neither")
        if self.u_min is not None:
            self.u_min = np.broadcast_to(np.asarray(self.u_min, dtype=float), (nu,)).copy()
            self.u_max = np.broadcast_to(np.asarray(self.u_max, dtype=float), (nu,)).copy()
            if np.any(self.u_min > self.u_max):
                raise ValueError("u_min must not exceed u_max")
        if self.state_cost_scaling not in ("none", "dt"):
            raise ValueError("state_cost_scaling must be 'none' or 'dt'")

    @property
    def nx(self):
        return self.dynamics.nx

    @property
    def nu(self):
        return self.dynamics.nu

    def to_dict(self):
        out = {
            "name": self.name,
            "N": self.N,
            "T": self.T,
            "dynamics": self.dynamics.to_dict(),
            "x0": self.x0.tolist(),
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "Q_terminal": self.Q_terminal.tolist(),
            "state_cost_scaling": self.state_cost_scaling,
            "terminal_constraints": list(self.terminal_constraints),
        }
        if self.u_min is not None:
            out["u_min"] = self.u_min.tolist()
            out["u_max"] = self.u_max.tolist()
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        allowed = {
            "name", "N", "T", "dynamics", "x0", "Q", "R", "Q_terminal",
            "state_cost_scaling", "u_min", "u_max", "terminal_constraints",
        }
        unknown = set(data) - allowed - {"integrator", "steps_per_interval", "initial_guess", "solver"}
        if unknown:
            raise ValueError(f"unknown OCP keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in data.items() if k in allowed})


def _square(a, n):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a * np.eye(n)
    elif a.ndim == 1:
        a = np.diag(a)
    if a.shape != (n, n):
        raise DimensionMismatch(f"weight matrix has shape {a.shape}, expected {(n, n)}")
    return a


def load_ocp_json(path):
    """Read an OCP document; returns ``(spec, integrator, steps_per_interval)``."""
    data = json.loads(Path(path).read_text())
    return (
        OcpSpec.from_dict(data),
        data.get("integrator", "rk4"),
        int(data.get("steps_per_interval", 1)),
    )


@dataclass(frozen=True)
class OcpLayout:
    N: int
    nx: int
    nu: int

    @property
    def n_v(self):
        return self.N * (self.nx + self.nu) + self.nx

    def x(self, k):
        start = k * (self.nx + self.nu)
        return slice(start, start + self.nx)

    def u(self, k):
        start = k * (self.nx + self.nu) + self.nx
        return slice(start, start + self.nu)

    def xu(self, k):
        start = k * (self.nx + self.nu)
        return slice(start, start + self.nx + self.nu)

    def states(self, v):
        return np.array([v[self.x(k)] for k in range(self.N + 1)])

    def controls(self, v):
        return np.array([v[self.u(k)] for k in range(self.N)])

    def pack(self, xs, us):
        v = np.zeros(self.n_v)
        for k in range(self.N + 1):
            v[self.x(k)] = xs[k]
        for k in range(self.N):
            v[self.u(k)] = us[k]
        return v


# ---------------------------------------------------------------------------
# transcription
# ---------------------------------------------------------------------------


def _terminal_term(spec: OcpSpec, layout: OcpLayout, con: dict) -> ConvexTerm:
    if con.get("type", "ball") != "ball":
        raise ValueError(f"unsupported terminal constraint {con.get('type')!r}")
    dyn = spec.dynamics
    center = np.asarray(con["center"], dtype=float)
    r2 = float(con["radius"]) ** 2
    sl = layout.x(spec.N)
    n_v = layout.n_v
    output = con.get("output", "state")
    if output == "tip":
        fun, jac, hess = dyn.tip, dyn.tip_jac, dyn.tip_hess
    elif output == "state":
        idx = np.asarray(con.get("indices", range(spec.nx)), dtype=int)
        sel = np.eye(spec.nx)[idx]
        fun = lambda x: x[idx]  # noqa: E731
        jac = lambda x: sel  # noqa: E731
        hess = lambda x, w: np.zeros((spec.nx, spec.nx))  # noqa: E731
    else:
        raise ValueError(f"unknown output {output!r}")
    if center.shape != np.shape(fun(spec.x0)):
        raise DimensionMismatch("constraint center has the wrong size")

    def inner_jac(v):
        out = np.zeros((center.size, n_v))
        out[:, sl] = jac(v[sl])
        return out

    def inner_hess(v, w):
        out = np.zeros((n_v, n_v))
        out[sl, sl] = hess(v[sl], w)
        return out

    return ConvexTerm(
        inner=lambda v: fun(v[sl]) - center,
        inner_jac=inner_jac,
        outer=lambda y: float(y @ y) - r2,
        outer_grad=lambda y: 2.0 * y,
        outer_hess=lambda y: 2.0 * np.eye(y.size),
        inner_hess=inner_hess,
    )


def build_ocp_nlp(spec: OcpSpec, integrator: str = "rk4", steps_per_interval: int = 1) -> Nlp:
    """Transcribe ``spec`` into an :class:`Nlp` by direct multiple shooting."""
    if steps_per_interval < 1:
        raise ValueError("steps_per_interval must be >= 1")
    if integrator.lower() not in _STEPPERS:
        raise ValueError(f"unknown integrator {integrator!r}")
    dyn = spec.dynamics
    N, nx, nu = spec.N, spec.nx, spec.nu
    layout = OcpLayout(N, nx, nu)
    n_v = layout.n_v
    n_g = nx * (N + 1)
    h_int = spec.T / N
    scale = h_int if spec.state_cost_scaling == "dt" else 1.0

    # f(v) = 0.5 v' P v
    P = np.zeros((n_v, n_v))
    for k in range(N):
        P[layout.x(k), layout.x(k)] = 2.0 * scale * spec.Q
        P[layout.u(k), layout.u(k)] = 2.0 * spec.R
    P[layout.x(N), layout.x(N)] = 2.0 * spec.Q_terminal
    P = 0.5 * (P + P.T)

    terminal = [_terminal_term(spec, layout, c) for c in spec.terminal_constraints]
    n_term = len(terminal)
    has_bounds = spec.u_min is not None
    n_h = n_term + (2 * N * nu if has_bounds else 0)

    def sim(v, k, sens=True):
        return integrate(dyn, v[layout.x(k)], v[layout.u(k)], h_int, integrator, steps_per_interval, sens)

    def f(v):
        return 0.5 * float(v @ P @ v)

    def grad_f(v):
        return P @ v

    def g(v):
        v = np.asarray(v, dtype=float)
        out = np.empty(n_g)
        out[:nx] = v[layout.x(0)] - spec.x0
        for k in range(N):
            out[nx * (k + 1): nx * (k + 2)] = v[layout.x(k + 1)] - sim(v, k, sens=False)[0]
        return out

    def jac_g(v):
        v = np.asarray(v, dtype=float)
        out = np.zeros((n_g, n_v))
        out[:nx, layout.x(0)] = np.eye(nx)
        for k in range(N):
            rows = slice(nx * (k + 1), nx * (k + 2))
            out[rows, layout.xu(k)] = -sim(v, k)[1]
            out[rows, layout.x(k + 1)] = np.eye(nx)
        return out

    def h(v):
        v = np.asarray(v, dtype=float)
        out = np.empty(n_h)
        for i, term in enumerate(terminal):
            out[i] = term.value(v)
        if has_bounds:
            for k in range(N):
                u = v[layout.u(k)]
                base = n_term + 2 * nu * k
                out[base: base + nu] = u - spec.u_max
                out[base + nu: base + 2 * nu] = spec.u_min - u
        return out

    bound_jac = np.zeros((n_h - n_term, n_v))
    if has_bounds:
        for k in range(N):
            base = 2 * nu * k
            bound_jac[base: base + nu, layout.u(k)] = np.eye(nu)
            bound_jac[base + nu: base + 2 * nu, layout.u(k)] = -np.eye(nu)

    def jac_h(v):
        v = np.asarray(v, dtype=float)
        rows = [term.gradient(v) for term in terminal]
        top = np.array(rows).reshape(n_term, n_v)
        return np.vstack([top, bound_jac])

    def dynamics_hessian(v, lam):
        # Hessian of -sum_k lam_{k+1}' F(x_k, u_k): central differences of the
        # contracted sensitivity.
        out = np.zeros((n_v, n_v))
        for k in range(N):
            lk = lam[nx * (k + 1): nx * (k + 2)]
            if not np.any(lk):
                continue
            w = v[layout.xu(k)].copy()
            step = 1e-5 * (1.0 + np.max(np.abs(w[:nx])))
            block = np.zeros((nx + nu, nx + nu))
            for j in range(nx + nu):
                wp, wm = w.copy(), w.copy()
                wp[j] += step
                wm[j] -= step
                Sp = integrate(dyn, wp[:nx], wp[nx:], h_int, integrator, steps_per_interval)[1]
                Sm = integrate(dyn, wm[:nx], wm[nx:], h_int, integrator, steps_per_interval)[1]
                block[:, j] = (Sp - Sm).T @ lk / (2.0 * step)
            out[layout.xu(k), layout.xu(k)] -= 0.5 * (block + block.T)
        return out

    def hess_lagrangian(v, lam, mu):
        v = np.asarray(v, dtype=float)
        out = P + dynamics_hessian(v, np.asarray(lam, dtype=float))
        for i, term in enumerate(terminal):
            if mu[i] != 0.0:
                out = out + mu[i] * term.hessian(v)
        return out

    nlp = Nlp(
        n_v=n_v,
        n_g=n_g,
        n_h=n_h,
        f=f,
        g=g,
        h=h,
        grad_f=grad_f,
        jac_g=jac_g,
        jac_h=jac_h,
        hess_lagrangian=hess_lagrangian,
        objective_terms=[quadratic_term(P)],
        constraint_terms={i: t for i, t in enumerate(terminal)},
        name=spec.name,
        meta={
            "layout": layout,
            "ocp": spec,
            "integrator": integrator,
            "steps_per_interval": steps_per_interval,
            "n_terminal": n_term,
            "dynamics_rows": slice(nx, n_g),
        },
    )
    return nlp

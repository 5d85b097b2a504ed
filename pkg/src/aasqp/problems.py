"""Cart-pendulum optimal control problems used by the experiments.

Model constants (not printed with the original study, fixed here): cart mass
1 kg, pole mass 0.1 kg, pole length 0.8 m, gravity 9.81 m/s^2. State is
``(p, v, theta, omega)`` with ``theta = 0`` upright.
"""

from __future__ import annotations

import numpy as np

from .nlp_model import PrimalDualIterate, reformulate_l1_penalty
from .ocp import CartPendulum, OcpSpec, build_ocp_nlp

PENDULUM_LENGTH = 0.8
TERMINAL_RADIUS = 0.05
CONTROL_WEIGHT = 1e-4
L1_WEIGHT = 1e3
L1_TARGET = 0.2


def swingup_spec(N: int = 20, T: float = 1.0) -> OcpSpec:
    """Swing-up from hanging down into a ball of radius 0.05 m around ``(l, l)``.

    Cost is ``0.5 * 1e-4 * sum u_k^2`` (the one-half sits outside the weight).
    """
    l = PENDULUM_LENGTH
    return OcpSpec(
        N=N,
        T=T,
        dynamics=CartPendulum(length=l),
        x0=np.array([0.0, 0.0, np.pi, 0.0]),
        R=np.array([[0.5 * CONTROL_WEIGHT]]),
        terminal_constraints=[
            {"type": "ball", "output": "tip", "center": [l, l], "radius": TERMINAL_RADIUS}
        ],
        name="swingup",
    )


def stabilization_spec(N: int = 20, T: float = 1.0) -> OcpSpec:
    """Stabilize the upright pendulum from a 0.15*pi angle offset, ``|u| <= 80``.

    Cost ``sum_k (T/N) x_k' Q x_k + u_k' R u_k + x_N' Q x_N``; the initial angle
    goes into the ``theta`` slot of ``(p, v, theta, omega)``.
    """
    Q = 2.0 * np.diag([1e3, 1e3, 1e-2, 1e-2])
    # Q weights (p, theta, v, omega) in the listed order; map to our state order
    Q = Q[np.ix_([0, 2, 1, 3], [0, 2, 1, 3])]
    return OcpSpec(
        N=N,
        T=T,
        dynamics=CartPendulum(length=PENDULUM_LENGTH),
        x0=np.array([0.0, 0.0, 0.15 * np.pi, 0.0]),
        Q=Q,
        R=np.array([[0.02]]),
        Q_terminal=Q,
        state_cost_scaling="dt",
        u_min=np.array([-80.0]),
        u_max=np.array([80.0]),
        name="stabilization",
    )


def swingup_ocp(N: int = 20, T: float = 1.0):
    return build_ocp_nlp(swingup_spec(N, T), "rk4", 1)


def stabilization_ocp(N: int = 20, T: float = 1.0):
    return build_ocp_nlp(stabilization_spec(N, T), "rk4", 1)


def swingup_initial_guess(nlp) -> PrimalDualIterate:
    """States interpolated linearly from hanging down (theta = pi) to upright
    (theta = 2 pi, p = l), zero controls and multipliers."""
    return interpolated_guess(nlp, [PENDULUM_LENGTH, 0.0, 2.0 * np.pi, 0.0])


def interpolated_guess(nlp, x_end=None) -> PrimalDualIterate:
    """States linear from ``x0`` to ``x_end`` (default: held at ``x0``), zero controls and multipliers."""
    layout = nlp.meta["layout"]
    spec = nlp.meta["ocp"]
    x_end = spec.x0 if x_end is None else np.asarray(x_end, dtype=float)
    ts = np.linspace(0.0, 1.0, layout.N + 1)
    xs = [(1 - t) * spec.x0 + t * x_end for t in ts]
    us = np.zeros((layout.N, layout.nu))
    return PrimalDualIterate.zeros(nlp, layout.pack(xs, us))


def stabilization_initial_guess(nlp) -> PrimalDualIterate:
    """Initial state held constant, zero controls."""
    layout = nlp.meta["layout"]
    spec = nlp.meta["ocp"]
    xs = [spec.x0] * (layout.N + 1)
    us = np.zeros((layout.N, layout.nu))
    return PrimalDualIterate.zeros(nlp, layout.pack(xs, us))


def _l1_terms(nlp, weight, target):
    layout = nlp.meta["layout"]
    terms = []
    for k in range(1, layout.N):
        a = np.zeros(nlp.n_v)
        a[layout.x(k).start] = 1.0  # cart position p_k
        terms.append((weight, a, -target))
    return terms


def threshold_ocp(N: int = 20, T: float = 1.0, weight: float = L1_WEIGHT, target: float = L1_TARGET):
    """Stabilization plus the path cost ``weight * |p_k - target|`` for ``k = 1..N-1``.

    The absolute values become slack pairs. Slacks carry no curvature, so the
    exact Hessian is always projected and exact-Hessian SQP turns linear.
    """
    base = stabilization_ocp(N, T)
    nlp = reformulate_l1_penalty(base, _l1_terms(base, weight, target))
    nlp.meta.update(base.meta)
    nlp.meta["base_n_v"] = base.n_v
    nlp.meta["l1_target"] = target
    nlp.name = "threshold"
    return nlp


def threshold_initial_guess(nlp) -> PrimalDualIterate:
    """Stabilization guess with slacks set to the positive and negative parts."""
    n0 = nlp.meta["base_n_v"]
    layout = nlp.meta["layout"]
    spec = nlp.meta["ocp"]
    v0 = layout.pack([spec.x0] * (layout.N + 1), np.zeros((layout.N, layout.nu)))
    s = []
    for k in range(1, layout.N):
        r = v0[layout.x(k).start] - nlp.meta["l1_target"]
        s += [max(r, 0.0), max(-r, 0.0)]
    return PrimalDualIterate.zeros(nlp, np.concatenate([v0, s]))

import itertools
import time

import numpy as np
import pytest

from aasqp.nlp_model import Nlp, quadratic_term
from aasqp.qp_solver import QpData


def random_qp(rng, n_v=None, n_g=None, n_h=None):
    """Strictly convex QP that is feasible by construction."""
    n_v = n_v or int(rng.integers(1, 7))
    n_g = int(rng.integers(0, n_v)) if n_g is None else n_g
    n_h = int(rng.integers(0, 9)) if n_h is None else n_h
    M = rng.standard_normal((n_v, n_v))
    W = M @ M.T + 0.5 * np.eye(n_v)
    q = rng.standard_normal(n_v)
    G = rng.standard_normal((n_v, n_g))
    H = rng.standard_normal((n_v, n_h))
    d_feas = rng.standard_normal(n_v)
    g0 = -G.T @ d_feas
    h0 = -H.T @ d_feas - rng.uniform(0.0, 1.0, n_h)
    return QpData(W=W, q=q, G=G, g0=g0, H=H, h0=h0)


def brute_force_qp(qp, tol=1e-9):
    """Enumerate active sets; solve each full KKT system directly."""
    n_v, n_g, n_h = qp.W.shape[0], qp.G.shape[1], qp.H.shape[1]
    for size in range(n_h + 1):
        for S in itertools.combinations(range(n_h), size):
            S = list(S)
            C = np.hstack([qp.G, qp.H[:, S]])
            m = C.shape[1]
            K = np.block([[qp.W, C], [C.T, np.zeros((m, m))]])
            rhs = -np.concatenate([qp.q, qp.g0, qp.h0[S]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            d = sol[:n_v]
            lam = sol[n_v:n_v + n_g]
            mu_s = sol[n_v + n_g:]
            if np.any(mu_s < -tol):
                continue
            if np.any(qp.h0 + qp.H.T @ d > tol):
                continue
            mu = np.zeros(n_h)
            mu[S] = mu_s
            return d, lam, mu
    raise AssertionError("no KKT point found by enumeration")


def toy_nlp(scale=1.0):
    """min 0.5||v - (1, 2)||^2  s.t.  v0^2 + v1 - 1 = 0,  v0 - 2 <= 0.

    ``scale`` multiplies the Hessian callback only, which lets tests build an
    SQP method whose Hessian is off by a known factor.
    """
    target = np.array([1.0, 2.0])
    return Nlp(
        n_v=2, n_g=1, n_h=1,
        f=lambda v: 0.5 * float((v - target) @ (v - target)),
        g=lambda v: np.array([v[0] ** 2 + v[1] - 1.0]),
        h=lambda v: np.array([v[0] - 2.0]),
        grad_f=lambda v: v - target,
        jac_g=lambda v: np.array([[2 * v[0], 1.0]]),
        jac_h=lambda v: np.array([[1.0, 0.0]]),
        hess_lagrangian=lambda v, lam, mu: scale * (np.eye(2) + lam[0] * np.diag([2.0, 0.0])),
        objective_terms=[quadratic_term(np.eye(2), target)],
        name="toy",
    )


def quadratic_nlp(c=1.0):
    """Linear-quadratic NLP ``min 0.5 v'Pv + q'v  s.t.  a'v = 1`` with Hessian callback ``c P``."""
    P = np.diag([2.0, 1.0, 3.0])
    qv = np.array([1.0, -1.0, 0.5])
    a = np.array([1.0, 1.0, 1.0])
    return Nlp(
        n_v=3, n_g=1, n_h=0,
        f=lambda v: 0.5 * float(v @ P @ v) + float(qv @ v),
        g=lambda v: np.array([a @ v - 1.0]),
        h=lambda v: np.zeros(0),
        grad_f=lambda v: P @ v + qv,
        jac_g=lambda v: a.reshape(1, -1),
        jac_h=lambda v: np.zeros((0, 3)),
        hess_lagrangian=lambda v, lam, mu: c * P,
        objective_terms=[quadratic_term(c * P)],
        name="lq",
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def _timed_suite(spec_factory):
    from aasqp.experiments import run_experiment

    start = time.perf_counter()
    result = run_experiment(spec_factory())
    result.elapsed = time.perf_counter() - start
    return result


@pytest.fixture(scope="session")
def scqp_suite():
    from aasqp.experiments import scqp_pendulum_spec

    return _timed_suite(scqp_pendulum_spec)


@pytest.fixture(scope="session")
def zero_order_suite():
    from aasqp.experiments import zero_order_spec

    return _timed_suite(zero_order_spec)


@pytest.fixture(scope="session")
def threshold_suite():
    from aasqp.experiments import threshold_spec

    return _timed_suite(threshold_spec)

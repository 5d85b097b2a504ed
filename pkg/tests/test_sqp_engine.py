import numpy as np
import pytest

from aasqp.exceptions import ConfigurationError, MaxIterReached
from aasqp.nlp_model import PrimalDualIterate
from aasqp.problems import stabilization_ocp
from aasqp.sqp_engine import (
    ConvergenceReport,
    SqpConfig,
    SqpMap,
    kkt_residual,
    perturbation_vector,
    solve,
    sqp_step,
)

from conftest import quadratic_nlp, toy_nlp

EXACT = SqpConfig(hessian="exact+project")


def lq_solution():
    # KKT system of min 0.5 v'Pv + q'v s.t. a'v = 1
    P = np.diag([2.0, 1.0, 3.0])
    q = np.array([1.0, -1.0, 0.5])
    a = np.ones((3, 1))
    K = np.block([[P, a], [a.T, np.zeros((1, 1))]])
    sol = np.linalg.solve(K, np.concatenate([-q, [1.0]]))
    return sol[:3], sol[3:]


class TestConfig:
    def test_roundtrip(self):
        cfg = SqpConfig(hessian="exact+lm", max_iter=7, kkt_tol=1e-6).with_anderson(enabled=True, depth=3)
        back = SqpConfig.from_dict(cfg.to_dict())
        assert back.to_dict() == cfg.to_dict()

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            SqpConfig(max_iter=0)
        with pytest.raises(ConfigurationError):
            SqpConfig(kkt_tol=0.0)


class TestExactSqp:
    def test_lq_one_step(self):
        nlp = quadratic_nlp()
        v_ref, lam_ref = lq_solution()
        z = sqp_step(nlp, PrimalDualIterate.zeros(nlp, [5.0, -3.0, 1.0]), EXACT)
        np.testing.assert_allclose(z.v, v_ref, atol=1e-12)
        np.testing.assert_allclose(z.lam, lam_ref, atol=1e-12)

    def test_toy_converges(self):
        nlp = toy_nlp()
        z, report = solve(nlp, PrimalDualIterate.zeros(nlp, [0.5, 0.5]), EXACT)
        assert report.converged and report.status == "converged"
        assert kkt_residual(nlp, z).norm_inf <= 1e-8
        assert report.rows[-1]["kkt_inf"] <= 1e-8
        assert z.mu[0] == 0.0

    def test_superlinear_tail(self):
        nlp = toy_nlp()
        _, report = solve(nlp, PrimalDualIterate.zeros(nlp, [0.8, 0.3]), EXACT)
        kkt = report.column("kkt_inf")
        kkt = kkt[kkt > 1e-13]
        assert kkt[-1] / kkt[-2] < 0.1

    def test_scaled_hessian_linear_rate(self):
        nlp = quadratic_nlp(c=2.0)
        _, report = solve(nlp, PrimalDualIterate.zeros(nlp), EXACT)
        kkt = report.column("kkt_inf")
        ratios = kkt[3:9] / kkt[2:8]  # the first step also restores feasibility
        np.testing.assert_allclose(ratios, 0.5, rtol=1e-6)

    def test_max_iter(self):
        nlp = quadratic_nlp(c=2.0)
        with pytest.raises(MaxIterReached) as exc:
            solve(nlp, PrimalDualIterate.zeros(nlp), SqpConfig(hessian="exact+project", max_iter=3))
        assert exc.value.report.status == "max_iter"
        assert exc.value.report.iterations == 3
        _, report = solve(nlp, PrimalDualIterate.zeros(nlp), SqpConfig(hessian="exact+project", max_iter=3),
                          raise_on_max_iter=False)
        assert not report.converged

    def test_callback(self):
        nlp = toy_nlp()
        seen = []
        _, report = solve(nlp, PrimalDualIterate.zeros(nlp, [0.5, 0.5]), EXACT, callback=seen.append)
        assert [c["iter"] for c in seen] == list(range(report.iterations))
        assert set(seen[0]) == {"iter", "z", "phi", "state", "qp", "kkt"}

    def test_aa_on_linear_problem(self):
        nlp = quadratic_nlp(c=2.0)
        _, plain = solve(nlp, PrimalDualIterate.zeros(nlp), EXACT)
        _, acc = solve(nlp, PrimalDualIterate.zeros(nlp), EXACT.with_anderson(enabled=True, depth=1))
        assert acc.iterations < plain.iterations
        assert all(t <= 1 + 1e-12 for t in acc.theta_history)


class TestPerturbation:
    def test_exact_mode_vanishes(self, rng):
        nlp = toy_nlp()
        z = PrimalDualIterate(rng.standard_normal(2), rng.standard_normal(1), np.zeros(1))
        assert np.max(np.abs(perturbation_vector(nlp, z, EXACT))) == 0.0

    def test_zero_order_fixed_point(self):
        nlp = toy_nlp()
        cfg = SqpConfig(hessian="exact+project", zero_order=True, frozen_point=np.array([0.2, 0.0]), kkt_tol=1e-13)
        z, report = solve(nlp, PrimalDualIterate.zeros(nlp, [0.5, 0.5]), cfg)
        assert report.measure == "step_inf"
        p = perturbation_vector(nlp, z, cfg, frozen_point=cfg.frozen_point)
        assert np.max(np.abs(p)) > 1e-3
        stat = nlp.lagrangian_gradient(z.v, z.lam, z.mu) - p
        assert np.max(np.abs(stat)) < 1e-10
        assert abs(nlp.g(z.v)[0]) < 1e-10

    def test_frozen_jacobian_used(self):
        nlp = toy_nlp()
        frozen = np.array([0.3, 0.0])
        pi = SqpMap(nlp, SqpConfig(zero_order=True), frozen_point=frozen)
        np.testing.assert_array_equal(pi.constraint_jacobian(np.array([5.0, 5.0])), nlp.jac_g(frozen))


class TestReport:
    def test_csv_roundtrip(self, tmp_path):
        nlp = stabilization_ocp()
        z0 = PrimalDualIterate.zeros(nlp, np.zeros(nlp.n_v))
        _, report = solve(nlp, z0, SqpConfig(hessian="ggn").with_anderson(enabled=True, depth=2))
        path = tmp_path / "r.csv"
        report.to_csv(path)
        back = ConvergenceReport.from_csv(path)
        assert back.to_csv() == path.read_text()
        assert path.read_text().splitlines()[0] == "iter,kkt_inf,step_inf,theta_k,aa_active,obj"
        np.testing.assert_array_equal(back.column("kkt_inf"), report.column("kkt_inf"))

    def test_iterations_to(self):
        rep = ConvergenceReport()
        for k, val in enumerate([1.0, 0.1, 1e-3, 1e-9]):
            rep.log(k, val, 0.0, None, False, 0.0)
        assert rep.iterations_to(1e-2) == 2
        assert rep.iterations_to(1e-12) is None

import json
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from aasqp.experiments import (
    EXPERIMENTS,
    TOLERANCES,
    ExperimentSpec,
    comparison_table,
    convergence_svg,
    format_table,
    linear_test_map,
    run_aa_unit,
    run_experiment,
    run_named,
    threshold_spec,
)
from aasqp.sqp_engine import SqpConfig

from conftest import toy_nlp


def toy_spec():
    from aasqp.nlp_model import PrimalDualIterate

    def build():
        nlp = toy_nlp()
        return nlp, PrimalDualIterate.zeros(nlp, [0.5, 0.5])

    return ExperimentSpec(
        "toy",
        build,
        [
            ("exact", SqpConfig(hessian="exact+project")),
            ("short", SqpConfig(hessian="exact+project", max_iter=1)),
        ],
    )


class TestSuites:
    def test_scqp_pendulum(self, scqp_suite):
        assert scqp_suite.report("exact_project").converged
        assert scqp_suite.report("ggn").status == "max_iter"
        for name in ("scqp", "aa1_scqp", "aa5_scqp", "aa10_scqp"):
            assert scqp_suite.report(name).converged
        assert scqp_suite.report("aa1_scqp").iterations < scqp_suite.report("scqp").iterations
        its = [scqp_suite.table[f"aa{m}_scqp"]["1e-08"] for m in (1, 5, 10)]
        assert max(its) - min(its) <= 3

    def test_zero_order(self, zero_order_suite):
        plain, aa = zero_order_suite.report("zero_order"), zero_order_suite.report("zero_order_aa1")
        assert plain.converged and aa.converged and plain.measure == "step_inf"
        assert aa.iterations < plain.iterations
        assert zero_order_suite.extra["perturbed_kkt_inf"] <= 1e-6
        assert zero_order_suite.extra["distance_to_exact_inf"] > 10 * 1e-8

    def test_threshold(self, threshold_suite):
        plain = threshold_suite.table["plain"]
        for delta in ("100", "1", "0.01"):
            row = threshold_suite.table[f"aa1_delta_{delta}"]
            assert row["0.1"] <= plain["0.1"] + 1
            assert row["1e-08"] <= plain["1e-08"]

    def test_threshold_grid_configs(self):
        names = [n for n, _ in threshold_spec().configs]
        assert names == ["plain", "aa1", "aa1_delta_100", "aa1_delta_1", "aa1_delta_0.01"]

    def test_registry(self):
        assert set(EXPERIMENTS) == {"scqp_pendulum", "zero_order", "threshold", "aa_unit"}
        with pytest.raises(KeyError):
            run_named("nope")


class TestRunner:
    def test_failures_recorded(self, tmp_path):
        result = run_experiment(toy_spec(), tmp_path)
        assert result.runs["exact"].report.converged
        assert result.runs["short"].report.status == "max_iter"
        summary = json.loads((tmp_path / "toy" / "summary.json").read_text())
        assert summary["configs"]["short"]["status"] == "max_iter"
        assert summary["tolerances"] == list(TOLERANCES)
        assert {p.name for p in (tmp_path / "toy").iterdir()} >= {
            "exact.csv", "short.csv", "summary.json", "convergence.svg", "table.txt"
        }

    def test_deterministic_bytes(self, tmp_path):
        run_experiment(toy_spec(), tmp_path / "a")
        run_experiment(toy_spec(), tmp_path / "b")
        for f in sorted((tmp_path / "a" / "toy").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / "toy" / f.name).read_bytes()

    def test_table(self, tmp_path):
        result = run_experiment(toy_spec())
        table = comparison_table(result.runs)
        assert list(table["exact"]) == ["0.1", "0.0001", "1e-06", "1e-08"]
        text = format_table(table)
        assert text.splitlines()[0].split() == ["config", "0.1", "0.0001", "1e-06", "1e-08"]
        assert "-" in text.splitlines()[2]

    def test_jobs_do_not_change_results(self, tmp_path):
        a = run_named("zero_order", tmp_path / "serial")
        b = run_named("zero_order", tmp_path / "parallel", jobs=2)
        for name in ("zero_order.csv", "zero_order_aa1.csv", "trajectories.csv"):
            assert (tmp_path / "serial" / "zero_order" / name).read_bytes() == (
                tmp_path / "parallel" / "zero_order" / name).read_bytes()
        assert a.table == b.table


class TestAaUnit:
    def test_ratio(self):
        result = run_aa_unit()
        assert result.extra["diag_aa1_over_plain_at_10"] <= 0.589
        assert result.report("random_aa5").rows[-1]["step_inf"] < result.report("random_plain").rows[-1]["step_inf"]

    def test_seed(self):
        a1, b1, _ = linear_test_map(3)
        a2, b2, _ = linear_test_map(3)
        a3, _, _ = linear_test_map(4)
        assert a1.tobytes() == a2.tobytes() and b1.tobytes() == b2.tobytes()
        assert a1.tobytes() != a3.tobytes()
        assert max(abs(np.linalg.eigvals(a1))) == pytest.approx(0.95)

    def test_outputs(self, tmp_path):
        run_aa_unit(tmp_path, seed=1)
        summary = json.loads((tmp_path / "aa_unit" / "summary.json").read_text())
        assert summary["seed"] == 1


class TestSvg:
    def test_valid_xml(self):
        svg = convergence_svg({"a": [1.0, 0.1, 1e-3], "b<&>": [1.0, math.nan, 0.0, 1e-9]}, title="t & t")
        root = ET.fromstring(svg)
        assert root.tag.endswith("svg")
        lines = [e for e in root.iter() if e.tag.endswith("polyline")]
        assert len(lines) == 2
        assert len(lines[1].get("points").split()) == 2

    def test_empty(self):
        ET.fromstring(convergence_svg({}))

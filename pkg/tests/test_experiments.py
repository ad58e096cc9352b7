import json

import numpy as np
import pytest

from dtpinn.experiments import (ExperimentConfig, aggregate_runs, biharmonic_study,
                                coefficient_of_variation, convergence_suite, depth_study,
                                fd_biharmonic, run_plan, run_study)
from dtpinn.network import MlpParams, architecture, init_weights, n_params


def cfg(study, **kw):
    return ExperimentConfig.from_mapping(study, {k: str(v) for k, v in kw.items()})


def test_config_file_parsing(tmp_path):
    path = tmp_path / "study.cfg"
    path.write_text("# sweep\nn_values = 100, 200\np_values = 3 4\nseeds = 7\n"
                    "lbfgs.lr = 0.5\nlbfgs.max_epochs = 9  # short\nprecision = fp32\n")
    c = ExperimentConfig.from_file("linear-poisson", path)
    assert c.n_values == [100, 200] and c.p_values == [3, 4] and c.seeds == [7]
    assert c.lbfgs.lr == 0.5 and c.lbfgs.max_epochs == 9
    assert c.precision == "fp32" and c.vanilla_precision == "fp32"
    path.write_text("[study]\ndepths = 2\n")
    assert ExperimentConfig.from_file("depth", path).depths == [2]


def test_config_validation():
    with pytest.raises(KeyError):
        cfg("heat", learning_rate=1)
    with pytest.raises(ValueError):
        cfg("heat", precision="fp16")
    with pytest.raises(ValueError):
        ExperimentConfig.defaults("unknown")
    with pytest.raises(ValueError):
        cfg("depth", depths="0")
    assert ExperimentConfig.defaults("star").shape == "star"
    assert ExperimentConfig.defaults("depth").seeds == list(range(15))


def test_run_plan_vanilla_ignores_p():
    c = cfg("linear-poisson", n_values="100", p_values="2 3", seeds="0 1")
    plan = run_plan(c)
    assert len([t for t in plan if t[0] == "dt"]) == 4
    assert len([t for t in plan if t[0] == "vanilla"]) == 2


def test_depth_study_small(tmp_path):
    c = cfg("depth", n_values=300, depths="1 2 3", seeds="0 1", p_values="3 5", repeats=3)
    report = depth_study(c, tmp_path)
    s = report["summary"]
    assert s["jets-fp64"]["mean_error"] == [0.0, 0.0, 0.0]
    for p in (3, 5):
        assert len(s[f"rbf-fd-p{p}"]["mean_seconds"]) == 3
    assert np.all(np.array(s["rbf-fd-p5"]["mean_error"]) < np.array(s["rbf-fd-p3"]["mean_error"]))
    assert (tmp_path / "depth.csv").exists()
    assert json.loads((tmp_path / "report.json").read_text())["N"] == report["N"]


def test_cov():
    assert coefficient_of_variation([1.0, 1.0, 1.0]) == 0.0
    assert coefficient_of_variation([1.0, 3.0]) == pytest.approx(0.5)


def test_fd_biharmonic_constant_network_is_zero(rng):
    sizes = architecture(2, 2, 5)
    theta = np.zeros(n_params(sizes))
    theta[-1] = 3.0
    np.testing.assert_array_equal(fd_biharmonic(MlpParams(sizes, theta), rng.random((4, 2))), 0.0)


def test_biharmonic_study_small(tmp_path):
    c = cfg("biharmonic", n_values=400, depths="2", seeds="0", p_values="2 4", repeats=2)
    s = biharmonic_study(c, tmp_path)["summary"]
    assert s["rbf-fd-p4"]["mean_error"][0] < s["rbf-fd-p2"]["mean_error"][0]
    assert s["rbf-fd-p4"]["mean_seconds"][0] < s["jets-fd"]["mean_seconds"][0]


def test_convergence_suite_and_pure_aggregation(tmp_path):
    c = cfg("linear-poisson", n_values=80, p_values="2", seeds="0 1", depth=1, width=6,
            **{"lbfgs.max_epochs": 5})
    report = convergence_suite(c, tmp_path)
    assert report["failures"] == []
    modes = {(row["mode"], row["p"]) for row in report["table"]}
    assert modes == {("dt", 2), ("vanilla", None)}
    for row in report["table"]:
        assert row["seeds"] == [0, 1]
        assert row["best_error"]["n"] == 2
    assert len(report["comparison"]) == 1
    again = aggregate_runs(tmp_path)
    assert again["table"] == json.loads(json.dumps(report["table"]))
    assert (tmp_path / "runs" / "dt_N80_p2_s0" / "record.csv").exists()


def test_failed_runs_are_recorded(tmp_path):
    c = cfg("linear-poisson", n_values=60, p_values="8", seeds="0", modes="dt")
    report = convergence_suite(c, tmp_path)
    assert len(report["failures"]) == 1
    assert report["table"] == []


def test_empty_sweep(tmp_path):
    c = ExperimentConfig("heat", n_values=[], p_values=[4], seeds=[0])
    report = convergence_suite(c, tmp_path)
    assert report["table"] == [] and report["failures"] == []
    assert (tmp_path / "report.json").exists()


def test_run_study_heat_and_fp32(tmp_path):
    path = tmp_path / "h.cfg"
    path.write_text("n_values = 60\nn_t = 2\np_values = 2\nseeds = 0\ndepth = 1\nwidth = 4\n"
                    "lbfgs.max_epochs = 2\nmodes = dt vanilla\n")
    rep = run_study("heat", path, tmp_path / "heat")
    assert rep["failures"] == [] and len(rep["table"]) == 2
    rep = run_study("fp32-dt", path, tmp_path / "fp32")
    assert rep["failures"] == []
    summary = json.loads((tmp_path / "fp32" / "runs" / "dt_N60_p2_s0" / "summary.json").read_text())
    assert summary["config"]["precision"] == "float32"

import json
from dataclasses import replace

import numpy as np
import pytest

from agd.errors import CalibrationError, ConfigError
from agd.harness import (
    AttackSpec,
    DefenseSpec,
    EvalReport,
    ExperimentConfig,
    ReportError,
    ablation_sweep,
    ablation_table,
    aggregate,
    calibrate,
    calibrate_gamma,
    run_experiment,
    trial_labels,
)


@pytest.fixture
def small():
    return ExperimentConfig(
        attacks=(
            AttackSpec("agd", "agd", {"gamma": 1.1, "inner_iters": 10}),
            AttackSpec("pgd", "pgd", {"steps": 5, "linf_budget": 0.1}),
        ),
        defenses=(DefenseSpec("none", "none"), DefenseSpec("jpeg", "jpeg", {"quality": 50})),
        trials=6,
        seed=3,
    )


def test_config_round_trip(small):
    d = json.loads(json.dumps(small.to_dict()))
    assert ExperimentConfig.from_dict(d) == small


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(trials=-1)
    with pytest.raises(ConfigError):
        ExperimentConfig(attacks=(AttackSpec("x", "fgsm"),))
    with pytest.raises(ConfigError):
        ExperimentConfig(attacks=(AttackSpec("a", "agd", {"gamma": -1}),))
    with pytest.raises(ConfigError):
        ExperimentConfig(attacks=(AttackSpec("a", "agd", {"bogus": 1}),))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"world": {"K": 3}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"nonsense": 1})


def test_load_errors_name_the_file(tmp_path):
    with pytest.raises(OSError, match="missing.json"):
        ExperimentConfig.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError, match="bad.json"):
        ExperimentConfig.load(bad)


def test_trial_labels_round_robin():
    seen = {trial_labels(t, 4) for t in range(12)}
    assert len(seen) == 12
    assert all(a != b for a, b in seen)


def test_zero_trials_gives_empty_report(small, tmp_path):
    rep = run_experiment(replace(small, trials=0, output_dir=str(tmp_path)))
    assert rep.rows == [] and rep.aggregates == []
    loaded = EvalReport.load(tmp_path)
    assert loaded.content_hash == rep.content_hash
    assert (tmp_path / "trials.csv").exists()


def test_report_rows_and_aggregates(small, tmp_path):
    rep = run_experiment(replace(small, output_dir=str(tmp_path)))
    assert len(rep.rows) == 6 * 2 * 2
    agg = rep.lookup("agd", "none")
    assert agg["n"] == 6
    assert agg["asr"] == np.mean([r["success"] for r in rep.rows if r["attack"] == "agd" and r["defense"] == "none"])
    assert rep.lookup("pgd")["linf_max"] <= 0.1 + 1e-12
    loaded = EvalReport.load(tmp_path / "report.json")
    assert loaded.rows == rep.rows and loaded.content_hash == rep.content_hash
    assert "agd" in loaded.format_table()


def test_tampered_report_rejected(small, tmp_path):
    run_experiment(replace(small, output_dir=str(tmp_path)))
    path = tmp_path / "report.json"
    body = json.loads(path.read_text())
    body["rows"][0]["success"] = not body["rows"][0]["success"]
    path.write_text(json.dumps(body))
    with pytest.raises(ReportError):
        EvalReport.load(path)
    body["aggregates"] = aggregate(body["rows"])
    path.write_text(json.dumps(body))
    with pytest.raises(ReportError, match="hash"):
        EvalReport.load(path)


def test_same_config_same_hash(small):
    assert run_experiment(small).content_hash == run_experiment(small).content_hash
    assert run_experiment(replace(small, seed=4)).content_hash != run_experiment(small).content_hash


def test_serial_equals_parallel(small):
    assert run_experiment(small, workers=1).content_hash == run_experiment(small, workers=2).content_hash


def test_trials_independent_of_count(small):
    # a trial's rows do not depend on how many other trials run
    few = run_experiment(replace(small, trials=2)).rows
    many = run_experiment(small).rows
    assert many[: len(few)] == few


def test_transfer_victim_rows(small):
    rep = run_experiment(replace(small, trials=2, transfer_seeds=(9,)))
    assert {r["victim"] for r in rep.rows} == {"surrogate", "transfer9"}


def test_calibrate_zero_target_takes_first(small):
    assert calibrate_gamma(replace(small, trials=2), 0.0, [0.2, 0.4]) == 0.2


def test_calibrate_errors(small):
    cfg = replace(small, trials=4)
    with pytest.raises(ConfigError):
        calibrate(cfg, "agd", "gamma", [0.5, 0.3], 0.5)
    with pytest.raises(ConfigError):
        calibrate(cfg, "agd", "gamma", [], 0.5)
    with pytest.raises(CalibrationError):
        calibrate(cfg, "agd", "gamma", [0.0], 0.5)


def test_calibrate_full_curve(small):
    res = calibrate(replace(small, trials=4), "pgd", "linf_budget", [0.01, 0.2], 0.5, full_curve=True)
    assert [v for v, _ in res.curve] == [0.01, 0.2]
    assert res.value == 0.2


def test_single_value_sweep_matches_run(small):
    cfg = replace(small, trials=3)
    sweep = ablation_sweep(cfg, "gamma", [1.1])
    plain = run_experiment(cfg)
    assert [{k: v for k, v in r.items() if k != "sweep_value"} for r in sweep.rows] == plain.rows


def test_sweep_table_and_csv(small, tmp_path):
    cfg = replace(small, trials=2, output_dir=str(tmp_path))
    rep = ablation_sweep(cfg, "N", [1, 5])
    table = ablation_table(rep, "agd")
    assert [r["value"] for r in table] == [1, 5]
    assert (tmp_path / "ablation_N.csv").read_text().splitlines()[0] == "value,attack,asr,ssim"
    assert EvalReport.load(tmp_path).content_hash == rep.content_hash
    with pytest.raises(ConfigError):
        ablation_sweep(cfg, "beta", [1])

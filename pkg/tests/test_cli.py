import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from eabcf.cli import main
from eabcf.config import RunConfig


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-data")
    runner = CliRunner()
    res = runner.invoke(main, ["generate", "--scenario", "mixed_fleet",
                               "--out", str(root), "--seed", "5",
                               "--noise", "0.05"])
    assert res.exit_code == 0, res.output
    return root


def _cfg_args(dataset, out):
    return ["--data", str(dataset / "trajectories.csv"),
            "--manifest", str(dataset / "manifest.csv"),
            "--out", str(out)]


def test_generate_writes_files_and_is_deterministic(tmp_path):
    runner = CliRunner()
    a = tmp_path / "a"
    b = tmp_path / "b"
    for d in (a, b):
        res = runner.invoke(main, ["generate", "--scenario", "concave_acc",
                                   "--out", str(d), "--seed", "2"])
        assert res.exit_code == 0, res.output
    for name in ("trajectories.csv", "manifest.csv", "truth.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_generate_rejects_unknown_scenario(tmp_path):
    res = CliRunner().invoke(main, ["generate", "--scenario", "bogus",
                                    "--out", str(tmp_path)])
    assert res.exit_code != 0
    assert "unknown scenario" in res.output


def test_calibrate_newell_command(dataset, tmp_path):
    runner = CliRunner()
    res = runner.invoke(main, ["calibrate-newell", *_cfg_args(dataset, tmp_path)])
    assert res.exit_code == 0, res.output
    payload = json.loads((tmp_path / "newell.json").read_text())
    assert len(payload) == 2          # one ACC group, one HDV group
    for entry in payload.values():
        assert entry["tau"] > 0 and entry["delta"] > 0 and entry["w"] < 0
    assert "tau=" in res.output


def test_classify_command(dataset, tmp_path):
    import pandas as pd
    res = CliRunner().invoke(main, ["classify", *_cfg_args(dataset, tmp_path)])
    assert res.exit_code == 0, res.output
    df = pd.read_csv(tmp_path / "patterns.csv")
    assert df.shape[0] == 6
    assert set(df.columns) == {"group", "pair_id", "category", "response", "label"}


def test_hysteresis_command(dataset, tmp_path):
    import pandas as pd
    res = CliRunner().invoke(main, ["hysteresis", *_cfg_args(dataset, tmp_path)])
    assert res.exit_code == 0, res.output
    df = pd.read_csv(tmp_path / "hysteresis.csv")
    assert df.shape[0] == 6
    assert (df["magnitude"] >= 0).all()


def test_validate_requires_posterior(dataset, tmp_path):
    res = CliRunner().invoke(main, ["validate", *_cfg_args(dataset, tmp_path)])
    assert res.exit_code != 0
    assert "calibrate-eab" in res.output


def test_config_validation_happens_before_compute(dataset, tmp_path):
    cfg = RunConfig(trajectories="missing.csv", manifest="missing.csv",
                    gof_weights=(0.5, 0.4, 0.2))
    cfg_path = tmp_path / "bad.json"
    cfg_path.write_text(cfg.to_json())
    res = CliRunner().invoke(main, ["pipeline", "--config", str(cfg_path)])
    assert res.exit_code != 0
    assert isinstance(res.exception, ValueError)
    assert "sum to 1" in str(res.exception)


def test_pipeline_and_report_commands(dataset, tmp_path):
    runner = CliRunner()
    cfg = RunConfig(
        trajectories=str(dataset / "trajectories.csv"),
        manifest=str(dataset / "manifest.csv"),
        out_dir=str(tmp_path / "run"),
        seed=3,
        k_particles=60,
        max_iter=12,
        platoon_vehicles=8,
        platoon_runs=2,
        penetrations=(0.0, 1.0),
        posterior_samples=20,
        make_plots=False,
    )
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(cfg.to_json())
    res = runner.invoke(main, ["pipeline", "--config", str(cfg_path)])
    assert res.exit_code == 0, res.output
    out = Path(cfg.out_dir)
    for name in ("report.json", "patterns.csv", "hysteresis.csv",
                 "platoon_curves.csv", "validation.csv", "jsd.json",
                 "loop_reproduction.csv", "config.json"):
        assert (out / name).exists(), name
    rep = json.loads((out / "report.json").read_text())
    assert set(rep["groups"])          # at least one calibrated group
    res2 = runner.invoke(main, ["report", "--out", str(out)])
    assert res2.exit_code == 0, res2.output
    assert "penetration sweep:" in res2.output
    assert "tau=" in res2.output


def test_report_missing_bundle(tmp_path):
    res = CliRunner().invoke(main, ["report", "--out", str(tmp_path)])
    assert res.exit_code != 0

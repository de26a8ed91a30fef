import json
import shutil
import tomllib
from pathlib import Path

import pandas as pd
import pytest
from conftest import make_table

import main as cli
from agents import (
    evaluate_agent,
    extract_agent,
    select_agent,
    settings,
    simulate_agent,
    train_agent,
)
from agents.core.errors import (
    ConfigError,
    DegenerateModelError,
    DomainError,
    InputError,
    SelectionError,
    StateError,
)
from agents.core.rvr import RVRModel

SMALL_RUN = """
[simulate]
n_modules = 3
c_rates = [0.5]
seed = 5

[simulate.solver]
timestep = 10.0

[select]
k = 5

[evaluate]
tasks = ["sd"]
n_features = 2
sweep = [1, 2]
inner_folds = 3
kernel_width_grid = [1.0, 2.0]
"""

FULL_FLEET = """
[simulate]
n_modules = 78
c_rates = [0.5, 0.25]
seed = 0

[simulate.solver]
timestep = 10.0

[evaluate]
tasks = ["sd", "m_soh"]
n_features = 6
sweep = [1, 2, 3, 4, 5, 6]
inner_folds = 10
"""


@pytest.fixture
def run_file(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(SMALL_RUN, encoding="utf-8")
    return path


@pytest.fixture
def table_run(tmp_path):
    """Run directory holding a synthetic feature/label pair instead of a simulated fleet."""
    out = tmp_path / "out"
    out.mkdir()
    features, labels = make_table(24, seed=6)
    features.to_csv(out / "features.csv", index=False)
    labels.to_csv(out / "labels.csv", index=False)
    return out


# ── Stages ─────────────────────────────────────────────────────────────
def test_simulate_and_extract(tmp_path, run_file):
    out = tmp_path / "out"
    simulate_agent.main(["--config", str(run_file), "--out", str(out)])
    index = pd.read_csv(out / "profiles.csv")
    assert list(index.columns) == ["module_id", "c_rate", "temperature", "path"]
    assert len(index) == 3 and (out / index.loc[0, "path"]).exists()
    assert len(pd.read_csv(out / "labels.csv")) == 3

    extract_agent.main(["--config", str(run_file), "--out", str(out)])
    features = pd.read_csv(out / "features.csv")
    assert len(features) == 3
    assert list(features.columns[:2]) == ["module_id", "c_rate"]
    assert len(list((out / "curves").glob("*_ic.csv"))) == 3


def test_simulation_is_reproducible(tmp_path, run_file):
    for name in ("a", "b"):
        simulate_agent.main(["--config", str(run_file), "--out", str(tmp_path / name),
                             "--n-modules", "2"])
    for rel in ("labels.csv", "profiles/M001_c0.5.csv"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_extract_is_byte_deterministic(tmp_path, run_file):
    simulate_agent.main(["--config", str(run_file), "--out", str(tmp_path / "a"),
                         "--n-modules", "2"])
    shutil.copytree(tmp_path / "a", tmp_path / "b")
    for name in ("a", "b"):
        extract_agent.main(["--config", str(run_file), "--out", str(tmp_path / name)])
    for rel in ("features.csv", "curves/M001_c0.5_ic.csv", "curves/M002_c0.5_dv.csv"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_profile_names():
    assert simulate_agent.profile_name("M007", 0.25) == "M007_c0.25.csv"


def test_select_train_evaluate_chain(table_run, run_file, capsys):
    common = ["--config", str(run_file), "--out", str(table_run), "--task", "sd"]
    select_agent.main([*common, "--dump-scores"])
    selection = json.loads((table_run / "selection_sd.json").read_text())
    assert selection["task"] == "sd" and selection["k"] == 5
    assert set(selection["ranked_selected"]) == {"f1", "f2", "f3", "f4"}
    assert len(selection["ranking"]) == 4
    assert (table_run / "scores" / "sd" / "redundancy.csv").exists()

    train_agent.main(common)
    payload = json.loads((table_run / "model_sd.json").read_text())
    assert payload["features"] == selection["ranked_selected"][:2]
    assert RVRModel.from_dict(payload).n_inputs == 2

    evaluate_agent.main(common)
    folder = table_run / "evaluate" / "sd"
    report = json.loads((folder / "report.json").read_text())
    assert report["n_points"] == 24 and report["n_features"] == 2
    assert report["labels_read"] == ["sd"]
    assert report["outer_scheme"] == "leave-one-out"
    assert len(pd.read_csv(folder / "pred_vs_truth.csv")) == 24
    assert list(pd.read_csv(folder / "mae_vs_nfeatures.csv")["n_features"]) == [1, 2]
    assert "[OK]" in capsys.readouterr().out


def test_select_train_evaluate_are_byte_deterministic(table_run, run_file):
    twin = table_run.parent / "twin"
    shutil.copytree(table_run, twin)
    for out in (table_run, twin):
        common = ["--config", str(run_file), "--out", str(out), "--task", "sd"]
        select_agent.main(common)
        train_agent.main(common)
        evaluate_agent.main(common)
    for rel in ("selection_sd.json", "model_sd.json", "evaluate/sd/report.json",
                "evaluate/sd/pred_vs_truth.csv", "evaluate/sd/mae_vs_nfeatures.csv"):
        assert (table_run / rel).read_bytes() == (twin / rel).read_bytes()


def test_train_rejects_too_many_features(table_run, run_file):
    common = ["--config", str(run_file), "--out", str(table_run), "--task", "sd"]
    select_agent.main(common)
    with pytest.raises(ConfigError):
        train_agent.main([*common, "--n-features", "9"])


@pytest.mark.slow
def test_full_fleet_through_every_stage(tmp_path):
    config = tmp_path / "fleet.toml"
    config.write_text(FULL_FLEET, encoding="utf-8")
    out = tmp_path / "out"
    base = ["--config", str(config), "--out", str(out), "--workers", "4"]
    simulate_agent.main(base)
    extract_agent.main(base)
    assert len(pd.read_csv(out / "features.csv")) == 156

    for task, min_r in (("sd", 0.8), ("m_soh", 0.9)):
        select_agent.main([*base, "--task", task])
        train_agent.main([*base, "--task", task])
        evaluate_agent.main([*base, "--task", task])
        folder = out / "evaluate" / task
        report = json.loads((folder / "report.json").read_text())
        assert report["n_points"] == 156 and report["n_features"] == 6
        assert report["pearson_r"] >= min_r
        assert report["coverage"] >= 0.95
        sweep = pd.read_csv(folder / "mae_vs_nfeatures.csv").set_index("n_features")
        assert list(sweep.index) == [1, 2, 3, 4, 5, 6]
        assert sweep.loc[6, "mae"] <= sweep.loc[1, "mae"]


# ── Exit codes ─────────────────────────────────────────────────────────
@pytest.mark.parametrize("exc, code", [
    (ConfigError("x"), 2), (InputError("x"), 2), (DomainError("x"), 2),
    (SelectionError("x"), 3), (DegenerateModelError("x"), 3), (StateError("x"), 1),
])
def test_exit_codes(exc, code):
    assert settings.exit_code(exc) == code


def test_missing_input_file_exits_2(tmp_path, capsys):
    code = settings.run(lambda: select_agent.main(["--out", str(tmp_path), "--task", "sd"]))
    assert code == 2
    assert "[ERROR]" in capsys.readouterr().err


def test_bad_config_exits_2(tmp_path, table_run):
    bogus = tmp_path / "bogus.toml"
    bogus.write_text("[plots]\nwidth = 3\n", encoding="utf-8")
    argv = ["--config", str(bogus), "--out", str(table_run), "--task", "sd"]
    assert settings.run(lambda: select_agent.main(argv)) == 2

    bogus.write_text("[select]\nneighbours = 3\n", encoding="utf-8")
    assert settings.run(lambda: select_agent.main(argv)) == 2


def test_unusable_features_exit_3(tmp_path, run_file):
    features, labels = make_table(24)
    features = features[["module_id", "c_rate", "f1"]].assign(flat=1.0)
    features.to_csv(tmp_path / "features.csv", index=False)
    labels.to_csv(tmp_path / "labels.csv", index=False)
    argv = ["--config", str(run_file), "--out", str(tmp_path), "--task", "sd"]
    assert settings.run(lambda: select_agent.main(argv)) == 3


# ── Settings ───────────────────────────────────────────────────────────
def test_pick_precedence(monkeypatch):
    monkeypatch.setenv("MODHEALTH_SEED", "7")
    assert settings.pick(None, {}, "seed", "MODHEALTH_SEED", 0) == 7
    assert settings.pick(None, {"seed": 3}, "seed", "MODHEALTH_SEED", 0) == 3
    assert settings.pick(1, {"seed": 3}, "seed", "MODHEALTH_SEED", 0) == 1
    monkeypatch.setenv("MODHEALTH_SEED", "seven")
    with pytest.raises(ConfigError):
        settings.pick(None, {}, "seed", "MODHEALTH_SEED", 0)


def test_run_config_from_file(run_file):
    config = settings.load_config(run_file)
    run = settings.run_config(config, "sd", seed=4)
    assert run.sweep == (1, 2) and run.inner_folds == 3
    assert run.seed == 4 and run.selection.seed == 4 and run.selection.k == 5
    assert settings.reported_count(config) == 2
    assert settings.tasks(config) == ["sd"]


def test_sweep_always_contains_reported_count():
    config = {name: {} for name in settings.SECTIONS}
    config["evaluate"] = {"n_features": 3, "sweep": [1, 2]}
    assert settings.run_config(config, "m_soh").sweep == (1, 2, 3)


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        settings.load_config(tmp_path / "absent.toml")
    config = {name: {} for name in settings.SECTIONS}
    config["evaluate"] = {"tasks": ["health"]}
    with pytest.raises(ConfigError):
        settings.tasks(config)
    config["evaluate"] = {"tasks": []}
    with pytest.raises(ConfigError):
        settings.tasks(config)


def test_fleet_setup_defaults():
    setup = settings.fleet_setup({name: {} for name in settings.SECTIONS}, seed=2)
    assert setup["n_modules"] == 78 and setup["c_rates"] == [0.5, 0.25]
    assert setup["seed"] == 2


# ── CLI ────────────────────────────────────────────────────────────────
def test_cli_rejects_unknown_stage():
    with pytest.raises(SystemExit):
        cli.main(["report"])


def test_cli_all_runs_every_stage_per_task(monkeypatch, run_file):
    calls = []
    monkeypatch.setattr(cli, "run_script", lambda path, extra: calls.append(
        (path.stem, tuple(extra))) or 0)
    assert cli.main(["all", "--config", str(run_file)]) == 0
    stages = [name for name, _ in calls]
    assert stages == ["simulate_agent", "extract_agent", "select_agent", "train_agent",
                      "evaluate_agent"]
    assert calls[-1][1][-2:] == ("--task", "sd")


def test_cli_all_stops_on_failure(monkeypatch, run_file):
    calls = []
    monkeypatch.setattr(cli, "run_script", lambda path, extra: calls.append(path.stem) or 2)
    assert cli.main(["all", "--config", str(run_file)]) == 2
    assert calls == ["simulate_agent"]


def test_console_script_points_at_the_cli(monkeypatch, run_file):
    project = tomllib.loads((Path(cli.__file__).parent / "pyproject.toml").read_text("utf-8"))
    assert project["project"]["scripts"] == {"modhealth": "main:main"}
    monkeypatch.setattr(cli, "run_script", lambda path, extra: 0)
    assert cli.main(["simulate", "--config", str(run_file)]) == 0

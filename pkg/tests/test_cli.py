"""Command-line entry points: exit codes, artifact writing, Monte-Carlo
merging and resume behavior."""

import os

import numpy as np
import pytest
import yaml

from swarmnav.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    build_parser,
    consistency_config,
    main,
    noiseless_config,
)

CONFIG_YAML = """\
agents:
  - trajectory: {kind: circle, speed: 2.0, size: 20.0, duration: 3.0}
    suite: {gnss_sigma: 0.02}
seed: 4
gate: {enabled: false}
collaboration: false
gnss_delay: 0.0
use_vision: false
"""


@pytest.fixture
def config_path(tmp_path):
    p = tmp_path / "config.yaml"
    p.write_text(CONFIG_YAML)
    return str(p)


def test_run_ok(config_path, tmp_path, capsys):
    out = str(tmp_path / "out")
    code = main(["run", "--config", config_path, "--out", out])
    assert code == EXIT_OK
    assert os.path.exists(os.path.join(out, "summary.yaml"))
    text = capsys.readouterr().out
    assert "ATE" in text


def test_run_seed_and_filter_overrides(config_path, tmp_path):
    out = str(tmp_path / "out")
    code = main(["run", "--config", config_path, "--out", out,
                 "--seed", "9", "--filter", "ekf"])
    assert code == EXIT_OK
    with open(os.path.join(out, "summary.yaml")) as fh:
        fh.readline()
        summary = yaml.safe_load(fh)
    assert summary["seed"] == 9
    assert summary["convention"] == "ekf"


def test_missing_config_exits_2(tmp_path, capsys):
    code = main(["run", "--config", str(tmp_path / "nope.yaml")])
    assert code == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err


def test_invalid_config_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("agents:\n  - trajectory: {kind: nonsense, duration: 3.0}\n")
    assert main(["run", "--config", str(p)]) == EXIT_CONFIG


def test_unknown_suite_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["suite", "--suite", "nonexistent"])
    assert exc.value.code == 2


def test_parser_requires_subcommand():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_default_out_env(config_path, tmp_path, monkeypatch):
    monkeypatch.setenv("SWARMNAV_OUT", str(tmp_path / "root"))
    assert main(["run", "--config", config_path]) == EXIT_OK
    assert os.path.exists(tmp_path / "root" / "run" / "summary.yaml")


def test_montecarlo_single_run_degenerate(config_path, tmp_path, capsys):
    out = str(tmp_path / "mc")
    code = main(["montecarlo", "--config", config_path, "--runs", "1",
                 "--out", out])
    assert code == EXIT_OK
    assert "degenerate" in capsys.readouterr().out
    with open(os.path.join(out, "montecarlo_summary.yaml")) as fh:
        fh.readline()
        merged = yaml.safe_load(fh)
    assert merged["runs"] == 1
    assert merged["degenerate_interval"] is True


def test_montecarlo_merges_and_resumes(config_path, tmp_path, capsys):
    out = str(tmp_path / "mc")
    assert main(["montecarlo", "--config", config_path, "--runs", "3",
                 "--out", out]) == EXIT_OK
    with open(os.path.join(out, "montecarlo_summary.yaml")) as fh:
        fh.readline()
        first = yaml.safe_load(fh)
    assert first["runs"] == 3
    assert {f"run{i:03d}" for i in range(3)} <= set(os.listdir(out))
    # Corrupting nothing and re-running must reuse the finished runs and
    # reproduce the merge exactly.
    stamp = os.path.getmtime(os.path.join(out, "run001", "summary.yaml"))
    assert main(["montecarlo", "--config", config_path, "--runs", "3",
                 "--out", out]) == EXIT_OK
    assert os.path.getmtime(os.path.join(out, "run001", "summary.yaml")) == stamp
    with open(os.path.join(out, "montecarlo_summary.yaml")) as fh:
        fh.readline()
        second = yaml.safe_load(fh)
    assert np.isclose(first["agents"][0]["position_anees"],
                      second["agents"][0]["position_anees"])
    assert np.isclose(first["agents"][0]["mean_ate"],
                      second["agents"][0]["mean_ate"])


def test_montecarlo_parallel_matches_serial(config_path, tmp_path):
    serial = str(tmp_path / "serial")
    parallel = str(tmp_path / "parallel")
    main(["montecarlo", "--config", config_path, "--runs", "2",
          "--out", serial])
    main(["montecarlo", "--config", config_path, "--runs", "2",
          "--out", parallel, "--jobs", "2"])
    for name in ("montecarlo_summary.yaml",):
        with open(os.path.join(serial, name)) as fa, \
             open(os.path.join(parallel, name)) as fb:
            assert fa.read() == fb.read()


def test_canned_configs_construct():
    assert consistency_config(seed=1).convention == "liekf"
    assert consistency_config(convention="ekf").convention == "ekf"
    cfg = noiseless_config()
    assert cfg.init.yaw == 0.0
    assert not cfg.use_gnss

import logging

import pytest
import yaml

from quadmission.cli import build_parser, fault_rate_mismatch, main
from quadmission.config import default_config, load_config
from quadmission.export import read_csv
from quadmission.mdp.bounds import load_scenario

TINY = """\
x_cells: 3
y_cells: 3
objects: [[1, 1]]
base: [0, 0]
depot: [2, 2]
search_start: [0, 0]
battery_capacity: 30
horizon: 40
"""


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(TINY)
    return p


def _body(path):
    return [ln for ln in path.read_text().splitlines() if not ln.startswith(("#", "//"))]


def test_parser_lists_subcommands():
    text = build_parser().format_help()
    for name in ("simulate", "montecarlo", "mdp-build", "mdp-check", "export-prism", "compare"):
        assert name in text


def test_simulate_writes_files(tmp_path, capsys):
    out = tmp_path / "sim"
    assert main(["simulate", "--run", "0", "--out", str(out)]) == 0
    for name in ("trajectory.csv", "height.csv", "battery.csv", "events.yaml",
                 "effective_config.yaml"):
        assert (out / name).exists()
    cols, data = read_csv(out / "trajectory.csv")
    assert "x" in cols and len(data) > 0
    assert "run 0:" in capsys.readouterr().out


def test_montecarlo_small_batch(tmp_path):
    out = tmp_path / "mc"
    assert main(["montecarlo", "--runs", "2", "--out", str(out), "--set", "P_s=0"]) == 0
    summary = yaml.safe_load((out / "summary.yaml").read_text())
    assert summary["runs"] == 2
    assert load_config(out / "effective_config.yaml").guidance.system_fault_prob == 0


def test_mdp_build_on_small_scenario(tiny, tmp_path, capsys):
    out = tmp_path / "mdp"
    assert main(["mdp-build", "--scenario", str(tiny), "--out", str(out)]) == 0
    info = yaml.safe_load((out / "mdp.yaml").read_text())
    assert info["states"] > 0 and info["deadlocks"] == 0
    body = _body(out / "mdp_transitions.csv")
    assert body[0] == "state,choice,action,successor,probability"
    assert len(body) - 1 == info["transitions"]
    assert "scenario" in (out / "mdp.yaml").read_text()
    assert "states" in capsys.readouterr().out


def test_mdp_check_with_query(tiny, tmp_path):
    out = tmp_path / "chk"
    q = 'Pmax=? [ F "fault" ]'
    assert main(["mdp-check", "--scenario", str(tiny), "--mdp-set", "pf=0",
                 "--property", q, "--out", str(out)]) == 0
    res = yaml.safe_load((out / "mdp_results.yaml").read_text())
    assert res[q] == 0.0


def test_mdp_check_objects_option(tiny, tmp_path):
    out = tmp_path / "obj"
    q = 'Pmax=? [ F "MissionSuccessful" ]'
    assert main(["mdp-check", "--scenario", str(tiny), "--objects", "2,0", "--mdp-set", "pf=0",
                 "--mdp-set", "system_fault_prob=0", "--property", q, "--out", str(out)]) == 0
    res = yaml.safe_load((out / "mdp_results.yaml").read_text())
    assert res[q] == pytest.approx(1.0, abs=1e-9)


def test_export_prism(tiny, tmp_path):
    out = tmp_path / "prism"
    assert main(["export-prism", "--scenario", str(tiny), "--out", str(out)]) == 0
    model = (out / "model.prism").read_text()
    assert model.startswith("//") and "mdp" in model and "endmodule" in model
    assert "Pmax=?" in (out / "properties.props").read_text()


def test_compare_reports_containment_failure(tiny, tmp_path, capsys):
    out = tmp_path / "cmp"
    code = main(["compare", "--scenario", str(tiny), "--runs", "2", "--no-detection",
                 "--out", str(out)])
    assert code == 2
    data = yaml.safe_load((out / "compare.yaml").read_text())
    assert data["passed"] is False
    assert "runs: 2" in (out / "compare.yaml").read_text()


def test_bad_key_exits_with_one(tmp_path, capsys):
    assert main(["simulate", "--set", "guidance.bogus=1", "--out", str(tmp_path)]) == 1
    assert "error:" in capsys.readouterr().err
    assert main(["mdp-build", "--objects", "1;2", "--out", str(tmp_path)]) == 1
    assert main(["mdp-check", "--scenario", str(tmp_path / "none.yaml"),
                 "--out", str(tmp_path)]) == 1


def test_bad_property_exits_with_one(tiny, tmp_path):
    assert main(["mdp-check", "--scenario", str(tiny), "--property", "Pmax=? [ F \"nope\" ]",
                 "--out", str(tmp_path)]) == 1


def test_fault_rate_mismatch_warning(caplog):
    cfg = default_config()
    assert fault_rate_mismatch(cfg, load_scenario(cfg)) == []
    warns = fault_rate_mismatch(cfg, load_scenario(cfg, overrides=["pf=0.01"]))
    assert len(warns) == 1 and "actuator" in warns[0]
    warns = fault_rate_mismatch(cfg, load_scenario(cfg, overrides=["system_fault_prob=0.2"]))
    assert len(warns) == 1 and "system" in warns[0]


def test_compare_logs_mismatch(tiny, tmp_path, caplog):
    with caplog.at_level(logging.WARNING, logger="quadmission"):
        main(["compare", "--scenario", str(tiny), "--mdp-set", "pf=0.01", "--runs", "1",
              "--no-detection", "--out", str(tmp_path)])
    assert any("mismatch" in r.getMessage() for r in caplog.records)

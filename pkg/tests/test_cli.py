import csv
import json

import numpy as np
import pytest

from ltvmpc import cli, report


def _run(args, capsys=None):
    return cli.main(args)


def test_presets_and_validate(capsys):
    assert cli.main(["presets"]) == 0
    out = capsys.readouterr().out
    assert "viA_lipschitz" in out and "viB_periodic_noisy" in out
    assert cli.main(["validate", "--scenario", "viB_periodic"]) == 0


def test_steps_zero_is_validation_error(tmp_path):
    assert cli.main(["run", "--scenario", "viA_lipschitz", "--steps", "0", "--output", str(tmp_path)]) == 2


def test_bad_scenario_file(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text('name = "x"\n')
    assert cli.main(["validate", "--scenario", str(p)]) == 2


def test_infeasible_without_bootstrap(tmp_path):
    code = cli.main(["run", "--scenario", "viA_widened_bootstrap", "--mode", "adaptive",
                     "--steps", "3", "--seeds", "1", "--output", str(tmp_path)])
    assert code == 3


def test_bootstrap_switch(tmp_path):
    code = cli.main(["run", "--scenario", "viA_widened_bootstrap", "--mode", "adaptive", "--bootstrap",
                     "--steps", "12", "--seeds", "1", "--seed", "3", "--no-figures",
                     "--output", str(tmp_path)])
    assert code == 0
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert doc["mode"] == "bootstrap"
    assert any("switched to bootstrap" in n for n in doc["notes"])
    assert doc["runs"][0]["initial_infeasible"] is True


def test_run_outputs(tmp_path):
    out = tmp_path / "o"
    code = cli.main(["run", "--scenario", "viA_lipschitz", "--steps", "6", "--seeds", "2",
                     "--compare-static", "--output", str(out)])
    assert code == 0
    csvs = sorted(p.name for p in out.glob("*.csv"))
    assert csvs == [f"viA_lipschitz_{f}_seed{s}.csv" for f in ("adaptive", "static") for s in (0, 1)]
    with (out / "viA_lipschitz_adaptive_seed0.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x_1", "x_2", "u_1", "gamma", "V", "constraint_value",
                       "controller_source", "solve_time_ms"]
    assert len(rows) == 1 + 7
    assert rows[-1][3] == "" and rows[-1][-1] == ""
    doc = json.loads((out / "summary.json").read_text())
    assert doc["schema"] == 1
    assert set(doc["comparison"]) >= {"mean_improvement_pct", "per_seed_pct"}
    assert len(doc["runs"]) == 2 and len(doc["baseline"]) == 2
    for name in ("state_norms", "inputs", "overlay"):
        assert (out / "plots" / f"{name}.csv").exists()
    assert (out / "plots" / "state_norms.png").stat().st_size > 0
    with (out / "plots" / "overlay.csv").open() as fh:
        fams = {r[0] for r in list(csv.reader(fh))[1:]}
    assert fams == {"adaptive", "static"}


def test_output_env_default(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    assert cli.main(["run", "--scenario", "viA_lipschitz", "--steps", "2", "--no-figures"]) == 0
    assert (tmp_path / "env" / "summary.json").exists()


def test_deterministic_bytes(tmp_path):
    args = ["run", "--scenario", "viA_lipschitz_noisy", "--steps", "5", "--no-timings", "--no-figures"]
    assert cli.main(args + ["--output", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--output", str(tmp_path / "b")]) == 0
    for p in sorted((tmp_path / "a").rglob("*.*")):
        q = tmp_path / "b" / p.relative_to(tmp_path / "a")
        assert p.read_bytes() == q.read_bytes(), p.name


def test_strict_exit_on_violation(tmp_path, monkeypatch):
    monkeypatch.setattr(report, "has_violation", lambda v: True)
    code = cli.main(["run", "--scenario", "viA_lipschitz", "--steps", "2", "--strict", "--no-figures",
                     "--output", str(tmp_path)])
    assert code == 4


def test_window_and_c_overrides(tmp_path):
    code = cli.main(["run", "--scenario", "viA_lipschitz_noisy", "--steps", "3", "--window", "0",
                     "--c", "2000", "--no-figures", "--output", str(tmp_path)])
    assert code == 0
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert doc["runs"][0]["c"] == pytest.approx(2000.0)


def test_empty_plot_data(tmp_path):
    paths = report.emit_plot_data({}, tmp_path)
    for p in paths.values():
        lines = p.read_text().splitlines()
        assert len(lines) == 1


def test_fmt():
    assert report.fmt(None) == "" and report.fmt(float("nan")) == ""
    assert report.fmt(1 / 3) == "0.333333333333"
    assert report.fmt(np.float64(2.0)) == "2"

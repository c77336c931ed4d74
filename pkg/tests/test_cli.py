import csv
import json
import subprocess
import sys

import pytest

from rpcsim.cli import EXIT_CONFIG, EXIT_PASS, SUMMARY_COLUMNS, main

SMALL = {
    "sample": {"n": 8, "M": 16, "replicas": 2},
    "evolve": {"n": 8, "M": 16, "steps": 2},
    "qs-test": {"M": 32, "grid": [[1, 1.0]], "replicas": 100},
    "velocity": {"M": 256, "replicas": 40, "inner_draws": 2},
    "counterexample": {"M": 16, "n": 16, "replicas": 100, "grid": [[1, 1.0]]},
    "coalescent": {"replicas": 300},
    "continuity": {"replicas": 200},
}


def run_cli(tmp_path, kind, extra=(), name="out", **overrides):
    cfg = tmp_path / f"{kind}-{name}.json"
    cfg.write_text(json.dumps({**SMALL[kind], **overrides}))
    out = tmp_path / name
    code = main([kind, "--config", str(cfg), "--out", str(out), "--workers", "1", *extra])
    return code, out


@pytest.mark.parametrize("kind", list(SMALL))
def test_every_subcommand_writes_layout(tmp_path, kind):
    code, out = run_cli(tmp_path, kind)
    assert code in (0, 1)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subcommand"] == kind
    assert manifest["seed_scheme"]
    assert manifest["verdict"] == ("pass" if code == 0 else "fail")
    for f in manifest["files"]:
        assert (out / f).is_file()
    with open(out / "summary.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == SUMMARY_COLUMNS
    assert len(rows) > 1
    assert all(r[-1] in ("pass", "fail", "vacuous") for r in rows[1:])


def test_deterministic_outputs(tmp_path):
    _, a = run_cli(tmp_path, "sample", ("--seed", "5"), name="a")
    _, b = run_cli(tmp_path, "sample", ("--seed", "5"), name="b")
    files = json.loads((a / "manifest.json").read_text())["files"]
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
    _, c = run_cli(tmp_path, "sample", ("--seed", "6"), name="c")
    assert (a / "masses_0000.csv").read_bytes() != (c / "masses_0000.csv").read_bytes()


def test_workers_do_not_change_results(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(SMALL["coalescent"]))
    main(["coalescent", "--config", str(cfg), "--out", str(tmp_path / "w1"), "--workers", "1"])
    main(["coalescent", "--config", str(cfg), "--out", str(tmp_path / "w2"), "--workers", "2"])
    assert (tmp_path / "w1/summary.csv").read_bytes() == (tmp_path / "w2/summary.csv").read_bytes()


def test_invalid_config_writes_nothing(tmp_path, capsys):
    bad = {"model": {"q_levels": [0.2, 0.5], "x_levels": [0.6, 0.3]}}
    code, out = run_cli(tmp_path, "sample", **bad)
    assert code == EXIT_CONFIG
    assert not out.exists()
    assert "error" in capsys.readouterr().err


def test_kind_mismatch(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "evolve"}))
    assert main(["sample", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_bad_arguments():
    assert main(["nonsense"]) == EXIT_CONFIG
    assert main([]) == EXIT_CONFIG


def test_report_empty_dir(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == EXIT_CONFIG
    assert "no records" in capsys.readouterr().err


def test_report_rerenders(tmp_path, capsys):
    code, out = run_cli(tmp_path, "coalescent")
    before = (out / "summary.csv").read_text()
    (out / "summary.csv").unlink()
    capsys.readouterr()
    assert main(["report", str(out)]) == code
    assert (out / "summary.csv").read_text() == before
    assert "verdict" in capsys.readouterr().out


def test_env_out(tmp_path, monkeypatch):
    monkeypatch.setenv("RPCSIM_OUT", str(tmp_path / "env"))
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(SMALL["sample"]))
    assert main(["sample", "--config", str(cfg)]) == EXIT_PASS
    assert (tmp_path / "env/manifest.json").is_file()


def test_velocity_table(tmp_path):
    _, out = run_cli(tmp_path, "velocity")
    header = (out / "velocity.csv").read_text().splitlines()[0]
    assert "crowd" in header


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "rpcsim", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "rpcsim" in res.stdout

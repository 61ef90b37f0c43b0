import json
from pathlib import Path

import pytest

from sos_lab import cli
from sos_lab.config import ExperimentConfig
from sos_lab.sampler import ConfigError

SMALL = """
[model]
L = 4
[sampler]
burn_in = 5
thinning = 1
n_samples = 4
"""


def write_cfg(tmp_path, text=SMALL, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_ini_round_trip():
    cfg = ExperimentConfig(seed=3, L=27, delta=0.25, scales=(1, 2, 3), weights=(0.1, 1 / 3), R=8.0,
                           tolerance=1e-12, snapshots="snap")
    back = ExperimentConfig.from_ini(cfg.to_ini())
    assert back == cfg
    assert back.content_hash() == cfg.content_hash()


def test_hash_ignores_out_and_threads():
    a = ExperimentConfig()
    assert a.content_hash() == a.with_overrides(out="elsewhere", threads=4).content_hash()
    assert a.content_hash() != a.with_overrides(seed=1).content_hash()
    assert len(a.content_hash()) == 40


def test_unknown_keys_and_sections_are_errors():
    with pytest.raises(ConfigError, match=r"\[model\] size: unknown key"):
        ExperimentConfig.from_ini("[model]\nsize = 3\n")
    with pytest.raises(ConfigError, match="unknown section"):
        ExperimentConfig.from_ini("[extras]\nx = 1\n")
    with pytest.raises(ConfigError, match="L: cannot parse"):
        ExperimentConfig.from_ini("[model]\nL = big\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_ini("no section header\n")


def test_validation_collects_field_errors():
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig(threads=0, R=-1.0, weights=(1.0,), volume="faces").validate()
    msg = str(exc.value)
    for key in ("threads", "R", "weights", "volume"):
        assert key in msg


def test_exit_code_validation(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[model]\nsize = 3\n")
    assert cli.main(["sample", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "size" in capsys.readouterr().err


def test_exit_code_missing_output(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert cli.main(["sample", "--config", str(cfg), "--out", str(tmp_path / "nope")]) == 3
    assert "nope" in capsys.readouterr().err


def test_threads_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("SOS_LAB_THREADS", "two")
    cfg = write_cfg(tmp_path)
    assert cli.main(["sample", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    monkeypatch.setenv("SOS_LAB_THREADS", "3")
    args = cli.build_parser().parse_args(["sample", "--config", str(cfg)])
    assert cli.resolve_config(args).threads == 3
    args = cli.build_parser().parse_args(["sample", "--config", str(cfg), "--threads", "2"])
    assert cli.resolve_config(args).threads == 2


def test_sample_is_deterministic_across_output_dirs(tmp_path):
    cfg = write_cfg(tmp_path)
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir()
        assert cli.main(["sample", "--config", str(cfg), "--out", str(d), "--seed", "11"]) == 0
        outs.append(d)
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file())
    assert Path("manifest.json") in files and len(files) == 2 + 2 * 4
    for rel in files:
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes()
    manifest = json.loads((outs[0] / "manifest.json").read_text())
    assert manifest["meta"]["seed"] == 11
    assert manifest["meta"]["config_hash"] == ExperimentConfig.load(cfg).with_overrides(
        seed=11, command="sample").content_hash()
    assert len(manifest["report"]["files"]) == 8
    summary = (outs[0] / "summary.csv").read_text()
    assert summary.startswith("# command=sample\n# config_hash=")


def test_oracle_check_passes_and_flags_corruption(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    run = tmp_path / "run"
    run.mkdir()
    assert cli.main(["sample", "--config", str(cfg), "--out", str(run)]) == 0
    chk = tmp_path / "chk"
    chk.mkdir()
    snaps = str(run / "snapshots")
    text = SMALL + f"[analysis]\nsnapshots = {snaps}\n"
    cfg2 = write_cfg(tmp_path, text, "chk.ini")
    assert cli.main(["oracle-check", "--config", str(cfg2), "--out", str(chk)]) == 0
    ledger = json.loads((chk / "oracle_ledger.json").read_text())
    assert ledger["report"]["all_passed"]
    names = [c["name"] for c in ledger["report"]["checks"]]
    assert any(n.startswith("matrix-tree") for n in names) and "snapshot tau_00003.sosf" in names
    bad = run / "snapshots" / "tau_00003.sosf"
    data = bytearray(bad.read_bytes())
    data[-1] ^= 0xFF
    bad.write_bytes(bytes(data))
    assert cli.main(["oracle-check", "--config", str(cfg2), "--out", str(chk)]) == 2
    assert "snapshot tau_00003.sosf" in capsys.readouterr().err


def test_analysis_commands_on_snapshots(tmp_path):
    text = """
[model]
L = 27
[sampler]
burn_in = 20
thinning = 1
n_samples = 3
[analysis]
R = 4.0
scales = 1, 2
"""
    cfg = write_cfg(tmp_path, text)
    run = tmp_path / "run"
    run.mkdir()
    assert cli.main(["sample", "--config", str(cfg), "--out", str(run)]) == 0
    cfg2 = write_cfg(tmp_path, text + f"snapshots = {run / 'snapshots'}\n", "b.ini")
    for cmd, out in (("estimate-ahom", "ahom.json"), ("percolation", "percolation.json")):
        d = tmp_path / cmd
        d.mkdir()
        assert cli.main([cmd, "--config", str(cfg2), "--out", str(d)]) == 0
        rep = json.loads((d / out).read_text())["report"]
        assert rep["n_samples"] == 3
    # too few samples for the direct variance is an input error
    d = tmp_path / "clt"
    d.mkdir()
    assert cli.main(["clt", "--config", str(cfg2), "--out", str(d)]) == 1


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
    assert "sos-lab" in capsys.readouterr().out

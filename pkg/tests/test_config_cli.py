import json
from pathlib import Path

import numpy as np
import pytest

from hyperscat.cli import main, write_csv
from hyperscat.config import load_config
from hyperscat.errors import InvalidArgument


def test_defaults_parse_and_validate():
    cfg = load_config()
    assert cfg.metric().name == "radial"
    assert cfg.spectral_metric().kappa == 2.0
    assert cfg.ladder().R == 6.0
    assert len(cfg.t_grid()) == 14


def test_overrides():
    cfg = load_config(None, ["model.family=pure-hyperbolic",
                             "spectral.m_max=7"])
    assert cfg.metric().name == "pure-hyperbolic"
    assert cfg.get("spectral", "m_max", int) == 7
    with pytest.raises(InvalidArgument):
        load_config(None, ["bad-override"])
    with pytest.raises(InvalidArgument):
        load_config(None, ["regions.w=0.7"])
    with pytest.raises(InvalidArgument):
        load_config("/nonexistent/path.cfg")


def test_config_file_roundtrip(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text("[model]\nfamily = angular\nc = 0.3\n")
    cfg = load_config(p)
    assert cfg.metric().name == "angular"


def test_csv_meta_header(tmp_path):
    path = tmp_path / "x.csv"
    write_csv(path, ["a", "b"], [(1.0, 2.0)], meta={"k": 3})
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# {")
    assert json.loads(lines[0][2:]) == {"k": 3}
    assert lines[1] == "a,b"


def test_cli_exit_codes(tmp_path):
    # validation error -> 1
    rc = main(["run", "heat", "--out", str(tmp_path), "--set", "regions.w=0.9"])
    assert rc == 1
    # numeric failure -> 2 (lambda window above the dr reliability ceiling)
    rc = main(["run", "ssf", "--out", str(tmp_path), "--quiet",
               "--set", "spectral.dr=0.2", "--set", "spectral.lambda_lo=30",
               "--set", "spectral.lambda_hi=400",
               "--set", "spectral.m_max=4"])
    assert rc == 2
    # unknown config file -> 1
    rc = main(["run", "heat", str(tmp_path / "missing.cfg")])
    assert rc == 1


def test_cli_identities_and_determinism(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        rc = main(["run", "identities", "--out", str(out), "--quiet"])
        assert rc == 0
    assert (out1 / "identities_report.json").read_bytes() \
        == (out2 / "identities_report.json").read_bytes()
    payload = json.loads((out1 / "identities_report.json").read_text())
    for key in ("birman_solomyak", "duhamel", "shift_trick", "egorov",
                "intertwine_operator", "intertwine_trace", "leibniz_k1",
                "bracket_route_gap", "det_oracle_gap"):
        assert payload[key] < 1e-6, key
    assert payload["hs_order_gain"] >= 10.0
    assert payload["hoelder_worst_margin"] <= 1e-10


def test_cli_flow_verify_artifacts(tmp_path):
    rc = main(["run", "flow-verify", "--out", str(tmp_path), "--quiet",
               "--set", "flow.samples=25", "--set", "flow.horizon=8.0"])
    assert rc == 0
    report = json.loads((tmp_path / "flow_report.json").read_text())
    assert set(report["estimates"]) >= {"rt2", "yt2", "rhot2", "etat2"}
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert lines[1] == "t,r,y,rho,eta,p,drift"


def test_cli_heat_and_report(tmp_path):
    args = ["--out", str(tmp_path), "--quiet",
            "--set", "spectral.dr=0.08", "--set", "spectral.m_max=24",
            "--set", "spectral.t_lo=0.04", "--set", "spectral.t_points=10",
            "--set", "spectral.q_list=1", "--set", "spectral.lambda_points=11",
            "--set", "spectral.lambda_lo=7", "--set", "spectral.lambda_hi=70",
            "--set", "flow.samples=20", "--set", "flow.horizon=6.0"]
    assert main(["run", "heat"] + args) == 0
    assert (tmp_path / "heat_q1.csv").is_file()
    assert (tmp_path / "heat.svg").is_file()
    heat = json.loads((tmp_path / "heat_report.json").read_text())
    assert "a0_fit" in heat["q"]["1"]
    # report aggregates the existing artifacts plus fresh ones
    assert main(["run", "report"] + args) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert set(rep["sections"]) == {"flow", "identities", "heat", "ssf"}
    assert (tmp_path / "xi.svg").is_file()


def test_cli_default_config_dump(capsys):
    assert main(["default-config"]) == 0
    out = capsys.readouterr().out
    assert "[spectral]" in out and "m_max" in out

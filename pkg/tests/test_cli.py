import csv
import json
import math

import numpy as np
import pytest

from hybridcert.cert import Certificate
from hybridcert.cli import EXIT_CHECK, EXIT_HASH, EXIT_INFEASIBLE, EXIT_INPUT, EXIT_OK, main
from hybridcert.polyalg import PolyMatrix

LO = 0.08 - math.pi / 8


@pytest.fixture(scope="module")
def certified(tmp_path_factory):
    out = tmp_path_factory.mktemp("certify")
    code = main(["certify", "--out", str(out), "--samples", "4096", "--surface-samples", "512"])
    return code, out


def write_config(path, d):
    path.write_text(json.dumps(d))
    return str(path)


def test_certify_writes_outputs(certified):
    code, out = certified
    assert code == EXIT_OK
    for name in ("certificate.json", "check_report.json", "witnesses.csv", "config.effective.json"):
        assert (out / name).exists()
    rep = json.loads((out / "check_report.json").read_text())
    assert rep["pass"] and rep["samples"] == 4096
    eff = json.loads((out / "config.effective.json").read_text())
    assert len(eff["system"]["params"]["b_coeffs"]) == 3
    assert json.loads((out / "certificate.json").read_text())["provenance"]["check"] == "pass"


def test_check_reproduces_report(certified, tmp_path):
    _, out = certified
    code = main(["check", str(out / "certificate.json"), "--out", str(tmp_path), "--samples", "4096",
                 "--surface-samples", "512"])
    assert code == EXIT_OK
    assert (tmp_path / "check_report.json").read_text() == (out / "check_report.json").read_text()


def test_corrupted_certificate_fails_with_witnesses(certified, tmp_path, capsys):
    _, out = certified
    cert = Certificate.from_json((out / "certificate.json").read_text())
    # one constant coefficient of W pushed far negative
    bump = PolyMatrix.from_numeric(np.diag([0.0, -1e5]), cert.n)
    bad = Certificate(cert.W + bump, cert.rho, cert.alpha, cert.beta, cert.zeta, cert.multipliers, cert.lam,
                      cert.template, cert.system_hash, cert.provenance)
    path = tmp_path / "bad.json"
    path.write_text(bad.to_json())
    code = main(["check", str(path), "--out", str(tmp_path / "o"), "--samples", "1024"])
    assert code == EXIT_CHECK
    assert "witness positivity" in capsys.readouterr().out
    rows = list(csv.reader((tmp_path / "o" / "witnesses.csv").open()))
    assert rows[0][0] == "condition" and len(rows) > 1


def test_hash_mismatch(certified, tmp_path):
    _, out = certified
    cfg = write_config(tmp_path / "c.json", {"system": {"params": {"gamma": 0.1}}})
    assert main(["check", str(out / "certificate.json"), "--config", cfg, "--out", str(tmp_path)]) == EXIT_HASH


def test_large_lambda_infeasible(tmp_path):
    assert main(["certify", "--lambda", "1000", "--out", str(tmp_path)]) == EXIT_INFEASIBLE
    assert not (tmp_path / "certificate.json").exists()


@pytest.mark.parametrize("cfg", [
    {"solver": {"bogus": 1}},
    {"schema_version": 7},
    {"seed": -1},
    {"template": {"lambda": 0.1, "lam": 0.1}},
    {"system": {"preset": "pendulum"}},
    {"system": {"params": {"alpha": 0.5, "nonsense": 2}}},
])
def test_bad_config_rejected(tmp_path, cfg):
    path = write_config(tmp_path / "c.json", cfg)
    assert main(["export-sdp", "--config", path, "--out", str(tmp_path)]) == EXIT_INPUT


def test_bad_arguments(tmp_path):
    assert main(["certify", "--preset", "nope"]) == EXIT_INPUT
    assert main(["frobnicate"]) == EXIT_INPUT
    assert main(["check", str(tmp_path / "missing.json")]) == EXIT_INPUT
    assert main(["export-sdp", "--config", str(tmp_path / "missing.json")]) == EXIT_INPUT


def test_simulate_zero_horizon(tmp_path):
    cfg = write_config(tmp_path / "c.json", {"simulation": {"t_max": 0}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    lines = (tmp_path / "o" / "trace.csv").read_text().splitlines()
    assert lines == ["t,theta,thetadot,segment_id"]
    assert (tmp_path / "o" / "events.csv").read_text().count("\n") == 1


def test_simulate_flags_slow_start(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", {"simulation": {
        "t_max": 5, "initial_states": [[LO, 0.1], [LO, 0.5]], "n_impacts": 20}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    rows = list(csv.DictReader((tmp_path / "o" / "sweep.csv").open()))
    assert [r["status"] for r in rows] == ["no_return", "converged"]
    assert "flagged no_return" in capsys.readouterr().out
    meta = json.loads((tmp_path / "o" / "trace_meta.json").read_text())
    assert meta["x_axis"] == "theta"


def test_poincare_and_export(tmp_path):
    assert main(["poincare", "--out", str(tmp_path)]) == EXIT_OK
    summ = json.loads((tmp_path / "poincare_summary.json").read_text())
    assert abs(summ["fixed_point"] - 0.3497543674) < 1e-8
    assert main(["export-sdp", "--out", str(tmp_path)]) == EXIT_OK
    head = (tmp_path / "problem.dat-s").read_text().splitlines()
    assert head[2].endswith("= mDIM")

import csv
import json
from pathlib import Path

import pytest

from contagion import cli
from contagion.calibration import CalibrationFailed

ROOT = Path(__file__).resolve().parents[1]

SMALL = """\
model:
  kind: hcm
  n: 20
  a0: 0.6
  rho: 0.05
  delta: 0.1
factor:
  kappa: 0.6
  theta: 0.02
  sigma: 0.141
  l: 0.2
  mu: 0.1
  y0: 1.0
deck:
  attach_pct: [0, 10, 30, 100]
  upfront_bp: [200, 0, 0]
  maturity: 3
  payments_per_year: 2
  r: 0.05
  recovery: 0.4
precision:
  mantissa_bits: auto
mc:
  paths: 2000
  dt: 0.02
  seed: 3
  scenarios: 5
"""


def write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_price_base_deck(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["price", str(ROOT / "configs" / "base_hcm.yaml"), "--out-dir", str(out)]) == 0
    rows = read_csv(out / "spreads.csv")
    assert [float(r["spread_bp"]) for r in rows] == pytest.approx(
        [1002.33, 840.24, 795.70, 776.82, 739.12, 619.46], abs=0.011)
    assert rows[0]["tranche_lo"] == "0" and rows[0]["tranche_hi"] == "3"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["format_version"] == 1
    eq = summary["attach_detach_years"][0]
    assert 0.25 <= eq[0] <= 0.75 and 1.0 <= eq[1] <= 1.5
    assert (out / "loss_curve.csv").is_file() and (out / "attach_detach.csv").is_file()


def test_unknown_key_is_reported_with_line(tmp_path, capsys):
    cfg = write(tmp_path, SMALL.replace("  delta: 0.1\n", "  delta: 0.1\n  dleta: 0.2\n"))
    out = tmp_path / "out"
    assert cli.main(["price", str(cfg), "--out-dir", str(out)]) == 2
    err = capsys.readouterr().err
    assert f"{cfg}:7:" in err and "dleta" in err
    assert not out.exists()


def test_bad_value_type(tmp_path, capsys):
    cfg = write(tmp_path, SMALL.replace("rho: 0.05", "rho: lots"))
    assert cli.main(["price", str(cfg), "--out-dir", str(tmp_path / "o")]) == 2
    assert ":5:" in capsys.readouterr().err


def test_missing_config(tmp_path):
    assert cli.main(["price", str(tmp_path / "nope.yaml"), "--out-dir", str(tmp_path / "o")]) == 2


def test_pricing_error_leaves_no_output(tmp_path, capsys):
    cfg = write(tmp_path, SMALL.replace("n: 20", "n: 125").replace("mantissa_bits: auto",
                                                                  "mantissa_bits: 128"))
    out = tmp_path / "out"
    assert cli.main(["price", str(cfg), "--out-dir", str(out)]) == 3
    assert "PrecisionLoss" in capsys.readouterr().err
    assert not out.exists()
    assert not list(tmp_path.glob(".contagion-*"))


def test_existing_outputs_survive_a_failed_run(tmp_path):
    cfg = write(tmp_path, SMALL)
    out = tmp_path / "out"
    assert cli.main(["price", str(cfg), "--out-dir", str(out)]) == 0
    before = (out / "spreads.csv").read_text()
    bad = write(tmp_path, SMALL.replace("mantissa_bits: auto", "mantissa_bits: 53"), "bad.yaml")
    assert cli.main(["price", str(bad), "--out-dir", str(out)]) != 0
    assert (out / "spreads.csv").read_text() == before


def test_sensitivity(tmp_path):
    cfg = write(tmp_path, SMALL)
    out = tmp_path / "out"
    assert cli.main(["sensitivity", str(cfg), "--factor", "rho", "--grid", "0.02:0.08:3",
                     "--out-dir", str(out)]) == 0
    rows = read_csv(out / "sensitivity.csv")
    assert len(rows) == 9
    senior = [float(r["spread_bp"]) for r in rows if r["tranche_lo"] == "30"]
    assert senior == sorted(senior)


@pytest.mark.parametrize("args", [["--factor", "gamma", "--grid", "1,2"],
                                  ["--factor", "rho", "--grid", "a:b"],
                                  ["--factor", "m", "--grid", "2.5"]])
def test_sensitivity_bad_arguments(tmp_path, args):
    cfg = write(tmp_path, SMALL)
    assert cli.main(["sensitivity", str(cfg), *args, "--out-dir", str(tmp_path / "o")]) == 2


def test_simulate_is_deterministic(tmp_path):
    cfg = write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", str(cfg), "--out-dir", str(a)]) == 0
    assert cli.main(["simulate", str(cfg), "--out-dir", str(b), "--threads", "2"]) == 0
    assert (a / "scenarios.csv").read_text() == (b / "scenarios.csv").read_text()
    assert (a / "mc_summary.json").read_text() == (b / "mc_summary.json").read_text()
    rows = read_csv(a / "scenarios.csv")
    assert rows and set(rows[0]) == {"path_id", "k", "tau_k", "obligor"}
    c = tmp_path / "c"
    assert cli.main(["simulate", str(cfg), "--out-dir", str(c), "--seed", "4"]) == 0
    assert (c / "scenarios.csv").read_text() != (a / "scenarios.csv").read_text()


def test_bad_thread_count(tmp_path):
    cfg = write(tmp_path, SMALL)
    assert cli.main(["simulate", str(cfg), "--threads", "0", "--out-dir", str(tmp_path / "o")]) == 2


QUOTES = """\
maturity_years,lo,hi,kind,bid,ask
5,0,10,upfront_pct,30,31
5,10,30,running_bp,200,210
5,30,100,running_bp,5,6
5,0,100,index_bp,100,101
"""


def calibration_config(tmp_path, extra=""):
    write(tmp_path, QUOTES, "quotes.csv")
    text = SMALL + f"calibration:\n  quotes: quotes.csv\n  starts: 1\n  seed: 0\n{extra}"
    return write(tmp_path, text)


def test_implied_rho_flags_missing_roots(tmp_path):
    cfg = calibration_config(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["implied-rho", str(cfg), "--out-dir", str(out)]) == 0
    rows = read_csv(out / "implied_rho.csv")
    assert len(rows) == 4
    assert {r["status"] for r in rows} <= {"OK", "NO_ROOT"}
    for r in rows:
        assert (r["implied_rho"] == "") == (r["status"] == "NO_ROOT")
    # a 1000% upfront cannot be reached by any contagion rate
    write(tmp_path, QUOTES.replace("30,31", "1000,1001"), "quotes.csv")
    assert cli.main(["implied-rho", str(cfg), "--out-dir", str(out)]) == 0
    first = read_csv(out / "implied_rho.csv")[0]
    assert first["status"] == "NO_ROOT"
    assert json.loads((out / "implied_rho.json").read_text())["no_root"] >= 1


def test_bad_quote_file(tmp_path, capsys):
    cfg = calibration_config(tmp_path)
    write(tmp_path, QUOTES.replace("200,210", "210,200"), "quotes.csv")
    assert cli.main(["implied-rho", str(cfg), "--out-dir", str(tmp_path / "o")]) == 2
    assert "bid above ask" in capsys.readouterr().err


def test_calibration_failure_exit_code(tmp_path, monkeypatch, capsys):
    def fail(*args, **kwargs):
        raise CalibrationFailed("every calibration start failed", ["start 0: boom"])

    monkeypatch.setattr(cli, "calibrate", fail)
    cfg = calibration_config(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["calibrate", str(cfg), "--out-dir", str(out)]) == 4
    assert "start 0: boom" in capsys.readouterr().err
    assert not out.exists()


def test_calibrate_small(tmp_path):
    cfg = calibration_config(tmp_path, "  maxiter: 3\n"
                             "  x0: [0.6, 0.05, 0.1, 0.6, 0.02, 0.141, 0.1, 0.2, 1.0]\n")
    out = tmp_path / "out"
    assert cli.main(["calibrate", str(cfg), "--out-dir", str(out)]) == 0
    res = json.loads((out / "calibration.json").read_text())
    assert res["aape_pct"] == pytest.approx(100 * res["aape"])
    assert len(read_csv(out / "fit.csv")) == 4

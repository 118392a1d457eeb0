import json

import numpy as np
import pytest

from msdspan.cli import (
    ENV_OUTPUT_DIR,
    EXIT_ACCEPT,
    EXIT_CONFIG,
    EXIT_ERROR,
    EXIT_REJECT,
    RunReport,
    main,
)
from msdspan.core import PortfolioSet, standard_simplex, sub_simplex


def _write_panel(path, Y, names=None):
    names = names or [f"a{i + 1}" for i in range(Y.shape[1])]
    lines = ["date," + ",".join(names)]
    lines += [f"2000-{t:04d}," + ",".join(repr(float(x)) for x in row) for t, row in enumerate(Y)]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def _write_set(path, pset):
    path.write_text(json.dumps(pset.to_json()))
    return str(path)


@pytest.fixture
def files(tmp_path, rng):
    Y = rng.normal(0.005, 0.04, size=(40, 3))
    return {
        "returns": _write_panel(tmp_path / "returns.csv", Y),
        "L": _write_set(tmp_path / "L.json", standard_simplex(3)),
        "K": _write_set(tmp_path / "K.json", sub_simplex(3, [0, 1])),
        "dir": tmp_path,
    }


def test_span_reflexive_accepts(files, capsys):
    code = main(["span", files["returns"], files["L"], files["L"], "--subsample-sizes", "10,20"])
    out = capsys.readouterr()
    assert code == EXIT_ACCEPT
    rep = json.loads(out.out)
    assert rep["result"]["xi"] == 0.0
    assert rep["result"]["decision"] == "accept"
    # K = L = S has character 1, so every alpha violates the bound
    assert "warning" in out.err and "alpha" in out.err


def test_span_rejects_dominated_k(tmp_path, rng):
    base = rng.normal(0.0, 0.04, size=(60, 2))
    Y = np.column_stack([base, base[:, 0] + 0.05])
    returns = _write_panel(tmp_path / "r.csv", Y)
    L = _write_set(tmp_path / "L.json", standard_simplex(3))
    K = _write_set(tmp_path / "K.json", PortfolioSet(np.array([[1.0, 0, 0]]), ((0,),)))
    code = main(["span", returns, L, K, "--subsample-sizes", "15,30", "--no-bias-correction",
                 "--output-dir", str(tmp_path / "out")])
    assert code == EXIT_REJECT
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["result"]["decision"] == "reject"
    assert len(rep["result"]["quantiles"]) == 2


def test_exit_codes_for_errors(files, capsys):
    missing = str(files["dir"] / "nope.json")
    assert main(["span", files["returns"], files["L"], missing]) == EXIT_ERROR
    assert "nope.json" in capsys.readouterr().err
    assert main(["span", files["returns"], files["L"], files["K"], "--alpha", "1.5"]) == EXIT_CONFIG
    assert main(["span", files["returns"], files["L"], files["K"], "--threads", "0"]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        main(["span", files["returns"], files["L"], files["K"], "--subsample-sizes", "ten"])
    assert exc.value.code == EXIT_CONFIG


def test_bad_panel_reports_line(tmp_path, files, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a1,a2,a3\n0.1,0.2,0.3\n0.1,oops,0.3\n")
    assert main(["span", str(bad), files["L"], files["K"]]) == EXIT_ERROR
    err = capsys.readouterr().err
    assert "bad.csv" in err and "line 3, column 2" in err


def test_report_round_trip_and_rerun(files, monkeypatch):
    out = files["dir"] / "first"
    monkeypatch.setenv(ENV_OUTPUT_DIR, str(out))
    args = ["span", files["returns"], files["L"], files["K"], "--subsample-sizes", "10,20", "--alpha", "0.1"]
    main(args)
    text = (out / "report.json").read_text()
    rep = RunReport.loads(text)
    assert rep.dumps() == text
    assert json.loads(text)["config"]["alpha"] == 0.1
    assert (out / "timings.json").exists()

    monkeypatch.setenv(ENV_OUTPUT_DIR, str(files["dir"] / "second"))
    main(["span", files["returns"], files["L"], files["K"], "--config", str(out / "report.json")])
    assert (files["dir"] / "second" / "report.json").read_text() == text


def test_tampered_report_is_rejected(files, tmp_path):
    out = tmp_path / "o"
    main(["span", files["returns"], files["L"], files["K"], "--subsample-sizes", "10,20", "--output-dir", str(out)])
    obj = json.loads((out / "report.json").read_text())
    obj["config"]["alpha"] = 0.2
    (out / "report.json").write_text(json.dumps(obj))
    assert main(["span", files["returns"], files["L"], files["K"], "--config", str(out / "report.json")]) == EXIT_CONFIG


def test_csv_format(files, capsys):
    main(["span", files["returns"], files["L"], files["K"], "--subsample-sizes", "10,20", "--format", "csv"])
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "b,quantile"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["10", "20", "corrected", "xi"]


def test_character_command(tmp_path, capsys):
    L = _write_set(tmp_path / "S4.json", standard_simplex(4))
    K = _write_set(tmp_path / "K.json", sub_simplex(4, [0, 2]))
    assert main(["character", L, K]) == EXIT_ACCEPT
    rep = json.loads(capsys.readouterr().out)
    assert rep["result"]["character_fraction"] == "1/2"
    assert len(rep["result"]["effective_points"]) == 2

    inner = _write_set(tmp_path / "in.json", PortfolioSet(np.array([[0.25] * 4]), ((0,),)))
    main(["character", L, inner])
    assert json.loads(capsys.readouterr().out)["result"]["character"] == 0.0


def test_mc_command_is_deterministic(tmp_path):
    scen = tmp_path / "scen.json"
    scen.write_text(json.dumps({"spec": {"preset": "panel_a"}, "M": 2, "T": 40}))
    dirs = []
    for name in ("a", "b"):
        d = tmp_path / name
        code = main(["mc", str(scen), "--reps", "1", "--seed", "3", "--subsample-sizes", "10,20", "--output-dir", str(d)])
        assert code == EXIT_ACCEPT
        dirs.append(d)
    a, b = ((d / "table.csv").read_bytes() for d in dirs)
    assert a == b
    rep = json.loads((dirs[0] / "report.json").read_text())
    for kind in ("size", "power"):
        assert rep["result"]["results"]["40"][kind]["rate"] in (0.0, 1.0)


def test_mc_needs_sizes_for_unlisted_T(tmp_path):
    scen = tmp_path / "scen.json"
    scen.write_text(json.dumps({"M": 2, "T": 45}))
    assert main(["mc", str(scen), "--reps", "1"]) == EXIT_CONFIG


def test_backtest_command(tmp_path, rng):
    Y = rng.normal(0.01, 0.03, size=(16, 2))
    returns = _write_panel(tmp_path / "r.csv", Y)
    S = _write_set(tmp_path / "S.json", standard_simplex(2))
    fac = tmp_path / "f.csv"
    F = np.column_stack([rng.normal(0, 0.02, 16), np.full(16, 0.001)])
    _write_panel(fac, F, ["MKT", "RF"])
    out = tmp_path / "bt"
    code = main(["backtest", returns, S, S, "--window", "12", "--trc", "0", "--factors", str(fac),
                 "--output-dir", str(out)])
    assert code == EXIT_ACCEPT
    perf = json.loads((out / "performance.json").read_text())
    assert perf["periods"] == 4
    rows = (out / "weights.csv").read_text().strip().splitlines()
    assert len(rows) == 5
    header = rows[0].split(",")
    net = [float(r.split(",")[header.index("net_return")]) for r in rows[1:]]
    assert perf["cumulative_multiple"]["strategy_net"] == pytest.approx(np.prod(1 + np.array(net)), abs=1e-12)
    assert set(json.loads((out / "factor_fit.json").read_text())["coefficients"]) == {"alpha", "MKT"}


def test_backtest_window_too_long(tmp_path, rng):
    returns = _write_panel(tmp_path / "r.csv", rng.normal(size=(10, 2)))
    S = _write_set(tmp_path / "S.json", standard_simplex(2))
    assert main(["backtest", returns, S, S, "--window", "10"]) == EXIT_CONFIG


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_character_replays_alpha(tmp_path):
    L = _write_set(tmp_path / "S3.json", standard_simplex(3))
    K = _write_set(tmp_path / "K.json", sub_simplex(3, [0]))
    main(["character", L, K, "--alpha", "0.8", "--output-dir", str(tmp_path / "a")])
    main(["character", L, K, "--config", str(tmp_path / "a" / "report.json"), "--output-dir", str(tmp_path / "b")])
    first = (tmp_path / "a" / "report.json").read_text()
    assert json.loads(first)["result"]["alpha_check"] == "violates-bound"
    assert (tmp_path / "b" / "report.json").read_text() == first
    assert main(["character", L, K, "--alpha", "0"]) == EXIT_CONFIG

import csv
import json
import subprocess
import sys

import pytest

from combwalk.cli import dispatch


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_lyapunov_row_count(tmp_path):
    rc = dispatch(["lyapunov", "egt4", "--p", "0.5", "--e-min", "4.01", "--e-max", "5.33", "--steps", "200",
                   "--iters", "100000", "--seed", "7", "--out-dir", str(tmp_path)])
    assert rc == 0
    rows = _rows(tmp_path / "lyapunov_egt4.csv")
    assert len(rows) == 201
    assert rows[0] == ["x", "p", "gamma_bar", "stderr_gamma", "eta_bar", "stderr_eta", "n_iter", "seed"]
    # 17 significant digits re-parse exactly
    assert float(rows[1][0]) == 4.01


def test_manifest_round_trip(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert dispatch(["bound", "--p", "0.4", "--n-sites", "30", "--seed", "3", "--out-dir", str(a)]) == 0
    man = json.loads((a / "bound.manifest.json").read_text())
    assert man["subcommand"] == "bound" and man["seed"] == 3
    assert set(man["outputs"]) == {"bound.csv", "bound_summary.json"}
    assert dispatch(["--from-manifest", str(a / "bound.manifest.json"), "--out-dir", str(b)]) == 0
    assert (a / "bound.csv").read_bytes() == (b / "bound.csv").read_bytes()
    man2 = json.loads((b / "bound.manifest.json").read_text())
    assert man2["params"] == man["params"] and man2["outputs"]["bound.csv"] == man["outputs"]["bound.csv"]


def test_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"p": 0.2, "n-sites": 12, "samples": 3}))
    assert dispatch(["comb", "--config", str(cfg), "--samples", "5", "--out-dir", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "comb.manifest.json").read_text())
    assert man["params"]["p"] == 0.2 and man["params"]["n_sites"] == 12 and man["params"]["samples"] == 5
    assert len(_rows(tmp_path / "comb.csv")) == 6


def test_threads_do_not_change_output(tmp_path, monkeypatch):
    args = ["lyapunov", "chain", "--e-min", "-1", "--e-max", "4", "--steps", "6", "--iters", "20000"]
    assert dispatch(args + ["--threads", "1", "--out-dir", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("COMBWALK_THREADS", "3")
    assert dispatch(args + ["--out-dir", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/lyapunov_chain.csv").read_bytes() == (tmp_path / "b/lyapunov_chain.csv").read_bytes()


def test_json_format(tmp_path):
    assert dispatch(["smatrix", "--occupancy", "10110", "--theta-steps", "3", "--format", "json",
                     "--out-dir", str(tmp_path)]) == 0
    recs = json.loads((tmp_path / "smatrix.json").read_text())
    assert len(recs) == 3 and recs[0]["unitarity"] < 1e-12


@pytest.mark.parametrize("argv", [
    ["nonsense"],
    ["bound", "--bogus"],
    ["lyapunov", "egt4", "--p", "1.5", "--iters", "5000", "--steps", "2"],
    ["diffusion", "escape", "--length", "40", "--d-max", "30"],
    [],
])
def test_invalid_arguments_exit_2(argv, capsys):
    assert dispatch(argv) == 2
    assert "error" in capsys.readouterr().err


def test_consistency_failure_exit_3(tmp_path, monkeypatch):
    import combwalk.cli as cli
    from combwalk.errors import InternalConsistencyError

    def broken(comb):
        raise InternalConsistencyError("count mismatch", solved=1, predicted=2)
    monkeypatch.setattr(cli, "solve_bound_states", broken)
    assert dispatch(["bound", "--occupancy", "11", "--out-dir", str(tmp_path)]) == 3


def test_verify_quick(tmp_path):
    assert dispatch(["verify", "all", "--quick", "--out-dir", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "verify_all.csv")
    assert all(r[1] == "1" for r in rows[1:])


def test_diffusion_subcommands(tmp_path):
    assert dispatch(["diffusion", "report", "--occupancy", "1011001101", "--start", "3",
                     "--out-dir", str(tmp_path)]) == 0
    s = json.loads((tmp_path / "diffusion_report_summary.json").read_text())
    assert abs(s["completeness_residual"]) < 1e-9
    assert dispatch(["diffusion", "ensemble", "--p", "0.5", "--length", "40", "--samples", "10", "--bins", "20",
                     "--out-dir", str(tmp_path)]) == 0
    s = json.loads((tmp_path / "diffusion_ensemble_summary.json").read_text())
    assert s["within_bound"]
    assert len(_rows(tmp_path / "diffusion_ensemble.csv")) == 21


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "combwalk", "spectrum", "--occupancy", "1101", "--v-steps", "3",
                        "--out-dir", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    r = subprocess.run([sys.executable, "-m", "combwalk", "spectrum", "--what"], capture_output=True, text=True)
    assert r.returncode == 2 and "usage" in r.stderr

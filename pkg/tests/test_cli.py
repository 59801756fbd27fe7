"""End-to-end checks of the command-line interface.

Every test drives ``cli.main`` in process so exit codes and written
artifacts can be asserted without spawning subprocesses.
"""

import json

import numpy as np
import pytest

from geoflow import cli
from geoflow.report import SWEEP_COLUMNS

from conftest import case_path


def run(*argv):
    return cli.main([str(a) for a in argv])


# ---------------------------------------------------------------- solve


def test_solve_stdout_and_csv(tmp_path, capsys):
    out = tmp_path / "solved.csv"
    rc = run("solve", "--case", case_path("case9"), "--out", out)
    assert rc == cli.EXIT_OK
    text = capsys.readouterr().out
    assert "solved" in text and "sigma_min" in text
    lines = out.read_text().splitlines()
    assert lines[0] == "bus,V,theta_rad,residual,sigma_min"
    assert len(lines) == 10  # header + 9 buses
    # bus column ascending
    ids = [int(row.split(",")[0]) for row in lines[1:]]
    assert ids == sorted(ids)


def test_solve_json(tmp_path):
    out = tmp_path / "solved.json"
    rc = run("solve", "--case", case_path("case2"), "--format", "json", "--out", out)
    assert rc == cli.EXIT_OK
    payload = json.loads(out.read_text())
    assert set(payload) == {"case", "residual", "sigma_min", "buses"}
    assert len(payload["buses"]) == 2
    assert payload["residual"] < 1e-10


def test_solve_unknown_case_is_input_error(capsys):
    rc = run("solve", "--case", "no_such_case")
    assert rc == cli.EXIT_INPUT
    assert "input error" in capsys.readouterr().err


def test_solve_bad_scale_is_input_error(capsys):
    rc = run("solve", "--case", case_path("case9"), "--load-scale", "-1")
    assert rc == cli.EXIT_INPUT
    assert "input error" in capsys.readouterr().err


def test_solve_infeasible_scale_is_numerical_error(capsys):
    rc = run("solve", "--case", case_path("case9"), "--load-scale", "50")
    assert rc == cli.EXIT_NUMERICAL
    assert "numerical failure" in capsys.readouterr().err


# ---------------------------------------------------------------- tensors


def test_tensors_json_payload(tmp_path):
    out = tmp_path / "tensors.json"
    rc = run("tensors", "--case", case_path("case9"), "--out", out)
    assert rc == cli.EXIT_OK
    payload = json.loads(out.read_text())
    assert set(payload) == {"n", "meta", "g", "g_inv", "gamma2"}
    n = payload["n"]
    assert n == 14
    assert len(payload["g"]) == n and len(payload["g"][0]) == n
    assert payload["meta"]["gginv_max_abs_dev"] < 1e-10
    # stored entries keep the symmetric wedge i <= j
    assert all(i <= j for _, i, j, _ in payload["gamma2"])


def test_tensors_stdout_when_no_out(capsys):
    rc = run("tensors", "--case", case_path("case2"))
    assert rc == cli.EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["n"] == 2


# ---------------------------------------------------------------- boundary


def test_boundary_sweep_csv(tmp_path):
    out = tmp_path / "sweep.csv"
    rc = run(
        "boundary", "--case", case_path("case9"),
        "--load-buses", "5,7", "--directions", "8", "--out", out,
    )
    assert rc == cli.EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(SWEEP_COLUMNS)
    assert len(lines) == 1 + 8 * 6  # npq = 6 tracked buses per direction


def test_boundary_repeat_runs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        rc = run(
            "boundary", "--case", case_path("case9"),
            "--load-buses", "5,7", "--directions", "6", "--out", out,
        )
        assert rc == cli.EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_boundary_figures_one_png_per_pq_bus(tmp_path):
    figdir = tmp_path / "figs"
    rc = run(
        "boundary", "--case", case_path("case9"),
        "--load-buses", "5,7", "--directions", "8", "--figures", figdir,
    )
    assert rc == cli.EXIT_OK
    pngs = sorted(figdir.glob("boundary_bus*.png"))
    assert [p.name for p in pngs] == [f"boundary_bus{b}.png" for b in (4, 5, 6, 7, 8, 9)]
    for p in pngs:
        assert p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_boundary_3d_needs_three_load_buses(capsys):
    rc = run(
        "boundary", "--case", case_path("case9"),
        "--load-buses", "5,7", "--directions", "4", "--delta-count", "3",
    )
    assert rc == cli.EXIT_INPUT
    assert "three load buses" in capsys.readouterr().err


def test_boundary_2d_needs_two_load_buses(capsys):
    rc = run(
        "boundary", "--case", case_path("case9"),
        "--load-buses", "5,7,9", "--directions", "4",
    )
    assert rc == cli.EXIT_INPUT
    assert "two load buses" in capsys.readouterr().err


def test_boundary_requires_load_buses(capsys):
    rc = run("boundary", "--case", case_path("case9"), "--directions", "4")
    assert rc == cli.EXIT_INPUT
    assert "--load-buses" in capsys.readouterr().err


def test_boundary_fixed_alpha_list(tmp_path):
    out = tmp_path / "sweep.csv"
    rc = run(
        "boundary", "--case", case_path("case9"),
        "--load-buses", "5,7", "--directions", "4",
        "--alpha", "1.5", "--out", out,
    )
    assert rc == cli.EXIT_OK
    rows = [l.split(",") for l in out.read_text().splitlines()[1:]]
    col = SWEEP_COLUMNS.index("V_appx_cal")
    raw = SWEEP_COLUMNS.index("V_appx_raw")
    v0 = SWEEP_COLUMNS.index("V0")
    for r in rows:
        if r[SWEEP_COLUMNS.index("status")] in ("OK", "NonConservativeSign"):
            want = float(r[v0]) + 1.5 * (float(r[raw]) - float(r[v0]))
            assert float(r[col]) == pytest.approx(want, abs=1e-12)


def test_boundary_alpha_list_wrong_size(capsys):
    rc = run(
        "boundary", "--case", case_path("case9"),
        "--load-buses", "5,7", "--directions", "4", "--alpha", "1.0,2.0",
    )
    assert rc == cli.EXIT_INPUT
    assert "--alpha list" in capsys.readouterr().err


def test_boundary_alpha_garbage_rejected(capsys):
    rc = run(
        "boundary", "--case", case_path("case9"),
        "--load-buses", "5,7", "--directions", "4", "--alpha", "sideways",
    )
    assert rc == cli.EXIT_INPUT
    assert "--alpha" in capsys.readouterr().err


def test_boundary_pf_count_mismatch(capsys):
    rc = run(
        "boundary", "--case", case_path("case9"),
        "--load-buses", "5,7", "--pf", "0.9,0.95,0.99", "--directions", "4",
    )
    assert rc == cli.EXIT_INPUT
    assert "--pf" in capsys.readouterr().err


def test_boundary_3d_sweep_runs(tmp_path):
    out = tmp_path / "sweep3.csv"
    rc = run(
        "boundary", "--case", case_path("case14"),
        "--load-buses", "4,9,14", "--directions", "4", "--delta-count", "3",
        "--out", out,
    )
    assert rc == cli.EXIT_OK
    lines = out.read_text().splitlines()
    assert len(lines) == 1 + 4 * 3 * 9  # n_beta * n_delta * npq
    deltas = {l.split(",")[2] for l in lines[1:]}
    assert "0" in deltas and len(deltas) == 3


# ---------------------------------------------------------------- cpf


def test_cpf_trace_csv(tmp_path, capsys):
    out = tmp_path / "trace.csv"
    rc = run(
        "cpf", "--case", case_path("case2"),
        "--load-buses", "2", "--pf", "1.0", "--out", out,
    )
    assert rc == cli.EXIT_OK
    text = capsys.readouterr().out
    assert "nose at lambda*" in text
    lines = out.read_text().splitlines()
    assert lines[0] == "direction_id,step,lambda,sigma_min,V_2"
    assert len(lines) >= 6  # header + several continuation steps
    lam = [float(l.split(",")[2]) for l in lines[1:]]
    assert max(lam) == pytest.approx(0.5, abs=1e-4)


def test_cpf_beta_selects_ray(capsys):
    rc = run(
        "cpf", "--case", case_path("case9"),
        "--load-buses", "5,7", "--beta", "0.7853981633974483",
    )
    assert rc == cli.EXIT_OK
    assert "nose at lambda*" in capsys.readouterr().out


# ---------------------------------------------------------------- compare


def test_compare_report(tmp_path, capsys):
    out = tmp_path / "compare.json"
    rc = run(
        "compare", "--case", case_path("case9"),
        "--load-buses", "5,7", "--directions", "6", "--out", out,
    )
    assert rc == cli.EXIT_OK
    text = capsys.readouterr().out
    assert "CPF sweep (s)" in text
    assert "speedup (per-direction)" in text
    payload = json.loads(out.read_text())
    assert payload["speedup_per_direction"] > 1.0
    per_bus = payload["gap_statistics"]["per_bus"]
    assert len(per_bus) == 6
    for s in per_bus.values():
        assert np.isfinite(s["mean_gap"])


def test_compare_rejects_three_bus_spec(capsys):
    rc = run(
        "compare", "--case", case_path("case9"),
        "--load-buses", "5,7,9", "--directions", "4",
    )
    assert rc == cli.EXIT_INPUT
    assert "two load buses" in capsys.readouterr().err


# ---------------------------------------------------------------- module entry


def test_module_entry_point():
    import subprocess
    import sys

    proc = subprocess.run(
        [sys.executable, "-m", "geoflow", "solve", "--case", str(case_path("case2"))],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "solved" in proc.stdout

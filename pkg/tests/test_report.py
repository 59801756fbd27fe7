"""Delimited writers, JSON mirrors, and figure rendering."""

from __future__ import annotations

import json

import numpy as np
import pytest

from geoflow.continuation import cpf_trace
from geoflow.geometry import build_bundle
from geoflow.powerflow import InjectionVector, newton_solve, scheduled_injection
from geoflow.report import (
    SWEEP_COLUMNS,
    render_sweep_figures,
    sweep_rows,
    tensors_payload,
    write_sweep_csv,
    write_sweep_json,
    write_tensors_json,
    write_trace_csv,
)
from geoflow.sweep import VaryingSpec, directions_2d, directions_3d, sweep_boundary

SPEC9 = VaryingSpec(load_buses=((5, 0.95), (7, 0.95)))


@pytest.fixture(scope="module")
def swept9(case9):
    sol = newton_solve(case9, scheduled_injection(case9))
    return sweep_boundary(case9, sol, SPEC9, directions_2d(6), with_cpf=True)


def test_sweep_rows_shape_and_order(swept9, case9):
    rows = sweep_rows(swept9)
    assert len(rows) == 6 * case9.npq
    assert len(rows[0]) == len(SWEEP_COLUMNS)
    # direction-major, bus-minor ordering
    assert [r[0] for r in rows[: case9.npq]] == [0] * case9.npq
    assert [r[3] for r in rows[: case9.npq]] == list(case9.pq_bus_ids)


def test_csv_is_deterministic_and_parseable(swept9, tmp_path):
    p1 = tmp_path / "a.csv"
    p2 = tmp_path / "b.csv"
    write_sweep_csv(swept9, p1)
    write_sweep_csv(swept9, p2)
    assert p1.read_bytes() == p2.read_bytes()
    lines = p1.read_text().strip().split("\n")
    assert lines[0] == ",".join(SWEEP_COLUMNS)
    assert len(lines) == 1 + len(sweep_rows(swept9))
    cell = lines[1].split(",")[4]
    assert float(cell) == swept9.v0[0, 0]  # 17 significant digits round-trip


def test_csv_blank_cells_for_missing_values(case9, tmp_path):
    sol = newton_solve(case9, scheduled_injection(case9))
    res = sweep_boundary(case9, sol, SPEC9, directions_2d(3))  # no CPF: NaN noses
    path = tmp_path / "dry.csv"
    write_sweep_csv(res, path)
    row = path.read_text().strip().split("\n")[1].split(",")
    cols = dict(zip(SWEEP_COLUMNS, row))
    assert cols["V_nose"] == ""
    assert cols["gap_raw"] == ""
    assert cols["delta"] == ""
    assert cols["status"] in ("OK", "FlatDirection", "DegenerateQuadratic", "NonConservativeSign")


def test_json_mirror_round_trips(swept9, tmp_path):
    path = tmp_path / "sweep.json"
    write_sweep_json(swept9, path, meta={"case": "case9"})
    payload = json.loads(path.read_text())
    assert payload["columns"] == list(SWEEP_COLUMNS)
    assert payload["meta"]["case"] == "case9"
    assert payload["meta"]["n_directions"] == 6
    assert len(payload["rows"]) == len(sweep_rows(swept9))
    assert all(len(r) == len(SWEEP_COLUMNS) for r in payload["rows"])
    # NaN must not leak into JSON
    assert "NaN" not in path.read_text()


def test_trace_csv(case9, tmp_path):
    d = np.zeros(case9.n)
    d[case9.position(5) - 1] = -1.0
    trace = cpf_trace(case9, scheduled_injection(case9), d)
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, path, direction_id=3)
    lines = path.read_text().strip().split("\n")
    header = lines[0].split(",")
    assert header[:4] == ["direction_id", "step", "lambda", "sigma_min"]
    assert header[4:] == [f"V_{b}" for b in case9.pq_bus_ids]
    assert len(lines) == 1 + len(trace.lambdas)
    assert lines[1].split(",")[0] == "3"
    assert float(lines[1].split(",")[2]) == 0.0


def test_tensors_payload_and_file(case9, tmp_path):
    sol = newton_solve(case9, scheduled_injection(case9))
    bundle = build_bundle(case9, sol)
    payload = tensors_payload(bundle)
    assert payload["n"] == case9.n
    assert payload["meta"]["gginv_max_abs_dev"] < 1e-10
    g = np.array(payload["g"])
    assert g.shape == (case9.n, case9.n)
    for e in payload["gamma2"][:50]:
        assert e["i"] <= e["j"]
        assert e["value"] == bundle.gamma2[e["k"], e["i"], e["j"]]
    path = tmp_path / "tensors.json"
    write_tensors_json(bundle, path)
    assert json.loads(path.read_text())["n"] == case9.n


def test_render_figures_one_png_per_bus(swept9, case9, tmp_path):
    written = render_sweep_figures(swept9, tmp_path / "figs")
    assert len(written) == case9.npq
    for p in written:
        assert p.endswith(".png")
        data = (tmp_path / "figs").joinpath(p.split("/")[-1]).read_bytes()
        assert data[:8] == b"\x89PNG\r\n\x1a\n"
        assert len(data) > 5000


def test_render_figures_skips_3d(case14, tmp_path):
    spec = VaryingSpec(
        load_buses=((4, 0.95), (9, 0.95), (11, 0.95)),
        renewable_buses=((3, 4.0), (6, 4.0), (2, 4.0)),
    )
    sol = newton_solve(case14, scheduled_injection(case14))
    res = sweep_boundary(case14, sol, spec, directions_3d(4, 3))
    assert render_sweep_figures(res, tmp_path / "figs3") == []

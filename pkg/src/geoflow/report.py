"""Deterministic delimited output, JSON mirrors, and figure rendering.

Every float written to CSV goes through a fixed 17-significant-digit
format so repeated runs (and runs with different thread counts) produce
byte-identical files.  Figures are optional static PNG renderings of the
same data, written next to the delimited output.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .continuation import ContinuationTrace
from .geometry import GeometryBundle
from .sweep import SweepResult

SWEEP_COLUMNS = (
    "direction_id",
    "beta",
    "delta",
    "bus",
    "V0",
    "V_appx_raw",
    "V_appx_cal",
    "V_nose",
    "gap_raw",
    "gap_cal",
    "status",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    v = float(value)
    if np.isnan(v):
        return ""
    return format(v, ".17g")


def sweep_rows(result: SweepResult) -> list[tuple]:
    """Flatten a sweep to (direction, bus) rows in deterministic order."""
    rows = []
    gap_raw = result.gap_raw
    gap_cal = result.gap_cal
    for i, direction in enumerate(result.directions):
        for k, bus in enumerate(result.bus_ids):
            rows.append(
                (
                    direction.id,
                    direction.beta,
                    direction.delta,
                    bus,
                    result.v0[i, k],
                    result.v_appx_raw[i, k],
                    result.v_appx_cal[i, k],
                    result.v_nose[i, k],
                    gap_raw[i, k],
                    gap_cal[i, k],
                    result.status[i, k],
                )
            )
    return rows


def format_sweep_row(row: tuple) -> str:
    did, beta, delta, bus, *floats, status = row
    cells = [str(did), _fmt(beta), _fmt(delta), str(bus)]
    cells += [_fmt(v) for v in floats]
    cells.append(str(status))
    return ",".join(cells)


def write_sweep_csv(result: SweepResult, path) -> None:
    lines = [",".join(SWEEP_COLUMNS)]
    lines += [format_sweep_row(r) for r in sweep_rows(result)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_sweep_json(result: SweepResult, path, meta: dict | None = None) -> None:
    payload = {
        "meta": {
            **(meta or {}),
            "n_directions": len(result.directions),
            "bus_ids": list(result.bus_ids),
            "alpha": [float(a) for a in result.alpha],
            "cpf_halt": result.cpf_halt,
            "timings": result.timings,
        },
        "columns": list(SWEEP_COLUMNS),
        "rows": [
            [None if isinstance(c, float) and np.isnan(c) else c for c in row]
            for row in sweep_rows(result)
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def write_trace_csv(trace: ContinuationTrace, path, direction_id: int = 0) -> None:
    """Continuation trace as rows of lambda, sigma_min, and PQ voltages."""
    model = trace.model
    header = ["direction_id", "step", "lambda", "sigma_min"]
    header += [f"V_{bus}" for bus in model.pq_bus_ids]
    lines = [",".join(header)]
    for k in range(len(trace.lambdas)):
        cells = [str(direction_id), str(k), _fmt(trace.lambdas[k]), _fmt(trace.sigma_mins[k])]
        cells += [_fmt(v) for v in trace.xs[k, : model.npq]]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def tensors_payload(bundle: GeometryBundle) -> dict:
    """JSON payload with the metric pair and the symmetric connection triples."""
    n = bundle.g.shape[0]
    dev = float(np.max(np.abs(bundle.g @ bundle.g_inv - np.eye(n))))
    entries = []
    gamma = bundle.gamma2
    for k in range(n):
        for i in range(n):
            for j in range(i, n):
                v = gamma[k, i, j]
                if v != 0.0:
                    entries.append({"k": k, "i": i, "j": j, "value": v})
    return {
        "n": n,
        "meta": {
            "sigma_min": bundle.sigma_min,
            "gginv_max_abs_dev": dev,
            "gamma2_entries": len(entries),
        },
        "g": bundle.g.tolist(),
        "g_inv": bundle.g_inv.tolist(),
        "gamma2": entries,
    }


def write_tensors_json(bundle: GeometryBundle, path) -> None:
    Path(path).write_text(json.dumps(tensors_payload(bundle)) + "\n", encoding="utf-8")


def render_sweep_figures(result: SweepResult, out_dir, prefix: str = "boundary") -> list[str]:
    """Static polar plots of the swept boundary, one PNG per PQ bus.

    Only 2D sweeps are rendered (3D grids would need one figure per delta
    slice); returns the written paths.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if any(d.delta is not None for d in result.directions):
        return []
    betas = np.array([d.beta for d in result.directions])
    order = np.argsort(betas)
    written = []
    for k, bus in enumerate(result.bus_ids):
        fig, ax = plt.subplots(subplot_kw={"projection": "polar"}, figsize=(5.4, 5.4))
        ax.plot(betas[order], result.v0[order, k], color="0.3", lw=1.0, label="operating point")
        if not np.all(np.isnan(result.v_nose[:, k])):
            ax.plot(betas[order], result.v_nose[order, k], "b-", lw=1.2, label="nose (CPF)")
        ax.plot(betas[order], result.v_appx_raw[order, k], "g--", lw=1.2, label="estimate")
        if not np.allclose(result.alpha, 1.0):
            ax.plot(
                betas[order], result.v_appx_cal[order, k], "r-.", lw=1.2, label="calibrated"
            )
        ax.set_title(f"bus {bus} boundary voltage")
        ax.set_rlabel_position(135)
        ax.legend(loc="lower left", bbox_to_anchor=(0.98, 0.02), fontsize=8)
        path = out_dir / f"{prefix}_bus{bus}.png"
        fig.savefig(path, bbox_inches="tight", dpi=130)
        plt.close(fig)
        written.append(str(path))
    return written

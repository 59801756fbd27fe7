"""Command-line front end.

Subcommands: solve (base power flow), tensors (metric/connection dump),
boundary (direction sweep with optional CPF comparison and figures), cpf
(single continuation trace export), compare (sweep + oracle timing and
gap summary).  Case arguments are either paths or bare names resolved
against GEOFLOW_DATA (or the bundled data directory).

Exit codes: 0 success, 1 input error, 2 numerical failure, 3 partial
results (some directions failed; output still written).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import report
from .continuation import cpf_trace
from .errors import CaseError, ContinuationError, GeoflowError, PowerFlowError
from .geometry import build_bundle
from .network import Bus, BusKind, NetworkModel, load_case
from .powerflow import (
    evaluate_f,
    jacobian,
    newton_solve,
    scheduled_injection,
    singularity_metric,
)
from .sweep import (
    VaryingSpec,
    build_direction,
    calibrate_alpha,
    directions_2d,
    directions_3d,
    gap_statistics,
    sweep_boundary,
    _angle_unit_to_bus_unit,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERICAL = 2
EXIT_PARTIAL = 3


@dataclass
class RunConfig:
    """Resolved run parameters shared by the subcommand handlers."""

    case_path: Path
    subcommand: str
    spec: VaryingSpec | None = None
    n_directions: int = 180
    n_delta: int | None = None
    alpha_mode: str = "unit"  # unit | calibrated | fixed
    alpha_values: np.ndarray | None = None
    with_cpf: bool = False
    load_scale: float = 1.0
    out: Path | None = None
    fmt: str = "csv"
    threads: int = 1
    figures: Path | None = None
    beta: float = 0.0


def resolve_case(name: str) -> Path:
    """A real path wins; otherwise look in GEOFLOW_DATA, then bundled data."""
    p = Path(name)
    if p.exists():
        return p
    candidates = [name, f"{name}.txt"]
    env = os.environ.get("GEOFLOW_DATA")
    if env:
        for c in candidates:
            q = Path(env) / c
            if q.exists():
                return q
    data_root = resources.files("geoflow").joinpath("data")
    for c in candidates:
        q = Path(str(data_root.joinpath(c)))
        if q.exists():
            return q
    raise CaseError(f"cannot resolve case {name!r} (also looked in GEOFLOW_DATA and bundled data)")


def _scaled_model(model: NetworkModel, scale: float) -> NetworkModel:
    """Scale every load by the given factor; generation is left alone."""
    if scale == 1.0:
        return model
    if scale <= 0:
        raise CaseError(f"load scale must be positive, got {scale}")
    buses = []
    for b in model.buses:
        if b.kind is BusKind.PQ:
            # net = pg - pd; only the load part scales
            pg = max(b.p_inj, 0.0)
            pd = pg - b.p_inj
            buses.append(
                Bus(
                    id=b.id,
                    kind=b.kind,
                    p_inj=pg - scale * pd,
                    q_inj=scale * b.q_inj,
                    v_set=None,
                    gs=b.gs,
                    bs=b.bs,
                )
            )
        else:
            buses.append(b)
    return NetworkModel(buses, model.branches, model.base_mva)


def _parse_spec(args) -> VaryingSpec | None:
    if not args.load_buses:
        return None
    load_ids = [int(tok) for tok in args.load_buses.split(",") if tok]
    pfs = [float(tok) for tok in str(args.pf).split(",") if tok]
    if len(pfs) == 1:
        pfs = pfs * len(load_ids)
    if len(pfs) != len(load_ids):
        raise CaseError("--pf must give one value or one per load bus")
    renewables = []
    if args.renewable_buses:
        ren_ids = [int(tok) for tok in args.renewable_buses.split(",") if tok]
        rates = [float(tok) for tok in str(args.rate).split(",") if tok]
        if len(rates) == 1:
            rates = rates * len(ren_ids)
        if len(rates) != len(ren_ids):
            raise CaseError("--rate must give one value or one per renewable bus")
        renewables = list(zip(ren_ids, rates))
    return VaryingSpec(
        load_buses=tuple(zip(load_ids, pfs)), renewable_buses=tuple(renewables)
    )


def _alpha_config(args) -> tuple[str, np.ndarray | None]:
    mode = args.alpha
    if mode in ("unit", "calibrated"):
        return mode, None
    try:
        values = np.array([float(tok) for tok in mode.split(",")])
    except ValueError:
        raise CaseError(
            f"--alpha must be 'unit', 'calibrated', or a comma list of values, got {mode!r}"
        ) from None
    return "fixed", values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geoflow",
        description="Geodesic voltage-stability boundary estimation on the "
        "power-flow solution manifold, with a continuation power-flow oracle.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, sweepy=False):
        p.add_argument("--case", required=True, help="case file path or bundled name (e.g. case14)")
        p.add_argument("--load-scale", type=float, default=1.0, help="multiply all loads")
        p.add_argument("--out", help="output file (default: stdout summary only)")
        p.add_argument("--format", dest="fmt", choices=("csv", "json"), default="csv")
        if sweepy:
            p.add_argument("--load-buses", help="comma list of load-varying PQ buses")
            p.add_argument("--pf", default="0.95", help="power factor(s) for the load buses")
            p.add_argument("--renewable-buses", help="comma list of renewable buses")
            p.add_argument("--rate", default="4.0", help="rate multiplier(s) for renewables")

    p_solve = sub.add_parser("solve", help="solve the base power flow")
    common(p_solve)

    p_tensors = sub.add_parser("tensors", help="dump metric and connection at the base point")
    common(p_tensors)

    p_boundary = sub.add_parser("boundary", help="sweep boundary estimates over directions")
    common(p_boundary, sweepy=True)
    p_boundary.add_argument("--directions", type=int, default=180, help="number of beta angles")
    p_boundary.add_argument(
        "--delta-count",
        type=int,
        default=None,
        help="enable the 3D family with this many delta angles",
    )
    p_boundary.add_argument(
        "--alpha",
        default="unit",
        help="'unit', 'calibrated', or comma list of per-PQ-bus values",
    )
    p_boundary.add_argument("--with-cpf", action="store_true", help="run the CPF oracle per direction")
    p_boundary.add_argument("--threads", type=int, default=1, help="worker threads for the sweep")
    p_boundary.add_argument("--figures", help="directory for PNG renderings of the sweep")

    p_cpf = sub.add_parser("cpf", help="trace one continuation run and export it")
    common(p_cpf, sweepy=True)
    p_cpf.add_argument("--beta", type=float, default=0.0, help="direction angle in radians")

    p_compare = sub.add_parser("compare", help="estimate vs CPF: gap statistics and timings")
    common(p_compare, sweepy=True)
    p_compare.add_argument("--directions", type=int, default=180)
    p_compare.add_argument("--alpha", default="unit")
    p_compare.add_argument("--threads", type=int, default=1)
    p_compare.add_argument("--figures", help="directory for PNG renderings of the sweep")
    return parser


def _config(args) -> RunConfig:
    cfg = RunConfig(case_path=resolve_case(args.case), subcommand=args.subcommand)
    cfg.load_scale = args.load_scale
    cfg.out = Path(args.out) if args.out else None
    cfg.fmt = args.fmt
    cfg.spec = _parse_spec(args) if hasattr(args, "load_buses") else None
    if hasattr(args, "directions"):
        cfg.n_directions = args.directions
    if hasattr(args, "delta_count"):
        cfg.n_delta = args.delta_count
    if hasattr(args, "alpha"):
        cfg.alpha_mode, cfg.alpha_values = _alpha_config(args)
    if hasattr(args, "with_cpf"):
        cfg.with_cpf = args.with_cpf
    if hasattr(args, "threads"):
        cfg.threads = args.threads
    if hasattr(args, "figures") and args.figures:
        cfg.figures = Path(args.figures)
    if hasattr(args, "beta"):
        cfg.beta = args.beta
    return cfg


def cmd_solve(cfg: RunConfig) -> int:
    model = _scaled_model(load_case(cfg.case_path), cfg.load_scale)
    state = newton_solve(model, scheduled_injection(model))
    f = evaluate_f(model, state)
    target = scheduled_injection(model)
    residual = float(np.max(np.abs(f.packed - target.packed)))
    sigma = singularity_metric(jacobian(model, state))
    vm = model.v_sched.copy()
    vm[model.ng :] = state.v
    th = np.concatenate([[0.0], state.theta])
    print(f"case {cfg.case_path.name}: solved, residual {residual:.3e}, sigma_min {sigma:.6g}")
    print("bus,V,theta_rad")
    order = np.argsort(model.bus_ids)
    for k in order:
        print(f"{model.bus_ids[k]},{vm[k]:.6f},{th[k]:.6f}")
    if cfg.out:
        lines = ["bus,V,theta_rad,residual,sigma_min"]
        for k in order:
            lines.append(
                f"{model.bus_ids[k]},{format(vm[k], '.17g')},{format(th[k], '.17g')},"
                f"{format(residual, '.17g')},{format(sigma, '.17g')}"
            )
        text = "\n".join(lines) + "\n"
        if cfg.fmt == "json":
            payload = {
                "case": cfg.case_path.name,
                "residual": residual,
                "sigma_min": sigma,
                "buses": [
                    {"bus": model.bus_ids[k], "V": vm[k], "theta": th[k]} for k in order
                ],
            }
            text = json.dumps(payload, indent=1) + "\n"
        cfg.out.write_text(text, encoding="utf-8")
    return EXIT_OK


def cmd_tensors(cfg: RunConfig) -> int:
    model = _scaled_model(load_case(cfg.case_path), cfg.load_scale)
    state = newton_solve(model, scheduled_injection(model))
    bundle = build_bundle(model, state)
    payload = report.tensors_payload(bundle)
    text = json.dumps(payload) + "\n"
    if cfg.out:
        cfg.out.write_text(text, encoding="utf-8")
        print(
            f"wrote {cfg.out} (n={payload['n']}, gamma2 entries {payload['meta']['gamma2_entries']}, "
            f"identity dev {payload['meta']['gginv_max_abs_dev']:.3e})"
        )
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _require_spec(cfg: RunConfig) -> VaryingSpec:
    if cfg.spec is None:
        raise CaseError("this subcommand needs --load-buses (and optionally --renewable-buses)")
    return cfg.spec


def cmd_boundary(cfg: RunConfig) -> int:
    model = _scaled_model(load_case(cfg.case_path), cfg.load_scale)
    spec = _require_spec(cfg)
    spec.validate(model)
    state = newton_solve(model, scheduled_injection(model))
    k = len(spec.load_buses)
    if cfg.n_delta:
        if k != 3:
            raise CaseError("the 3D direction family needs exactly three load buses")
        directions = directions_3d(cfg.n_directions, cfg.n_delta)
    else:
        if k != 2:
            raise CaseError("the 2D direction family needs exactly two load buses")
        directions = directions_2d(cfg.n_directions)

    alpha = None
    if cfg.alpha_mode == "calibrated":
        alpha = calibrate_alpha(model, state, spec)
    elif cfg.alpha_mode == "fixed":
        if cfg.alpha_values.size == 1:
            alpha = np.full(model.npq, float(cfg.alpha_values[0]))
        elif cfg.alpha_values.size == model.npq:
            alpha = cfg.alpha_values
        else:
            raise CaseError(
                f"--alpha list must have one value or one per PQ bus ({model.npq}), "
                f"got {cfg.alpha_values.size}"
            )

    result = sweep_boundary(
        model,
        state,
        spec,
        directions,
        alpha=alpha,
        with_cpf=cfg.with_cpf,
        threads=cfg.threads,
    )
    failures = sum(1 for h in result.cpf_halt if h is not None and h != "NoseFound")
    t = result.timings
    print(
        f"swept {len(directions)} directions on {cfg.case_path.name}: "
        f"bundle {t['bundle_seconds']:.3f}s, estimates {t['estimate_seconds']:.3f}s, "
        f"cpf {t['cpf_seconds']:.3f}s"
    )
    if cfg.out:
        if cfg.fmt == "json":
            report.write_sweep_json(result, cfg.out, meta={"case": cfg.case_path.name})
        else:
            report.write_sweep_csv(result, cfg.out)
        print(f"wrote {cfg.out}")
    if cfg.figures:
        written = report.render_sweep_figures(result, cfg.figures)
        if written:
            print(f"rendered {len(written)} figures under {cfg.figures}")
    if cfg.with_cpf and failures:
        print(f"{failures} direction(s) ended without a nose", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_cpf(cfg: RunConfig) -> int:
    model = _scaled_model(load_case(cfg.case_path), cfg.load_scale)
    spec = _require_spec(cfg)
    spec.validate(model)
    state = newton_solve(model, scheduled_injection(model))
    k = len(spec.load_buses)
    unit = np.zeros(k)
    unit[0] = math.cos(cfg.beta)
    if k > 1:
        unit[1] = math.sin(cfg.beta)
    d = build_direction(model, spec, _angle_unit_to_bus_unit(spec, unit))
    trace = cpf_trace(model, scheduled_injection(model), d, x0=state)
    print(
        f"traced {len(trace.lambdas)} points, halt {trace.halt_reason}, "
        f"lambda_max {np.max(trace.lambdas):.6g}"
    )
    if trace.nose is not None:
        print(f"nose at lambda* {trace.nose[0]:.8g}, sigma_min {trace.nose_sigma:.3e}")
    if cfg.out:
        report.write_trace_csv(trace, cfg.out)
        print(f"wrote {cfg.out}")
    if trace.nose is None:
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_compare(cfg: RunConfig) -> int:
    cfg.with_cpf = True
    model = _scaled_model(load_case(cfg.case_path), cfg.load_scale)
    spec = _require_spec(cfg)
    spec.validate(model)
    state = newton_solve(model, scheduled_injection(model))
    if len(spec.load_buses) != 2:
        raise CaseError("compare uses the 2D direction family (two load buses)")
    directions = directions_2d(cfg.n_directions)
    alpha = None
    if cfg.alpha_mode == "calibrated":
        alpha = calibrate_alpha(model, state, spec)
    elif cfg.alpha_mode == "fixed":
        alpha = np.broadcast_to(cfg.alpha_values, (model.npq,)).copy()
    result = sweep_boundary(
        model, state, spec, directions, alpha=alpha, with_cpf=True, threads=cfg.threads
    )
    stats = gap_statistics(result, which="raw")
    t = result.timings
    geometric = t["bundle_seconds"] + t["estimate_seconds"]
    speedup = t["cpf_seconds"] / t["estimate_seconds"] if t["estimate_seconds"] > 0 else float("inf")

    print(f"case {cfg.case_path.name}, {cfg.n_directions} directions")
    print(f"{'':24s} {'this run':>14s}")
    print(f"{'CPF sweep (s)':24s} {t['cpf_seconds']:>14.4f}")
    print(f"{'proposed sweep (s)':24s} {t['estimate_seconds']:>14.4f}")
    print(f"{'bundle build (s)':24s} {t['bundle_seconds']:>14.4f}")
    print(f"{'speedup (per-direction)':24s} {speedup:>14.1f}")
    print(f"{'speedup (incl. bundle)':24s} {t['cpf_seconds'] / geometric:>14.1f}")
    print("bus,mean_gap,std_gap,max_abs_gap,sign_consistency,n")
    for bus, s in stats["per_bus"].items():
        print(
            f"{bus},{s['mean_gap']:.6g},{s['std_gap']:.6g},{s['max_abs_gap']:.6g},"
            f"{s['sign_consistency']:.4f},{s['n']}"
        )
    if cfg.out:
        payload = {
            "case": cfg.case_path.name,
            "timings": t,
            "speedup_per_direction": speedup,
            "gap_statistics": stats,
        }
        cfg.out.write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
        print(f"wrote {cfg.out}")
    if cfg.figures:
        report.render_sweep_figures(result, cfg.figures)
    if stats["cpf_failures"]:
        return EXIT_PARTIAL
    return EXIT_OK


HANDLERS = {
    "solve": cmd_solve,
    "tensors": cmd_tensors,
    "boundary": cmd_boundary,
    "cpf": cmd_cpf,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config(args)
        return HANDLERS[args.subcommand](cfg)
    except CaseError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (PowerFlowError, ContinuationError, GeoflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

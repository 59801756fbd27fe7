"""Direction sweeps of the boundary estimate, with an optional CPF oracle.

Sign convention, used everywhere a sweep component meets a bus: a
positive component u means GROWING load, i.e. the net active injection
moves by -u at a load bus (and its reactive injection by -u tan(phi) per
the bus power factor), while a renewable bus adds +rate * u of active
injection.  Directions therefore point at increasing stress for positive
components, matching what the continuation tracer treats as loading.

Angle families map onto the varying buses positionally: component k of a
unit vector drives load bus k and renewable bus k together (renewables at
their rate multiplier), so the renewable pattern mirrors the load pattern
across the same angles.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .continuation import ContinuationError, CpfOptions, cpf_trace
from .errors import PowerFlowError
from .geometry import (
    EstimateStatus,
    GeometryBundle,
    _quadratic_extremum,
    build_bundle,
    boundary_estimate,
    geodesic_quadratic,
    initial_velocity,
)
from .network import BusKind, NetworkModel
from .powerflow import InjectionVector, StateVector, _as_packed, scheduled_injection


@dataclass(frozen=True)
class VaryingSpec:
    """Which buses vary: load buses with power factors, renewables with rates."""

    load_buses: tuple[tuple[int, float], ...]
    renewable_buses: tuple[tuple[int, float], ...] = ()

    def validate(self, model: NetworkModel) -> None:
        if not self.load_buses:
            raise ValueError("at least one load bus is required")
        for bus_id, pf in self.load_buses:
            pos = model.position(bus_id)
            if model.buses[pos].kind is not BusKind.PQ:
                raise ValueError(f"load bus {bus_id} must be a PQ bus")
            if not 0.0 < pf <= 1.0:
                raise ValueError(f"power factor at bus {bus_id} must be in (0, 1], got {pf}")
        for bus_id, rate in self.renewable_buses:
            pos = model.position(bus_id)
            if model.buses[pos].kind is BusKind.SLACK:
                raise ValueError(f"renewable bus {bus_id} must not be the slack bus")
            if rate <= 0.0:
                raise ValueError(f"renewable rate at bus {bus_id} must be positive, got {rate}")
        if self.renewable_buses and len(self.renewable_buses) != len(self.load_buses):
            raise ValueError(
                "renewable bus list must be empty or match the load bus list in length"
            )

    @property
    def n_varying(self) -> int:
        return len(self.load_buses) + len(self.renewable_buses)


@dataclass(frozen=True)
class Direction:
    """One sweep direction: its angles and the unit vector in angle space."""

    id: int
    beta: float
    delta: float | None
    unit: np.ndarray


def directions_2d(n: int) -> list[Direction]:
    """n evenly spaced angles over the circle, unit pairs (cos b, sin b)."""
    if n < 1:
        raise ValueError("need at least one direction")
    out = []
    for i in range(n):
        beta = 2.0 * math.pi * i / n
        out.append(
            Direction(id=i, beta=beta, delta=None, unit=np.array([math.cos(beta), math.sin(beta)]))
        )
    return out


def directions_3d(n_beta: int, n_delta: int) -> list[Direction]:
    """Product grid over the sphere; the delta = 0 slice matches directions_2d.

    beta spans [0, 2 pi) with n_beta points; delta spans [-pi/2, pi/2]
    inclusive with n_delta points.  Unit triples are
    (cos b cos d, sin b cos d, sin d).
    """
    if n_beta < 1 or n_delta < 1:
        raise ValueError("need at least one direction per angle")
    deltas = np.linspace(-0.5 * math.pi, 0.5 * math.pi, n_delta) if n_delta > 1 else np.array([0.0])
    out = []
    for idx_d, delta in enumerate(deltas):
        cd, sd = math.cos(delta), math.sin(delta)
        for i in range(n_beta):
            beta = 2.0 * math.pi * i / n_beta
            out.append(
                Direction(
                    id=idx_d * n_beta + i,
                    beta=beta,
                    delta=float(delta),
                    unit=np.array([math.cos(beta) * cd, math.sin(beta) * cd, sd]),
                )
            )
    return out


def build_direction(
    model: NetworkModel, spec: VaryingSpec, unit_vector: np.ndarray
) -> InjectionVector:
    """Injection-space direction for one unit vector over the varying buses.

    unit_vector lists one component per varying bus, load buses first then
    renewable buses, in spec order.  Load component u adds (-u, -u tan phi)
    to the bus (P, Q) targets; renewable component u adds +rate * u of
    active power.  Linear in unit_vector by construction.
    """
    spec.validate(model)
    u = np.asarray(unit_vector, dtype=float)
    if u.shape != (spec.n_varying,):
        raise ValueError(
            f"unit vector must have {spec.n_varying} components, got {u.shape}"
        )
    p = np.zeros(model.nb - 1)
    q = np.zeros(model.npq)
    for comp, (bus_id, pf) in zip(u, spec.load_buses):
        pos = model.position(bus_id)
        p[pos - 1] += -comp
        q[pos - model.ng] += -comp * math.tan(math.acos(pf))
    for comp, (bus_id, rate) in zip(u[len(spec.load_buses):], spec.renewable_buses):
        pos = model.position(bus_id)
        p[pos - 1] += rate * comp
    return InjectionVector(p=p, q=q)


def _angle_unit_to_bus_unit(spec: VaryingSpec, unit: np.ndarray) -> np.ndarray:
    """Tile angle components over the bus groups (loads, then renewables).

    Component k of the angle unit drives load bus k and renewable bus k
    off the same angle, with the renewable's NET INJECTION moving the same
    way as the load bus's: a component that grows load (injection down)
    also pulls its paired renewable down, which is the worst-case pairing
    for voltage stability.  Since a positive renewable component means
    growing output, the renewable slots carry the negated angle component.
    """
    if len(unit) != len(spec.load_buses):
        raise ValueError(
            f"direction has {len(unit)} angle components but "
            f"{len(spec.load_buses)} load buses are varying"
        )
    unit = np.asarray(unit, dtype=float)
    if spec.renewable_buses:
        return np.concatenate([unit, -unit])
    return unit


@dataclass
class SweepResult:
    """Per-direction, per-PQ-bus sweep output.

    Arrays are shaped (n_directions, n_pq); v_nose is NaN where no nose
    was available (CPF off, failed, or still monotone at halt).
    """

    bus_ids: tuple[int, ...]
    directions: list[Direction]
    v0: np.ndarray
    v_appx_raw: np.ndarray
    v_appx_cal: np.ndarray
    v_nose: np.ndarray
    status: np.ndarray  # EstimateStatus value strings, shape (n_directions, n_pq)
    cpf_halt: list[str | None]
    alpha: np.ndarray
    timings: dict

    @property
    def gap_raw(self) -> np.ndarray:
        return self.v_appx_raw - self.v_nose

    @property
    def gap_cal(self) -> np.ndarray:
        return self.v_appx_cal - self.v_nose

    @property
    def ok_mask(self) -> np.ndarray:
        return self.status == EstimateStatus.OK.value


def calibrate_alpha(
    model: NetworkModel,
    x0: StateVector | np.ndarray,
    spec: VaryingSpec,
    bundle: GeometryBundle | None = None,
    beta: float = 0.0,
    cpf_opts: CpfOptions = CpfOptions(),
) -> np.ndarray:
    """Per-PQ-bus scale factors from one calibration direction (default beta 0).

    alpha_k = (V_nose_k - V_k(0)) / (V_appx_k - V_k(0)) with the unscaled
    estimate in the denominator; buses where either excursion is too small
    to resolve, or where the ratio comes out nonpositive or non-finite,
    fall back to 1.
    """
    spec.validate(model)
    if bundle is None:
        bundle = build_bundle(model, x0)
    k = len(spec.load_buses)
    unit = np.zeros(k)
    unit[0] = math.cos(beta)
    if k > 1:
        unit[1] = math.sin(beta)
    d = build_direction(model, spec, _angle_unit_to_bus_unit(spec, unit))
    seed = initial_velocity(bundle, d, label=f"calibration beta={beta:g}")
    est = boundary_estimate(geodesic_quadratic(bundle, seed), alpha=1.0)

    trace = cpf_trace(model, scheduled_injection(model), d, x0=x0, opts=cpf_opts)
    if trace.nose is None:
        raise ContinuationError(
            "calibration direction produced no nose point; cannot calibrate"
        )
    v_nose = trace.nose[1].v
    alpha = np.ones(model.npq)
    for i, status in enumerate(est.status):
        if status is not EstimateStatus.OK:
            continue
        denom = est.v_appx[i] - est.v0[i]
        numer = v_nose[i] - est.v0[i]
        if abs(denom) < 1e-9:
            continue
        ratio = numer / denom
        if np.isfinite(ratio) and ratio > 0.0:
            alpha[i] = ratio
    return alpha


def sweep_boundary(
    model: NetworkModel,
    x0: StateVector | np.ndarray,
    spec: VaryingSpec,
    directions: list[Direction],
    alpha=None,
    with_cpf: bool = False,
    threads: int = 1,
    cpf_opts: CpfOptions = CpfOptions(),
) -> SweepResult:
    """Boundary estimates for every direction, sharing one geometry bundle.

    The bundle is built exactly once and the per-direction geometry
    (factored solve, speed normalization, curvature contraction, boundary
    formula) runs batched across all directions, which is where the
    speedup over the continuation oracle comes from.  With with_cpf=True
    a full continuation trace then runs per direction and its refined
    nose voltages land in v_nose.  Per-direction CPF failures are
    recorded and the sweep continues (see cpf_halt).  Worker threads only
    parallelize the CPF traces over the immutable model, writing into
    preallocated per-direction slots, so the output is identical for any
    thread count.
    """
    spec.validate(model)
    x0p = _as_packed(x0)
    t0 = time.perf_counter()
    bundle = build_bundle(model, x0p)
    bundle_seconds = time.perf_counter() - t0

    npq = model.npq
    ndir = len(directions)
    if alpha is None:
        alpha_arr = None
    else:
        alpha_arr = np.broadcast_to(np.asarray(alpha, dtype=float), (npq,)).copy()
        if np.any(alpha_arr <= 0):
            raise ValueError("alpha must be positive")

    base = scheduled_injection(model)

    v_nose = np.full((ndir, npq), np.nan)
    cpf_halt: list[str | None] = [None] * ndir
    cpf_seconds = np.zeros(ndir)

    t_est = time.perf_counter()
    if ndir:
        if bundle.sigma_min < 1e-10:
            raise PowerFlowError(
                f"Jacobian is numerically singular (sigma_min {bundle.sigma_min:.3e})"
            )
        # all direction vectors at once: unit angles -> injection space is linear
        k = directions[0].unit.size
        tmat = np.stack(
            [
                build_direction(
                    model, spec, _angle_unit_to_bus_unit(spec, row)
                ).packed
                for row in np.eye(k)
            ]
        )
        units = np.stack([d.unit for d in directions])
        dmat = units @ tmat  # (ndir, n)
        w = scipy.linalg.lu_solve(bundle.lu, dmat.T, check_finite=False)
        speed2 = np.einsum("id,id->d", w, bundle.g @ w)
        if not np.all(speed2 > 0):
            raise ValueError("sweep contains an identically zero direction")
        xd = w / np.sqrt(speed2)  # ambient unit speed, one column per direction
        a = np.tile(x0p[:npq], (ndir, 1))
        bco = xd[:npq].T.copy()
        cco = np.einsum("kij,id,jd->dk", bundle.gamma2, xd, xd)[:, :npq]
        v_raw, _, flat, curved = _quadratic_extremum(a, bco, cco, np.ones((ndir, npq)))
        if alpha_arr is None:
            v_cal = v_raw.copy()
        else:
            v_cal, _, _, _ = _quadratic_extremum(
                a, bco, cco, np.broadcast_to(alpha_arr, (ndir, npq))
            )
        status = np.where(
            flat,
            EstimateStatus.FLAT_DIRECTION.value,
            np.where(
                ~curved,
                EstimateStatus.DEGENERATE_QUADRATIC.value,
                np.where(
                    cco > 0,
                    EstimateStatus.OK.value,
                    EstimateStatus.NON_CONSERVATIVE_SIGN.value,
                ),
            ),
        ).astype(object)
        v0 = a.copy()
    else:
        dmat = np.zeros((0, model.n))
        v0 = np.zeros((0, npq))
        v_raw = np.zeros((0, npq))
        v_cal = np.zeros((0, npq))
        status = np.full((0, npq), "", dtype=object)
    estimate_seconds = time.perf_counter() - t_est

    def run_cpf(idx: int) -> None:
        t_cpf = time.perf_counter()
        try:
            trace = cpf_trace(model, base, dmat[idx], x0=x0p, opts=cpf_opts)
        except (ContinuationError, PowerFlowError) as exc:
            cpf_halt[idx] = f"Error: {exc}"
        else:
            cpf_halt[idx] = trace.halt_reason
            if trace.nose is not None:
                v_nose[idx] = trace.nose[1].v
        cpf_seconds[idx] = time.perf_counter() - t_cpf

    t0 = time.perf_counter()
    if with_cpf:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(run_cpf, range(ndir)))
        else:
            for idx in range(ndir):
                run_cpf(idx)
    wall_seconds = time.perf_counter() - t0 + estimate_seconds + bundle_seconds

    return SweepResult(
        bus_ids=model.pq_bus_ids,
        directions=list(directions),
        v0=v0,
        v_appx_raw=v_raw,
        v_appx_cal=v_cal,
        v_nose=v_nose,
        status=status,
        cpf_halt=cpf_halt,
        alpha=np.ones(npq) if alpha_arr is None else alpha_arr,
        timings={
            "bundle_seconds": bundle_seconds,
            "estimate_seconds": estimate_seconds,
            "cpf_seconds": float(np.sum(cpf_seconds)),
            "wall_seconds": wall_seconds,
        },
    )


def gap_statistics(result: SweepResult, which: str = "raw") -> dict:
    """Per-bus gap statistics over rows with an OK estimate and a nose.

    Returns per-bus mean/std/max-abs gap and the sign-consistency
    fraction (share of rows whose gap carries the majority sign), plus
    estimate status counts and CPF failure counts across all rows.
    """
    if which not in ("raw", "cal"):
        raise ValueError("which must be 'raw' or 'cal'")
    gaps = result.gap_raw if which == "raw" else result.gap_cal
    if np.all(np.isnan(result.v_nose)):
        raise ValueError("no nose data in sweep result; run with CPF enabled")
    valid = result.ok_mask & ~np.isnan(gaps)
    per_bus = {}
    for k, bus_id in enumerate(result.bus_ids):
        col = gaps[valid[:, k], k]
        if col.size == 0:
            per_bus[bus_id] = {
                "n": 0,
                "mean_gap": float("nan"),
                "std_gap": float("nan"),
                "max_abs_gap": float("nan"),
                "sign_consistency": float("nan"),
            }
            continue
        n_pos = int(np.sum(col >= 0.0))
        per_bus[bus_id] = {
            "n": int(col.size),
            "mean_gap": float(np.mean(col)),
            "std_gap": float(np.std(col)),
            "max_abs_gap": float(np.max(np.abs(col))),
            "sign_consistency": max(n_pos, col.size - n_pos) / col.size,
        }
    unique, counts = np.unique(result.status.astype(str), return_counts=True)
    return {
        "per_bus": per_bus,
        "status_counts": dict(zip(unique.tolist(), counts.tolist())),
        "cpf_failures": sum(
            1 for h in result.cpf_halt if h is not None and h != "NoseFound"
        ),
        "n_directions": len(result.directions),
    }

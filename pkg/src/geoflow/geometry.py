"""Riemannian geometry of the power-flow solution manifold.

The solution manifold is the graph of the power-flow map: the embedding
r(X) = (F(X), X) sends a state into R^{2n}.  Its tangent vectors stack the
Jacobian over the identity, r_i = (J[:, i], e_i), so the induced metric is

    g_ij = <r_i, r_j> = (J^T J)_ij + delta_ij,

symmetric positive definite everywhere (eigenvalues sigma_k^2 + 1).  The
dual tangent basis is never materialized; only the inverse metric enters
downstream formulas.  Because the identity block of the embedding has no
second derivative, the lowered connection coefficients reduce to

    Gamma1[i, j, k] = <d r_i / dX_j, r_k> = sum_m H[m, i, j] J[m, k],

and raising the last index with the inverse metric gives the second-kind
symbols Gamma2[k, i, j], the tangent-space components of the embedding's
second derivatives.  Geodesics of this metric obey

    X''_k = -sum_ij Gamma2[k, i, j] X'_i X'_j.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.linalg

from .errors import GeodesicError, PowerFlowError
from .network import NetworkModel
from .powerflow import (
    HessianTensor,
    InjectionVector,
    StateVector,
    _as_packed,
    _jacobian_packed,
    hessian,
    singularity_metric,
)


def covariant_metric(j: np.ndarray) -> np.ndarray:
    """Induced metric J^T J + I of the graph embedding (see module docstring)."""
    j = np.asarray(j, dtype=float)
    g = j.T @ j
    g[np.diag_indices_from(g)] += 1.0
    return g


def contravariant_metric(g: np.ndarray) -> np.ndarray:
    """Inverse metric via a Cholesky solve against the identity.

    The metric has unit lower spectral bound (eigenvalues sigma^2 + 1), so
    the plain Cholesky solve already sits near the float64 floor; post-hoc
    symmetrization or refinement only stirs the rounding error around.
    """
    g = np.asarray(g, dtype=float)
    try:
        cf = scipy.linalg.cho_factor(g, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise PowerFlowError(f"metric is not positive definite: {exc}") from None
    return scipy.linalg.cho_solve(cf, np.eye(g.shape[0]), check_finite=False)


def christoffel_first(h, j: np.ndarray) -> np.ndarray:
    """Lowered connection coefficients Gamma1[i, j, k] = sum_m H[m,i,j] J[m,k]."""
    j = np.asarray(j, dtype=float)
    n = j.shape[1]
    if isinstance(h, HessianTensor):
        gamma = np.zeros((n, n, n))
        off = h.i != h.j
        ii = np.concatenate([h.i, h.j[off]])
        jj = np.concatenate([h.j, h.i[off]])
        contrib = h.values[:, None] * j[h.m, :]
        contrib = np.concatenate([contrib, contrib[off]])
        np.add.at(gamma, (ii, jj), contrib)
        return gamma
    return np.einsum("mij,mk->ijk", np.asarray(h, dtype=float), j)


def christoffel_second(g_inv: np.ndarray, gamma1: np.ndarray) -> np.ndarray:
    """Raise the last index: Gamma2[k, i, j] = sum_l g_inv[k, l] Gamma1[i, j, l]."""
    return np.einsum("kl,ijl->kij", g_inv, gamma1)


@dataclass(frozen=True)
class GeometryBundle:
    """Everything geometric at one operating point.

    Immutable; built once per operating point and shared by all direction
    evaluations (the Jacobian keeps a cached LU factorization for the
    repeated direction solves).
    """

    model: NetworkModel
    x0: np.ndarray
    j: np.ndarray
    h: HessianTensor
    g: np.ndarray
    g_inv: np.ndarray
    gamma2: np.ndarray
    sigma_min: float
    lu: tuple

    @property
    def state(self) -> StateVector:
        return StateVector.from_packed(self.model, self.x0)


def build_bundle(model: NetworkModel, state) -> GeometryBundle:
    """Assemble J, H, both metrics, and the connection at one state."""
    x0 = _as_packed(state).copy()
    j = _jacobian_packed(model, x0)
    h = hessian(model, x0)
    g = covariant_metric(j)
    g_inv = contravariant_metric(g)
    gamma2 = christoffel_second(g_inv, christoffel_first(h, j))
    x0.setflags(write=False)
    for arr in (j, g, g_inv, gamma2):
        arr.setflags(write=False)
    return GeometryBundle(
        model=model,
        x0=x0,
        j=j,
        h=h,
        g=g,
        g_inv=g_inv,
        gamma2=gamma2,
        sigma_min=singularity_metric(j),
        lu=scipy.linalg.lu_factor(j, check_finite=False),
    )


@dataclass(frozen=True)
class GeodesicSeed:
    """Initial condition of a geodesic: state and ambient-unit-speed velocity."""

    x0: np.ndarray
    xdot0: np.ndarray
    label: str = ""


def initial_velocity(
    bundle: GeometryBundle, direction: InjectionVector | np.ndarray, label: str = ""
) -> GeodesicSeed:
    """Tangent seed whose power-space image is proportional to ``direction``.

    Solves J w = d with the bundle's cached factorization and rescales to
    unit ambient speed, w^T g w = 1, so the geodesic parameter measures
    arc length in the embedding space.
    """
    d = direction.packed if isinstance(direction, InjectionVector) else np.asarray(direction, dtype=float)
    if not np.any(d):
        raise ValueError("direction vector is identically zero")
    if bundle.sigma_min < 1e-10:
        raise PowerFlowError(
            "Jacobian is singular at the operating point; no unique seed", bundle.sigma_min
        )
    w = scipy.linalg.lu_solve(bundle.lu, d, check_finite=False)
    speed2 = float(w @ bundle.g @ w)
    return GeodesicSeed(x0=bundle.x0, xdot0=w / math.sqrt(speed2), label=label)


@dataclass(frozen=True)
class QuadraticCoefficients:
    """Per-PQ-bus Taylor data of the voltage along a geodesic.

    V_k(tau) ~ a_k + b_k tau - (tau^2 / 2) c_k, where a is the starting
    magnitude, b the V-rows of the seed velocity, and c the connection
    contracted twice with the velocity.
    """

    bus_ids: tuple[int, ...]
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray


def geodesic_quadratic(bundle: GeometryBundle, seed: GeodesicSeed) -> QuadraticCoefficients:
    """Second-order coefficients of the voltage magnitudes along the geodesic."""
    npq = bundle.model.npq
    xd = seed.xdot0
    c_full = np.einsum("kij,i,j->k", bundle.gamma2, xd, xd)
    return QuadraticCoefficients(
        bus_ids=bundle.model.pq_bus_ids,
        a=seed.x0[:npq].copy(),
        b=xd[:npq].copy(),
        c=c_full[:npq],
    )


class EstimateStatus(Enum):
    OK = "OK"
    FLAT_DIRECTION = "FlatDirection"
    DEGENERATE_QUADRATIC = "DegenerateQuadratic"
    NON_CONSERVATIVE_SIGN = "NonConservativeSign"


# slope / curvature magnitudes below these are not meaningfully resolved
FLAT_SLOPE_TOL = 1e-9
DEGENERATE_CURVATURE_TOL = 1e-12


@dataclass(frozen=True)
class BoundaryEstimate:
    """Boundary voltage estimates per PQ bus with their quality statuses.

    v_appx is NaN where the status leaves it undefined; tau_star is the
    extremal parameter b/c (NaN when the curvature is degenerate).
    """

    bus_ids: tuple[int, ...]
    v0: np.ndarray
    v_appx: np.ndarray
    tau_star: np.ndarray
    status: tuple[EstimateStatus, ...]
    alpha: np.ndarray


def _quadratic_extremum(a, b, c, alpha):
    """Shared core of the boundary formula, shape-agnostic.

    Returns (v_appx, tau_star, flat mask, curved mask).  The offset from
    the starting voltage has magnitude alpha * b^2 / (2|c|) and is applied
    on the slope side; rows with |b| below the flat tolerance keep v = a,
    rows with |c| below the curvature tolerance get NaN.
    """
    flat = np.abs(b) < FLAT_SLOPE_TOL
    curved = np.abs(c) >= DEGENERATE_CURVATURE_TOL
    tau_star = np.full(a.shape, np.nan)
    tau_star[curved] = b[curved] / c[curved]
    v_appx = np.full(a.shape, np.nan)
    v_appx[flat] = a[flat]
    ext = ~flat & curved
    v_appx[ext] = a[ext] + alpha[ext] * np.copysign(b[ext] ** 2, b[ext]) / (
        2.0 * np.abs(c[ext])
    )
    return v_appx, tau_star, flat, curved


def boundary_estimate(coeffs: QuadraticCoefficients, alpha=1.0) -> BoundaryEstimate:
    """Extremum of the per-bus voltage quadratic, scaled by alpha.

    The offset from the starting voltage is alpha * sign(b) * b^2 / (2 c)
    when the curvature points at a slope-side extremum (c > 0).  When the
    curvature opposes it (c < 0) the same magnitude is applied on the
    slope side and the bus is flagged NonConservativeSign rather than
    letting the raw formula move the voltage against its own slope.
    """
    npq = coeffs.a.size
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (npq,)).copy()
    if np.any(alpha <= 0):
        raise ValueError("alpha must be positive")
    c = coeffs.c
    v_appx, tau_star, flat, curved = _quadratic_extremum(coeffs.a, coeffs.b, c, alpha)
    status = tuple(
        EstimateStatus.FLAT_DIRECTION
        if flat[k]
        else EstimateStatus.DEGENERATE_QUADRATIC
        if not curved[k]
        else EstimateStatus.OK
        if c[k] > 0
        else EstimateStatus.NON_CONSERVATIVE_SIGN
        for k in range(npq)
    )
    return BoundaryEstimate(
        bus_ids=coeffs.bus_ids,
        v0=coeffs.a.copy(),
        v_appx=v_appx,
        tau_star=tau_star,
        status=tuple(status),
        alpha=alpha,
    )


@dataclass(frozen=True)
class GeodesicTrajectory:
    """Fixed-step geodesic integration output."""

    taus: np.ndarray
    xs: np.ndarray  # (len(taus), n) packed states
    speeds: np.ndarray  # ambient speed x'^T g x' at each point
    halt_reason: str | None

    def state(self, model: NetworkModel, k: int) -> StateVector:
        return StateVector.from_packed(model, self.xs[k])


def _gamma2_at(model: NetworkModel, x: np.ndarray) -> np.ndarray:
    j = _jacobian_packed(model, x)
    g_inv = contravariant_metric(covariant_metric(j))
    return christoffel_second(g_inv, christoffel_first(hessian(model, x), j))


def geodesic_integrate(
    model: NetworkModel,
    seed: GeodesicSeed,
    tau_max: float,
    step: float,
    sigma_floor: float = 1e-6,
    drift_tol: float = 1e-6,
) -> GeodesicTrajectory:
    """Integrate the geodesic equation with fixed-step RK4.

    The connection is re-evaluated at every stage point.  Integration
    halts early (halt_reason "singular") when the Jacobian's smallest
    singular value falls below sigma_floor; a drift of the conserved
    ambient speed beyond drift_tol raises GeodesicError, which signals a
    step too coarse for the requested horizon.
    """
    if step <= 0 or tau_max <= 0:
        raise ValueError("tau_max and step must be positive")
    n = seed.x0.size
    n_steps = max(1, round(tau_max / step))
    h = tau_max / n_steps

    def rhs(y: np.ndarray) -> np.ndarray:
        x, xd = y[:n], y[n:]
        acc = -np.einsum("kij,i,j->k", _gamma2_at(model, x), xd, xd)
        return np.concatenate([xd, acc])

    def speed(y: np.ndarray) -> float:
        j = _jacobian_packed(model, y[:n])
        xd = y[n:]
        return float(xd @ covariant_metric(j) @ xd)

    y = np.concatenate([seed.x0, seed.xdot0])
    taus = [0.0]
    xs = [seed.x0.copy()]
    speeds = [speed(y)]
    halt = None
    for k in range(n_steps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        sp = speed(y)
        if abs(sp - speeds[0]) > drift_tol:
            raise GeodesicError(
                f"ambient speed drifted by {abs(sp - speeds[0]):.3e} at tau="
                f"{(k + 1) * h:.6g}; reduce the step"
            )
        taus.append((k + 1) * h)
        xs.append(y[:n].copy())
        speeds.append(sp)
        if singularity_metric(_jacobian_packed(model, y[:n])) < sigma_floor:
            halt = "singular"
            break
    return GeodesicTrajectory(
        taus=np.array(taus), xs=np.array(xs), speeds=np.array(speeds), halt_reason=halt
    )

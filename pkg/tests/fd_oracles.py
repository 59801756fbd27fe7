"""Finite-difference oracles for the analytic derivative stack.

Every derived quantity in the library (Jacobian, Hessian, metric,
connection) is checked against one of these independently coded
reference computations.  They are deliberately slow and dumb: central
differences of the residual map, of the analytic Jacobian, and of the
metric, plus the stacked-tangent construction of the metric itself.
"""

from __future__ import annotations

import numpy as np

from geoflow.network import NetworkModel
from geoflow.powerflow import StateVector, evaluate_f, jacobian


def residual_vector(model: NetworkModel, x: np.ndarray) -> np.ndarray:
    """Packed F(X) via the public evaluate_f."""
    return evaluate_f(model, StateVector.from_packed(model, x)).packed


def fd_jacobian(model: NetworkModel, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of the residual map."""
    x = np.asarray(x, dtype=float)
    n = x.size
    out = np.empty((n, n))
    for i in range(n):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        out[:, i] = (residual_vector(model, xp) - residual_vector(model, xm)) / (2 * h)
    return out


def fd_hessian(model: NetworkModel, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of the analytic Jacobian, H[m, i, j] = d J[m, i] / d x_j."""
    x = np.asarray(x, dtype=float)
    n = x.size
    out = np.empty((n, n, n))
    for j in range(n):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        jp = jacobian(model, StateVector.from_packed(model, xp))
        jm = jacobian(model, StateVector.from_packed(model, xm))
        out[:, :, j] = (jp - jm) / (2 * h)
    return out


def stacked_tangent_metric(j: np.ndarray) -> np.ndarray:
    """Gram matrix of the graph-embedding tangent frame.

    The solution manifold is embedded as (X, F(X)); the i-th tangent
    vector is (e_i, J e_i), so the induced metric is T^T T with
    T = [J; I] stacked.  Independent of the closed form used in the
    library.
    """
    j = np.asarray(j, dtype=float)
    t = np.vstack([j, np.eye(j.shape[1])])
    return t.T @ t


def metric_at(model: NetworkModel, x: np.ndarray) -> np.ndarray:
    return stacked_tangent_metric(
        jacobian(model, StateVector.from_packed(model, x))
    )


def fd_christoffel_first(model: NetworkModel, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Connection coefficients from metric derivatives alone.

    gamma1[i, j, k] = (d_i g_jk + d_j g_ik - d_k g_ij) / 2, with each
    metric derivative taken by central differences.  This route never
    touches the Hessian, so it cross-checks the contraction formula.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    dg = np.empty((n, n, n))  # dg[l, :, :] = d g / d x_l
    for l in range(n):
        xp = x.copy()
        xm = x.copy()
        xp[l] += h
        xm[l] -= h
        dg[l] = (metric_at(model, xp) - metric_at(model, xm)) / (2 * h)
    gamma1 = np.empty((n, n, n))
    for i in range(n):
        for j in range(n):
            for k in range(n):
                gamma1[i, j, k] = 0.5 * (dg[i][j, k] + dg[j][i, k] - dg[k][i, j])
    return gamma1


def rel_err(approx: np.ndarray, exact: np.ndarray) -> float:
    """Max-norm error relative to max(1, scale of the exact value)."""
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    scale = max(1.0, float(np.max(np.abs(exact))))
    return float(np.max(np.abs(approx - exact))) / scale


def random_interior_states(
    model: NetworkModel, base: np.ndarray, count: int, seed: int
) -> list[np.ndarray]:
    """Randomized states near a solved base point, away from V = 0."""
    rng = np.random.default_rng(seed)
    npq = model.npq
    out = []
    for _ in range(count):
        x = np.asarray(base, dtype=float).copy()
        x[:npq] *= 1.0 + 0.05 * rng.uniform(-1.0, 1.0, npq)
        x[npq:] += 0.1 * rng.uniform(-1.0, 1.0, x.size - npq)
        out.append(x)
    return out

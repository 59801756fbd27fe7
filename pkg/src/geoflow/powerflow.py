"""Power-flow map, its first and second derivatives, and the Newton solver.

State and residual orderings are fixed throughout the package:

* state X packs the PQ-bus voltage magnitudes first, then the angles of
  every non-slack bus (internal bus order), length n = 2*nb - ng - 1;
* the residual packs active injections P for every non-slack bus first,
  then reactive injections Q for the PQ buses.

With T_im = G_im cos(th_i - th_m) + B_im sin(th_i - th_m) and
S_im = G_im sin(th_i - th_m) - B_im cos(th_i - th_m), the injections are

    P_i = V_i * sum_m V_m T_im
    Q_i = V_i * sum_m V_m S_im

and every derivative below is the exact closed form of these sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PowerFlowError
from .network import NetworkModel


@dataclass
class StateVector:
    """Power-flow state: PQ magnitudes and non-slack angles (radians)."""

    v: np.ndarray
    theta: np.ndarray

    @property
    def packed(self) -> np.ndarray:
        return np.concatenate([self.v, self.theta])

    @classmethod
    def from_packed(cls, model: NetworkModel, x: np.ndarray) -> "StateVector":
        x = np.asarray(x, dtype=float)
        if x.shape != (model.n,):
            raise ValueError(f"state must have shape ({model.n},), got {x.shape}")
        return cls(v=x[: model.npq].copy(), theta=x[model.npq :].copy())

    @property
    def dim(self) -> int:
        return self.v.size + self.theta.size


@dataclass
class InjectionVector:
    """Per-unit injections: P at non-slack buses, Q at PQ buses."""

    p: np.ndarray
    q: np.ndarray

    @property
    def packed(self) -> np.ndarray:
        return np.concatenate([self.p, self.q])

    @classmethod
    def from_packed(cls, model: NetworkModel, y: np.ndarray) -> "InjectionVector":
        y = np.asarray(y, dtype=float)
        if y.shape != (model.n,):
            raise ValueError(f"injection must have shape ({model.n},), got {y.shape}")
        return cls(p=y[: model.nb - 1].copy(), q=y[model.nb - 1 :].copy())


@dataclass(frozen=True)
class HessianTensor:
    """Second derivatives of the power-flow map, stored as sparse triples.

    Entry (m, i, j, value) is d2 F_m / dX_i dX_j with i <= j canonical;
    the (i, j) pattern only touches network-adjacent bus pairs.  to_dense
    mirrors the off-diagonal entries back to full symmetry.
    """

    n: int
    m: np.ndarray
    i: np.ndarray
    j: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return self.values.size

    def to_dense(self) -> np.ndarray:
        h = np.zeros((self.n, self.n, self.n))
        np.add.at(h, (self.m, self.i, self.j), self.values)
        off = self.i != self.j
        np.add.at(h, (self.m[off], self.j[off], self.i[off]), self.values[off])
        return h


def flat_start(model: NetworkModel) -> StateVector:
    """Default initial state: unity PQ magnitudes, zero angles."""
    return StateVector(v=np.ones(model.npq), theta=np.zeros(model.nb - 1))


def scheduled_injection(model: NetworkModel) -> InjectionVector:
    """Base-case injection targets taken from the case data."""
    return InjectionVector(p=model.p_sched.copy(), q=model.q_sched.copy())


def _as_packed(x) -> np.ndarray:
    if isinstance(x, StateVector):
        return x.packed
    return np.asarray(x, dtype=float)


def _vm_theta(model: NetworkModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Expand the packed state to full per-bus magnitude/angle arrays."""
    vm = model.v_sched.copy()
    vm[model.ng :] = x[: model.npq]
    th = np.empty(model.nb)
    th[0] = 0.0
    th[1:] = x[model.npq :]
    return vm, th


def _kernels(model: NetworkModel, vm, th):
    """Trig kernels T, S and the per-bus sums they enter."""
    dth = th[:, None] - th[None, :]
    t = model.G * np.cos(dth) + model.B * np.sin(dth)
    s = model.G * np.sin(dth) - model.B * np.cos(dth)
    it = t @ vm  # sum_m V_m T_im
    isum = s @ vm
    return t, s, it, isum


def _f_packed(model: NetworkModel, x: np.ndarray) -> np.ndarray:
    vm, th = _vm_theta(model, x)
    _, _, it, isum = _kernels(model, vm, th)
    p = vm * it
    q = vm * isum
    return np.concatenate([p[1:], q[model.ng :]])


def evaluate_f(model: NetworkModel, state) -> InjectionVector:
    """Injections produced by the network at the given state."""
    return InjectionVector.from_packed(model, _f_packed(model, _as_packed(state)))


def _jacobian_packed(model: NetworkModel, x: np.ndarray) -> np.ndarray:
    vm, th = _vm_theta(model, x)
    t, s, it, isum = _kernels(model, vm, th)
    p = vm * it
    q = vm * isum
    gd = model.G.diagonal()
    bd = model.B.diagonal()
    vv = vm[:, None] * vm[None, :]

    dp_dth = vv * s
    np.fill_diagonal(dp_dth, -q - bd * vm * vm)
    dq_dth = -vv * t
    np.fill_diagonal(dq_dth, p - gd * vm * vm)
    dp_dv = vm[:, None] * t
    np.fill_diagonal(dp_dv, it + gd * vm)
    dq_dv = vm[:, None] * s
    np.fill_diagonal(dq_dv, isum - bd * vm)

    ng = model.ng
    top = np.hstack([dp_dv[1:, ng:], dp_dth[1:, 1:]])
    bottom = np.hstack([dq_dv[ng:, ng:], dq_dth[ng:, 1:]])
    return np.vstack([top, bottom])


def jacobian(model: NetworkModel, state) -> np.ndarray:
    """Analytic n x n Jacobian of the power-flow map at the given state."""
    return _jacobian_packed(model, _as_packed(state))


def hessian(model: NetworkModel, state) -> HessianTensor:
    """Analytic second-derivative tensor of the power-flow map.

    Assembled bus by bus over the admittance adjacency; for the row of
    injection at bus a, nonzero (i, j) pairs involve only a and its
    neighbors, and only pairs where one index refers to bus a or i == j.
    """
    x = _as_packed(state)
    vm, th = _vm_theta(model, x)
    t, s, _, _ = _kernels(model, vm, th)
    gd = model.G.diagonal()
    bd = model.B.diagonal()
    # sums excluding the self term
    sum_t = t @ vm - vm * gd
    sum_s = s @ vm - vm * (-bd)

    nb, ng, npq = model.nb, model.ng, model.npq
    rows: list[np.ndarray] = []
    iis: list[np.ndarray] = []
    jjs: list[np.ndarray] = []
    vals: list[np.ndarray] = []

    def push(row, ii, jj, vv):
        ii = np.atleast_1d(np.asarray(ii, dtype=np.intp))
        jj = np.atleast_1d(np.asarray(jj, dtype=np.intp))
        vv = np.atleast_1d(np.asarray(vv, dtype=float))
        swap = ii > jj
        lo = np.where(swap, jj, ii)
        hi = np.where(swap, ii, jj)
        rows.append(np.full(lo.shape, row, dtype=np.intp))
        iis.append(lo)
        jjs.append(hi)
        vals.append(vv)

    def iv(pos):
        return pos - ng  # valid only for pos >= ng

    def ith(pos):
        return npq + pos - 1  # valid only for pos >= 1

    for a in range(1, nb):
        nbr = model.adjacency[a]
        nbr_pq = nbr[nbr >= ng]
        nbr_ns = nbr[nbr >= 1]
        va = vm[a]
        a_pq = a >= ng

        # active-power row
        row = a - 1
        if a_pq:
            push(row, iv(a), iv(a), 2.0 * gd[a])
            if nbr_pq.size:
                push(row, iv(a), iv(nbr_pq), t[a, nbr_pq])
            push(row, iv(a), ith(a), -sum_s[a])
            if nbr_ns.size:
                push(row, iv(a), ith(nbr_ns), vm[nbr_ns] * s[a, nbr_ns])
        if nbr_pq.size:
            push(row, iv(nbr_pq), ith(a), -va * s[a, nbr_pq])
            push(row, iv(nbr_pq), ith(nbr_pq), va * s[a, nbr_pq])
        push(row, ith(a), ith(a), -va * sum_t[a])
        if nbr_ns.size:
            push(row, ith(a), ith(nbr_ns), va * vm[nbr_ns] * t[a, nbr_ns])
            push(row, ith(nbr_ns), ith(nbr_ns), -va * vm[nbr_ns] * t[a, nbr_ns])

        # reactive-power row
        if a_pq:
            row = (nb - 1) + (a - ng)
            push(row, iv(a), iv(a), -2.0 * bd[a])
            if nbr_pq.size:
                push(row, iv(a), iv(nbr_pq), s[a, nbr_pq])
            push(row, iv(a), ith(a), sum_t[a])
            if nbr_ns.size:
                push(row, iv(a), ith(nbr_ns), -vm[nbr_ns] * t[a, nbr_ns])
            if nbr_pq.size:
                push(row, iv(nbr_pq), ith(a), va * t[a, nbr_pq])
                push(row, iv(nbr_pq), ith(nbr_pq), -va * t[a, nbr_pq])
            push(row, ith(a), ith(a), -va * sum_s[a])
            if nbr_ns.size:
                push(row, ith(a), ith(nbr_ns), va * vm[nbr_ns] * s[a, nbr_ns])
                push(row, ith(nbr_ns), ith(nbr_ns), -va * vm[nbr_ns] * s[a, nbr_ns])

    return HessianTensor(
        n=model.n,
        m=np.concatenate(rows),
        i=np.concatenate(iis),
        j=np.concatenate(jjs),
        values=np.concatenate(vals),
    )


def singularity_metric(j: np.ndarray) -> float:
    """Smallest singular value of a Jacobian; 0 marks the solvability boundary."""
    return float(np.linalg.svd(np.asarray(j, dtype=float), compute_uv=False)[-1])


def newton_solve(
    model: NetworkModel,
    target: InjectionVector | np.ndarray,
    x0: StateVector | np.ndarray | None = None,
    tol: float = 1e-8,
    max_iter: int = 30,
) -> StateVector:
    """Solve F(X) = target by full Newton steps with a step-halving fallback.

    Halving (up to 10 times per iteration) is triggered when the full step
    fails to reduce the residual max-norm or drives a PQ magnitude to zero
    or below.  Raises PowerFlowError on non-convergence or a singular
    Jacobian.
    """
    t = target.packed if isinstance(target, InjectionVector) else np.asarray(target)
    x = _as_packed(x0) if x0 is not None else flat_start(model).packed
    x = x.copy()
    r = _f_packed(model, x) - t
    rn = float(np.max(np.abs(r)))
    npq = model.npq
    for _ in range(max_iter):
        if rn < tol:
            return StateVector.from_packed(model, x)
        try:
            dx = np.linalg.solve(_jacobian_packed(model, x), r)
        except np.linalg.LinAlgError:
            raise PowerFlowError("singular Jacobian during Newton iteration", rn)
        scale = 1.0
        for _ in range(10):
            x_new = x - scale * dx
            if np.all(x_new[:npq] > 0.0):
                r_new = _f_packed(model, x_new) - t
                rn_new = float(np.max(np.abs(r_new)))
                if rn_new < rn:
                    break
            scale *= 0.5
        else:
            raise PowerFlowError("Newton stalled; no descent after 10 halvings", rn)
        x, r, rn = x_new, r_new, rn_new
    if rn < tol:
        return StateVector.from_packed(model, x)
    raise PowerFlowError(f"Newton did not converge in {max_iter} iterations", rn)

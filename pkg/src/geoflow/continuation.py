"""Continuation power flow: pseudo-arc-length tracing and nose refinement.

Traces solutions of F(X) = base + lam * d as the loading parameter lam
grows, using a tangent predictor and a Newton corrector on the system
bordered with the arc-length constraint t . (u - u_prev) = step, where
u = (X, lam).  The bordered Jacobian [[J, -d], [t^T]] stays regular
through the turning point, so the trace passes around the nose; tracing
halts once lam has decreased for three consecutive accepted steps (or on
max_steps / an unrecoverable corrector failure).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContinuationError, PowerFlowError
from .network import NetworkModel
from .powerflow import (
    InjectionVector,
    StateVector,
    _as_packed,
    _f_packed,
    _jacobian_packed,
    newton_solve,
    singularity_metric,
)


@dataclass(frozen=True)
class CpfOptions:
    """Tracing controls; the defaults suit the bundled cases."""

    initial_step: float = 0.1
    min_step: float = 1e-4
    max_step: float = 0.2
    max_steps: int = 500
    corrector_tol: float = 1e-8
    corrector_max_iter: int = 12
    easy_iters: int = 3  # corrector iteration count considered cheap
    grow_factor: float = 1.3
    nose_tol: float = 1e-8
    nose_max_bisections: int = 20


@dataclass
class ContinuationTrace:
    """Accepted trace points plus the refined nose, when one was passed.

    lambdas[k], xs[k], sigma_mins[k] describe the k-th accepted point;
    nose is (lam*, X*) after bisection refinement, or None when tracing
    ended without passing a turning point.
    """

    model: NetworkModel
    base: np.ndarray
    direction: np.ndarray
    lambdas: np.ndarray
    xs: np.ndarray
    sigma_mins: np.ndarray
    halt_reason: str
    nose: tuple[float, StateVector] | None = None
    nose_sigma: float | None = None

    @property
    def points(self):
        return list(zip(self.lambdas, self.xs, self.sigma_mins))


def _corrector(model, base, d, tangent, u_prev, step, u_start, opts):
    """Newton on the bordered system; returns (u, iterations) or None."""
    n = model.n
    u = u_start.copy()

    def residual(uu):
        r = np.empty(n + 1)
        r[:n] = _f_packed(model, uu[:n]) - base - uu[n] * d
        r[n] = tangent @ (uu - u_prev) - step
        return r

    r = residual(u)
    rn = float(np.max(np.abs(r)))
    a = np.empty((n + 1, n + 1))
    a[n, :] = tangent
    for it in range(opts.corrector_max_iter):
        if rn < opts.corrector_tol:
            return u, it
        a[:n, :n] = _jacobian_packed(model, u[:n])
        a[:n, n] = -d
        try:
            du = np.linalg.solve(a, r)
        except np.linalg.LinAlgError:
            return None
        scale = 1.0
        for _ in range(8):
            u_new = u - scale * du
            if np.all(u_new[: model.npq] > 0.0):
                r_new = residual(u_new)
                rn_new = float(np.max(np.abs(r_new)))
                if rn_new < rn:
                    break
            scale *= 0.5
        else:
            return None
        u, r, rn = u_new, r_new, rn_new
    if rn < opts.corrector_tol:
        return u, opts.corrector_max_iter
    return None


def cpf_trace(
    model: NetworkModel,
    base: InjectionVector | np.ndarray,
    direction: InjectionVector | np.ndarray,
    x0: StateVector | np.ndarray | None = None,
    opts: CpfOptions = CpfOptions(),
) -> ContinuationTrace:
    """Trace F(X) = base + lam * d from lam = 0 past the nose.

    x0, when given, must solve the base case (it is polished by Newton);
    otherwise the base case is solved from a flat start.  Raises
    ContinuationError if the base case is unsolvable or the very first
    continuation step fails at the minimum step length.
    """
    base = base.packed if isinstance(base, InjectionVector) else np.asarray(base, dtype=float)
    d = direction.packed if isinstance(direction, InjectionVector) else np.asarray(direction, dtype=float)
    if not np.any(d):
        raise ValueError("continuation direction is identically zero")
    n = model.n
    try:
        x_base = newton_solve(model, base, x0=x0).packed
    except PowerFlowError as exc:
        raise ContinuationError(f"base case unsolvable: {exc}") from exc

    lambdas = [0.0]
    xs = [x_base]
    sigmas = [singularity_metric(_jacobian_packed(model, x_base))]

    u = np.append(x_base, 0.0)
    tangent = np.zeros(n + 1)
    tangent[n] = 1.0  # first predictor leans on pure loading increase
    step = opts.initial_step
    decreases = 0
    halt = "MaxSteps"

    a = np.empty((n + 1, n + 1))
    rhs = np.zeros(n + 1)
    rhs[n] = 1.0
    for _ in range(opts.max_steps):
        a[:n, :n] = _jacobian_packed(model, u[:n])
        a[:n, n] = -d
        a[n, :] = tangent
        try:
            z = np.linalg.solve(a, rhs)
        except np.linalg.LinAlgError:
            halt = "CorrectorFailure"
            break
        t_new = z / np.linalg.norm(z)
        if t_new @ tangent < 0.0:
            t_new = -t_new

        accepted = None
        while True:
            u_pred = u + step * t_new
            accepted = _corrector(model, base, d, t_new, u, step, u_pred, opts)
            if accepted is not None:
                break
            if step <= opts.min_step:
                break
            step = max(opts.min_step, 0.5 * step)
        if accepted is None:
            if len(lambdas) == 1:
                raise ContinuationError(
                    "first corrector failure at minimum step; cannot leave the base point"
                )
            halt = "CorrectorFailure"
            break

        u, iters = accepted
        tangent = t_new
        lambdas.append(float(u[n]))
        xs.append(u[:n].copy())
        sigmas.append(singularity_metric(_jacobian_packed(model, u[:n])))
        if iters <= opts.easy_iters:
            step = min(opts.max_step, step * opts.grow_factor)
        if lambdas[-1] < lambdas[-2]:
            decreases += 1
            if decreases >= 3:
                halt = "NoseFound"
                break
        else:
            decreases = 0

    trace = ContinuationTrace(
        model=model,
        base=base,
        direction=d,
        lambdas=np.array(lambdas),
        xs=np.array(xs),
        sigma_mins=np.array(sigmas),
        halt_reason=halt,
    )
    k = int(np.argmax(trace.lambdas))
    if 0 < k < len(trace.lambdas) - 1:
        _refine_nose(trace, opts)
    return trace


def _fit_vertex(trace: ContinuationTrace, k: int) -> float:
    """Vertex of the quadratic through the three points bracketing index k."""
    pts = slice(k - 1, k + 2)
    du = np.diff(trace.xs[pts], axis=0)
    dl = np.diff(trace.lambdas[pts])
    seg = np.sqrt(np.sum(du * du, axis=1) + dl * dl)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    coef = np.polyfit(s, trace.lambdas[pts], 2)
    if coef[0] == 0.0:
        return float(np.max(trace.lambdas[pts]))
    s_star = -coef[1] / (2.0 * coef[0])
    return float(np.polyval(coef, s_star))


def _solve_at_lambda(trace, lam, x_guess, opts):
    target = trace.base + lam * trace.direction
    try:
        return newton_solve(
            trace.model, target, x0=x_guess, tol=opts.corrector_tol, max_iter=20
        ).packed
    except PowerFlowError:
        return None


def _refine_nose(trace: ContinuationTrace, opts: CpfOptions) -> None:
    """Bisection on lam between solvable and unsolvable, polishing the nose.

    Starts from the bracketing quadratic fit of lam over arc length; each
    probe is a plain Newton corrector at fixed lam seeded from the closest
    known solution, so a converged probe advances the solvable bound and
    a failed one pulls in the unsolvable bound.
    """
    k = int(np.argmax(trace.lambdas))
    lo = float(trace.lambdas[k])
    x_lo = trace.xs[k].copy()
    vertex = _fit_vertex(trace, k)
    gap = max(vertex - lo, opts.nose_tol)
    hi = vertex + gap

    # make sure hi is actually unsolvable before bisecting toward it
    for _ in range(30):
        x_probe = _solve_at_lambda(trace, hi, x_lo, opts)
        if x_probe is None:
            break
        lo, x_lo = hi, x_probe
        gap *= 2.0
        hi = lo + gap
    else:
        trace.nose = (lo, StateVector.from_packed(trace.model, x_lo))
        trace.nose_sigma = singularity_metric(_jacobian_packed(trace.model, x_lo))
        return

    for _ in range(opts.nose_max_bisections):
        if hi - lo < opts.nose_tol:
            break
        mid = 0.5 * (lo + hi)
        x_probe = _solve_at_lambda(trace, mid, x_lo, opts)
        if x_probe is None:
            hi = mid
        else:
            lo, x_lo = mid, x_probe
    trace.nose = (lo, StateVector.from_packed(trace.model, x_lo))
    trace.nose_sigma = singularity_metric(_jacobian_packed(trace.model, x_lo))


def nose_point(trace: ContinuationTrace, refine: bool = True) -> tuple[float, StateVector]:
    """Turning point of a trace: the stored refined nose, or fit + refine.

    Raises ContinuationError when the trace is monotone in lam (no
    turning point was passed).
    """
    if trace.nose is not None:
        return trace.nose
    k = int(np.argmax(trace.lambdas))
    if not 0 < k < len(trace.lambdas) - 1:
        raise ContinuationError("trace is monotone in lambda; no turning point passed")
    if refine:
        _refine_nose(trace, CpfOptions())
        return trace.nose
    return float(_fit_vertex(trace, k)), StateVector.from_packed(trace.model, trace.xs[k])

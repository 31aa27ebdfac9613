"""
Optimal control of the within-host inhibition dynamics.

The running cost is k*u^2 + theta^2 with a terminal cost f(theta(T)).  The
control that minimizes the pointwise Hamiltonian satisfies a cubic equation
in the auxiliary variable w = 1/(1 - theta1*u):

    c3*w^3 - 2k*w + 2k = 0,    c3 = alpha*theta1^2*theta*p,

whose relevant root lies in [1, min(3/2, 1/(1-theta1))]; when 27*c3 >= 8k the
cubic has no usable nonnegative root and the control saturates at u = 1.  The
adjoint p runs backward from p(T) = f'(theta(T)); a shooting iteration on
p(0) closes the two-point boundary value problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple, Union

import numpy as np

from . import _kernels
from .host import (
    ConstantForcing,
    ControlSignal,
    DivisionGuardError,
    ModelParams,
    SampledPath,
    SeasonalForcing,
    Trajectory,
)

__all__ = [
    "BangRegimeError",
    "ShootingError",
    "GridMismatchError",
    "CostSpec",
    "AdjointState",
    "OptimalSolution",
    "solve_feedback_cubic",
    "optimal_u_feedback",
    "eval_adjoint_rhs",
    "integrate_coupled",
    "integrate_adjoint",
    "shoot_p0",
    "eval_cost_JT",
]


class BangRegimeError(ValueError):
    """27*c3 >= 8k: the cubic has no usable nonnegative root; the control is u = 1."""


class ShootingError(RuntimeError):
    """Shooting failed to meet its tolerance within the iteration budget."""

    def __init__(self, message: str, best_p0: float, best_residual: float):
        super().__init__(message)
        self.best_p0 = best_p0
        self.best_residual = best_residual


class GridMismatchError(ValueError):
    """Two sampled paths that must share a grid do not."""


# ---------------------------------------------------------------------------
#  Cost specification
# ---------------------------------------------------------------------------

def _identity(theta: float) -> float:
    return theta


def _one(theta: float) -> float:
    return 1.0


@dataclass(frozen=True)
class CostSpec:
    """Cost functional spec: integral of k*u^2 + theta^2 plus terminal f(theta(T)).

    ``terminal_f_prime`` must be the derivative of ``terminal_f``; consistency
    is checked by central differences on a few sample points at construction.
    Defaults give f(theta) = theta, f' = 1.
    """

    k: float
    terminal_f: Callable[[float], float] = _identity
    terminal_f_prime: Callable[[float], float] = _one

    def __post_init__(self) -> None:
        if not self.k > 0.0:
            raise ValueError(f"cost ratio k must be > 0, got {self.k}")
        delta = 1e-5
        for th in (0.1, 0.35, 0.6, 0.85):
            fd = (self.terminal_f(th + delta) - self.terminal_f(th - delta)) / (2.0 * delta)
            fp = self.terminal_f_prime(th)
            if abs(fd - fp) > 1e-6 * max(1.0, abs(fp)):
                raise ValueError(
                    f"terminal_f_prime inconsistent with terminal_f at theta={th}: "
                    f"finite difference {fd} vs derivative {fp}")


@dataclass(frozen=True)
class AdjointState:
    """Adjoint (costate) value: the sensitivity of the cost to the state."""

    p: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.p):
            raise ValueError(f"adjoint value must be finite, got {self.p}")


@dataclass(frozen=True)
class OptimalSolution:
    """Result of the shooting method.

    ``control``, ``theta_path`` and ``adjoint_path`` share one time grid.
    ``residual`` is |p(T) - f'(theta(T))| at the returned p0.
    """

    control: ControlSignal
    theta_path: SampledPath
    adjoint_path: SampledPath
    cost: float
    p0: float
    residual: float
    iterations: int


# ---------------------------------------------------------------------------
#  Feedback law
# ---------------------------------------------------------------------------

def solve_feedback_cubic(c3: float, k: float, theta1: Optional[float] = None) -> float:
    """Solve c3*w^3 - 2k*w + 2k = 0 for the feedback multiplier w3.

    Returns the point of [1, min(3/2, 1/(1-theta1))] nearest to the smallest
    nonnegative real root (the upper cap is 3/2 alone when theta1 is None).
    The root is bracketed by a sign scan over [0, 3/2] and refined by
    bisection to machine precision, which keeps the residual below 1e-12 for
    moderate k.

    Raises BangRegimeError when 27*c3 >= 8k — there is no usable nonnegative
    root and the caller must saturate the control at u = 1.
    """
    if not k > 0.0:
        raise ValueError(f"k must be > 0, got {k}")
    if 27.0 * c3 >= 8.0 * k:
        raise BangRegimeError(
            f"27*c3 = {27.0 * c3} >= 8k = {8.0 * k}: bang regime, set u = 1")
    cap = 1.5
    if theta1 is not None:
        if not 0.0 <= theta1 < 1.0:
            raise ValueError(f"theta1 must be in [0, 1), got {theta1}")
        cap = min(cap, 1.0 / (1.0 - theta1))

    # Off the bang set, g(w) = c3*w^3 - 2k*(w - 1) is strictly decreasing on
    # [0, 3/2] with g(0) = 2k > 0 and g(3/2) = (27/8)c3 - k < 0, so the scan
    # always brackets exactly one crossing.
    w = np.linspace(0.0, 1.5, 513)
    g = c3 * w**3 - 2.0 * k * w + 2.0 * k
    idx = np.flatnonzero((g[:-1] > 0.0) & (g[1:] <= 0.0))
    if idx.size == 0:  # pragma: no cover - excluded analytically
        raise ArithmeticError(f"no sign change found for c3={c3}, k={k}")
    lo = float(w[idx[0]])
    hi = float(w[idx[0] + 1])
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        gm = c3 * mid**3 - 2.0 * k * mid + 2.0 * k
        if gm > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4.0 * np.finfo(float).eps:
            break
    root = 0.5 * (lo + hi)
    return min(max(root, 1.0), cap)


def optimal_u_feedback(alpha_t: float, theta: float, p: float,
                       theta1: float, k: float) -> float:
    """Pointwise optimal control: u = 1 when 27*alpha*theta1^2*theta*p >= 8k,
    otherwise u = (w3 - 1)/(theta1*w3) with w3 from solve_feedback_cubic.
    The result is clamped to [0, 1] to absorb roundoff."""
    if theta1 <= 0.0:
        # Control has no effect on the dynamics; the cost says switch it off.
        return 0.0
    c3 = alpha_t * theta1 * theta1 * theta * p
    if 27.0 * c3 >= 8.0 * k:
        return 1.0
    w3 = solve_feedback_cubic(c3, k, theta1)
    u = (w3 - 1.0) / (theta1 * w3)
    return min(max(u, 0.0), 1.0)


def eval_adjoint_rhs(t: float, p: float, theta: float, u_val: float,
                     alpha_t: float, theta1: float) -> float:
    """Adjoint equation right-hand side: dp/dt = alpha*p/(1-theta1*u) - 2*theta."""
    floor = 1.0 - theta1 * u_val
    if floor <= 0.0:
        raise DivisionGuardError(
            f"1 - theta1*u = {floor} <= 0 (theta1={theta1}, u={u_val})")
    return alpha_t * p / floor - 2.0 * theta


# ---------------------------------------------------------------------------
#  Coupled forward integration
# ---------------------------------------------------------------------------

def _time_only_alpha(params: ModelParams) -> Callable[[float], float]:
    """Return alpha as a function of time, rejecting state-dependent forcings.

    The feedback law is derived under alpha = alpha(t); a forcing that reacts
    to theta would invalidate the adjoint equation, so it is refused.
    """
    alpha = params.alpha
    if isinstance(alpha, (ConstantForcing, SeasonalForcing)):
        return lambda t: alpha(t, 0.0)
    for t in (0.0, 0.31, 0.77):
        lo, hi = alpha(t, 0.2), alpha(t, 0.8)
        if lo != hi:
            raise ValueError(
                "integrate_coupled requires alpha to depend on time only; "
                f"alpha({t}, 0.2) = {lo} != alpha({t}, 0.8) = {hi}")
    return lambda t: alpha(t, 0.0)


def _grid(t0: float, T: float, dt: float) -> Tuple[int, float]:
    if not dt > 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if not T > t0:
        raise ValueError(f"need T > t0, got t0={t0}, T={T}")
    if dt > (T - t0) * (1.0 + 1e-12):
        raise ValueError(f"dt={dt} exceeds the horizon T-t0={T - t0}")
    n = max(1, int(round((T - t0) / dt)))
    return n, (T - t0) / n


def integrate_coupled(
    p0: float,
    theta0: float,
    params: ModelParams,
    cost: CostSpec,
    T: float,
    dt: float,
    t0: float = 0.0,
) -> Tuple[SampledPath, SampledPath, ControlSignal]:
    """Integrate theta and p forward jointly, closing the loop with the
    feedback law at every stage.

    Returns (theta path, p path, u path) on the shared grid.  The u samples
    are recomputed from the node values of (theta, p), so they satisfy the
    feedback law exactly as optimal_u_feedback states it.
    """
    n, h = _grid(t0, T, dt)
    alpha = params.alpha
    times = t0 + h * np.arange(n + 1)
    dummy = np.zeros(1)

    if isinstance(alpha, ConstantForcing):
        th, p, u = _kernels.coupled_rk4(
            theta0, p0, t0, h, n, params.theta1, cost.k,
            _kernels.FORCING_CONST, alpha.value, 0.0, 0.0, dummy, dummy)
    elif isinstance(alpha, SeasonalForcing):
        th, p, u = _kernels.coupled_rk4(
            theta0, p0, t0, h, n, params.theta1, cost.k,
            _kernels.FORCING_SEASONAL, alpha.a, alpha.b, alpha.c, dummy, dummy)
    else:
        # Opaque time-only forcing: hand the kernel alpha sampled on the
        # half-step grid.  Every RK4 stage of the uniform grid falls on a
        # knot, so stage values are exact; only event-located substeps see
        # the linear interpolant (an O(dt^2) effect on switch placement).
        alpha_fn = _time_only_alpha(params)
        knots_t = t0 + 0.5 * h * np.arange(2 * n + 1)
        knots_v = np.array([alpha_fn(float(t)) for t in knots_t])
        if np.any(knots_v < 0.0):
            raise ValueError("alpha must be nonnegative on the horizon")
        th, p, u = _kernels.coupled_rk4(
            theta0, p0, t0, h, n, params.theta1, cost.k,
            _kernels.FORCING_SAMPLED, 0.0, 0.0, 0.0, knots_t, knots_v)

    u = np.clip(u, 0.0, 1.0)
    return (SampledPath(times=times, values=th),
            SampledPath(times=times, values=p),
            ControlSignal(times=times, values=u))


def integrate_adjoint(
    theta_T: float,
    params: ModelParams,
    cost: CostSpec,
    u: Union[ControlSignal, Callable[[float], float], float],
    t0: float,
    T: float,
    dt: float,
) -> Tuple[SampledPath, SampledPath]:
    """Integrate (theta, p) jointly backward from t = T under a FIXED control.

    Starts from theta(T) = theta_T and the transversality value
    p(T) = f'(theta_T) and runs the state and adjoint equations in reverse.
    Used by the gradient checks, where u is given rather than optimal.
    Returns (theta path, p path) on the forward-ordered grid.
    """
    n, h = _grid(t0, T, dt)
    if isinstance(u, (int, float)):
        uval = float(u)
        u_fn = lambda t: uval  # noqa: E731
    else:
        u_fn = u
    alpha_fn = _time_only_alpha(params)
    theta1 = params.theta1

    def rhs(t, a, b):
        al = alpha_fn(t)
        uv = float(u_fn(t))
        floor = 1.0 - theta1 * uv
        if floor <= 0.0:
            raise DivisionGuardError(f"1 - theta1*u = {floor} <= 0 at t = {t}")
        return al * (1.0 - a / floor), al * b / floor - 2.0 * a

    times = t0 + h * np.arange(n + 1)
    th = np.empty(n + 1)
    p = np.empty(n + 1)
    th[n] = theta_T
    p[n] = cost.terminal_f_prime(theta_T)
    for i in range(n, 0, -1):
        t = times[i]
        a, b = th[i], p[i]
        # RK4 with step -h.
        d1a, d1b = rhs(t, a, b)
        d2a, d2b = rhs(t - 0.5 * h, a - 0.5 * h * d1a, b - 0.5 * h * d1b)
        d3a, d3b = rhs(t - 0.5 * h, a - 0.5 * h * d2a, b - 0.5 * h * d2b)
        d4a, d4b = rhs(t - h, a - h * d3a, b - h * d3b)
        th[i - 1] = a - (h / 6.0) * (d1a + 2.0 * d2a + 2.0 * d3a + d4a)
        p[i - 1] = b - (h / 6.0) * (d1b + 2.0 * d2b + 2.0 * d3b + d4b)
    return SampledPath(times=times, values=th), SampledPath(times=times, values=p)


# ---------------------------------------------------------------------------
#  Shooting
# ---------------------------------------------------------------------------

def shoot_p0(
    theta0: float,
    params: ModelParams,
    cost: CostSpec,
    T: float,
    dt: float,
    tol: float = 1e-8,
    t0: float = 0.0,
    max_iter: int = 100,
) -> OptimalSolution:
    """Find p(0) such that the coupled integration lands on the
    transversality condition p(T) = f'(theta(T)).

    Secant iteration seeded with p0 in {0, 1}; once a sign change of the
    residual is bracketed, any secant step that escapes the bracket (or fails
    to shrink it) is replaced by bisection.  Raises ShootingError with the
    best residual if the budget runs out.
    """

    def residual(p0_guess: float):
        th, p, u = integrate_coupled(p0_guess, theta0, params, cost, T, dt, t0=t0)
        r = p.values[-1] - cost.terminal_f_prime(th.values[-1])
        return r, (th, p, u)

    a, b = 0.0, 1.0
    ra, out_a = residual(a)
    evaluations = 1
    best = (abs(ra), a, ra, out_a)
    bracket = None
    if abs(ra) < tol:
        th, p, u = out_a
        return OptimalSolution(
            control=u, theta_path=th, adjoint_path=p,
            cost=eval_cost_JT(u, th, cost, dt),
            p0=a, residual=abs(ra), iterations=evaluations)
    rb, out_b = residual(b)
    evaluations += 1
    if abs(rb) < best[0]:
        best = (abs(rb), b, rb, out_b)
    if ra * rb < 0.0:
        bracket = (a, ra, b, rb)

    prev, r_prev = a, ra
    cur, r_cur = b, rb
    while evaluations < max_iter:
        if abs(r_cur) < tol:
            th, p, u = best[3] if best[1] == cur else residual(cur)[1]
            return OptimalSolution(
                control=u, theta_path=th, adjoint_path=p,
                cost=eval_cost_JT(u, th, cost, dt),
                p0=cur, residual=abs(r_cur), iterations=evaluations)
        nxt = None
        if r_cur != r_prev:
            nxt = cur - r_cur * (cur - prev) / (r_cur - r_prev)
        if bracket is not None:
            lo, rlo, hi, rhi = bracket
            if nxt is None or not (min(lo, hi) < nxt < max(lo, hi)):
                nxt = 0.5 * (lo + hi)
        elif nxt is None or not math.isfinite(nxt):
            # No bracket and a flat secant: widen the search.
            nxt = cur + 2.0 * (cur - prev if cur != prev else 1.0)
        r_nxt, out_nxt = residual(nxt)
        evaluations += 1
        if abs(r_nxt) < best[0]:
            best = (abs(r_nxt), nxt, r_nxt, out_nxt)
        if bracket is not None:
            lo, rlo, hi, rhi = bracket
            bracket = (lo, rlo, nxt, r_nxt) if rlo * r_nxt < 0.0 else (nxt, r_nxt, hi, rhi)
        elif r_cur * r_nxt < 0.0:
            bracket = (cur, r_cur, nxt, r_nxt)
        prev, r_prev = cur, r_cur
        cur, r_cur = nxt, r_nxt
        if abs(r_cur) < tol:
            th, p, u = out_nxt
            return OptimalSolution(
                control=u, theta_path=th, adjoint_path=p,
                cost=eval_cost_JT(u, th, cost, dt),
                p0=cur, residual=abs(r_cur), iterations=evaluations)

    raise ShootingError(
        f"shooting did not reach |residual| < {tol} in {max_iter} evaluations; "
        f"best residual {best[0]:.3e} at p0 = {best[1]!r}",
        best_p0=best[1], best_residual=best[0])


# ---------------------------------------------------------------------------
#  Cost evaluation
# ---------------------------------------------------------------------------

def _path_samples(path) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(path, SampledPath):
        return path.times, path.values
    if isinstance(path, Trajectory):
        return path.times, path.theta
    raise TypeError(f"expected a sampled path, got {type(path)!r}")


def eval_cost_JT(u_path, theta_path, cost: CostSpec, dt: float) -> float:
    """Trapezoidal quadrature of integral(k*u^2 + theta^2) dt + f(theta(T)).

    Both paths must live on the same grid (GridMismatchError otherwise); a
    Trajectory is accepted for the theta argument and contributes its theta
    component.
    """
    tu, vu = _path_samples(u_path)
    tt, vt = _path_samples(theta_path)
    if tu.shape != tt.shape or not np.allclose(tu, tt, rtol=0.0, atol=1e-12):
        raise GridMismatchError("u and theta paths are on different grids")
    steps = np.diff(tu)
    if steps.size and not np.allclose(steps, dt, rtol=1e-9, atol=1e-12):
        raise GridMismatchError(
            f"path step {steps[0]!r} does not match declared dt={dt!r}")
    integrand = cost.k * vu**2 + vt**2
    return float(np.trapezoid(integrand, tu) + cost.terminal_f(float(vt[-1])))

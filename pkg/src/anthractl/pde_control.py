"""Optimal control for the spatial model: quadratic cost, linearized
Riccati/LQR feedback, the adjoint-state solver, the pointwise
maximum-principle feedback, and a forward-backward sweep.

Sign conventions.  The assembled OperatorMatrix L always appears as
d(theta)/dt + L theta = source, so `linearize` returns L1 storing the
NEGATIVE of the reaction-diffusion generator: L1 = diag(alpha) + D where
D is the (positive semidefinite) discrete -div(A grad .).  Formulas
quoted from the continuous theory in terms of the generator use -L1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .grid import DiffusionField, ScalarField, SpatialGrid, as_cell_values
from .host import DivisionGuardError
from .ode_control import GridMismatchError
from .pde import FieldPath, OperatorMatrix, _solve_checked, assemble_operator

__all__ = [
    "RiccatiBlowupError",
    "PdeCostSpec",
    "LinearizationPoint",
    "RiccatiState",
    "RiccatiPath",
    "SweepResult",
    "linearize",
    "integrate_riccati",
    "riccati_feedback",
    "integrate_linearized",
    "closed_loop_linearized",
    "integrate_controlled",
    "solve_adjoint_pde",
    "hamiltonian_pointwise_feedback",
    "eval_cost_JT3",
    "forward_backward_sweep",
]

logger = logging.getLogger(__name__)

_SYM_TOL = 1e-10        # Riccati symmetry tolerance
_PSD_TOL = -1e-8        # smallest admissible Riccati eigenvalue
_NORM_CAP = 1e12        # Riccati blow-up guard
_SWEEP_TOL = 1e-6       # sweep stopping tolerance on max-norm control change


class RiccatiBlowupError(RuntimeError):
    """Riccati integration exceeded the norm cap (finite-time escape)."""


# --------------------------------------------------------------------------
# cost and linearization-point containers
# --------------------------------------------------------------------------

def _validated_weight(value, name: str, strict: bool):
    v = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite")
    if strict and not np.all(v > 0.0):
        raise ValueError(f"{name} must be strictly positive")
    if not strict and not np.all(v >= 0.0):
        raise ValueError(f"{name} must be nonnegative")
    return value


@dataclass(frozen=True)
class PdeCostSpec:
    """Weights of the quadratic cost: running control weight k1 (> 0
    cellwise) and terminal state weight k2 (>= 0 cellwise).  Either may be
    a scalar or a per-cell field."""

    k1: object
    k2: object = 0.0

    def __post_init__(self):
        k1 = self.k1.values if isinstance(self.k1, ScalarField) else self.k1
        k2 = self.k2.values if isinstance(self.k2, ScalarField) else self.k2
        _validated_weight(k1, "k1", strict=True)
        _validated_weight(k2, "k2", strict=False)

    def k1_values(self, n_cells: int) -> np.ndarray:
        return as_cell_values(self.k1, n_cells)

    def k2_values(self, n_cells: int) -> np.ndarray:
        return as_cell_values(self.k2, n_cells)


@dataclass(frozen=True)
class LinearizationPoint:
    """State offset for the linearization: theta ~ epsilon, u ~ 0.

    epsilon must be strictly positive cellwise; at epsilon = 0 the
    linearized system loses controllability (the control enters only
    through the product alpha*epsilon*theta1).
    """

    epsilon: object

    def __post_init__(self):
        eps = self.epsilon.values if isinstance(self.epsilon, ScalarField) else self.epsilon
        _validated_weight(eps, "epsilon", strict=True)

    def epsilon_values(self, n_cells: int) -> np.ndarray:
        return as_cell_values(self.epsilon, n_cells)


# --------------------------------------------------------------------------
# linearization
# --------------------------------------------------------------------------

def linearize(alpha, eps: LinearizationPoint, theta1: float,
              grid: SpatialGrid, A: DiffusionField):
    """Linearized operator and control-injection diagonal.

    Returns (L1, b) where L1 is the OperatorMatrix of the linearized system
    written as d(theta)/dt + L1 theta = alpha - b*u, and b is the (n_cells,)
    diagonal of the control operator B = diag(alpha * epsilon * theta1).
    """
    if not isinstance(eps, LinearizationPoint):
        raise TypeError("eps must be a LinearizationPoint")
    L1 = assemble_operator(grid, A, alpha, u=0.0, theta1=theta1, reaction="linearized")
    alpha_v = as_cell_values(alpha, grid.n_cells)
    eps_v = eps.epsilon_values(grid.n_cells)
    b = alpha_v * eps_v * float(theta1)
    return L1, b


# --------------------------------------------------------------------------
# Riccati integration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RiccatiState:
    """Dense symmetric Riccati matrix P at pseudo-time t."""

    P: np.ndarray = field(repr=False)
    t: float

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError(f"P must be square, got shape {P.shape}")
        scale = max(1.0, float(np.max(np.abs(P))) if P.size else 0.0)
        defect = float(np.max(np.abs(P - P.T))) if P.size else 0.0
        if defect > _SYM_TOL * scale:
            raise ValueError(f"P must be symmetric (defect {defect:.3e})")
        object.__setattr__(self, "P", P)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.P)[0])


@dataclass(frozen=True)
class RiccatiPath:
    """Riccati matrices sampled on a pseudo-time grid [0, T].

    The pseudo-time s runs forward from the initial condition P(0) = k2*I;
    the feedback at physical time t looks up P at s = T - t.
    """

    times: np.ndarray
    matrices: np.ndarray = field(repr=False)  # (n_t, N, N)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        m = np.asarray(self.matrices, dtype=float)
        if t.ndim != 1 or m.ndim != 3 or m.shape[0] != t.shape[0]:
            raise ValueError(f"inconsistent Riccati path shapes {t.shape} / {m.shape}")
        if t.shape[0] > 1 and not np.all(np.diff(t) > 0.0):
            raise ValueError("Riccati path times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "matrices", m)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def P_at(self, s: float) -> np.ndarray:
        """P at pseudo-time s, linearly interpolated between samples."""
        t = self.times
        if s <= t[0]:
            return self.matrices[0]
        if s >= t[-1]:
            return self.matrices[-1]
        j = int(np.searchsorted(t, s, side="right"))
        w = (s - t[j - 1]) / (t[j] - t[j - 1])
        return (1.0 - w) * self.matrices[j - 1] + w * self.matrices[j]

    def P_lookback(self, t_phys: float) -> np.ndarray:
        """P(T - t): the matrix the feedback uses at physical time t."""
        return self.P_at(self.horizon - t_phys)

    def state(self, i: int) -> RiccatiState:
        return RiccatiState(P=self.matrices[i], t=float(self.times[i]))


_RICCATI_MAX_CELLS = 256  # dense N x N storage; larger grids are out of scope


def integrate_riccati(L1: OperatorMatrix, B, cost: PdeCostSpec, T: float, dt: float,
                      store_every: int = 1, check_psd: bool = True) -> RiccatiPath:
    """Integrate dP/ds = G P + P G - P diag(b^2/k1) P + I from P(0) = k2*I,

    where G = -L1 is the linearized generator and b the control diagonal.
    Classical RK4 with symmetrization after every step; aborts if ||P||
    exceeds 1e12 (finite-time blow-up guard).  With check_psd, every stored
    matrix must have smallest eigenvalue >= -1e-8.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if T < 0.0:
        raise ValueError(f"T must be nonnegative, got {T}")
    if store_every < 1:
        raise ValueError(f"store_every must be >= 1, got {store_every}")
    n = L1.n_cells
    if n > _RICCATI_MAX_CELLS:
        raise ValueError(f"dense Riccati integration supports at most "
                         f"{_RICCATI_MAX_CELLS} cells, got {n}")
    defect = L1.symmetry_defect()
    if defect > 1e-10 * max(1.0, float(np.max(np.abs(L1.matrix.diagonal())))):
        raise ValueError(f"Riccati integration requires a symmetric L1 "
                         f"(asymmetry {defect:.3e})")

    b = as_cell_values(B, n)
    k1 = cost.k1_values(n)
    k2 = cost.k2_values(n)
    G = -L1.matrix.toarray()
    w = b * b / k1           # diagonal of B^2 / k1
    eye = np.eye(n)

    def rhs(P):
        GP = G @ P
        return GP + GP.T - (P * w) @ P + eye

    P = np.diag(k2).astype(float)
    n_steps = int(round(T / dt)) if T > 0.0 else 0
    h = T / n_steps if n_steps else 0.0

    times = [0.0]
    mats = [P.copy()]

    def check_state(P_now, s_now):
        norm = float(np.max(np.abs(P_now)))
        if not np.isfinite(norm) or norm > _NORM_CAP:
            raise RiccatiBlowupError(f"||P|| reached {norm:.3e} at pseudo-time {s_now:g}")
        if check_psd:
            lam = float(np.linalg.eigvalsh(P_now)[0])
            if lam < _PSD_TOL:
                raise RiccatiBlowupError(
                    f"P lost positive semidefiniteness (min eigenvalue {lam:.3e}) "
                    f"at pseudo-time {s_now:g}")

    check_state(P, 0.0)
    for k in range(1, n_steps + 1):
        k1_ = rhs(P)
        k2_ = rhs(P + 0.5 * h * k1_)
        k3_ = rhs(P + 0.5 * h * k2_)
        k4_ = rhs(P + h * k3_)
        P = P + (h / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_)
        P = 0.5 * (P + P.T)
        norm = float(np.max(np.abs(P)))
        if not np.isfinite(norm) or norm > _NORM_CAP:
            raise RiccatiBlowupError(f"||P|| reached {norm:.3e} at pseudo-time {k * h:g}")
        if k % store_every == 0 or k == n_steps:
            check_state(P, k * h)
            times.append(k * h)
            mats.append(P.copy())
    return RiccatiPath(np.asarray(times), np.asarray(mats))


def riccati_feedback(P_path: RiccatiPath, theta, t: float, B, cost: PdeCostSpec,
                     eps: LinearizationPoint, theta1: float) -> ScalarField:
    """LQR feedback u(t,.) = (1/k1) B P(T-t) theta(t,.) + 1/(eps*theta1),
    clamped cellwise to [0,1]."""
    T = P_path.horizon
    if not -1e-12 <= t <= T + 1e-12:
        raise ValueError(f"t={t} outside the Riccati horizon [0, {T}]")
    n = P_path.matrices.shape[1]
    th = as_cell_values(theta, n)
    b = as_cell_values(B, n)
    k1 = cost.k1_values(n)
    eps_v = eps.epsilon_values(n)
    t1 = float(theta1)
    if t1 <= 0.0:
        raise ValueError("theta1 must be positive for the feedback offset")
    P = P_path.P_lookback(t)
    raw = (b / k1) * (P @ th) + 1.0 / (eps_v * t1)
    u = np.clip(raw, 0.0, 1.0)
    clamped = float(np.mean((raw < 0.0) | (raw > 1.0)))
    if clamped > 0.0:
        logger.info("riccati_feedback clamped %.1f%% of cells at t=%g",
                    100.0 * clamped, t)
    return ScalarField(u)


# --------------------------------------------------------------------------
# linearized dynamics (for LQR evaluation)
# --------------------------------------------------------------------------

def _uniform_times(T: float, dt: float) -> np.ndarray:
    n = max(1, int(round(T / dt)))
    return np.linspace(0.0, T, n + 1)


def integrate_linearized(theta0, L1: OperatorMatrix, B, u_path: FieldPath,
                         alpha, T: float, dt: float) -> FieldPath:
    """RK4 integration of the linearized dynamics
    d(theta)/dt = -L1 theta - B u(t) + alpha with u interpolated from u_path."""
    n = L1.n_cells
    th = as_cell_values(theta0, n).copy()
    b = as_cell_values(B, n)
    al = as_cell_values(alpha, n)
    A1 = L1.matrix

    ut, uv = u_path.times, u_path.values

    def u_at(t):
        if t <= ut[0]:
            return uv[0]
        if t >= ut[-1]:
            return uv[-1]
        j = int(np.searchsorted(ut, t, side="right"))
        w = (t - ut[j - 1]) / (ut[j] - ut[j - 1])
        return (1.0 - w) * uv[j - 1] + w * uv[j]

    def f(t, x):
        return -(A1 @ x) - b * u_at(t) + al

    times = _uniform_times(T, dt)
    h = times[1] - times[0] if len(times) > 1 else 0.0
    out = np.empty((len(times), n))
    out[0] = th
    for k in range(len(times) - 1):
        t = times[k]
        s1 = f(t, th)
        s2 = f(t + 0.5 * h, th + 0.5 * h * s1)
        s3 = f(t + 0.5 * h, th + 0.5 * h * s2)
        s4 = f(t + h, th + h * s3)
        th = th + (h / 6.0) * (s1 + 2.0 * s2 + 2.0 * s3 + s4)
        out[k + 1] = th
    return FieldPath(times, out)


def closed_loop_linearized(theta0, L1: OperatorMatrix, B, P_path: RiccatiPath,
                           cost: PdeCostSpec, eps: LinearizationPoint, theta1: float,
                           alpha, T: float, dt: float):
    """RK4 integration of the linearized dynamics under the Riccati feedback.

    The feedback is evaluated at every RK4 stage (time and stage state), so
    the closed loop is integrated at full fourth order.  Returns
    (theta_path, u_path) sampled on the step grid; the stored u is the
    feedback at the stored states.
    """
    n = L1.n_cells
    th = as_cell_values(theta0, n).copy()
    b = as_cell_values(B, n)
    al = as_cell_values(alpha, n)
    A1 = L1.matrix

    def u_of(t, x):
        return riccati_feedback(P_path, x, t, b, cost, eps, theta1).values

    def f(t, x):
        return -(A1 @ x) - b * u_of(t, x) + al

    times = _uniform_times(T, dt)
    h = times[1] - times[0] if len(times) > 1 else 0.0
    out = np.empty((len(times), n))
    us = np.empty((len(times), n))
    out[0] = th
    us[0] = u_of(0.0, th)
    for k in range(len(times) - 1):
        t = times[k]
        s1 = f(t, th)
        s2 = f(t + 0.5 * h, th + 0.5 * h * s1)
        s3 = f(t + 0.5 * h, th + 0.5 * h * s2)
        s4 = f(t + h, th + h * s3)
        th = th + (h / 6.0) * (s1 + 2.0 * s2 + 2.0 * s3 + s4)
        out[k + 1] = th
        us[k + 1] = u_of(times[k + 1], th)
    return FieldPath(times, out), FieldPath(times, us)


# --------------------------------------------------------------------------
# nonlinear forward model with a time-varying control path
# --------------------------------------------------------------------------

def integrate_controlled(theta0, grid: SpatialGrid, A: DiffusionField, alpha,
                         u_path: FieldPath, theta1: float, T: float, dt: float) -> FieldPath:
    """Backward-Euler integration of the nonlinear model with a control that
    varies in both space and time; the operator diagonal is rebuilt each step
    from the control at the target time level."""
    n = grid.n_cells
    th = as_cell_values(theta0, n).copy()
    al = as_cell_values(alpha, n)
    t1 = float(theta1)

    times = _uniform_times(T, dt)
    h = times[1] - times[0] if len(times) > 1 else 0.0
    D = assemble_operator(grid, A, alpha=0.0, u=0.0, theta1=t1).matrix
    eye = sp.identity(n, format="csr")

    ut, uv = u_path.times, u_path.values

    def u_at(t):
        if t <= ut[0]:
            return uv[0]
        if t >= ut[-1]:
            return uv[-1]
        j = int(np.searchsorted(ut, t, side="right"))
        w = (t - ut[j - 1]) / (ut[j] - ut[j - 1])
        return (1.0 - w) * uv[j - 1] + w * uv[j]

    out = np.empty((len(times), n))
    out[0] = th
    for k in range(len(times) - 1):
        t_new = times[k + 1]
        floor = 1.0 - t1 * u_at(t_new)
        if np.any(floor <= 0.0):
            raise DivisionGuardError(
                f"control denominator 1 - theta1*u reached "
                f"{float(np.min(floor)):.3e} <= 0 at t={t_new:g}")
        M = (eye + h * (D + sp.diags(al / floor))).tocsr()
        th = _solve_checked(M, th + h * al, x0=th)
        out[k + 1] = th
    return FieldPath(times, out)


# --------------------------------------------------------------------------
# adjoint state
# --------------------------------------------------------------------------

def solve_adjoint_pde(theta_path: FieldPath, u_star: FieldPath, cost: PdeCostSpec,
                      grid: SpatialGrid, A: DiffusionField, T: float, dt: float,
                      alpha, theta1: float) -> FieldPath:
    """Solve the adjoint problem dp/dt = L_u p - 2*theta, p(T) = 2*k2*theta(T)
    backward in time with the same implicit scheme as the forward model.

    L_u is the full (reaction + diffusion) operator at the control u*(t);
    in reversed time s = T - t the equation becomes dq/ds + L_u q = 2*theta,
    which is exactly the forward structure, stepped implicitly.
    """
    n = grid.n_cells
    times = _uniform_times(T, dt)
    if theta_path.values.shape[1] != n or u_star.values.shape[1] != n:
        raise GridMismatchError("paths are not sized to the grid")
    for name, path in (("theta", theta_path), ("u", u_star)):
        if path.times.shape != times.shape or np.max(np.abs(path.times - times)) > 1e-9:
            raise GridMismatchError(f"{name} path times do not match the step grid")

    al = as_cell_values(alpha, n)
    t1 = float(theta1)
    k2 = cost.k2_values(n)
    h = times[1] - times[0] if len(times) > 1 else 0.0
    D = assemble_operator(grid, A, alpha=0.0, u=0.0, theta1=t1).matrix
    eye = sp.identity(n, format="csr")

    n_t = len(times)
    p = np.empty((n_t, n))
    p[-1] = 2.0 * k2 * theta_path.values[-1]
    for k in range(n_t - 2, -1, -1):
        # implicit step toward time level k: (I + h L_u(t_k)) p_k = p_{k+1} + h*2*theta(t_k)
        floor = 1.0 - t1 * u_star.values[k]
        if np.any(floor <= 0.0):
            raise DivisionGuardError(
                f"control denominator 1 - theta1*u reached "
                f"{float(np.min(floor)):.3e} <= 0 at t={times[k]:g}")
        M = (eye + h * (D + sp.diags(al / floor))).tocsr()
        rhs = p[k + 1] + h * 2.0 * theta_path.values[k]
        p[k] = _solve_checked(M, rhs, x0=p[k + 1])
    return FieldPath(times, p)


# --------------------------------------------------------------------------
# pointwise maximum-principle feedback
# --------------------------------------------------------------------------

def hamiltonian_pointwise_feedback(alpha, theta, p, theta1: float, k1) -> ScalarField:
    """Cellwise stationarity feedback for the nonlinear problem.

    Where 27*alpha*theta1^2*theta*p >= 8*k1 the control saturates at 1.
    Elsewhere u is the point of [0, min(1/(3*theta1), 1)] nearest the
    smallest nonnegative root of 2*k1*u*(1-theta1*u)^2 = alpha*theta1*theta*p,
    found by bisection (the left side increases on that interval).
    """
    t1 = float(theta1)
    if not 0.0 < t1 < 1.0:
        raise ValueError(f"theta1 must lie in (0,1), got {t1}")
    sizes = [np.asarray(getattr(x, "values", x)).shape[0]
             for x in (alpha, theta, p, k1)
             if np.asarray(getattr(x, "values", x)).ndim == 1]
    n = sizes[0] if sizes else 1
    al = as_cell_values(alpha, n)
    th = as_cell_values(theta, n)
    pv = as_cell_values(p, n)
    k1v = as_cell_values(k1, n)
    if np.any(k1v <= 0.0):
        raise ValueError("k1 must be strictly positive")

    c = al * t1 * th * pv               # right side of the stationarity equation
    u = np.zeros(n)
    bang = 27.0 * t1 * c >= 8.0 * k1v   # 27*alpha*theta1^2*theta*p >= 8*k1
    u[bang] = 1.0

    interior = (~bang) & (c > 0.0)
    if np.any(interior):
        ci = c[interior]
        ki = k1v[interior]
        lo = np.zeros(ci.shape)
        hi = np.full(ci.shape, 1.0 / (3.0 * t1))
        # phi(u) = 2*k1*u*(1-theta1*u)^2 - c is increasing on [0, 1/(3*theta1)],
        # phi(0) = -c < 0, phi(hi) >= 0 off the bang set
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            phi = 2.0 * ki * mid * (1.0 - t1 * mid) ** 2 - ci
            take_hi = phi > 0.0
            hi = np.where(take_hi, mid, hi)
            lo = np.where(take_hi, lo, mid)
        root = 0.5 * (lo + hi)
        u[interior] = np.minimum(root, 1.0)
    return ScalarField(u)


# --------------------------------------------------------------------------
# cost functional
# --------------------------------------------------------------------------

def eval_cost_JT3(theta_path: FieldPath, u_path: FieldPath, cost: PdeCostSpec,
                  grid: SpatialGrid, dt: float) -> float:
    """Quadrature of the quadratic cost: trapezoidal in time, midpoint in
    space, of integral(theta^2 + k1 u^2) dx dt plus terminal
    integral(k2 theta(T)^2) dx."""
    n = grid.n_cells
    if theta_path.values.shape[1] != n or u_path.values.shape[1] != n:
        raise GridMismatchError("paths are not sized to the grid")
    if theta_path.times.shape != u_path.times.shape or \
            np.max(np.abs(theta_path.times - u_path.times)) > 1e-9:
        raise GridMismatchError("theta and u paths are on different time grids")
    t = theta_path.times
    if len(t) > 1:
        steps = np.diff(t)
        if abs(float(np.min(steps)) - dt) > 1e-9 * max(1.0, dt) or \
                abs(float(np.max(steps)) - dt) > 1e-9 * max(1.0, dt):
            raise GridMismatchError(f"path step does not match dt={dt:g}")

    k1 = cost.k1_values(n)
    k2 = cost.k2_values(n)
    vol = grid.cell_volume
    integrand = (theta_path.values ** 2 + k1 * u_path.values ** 2).sum(axis=1) * vol
    running = float(np.trapezoid(integrand, t)) if len(t) > 1 else 0.0
    terminal = float(np.sum(k2 * theta_path.values[-1] ** 2) * vol)
    return running + terminal


# --------------------------------------------------------------------------
# forward-backward sweep
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepResult:
    """Outcome of the forward-backward sweep.

    u_path / theta_path / adjoint_path are aligned FieldPaths on the step
    grid; cost_history holds the cost after every sweep (reported even when
    the iteration stops on max_iter without meeting the tolerance).
    """

    u_path: FieldPath
    theta_path: FieldPath
    adjoint_path: FieldPath
    cost_history: np.ndarray
    converged: bool
    iterations: int


def forward_backward_sweep(theta0, grid: SpatialGrid, A: DiffusionField, alpha,
                           cost: PdeCostSpec, T: float, dt: float,
                           theta1: float, relax: float = 0.5,
                           max_iter: int = 100) -> SweepResult:
    """Fixed-point iteration for the nonlinear control problem.

    Each sweep integrates the state forward under the current control,
    solves the adjoint backward, evaluates the pointwise stationarity
    feedback at every time level, and relaxes the control toward it:
    u <- (1-relax)*u + relax*u_new.  Stops when the max-norm control change
    drops below 1e-6 or after max_iter sweeps (reported, not raised).
    """
    if not 0.0 < relax <= 1.0:
        raise ValueError(f"relax must lie in (0,1], got {relax}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    n = grid.n_cells
    times = _uniform_times(T, dt)
    al = as_cell_values(alpha, n)
    k1 = cost.k1_values(n)

    u_vals = np.zeros((len(times), n))
    u_path = FieldPath(times, u_vals)
    history = []
    converged = False
    iterations = 0
    theta_path = None
    p_path = None

    for iterations in range(1, max_iter + 1):
        theta_path = integrate_controlled(theta0, grid, A, al, u_path, theta1, T, dt)
        p_path = solve_adjoint_pde(theta_path, u_path, cost, grid, A, T, dt, al, theta1)
        u_new = np.empty_like(u_vals)
        for j in range(len(times)):
            u_new[j] = hamiltonian_pointwise_feedback(
                al, theta_path.values[j], p_path.values[j], theta1, k1).values
        u_next = (1.0 - relax) * u_vals + relax * u_new
        change = float(np.max(np.abs(u_next - u_vals)))
        u_vals = u_next
        u_path = FieldPath(times, u_vals)
        history.append(eval_cost_JT3(theta_path, u_path, cost, grid, dt))
        if change < _SWEEP_TOL:
            converged = True
            break

    # final state/adjoint consistent with the returned control
    theta_path = integrate_controlled(theta0, grid, A, al, u_path, theta1, T, dt)
    p_path = solve_adjoint_pde(theta_path, u_path, cost, grid, A, T, dt, al, theta1)
    history.append(eval_cost_JT3(theta_path, u_path, cost, grid, dt))
    return SweepResult(
        u_path=u_path,
        theta_path=theta_path,
        adjoint_path=p_path,
        cost_history=np.asarray(history),
        converged=converged,
        iterations=iterations,
    )

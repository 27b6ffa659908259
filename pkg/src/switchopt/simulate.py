"""Forward simulation of convexified switched dynamics and discrete adjoints.

The state equation couples a mode-dependent right-hand side with relaxed
multipliers: ydot = sum_i w_i(t) f(t, y, u, r^i).  Integration uses one
classical RK4 macro step per grid interval (or forward Euler when the system
asks for it), with all controls held constant on the interval.  Gradients are
exact for the discrete transcription: the adjoint sweep differentiates the
integrator itself, so it matches central finite differences to solver
precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import (
    BinaryControlPath,
    ContinuousControlPath,
    ModeTable,
    RelaxedControlPath,
    TimeGrid,
    mode_deviation_costs,
)
from .errors import DimensionError, DivergenceError

RK4 = "rk4"
EULER = "euler"


@dataclass(frozen=True, eq=False)
class SwitchedSystem:
    """Switched ODE with mode-wise right-hand side and Mayer objective.

    ``rhs(t, y, u, r)`` evaluates the full state derivative for one binary
    configuration r; ``rhs_jac_state`` and ``rhs_jac_control`` are its exact
    partial derivatives at the same arguments.  Integral costs are expected
    to be folded into the state as quadrature components so that the
    objective is ``terminal_cost`` at the final state only.
    """

    state_dim: int
    control_dim: int
    modes: ModeTable
    rhs: Callable
    rhs_jac_state: Callable
    rhs_jac_control: Callable
    terminal_cost: Callable
    terminal_cost_gradient: Callable
    initial_state: np.ndarray
    control_lower: np.ndarray
    control_upper: np.ndarray
    integrator: str = RK4
    name: str = ""
    state_names: Optional[tuple] = None
    # Optional vectorized hooks; semantics must match the per-mode callables.
    rhs_stack: Optional[Callable] = None            # (t, y, u) -> (n_modes, n_y)
    combined_jac_state: Optional[Callable] = None   # (t, y, u, weights) -> (n_y, n_y)
    combined_jac_control: Optional[Callable] = None  # (t, y, u, weights) -> (n_y, m_u)

    def __post_init__(self):
        y0 = np.asarray(self.initial_state, dtype=np.float64).reshape(-1)
        lo = np.asarray(self.control_lower, dtype=np.float64).reshape(-1)
        hi = np.asarray(self.control_upper, dtype=np.float64).reshape(-1)
        if y0.shape != (self.state_dim,):
            raise DimensionError(
                f"initial state has shape {y0.shape}, expected ({self.state_dim},)"
            )
        if lo.shape != (self.control_dim,) or hi.shape != (self.control_dim,):
            raise DimensionError("control bounds must have control_dim entries")
        if self.integrator not in (RK4, EULER):
            raise DimensionError(f"unknown integrator {self.integrator!r}")
        for a in (y0, lo, hi):
            a.flags.writeable = False
        object.__setattr__(self, "initial_state", y0)
        object.__setattr__(self, "control_lower", lo)
        object.__setattr__(self, "control_upper", hi)

@dataclass(frozen=True, eq=False)
class Trajectory:
    """State values at all grid nodes, row 0 being the initial state."""

    grid: TimeGrid
    states: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.states, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != self.grid.n_intervals + 1:
            raise DimensionError(
                f"trajectory shape {arr.shape} does not match grid with "
                f"{self.grid.n_intervals} intervals"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "states", arr)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def _mode_field(system: SwitchedSystem, t: float, y: np.ndarray, u: np.ndarray,
                weights: np.ndarray) -> np.ndarray:
    """Convex combination of mode right-hand sides.

    The per-mode path skips zero weights, which keeps one-hot rows bitwise
    identical to selecting the single active mode directly; the stacked path
    contracts in one product (exact up to the sign of zero).
    """
    if system.rhs_stack is not None:
        return weights @ system.rhs_stack(t, y, u)
    modes = system.modes.values
    out = None
    for i, wi in enumerate(weights):
        if wi == 0.0:
            continue
        fi = system.rhs(t, y, u, modes[i])
        contrib = fi if wi == 1.0 else wi * np.asarray(fi, dtype=np.float64)
        out = contrib if out is None else out + contrib
    if out is None:
        return np.zeros(system.state_dim)
    return np.asarray(out, dtype=np.float64)


def _check_control_shapes(system: SwitchedSystem, grid: TimeGrid,
                          u: ContinuousControlPath, w: RelaxedControlPath):
    if u.grid != grid or w.grid != grid:
        raise DimensionError("controls live on a different time grid")
    if u.n_channels != system.control_dim:
        raise DimensionError(
            f"control path has {u.n_channels} channels, system expects "
            f"{system.control_dim}"
        )
    if w.n_modes != system.modes.n_modes:
        raise DimensionError(
            f"multiplier path has {w.n_modes} modes, system expects "
            f"{system.modes.n_modes}"
        )


def _integrate_values(system: SwitchedSystem, grid: TimeGrid, u_values: np.ndarray,
                      w_values: np.ndarray) -> np.ndarray:
    """Forward sweep on raw arrays; returns (N+1, n_y) node states."""
    n = grid.n_intervals
    h = grid.step
    half_h = 0.5 * h
    sixth_h = h / 6.0
    states = np.empty((n + 1, system.state_dim))
    states[0] = system.initial_state
    y = system.initial_state.copy()
    rk4 = system.integrator == RK4
    stack = system.rhs_stack
    field = _mode_field
    for k in range(n):
        t = grid.t_start + k * h
        uk = u_values[k]
        wk = w_values[k]
        if rk4:
            if stack is not None:
                s1 = wk @ stack(t, y, uk)
                s2 = wk @ stack(t + half_h, y + half_h * s1, uk)
                s3 = wk @ stack(t + half_h, y + half_h * s2, uk)
                s4 = wk @ stack(t + h, y + h * s3, uk)
            else:
                s1 = field(system, t, y, uk, wk)
                s2 = field(system, t + half_h, y + half_h * s1, uk, wk)
                s3 = field(system, t + half_h, y + half_h * s2, uk, wk)
                s4 = field(system, t + h, y + h * s3, uk, wk)
            y = y + sixth_h * (s1 + 2.0 * s2 + 2.0 * s3 + s4)
        else:
            y = y + h * field(system, t, y, uk, wk)
        if not np.isfinite(y).all():
            raise DivergenceError(
                f"non-finite state after interval {k}", interval=k
            )
        states[k + 1] = y
    return states


def integrate(system: SwitchedSystem, grid: TimeGrid, u: ContinuousControlPath,
              w: RelaxedControlPath) -> Trajectory:
    """Integrate the convexified switched system across the grid.

    For one-hot multiplier rows this reproduces the binary-mode system
    exactly, since partial outer convexification is exact on vertices.
    """
    _check_control_shapes(system, grid, u, w)
    return Trajectory(grid, _integrate_values(system, grid, u.values, w.values))


def objective(system: SwitchedSystem, trajectory: Trajectory) -> float:
    """Terminal cost of a simulated trajectory."""
    return float(system.terminal_cost(trajectory.final_state))


def _penalty_weights(system: SwitchedSystem, grid: TimeGrid,
                     v_tilde: BinaryControlPath) -> np.ndarray:
    """step * |r^i - v_tilde_k|_1 table used by the coupling penalty."""
    if v_tilde.grid != grid:
        raise DimensionError("penalty reference lives on a different grid")
    return grid.step * mode_deviation_costs(system.modes, v_tilde)


def penalized_objective(system: SwitchedSystem, grid: TimeGrid,
                        u: ContinuousControlPath, w: RelaxedControlPath,
                        v_tilde: BinaryControlPath, rho: float) -> float:
    """Objective plus rho times the integrated multiplier/projection gap.

    The penalty accumulator state has a piecewise-constant derivative, so its
    terminal value is evaluated in closed form instead of being integrated.
    """
    if rho < 0:
        raise DimensionError(f"penalty parameter must be >= 0, got {rho}")
    base = objective(system, integrate(system, grid, u, w))
    coeffs = _penalty_weights(system, grid, v_tilde)
    return base + rho * float((w.values * coeffs).sum())


def weighted_penalty_value(system: SwitchedSystem, grid: TimeGrid,
                           w: RelaxedControlPath, v_tilde: BinaryControlPath) -> float:
    """Integrated multiplier-weighted 1-norm gap to a binary reference path."""
    coeffs = _penalty_weights(system, grid, v_tilde)
    return float((w.values * coeffs).sum())


_RK_B = (1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0)


def _adjoint_values(system: SwitchedSystem, grid: TimeGrid, u_values: np.ndarray,
                    w_values: np.ndarray, penalty_grad_w: Optional[np.ndarray],
                    states: Optional[np.ndarray] = None):
    """Reverse sweep on raw arrays.

    Returns (value, grad_u, grad_w) of terminal cost plus the linear penalty
    whose w-gradient is ``penalty_grad_w`` (already scaled by rho and step).
    Stage states are recomputed backwards from the stored node states, which
    may be passed in to reuse an existing forward sweep.
    """
    n = grid.n_intervals
    h = grid.step
    modes = system.modes.values
    n_modes = modes.shape[0]
    if states is None:
        states = _integrate_values(system, grid, u_values, w_values)
    value = float(system.terminal_cost(states[-1]))
    if penalty_grad_w is not None:
        value += float((w_values * penalty_grad_w).sum())

    grad_u = np.zeros_like(u_values)
    grad_w = np.zeros_like(w_values)
    if penalty_grad_w is not None:
        grad_w += penalty_grad_w

    lam = np.asarray(system.terminal_cost_gradient(states[-1]), dtype=np.float64).copy()
    rk4 = system.integrator == RK4
    has_u = u_values.shape[1] > 0
    stack = system.rhs_stack
    half_h = 0.5 * h
    hb1, hb2, hb3, hb4 = (h * b for b in _RK_B)

    def stage_rhs(t, y, uk):
        if stack is not None:
            return np.asarray(stack(t, y, uk), dtype=np.float64)
        return np.array(
            [system.rhs(t, y, uk, modes[i]) for i in range(n_modes)],
            dtype=np.float64,
        )

    for k in range(n - 1, -1, -1):
        t = grid.t_start + k * h
        uk = u_values[k]
        wk = w_values[k]
        y1 = states[k]
        if rk4:
            # Recompute stage states and per-mode stage derivatives ...
            t_mid, t_end = t + half_h, t + h
            f1 = stage_rhs(t, y1, uk)
            y2 = y1 + half_h * (wk @ f1)
            f2 = stage_rhs(t_mid, y2, uk)
            y3 = y1 + half_h * (wk @ f2)
            f3 = stage_rhs(t_mid, y3, uk)
            y4 = y1 + h * (wk @ f3)
            f4 = stage_rhs(t_end, y4, uk)
            # ... then roll the adjoint back through them.
            sb4 = hb4 * lam
            yb4 = _combined_state_jacobian(system, t_end, y4, uk, wk).T @ sb4
            sb3 = hb3 * lam + h * yb4
            yb3 = _combined_state_jacobian(system, t_mid, y3, uk, wk).T @ sb3
            sb2 = hb2 * lam + half_h * yb3
            yb2 = _combined_state_jacobian(system, t_mid, y2, uk, wk).T @ sb2
            sb1 = hb1 * lam + half_h * yb2
            yb1 = _combined_state_jacobian(system, t, y1, uk, wk).T @ sb1
            grad_w[k] += f1 @ sb1 + f2 @ sb2 + f3 @ sb3 + f4 @ sb4
            if has_u:
                grad_u[k] += (
                    _combined_control_jacobian(system, t, y1, uk, wk).T @ sb1
                    + _combined_control_jacobian(system, t_mid, y2, uk, wk).T @ sb2
                    + _combined_control_jacobian(system, t_mid, y3, uk, wk).T @ sb3
                    + _combined_control_jacobian(system, t_end, y4, uk, wk).T @ sb4
                )
            lam = lam + yb1 + yb2 + yb3 + yb4
        else:
            fj = stage_rhs(t, y1, uk)
            grad_w[k] += h * (fj @ lam)
            if has_u:
                grad_u[k] += h * (
                    _combined_control_jacobian(system, t, y1, uk, wk).T @ lam
                )
            lam = lam + h * (
                _combined_state_jacobian(system, t, y1, uk, wk).T @ lam
            )

    return value, grad_u, grad_w


def _combined_state_jacobian(system, t, y, u, weights):
    if system.combined_jac_state is not None:
        return np.asarray(system.combined_jac_state(t, y, u, weights), dtype=np.float64)
    modes = system.modes.values
    out = None
    for i, wi in enumerate(weights):
        if wi == 0.0:
            continue
        ji = np.asarray(system.rhs_jac_state(t, y, u, modes[i]), dtype=np.float64)
        contrib = ji if wi == 1.0 else wi * ji
        out = contrib if out is None else out + contrib
    if out is None:
        return np.zeros((system.state_dim, system.state_dim))
    return out


def _combined_control_jacobian(system, t, y, u, weights):
    if system.combined_jac_control is not None:
        return np.asarray(system.combined_jac_control(t, y, u, weights), dtype=np.float64)
    modes = system.modes.values
    out = None
    for i, wi in enumerate(weights):
        if wi == 0.0:
            continue
        ji = np.asarray(system.rhs_jac_control(t, y, u, modes[i]), dtype=np.float64)
        contrib = ji if wi == 1.0 else wi * ji
        out = contrib if out is None else out + contrib
    if out is None:
        return np.zeros((system.state_dim, system.control_dim))
    return out


def adjoint_gradient(system: SwitchedSystem, grid: TimeGrid,
                     u: ContinuousControlPath, w: RelaxedControlPath,
                     v_tilde: BinaryControlPath, rho: float):
    """Exact gradient of the penalized objective in the discrete variables.

    Returns (grad_u, grad_w) with the shapes of the control value arrays.
    Differentiates the integrator transcription itself, so the result agrees
    with central finite differences on the discrete problem.
    """
    _check_control_shapes(system, grid, u, w)
    if rho < 0:
        raise DimensionError(f"penalty parameter must be >= 0, got {rho}")
    pen = rho * _penalty_weights(system, grid, v_tilde) if rho > 0 else None
    _, grad_u, grad_w = _adjoint_values(system, grid, u.values, w.values, pen)
    return grad_u, grad_w


def validate_derivatives(system: SwitchedSystem, rng: np.random.Generator,
                         n_points: int = 5, scale: float = 1.0,
                         step: float = 1e-6, rtol: float = 1e-5) -> float:
    """Finite-difference consistency check of the supplied Jacobians.

    Samples random states/controls/modes and compares rhs_jac_state and
    rhs_jac_control against central differences of rhs.  Returns the worst
    relative error; raises AssertionError beyond ``rtol``.
    """
    worst = 0.0
    for _ in range(n_points):
        t = float(rng.uniform(0.0, 1.0))
        y = scale * rng.standard_normal(system.state_dim)
        u = scale * rng.standard_normal(system.control_dim)
        mode = system.modes.values[rng.integers(system.modes.n_modes)]
        jy = np.asarray(system.rhs_jac_state(t, y, u, mode), dtype=np.float64)
        ju = np.asarray(system.rhs_jac_control(t, y, u, mode), dtype=np.float64)
        fd_y = np.zeros_like(jy)
        for j in range(system.state_dim):
            dy = np.zeros(system.state_dim)
            dy[j] = step
            fd_y[:, j] = (
                np.asarray(system.rhs(t, y + dy, u, mode))
                - np.asarray(system.rhs(t, y - dy, u, mode))
            ) / (2 * step)
        fd_u = np.zeros_like(ju)
        for j in range(system.control_dim):
            du = np.zeros(system.control_dim)
            du[j] = step
            fd_u[:, j] = (
                np.asarray(system.rhs(t, y, u + du, mode))
                - np.asarray(system.rhs(t, y, u - du, mode))
            ) / (2 * step)
        denom = max(1.0, float(np.abs(jy).max()) if jy.size else 1.0,
                    float(np.abs(ju).max()) if ju.size else 1.0)
        err = 0.0
        if jy.size:
            err = max(err, float(np.abs(jy - fd_y).max()) / denom)
        if ju.size:
            err = max(err, float(np.abs(ju - fd_u).max()) / denom)
        worst = max(worst, err)
    if worst > rtol:
        raise AssertionError(f"jacobian check failed: relative error {worst:.3e}")
    return worst

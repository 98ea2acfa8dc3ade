"""Finite-horizon cloaking control via Crank-Nicolson and a quasi-Newton loop.

Time discretization
-------------------
State and reference march with Crank-Nicolson; the control enters each step
as the midpoint average of its nodal values; both cost terms use the
trapezoidal rule in time.

The discrete adjoint of that pairing is a Crank-Nicolson sweep on the
staggered (midpoint) grid; node-averaging its values gives multipliers
whose reduced gradient is the exact derivative of the discrete cost (the
raw sweep's terminal row is the injected value plus the order-dt dual of
the final tracking weight). A terminal adjoint value is injected
additively, carried by a homogeneous backward sweep: it contributes an
exactly known linear term to the merit function minimized by the line
search, so gradient consistency is preserved. In the steady-terminal
production mode the final control is pinned to the steady control and the
returned terminal adjoint row is the steady adjoint by assignment, which
makes the terminal optimality row exactly the steady Euler equation.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .assembly import FemOperators
from .sampling import ScenarioParams
from .steady import ControlWeights, SteadySolution, solve_steady


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, horizon] with `steps` intervals."""

    horizon: float = 5.0
    steps: int = 100

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")

    @property
    def dt(self):
        return self.horizon / self.steps

    @property
    def instants(self):
        return np.linspace(0.0, self.horizon, self.steps + 1)


def tracking_weights(steps: int) -> np.ndarray:
    """Trapezoidal quadrature weights for the tracking term."""
    w = np.ones(steps + 1)
    w[0] = 0.5
    w[steps] = 0.5
    return w


def control_weights(steps: int) -> np.ndarray:
    """Trapezoidal quadrature weights for the control term."""
    w = np.ones(steps + 1)
    w[0] = 0.5
    w[steps] = 0.5
    return w


def weighted_inner(grid: TimeGrid, a, b):
    """Duality pairing of control-space trajectories: trapezoid in time."""
    w = control_weights(grid.steps)
    return grid.dt * float(np.einsum("k,kj,kj->", w, a, b))


@dataclass(frozen=True)
class IterationRecord:
    index: int
    cost: float
    merit: float
    grad_norm: float
    step: float


@dataclass(frozen=True)
class Trajectory:
    """Discrete trajectories of all four fields plus the outer-iteration log."""

    grid: TimeGrid
    z: np.ndarray  # (steps+1, n_reference)
    q: np.ndarray  # (steps+1, n_state)
    p: np.ndarray  # (steps+1, n_state)
    u: np.ndarray  # (steps+1, n_control)
    iterations: tuple[IterationRecord, ...] = ()
    converged: bool = True
    steady: SteadySolution | None = None
    solve_seconds: float = 0.0

    @property
    def cost(self):
        return self.iterations[-1].cost if self.iterations else 0.0


class ArmijoError(RuntimeError):
    """Backtracking exhausted its budget; carries the last trial values."""

    def __init__(self, message, trial_step, trial_cost, base_cost):
        super().__init__(message)
        self.trial_step = trial_step
        self.trial_cost = trial_cost
        self.base_cost = base_cost


# ---------------------------------------------------------------------------
# linear-algebra helpers shared by the full-order and reduced paths


def _factorize(matrix):
    if sparse.issparse(matrix):
        lu = splu(matrix.tocsc())
        return lu.solve
    # reduced matrices are small and benign: a precomputed inverse turns every
    # time step into one gemv instead of a python-level triangular solve
    inv = np.linalg.inv(np.asarray(matrix))
    return inv.__matmul__


def _apply(matrix, vec):
    return matrix @ vec


@dataclass(frozen=True)
class LinearOcpSystem:
    """Operator bundle the stepping and optimization routines run on.

    Matrices may be scipy sparse (full order) or dense numpy (reduced order);
    the algorithms below never depend on which.
    """

    mass: object
    stiff: object
    rhs_const: np.ndarray
    coupling: object  # control-to-state map B
    control_block: object  # beta Mu + beta_grad Au
    obs_mass: object
    obs_cross: object  # maps reference coordinates into the residual
    obs_zgram: object  # reference-side Gramian of the tracking form
    ref_mass: object
    ref_stiff: object
    ref_rhs: np.ndarray

    def restrict_reference(self, z_rows):
        return z_rows


@dataclass(frozen=True)
class _FomSystem(LinearOcpSystem):
    operators: FemOperators = None

    def restrict_reference(self, z_rows):
        return self.operators.restrict_reference(z_rows)


def _fom_system(ops: FemOperators, params: ScenarioParams, weights: ControlWeights):
    mu = params.diffusivity
    obs = ops.observation_mass
    return _FomSystem(
        mass=ops.mass_ocp,
        stiff=(mu * ops.stiffness_ocp + ops.robin_ocp).tocsr(),
        rhs_const=mu * params.obstacle_temperature * ops.dirichlet_lift
        + params.intensity * ops.restrict_reference(ops.source_load),
        coupling=ops.control_coupling,
        control_block=ops.control_block(weights),
        obs_mass=obs,
        obs_cross=obs,
        obs_zgram=obs,
        ref_mass=ops.mass,
        ref_stiff=(mu * ops.stiffness + ops.robin_mass).tocsr(),
        ref_rhs=params.intensity * ops.source_load,
        operators=ops,
    )


def _cn_march(solve_c, d_mat, grid: TimeGrid, rhs_const=None, forcing=None, y0=None):
    """Crank-Nicolson forward sweep. `forcing` holds nodal rows whose midpoint
    averages drive each step."""
    n = d_mat.shape[0]
    out = np.zeros((grid.steps + 1, n))
    if y0 is not None:
        out[0] = y0
    for k in range(grid.steps):
        rhs = _apply(d_mat, out[k])
        if rhs_const is not None:
            rhs = rhs + rhs_const
        if forcing is not None:
            rhs = rhs + 0.5 * (forcing[k] + forcing[k + 1])
        out[k + 1] = solve_c(rhs)
    return out


def _terminal_sweep(solve_c, d_mat, grid: TimeGrid, p_terminal):
    """Homogeneous backward march carrying the terminal adjoint value."""
    h = np.zeros((grid.steps + 1, d_mat.shape[0]))
    h[grid.steps] = p_terminal
    for k in range(grid.steps - 1, -1, -1):
        h[k] = solve_c(_apply(d_mat, h[k + 1]))
    return h


def _adjoint_sweeps(solve_c, d_mat, residuals, grid: TimeGrid, p_terminal=None, h_rows=None):
    """Exact discrete adjoint of the stepping scheme and cost quadrature.

    A staggered backward sweep carries the tracking sources; node averaging
    recovers the nodal multipliers, and a homogeneous sweep adds the injected
    terminal value. The terminal row is `p_terminal` plus the (one-step,
    order-dt) dual of the final tracking weight; that combination is what
    makes the reduced gradient the exact derivative of the discrete cost.
    """
    steps = grid.steps
    n = d_mat.shape[0]
    w_track = tracking_weights(steps)
    phat = np.zeros((steps, n))
    phat[steps - 1] = solve_c(w_track[steps] * residuals[steps])
    for m in range(steps - 1, 0, -1):
        phat[m - 1] = solve_c(w_track[m] * residuals[m] + _apply(d_mat, phat[m]))

    p = np.zeros((steps + 1, n))
    p[0] = phat[0]
    if steps > 1:
        p[1:steps] = 0.5 * (phat[:-1] + phat[1:])
    p[steps] = phat[steps - 1]
    if h_rows is None and p_terminal is not None and np.any(p_terminal):
        h_rows = _terminal_sweep(solve_c, d_mat, grid, p_terminal)
    if h_rows is not None:
        p += h_rows
    return p


def _rows_apply(matrix, rows):
    """Apply `matrix` to every row of a (time, dof) stack."""
    return (matrix @ rows.T).T


def _tracking_values(system: LinearOcpSystem, q_rows, zobs_rows):
    qm = _rows_apply(system.obs_mass, q_rows)
    cz = _rows_apply(system.obs_cross, zobs_rows)
    gz = _rows_apply(system.obs_zgram, zobs_rows)
    return 0.5 * (
        np.einsum("kj,kj->k", q_rows, qm)
        - 2.0 * np.einsum("kj,kj->k", q_rows, cz)
        + np.einsum("kj,kj->k", zobs_rows, gz)
    )


def _tracking_residuals(system: LinearOcpSystem, q_rows, zobs_rows):
    return _rows_apply(system.obs_mass, q_rows) - _rows_apply(system.obs_cross, zobs_rows)


def _control_values(system: LinearOcpSystem, u_rows):
    ru = _rows_apply(system.control_block, u_rows)
    return 0.5 * np.einsum("kj,kj->k", u_rows, ru)


def _cost_value(system: LinearOcpSystem, grid: TimeGrid, q_rows, zobs_rows, u_rows):
    track = _tracking_values(system, q_rows, zobs_rows)
    ctrl = _control_values(system, u_rows)
    return grid.dt * float(tracking_weights(grid.steps) @ track + control_weights(grid.steps) @ ctrl)


# ---------------------------------------------------------------------------
# public full-order operations


def solve_reference(ops: FemOperators, params: ScenarioParams, grid: TimeGrid):
    """Reference dynamics on the unperturbed mesh, starting from rest."""
    system = _fom_system(ops, params, ControlWeights())
    dt = grid.dt
    solve_c = _factorize(system.ref_mass / dt + 0.5 * system.ref_stiff)
    d_mat = system.ref_mass / dt - 0.5 * system.ref_stiff
    return _cn_march(solve_c, d_mat, grid, rhs_const=system.ref_rhs)


def solve_state(ops: FemOperators, params: ScenarioParams, grid: TimeGrid, u,
                weights: ControlWeights | None = None):
    """Controlled state on the restricted mesh for given nodal control rows."""
    system = _fom_system(ops, params, weights or ControlWeights())
    dt = grid.dt
    solve_c = _factorize(system.mass / dt + 0.5 * system.stiff)
    d_mat = system.mass / dt - 0.5 * system.stiff
    forcing = _rows_apply(system.coupling, np.asarray(u))
    return _cn_march(solve_c, d_mat, grid, rhs_const=system.rhs_const, forcing=forcing)


def solve_adjoint(ops: FemOperators, params: ScenarioParams, grid: TimeGrid, q, z,
                  p_terminal=None):
    """Backward sweep driven by the observation mismatch of (q, z).

    The returned multipliers make the reduced gradient the exact derivative
    of the discrete cost; the final row equals `p_terminal` plus the one-step
    dual of the terminal tracking weight (order dt, zero when the final
    mismatch vanishes).
    """
    system = _fom_system(ops, params, ControlWeights())
    dt = grid.dt
    solve_c = _factorize(system.mass / dt + 0.5 * system.stiff)
    d_mat = system.mass / dt - 0.5 * system.stiff
    zobs = system.restrict_reference(np.asarray(z))
    residuals = _tracking_residuals(system, np.asarray(q), zobs)
    if p_terminal is None:
        p_terminal = np.zeros(ops.n_state)
    return _adjoint_sweeps(solve_c, d_mat, residuals, grid, p_terminal)


def evaluate_cost(ops: FemOperators, grid: TimeGrid, q, z, u, weights: ControlWeights):
    """Discrete cost of given trajectories (tracking plus control penalty)."""
    mismatch = np.asarray(q) - ops.restrict_reference(np.asarray(z))
    track = 0.5 * np.einsum("kj,kj->k", mismatch, _rows_apply(ops.observation_mass, mismatch))
    u_rows = np.asarray(u)
    ctrl = 0.5 * np.einsum("kj,kj->k", u_rows, _rows_apply(ops.control_block(weights), u_rows))
    return grid.dt * float(tracking_weights(grid.steps) @ track + control_weights(grid.steps) @ ctrl)


def quasi_newton_step(ops: FemOperators, weights: ControlWeights, u, p):
    """Reduced gradient and preconditioned descent direction, per time level."""
    r_blk = ops.control_block(weights)
    g = _rows_apply(r_blk, np.asarray(u)) + _rows_apply(ops.control_coupling.T, np.asarray(p))
    solve_r = _factorize(r_blk)
    d = -solve_r(g.T).T
    return d, g


def armijo_backtracking(cost, u, d, g, grid: TimeGrid, *, tau0=1.0, shrink=0.5,
                        c1=1e-4, max_backtracks=30):
    """Largest step `tau0 * shrink**m` satisfying the sufficient-decrease test.

    `cost` is a callable evaluating the merit at a control trajectory; each
    trial costs one state solve.
    """
    slope = weighted_inner(grid, g, d)
    if slope >= 0.0:
        raise ValueError("search direction is not a descent direction")
    base = cost(u)
    tau = tau0
    trial = np.inf
    for _ in range(max_backtracks + 1):
        trial = cost(u + tau * d)
        if trial <= base + c1 * tau * slope:
            return tau, trial
        tau *= shrink
    raise ArmijoError(
        f"no acceptable step after {max_backtracks} backtracks", tau / shrink, trial, base
    )


def _armijo_step_quadratic(merit_now, merit_trial, slope, tau0, shrink, c1, max_back):
    """Step the literal backtracking loop would accept, from one trial solve.

    The merit is an exact quadratic along the search direction, so the
    sufficient-decrease test reduces to a threshold on the step length.
    """
    curvature = 2.0 * (merit_trial - merit_now - tau0 * slope) / tau0**2
    if curvature <= 0.0:
        return tau0
    tau_max = 2.0 * (1.0 - c1) * (-slope) / curvature
    if tau0 <= tau_max:
        return tau0
    backtracks = int(np.ceil(np.log(tau_max / tau0) / np.log(shrink)))
    if backtracks > max_back:
        raise ArmijoError(
            f"no acceptable step after {max_back} backtracks",
            tau0 * shrink**max_back, merit_trial, merit_now,
        )
    return tau0 * shrink**backtracks


def _newton_loop(system: LinearOcpSystem, grid: TimeGrid, u0, p_terminal, tol, max_iter,
                 armijo=(1.0, 0.5, 1e-4, 30), grad_scale=None, pin_final=False):
    """Preconditioned fixed-point iteration on the discrete optimality system.

    Returns (z_rows, q_rows, p_rows, u_rows, iteration log, converged flag).
    The line search runs on the merit functional (cost plus the linear term
    induced by the injected terminal adjoint), which is exactly quadratic:
    one trial state solve determines the Armijo-accepted step, and the state
    at the accepted step follows by affine interpolation. With `pin_final`
    the last control row is data, not an unknown.
    """
    dt = grid.dt
    solve_c = _factorize(system.mass / dt + 0.5 * system.stiff)
    d_mat = system.mass / dt - 0.5 * system.stiff
    solve_r = _factorize(system.control_block)

    ref_solve_c = _factorize(system.ref_mass / dt + 0.5 * system.ref_stiff)
    ref_d = system.ref_mass / dt - 0.5 * system.ref_stiff
    z_rows = _cn_march(ref_solve_c, ref_d, grid, rhs_const=system.ref_rhs)
    zobs = system.restrict_reference(z_rows)

    n_state = system.mass.shape[0]
    if p_terminal is None:
        p_terminal = np.zeros(n_state)
    if np.any(p_terminal):
        h_rows = _terminal_sweep(solve_c, d_mat, grid, p_terminal)
        lin_rows = _rows_apply(system.coupling.T, h_rows)
    else:
        h_rows = None
        lin_rows = None

    def state_of(u_rows):
        forcing = _rows_apply(system.coupling, u_rows)
        return _cn_march(solve_c, d_mat, grid, rhs_const=system.rhs_const, forcing=forcing)

    def merit_of(q_rows, u_rows):
        value = _cost_value(system, grid, q_rows, zobs, u_rows)
        if lin_rows is not None:
            value += weighted_inner(grid, lin_rows, u_rows)
        return value

    tau0, shrink, c1, max_back = armijo
    u_rows = u0.copy()
    log = []
    converged = False
    q_rows = state_of(u_rows)
    p_rows = None
    for it in range(max_iter + 1):
        cost_now = _cost_value(system, grid, q_rows, zobs, u_rows)
        merit_now = cost_now if lin_rows is None else cost_now + weighted_inner(grid, lin_rows, u_rows)
        residuals = _tracking_residuals(system, q_rows, zobs)
        p_rows = _adjoint_sweeps(solve_c, d_mat, residuals, grid, p_terminal, h_rows=h_rows)
        g_rows = _rows_apply(system.control_block, u_rows) + _rows_apply(system.coupling.T, p_rows)
        if pin_final:
            g_rows[-1] = 0.0
        grad_norm = float(np.linalg.norm(g_rows))
        if it == 0 and grad_scale is None:
            grad_scale = max(1.0, grad_norm)
        if grad_norm <= tol * grad_scale:
            log.append(IterationRecord(it, cost_now, merit_now, grad_norm, 0.0))
            converged = True
            break
        if it == max_iter:
            log.append(IterationRecord(it, cost_now, merit_now, grad_norm, 0.0))
            break
        d_rows = -solve_r(g_rows.T).T
        slope = weighted_inner(grid, g_rows, d_rows)
        if slope >= 0.0:
            raise RuntimeError("search direction lost descent; control block may be indefinite")
        q_trial = state_of(u_rows + tau0 * d_rows)
        merit_trial = merit_of(q_trial, u_rows + tau0 * d_rows)
        tau = _armijo_step_quadratic(merit_now, merit_trial, slope, tau0, shrink, c1, max_back)
        u_rows = u_rows + tau * d_rows
        q_rows = q_rows + (tau / tau0) * (q_trial - q_rows)  # state map is affine in u
        log.append(IterationRecord(it, cost_now, merit_now, grad_norm, tau))
    return z_rows, q_rows, p_rows, u_rows, tuple(log), converged


def _solve_ocp_system(system: LinearOcpSystem, grid: TimeGrid, u0, steady_p, tol, max_iter,
                      terminal, armijo):
    """Run the quasi-Newton loop with the requested terminal treatment.

    With the steady terminal, the final-time control is pinned to its known
    steady value (the terminal Euler equation `R u + B' p = 0` holds there
    by the steady solve) and the steady adjoint is injected as terminal
    data; the returned terminal adjoint row is that injected value, by
    assignment. With the zero terminal the plain finite-horizon problem is
    solved over all control unknowns.
    """
    if terminal == "zero":
        p_term = np.zeros_like(steady_p) if steady_p is not None else np.zeros(system.mass.shape[0])
        return _newton_loop(system, grid, u0, p_term, tol, max_iter, armijo=armijo)

    z_rows, q_rows, p_rows, u_rows, log, converged = _newton_loop(
        system, grid, u0, steady_p, tol, max_iter, armijo=armijo, pin_final=True
    )
    p_rows = p_rows.copy()
    p_rows[-1] = steady_p
    return z_rows, q_rows, p_rows, u_rows, log, converged


def solve_transient_ocp(ops: FemOperators, params: ScenarioParams, weights: ControlWeights,
                        grid: TimeGrid, tol=1e-8, max_iter=50, terminal="steady",
                        armijo=(1.0, 0.5, 1e-4, 30)) -> Trajectory:
    """Full transient solve: steady warm start, then the quasi-Newton loop.

    `terminal="steady"` injects the steady adjoint (with the terminal-dual
    compensation of :func:`_solve_ocp_system`) as the final-time adjoint
    value, driving the trajectory into the steady optimum; `terminal="zero"`
    solves the plain finite-horizon problem. Non-convergence within
    `max_iter` returns a warning-flagged result.
    """
    if terminal not in ("steady", "zero"):
        raise ValueError("terminal must be 'steady' or 'zero'")
    start = time.perf_counter()
    steady = solve_steady(ops, params, weights)
    system = _fom_system(ops, params, weights)
    u0 = np.tile(steady.u, (grid.steps + 1, 1))
    z_rows, q_rows, p_rows, u_rows, log, converged = _solve_ocp_system(
        system, grid, u0, steady.p, tol, max_iter, terminal, armijo
    )
    elapsed = time.perf_counter() - start
    if not converged:
        warnings.warn(
            f"transient solve stopped at max_iter={max_iter} with gradient norm "
            f"{log[-1].grad_norm:.3e}"
        )
    return Trajectory(
        grid=grid,
        z=z_rows,
        q=q_rows,
        p=p_rows,
        u=u_rows,
        iterations=log,
        converged=converged,
        steady=steady,
        solve_seconds=elapsed,
    )

import warnings
from dataclasses import replace

import numpy as np
import pytest
from scipy import sparse

from thermocloak import (
    ArmijoError,
    ControlWeights,
    TimeGrid,
    armijo_backtracking,
    evaluate_cost,
    quasi_newton_step,
    solve_adjoint,
    solve_reference,
    solve_state,
    solve_steady,
    solve_transient_ocp,
)
from thermocloak.sampling import ScenarioParams
from thermocloak.transient import (
    _armijo_step_quadratic,
    _cn_march,
    _factorize,
    control_weights,
    tracking_weights,
    weighted_inner,
)

from conftest import relative_l2


@pytest.fixture(scope="module")
def setting(tiny_ops, oracle_weights):
    params = ScenarioParams(2.0, 1e3, 50.0)
    grid = TimeGrid(1.0, 6)
    z = solve_reference(tiny_ops, params, grid)
    return tiny_ops, params, oracle_weights, grid, z


class TestTimeGrid:
    def test_spacing(self):
        grid = TimeGrid(5.0, 100)
        assert grid.dt == pytest.approx(0.05)
        assert len(grid.instants) == 101
        assert grid.instants[-1] == pytest.approx(5.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            TimeGrid(5.0, 0)
        with pytest.raises(ValueError):
            TimeGrid(-1.0, 10)

    def test_quadrature_weights_sum(self):
        for steps in (1, 2, 5, 100):
            assert tracking_weights(steps).sum() == pytest.approx(steps)
            assert control_weights(steps).sum() == pytest.approx(steps)


class TestCrankNicolsonStepper:
    def test_zero_forcing_stays_zero(self, tiny_ops, mu_t1):
        grid = TimeGrid(1.0, 10)
        params = ScenarioParams(mu_t1.diffusivity, 0.0, 0.0)
        z = solve_reference(tiny_ops, params, grid)
        assert not z.any()

    def test_scalar_ode_second_order(self):
        # oracle: dy/dt = -y + 1 from rest, exact solution 1 - exp(-t)
        mass = np.array([[1.0]])
        stiff = np.array([[1.0]])
        rhs = np.array([1.0])
        errors = []
        for steps in (8, 16, 32):
            grid = TimeGrid(1.0, steps)
            solve_c = _factorize(mass / grid.dt + 0.5 * stiff)
            d_mat = mass / grid.dt - 0.5 * stiff
            y = _cn_march(solve_c, d_mat, grid, rhs_const=rhs)
            exact = 1.0 - np.exp(-grid.instants)
            errors.append(np.abs(y[:, 0] - exact).max())
        rates = [errors[i] / errors[i + 1] for i in range(2)]
        for rate in rates:
            assert rate == pytest.approx(4.0, rel=0.2)

    def test_reference_settles_to_steady(self, tiny_ops, oracle_weights):
        params = ScenarioParams(2.0, 1e3, 0.0)
        grid = TimeGrid(12.0, 120)
        z = solve_reference(tiny_ops, params, grid)
        z_ss = solve_steady(tiny_ops, params, oracle_weights).z
        assert relative_l2(z[-1], z_ss, tiny_ops.mass) <= 1e-2

    def test_state_zero_data(self, tiny_ops):
        grid = TimeGrid(1.0, 5)
        params = ScenarioParams(3.0, 0.0, 0.0)
        u = np.zeros((grid.steps + 1, tiny_ops.n_control))
        q = solve_state(tiny_ops, params, grid, u)
        assert not q.any()

    def test_state_with_steady_control_settles(self, tiny_ops, oracle_weights):
        params = ScenarioParams(2.0, 1e3, 50.0)
        steady = solve_steady(tiny_ops, params, oracle_weights)
        grid = TimeGrid(12.0, 120)
        u = np.tile(steady.u, (grid.steps + 1, 1))
        q = solve_state(tiny_ops, params, grid, u)
        assert relative_l2(q[-1], steady.q, tiny_ops.mass_ocp) <= 1e-2

    def test_uncontrolled_mismatch_grows_then_settles(self, tiny_ops):
        # hot obstacle, no control: the observation mismatch rises from zero
        # and levels off at its steady value
        params = ScenarioParams(2.0, 1e3, 100.0)
        grid = TimeGrid(10.0, 100)
        z = solve_reference(tiny_ops, params, grid)
        u = np.zeros((grid.steps + 1, tiny_ops.n_control))
        q = solve_state(tiny_ops, params, grid, u)
        mismatch = q - tiny_ops.restrict_reference(z)
        norms = np.sqrt(np.einsum("kj,kj->k", mismatch, (tiny_ops.observation_mass @ mismatch.T).T))
        assert norms[0] == 0.0
        assert norms[1] > 0.0  # the boundary condition switches on immediately
        assert norms.max() >= norms[-1] > 0.5 * norms.max()  # rises, then levels off
        late_drift = abs(norms[-1] - norms[-10]) / norms[-1]
        assert late_drift <= 1e-2


class TestAdjoint:
    def test_zero_mismatch_zero_terminal(self, setting):
        ops, params, _, grid, z = setting
        q = ops.restrict_reference(z)
        p = solve_adjoint(ops, params, grid, q, z)
        assert not p.any()

    def test_terminal_row_is_injection_plus_final_weight_dual(self, setting):
        ops, params, weights, grid, z = setting
        steady = solve_steady(ops, params, weights)
        rng = np.random.default_rng(0)
        q = rng.standard_normal((grid.steps + 1, ops.n_state))
        p = solve_adjoint(ops, params, grid, q, z, p_terminal=steady.p)
        residual = ops.observation_mass @ (q[-1] - ops.restrict_reference(z[-1]))
        c_mat = (ops.mass_ocp / grid.dt + 0.5 * (params.diffusivity * ops.stiffness_ocp + ops.robin_ocp))
        terminal_dual = np.linalg.solve(c_mat.toarray(), 0.5 * residual)
        assert np.allclose(p[-1], steady.p + terminal_dual, rtol=1e-10, atol=1e-12)
        # the extra term is one implicit step of the half-weighted final
        # mismatch: order dt, and exactly zero for a perfectly tracked end
        assert np.linalg.norm(terminal_dual) <= grid.dt * np.linalg.norm(
            np.linalg.solve(ops.mass_ocp.toarray(), residual)
        )

    def test_zero_observation_free_decay(self, setting):
        ops, params, weights, grid, z = setting
        blank = replace(ops, observation_mass=sparse.csr_matrix((ops.n_state, ops.n_state)))
        steady = solve_steady(ops, params, weights)
        q = ops.restrict_reference(z)
        p = solve_adjoint(blank, params, grid, q, z, p_terminal=steady.p)
        assert np.array_equal(p[-1], steady.p)
        norms = [np.sqrt(row @ (ops.mass_ocp @ row)) for row in p]
        for earlier, later in zip(norms, norms[1:]):
            assert earlier <= later * (1 + 1e-12)

    def test_duality_identity(self, setting):
        # <tracking residual, state response> equals <adjoint load, control
        # perturbation> in the scheme's quadratures, to solver precision
        ops, params, _, grid, _ = setting
        rng = np.random.default_rng(3)
        q = rng.standard_normal((grid.steps + 1, ops.n_state))
        z_free = rng.standard_normal((grid.steps + 1, ops.n_state))
        z_ref = np.zeros((grid.steps + 1, ops.n_reference))
        z_ref[:, ops.restriction.free_to_reference] = z_free
        du = rng.standard_normal((grid.steps + 1, ops.n_control))
        homogeneous = ScenarioParams(params.diffusivity, 0.0, 0.0)
        dq = solve_state(ops, homogeneous, grid, du)
        residuals = (ops.observation_mass @ (q - z_free).T).T
        lhs = grid.dt * float(
            tracking_weights(grid.steps) @ np.einsum("kj,kj->k", residuals, dq)
        )
        p = solve_adjoint(ops, params, grid, q, z_ref)
        rhs = weighted_inner(grid, (ops.control_coupling.T @ p.T).T, du)
        assert abs(lhs - rhs) <= 1e-8 * abs(lhs)


class TestCost:
    def test_perfect_tracking_no_control(self, setting):
        ops, _, weights, grid, z = setting
        q = ops.restrict_reference(z)
        u = np.zeros((grid.steps + 1, ops.n_control))
        assert evaluate_cost(ops, grid, q, z, u, weights) == 0.0

    def test_uncontrolled_cost_positive(self, setting):
        ops, params, weights, grid, z = setting
        u = np.zeros((grid.steps + 1, ops.n_control))
        q = solve_state(ops, params, grid, u)
        assert evaluate_cost(ops, grid, q, z, u, weights) > 0.0

    def test_constant_fields_scale_with_horizon(self, setting):
        ops, params, weights, grid, _ = setting
        steady = solve_steady(ops, params, weights)
        z_rows = np.tile(steady.z, (grid.steps + 1, 1))
        q_rows = np.tile(steady.q, (grid.steps + 1, 1))
        u_rows = np.tile(steady.u, (grid.steps + 1, 1))
        value = evaluate_cost(ops, grid, q_rows, z_rows, u_rows, weights)
        assert value == pytest.approx(grid.horizon * steady.cost, rel=1e-12)


class TestQuasiNewton:
    def test_zero_adjoint_shrinks_control(self, setting):
        ops, _, weights, grid, _ = setting
        rng = np.random.default_rng(1)
        u = rng.standard_normal((grid.steps + 1, ops.n_control))
        p = np.zeros((grid.steps + 1, ops.n_state))
        d, g = quasi_newton_step(ops, weights, u, p)
        assert np.allclose(d, -u, atol=1e-10)
        assert np.allclose(g, (ops.control_block(weights) @ u.T).T, atol=1e-14)

    def test_fixed_point_annihilates_direction(self, setting):
        ops, _, weights, grid, _ = setting
        rng = np.random.default_rng(2)
        p = rng.standard_normal((grid.steps + 1, ops.n_state))
        r_blk = ops.control_block(weights).toarray()
        lam = -np.linalg.solve(r_blk, ops.control_coupling.toarray().T)
        u = (lam @ p.T).T
        d, g = quasi_newton_step(ops, weights, u, p)
        scale = np.linalg.norm((ops.control_coupling.T @ p.T).T)
        assert np.linalg.norm(g) <= 1e-10 * scale
        assert np.linalg.norm(d) <= 1e-8 * np.linalg.norm(u)

    def test_gradient_matches_finite_differences(self, setting):
        ops, params, weights, grid, z = setting
        rng = np.random.default_rng(7)
        u0 = rng.standard_normal((grid.steps + 1, ops.n_control)) * 10.0

        def cost(u):
            q = solve_state(ops, params, grid, u)
            return evaluate_cost(ops, grid, q, z, u, weights)

        q0 = solve_state(ops, params, grid, u0)
        p = solve_adjoint(ops, params, grid, q0, z)
        _, g = quasi_newton_step(ops, weights, u0, p)
        for _ in range(10):
            du = rng.standard_normal(u0.shape)
            predicted = weighted_inner(grid, g, du)
            best = min(
                abs((cost(u0 + h * du) - cost(u0 - h * du)) / (2 * h) - predicted)
                for h in (1e-2, 1e-1, 1.0)
            )
            assert best <= 1e-5 * abs(predicted)


class TestArmijo:
    def _line_setup(self, setting):
        ops, params, weights, grid, z = setting
        rng = np.random.default_rng(4)
        u0 = rng.standard_normal((grid.steps + 1, ops.n_control)) * 10.0

        def cost(u):
            q = solve_state(ops, params, grid, u)
            return evaluate_cost(ops, grid, q, z, u, weights)

        q0 = solve_state(ops, params, grid, u0)
        p = solve_adjoint(ops, params, grid, q0, z)
        d, g = quasi_newton_step(ops, weights, u0, p)
        return cost, u0, d, g, grid

    def test_accepted_step_satisfies_sufficient_decrease(self, setting):
        cost, u0, d, g, grid = self._line_setup(setting)
        tau, trial = armijo_backtracking(cost, u0, d, g, grid)
        base = cost(u0)
        slope = weighted_inner(grid, g, d)
        assert trial == pytest.approx(cost(u0 + tau * d))
        assert trial <= base + 1e-4 * tau * slope + 1e-12 * abs(base)

    def test_quadratic_shortcut_matches_literal_loop(self, setting):
        cost, u0, d, g, grid = self._line_setup(setting)
        tau_loop, _ = armijo_backtracking(cost, u0, d, g, grid)
        base = cost(u0)
        slope = weighted_inner(grid, g, d)
        trial = cost(u0 + d)
        tau_quad = _armijo_step_quadratic(base, trial, slope, 1.0, 0.5, 1e-4, 30)
        assert tau_quad == pytest.approx(tau_loop)

    def test_non_descent_direction_rejected(self, setting):
        cost, u0, d, g, grid = self._line_setup(setting)
        with pytest.raises(ValueError, match="descent"):
            armijo_backtracking(cost, u0, -d, g, grid)

    def test_exhausted_budget_raises_with_trials(self, setting):
        cost, u0, d, g, grid = self._line_setup(setting)
        with pytest.raises(ArmijoError) as info:
            armijo_backtracking(lambda u: cost(u0) + 1.0 + np.linalg.norm(u - u0), u0, d, g, grid,
                                max_backtracks=3)
        assert info.value.trial_cost > info.value.base_cost


class TestSolveTransient:
    def test_zero_problem_converges_immediately(self, tiny_ops, oracle_weights):
        grid = TimeGrid(1.0, 4)
        params = ScenarioParams(2.0, 0.0, 0.0)
        traj = solve_transient_ocp(tiny_ops, params, oracle_weights, grid)
        assert traj.converged
        assert len(traj.iterations) == 1
        assert not traj.u.any()
        assert traj.cost == 0.0

    def test_terminal_values_are_steady_by_assignment(self, setting):
        ops, params, weights, grid, _ = setting
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            traj = solve_transient_ocp(ops, params, weights, grid, tol=1e-6, max_iter=200)
        assert np.array_equal(traj.p[-1], traj.steady.p)
        assert np.array_equal(traj.u[-1], traj.steady.u)
        # terminal optimality row is exactly the steady Euler equation
        residual = ops.control_block(weights) @ traj.u[-1] + ops.control_coupling.T @ traj.p[-1]
        scale = np.linalg.norm(ops.control_coupling.T @ traj.p[-1]) + 1e-30
        assert np.linalg.norm(residual) <= 1e-8 * scale
        assert traj.z.shape == (grid.steps + 1, ops.n_reference)
        assert not traj.q[0].any() and not traj.z[0].any()

    def test_merit_monotone_and_update_is_fixed_point_form(self, setting):
        ops, params, weights, grid, _ = setting
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            traj = solve_transient_ocp(ops, params, weights, grid, tol=1e-10, max_iter=30)
        merits = [rec.merit for rec in traj.iterations]
        for a, b in zip(merits, merits[1:]):
            assert b <= a * (1 + 1e-12) + 1e-300
        # reconstruct the last update: u_new == (1 - tau) u + tau Lambda p
        p = solve_adjoint(ops, params, grid, traj.q, traj.z, p_terminal=traj.steady.p)
        d, g = quasi_newton_step(ops, weights, traj.u, p)
        tau = 0.25
        direct = traj.u + tau * d
        r_blk = ops.control_block(weights).toarray()
        lam = -np.linalg.solve(r_blk, ops.control_coupling.toarray().T)
        fixed_point = (1 - tau) * traj.u + tau * (lam @ p.T).T
        assert np.allclose(direct, fixed_point, rtol=1e-9, atol=1e-9)

    def test_cost_monotone_for_plain_horizon(self, setting):
        ops, params, weights, grid, _ = setting
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            traj = solve_transient_ocp(ops, params, weights, grid, tol=1e-10, max_iter=30,
                                       terminal="zero")
        costs = [rec.cost for rec in traj.iterations]
        for a, b in zip(costs, costs[1:]):
            assert b <= a * (1 + 1e-12)
        for rec in traj.iterations:
            assert rec.merit == rec.cost

    def test_final_time_gaps_decay_with_horizon(self, tiny_ops, oracle_weights):
        params = ScenarioParams(2.0, 1e3, 50.0)
        gaps = []
        for horizon in (1.0, 4.0):
            grid = TimeGrid(horizon, int(10 * horizon))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                traj = solve_transient_ocp(tiny_ops, params, oracle_weights, grid,
                                           tol=1e-8, max_iter=300)
            gaps.append(relative_l2(traj.q[-1], traj.steady.q, tiny_ops.mass_ocp))
        assert gaps[1] < gaps[0]

    def test_max_iter_returns_warning_flag(self, setting):
        ops, params, weights, grid, _ = setting
        with pytest.warns(UserWarning, match="max_iter"):
            traj = solve_transient_ocp(ops, params, weights, grid, tol=1e-14, max_iter=2)
        assert not traj.converged

    def test_matches_monolithic_brute_force(self, tiny_ops, oracle_weights):
        # oracle: exact quadratic reconstruction of the cost over the stacked
        # control unknowns, solved densely; the plain finite-horizon problem
        params = ScenarioParams(2.0, 1e3, 50.0)
        grid = TimeGrid(0.6, 3)
        z = solve_reference(tiny_ops, params, grid)
        dim = (grid.steps + 1) * tiny_ops.n_control

        def cost(vec):
            u = vec.reshape(grid.steps + 1, tiny_ops.n_control)
            q = solve_state(tiny_ops, params, grid, u)
            return evaluate_cost(tiny_ops, grid, q, z, u, oracle_weights)

        h = 50.0
        eye = np.eye(dim)
        j0 = cost(np.zeros(dim))
        j_plus = np.array([cost(h * eye[i]) for i in range(dim)])
        j_minus = np.array([cost(-h * eye[i]) for i in range(dim)])
        gradient = (j_plus - j_minus) / (2 * h)
        hessian = np.empty((dim, dim))
        for i in range(dim):
            hessian[i, i] = (j_plus[i] - 2 * j0 + j_minus[i]) / h**2
            for j in range(i + 1, dim):
                hessian[i, j] = hessian[j, i] = (
                    cost(h * (eye[i] + eye[j])) - j_plus[i] - j_plus[j] + j0
                ) / h**2
        u_star = np.linalg.solve(hessian, -gradient)
        j_star = cost(u_star)

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            traj = solve_transient_ocp(tiny_ops, params, oracle_weights, grid,
                                       tol=1e-12, max_iter=4000, terminal="zero")
        assert abs(traj.cost - j_star) <= 1e-5 * j_star

"""Built-in desk-scale checks behind the `verify` CLI command.

Each check is independent of any offline artifact and prints one PASS/FAIL
line; the suite returns False if anything failed. The heavier acceptance
suite lives in the repository tests.
"""

from __future__ import annotations

import numpy as np

from . import metrics
from .assembly import assemble_from_layout, element_mass, element_stiffness
from .meshing import (
    AnnulusCloak,
    AnnulusObservation,
    CircleObstacle,
    EdgeTag,
    LayoutSpec,
    SourceDisc,
    build_restriction,
    default_layout,
    generate_layout,
)
from .reduction import pod_truncate
from .sampling import ParameterBox, ScenarioParams, lhs_sample
from .steady import ControlWeights, solve_steady
from .transient import (
    TimeGrid,
    armijo_backtracking,
    evaluate_cost,
    quasi_newton_step,
    solve_adjoint,
    solve_state,
    solve_transient_ocp,
    weighted_inner,
)


def _tiny_layout(mesh_size=1.0 / 6.0):
    return LayoutSpec(
        obstacle=CircleObstacle(radius=0.25),
        cloak=AnnulusCloak(0.3, 0.55),
        observation=AnnulusObservation(0.6, 0.85),
        source=SourceDisc((0.75, 0.75), 0.15),
        mesh_size=mesh_size,
    )


def check_element_matrices():
    tri = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    mass_ref = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24.0
    stiff_ref = 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]])
    err = max(
        np.abs(element_mass(tri) - mass_ref).max(),
        np.abs(element_stiffness(tri) - stiff_ref).max(),
    )
    return err <= 1e-14, f"analytic element matrices, max err {err:.2e}"


def check_restriction_identity():
    mesh_un, mesh_ocp = generate_layout(_tiny_layout())
    restriction = build_restriction(mesh_un, mesh_ocp)
    e_mat = restriction.matrix()
    from scipy import sparse

    err = abs(e_mat @ e_mat.T - sparse.eye(restriction.n_free)).max()
    area_gap = mesh_un.signed_areas().sum() - mesh_ocp.signed_areas().sum()
    ok = err == 0.0 and area_gap > 0.0
    return ok, f"selection identity err {err:.1e}, hole area {area_gap:.4f}"


def check_perimeter():
    target = 2.0 * np.pi * 0.2
    errs = []
    for h in (0.05, 0.025):
        _, mesh_ocp = generate_layout(default_layout(mesh_size=h))
        edges = mesh_ocp.boundary_edges[mesh_ocp.edge_tags == int(EdgeTag.OBSTACLE_DIRICHLET)]
        per = np.linalg.norm(mesh_ocp.nodes[edges[:, 0]] - mesh_ocp.nodes[edges[:, 1]], axis=1).sum()
        errs.append(abs(per - target) / target)
    ok = errs[-1] <= 0.01 and errs[-1] <= errs[0]
    return ok, f"hole perimeter rel errs {errs[0]:.4f} -> {errs[1]:.4f}"


def check_lhs():
    box = ParameterBox()
    samples = lhs_sample(box, 7, seed=3)
    bounds = box.bounds()
    ok = True
    for dim in range(3):
        vals = np.array([s.as_array()[dim] for s in samples])
        lo, hi = bounds[dim]
        strata = np.floor((vals - lo) / (hi - lo) * 7).astype(int)
        ok &= sorted(strata.tolist()) == list(range(7))
    same = lhs_sample(box, 7, seed=3)
    ok &= all(a == b for a, b in zip(samples, same))
    return ok, "stratification and seed determinism"


def check_pod():
    rng = np.random.default_rng(5)
    mat = rng.standard_normal((60, 8)) @ rng.standard_normal((8, 25))
    basis, _ = pod_truncate(mat, 1e-6)
    orth = np.abs(basis.T @ basis - np.eye(basis.shape[1])).max()
    recon = np.linalg.norm(mat - basis @ (basis.T @ mat)) / np.linalg.norm(mat)
    ok = orth <= 1e-12 and recon <= 1e-6
    return ok, f"orthonormality {orth:.1e}, reconstruction {recon:.1e}"


def check_steady_degenerate():
    spec = LayoutSpec(
        obstacle=None,
        cloak=AnnulusCloak(0.3, 0.55),
        observation=AnnulusObservation(0.6, 0.85),
        source=SourceDisc((0.75, 0.75), 0.15),
        mesh_size=0.125,
    )
    ops = assemble_from_layout(spec)
    sol = solve_steady(ops, ScenarioParams(2.0, 1e3, 0.0), ControlWeights(beta=1e-3, beta_grad=1e-4))
    u_rel = np.linalg.norm(sol.u) / max(np.linalg.norm(sol.z), 1.0)
    q_rel = np.linalg.norm(sol.q - ops.restrict_reference(sol.z)) / np.linalg.norm(sol.z)
    ok = u_rel <= 1e-10 and q_rel <= 1e-10
    return ok, f"no obstacle: |u| {u_rel:.1e}, |q - z| {q_rel:.1e}"


def check_gradient():
    ops = assemble_from_layout(_tiny_layout())
    params = ScenarioParams(2.0, 1e3, 50.0)
    weights = ControlWeights(beta=1e-3, beta_grad=1e-4)
    grid = TimeGrid(1.0, 5)
    z = np.zeros((grid.steps + 1, ops.n_reference))
    from .transient import solve_reference

    z = solve_reference(ops, params, grid)
    rng = np.random.default_rng(2)
    u0 = rng.standard_normal((grid.steps + 1, ops.n_control)) * 10.0

    def cost(u):
        q = solve_state(ops, params, grid, u)
        return evaluate_cost(ops, grid, q, z, u, weights)

    q0 = solve_state(ops, params, grid, u0)
    p_rows = solve_adjoint(ops, params, grid, q0, z)
    _, g_rows = quasi_newton_step(ops, weights, u0, p_rows)
    worst = 0.0
    for _ in range(3):
        du = rng.standard_normal(u0.shape)
        pred = weighted_inner(grid, g_rows, du)
        best = min(
            abs((cost(u0 + h * du) - cost(u0 - h * du)) / (2 * h) - pred) / abs(pred)
            for h in (1e-2, 1e-1, 1.0)
        )
        worst = max(worst, best)
    return worst <= 1e-5, f"finite-difference gradient rel err {worst:.1e}"


def check_transient_descent():
    ops = assemble_from_layout(_tiny_layout())
    params = ScenarioParams(2.0, 1e3, 50.0)
    weights = ControlWeights(beta=1e-3, beta_grad=1e-4)
    grid = TimeGrid(1.0, 8)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        traj = solve_transient_ocp(ops, params, weights, grid, tol=1e-6, max_iter=25)
    merits = [rec.merit for rec in traj.iterations]
    monotone = all(b <= a * (1.0 + 1e-12) + 1e-300 for a, b in zip(merits, merits[1:]))
    return monotone, f"merit monotone over {len(merits)} iterations"


def check_efficiency_bounds():
    ok = metrics.cloaking_efficiency(2.0, 0.0) == 1.0
    ok &= metrics.cloaking_efficiency(2.0, 2.0) == 0.0
    try:
        metrics.cloaking_efficiency(0.0, 1.0)
        ok = False
    except ValueError:
        pass
    return ok, "perfect cloak 1, uncontrolled 0, zero baseline rejected"


CHECKS = (
    ("element matrices", check_element_matrices),
    ("node restriction", check_restriction_identity),
    ("hole perimeter", check_perimeter),
    ("latin hypercube", check_lhs),
    ("pod truncation", check_pod),
    ("steady degenerate", check_steady_degenerate),
    ("reduced gradient", check_gradient),
    ("transient descent", check_transient_descent),
    ("efficiency bounds", check_efficiency_bounds),
)


def run_checks(stream=None):
    """Run all checks, print one line each, return overall success."""
    import sys

    stream = stream or sys.stdout
    all_ok = True
    for name, func in CHECKS:
        try:
            ok, detail = func()
        except Exception as exc:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        all_ok &= ok
        stream.write(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}\n")
    return all_ok

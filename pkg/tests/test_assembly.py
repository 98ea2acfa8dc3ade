import numpy as np
import pytest
from scipy import sparse

from thermocloak import (
    build_restriction,
    default_layout,
    element_mass,
    element_stiffness,
    generate_layout,
    affine_state_matrix,
    assemble_operators,
)
from thermocloak.assembly import _mass_matrix, _stiffness_matrix

from conftest import tiny_layout

UNIT_RIGHT = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]


def _cross2(a, b):
    return a[0] * b[1] - a[1] * b[0]


class TestElementMatrices:
    def test_unit_right_triangle_mass(self):
        expected = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24.0
        assert np.abs(element_mass(UNIT_RIGHT) - expected).max() <= 1e-14

    def test_unit_right_triangle_stiffness(self):
        expected = 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]])
        assert np.abs(element_stiffness(UNIT_RIGHT) - expected).max() <= 1e-14

    def test_mass_entries_sum_to_area(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            tri = rng.uniform(-1, 1, size=(3, 2))
            signed = _cross2(tri[1] - tri[0], tri[2] - tri[0])
            if abs(signed) < 2e-3:
                continue
            if signed < 0:
                tri = tri[[0, 2, 1]]
            assert element_mass(tri).sum() == pytest.approx(0.5 * abs(signed), rel=1e-12)

    def test_mass_scales_with_area(self):
        doubled = [(0.0, 0.0), (2.0, 0.0), (0.0, 2.0)]
        assert np.allclose(element_mass(doubled), 4.0 * element_mass(UNIT_RIGHT), rtol=1e-14)

    def test_stiffness_row_sums_zero(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            tri = rng.uniform(-1, 1, size=(3, 2))
            if _cross2(tri[1] - tri[0], tri[2] - tri[0]) < 1e-3:
                continue
            rows = element_stiffness(tri).sum(axis=1)
            assert np.abs(rows).max() <= 1e-12

    def test_stiffness_rotation_invariant(self):
        angle = 0.83
        rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        tri = np.array(UNIT_RIGHT)
        assert np.allclose(element_stiffness(tri @ rot.T), element_stiffness(tri), atol=1e-13)

    def test_degenerate_triangle_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            element_mass([(0, 0), (1, 0), (2, 0)])
        with pytest.raises(ValueError, match="degenerate"):
            element_stiffness([(0, 0), (0, 1), (1, 0)])  # clockwise


class TestAssembledOperators:
    def test_mass_total_is_domain_area(self, tiny_ops):
        assert tiny_ops.mass.sum() == pytest.approx(4.0, rel=1e-12)

    def test_robin_total_is_perimeter(self, tiny_ops):
        assert tiny_ops.robin_mass.sum() == pytest.approx(8.0, rel=1e-12)

    def test_source_total_matches_member_elements(self, tiny_ops):
        mesh = tiny_ops.mesh_un
        centroids = mesh.nodes[mesh.triangles].mean(axis=1)
        member = tiny_ops.layout.source.contains(centroids)
        assert tiny_ops.source_load.sum() == pytest.approx(
            mesh.signed_areas()[member].sum(), rel=1e-12
        )

    def test_stiffness_annihilates_constants(self, tiny_ops):
        ones = np.ones(tiny_ops.n_reference)
        assert np.abs(tiny_ops.stiffness @ ones).max() <= 1e-12

    def test_exact_symmetry(self, tiny_ops):
        for mat in (tiny_ops.mass, tiny_ops.stiffness, tiny_ops.robin_mass,
                    tiny_ops.observation_mass, tiny_ops.control_mass, tiny_ops.control_stiffness):
            assert abs(mat - mat.T).max() == 0.0

    def test_positive_definite_masses(self, tiny_ops):
        for mat in (tiny_ops.mass, tiny_ops.control_mass):
            eigs = np.linalg.eigvalsh(mat.toarray())
            assert eigs.min() > 0.0

    def test_positive_semidefinite_stiffness(self, tiny_ops):
        for mat in (tiny_ops.stiffness, tiny_ops.control_stiffness):
            eigs = np.linalg.eigvalsh(mat.toarray())
            assert eigs.min() >= -1e-12

    def test_restricted_assembly_matches_projection(self):
        # dual-path oracle: assemble on the full square, project with the
        # selection matrix, compare against direct assembly on the hole mesh
        spec = tiny_layout()
        mesh_un, mesh_ocp = generate_layout(spec)
        restriction = build_restriction(mesh_un, mesh_ocp)
        ops = assemble_operators(mesh_un, mesh_ocp, restriction, spec)
        e_full = sparse.csr_matrix(
            (np.ones(mesh_ocp.node_count), (np.arange(mesh_ocp.node_count), restriction.node_map)),
            shape=(mesh_ocp.node_count, mesh_un.node_count),
        )
        projected = (e_full @ _stiffness_matrix(mesh_un) @ e_full.T).toarray()
        direct = _stiffness_matrix(mesh_ocp).toarray()
        # rows/columns of nodes whose support is fully retained must agree
        interior = np.setdiff1d(np.arange(mesh_ocp.node_count), restriction.dirichlet_nodes)
        assert np.abs(projected[np.ix_(interior, interior)] - direct[np.ix_(interior, interior)]).max() <= 1e-12

    def test_dirichlet_lift_support(self, tiny_ops):
        # zero at every free node not adjacent to an obstacle-boundary node
        mesh = tiny_ops.mesh_ocp
        restriction = tiny_ops.restriction
        adjacent = set()
        diri = set(restriction.dirichlet_nodes.tolist())
        for tri in mesh.triangles:
            if any(int(v) in diri for v in tri):
                adjacent.update(int(v) for v in tri)
        free_positions = {int(n): i for i, n in enumerate(restriction.free_nodes)}
        for node, pos in free_positions.items():
            if node not in adjacent:
                assert tiny_ops.dirichlet_lift[pos] == 0.0

    def test_control_coupling_is_control_mass_restriction(self, tiny_ops):
        mesh = tiny_ops.mesh_ocp
        from thermocloak.meshing import Region

        ctrl_mask = mesh.element_regions == int(Region.CONTROL)
        mass_ctrl = _mass_matrix(mesh, ctrl_mask)
        expected = mass_ctrl[tiny_ops.restriction.free_nodes][:, tiny_ops.control_nodes]
        assert abs(tiny_ops.control_coupling - expected).max() == 0.0

    def test_empty_region_rejected(self):
        # a razor-thin cloak ring catches no element centroid at this h
        from thermocloak import AnnulusCloak, AnnulusObservation, CircleObstacle, LayoutSpec, SourceDisc

        spec = LayoutSpec(
            obstacle=CircleObstacle(radius=0.25),
            cloak=AnnulusCloak(0.30, 0.301),
            observation=AnnulusObservation(0.6, 0.85),
            source=SourceDisc((0.75, 0.75), 0.15),
            mesh_size=0.2,
        )
        mesh_un, mesh_ocp = generate_layout(spec)
        restriction = build_restriction(mesh_un, mesh_ocp)
        with pytest.raises(ValueError, match="control region has no elements"):
            assemble_operators(mesh_un, mesh_ocp, restriction, spec)


class TestAffineStateMatrix:
    def test_zero_diffusivity_gives_boundary_mass(self, tiny_ops):
        assert abs(affine_state_matrix(tiny_ops, 0.0) - tiny_ops.robin_mass).max() == 0.0

    def test_linear_in_diffusivity(self, tiny_ops):
        delta = affine_state_matrix(tiny_ops, 3.5) - affine_state_matrix(tiny_ops, 1.0)
        assert abs(delta - 2.5 * tiny_ops.stiffness).max() <= 1e-12

    def test_constants_feel_only_boundary(self, tiny_ops):
        ones = np.ones(tiny_ops.n_reference)
        lhs = affine_state_matrix(tiny_ops, 5.0) @ ones
        assert np.allclose(lhs, tiny_ops.robin_mass @ ones, atol=1e-12)

    def test_negative_diffusivity_rejected(self, tiny_ops):
        with pytest.raises(ValueError):
            affine_state_matrix(tiny_ops, -1.0)

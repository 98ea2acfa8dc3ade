"""P1 finite-element operators on the square mesh and its restriction.

Everything parameter-dependent is expressed as an affine combination of the
matrices and vectors assembled here, so downstream solvers and the reduced
model never re-assemble. All integrals of P1 products are evaluated with
closed-form element formulas.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .meshing import LayoutSpec, Mesh, Region, RestrictionOperator

_MASS_TEMPLATE = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
_EDGE_TEMPLATE = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0


def _triangle_geometry(coords):
    """Signed areas plus the (b, c) gradient coefficients, batched.

    coords has shape (m, 3, 2); gradient of basis i is (b_i, c_i) / (2 area).
    """
    x = coords[..., 0]
    y = coords[..., 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area = 0.5 * (x[:, 0] * b[:, 0] + x[:, 1] * b[:, 1] + x[:, 2] * b[:, 2])
    return area, b, c


def element_mass(triangle):
    """Exact P1 mass matrix of one triangle given as 3x2 vertex coordinates."""
    coords = np.asarray(triangle, dtype=float)[None, :, :]
    area, _, _ = _triangle_geometry(coords)
    if area[0] <= 0.0:
        raise ValueError("degenerate triangle: non-positive signed area")
    return area[0] * _MASS_TEMPLATE


def element_stiffness(triangle):
    """Exact unit-diffusivity P1 stiffness matrix of one triangle."""
    coords = np.asarray(triangle, dtype=float)[None, :, :]
    area, b, c = _triangle_geometry(coords)
    if area[0] <= 0.0:
        raise ValueError("degenerate triangle: non-positive signed area")
    return (b[0, :, None] * b[0, None, :] + c[0, :, None] * c[0, None, :]) / (4.0 * area[0])


def _scatter(triangles, local, n_nodes):
    """Accumulate per-element 3x3 blocks into a CSR matrix."""
    rows = np.repeat(triangles, 3, axis=1).ravel()
    cols = np.tile(triangles, (1, 3)).ravel()
    mat = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n_nodes, n_nodes))
    return mat.tocsr()

def _mass_matrix(mesh: Mesh, element_mask=None):
    tris = mesh.triangles if element_mask is None else mesh.triangles[element_mask]
    coords = mesh.nodes[tris]
    area, _, _ = _triangle_geometry(coords)
    local = area[:, None, None] * _MASS_TEMPLATE
    return _scatter(tris, local, mesh.node_count)


def _stiffness_matrix(mesh: Mesh, element_mask=None):
    tris = mesh.triangles if element_mask is None else mesh.triangles[element_mask]
    coords = mesh.nodes[tris]
    area, b, c = _triangle_geometry(coords)
    local = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) / (4.0 * area)[:, None, None]
    return _scatter(tris, local, mesh.node_count)


def _boundary_mass_matrix(mesh: Mesh, edge_mask):
    edges = mesh.boundary_edges[edge_mask]
    if len(edges) == 0:
        return sparse.csr_matrix((mesh.node_count, mesh.node_count))
    lengths = np.linalg.norm(mesh.nodes[edges[:, 0]] - mesh.nodes[edges[:, 1]], axis=1)
    local = lengths[:, None, None] * _EDGE_TEMPLATE
    rows = np.repeat(edges, 2, axis=1).ravel()
    cols = np.tile(edges, (1, 2)).ravel()
    mat = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.node_count, mesh.node_count))
    return mat.tocsr()


def _source_vector(mesh: Mesh, source):
    """Unit-intensity load of the piecewise-constant source indicator."""
    centroids = mesh.nodes[mesh.triangles].mean(axis=1)
    member = source.contains(centroids)
    load = np.zeros(mesh.node_count)
    if member.any():
        coords = mesh.nodes[mesh.triangles[member]]
        area, _, _ = _triangle_geometry(coords)
        np.add.at(load, mesh.triangles[member].ravel(), np.repeat(area / 3.0, 3))
    return load


@dataclass(frozen=True)
class FemOperators:
    """Every parameter-independent matrix and vector of the discrete problem.

    The state operator of the restricted problem at diffusivity `mu` is
    `mu * stiffness_ocp + robin_ocp`; the obstacle-temperature load is
    `mu * T_o * dirichlet_lift`. Instances are immutable and shareable.
    """

    # unperturbed (reference) mesh, size n_reference
    mass: sparse.csr_matrix
    stiffness: sparse.csr_matrix
    robin_mass: sparse.csr_matrix
    source_load: np.ndarray
    # restricted mesh, free degrees of freedom only, size n_state
    mass_ocp: sparse.csr_matrix
    stiffness_ocp: sparse.csr_matrix
    robin_ocp: sparse.csr_matrix
    observation_mass: sparse.csr_matrix
    dirichlet_lift: np.ndarray
    # control field, size n_control
    control_coupling: sparse.csr_matrix  # n_state x n_control
    control_mass: sparse.csr_matrix
    control_stiffness: sparse.csr_matrix
    control_nodes: np.ndarray  # restricted-mesh node index per control dof
    restriction: RestrictionOperator
    mesh_un: Mesh
    mesh_ocp: Mesh
    layout: LayoutSpec

    @property
    def n_reference(self):
        return self.mass.shape[0]

    @property
    def n_state(self):
        return self.mass_ocp.shape[0]

    @property
    def n_control(self):
        return self.control_mass.shape[0]

    def state_matrix(self, diffusivity):
        """Affine reference-mesh operator, see :func:`affine_state_matrix`."""
        return affine_state_matrix(self, diffusivity)

    def state_matrix_ocp(self, diffusivity):
        if diffusivity <= 0.0:
            raise ValueError("diffusivity must be positive")
        return (diffusivity * self.stiffness_ocp + self.robin_ocp).tocsr()

    def control_block(self, weights):
        """beta-weighted control Gramian used by the optimality condition."""
        return (weights.beta * self.control_mass + weights.beta_grad * self.control_stiffness).tocsr()

    def restrict_reference(self, values):
        """Reference-mesh vector (or row-stack of vectors) on the free dofs."""
        return self.restriction.restrict(values)

    def observation_area(self):
        ones = np.ones(self.n_state)
        return float(ones @ (self.observation_mass @ ones))


def affine_state_matrix(ops: FemOperators, diffusivity) -> sparse.csr_matrix:
    """Reference-mesh operator `mu * stiffness + robin_mass` without re-assembly."""
    if diffusivity < 0.0:
        raise ValueError("diffusivity must be non-negative")
    return (diffusivity * ops.stiffness + ops.robin_mass).tocsr()


def assemble_operators(mesh_un: Mesh, mesh_ocp: Mesh, restriction: RestrictionOperator,
                       spec: LayoutSpec) -> FemOperators:
    """Assemble all operators for one layout.

    Restricted operators are assembled directly on the restricted mesh and
    then reduced to free dofs; the coupling of the eliminated obstacle
    boundary is folded into `dirichlet_lift` (per unit diffusivity and unit
    obstacle temperature).
    """
    for region, label in ((Region.CONTROL, "control"), (Region.OBSERVATION, "observation")):
        if not (mesh_ocp.element_regions == int(region)).any():
            raise ValueError(f"{label} region has no elements; refine mesh_size or adjust layout")

    mass = _mass_matrix(mesh_un)
    stiffness = _stiffness_matrix(mesh_un)
    robin_mass = _boundary_mass_matrix(mesh_un, np.ones(len(mesh_un.boundary_edges), dtype=bool))
    source_load = _source_vector(mesh_un, spec.source)

    free = restriction.free_nodes
    diri = restriction.dirichlet_nodes
    mass_full = _mass_matrix(mesh_ocp)
    stiff_full = _stiffness_matrix(mesh_ocp)
    from .meshing import EdgeTag

    robin_full = _boundary_mass_matrix(mesh_ocp, mesh_ocp.edge_tags == int(EdgeTag.OUTER_ROBIN))

    mass_ocp = mass_full[free][:, free].tocsr()
    stiffness_ocp = stiff_full[free][:, free].tocsr()
    robin_ocp = robin_full[free][:, free].tocsr()
    if diri.size:
        lift = -np.asarray(stiff_full[free][:, diri].sum(axis=1)).ravel()
        robin_cross = abs(robin_full[free][:, diri]).sum()
        if robin_cross > 1e-12:
            raise ValueError("obstacle boundary touches the outer Robin boundary")
    else:
        lift = np.zeros(len(free))

    obs_mask = mesh_ocp.element_regions == int(Region.OBSERVATION)
    observation_mass = _mass_matrix(mesh_ocp, obs_mask)[free][:, free].tocsr()

    ctrl_mask = mesh_ocp.element_regions == int(Region.CONTROL)
    control_nodes = np.unique(mesh_ocp.triangles[ctrl_mask])
    mass_ctrl = _mass_matrix(mesh_ocp, ctrl_mask)
    stiff_ctrl = _stiffness_matrix(mesh_ocp, ctrl_mask)
    control_coupling = mass_ctrl[free][:, control_nodes].tocsr()
    control_mass = mass_ctrl[control_nodes][:, control_nodes].tocsr()
    control_stiffness = stiff_ctrl[control_nodes][:, control_nodes].tocsr()

    return FemOperators(
        mass=mass,
        stiffness=stiffness,
        robin_mass=robin_mass,
        source_load=source_load,
        mass_ocp=mass_ocp,
        stiffness_ocp=stiffness_ocp,
        robin_ocp=robin_ocp,
        observation_mass=observation_mass,
        dirichlet_lift=lift,
        control_coupling=control_coupling,
        control_mass=control_mass,
        control_stiffness=control_stiffness,
        control_nodes=control_nodes,
        restriction=restriction,
        mesh_un=mesh_un,
        mesh_ocp=mesh_ocp,
        layout=spec,
    )


def assemble_from_layout(spec: LayoutSpec):
    """Convenience wrapper: generate meshes, restriction and operators in one go."""
    from .meshing import build_restriction, generate_layout

    mesh_un, mesh_ocp = generate_layout(spec)
    restriction = build_restriction(mesh_un, mesh_ocp)
    return assemble_operators(mesh_un, mesh_ocp, restriction, spec)

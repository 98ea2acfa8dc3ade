"""Triangular meshes of a square domain with an optional obstacle hole.

The computational setup uses two nested meshes: a structured triangulation
of the full square (the unperturbed domain) and its element-wise
restriction to the exterior of an obstacle (the control-problem domain).
Grid nodes close to the obstacle boundary are snapped onto it, so the
retained mesh resolves the hole with a polygonal boundary.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

GEOM_TOL = 1e-9


class Region(IntEnum):
    BULK = 0
    CONTROL = 1
    OBSERVATION = 2


class EdgeTag(IntEnum):
    OUTER_ROBIN = 0
    OBSTACLE_DIRICHLET = 1


REGION_NAMES = {Region.BULK: "bulk", Region.CONTROL: "control", Region.OBSERVATION: "observation"}
REGION_FROM_NAME = {v: k for k, v in REGION_NAMES.items()}
TAG_NAMES = {EdgeTag.OUTER_ROBIN: "robin", EdgeTag.OBSTACLE_DIRICHLET: "dirichlet"}
TAG_FROM_NAME = {v: k for k, v in TAG_NAMES.items()}


class LayoutError(ValueError):
    """A layout descriptor violates one of its geometric constraints."""


class MeshFormatError(ValueError):
    """A mesh file could not be parsed or violates a mesh invariant."""


# ---------------------------------------------------------------------------
# geometric primitives


def _point_in_polygon(points, vertices):
    """Ray-casting test, vectorized over points. Boundary points are unreliable
    and must be resolved by the caller through distances."""
    px = points[:, 0]
    py = points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        crosses = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = (x2 - x1) * (py - y1) / (y2 - y1 + 1e-300) + x1
        inside ^= crosses & (px < xi)
    return inside


def _segment_closest(points, a, b):
    """Closest point on segment a-b for each point, plus the distance."""
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        proj = np.broadcast_to(a, points.shape).copy()
    else:
        t = np.clip(((points - a) @ ab) / denom, 0.0, 1.0)
        proj = a + t[:, None] * ab
    d = np.linalg.norm(points - proj, axis=1)
    return proj, d


@dataclass(frozen=True)
class CircleObstacle:
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.2

    def signed_distance(self, points):
        """Negative inside the obstacle, zero on its boundary."""
        c = np.asarray(self.center)
        return np.linalg.norm(points - c, axis=1) - self.radius

    def project(self, points):
        c = np.asarray(self.center)
        rel = points - c
        norms = np.linalg.norm(rel, axis=1)
        norms = np.where(norms == 0.0, 1.0, norms)
        return c + rel * (self.radius / norms)[:, None]

    def max_extent(self):
        return math.hypot(*self.center) + self.radius


@dataclass(frozen=True)
class PolygonObstacle:
    vertices: tuple[tuple[float, float], ...]

    @classmethod
    def from_file(cls, path):
        """Read one `x y` vertex per line; blank lines and `#` comments ignored."""
        verts = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                text = line.split("#", 1)[0].strip()
                if not text:
                    continue
                parts = text.split()
                if len(parts) != 2:
                    raise MeshFormatError(f"{path}: line {lineno}: expected 'x y'")
                verts.append((float(parts[0]), float(parts[1])))
        if len(verts) < 3:
            raise LayoutError("polygon obstacle needs at least 3 vertices")
        return cls(vertices=tuple(verts))

    def _array(self):
        return np.asarray(self.vertices, dtype=float)

    def signed_distance(self, points):
        verts = self._array()
        n = len(verts)
        dist = np.full(len(points), np.inf)
        for i in range(n):
            _, d = _segment_closest(points, verts[i], verts[(i + 1) % n])
            dist = np.minimum(dist, d)
        sign = np.where(_point_in_polygon(points, verts), -1.0, 1.0)
        return sign * dist

    def project(self, points):
        verts = self._array()
        n = len(verts)
        best = np.full(len(points), np.inf)
        proj = points.copy()
        for i in range(n):
            cand, d = _segment_closest(points, verts[i], verts[(i + 1) % n])
            take = d < best
            best = np.where(take, d, best)
            proj[take] = cand[take]
        return proj

    def max_extent(self):
        return float(np.max(np.linalg.norm(self._array(), axis=1)))


@dataclass(frozen=True)
class AnnulusCloak:
    r_inner: float = 0.25
    r_outer: float = 0.35

    def contains(self, points, obstacle=None):
        r = np.linalg.norm(points, axis=1)
        return (r >= self.r_inner) & (r <= self.r_outer)

    def max_extent(self):
        return self.r_outer


@dataclass(frozen=True)
class DiscRingCloak:
    count: int = 8
    ring_radius: float = 0.30
    disc_radius: float = 0.06

    def centers(self):
        angles = 2.0 * np.pi * np.arange(self.count) / self.count
        return self.ring_radius * np.column_stack([np.cos(angles), np.sin(angles)])

    def contains(self, points, obstacle=None):
        member = np.zeros(len(points), dtype=bool)
        for c in self.centers():
            member |= np.linalg.norm(points - c, axis=1) <= self.disc_radius
        return member

    def max_extent(self):
        return self.ring_radius + self.disc_radius


@dataclass(frozen=True)
class OffsetCloak:
    """Band of given thickness hugging the outside of a polygon obstacle."""

    thickness: float = 0.12

    def contains(self, points, obstacle=None):
        if obstacle is None:
            raise LayoutError("offset cloak requires a polygon obstacle")
        sd = obstacle.signed_distance(points)
        return (sd > 0.0) & (sd <= self.thickness)


@dataclass(frozen=True)
class AnnulusObservation:
    r_inner: float = 0.40
    r_outer: float = 0.60

    def contains(self, points, cloak=None, obstacle=None):
        r = np.linalg.norm(points, axis=1)
        return (r >= self.r_inner) & (r <= self.r_outer)


@dataclass(frozen=True)
class ComplementObservation:
    """Everything outside the cloak and the obstacle counts as observed."""

    def contains(self, points, cloak=None, obstacle=None):
        member = ~cloak.contains(points, obstacle)
        if obstacle is not None:
            member &= obstacle.signed_distance(points) > 0.0
        return member


@dataclass(frozen=True)
class SourceDisc:
    center: tuple[float, float] = (0.7, 0.0)
    radius: float = 0.1

    def contains(self, points):
        c = np.asarray(self.center)
        return np.linalg.norm(points - c, axis=1) <= self.radius


@dataclass(frozen=True)
class LayoutSpec:
    """Geometric description of one cloaking scenario.

    All constraints are checked by :meth:`validate`; violations raise
    :class:`LayoutError` naming the failed constraint.
    """

    half_width: float = 1.0
    obstacle: CircleObstacle | PolygonObstacle | None = None
    cloak: AnnulusCloak | DiscRingCloak | OffsetCloak = AnnulusCloak()
    observation: AnnulusObservation | ComplementObservation = AnnulusObservation()
    source: SourceDisc = SourceDisc()
    mesh_size: float = 0.016

    def validate(self):
        if self.half_width <= 0.0:
            raise LayoutError("half_width must be positive")
        if self.mesh_size <= 0.0:
            raise LayoutError("mesh_size must be positive")
        cloak, obs, src = self.cloak, self.observation, self.source

        if isinstance(cloak, AnnulusCloak) and not cloak.r_inner < cloak.r_outer:
            raise LayoutError("cloak annulus requires r_inner < r_outer")
        if isinstance(cloak, DiscRingCloak) and cloak.count < 1:
            raise LayoutError("disc-ring cloak requires count >= 1")
        if isinstance(cloak, OffsetCloak):
            if not isinstance(self.obstacle, PolygonObstacle):
                raise LayoutError("offset cloak requires a polygon obstacle")
            if cloak.thickness <= 0.0:
                raise LayoutError("offset cloak thickness must be positive")

        # obstacle strictly inside the cloak interior hole
        if self.obstacle is not None and not isinstance(cloak, OffsetCloak):
            extent = self.obstacle.max_extent()
            if isinstance(cloak, AnnulusCloak) and extent > cloak.r_inner + GEOM_TOL:
                raise LayoutError("obstacle not contained in cloak interior hole (annulus r_inner)")
            if isinstance(cloak, DiscRingCloak):
                clearance = cloak.ring_radius - cloak.disc_radius
                if extent > clearance + GEOM_TOL:
                    raise LayoutError("obstacle not contained in disc-ring interior clearance")

        # cloak and observation region must be disjoint
        if isinstance(obs, AnnulusObservation):
            if not obs.r_inner < obs.r_outer:
                raise LayoutError("observation annulus requires r_inner < r_outer")
            cloak_reach = None
            if isinstance(cloak, (AnnulusCloak, DiscRingCloak)):
                cloak_reach = cloak.max_extent()
            elif isinstance(cloak, OffsetCloak):
                cloak_reach = self.obstacle.max_extent() + cloak.thickness
            if cloak_reach is not None and obs.r_inner < cloak_reach - GEOM_TOL:
                raise LayoutError("cloak and observation regions overlap")

        # source disc inside the square and away from cloak and obstacle
        sx, sy = src.center
        if max(abs(sx), abs(sy)) + src.radius > self.half_width + GEOM_TOL:
            raise LayoutError("source disc not contained in the computational square")
        src_orbit = math.hypot(sx, sy) - src.radius
        if isinstance(cloak, (AnnulusCloak, DiscRingCloak)) and src_orbit < cloak.max_extent() - GEOM_TOL:
            raise LayoutError("source disc intersects the cloak region")
        if isinstance(cloak, OffsetCloak):
            sd = float(self.obstacle.signed_distance(np.array([[sx, sy]]))[0])
            if sd - src.radius < cloak.thickness - GEOM_TOL:
                raise LayoutError("source disc intersects the cloak region")
        if self.obstacle is not None and isinstance(cloak, (AnnulusCloak, DiscRingCloak)):
            sd = float(self.obstacle.signed_distance(np.array([[sx, sy]]))[0])
            if sd < src.radius - GEOM_TOL:
                raise LayoutError("source disc intersects the obstacle")

    def classify(self, points):
        """Region label per point: control wins over observation, rest is bulk."""
        labels = np.full(len(points), int(Region.BULK), dtype=np.int64)
        in_cloak = self.cloak.contains(points, self.obstacle)
        labels[in_cloak] = int(Region.CONTROL)
        if isinstance(self.observation, ComplementObservation):
            in_obs = self.observation.contains(points, self.cloak, self.obstacle)
        else:
            in_obs = self.observation.contains(points)
        labels[in_obs & ~in_cloak] = int(Region.OBSERVATION)
        return labels


def default_layout(mesh_size=0.016, obstacle_radius=0.2):
    """Canonical annulus layout on the [-1, 1]^2 square."""
    return LayoutSpec(
        obstacle=CircleObstacle(radius=obstacle_radius),
        cloak=AnnulusCloak(0.25, 0.35),
        observation=AnnulusObservation(0.40, 0.60),
        source=SourceDisc((0.7, 0.0), 0.1),
        mesh_size=mesh_size,
    )


def disc_ring_layout(mesh_size=0.016, count=8):
    """Disconnected cloak made of equally spaced discs around the obstacle."""
    return LayoutSpec(
        obstacle=CircleObstacle(radius=0.2),
        cloak=DiscRingCloak(count=count, ring_radius=0.30, disc_radius=0.06),
        observation=AnnulusObservation(0.40, 0.60),
        source=SourceDisc((0.7, 0.0), 0.1),
        mesh_size=mesh_size,
    )


def polygon_layout(vertices, mesh_size=0.016, thickness=0.12):
    """Complex-shape layout: offset-band cloak, observation everywhere else."""
    return LayoutSpec(
        obstacle=PolygonObstacle(tuple(tuple(v) for v in vertices)),
        cloak=OffsetCloak(thickness=thickness),
        observation=ComplementObservation(),
        source=SourceDisc((0.7, 0.0), 0.1),
        mesh_size=mesh_size,
    )


# ---------------------------------------------------------------------------
# mesh container


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation with tagged boundary edges and element regions.

    Arrays are frozen after construction; meshes are safe to share between
    concurrent solves.
    """

    nodes: np.ndarray  # (n, 2) coordinates
    triangles: np.ndarray  # (m, 3) CCW node indices
    boundary_edges: np.ndarray  # (k, 2) node pairs
    edge_tags: np.ndarray  # (k,) EdgeTag values
    element_regions: np.ndarray  # (m,) Region values

    def __post_init__(self):
        for name in ("nodes", "triangles", "boundary_edges", "edge_tags", "element_regions"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def node_count(self):
        return len(self.nodes)

    @property
    def element_count(self):
        return len(self.triangles)

    def signed_areas(self):
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def validate(self):
        """Check all mesh invariants, raising MeshFormatError on the first failure."""
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= self.node_count):
            raise MeshFormatError("triangle references a node index out of range")
        areas = self.signed_areas()
        bad = np.nonzero(areas <= 0.0)[0]
        if bad.size:
            raise MeshFormatError(f"triangle {bad[0]} has non-positive signed area")
        if self.element_regions.shape != (self.element_count,):
            raise MeshFormatError("element_regions length does not match element count")
        if not np.isin(self.element_regions, [int(r) for r in Region]).all():
            raise MeshFormatError("unknown region label")
        if self.boundary_edges.shape[0] != self.edge_tags.shape[0]:
            raise MeshFormatError("edge_tags length does not match boundary_edges")
        counts = _edge_counts(self.triangles)
        for idx, (a, b) in enumerate(self.boundary_edges):
            key = (min(a, b), max(a, b))
            if counts.get(key, 0) != 1:
                raise MeshFormatError(f"boundary edge {idx} does not belong to exactly one triangle")

    def content_hash(self):
        return hashlib.sha256(serialize_mesh(self).encode()).hexdigest()


def _edge_counts(triangles):
    counts = {}
    for tri in triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            counts[key] = counts.get(key, 0) + 1
    return counts


def _boundary_edges_of(triangles):
    """Undirected edges appearing in exactly one triangle."""
    edges = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    return uniq[counts == 1]


def _snap_crossing_edges(nodes, triangles, obstacle, tol):
    """Move the nearer endpoint of every edge crossing the obstacle boundary
    onto the boundary, in place.

    Afterwards no edge strictly straddles the curve, so once the interior
    elements are dropped every hole-boundary vertex lies exactly on the
    obstacle curve (the discrete hole is an inscribed polygon).
    """
    edges = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    sd = obstacle.signed_distance(nodes)
    s1, s2 = sd[edges[:, 0]], sd[edges[:, 1]]
    straddle = ((s1 < -tol) & (s2 > tol)) | ((s1 > tol) & (s2 < -tol))
    if not straddle.any():
        return
    crossing = edges[straddle]
    nearer = np.where(
        np.abs(sd[crossing[:, 0]]) <= np.abs(sd[crossing[:, 1]]), crossing[:, 0], crossing[:, 1]
    )
    snap = np.unique(nearer)
    originals = nodes[snap].copy()
    nodes[snap] = obstacle.project(nodes[snap])

    # a large snap displacement can invert a neighboring triangle; halve the
    # displacement of the offending snapped vertices until all areas are
    # positive (the untouched grid is valid, so this terminates)
    snapped_mask = np.zeros(len(nodes), dtype=bool)
    snapped_mask[snap] = True
    original_of = {int(i): originals[k] for k, i in enumerate(snap)}
    for _ in range(60):
        p = nodes[triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        bad = areas <= 0.0
        if not bad.any():
            return
        culprits = np.unique(triangles[bad])
        culprits = culprits[snapped_mask[culprits]]
        if culprits.size == 0:
            return
        for idx in culprits:
            nodes[idx] = 0.5 * (nodes[idx] + original_of[int(idx)])


# ---------------------------------------------------------------------------
# layout generation


def generate_layout(spec: LayoutSpec):
    """Build the unperturbed square mesh and its restriction outside the obstacle.

    Returns
    -------
    (mesh_unperturbed, mesh_ocp) : tuple of Mesh
        Both meshes share node coordinates bit-for-bit; the second is the
        element-wise restriction of the first. Without an obstacle the same
        mesh object is returned twice.
    """
    spec.validate()
    half = spec.half_width
    n_cells = max(1, math.ceil(2.0 * half / spec.mesh_size))
    spacing = 2.0 * half / n_cells
    axis = np.linspace(-half, half, n_cells + 1)
    xx, yy = np.meshgrid(axis, axis)
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    stride = n_cells + 1
    i, j = np.meshgrid(np.arange(n_cells), np.arange(n_cells))
    bl = (j * stride + i).ravel()
    br = bl + 1
    tl = bl + stride
    tr = tl + 1
    lower = np.column_stack([bl, br, tr])
    upper = np.column_stack([bl, tr, tl])
    triangles = np.vstack([lower, upper]).astype(np.int64)

    if spec.obstacle is not None:
        _snap_crossing_edges(nodes, triangles, spec.obstacle, GEOM_TOL * half)

    centroids = nodes[triangles].mean(axis=1)
    regions = spec.classify(centroids)

    outer_edges = _boundary_edges_of(triangles)
    mesh_un = Mesh(
        nodes=nodes,
        triangles=triangles,
        boundary_edges=outer_edges,
        edge_tags=np.full(len(outer_edges), int(EdgeTag.OUTER_ROBIN), dtype=np.int64),
        element_regions=regions,
    )
    areas = mesh_un.signed_areas()
    bad = np.nonzero(areas <= 0.0)[0]
    if bad.size:
        raise LayoutError(
            f"element {bad[0]} degenerated while snapping to the obstacle; refine mesh_size"
        )
    if spec.obstacle is None:
        return mesh_un, mesh_un

    vertex_sd = spec.obstacle.signed_distance(nodes)
    strictly_inside = vertex_sd < -GEOM_TOL * half
    centroid_inside = spec.obstacle.signed_distance(centroids) < 0.0
    removed = centroid_inside | strictly_inside[triangles].any(axis=1)
    if not removed.any():
        return mesh_un, mesh_un

    kept = ~removed
    kept_tris = triangles[kept]
    used = np.unique(kept_tris)
    renumber = np.full(len(nodes), -1, dtype=np.int64)
    renumber[used] = np.arange(len(used))
    ocp_tris = renumber[kept_tris]
    ocp_nodes = nodes[used].copy()

    edges = _boundary_edges_of(ocp_tris)
    on_square = np.max(np.abs(ocp_nodes), axis=1) >= half - GEOM_TOL * half
    tags = np.where(
        on_square[edges].all(axis=1), int(EdgeTag.OUTER_ROBIN), int(EdgeTag.OBSTACLE_DIRICHLET)
    ).astype(np.int64)

    mesh_ocp = Mesh(
        nodes=ocp_nodes,
        triangles=ocp_tris,
        boundary_edges=edges,
        edge_tags=tags,
        element_regions=regions[kept],
    )
    return mesh_un, mesh_ocp


# ---------------------------------------------------------------------------
# node restriction between the two meshes


@dataclass(frozen=True)
class RestrictionOperator:
    """Selection of unperturbed-mesh nodes making up the control-problem mesh.

    `node_map[i]` is the unperturbed index of restricted node `i`. Nodes on
    the obstacle boundary carry the prescribed temperature and are excluded
    from the free set.
    """

    node_map: np.ndarray  # (n_ocp,) unperturbed node index per OCP node
    dirichlet_nodes: np.ndarray  # (n_d,) OCP node indices on the obstacle boundary
    free_nodes: np.ndarray  # (n_f,) OCP node indices excluding dirichlet_nodes
    n_reference: int  # node count of the unperturbed mesh

    def __post_init__(self):
        for name in ("node_map", "dirichlet_nodes", "free_nodes"):
            getattr(self, name).setflags(write=False)

    @property
    def free_to_reference(self):
        return self.node_map[self.free_nodes]

    @property
    def n_free(self):
        return len(self.free_nodes)

    def matrix(self):
        """Sparse 0/1 selection of free nodes from reference-mesh vectors."""
        from scipy import sparse

        rows = np.arange(self.n_free)
        cols = self.free_to_reference
        data = np.ones(self.n_free)
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.n_free, self.n_reference))

    def restrict(self, values):
        """Drop masked and dirichlet entries of a reference-mesh vector or row-stack."""
        return np.asarray(values)[..., self.free_to_reference]


def build_restriction(mesh_un: Mesh, mesh_ocp: Mesh) -> RestrictionOperator:
    """Match restricted nodes back to the unperturbed mesh by exact coordinates."""
    lookup = {mesh_un.nodes[k].tobytes(): k for k in range(mesh_un.node_count)}
    node_map = np.empty(mesh_ocp.node_count, dtype=np.int64)
    for k in range(mesh_ocp.node_count):
        key = mesh_ocp.nodes[k].tobytes()
        if key not in lookup:
            raise ValueError("meshes are not nested: restricted node missing upstream")
        node_map[k] = lookup[key]

    dirichlet_mask = np.zeros(mesh_ocp.node_count, dtype=bool)
    on_dirichlet = mesh_ocp.edge_tags == int(EdgeTag.OBSTACLE_DIRICHLET)
    if on_dirichlet.any():
        dirichlet_mask[np.unique(mesh_ocp.boundary_edges[on_dirichlet])] = True
    return RestrictionOperator(
        node_map=node_map,
        dirichlet_nodes=np.nonzero(dirichlet_mask)[0],
        free_nodes=np.nonzero(~dirichlet_mask)[0],
        n_reference=mesh_un.node_count,
    )


# ---------------------------------------------------------------------------
# plain-text mesh files


def serialize_mesh(mesh: Mesh) -> str:
    lines = [f"nodes {mesh.node_count} elements {mesh.element_count} bedges {len(mesh.boundary_edges)}"]
    for x, y in mesh.nodes:
        lines.append(f"{x:.17g} {y:.17g}")
    for tri, region in zip(mesh.triangles, mesh.element_regions):
        lines.append(f"{tri[0]} {tri[1]} {tri[2]} {REGION_NAMES[Region(region)]}")
    for edge, tag in zip(mesh.boundary_edges, mesh.edge_tags):
        lines.append(f"{edge[0]} {edge[1]} {TAG_NAMES[EdgeTag(tag)]}")
    return "\n".join(lines) + "\n"


def save_mesh(mesh: Mesh, path):
    with open(path, "w") as fh:
        fh.write(serialize_mesh(mesh))


def load_mesh(path) -> Mesh:
    """Parse and validate a mesh file; parse errors carry the line number."""
    with open(path) as fh:
        raw = fh.read().splitlines()
    if not raw:
        raise MeshFormatError(f"{path}: line 1: empty file")
    header = raw[0].split()
    if len(header) != 6 or header[0] != "nodes" or header[2] != "elements" or header[4] != "bedges":
        raise MeshFormatError(f"{path}: line 1: expected 'nodes N elements M bedges K'")
    try:
        n, m, k = int(header[1]), int(header[3]), int(header[5])
    except ValueError as exc:
        raise MeshFormatError(f"{path}: line 1: non-integer count") from exc
    if len(raw) < 1 + n + m + k:
        raise MeshFormatError(f"{path}: line {len(raw)}: truncated file")

    def parse(lineno, text, n_fields, kind):
        parts = text.split()
        if len(parts) != n_fields:
            raise MeshFormatError(f"{path}: line {lineno}: expected {n_fields} fields for {kind}")
        return parts

    nodes = np.empty((n, 2))
    for idx in range(n):
        parts = parse(2 + idx, raw[1 + idx], 2, "node")
        try:
            nodes[idx] = (float(parts[0]), float(parts[1]))
        except ValueError as exc:
            raise MeshFormatError(f"{path}: line {2 + idx}: bad coordinate") from exc

    triangles = np.empty((m, 3), dtype=np.int64)
    regions = np.empty(m, dtype=np.int64)
    for idx in range(m):
        lineno = 2 + n + idx
        parts = parse(lineno, raw[1 + n + idx], 4, "element")
        try:
            triangles[idx] = [int(parts[0]), int(parts[1]), int(parts[2])]
        except ValueError as exc:
            raise MeshFormatError(f"{path}: line {lineno}: bad node index") from exc
        if parts[3] not in REGION_FROM_NAME:
            raise MeshFormatError(f"{path}: line {lineno}: unknown region '{parts[3]}'")
        regions[idx] = int(REGION_FROM_NAME[parts[3]])

    edges = np.empty((k, 2), dtype=np.int64)
    tags = np.empty(k, dtype=np.int64)
    for idx in range(k):
        lineno = 2 + n + m + idx
        parts = parse(lineno, raw[1 + n + m + idx], 3, "boundary edge")
        try:
            edges[idx] = [int(parts[0]), int(parts[1])]
        except ValueError as exc:
            raise MeshFormatError(f"{path}: line {lineno}: bad node index") from exc
        if parts[2] not in TAG_FROM_NAME:
            raise MeshFormatError(f"{path}: line {lineno}: unknown edge tag '{parts[2]}'")
        tags[idx] = int(TAG_FROM_NAME[parts[2]])

    mesh = Mesh(nodes=nodes, triangles=triangles, boundary_edges=edges, edge_tags=tags, element_regions=regions)
    mesh.validate()
    return mesh

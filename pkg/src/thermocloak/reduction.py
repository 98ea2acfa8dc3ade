"""POD bases and Galerkin projection of the optimality systems.

Offline, snapshots enrich three orthonormal bases (reference, a shared
state/adjoint space, control) one training parameter at a time; every
affine operator term is projected once and stored. Online, any parameter
vector is served by dense solves whose size is the number of retained
modes, independent of the mesh.
"""

from __future__ import annotations

import hashlib
import json
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .assembly import FemOperators
from .sampling import ScenarioParams, SnapshotSet
from .steady import ControlWeights
from .transient import IterationRecord, LinearOcpSystem, TimeGrid, _solve_ocp_system


def pod_truncate(snapshots, tolerance):
    """Orthonormal basis of the dominant left singular vectors.

    The retained count is the smallest `n` whose discarded squared singular
    values sum to at most `tolerance**2` of the total; a numerical-rank
    guard drops exactly dependent directions even at zero tolerance.
    """
    mat = np.asarray(snapshots, dtype=float)
    if mat.ndim != 2:
        raise ValueError("snapshot matrix must be two-dimensional")
    if mat.size == 0 or not mat.any():
        warnings.warn("all-zero snapshot matrix: returning an empty basis")
        return np.zeros((mat.shape[0], 0)), np.zeros(0)
    left, sing, _ = np.linalg.svd(mat, full_matrices=False)
    energy = sing**2
    total = energy.sum()
    tail = np.concatenate([energy[::-1].cumsum()[::-1], [0.0]])  # tail[n] = discarded at keep-count n
    keep = int(np.argmax(tail <= tolerance**2 * total))
    rank = int((sing > sing[0] * max(mat.shape) * np.finfo(float).eps).sum())
    keep = min(max(keep, 0), rank)
    return left[:, :keep], sing[:keep]


@dataclass(frozen=True)
class PodBasis:
    """Orthonormal mode sets for the four fields; state and adjoint share one."""

    reference: np.ndarray  # (n_reference, n_z)
    state_adjoint: np.ndarray  # (n_state, n_qp)
    control: np.ndarray  # (n_control, n_u)
    singular_values: dict
    tolerance: float
    mesh_hash: str

    @property
    def dims(self):
        return {
            "reference": self.reference.shape[1],
            "state_adjoint": self.state_adjoint.shape[1],
            "control": self.control.shape[1],
        }


def _unit_columns(block):
    norms = np.linalg.norm(block, axis=0)
    safe = np.where(norms > 0.0, norms, 1.0)
    return block / safe


def _unit_block(block):
    scale = np.linalg.norm(block)
    return block / scale if scale > 0.0 else block


def _snapshot_blocks(record, mode, normalize):
    sol = record.solution
    if mode == "steady":
        q_blk, p_blk = sol.q[:, None], sol.p[:, None]
        z_blk, u_blk = sol.z[:, None], sol.u[:, None]
    else:
        q_blk, p_blk = sol.q.T, sol.p.T
        z_blk, u_blk = sol.z.T, sol.u.T
    if normalize == "block":
        # the four fields (and individual samples) live on wildly different
        # scales; normalizing each sample's field block makes the energy cut
        # act per snapshot and keeps small-magnitude adjoint directions
        # representable, while preserving the relative weighting in time
        z_blk, q_blk, p_blk, u_blk = (_unit_block(b) for b in (z_blk, q_blk, p_blk, u_blk))
    elif normalize == "unit":
        z_blk, q_blk, p_blk, u_blk = map(_unit_columns, (z_blk, q_blk, p_blk, u_blk))
    elif normalize != "none":
        raise ValueError("normalize must be 'block', 'unit' or 'none'")
    return z_blk, np.column_stack([q_blk, p_blk]), u_blk


def build_bases(snapshots: SnapshotSet, tolerance, normalize="block") -> PodBasis:
    """Enrich the three bases sample by sample: concatenate the current modes
    with the new snapshot block and re-truncate."""
    records = [r for r in snapshots.records if r.solution is not None]
    if not records:
        raise ValueError("snapshot set holds no successful solves")
    v_z = v_qp = v_u = None
    s_z = s_qp = s_u = np.zeros(0)
    for record in records:
        z_blk, qp_blk, u_blk = _snapshot_blocks(record, snapshots.mode, normalize)
        v_z, s_z = pod_truncate(z_blk if v_z is None else np.column_stack([v_z, z_blk]), tolerance)
        v_qp, s_qp = pod_truncate(qp_blk if v_qp is None else np.column_stack([v_qp, qp_blk]), tolerance)
        v_u, s_u = pod_truncate(u_blk if v_u is None else np.column_stack([v_u, u_blk]), tolerance)
    return PodBasis(
        reference=v_z,
        state_adjoint=v_qp,
        control=v_u,
        singular_values={"reference": s_z, "state_adjoint": s_qp, "control": s_u},
        tolerance=float(tolerance),
        mesh_hash=snapshots.mesh_hash,
    )


@dataclass(frozen=True)
class RomSteadyTemplate:
    """Reduced affine pieces of the one-shot system plus the bases to lift with."""

    basis: PodBasis
    weights: ControlWeights
    ref_stiff: np.ndarray
    ref_robin: np.ndarray
    stiff: np.ndarray
    robin: np.ndarray
    coupling: np.ndarray
    obs_mass: np.ndarray
    obs_cross: np.ndarray
    obs_zgram: np.ndarray
    control_mass: np.ndarray
    control_stiffness: np.ndarray
    ref_source: np.ndarray
    state_source: np.ndarray
    lift: np.ndarray
    ref_mass: np.ndarray
    state_mass: np.ndarray

    @property
    def control_block(self):
        return self.weights.beta * self.control_mass + self.weights.beta_grad * self.control_stiffness

    def assemble(self, params: ScenarioParams):
        """Dense reduced one-shot system for one parameter vector."""
        mu = params.diffusivity
        n_z = self.ref_stiff.shape[0]
        n_qp = self.stiff.shape[0]
        n_u = self.control_mass.shape[0]
        dim = n_z + 2 * n_qp + n_u
        kkt = np.zeros((dim, dim))
        s0, s1, s2, s3 = 0, n_z, n_z + n_qp, n_z + 2 * n_qp
        a_ref = mu * self.ref_stiff + self.ref_robin
        a_st = mu * self.stiff + self.robin
        kkt[s0:s1, s0:s1] = a_ref
        kkt[s1:s2, s1:s2] = a_st
        kkt[s1:s2, s3:] = -self.coupling
        kkt[s2:s3, s0:s1] = self.obs_cross
        kkt[s2:s3, s1:s2] = -self.obs_mass
        kkt[s2:s3, s2:s3] = a_st
        kkt[s3:, s2:s3] = self.coupling.T
        kkt[s3:, s3:] = self.control_block
        rhs = np.zeros(dim)
        rhs[s0:s1] = params.intensity * self.ref_source
        rhs[s1:s2] = mu * params.obstacle_temperature * self.lift + params.intensity * self.state_source
        return kkt, rhs


@dataclass(frozen=True)
class RomSteadySolution:
    """Reduced coordinates plus (optionally) the lifted full-mesh fields."""

    z_coords: np.ndarray
    q_coords: np.ndarray
    p_coords: np.ndarray
    u_coords: np.ndarray
    cost: float
    tracking_term: float
    control_term: float
    solve_seconds: float
    z: np.ndarray | None = None
    q: np.ndarray | None = None
    p: np.ndarray | None = None
    u: np.ndarray | None = None


def project_steady(ops: FemOperators, basis: PodBasis, weights: ControlWeights) -> RomSteadyTemplate:
    """Project every affine term of the one-shot system onto the bases."""
    v_z, v_qp, v_u = basis.reference, basis.state_adjoint, basis.control
    e_vz = v_z[ops.restriction.free_to_reference, :]  # E V_z by row selection
    obs_evz = ops.observation_mass @ e_vz
    ef = ops.restrict_reference(ops.source_load)
    return RomSteadyTemplate(
        basis=basis,
        weights=weights,
        ref_stiff=v_z.T @ (ops.stiffness @ v_z),
        ref_robin=v_z.T @ (ops.robin_mass @ v_z),
        stiff=v_qp.T @ (ops.stiffness_ocp @ v_qp),
        robin=v_qp.T @ (ops.robin_ocp @ v_qp),
        coupling=v_qp.T @ (ops.control_coupling @ v_u),
        obs_mass=v_qp.T @ (ops.observation_mass @ v_qp),
        obs_cross=v_qp.T @ obs_evz,
        obs_zgram=e_vz.T @ obs_evz,
        control_mass=v_u.T @ (ops.control_mass @ v_u),
        control_stiffness=v_u.T @ (ops.control_stiffness @ v_u),
        ref_source=v_z.T @ ops.source_load,
        state_source=v_qp.T @ ef,
        lift=v_qp.T @ ops.dirichlet_lift,
        ref_mass=v_z.T @ (ops.mass @ v_z),
        state_mass=v_qp.T @ (ops.mass_ocp @ v_qp),
    )


def solve_rom_steady(template: RomSteadyTemplate, params: ScenarioParams, lift=True) -> RomSteadySolution:
    """Dense online solve; `solve_seconds` times assembly plus solve only."""
    start = time.perf_counter()
    kkt, rhs = template.assemble(params)
    y = np.linalg.solve(kkt, rhs)
    n_z = template.ref_stiff.shape[0]
    n_qp = template.stiff.shape[0]
    z_c = y[:n_z]
    q_c = y[n_z : n_z + n_qp]
    p_c = y[n_z + n_qp : n_z + 2 * n_qp]
    u_c = y[n_z + 2 * n_qp :]
    tracking = 0.5 * float(
        q_c @ (template.obs_mass @ q_c) - 2.0 * q_c @ (template.obs_cross @ z_c) + z_c @ (template.obs_zgram @ z_c)
    )
    control = 0.5 * float(u_c @ (template.control_block @ u_c))
    elapsed = time.perf_counter() - start
    fields = {}
    if lift:
        fields = {
            "z": template.basis.reference @ z_c,
            "q": template.basis.state_adjoint @ q_c,
            "p": template.basis.state_adjoint @ p_c,
            "u": template.basis.control @ u_c,
        }
    return RomSteadySolution(
        z_coords=z_c,
        q_coords=q_c,
        p_coords=p_c,
        u_coords=u_c,
        cost=tracking + control,
        tracking_term=tracking,
        control_term=control,
        solve_seconds=elapsed,
        **fields,
    )


@dataclass(frozen=True)
class RomOperators:
    """Everything the reduced transient solver needs, nested steady included."""

    steady: RomSteadyTemplate

    @property
    def basis(self):
        return self.steady.basis

    @property
    def weights(self):
        return self.steady.weights

    def system(self, params: ScenarioParams) -> LinearOcpSystem:
        t = self.steady
        mu = params.diffusivity
        return LinearOcpSystem(
            mass=t.state_mass,
            stiff=mu * t.stiff + t.robin,
            rhs_const=mu * params.obstacle_temperature * t.lift + params.intensity * t.state_source,
            coupling=t.coupling,
            control_block=t.control_block,
            obs_mass=t.obs_mass,
            obs_cross=t.obs_cross,
            obs_zgram=t.obs_zgram,
            ref_mass=t.ref_mass,
            ref_stiff=mu * t.ref_stiff + t.ref_robin,
            ref_rhs=params.intensity * t.ref_source,
        )


def project_transient(ops: FemOperators, basis: PodBasis, weights: ControlWeights) -> RomOperators:
    """Reduced operators for the transient loop; contains the steady template."""
    return RomOperators(steady=project_steady(ops, basis, weights))


@dataclass(frozen=True)
class RomTrajectory:
    """Reduced trajectories with the same iteration log as the full solver."""

    grid: TimeGrid
    z_coords: np.ndarray
    q_coords: np.ndarray
    p_coords: np.ndarray
    u_coords: np.ndarray
    iterations: tuple[IterationRecord, ...]
    converged: bool
    steady: RomSteadySolution
    solve_seconds: float
    z: np.ndarray | None = None
    q: np.ndarray | None = None
    p: np.ndarray | None = None
    u: np.ndarray | None = None

    @property
    def cost(self):
        return self.iterations[-1].cost if self.iterations else 0.0


def solve_rom_transient(rom: RomOperators, params: ScenarioParams, grid: TimeGrid,
                        tol=1e-8, max_iter=50, terminal="steady", lift=True,
                        armijo=(1.0, 0.5, 1e-4, 30)) -> RomTrajectory:
    """Reduced transient solve mirroring the full-order algorithm step by step.

    The terminal adjoint comes from the nested reduced steady solve; lifting
    back to mesh fields happens after the timed solve.
    """
    if terminal not in ("steady", "zero"):
        raise ValueError("terminal must be 'steady' or 'zero'")
    start = time.perf_counter()
    steady = solve_rom_steady(rom.steady, params, lift=False)
    system = rom.system(params)
    u0 = np.tile(steady.u_coords, (grid.steps + 1, 1))
    z_rows, q_rows, p_rows, u_rows, log, converged = _solve_ocp_system(
        system, grid, u0, steady.p_coords, tol, max_iter, terminal, armijo
    )
    elapsed = time.perf_counter() - start
    if not converged:
        warnings.warn(
            f"reduced transient solve stopped at max_iter={max_iter} with gradient norm "
            f"{log[-1].grad_norm:.3e}"
        )
    fields = {}
    if lift:
        b = rom.basis
        fields = {
            "z": z_rows @ b.reference.T,
            "q": q_rows @ b.state_adjoint.T,
            "p": p_rows @ b.state_adjoint.T,
            "u": u_rows @ b.control.T,
        }
    return RomTrajectory(
        grid=grid,
        z_coords=z_rows,
        q_coords=q_rows,
        p_coords=p_rows,
        u_coords=u_rows,
        iterations=log,
        converged=converged,
        steady=steady,
        solve_seconds=elapsed,
        **fields,
    )


# ---------------------------------------------------------------------------
# archive: offline artifacts the online phase loads read-only

_ARCHIVE_VERSION = 1
_ARRAY_FIELDS = (
    "ref_stiff", "ref_robin", "stiff", "robin", "coupling", "obs_mass", "obs_cross",
    "obs_zgram", "control_mass", "control_stiffness", "ref_source", "state_source",
    "lift", "ref_mass", "state_mass",
)


def _checksum(arr):
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def save_rom_archive(path, rom: RomOperators):
    """Write bases, reduced operators and a manifest with checksums."""
    import os

    os.makedirs(path, exist_ok=True)
    t = rom.steady
    b = rom.basis
    arrays = {name: np.asarray(getattr(t, name)) for name in _ARRAY_FIELDS}
    arrays["basis_reference"] = b.reference
    arrays["basis_state_adjoint"] = b.state_adjoint
    arrays["basis_control"] = b.control
    for key, sv in b.singular_values.items():
        arrays[f"singular_{key}"] = sv
    np.savez(os.path.join(path, "arrays.npz"), **arrays)
    manifest = {
        "version": _ARCHIVE_VERSION,
        "pod_tolerance": b.tolerance,
        "mesh_hash": b.mesh_hash,
        "beta": t.weights.beta,
        "beta_grad": t.weights.beta_grad,
        "dims": b.dims,
        "checksums": {k: _checksum(v) for k, v in sorted(arrays.items())},
    }
    with open(os.path.join(path, "manifest.txt"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_rom_archive(path) -> RomOperators:
    """Load and checksum-verify an offline archive."""
    import os

    manifest_path = os.path.join(path, "manifest.txt")
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(
            f"no offline archive at {path}: run the offline phase first (manifest.txt missing)"
        )
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("version") != _ARCHIVE_VERSION:
        raise ValueError(f"unsupported archive version {manifest.get('version')}")
    with np.load(os.path.join(path, "arrays.npz")) as data:
        arrays = {k: data[k] for k in data.files}
    for key, digest in manifest["checksums"].items():
        if key not in arrays or _checksum(arrays[key]) != digest:
            raise ValueError(f"archive array '{key}' is missing or corrupted")
    basis = PodBasis(
        reference=arrays["basis_reference"],
        state_adjoint=arrays["basis_state_adjoint"],
        control=arrays["basis_control"],
        singular_values={
            k.removeprefix("singular_"): v for k, v in arrays.items() if k.startswith("singular_")
        },
        tolerance=manifest["pod_tolerance"],
        mesh_hash=manifest["mesh_hash"],
    )
    weights = ControlWeights(beta=manifest["beta"], beta_grad=manifest["beta_grad"])
    template = RomSteadyTemplate(
        basis=basis,
        weights=weights,
        **{name: arrays[name] for name in _ARRAY_FIELDS},
    )
    return RomOperators(steady=template)

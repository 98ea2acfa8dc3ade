"""Diagnostics: norms, tracking errors, cloaking efficiency, model-comparison reports."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import FemOperators
from .transient import TimeGrid, control_weights


def l2_norm(values, mass_matrix):
    """Spatial L2 norm of a nodal field through its mass matrix."""
    values = np.asarray(values)
    if values.shape[-1] != mass_matrix.shape[0]:
        raise ValueError("field length does not match the mass matrix")
    return float(np.sqrt(abs(values @ (mass_matrix @ values))))


def l2_spacetime_norm(rows, mass_matrix, grid: TimeGrid):
    """L2(0,T; L2) norm of a trajectory, trapezoidal in time."""
    rows = np.asarray(rows)
    if rows.shape != (grid.steps + 1, mass_matrix.shape[0]):
        raise ValueError("trajectory shape does not match grid and mass matrix")
    squares = np.einsum("kj,kj->k", rows, (mass_matrix @ rows.T).T)
    return float(np.sqrt(abs(grid.dt * control_weights(grid.steps) @ squares)))


def mean_tracking_error(q, z, ops: FemOperators):
    """Root mean square observation mismatch between the controlled and
    reference fields; `z` may be given on the reference mesh or already
    restricted."""
    z = np.asarray(z)
    if z.shape[-1] == ops.n_reference:
        z = ops.restrict_reference(z)
    area = ops.observation_area()
    if area <= 0.0:
        raise ValueError("observation region has zero measure")
    mismatch = np.asarray(q) - z
    return float(np.sqrt(abs(mismatch @ (ops.observation_mass @ mismatch)) / area))


def cloaking_efficiency(mte_uncontrolled, mte_optimal):
    """Relative reduction of the mean tracking error; 1 is a perfect cloak."""
    if mte_uncontrolled <= 0.0:
        raise ValueError("uncontrolled mean tracking error must be positive")
    return abs(mte_uncontrolled - mte_optimal) / mte_uncontrolled


@dataclass(frozen=True)
class CloakReport:
    """One row of diagnostics for a (layout, parameter, regime) combination."""

    mte_uncontrolled: float
    mte_optimal: float
    efficiency: float
    tracking_term: float
    control_term: float
    field_errors: dict = field(default_factory=dict)
    fom_seconds: float = 0.0
    rom_seconds: float = 0.0

    @property
    def speedup(self):
        return self.fom_seconds / self.rom_seconds if self.rom_seconds > 0.0 else float("inf")

    def as_row(self):
        row = {
            "mte_uncontrolled": self.mte_uncontrolled,
            "mte_optimal": self.mte_optimal,
            "efficiency": self.efficiency,
            "tracking_term": self.tracking_term,
            "control_term": self.control_term,
            "fom_seconds": self.fom_seconds,
            "rom_seconds": self.rom_seconds,
            "speedup": self.speedup if np.isfinite(self.speedup) else "",
        }
        for name, err in sorted(self.field_errors.items()):
            row[f"err_{name}"] = err
        return row


def _relative(err_norm, ref_norm):
    if ref_norm == 0.0:
        return 0.0 if err_norm == 0.0 else float("inf")
    return err_norm / ref_norm


def steady_field_errors(fom, rom, ops: FemOperators):
    """Relative spatial L2 errors of the four lifted steady fields."""
    pairs = {
        "z": (rom.z, fom.z, ops.mass),
        "q": (rom.q, fom.q, ops.mass_ocp),
        "p": (rom.p, fom.p, ops.mass_ocp),
        "u": (rom.u, fom.u, ops.control_mass),
    }
    out = {}
    for name, (approx, exact, gram) in pairs.items():
        if approx is None:
            raise ValueError(f"missing lifted field '{name}' in the reduced solution")
        out[name] = _relative(l2_norm(approx - exact, gram), l2_norm(exact, gram))
    return out


def transient_field_errors(fom, rom, ops: FemOperators, grid: TimeGrid):
    """Relative space-time errors of the four lifted trajectories."""
    pairs = {
        "z": (rom.z, fom.z, ops.mass),
        "q": (rom.q, fom.q, ops.mass_ocp),
        "p": (rom.p, fom.p, ops.mass_ocp),
        "u": (rom.u, fom.u, ops.control_mass),
    }
    out = {}
    for name, (approx, exact, gram) in pairs.items():
        if approx is None:
            raise ValueError(f"missing lifted field '{name}' in the reduced solution")
        out[name] = _relative(
            l2_spacetime_norm(approx - exact, gram, grid), l2_spacetime_norm(exact, gram, grid)
        )
    return out


def uncontrolled_state(ops: FemOperators, params):
    """Steady state with the control switched off, for efficiency baselines."""
    from scipy.sparse.linalg import splu

    a_ocp = (params.diffusivity * ops.stiffness_ocp + ops.robin_ocp).tocsc()
    rhs = params.diffusivity * params.obstacle_temperature * ops.dirichlet_lift
    rhs = rhs + params.intensity * ops.restrict_reference(ops.source_load)
    return splu(a_ocp).solve(rhs)


def rom_fom_report(fom, rom, ops: FemOperators, params, grid: TimeGrid | None = None) -> CloakReport:
    """Compare a reduced solution against its full-order counterpart.

    Steady solutions are compared in spatial norms, trajectories in
    space-time norms; the report also carries the cloaking diagnostics of
    the full-order solution and recorded solve timings.
    """
    transient = grid is not None
    if transient:
        errors = transient_field_errors(fom, rom, ops, grid)
        q_final, z_final = fom.q[-1], fom.z[-1]
        tracking = fom.steady.tracking_term if fom.steady is not None else float("nan")
        control = fom.steady.control_term if fom.steady is not None else float("nan")
    else:
        errors = steady_field_errors(fom, rom, ops)
        q_final, z_final = fom.q, fom.z
        tracking, control = fom.tracking_term, fom.control_term
    q_unc = uncontrolled_state(ops, params)
    mte_unc = mean_tracking_error(q_unc, z_final, ops)
    mte_opt = mean_tracking_error(q_final, z_final, ops)
    return CloakReport(
        mte_uncontrolled=mte_unc,
        mte_optimal=mte_opt,
        efficiency=cloaking_efficiency(mte_unc, mte_opt),
        tracking_term=tracking,
        control_term=control,
        field_errors=errors,
        fom_seconds=fom.solve_seconds,
        rom_seconds=rom.solve_seconds,
    )

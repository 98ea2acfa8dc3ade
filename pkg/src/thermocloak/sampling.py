"""Scenario parameters, Latin-hypercube training sets and snapshot generation."""

from __future__ import annotations

import hashlib
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ScenarioParams:
    """One scenario: material diffusivity, probing-source intensity and the
    temperature offset held on the obstacle boundary."""

    diffusivity: float
    intensity: float
    obstacle_temperature: float

    def __post_init__(self):
        if self.diffusivity <= 0.0:
            raise ValueError("diffusivity must be positive")

    def as_array(self):
        return np.array([self.diffusivity, self.intensity, self.obstacle_temperature])


@dataclass(frozen=True)
class ParameterBox:
    """Axis-aligned box of admissible scenario parameters."""

    diffusivity: tuple[float, float] = (1.0, 5.0)
    intensity: tuple[float, float] = (5.0e2, 1.5e4)
    obstacle_temperature: tuple[float, float] = (0.0, 200.0)

    def bounds(self):
        return np.array([self.diffusivity, self.intensity, self.obstacle_temperature])

    def contains(self, params: ScenarioParams):
        lo, hi = self.bounds().T
        vals = params.as_array()
        return bool(np.all(vals >= lo - 1e-12) and np.all(vals <= hi + 1e-12))


def lhs_sample(box: ParameterBox, n_samples: int, seed: int) -> list[ScenarioParams]:
    """Stratified Latin-hypercube sample of the parameter box.

    Each dimension is split into `n_samples` equal strata; a random
    permutation assigns exactly one sample per stratum, jittered uniformly
    inside it. Deterministic for a fixed seed.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    bounds = box.bounds()
    rng = np.random.default_rng(seed)
    columns = []
    for lo, hi in bounds:
        if hi < lo:
            raise ValueError("parameter box has inverted bounds")
        if hi == lo:
            warnings.warn("degenerate parameter box dimension: samples pinned to a single value")
            columns.append(np.full(n_samples, lo))
            continue
        strata = rng.permutation(n_samples)
        jitter = rng.uniform(size=n_samples)
        columns.append(lo + (strata + jitter) / n_samples * (hi - lo))
    values = np.column_stack(columns)
    return [ScenarioParams(*row) for row in values]


@dataclass(frozen=True)
class SnapshotRecord:
    params: ScenarioParams
    solution: object  # SteadySolution or Trajectory
    error: str | None = None


@dataclass(frozen=True)
class SnapshotSet:
    """Full-order solutions at the training parameters, with provenance."""

    mode: str  # "steady" or "transient"
    records: tuple[SnapshotRecord, ...]
    mesh_hash: str
    seed: int | None = None
    config_hash: str | None = None

    def __post_init__(self):
        if self.mode not in ("steady", "transient"):
            raise ValueError("mode must be 'steady' or 'transient'")

    @property
    def solutions(self):
        return [r.solution for r in self.records if r.solution is not None]

    @property
    def failures(self):
        return [r for r in self.records if r.solution is None]


def generate_snapshots(ops, samples, weights, grid=None, mode="steady", workers=1,
                       seed=None, config_hash=None, tol=1e-8, max_iter=50) -> SnapshotSet:
    """Solve the full-order problem at every sampled parameter.

    Individual sample failures are recorded and skipped; only a fully failed
    batch raises. Sample solves share the immutable operators and may run on
    a thread pool (`workers > 1`) with identical results to the serial path.
    """
    from .steady import solve_steady
    from .transient import solve_transient_ocp

    if mode not in ("steady", "transient"):
        raise ValueError("mode must be 'steady' or 'transient'")
    if mode == "transient" and grid is None:
        raise ValueError("transient snapshots need a time grid")

    def solve_one(params):
        try:
            if mode == "steady":
                return SnapshotRecord(params, solve_steady(ops, params, weights))
            sol = solve_transient_ocp(ops, params, weights, grid, tol=tol, max_iter=max_iter)
            return SnapshotRecord(params, sol)
        except Exception as exc:  # recorded, not fatal
            return SnapshotRecord(params, None, error=str(exc))

    samples = list(samples)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(solve_one, samples))
    else:
        records = [solve_one(p) for p in samples]

    snapset = SnapshotSet(
        mode=mode,
        records=tuple(records),
        mesh_hash=ops.mesh_ocp.content_hash(),
        seed=seed,
        config_hash=config_hash,
    )
    if samples and not snapset.solutions:
        details = "; ".join(r.error or "unknown" for r in snapset.failures[:3])
        raise RuntimeError(f"all {len(samples)} snapshot solves failed: {details}")
    return snapset


# ---------------------------------------------------------------------------
# plain-text snapshot container: one manifest plus one file per sample

_FMT = "%.17g"


def _write_field(fh, name, array):
    array = np.atleast_2d(np.asarray(array, dtype=float))
    fh.write(f"field {name} {array.shape[0]} {array.shape[1]}\n")
    for row in array:
        fh.write(" ".join(_FMT % v for v in row) + "\n")


def _read_field(lines, pos):
    parts = lines[pos].split()
    if len(parts) != 4 or parts[0] != "field":
        raise ValueError(f"snapshot file: expected field header at line {pos + 1}")
    name, rows, cols = parts[1], int(parts[2]), int(parts[3])
    data = np.empty((rows, cols))
    for r in range(rows):
        data[r] = np.fromstring(lines[pos + 1 + r], sep=" ")
    array = data[0] if rows == 1 else data
    return name, array, pos + 1 + rows


def save_snapshots(directory, snapshots: SnapshotSet, box: ParameterBox | None = None):
    """Write the versioned text container the offline phase can be resumed from."""
    import os

    os.makedirs(directory, exist_ok=True)
    ok_records = [r for r in snapshots.records if r.solution is not None]
    with open(os.path.join(directory, "manifest.txt"), "w") as fh:
        fh.write("thermocloak-snapshots v1\n")
        fh.write(f"mode {snapshots.mode}\n")
        fh.write(f"count {len(ok_records)}\n")
        fh.write(f"mesh_hash {snapshots.mesh_hash}\n")
        fh.write(f"seed {snapshots.seed if snapshots.seed is not None else '-'}\n")
        fh.write(f"config_hash {snapshots.config_hash or '-'}\n")
        if box is not None:
            b = box.bounds()
            fh.write("box " + " ".join(_FMT % v for v in b.ravel()) + "\n")
    for idx, record in enumerate(ok_records):
        sol = record.solution
        with open(os.path.join(directory, f"sample_{idx:04d}.txt"), "w") as fh:
            fh.write("thermocloak-snapshot v1\n")
            fh.write("params " + " ".join(_FMT % v for v in record.params.as_array()) + "\n")
            if snapshots.mode == "transient":
                fh.write(f"grid {_FMT % sol.grid.horizon} {sol.grid.steps}\n")
                fh.write(f"converged {int(sol.converged)}\n")
            else:
                fh.write(f"cost {_FMT % sol.cost} {_FMT % sol.tracking_term} {_FMT % sol.control_term}\n")
            for name in ("z", "q", "p", "u"):
                _write_field(fh, name, getattr(sol, name))


def load_snapshots(directory) -> SnapshotSet:
    """Read a container written by :func:`save_snapshots`."""
    import os

    from .steady import SteadySolution
    from .transient import TimeGrid, Trajectory

    manifest_path = os.path.join(directory, "manifest.txt")
    with open(manifest_path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "thermocloak-snapshots v1":
        raise ValueError(f"{manifest_path}: not a snapshot container")
    meta = dict(line.split(None, 1) for line in lines[1:] if line)
    mode = meta["mode"]
    count = int(meta["count"])
    seed = None if meta.get("seed", "-") == "-" else int(meta["seed"])
    config_hash = None if meta.get("config_hash", "-") == "-" else meta["config_hash"]

    records = []
    for idx in range(count):
        path = os.path.join(directory, f"sample_{idx:04d}.txt")
        with open(path) as fh:
            body = fh.read().splitlines()
        if body[0] != "thermocloak-snapshot v1":
            raise ValueError(f"{path}: not a snapshot file")
        params = ScenarioParams(*(float(v) for v in body[1].split()[1:]))
        pos = 2
        grid = None
        converged = True
        cost = tracking = control = 0.0
        while pos < len(body) and not body[pos].startswith("field"):
            head, *rest = body[pos].split()
            if head == "grid":
                grid = (float(rest[0]), int(rest[1]))
            elif head == "converged":
                converged = bool(int(rest[0]))
            elif head == "cost":
                cost, tracking, control = (float(v) for v in rest)
            pos += 1
        fields = {}
        while pos < len(body) and body[pos].startswith("field"):
            name, array, pos = _read_field(body, pos)
            fields[name] = array
        if mode == "steady":
            sol = SteadySolution(
                z=fields["z"], q=fields["q"], p=fields["p"], u=fields["u"],
                cost=cost, tracking_term=tracking, control_term=control,
            )
        else:
            sol = Trajectory(
                grid=TimeGrid(horizon=grid[0], steps=grid[1]),
                z=fields["z"], q=fields["q"], p=fields["p"], u=fields["u"],
                converged=converged,
            )
        records.append(SnapshotRecord(params, sol))
    return SnapshotSet(
        mode=mode,
        records=tuple(records),
        mesh_hash=meta["mesh_hash"],
        seed=seed,
        config_hash=config_hash,
    )

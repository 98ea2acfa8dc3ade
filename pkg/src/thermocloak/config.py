"""Flat `key = value` run configuration with stable hashing.

The file format is line oriented: one dotted key per line, `#` comments,
no sections or nesting. Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .meshing import (
    AnnulusCloak,
    AnnulusObservation,
    CircleObstacle,
    ComplementObservation,
    DiscRingCloak,
    LayoutSpec,
    OffsetCloak,
    PolygonObstacle,
    SourceDisc,
)
from .sampling import ParameterBox, ScenarioParams
from .steady import ControlWeights
from .transient import TimeGrid

DEFAULTS = {
    "layout.half_width": "1.0",
    "layout.mesh_size": "0.016",
    "layout.obstacle.kind": "circle",  # circle | polygon | none
    "layout.obstacle.cx": "0.0",
    "layout.obstacle.cy": "0.0",
    "layout.obstacle.radius": "0.2",
    "layout.obstacle.file": "",
    "layout.cloak.kind": "annulus",  # annulus | discs | offset
    "layout.cloak.r_inner": "0.25",
    "layout.cloak.r_outer": "0.35",
    "layout.cloak.count": "8",
    "layout.cloak.ring_radius": "0.30",
    "layout.cloak.disc_radius": "0.06",
    "layout.cloak.thickness": "0.12",
    "layout.observation.kind": "annulus",  # annulus | complement
    "layout.observation.r_inner": "0.40",
    "layout.observation.r_outer": "0.60",
    "layout.source.cx": "0.7",
    "layout.source.cy": "0.0",
    "layout.source.radius": "0.1",
    "weights.beta": "1e-7",
    "weights.beta_grad": "1e-8",
    "grid.horizon": "5.0",
    "grid.steps": "100",
    "params.diffusivity": "3.5",
    "params.intensity": "1e4",
    "params.obstacle_temperature": "0.0",
    "box.diffusivity_min": "1.0",
    "box.diffusivity_max": "5.0",
    "box.intensity_min": "5e2",
    "box.intensity_max": "1.5e4",
    "box.obstacle_temperature_min": "0.0",
    "box.obstacle_temperature_max": "200.0",
    "pod.tolerance": "1e-7",
    "pod.normalize": "block",
    "sampling.steady_count": "50",
    "sampling.transient_count": "25",
    "sampling.seed": "0",
    "solver.tolerance": "1e-8",
    "solver.max_iterations": "50",
    "solver.armijo_tau0": "1.0",
    "solver.armijo_shrink": "0.5",
    "solver.armijo_c1": "1e-4",
    "solver.armijo_max_backtracks": "30",
    "offline.mode": "steady",  # steady | transient
    "offline.workers": "1",
    "offline.save_snapshots": "true",
    "output.directory": "out",
    "export.format": "csv",  # csv | vtk | both
    "export.frames": "",
}


class ConfigError(ValueError):
    """Bad configuration file or value; the message names the offending key."""


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{source}: line {lineno}: unknown key '{key}'")
        values[key] = value
    return values


@dataclass(frozen=True)
class RunConfig:
    """Effective configuration: defaults overlaid with file and CLI values."""

    values: dict

    @classmethod
    def load(cls, path=None, overrides=None):
        merged = dict(DEFAULTS)
        if path is not None:
            with open(path) as fh:
                merged.update(parse_config_text(fh.read(), source=str(path)))
        for key, value in (overrides or {}).items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown configuration key '{key}'")
            merged[key] = str(value)
        return cls(values=merged)

    def _get(self, key):
        return self.values[key]

    def get_float(self, key):
        try:
            return float(self._get(key))
        except ValueError as exc:
            raise ConfigError(f"key '{key}': expected a number, got '{self._get(key)}'") from exc

    def get_int(self, key):
        try:
            return int(self._get(key))
        except ValueError as exc:
            raise ConfigError(f"key '{key}': expected an integer, got '{self._get(key)}'") from exc

    def get_bool(self, key):
        text = self._get(key).lower()
        if text in ("true", "1", "yes"):
            return True
        if text in ("false", "0", "no"):
            return False
        raise ConfigError(f"key '{key}': expected true/false, got '{self._get(key)}'")

    def get_str(self, key):
        return self._get(key)

    def hash(self):
        """Stable digest of the effective configuration, order independent."""
        canonical = "\n".join(f"{k} = {self.values[k]}" for k in sorted(self.values))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    # -- builders -----------------------------------------------------------

    def build_layout(self) -> LayoutSpec:
        kind = self.get_str("layout.obstacle.kind")
        if kind == "circle":
            obstacle = CircleObstacle(
                center=(self.get_float("layout.obstacle.cx"), self.get_float("layout.obstacle.cy")),
                radius=self.get_float("layout.obstacle.radius"),
            )
        elif kind == "polygon":
            path = self.get_str("layout.obstacle.file")
            if not path:
                raise ConfigError("layout.obstacle.file is required for a polygon obstacle")
            obstacle = PolygonObstacle.from_file(path)
        elif kind == "none":
            obstacle = None
        else:
            raise ConfigError(f"layout.obstacle.kind: unknown value '{kind}'")

        ckind = self.get_str("layout.cloak.kind")
        if ckind == "annulus":
            cloak = AnnulusCloak(self.get_float("layout.cloak.r_inner"), self.get_float("layout.cloak.r_outer"))
        elif ckind == "discs":
            cloak = DiscRingCloak(
                count=self.get_int("layout.cloak.count"),
                ring_radius=self.get_float("layout.cloak.ring_radius"),
                disc_radius=self.get_float("layout.cloak.disc_radius"),
            )
        elif ckind == "offset":
            cloak = OffsetCloak(thickness=self.get_float("layout.cloak.thickness"))
        else:
            raise ConfigError(f"layout.cloak.kind: unknown value '{ckind}'")

        okind = self.get_str("layout.observation.kind")
        if okind == "annulus":
            observation = AnnulusObservation(
                self.get_float("layout.observation.r_inner"), self.get_float("layout.observation.r_outer")
            )
        elif okind == "complement":
            observation = ComplementObservation()
        else:
            raise ConfigError(f"layout.observation.kind: unknown value '{okind}'")

        return LayoutSpec(
            half_width=self.get_float("layout.half_width"),
            obstacle=obstacle,
            cloak=cloak,
            observation=observation,
            source=SourceDisc(
                center=(self.get_float("layout.source.cx"), self.get_float("layout.source.cy")),
                radius=self.get_float("layout.source.radius"),
            ),
            mesh_size=self.get_float("layout.mesh_size"),
        )

    def build_weights(self) -> ControlWeights:
        return ControlWeights(beta=self.get_float("weights.beta"), beta_grad=self.get_float("weights.beta_grad"))

    def build_grid(self) -> TimeGrid:
        return TimeGrid(horizon=self.get_float("grid.horizon"), steps=self.get_int("grid.steps"))

    def build_params(self) -> ScenarioParams:
        return ScenarioParams(
            diffusivity=self.get_float("params.diffusivity"),
            intensity=self.get_float("params.intensity"),
            obstacle_temperature=self.get_float("params.obstacle_temperature"),
        )

    def build_box(self) -> ParameterBox:
        return ParameterBox(
            diffusivity=(self.get_float("box.diffusivity_min"), self.get_float("box.diffusivity_max")),
            intensity=(self.get_float("box.intensity_min"), self.get_float("box.intensity_max")),
            obstacle_temperature=(
                self.get_float("box.obstacle_temperature_min"),
                self.get_float("box.obstacle_temperature_max"),
            ),
        )

    def armijo(self):
        return (
            self.get_float("solver.armijo_tau0"),
            self.get_float("solver.armijo_shrink"),
            self.get_float("solver.armijo_c1"),
            self.get_int("solver.armijo_max_backtracks"),
        )

    def frames(self, n_steps):
        """Requested export frame indices clipped to the grid (final frame if unset)."""
        text = self.get_str("export.frames").strip()
        if not text:
            return [n_steps]
        frames = []
        for token in text.split(","):
            token = token.strip()
            if not token:
                continue
            idx = int(token)
            if 0 <= idx <= n_steps:
                frames.append(idx)
        return sorted(set(frames))

    def dump(self):
        return "\n".join(f"{k} = {self.values[k]}" for k in sorted(self.values)) + "\n"

import numpy as np
import pytest

from thermocloak import (
    AnnulusCloak,
    AnnulusObservation,
    CircleObstacle,
    ControlWeights,
    LayoutSpec,
    SourceDisc,
    assemble_from_layout,
    default_layout,
)
from thermocloak.sampling import ScenarioParams


def tiny_layout(mesh_size=1.0 / 6.0):
    """Coarse layout with wide rings so every region survives a big h."""
    return LayoutSpec(
        obstacle=CircleObstacle(radius=0.25),
        cloak=AnnulusCloak(0.3, 0.55),
        observation=AnnulusObservation(0.6, 0.85),
        source=SourceDisc((0.75, 0.75), 0.15),
        mesh_size=mesh_size,
    )


@pytest.fixture(scope="session")
def tiny_ops():
    return assemble_from_layout(tiny_layout())


@pytest.fixture(scope="session")
def small_ops():
    return assemble_from_layout(default_layout(mesh_size=0.1))


@pytest.fixture(scope="session")
def mu_t1():
    return ScenarioParams(3.5, 1e4, 0.0)


@pytest.fixture(scope="session")
def oracle_weights():
    """Moderate penalties keep finite-difference oracles well scaled."""
    return ControlWeights(beta=1e-3, beta_grad=1e-4)


@pytest.fixture(scope="session")
def default_weights():
    return ControlWeights()


def relative_l2(a, b, gram):
    d = np.asarray(a) - np.asarray(b)
    num = float(np.sqrt(abs(d @ (gram @ d))))
    den = float(np.sqrt(abs(np.asarray(b) @ (gram @ np.asarray(b)))))
    return num / den if den > 0 else num

"""Active thermal cloaking: full-order optimal control and its reduced model."""

from .assembly import FemOperators, affine_state_matrix, assemble_from_layout, assemble_operators, element_mass, element_stiffness
from .meshing import (
    AnnulusCloak,
    AnnulusObservation,
    CircleObstacle,
    ComplementObservation,
    DiscRingCloak,
    EdgeTag,
    LayoutError,
    LayoutSpec,
    Mesh,
    MeshFormatError,
    OffsetCloak,
    PolygonObstacle,
    Region,
    RestrictionOperator,
    SourceDisc,
    build_restriction,
    default_layout,
    disc_ring_layout,
    generate_layout,
    load_mesh,
    polygon_layout,
    save_mesh,
)
from .config import RunConfig
from .export import export_fields
from .metrics import (
    CloakReport,
    cloaking_efficiency,
    l2_norm,
    l2_spacetime_norm,
    mean_tracking_error,
    rom_fom_report,
)
from .reduction import (
    PodBasis,
    RomOperators,
    build_bases,
    load_rom_archive,
    pod_truncate,
    project_steady,
    project_transient,
    save_rom_archive,
    solve_rom_steady,
    solve_rom_transient,
)
from .sampling import (
    ParameterBox,
    ScenarioParams,
    SnapshotSet,
    generate_snapshots,
    lhs_sample,
    load_snapshots,
    save_snapshots,
)
from .steady import ControlWeights, SteadySolution, assemble_kkt, solve_steady
from .transient import (
    ArmijoError,
    TimeGrid,
    Trajectory,
    armijo_backtracking,
    evaluate_cost,
    quasi_newton_step,
    solve_adjoint,
    solve_reference,
    solve_state,
    solve_transient_ocp,
)

__version__ = "0.1.0"

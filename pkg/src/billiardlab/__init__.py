"""billiardlab: directional billiards in generalized parallelograms and
the inhomogeneous Diophantine machinery behind their escaping-orbit sets.

Subpackage map:

- ``circle``     unit-circle arithmetic, validated continued fractions
- ``intervals``  disjoint open-interval unions (the universal set type)
- ``dioph``      approximation solution scans, A/B covering sets, ubiquity
- ``cantor``     nested interval hierarchies with outer-measure bookkeeping
- ``billiard``   polygon geometry, cross-sections, beam tracing, escape sets
- ``dimension``  box counting and Hausdorff-sum schedules
- ``experiments``/``cli``  reproducible experiment runners (``lab`` entry point)
"""

__version__ = "0.1.0"

from .billiard import (
    Beam,
    BeamStatus,
    CrossSection,
    EscapeReport,
    GeneralizedParallelogram,
    SideClass,
    beam_on_section,
    build_polygon,
    cross_section,
    escape_set,
    parallelogram,
    partition_udr,
    perpendicular_periodicity,
    polygon_from_vertices,
    rhombus,
    trace_beam,
)
from .cantor import (
    CantorHierarchy,
    HierarchyLevel,
    LevelInterval,
    build_hierarchy,
    intermediate_interval_check,
    local_dimension_report,
    select_sequence,
    separation_report,
)
from .errors import (
    BilliardLabError,
    CapTooSmall,
    ConfigError,
    DegenerateDirection,
    DepthExceeded,
    DepthUnreachable,
    EmptyLevel,
    InsufficientScales,
    NotGeneralizedParallelogram,
    OrbitPoint,
    RationalAngle,
    RationalDetected,
    RationalRotation,
    ReflectionBudgetExhausted,
    ScheduleNotFound,
)
from .experiments import (
    EXPERIMENTS,
    ExperimentConfig,
    RunReport,
    apply_overrides,
    construct_twosided_target,
    run_experiment,
    write_report,
)

__all__ = [
    "Beam",
    "BeamStatus",
    "BilliardLabError",
    "CantorHierarchy",
    "CapTooSmall",
    "ConfigError",
    "CrossSection",
    "DegenerateDirection",
    "DepthExceeded",
    "DepthUnreachable",
    "EXPERIMENTS",
    "EmptyLevel",
    "EscapeReport",
    "ExperimentConfig",
    "GeneralizedParallelogram",
    "HierarchyLevel",
    "InsufficientScales",
    "LevelInterval",
    "NotGeneralizedParallelogram",
    "OrbitPoint",
    "RationalAngle",
    "RationalDetected",
    "RationalRotation",
    "ReflectionBudgetExhausted",
    "RunReport",
    "ScheduleNotFound",
    "SideClass",
    "apply_overrides",
    "beam_on_section",
    "build_hierarchy",
    "build_polygon",
    "construct_twosided_target",
    "cross_section",
    "escape_set",
    "intermediate_interval_check",
    "local_dimension_report",
    "parallelogram",
    "partition_udr",
    "perpendicular_periodicity",
    "polygon_from_vertices",
    "rhombus",
    "run_experiment",
    "select_sequence",
    "separation_report",
    "trace_beam",
    "write_report",
    "__version__",
]

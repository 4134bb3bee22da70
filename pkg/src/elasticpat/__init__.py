"""Time-reversal and Neumann series inversion for elastic photoacoustic tomography."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ElasticPATError,
    GridMismatch,
    InconsistentData,
    NonPositiveParameter,
    NoProgress,
    SolverDivergence,
    SolverError,
    SupportViolation,
    TooLarge,
    TrappedRay,
    UnstableStep,
    ZeroTruth,
)
from .medium import Ball, Box, Bump, DomainSpec, FieldSpec, Grid, Medium, build_medium, smallest_shear_diameter
from .fields import VectorField, WaveState
from .norms import (
    discrete_adjointness_defect,
    h_inner,
    h_seminorm,
    korn_constant,
    l2_inner,
    l2_norm,
    quadratic_energy,
)
from .solver import (
    BoundaryTrace,
    ElasticOperator,
    Problem,
    SolverConfig,
    discrete_elastic_operator,
    energy_flux_report,
    forward_solve,
    time_reversal_solve,
)
from .extension import elastic_extension, extension_orthogonality_defect, project
from .neumann import ReconstructionReport, apply_A, apply_K, assemble_small_oracle, reconstruct
from .visibility import VisibilityCertificate, certify_visibility, trace_geodesic
from .phantom import make_phantom, relative_error

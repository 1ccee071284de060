"""Spectral-Galerkin laboratory for the CR Q-curvature flow on the 3-sphere."""

import os as _os

_threads = _os.environ.get("CRQFLOW_THREADS")
if _threads:
    # Honored only if set before the linear-algebra backend loads.
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        _os.environ.setdefault(_var, _threads)

from .background import (
    BackgroundError,
    ConformalBackground,
    make_background,
    random_field,
)
from .basis import (
    BasisError,
    HarmonicMode,
    SpectralBasis,
    SpectralField,
    build_basis,
    fs_norm,
    list_modes,
    mode_count,
)
from .diagnostics import (
    ConstantEstimate,
    CrossValidation,
    DecayRateResult,
    aliasing_residual,
    cross_validate,
    decay_rate_check,
    estimate_upsilon,
    subelliptic_constant,
)
from .flow import (
    FlowConfig,
    FlowState,
    MonitorReport,
    Trajectory,
    TrajectoryRecord,
    compute_r,
    exact_solution_at,
    init_state,
    monitors,
    run_exact_perp,
    run_flow,
    run_imex,
    step_imex,
)
from .model import SphereModel, get_model
from .operators import (
    AssemblyError,
    OperatorMatrix,
    Operators,
    assemble_operators,
    spectrum_table,
)
from .polynomials import Poly, apply_vector_field, flat_laplacian, harmonic_basis
from .quadrature import TOTAL_VOLUME, QuadratureGrid, build_grid

__version__ = "0.1.0"

__all__ = [
    "AssemblyError",
    "BackgroundError",
    "BasisError",
    "ConformalBackground",
    "ConstantEstimate",
    "CrossValidation",
    "DecayRateResult",
    "FlowConfig",
    "FlowState",
    "HarmonicMode",
    "MonitorReport",
    "OperatorMatrix",
    "Operators",
    "Poly",
    "QuadratureGrid",
    "SpectralBasis",
    "SpectralField",
    "SphereModel",
    "TOTAL_VOLUME",
    "Trajectory",
    "TrajectoryRecord",
    "aliasing_residual",
    "apply_vector_field",
    "assemble_operators",
    "build_basis",
    "build_grid",
    "compute_r",
    "cross_validate",
    "decay_rate_check",
    "estimate_upsilon",
    "exact_solution_at",
    "flat_laplacian",
    "fs_norm",
    "get_model",
    "harmonic_basis",
    "init_state",
    "list_modes",
    "make_background",
    "mode_count",
    "monitors",
    "random_field",
    "run_exact_perp",
    "run_flow",
    "run_imex",
    "spectrum_table",
    "step_imex",
    "subelliptic_constant",
]

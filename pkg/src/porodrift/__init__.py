"""Finite-volume engine for multi-species nonlinear drift-diffusion in
periodically perforated domains, with periodic-cell homogenization and
desk-scale verification harnesses."""

__version__ = "0.1.0"

from .cell_problem import (
    CorrectorField,
    EffectiveTensor,
    compute_effective_tensor,
    corrector_residual,
    solve_cell_problem,
)
from .diagnostics import DiagnosticsRecord, energy_value, psi_eval
from .errors import ConfigError, GeometryError, PorodriftError, SolverError, TimeStepError
from .geometry import (
    CellGeometry,
    FacetCharges,
    InclusionShape,
    MaskedGrid,
    build_cell_geometry,
    build_masked_grid,
    surface_charge_on_facets,
)
from .macro import (
    MacroSimulation,
    MacroSourceSpec,
    build_macro_source,
    reconstruct_corrector_potential,
    run_macro,
)
from .micro import (
    MicroSimulation,
    ScalingSpec,
    SpeciesSpec,
    h_p_eval,
    h_p_prime,
    run_micro,
    validate_compatibility,
)
from .transport import RunResult, SimState
from .verification import (
    ConvergenceReport,
    balance_outer_charges,
    run_convergence_study,
    run_eta_sweep,
    run_mms_verification,
)

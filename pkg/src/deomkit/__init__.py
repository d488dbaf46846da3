"""deomkit: dissipaton-hierarchy dynamics for open quantum systems.

Exact reduced dynamics of a system linearly coupled to a Gaussian bath,
via a hierarchy of dissipaton density operators, with statistics of the
collective bath (solvation) mode and its quasi-distribution picture.
"""

from .bath import (
    DissipatonMode,
    DissipatonModeSet,
    SpectralDensity,
    SpectralKind,
    bath_variance,
    correlation_function,
    decompose_correlation,
    dissipaton_coefficients,
    load_mode_set,
    mode_set_from_arrays,
    pair_conjugate_indices,
    reconstruction_error,
    save_mode_set,
)
from .errors import (
    ConfigError,
    ConvergenceInconclusive,
    NumericalError,
    QuadratureError,
)
from .field import (
    FieldSlice,
    basis_function,
    closure_residuals,
    default_grid,
    equilibrium_recurrence_residuals,
    probability_current,
    project_field_to_ddos,
    reconstruct,
    scaled_basis_values,
    smoluchowski_residual,
)
from .hierarchy import (
    DDOStore,
    conjugate_index,
    enumerate_multi_indices,
    index_count,
    load_checkpoint,
    lower_index,
    raise_index,
    save_checkpoint,
)
from .models import (
    DEPHASING_PREFACTOR,
    dephasing_coherence_oracle,
    donor_state,
    electron_transfer_model,
    pure_dephasing_model,
    spin_boson_model,
    system_gap,
)
from .moments import (
    MomentExtractor,
    MomentSeries,
    cumulants_from_moments,
    ddo_from_x_operators,
    hybrid_moment,
    hybrid_moment_via_x,
    irreducible_moment,
    x_moment,
    x_operator,
    x_operator_table,
)
from .propagator import (
    HierarchyGenerator,
    SystemModel,
    Trajectory,
    default_timestep,
    initial_state,
    propagate,
    steady_state,
)
from .runner import (
    build_bath,
    build_initial_state,
    build_model,
    dominant_frequency,
    load_config,
    run,
    run_sweep,
    truncation_deltas,
    validate_config,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

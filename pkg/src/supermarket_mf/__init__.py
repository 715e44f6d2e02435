"""Mean-field analysis of supermarket models with phase-type arrivals and service."""
from .core import (
    BlockGenerator,
    ChoiceDecomposition,
    FractionMeasure,
    TailSequence,
    fixed_point_residual,
    hadamard_power,
    integrate,
    mean_field_rhs,
    reference_linear_solution,
    stationary_vector,
    truncated_stationary_vector,
    validate_decomposition,
)
from .errors import (
    ConvergenceError,
    InstabilityError,
    IntegrationError,
    ModelFileError,
    SimulationError,
    StabilityError,
    TruncationWarning,
)
from .gim1 import BatchPhService, Gim1Model, gim1_aggregate_residual, gim1_decomposition, gim1_fixed_point
from .mg1 import BmapDescriptor, Mg1Model, mg1_aggregate_residual, mg1_decomposition, mg1_fixed_point
from .multichoice import (
    MobileServerModel,
    MultiClassModel,
    mobile_fixed_point,
    mobile_residual,
    multichoice_decompositions,
    multiclass_fixed_point,
    multiclass_residual,
)
from .simulator import EmpiricalMeasure, SimConfig, compare_to_mean_field, simulate

__version__ = "0.1.0"

"""Probabilistic modelling of sensor-instrumented grids.

A tree-structured factor graph ties per-section state variables together:
identity conditional factors carry sensor readings, pairwise joint factors
carry learned latent-manifold couplings, and Gaussian belief propagation in
information form performs filtering, imputation and anomaly scoring.
"""

__version__ = "0.1.0"

from .errors import (
    ConnectivityError,
    DataError,
    DegenerateModelError,
    GridModelError,
    InversionDivergenceError,
    NumericalError,
    ObservabilityError,
    SchedulingError,
    SchemaError,
    SingularMatrixError,
    TrainingError,
    ValidationError,
)
from .gaussian import (
    CanonicalGaussian,
    FunctionMap,
    LinearMap,
    canonical_from_moments,
    identity_map,
    linearize_conditional,
    linearize_joint,
)
from .graph import (
    ConditionalFactor,
    FactorGraph,
    InferenceResult,
    JointFactor,
    Message,
    VariableNode,
    message_factor_to_var,
    message_var_to_factor,
    run_inference,
    schedule,
    update_estimates,
    validate,
)
from .nlpca import (
    DecoderNetwork,
    decode,
    factor_covariance,
    invert,
    jacobian,
    param_count,
    reconstruct,
    train,
)
# the partition() entry point stays on the submodule so that
# ``gridbp.partition`` keeps naming the module itself
from .partition import ConnectivityGraph, PartitionResult, bisect, fiedler_vector, laplacian
from .builder import ModelBlueprint, build_blueprint, instantiate
from .datagen import GridDataset, generate, inject_anomaly, mask_missing
from .trainer import EmConfig, em_train, evaluate
from .analysis import (
    centralized_baseline,
    dense_solve,
    detect_anomalies,
    rmse,
    scaling_benchmark,
    z_test,
)

__all__ = [name for name in dir() if not name.startswith("_")]

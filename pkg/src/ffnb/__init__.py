"""Continual learning with forgetting-free feature bands.

A dynamically growing fully connected block learns one parameter band per
task; each band is trained inside the null-space of all previous tasks'
activations, so earlier tasks' features provably stay put.  Classification
uses incrementally fitted pairwise Fisher discriminants with tanh pooling.
The package also ships a verifiable drift bound, a naive baseline, a joint
training comparator, and a CLI harness over feature-vector task streams.
"""

from .bound import (
    BoundTracker,
    ProbeSet,
    bound,
    bound_series,
    measured_drift,
    old_coordinate_drift,
    record_iteration,
)
from .checkpoint import FORMAT_VERSION, ReportData, RunState, load_checkpoint, save_checkpoint
from .classifiers import ClassifierBank, ClassStats, LinearHead, PairwiseHyperplane
from .config import RunConfig, apply_overrides, load_config, validate
from .errors import (
    CheckpointError,
    ConfigError,
    DimensionError,
    EmptyNullSpaceError,
    FfnbError,
    FrozenUpdateError,
    NumericError,
    SingularMatrixError,
    StreamFormatError,
)
from .initializers import (
    InitAccumulators,
    coding_matrix,
    mono_task_init,
    multi_task_init,
)
from .linalg import SymEigen, check_matrix, frob_norm, solve_spd, sym_eigen
from .metrics import (
    AccuracyMatrix,
    advance,
    avg_incremental_accuracy,
    build_report,
    evaluate_checkpoint,
    evaluate_predictions,
    fresh_state,
    materialize_stream,
    network_param_count,
    param_count,
    pooled_task,
    run_experiment,
    run_sweep,
    sweep_configs,
    union_accuracy,
)
from .network import (
    FeatureLayer,
    FfnbNetwork,
    MomentAccumulator,
    PPolicy,
    ResidualBasis,
    TaskBand,
    accumulate_moments,
    expand_for_task,
    forward,
    forward_cached,
    project_gradient,
    residual_basis,
)
from .stream import (
    Sample,
    Standardizer,
    Task,
    TaskStream,
    load_stream,
    save_stream,
    synth_gaussian_stream,
)
from .training import (
    Accumulators,
    EpochTrace,
    TrainConfig,
    TrainResult,
    hinge_loss,
    lr_step,
    task_rng,
    train_task_ffnb,
    train_task_naive,
)

__version__ = "0.1.0"

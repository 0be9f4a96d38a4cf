"""mixquant: block Hadamard rotations, mass-balancing permutations, and
low-bit quantizers with verifiable outlier-suppression bounds."""

from .bounds import (
    BoundReport,
    Corollary3Report,
    DeltaStats,
    Prop4Result,
    RademacherDiagnostics,
    check_corollary3,
    check_prop1,
    check_prop2,
    check_prop4,
    delta_stats,
    figure5_statistic,
    prop4_bound,
    rademacher_diagnostics,
    zeta,
)
from .data import (
    ActivationSet,
    SyntheticSpec,
    block_view,
    fit_per_token,
    generate,
    load_activations,
    norms,
    save_activations,
)
from .errors import (
    BadMagicError,
    ConstructionError,
    DegenerateFitError,
    DimensionError,
    FormatError,
    MixquantError,
    NonFiniteError,
    NotRotationEquivariantError,
    TruncatedPayloadError,
    UndefinedDeltaError,
    UnsupportedDtypeError,
    VersionMismatchError,
)
from .graph import (
    FfnWeights,
    GraphConfig,
    PipelineReport,
    ffn_forward,
    load_ffn_weights,
    merge_permutation,
    merge_rotation,
    pipeline_mse,
    run_pipeline,
    save_ffn_weights,
    swish,
)
from .hadamard import (
    BlockRotation,
    DimensionFactorization,
    HadamardSpec,
    OpCount,
    OpCounter,
    block_rotation,
    build_hadamard,
    composite_spec,
    count_ops,
    dense_rotate,
    factorize,
    format_count,
    fwht,
    load_hadamard_file,
    rotate,
    rotate_block,
    rotate_nonpo2,
)
from .permutation import (
    MassObjective,
    Permutation,
    absmax_permutation,
    apply_permutation,
    evaluate_objective,
    identity_permutation,
    massdiff,
    optimal_oracle,
    permutation_matrix,
    random_permutation,
    zigzag_permutation,
)
from .quantizers import (
    FP4_VALUES,
    ErrorBoundReport,
    QuantizedTensor,
    QuantizerConfig,
    dequantize,
    fake_quantize,
    fp4_project,
    mse_scale_search,
    quantize,
    verify_error_bound,
)

__version__ = "0.1.0"

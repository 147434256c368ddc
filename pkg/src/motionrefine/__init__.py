"""Human motion prediction: attention-summarized history, iterative
frequency-space refinement with graph convolutions, kinematics-aware losses."""

from .attention import (
    AttentionParams,
    MotionSummary,
    encode,
    extend_history,
    init_attention_params,
    kernel_widths,
    summarize,
    summarize_history,
)
from .data import (
    SequenceDataset,
    SynthSpec,
    TrainingWindow,
    extract_windows,
    gen_synthetic,
    load_dataset,
    load_sequence,
    save_sequence,
)
from .errors import (
    BoundsError,
    ConfigurationError,
    DataError,
    DimensionError,
    FormatError,
    SkeletonError,
    StateError,
    TapeError,
)
from .kinematics import (
    KinematicChain,
    PoseSequence,
    Skeleton,
    cumulative_bone_length,
    default_humanoid_skeleton,
    load_skeleton,
    mpjpe_at_frames,
    mpjpe_per_frame,
    save_skeleton,
    synthetic_skeleton,
)
from .losses import (
    LossConfig,
    LossWeights,
    assemble_lambda,
    build_loss_weights,
    loss_st,
    loss_total,
    loss_velocity,
    spatial_factors,
    temporal_factors,
)
from .model import (
    ModelConfig,
    ModelOutput,
    ModelParams,
    count_parameters,
    init_model_params,
    model_basis,
    model_forward,
    named_parameters,
)
from .refinement import (
    GlmParams,
    GraphLayerParams,
    RefinementParams,
    glm_forward,
    graph_conv,
    graph_learning_block,
    init_refinement_params,
    pad_query,
    refine,
    split_channels,
)
from .tensor import Mode, RunningStats, Tensor, backward, batchnorm, conv1d, dropout, matmul, no_grad
from .trainer import (
    AdamState,
    OptimizerConfig,
    TrainSettings,
    adam_step,
    evaluate,
    frames_from_milliseconds,
    load_checkpoint,
    lr_schedule,
    predict_autoregressive,
    save_checkpoint,
    train,
)
from .transforms import DctBasis, dct, dct_basis, idct

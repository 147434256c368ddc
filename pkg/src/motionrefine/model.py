"""Model configuration, parameter container and the end-to-end forward pass."""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .attention import (
    AttentionParams,
    MotionSummary,
    init_attention_params,
    kernel_widths,
    summarize_history,
)
from .errors import ConfigurationError
from .refinement import (
    RefineResult,
    RefinementParams,
    init_refinement_params,
    pad_query,
    refine,
)
from .tensor import Mode, RunningStats, Tensor, as_tensor
from .transforms import DctBasis, dct_basis

ATTENTION_MODES = ("attention", "copy")


@dataclass
class ModelConfig:
    joints: int
    history_len: int = 50
    query_len: int = 10
    future_len: int = 10
    stages: int = 3
    glb_pairs: int = 2        # blocks per module: 1 entry + 2*glb_pairs
    latent_dim: int = 256
    dropout: float = 0.3
    attention_mode: str = "attention"
    attention_bias: bool = True
    use_summary: bool = True
    supervise_stages: bool = False
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.joints < 1:
            raise ConfigurationError("joints must be positive")
        if self.query_len < 1 or self.future_len < 1:
            raise ConfigurationError("query_len and future_len must be >= 1")
        if self.history_len < self.query_len + self.future_len:
            raise ConfigurationError(
                f"history_len {self.history_len} shorter than one "
                f"query+future window {self.query_len + self.future_len}")
        if self.stages < 1:
            raise ConfigurationError("stages must be >= 1")
        if self.glb_pairs < 0:
            raise ConfigurationError("glb_pairs must be >= 0")
        if self.attention_mode not in ATTENTION_MODES:
            raise ConfigurationError(
                f"attention_mode must be one of {ATTENTION_MODES}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must be in [0, 1)")

    @property
    def pose_dim(self) -> int:
        return self.joints * 3

    @property
    def window(self) -> int:
        return self.query_len + self.future_len

    @property
    def block_count(self) -> int:
        return 1 + 2 * self.glb_pairs


@dataclass
class ModelParams:
    attention: AttentionParams | None
    refinement: RefinementParams


def init_model_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    attention = None
    if config.attention_mode == "attention":
        attention = init_attention_params(
            config.pose_dim, config.query_len, config.latent_dim, rng,
            bias=config.attention_bias)
    refinement = init_refinement_params(
        config.pose_dim, config.window, config.stages, config.glb_pairs,
        config.latent_dim, rng, use_summary=config.use_summary,
        dropout=config.dropout, bn_eps=config.bn_eps, bn_momentum=config.bn_momentum)
    return ModelParams(attention, refinement)


def named_parameters(params: ModelParams) -> dict[str, Tensor]:
    """Stable name -> learnable tensor map (insertion order is update order)."""
    table: dict[str, Tensor] = {}
    if params.attention is not None:
        for net_name, net in (("query", params.attention.query_net),
                              ("key", params.attention.key_net)):
            for layer_name, layer in (("conv1", net.first), ("conv2", net.second)):
                table[f"attention.{net_name}.{layer_name}.kernels"] = layer.kernels
                if layer.bias is not None:
                    table[f"attention.{net_name}.{layer_name}.bias"] = layer.bias
    for s, glm in enumerate(params.refinement.stages):
        for b, block in enumerate(glm.blocks):
            prefix = f"refine.stage{s}.block{b}"
            table[f"{prefix}.adjacency"] = block.adjacency
            table[f"{prefix}.weights"] = block.weights
            table[f"{prefix}.gamma"] = block.gamma
            table[f"{prefix}.beta"] = block.beta
        table[f"refine.stage{s}.output.adjacency"] = glm.output_gc.adjacency
        table[f"refine.stage{s}.output.weights"] = glm.output_gc.weights
    return table


def named_running_stats(params: ModelParams) -> dict[str, RunningStats]:
    table: dict[str, RunningStats] = {}
    for s, glm in enumerate(params.refinement.stages):
        for b, block in enumerate(glm.blocks):
            table[f"refine.stage{s}.block{b}"] = block.stats
    return table


def count_parameters(params: ModelParams) -> int:
    return sum(t.size for t in named_parameters(params).values())


@dataclass
class ModelOutput:
    prediction: Tensor
    stage_outputs: list[Tensor]
    refined_summaries: list[Tensor]
    summary: MotionSummary | None


def model_forward(params: ModelParams, histories, config: ModelConfig,
                  basis: DctBasis, mode: Mode) -> ModelOutput:
    """Summarize the history, then refine the padded query stage by stage.

    histories: (pose_dim, frames) or (batch, pose_dim, frames); any frame
    count >= query_len + future_len works, not just the training length.
    In copy mode the summary is simply the padded query.
    """
    histories = as_tensor(histories)
    if basis.size != config.window:
        raise ConfigurationError(
            f"basis size {basis.size} != query+future window {config.window}")
    query = histories[..., -config.query_len:]
    summary = None
    if config.attention_mode == "attention":
        summary = summarize_history(histories, params.attention,
                                    config.query_len, config.future_len)
        summary_values = summary.values
    else:
        summary_values = pad_query(query, config.future_len)
    result: RefineResult = refine(query, summary_values, params.refinement,
                                  basis, mode, use_summary=config.use_summary)
    return ModelOutput(result.prediction, result.stage_outputs,
                       result.refined_summaries, summary)


def model_basis(config: ModelConfig) -> DctBasis:
    return dct_basis(config.window)


def config_to_dict(config: ModelConfig) -> dict:
    return asdict(config)


def config_from_dict(payload: dict) -> ModelConfig:
    return ModelConfig(**payload)


def attention_widths(config: ModelConfig) -> tuple[int, int]:
    return kernel_widths(config.query_len)

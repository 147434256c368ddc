"""Multi-stage motion refinement with graph-convolution stacks.

Each stage converts the running summary and prediction into frequency
coefficients, runs a residual graph learning module over their channel
concatenation, and converts both halves back to pose space.  The graph
convolution is adjacency @ input @ weights with both factors learnable;
a block follows it with batch normalization, tanh and dropout, and each
module closes with a bare graph convolution restoring the coefficient
channel count.

The final convolution's weight matrix starts at zero, so a freshly
initialized model is exactly the repeat-last-pose baseline (only the
weight factor is zeroed; zeroing the adjacency too would kill both
gradients and freeze the layer permanently).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError
from .tensor import (
    Mode,
    RunningStats,
    Tensor,
    add,
    as_tensor,
    batchnorm,
    concat,
    dropout,
    matmul,
    tanh,
)
from .transforms import DctBasis, dct, idct
from .attention import MotionSummary


@dataclass
class GraphLayerParams:
    adjacency: Tensor              # (pose_dim, pose_dim)
    weights: Tensor                # (channels_in, channels_out)
    gamma: Tensor | None = None    # (channels_out,), None for the bare output conv
    beta: Tensor | None = None
    stats: RunningStats | None = None


@dataclass
class GlmParams:
    """One graph learning module: entry block, residual pairs, output conv."""

    blocks: list[GraphLayerParams]
    output_gc: GraphLayerParams
    dropout: float = 0.3

    @property
    def pair_count(self) -> int:
        return (len(self.blocks) - 1) // 2

    @property
    def in_channels(self) -> int:
        return self.blocks[0].weights.shape[0]


@dataclass
class RefinementParams:
    stages: list[GlmParams]


def pad_query(query, future_len: int) -> Tensor:
    """Append the last observed pose ``future_len`` times along the time axis."""
    query = as_tensor(query)
    if future_len < 0:
        raise ConfigurationError("future_len must be nonnegative")
    if future_len == 0:
        return query
    last = query[..., -1:]
    return concat([query] + [last] * future_len, axis=-1)


def graph_conv(g, layer: GraphLayerParams) -> Tensor:
    """adjacency @ g @ weights over (..., pose_dim, channels) inputs."""
    g = as_tensor(g)
    if g.shape[-1] != layer.weights.shape[0]:
        raise DimensionError(
            f"graph conv expects {layer.weights.shape[0]} channels, got {g.shape[-1]}")
    if g.shape[-2] != layer.adjacency.shape[0]:
        raise DimensionError(
            f"graph conv expects {layer.adjacency.shape[0]} joints-coords rows, "
            f"got {g.shape[-2]}")
    return matmul(matmul(layer.adjacency, g), layer.weights)


def graph_learning_block(g, layer: GraphLayerParams, mode: Mode,
                         dropout_rate: float = 0.3) -> Tensor:
    h = graph_conv(g, layer)
    h = batchnorm(h, layer.gamma, layer.beta, layer.stats, mode, channel_axis=-1)
    h = tanh(h)
    return dropout(h, dropout_rate, mode.rng, mode)


def glm_forward(g, params: GlmParams, mode: Mode) -> Tensor:
    """Entry block, residual block pairs, then the bare output conv."""
    g = as_tensor(g)
    if g.shape[-1] != params.in_channels:
        raise DimensionError(
            f"module expects {params.in_channels} channels, got {g.shape[-1]}")
    h = graph_learning_block(g, params.blocks[0], mode, params.dropout)
    for pair in range(params.pair_count):
        first = params.blocks[1 + 2 * pair]
        second = params.blocks[2 + 2 * pair]
        h = add(graph_learning_block(graph_learning_block(h, first, mode, params.dropout),
                                     second, mode, params.dropout), h)
    return graph_conv(h, params.output_gc)


def split_channels(g) -> tuple[Tensor, Tensor]:
    """Undo the [summary; prediction] channel concatenation."""
    g = as_tensor(g)
    channels = g.shape[-1]
    if channels % 2 != 0:
        raise DimensionError(f"cannot split odd channel count {channels}")
    half = channels // 2
    return g[..., :half], g[..., half:]


@dataclass
class RefineResult:
    prediction: Tensor              # (..., pose_dim, window)
    stage_outputs: list[Tensor]     # one refined prediction per stage
    refined_summaries: list[Tensor]


def refine(query, summary, params: RefinementParams, basis: DctBasis, mode: Mode,
           use_summary: bool = True) -> RefineResult:
    """Run every refinement stage and return the last prediction.

    query: (..., pose_dim, query_len); summary: MotionSummary or tensor of
    shape (..., pose_dim, window) where window == basis.size.  The summary
    refined by the last stage is computed but plays no further role.
    """
    query = as_tensor(query)
    values = summary.values if isinstance(summary, MotionSummary) else as_tensor(summary)
    window = basis.size
    if values.shape[-1] != window:
        raise ConfigurationError(
            f"summary window {values.shape[-1]} != basis size {window}")
    future_len = window - query.shape[-1]
    if future_len < 0:
        raise ConfigurationError(
            f"query length {query.shape[-1]} exceeds window {window}")
    if not params.stages:
        raise ConfigurationError("refinement needs at least one stage")
    expected = (2 if use_summary else 1) * window
    for glm in params.stages:
        if glm.in_channels != expected:
            raise ConfigurationError(
                f"stage expects {glm.in_channels} channels, "
                f"configuration needs {expected}")

    x = pad_query(query, future_len)
    s = values
    stage_outputs: list[Tensor] = []
    refined_summaries: list[Tensor] = []
    for glm in params.stages:
        x_freq = dct(x, basis)
        if use_summary:
            g = concat([dct(s, basis), x_freq], axis=-1)
        else:
            g = x_freq
        refined = add(glm_forward(g, glm, mode), g)
        if use_summary:
            s_freq, x_freq = split_channels(refined)
            s = idct(s_freq, basis)
            x = idct(x_freq, basis)
            refined_summaries.append(s)
        else:
            x = idct(refined, basis)
        stage_outputs.append(x)
    return RefineResult(x, stage_outputs, refined_summaries)


def _uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


def _init_layer(rng: np.random.Generator, pose_dim: int, channels_in: int,
                channels_out: int, bn_eps: float, bn_momentum: float,
                zero_weights: bool = False, with_norm: bool = True) -> GraphLayerParams:
    adjacency = Tensor(_uniform(rng, (pose_dim, pose_dim), pose_dim), requires_grad=True)
    if zero_weights:
        weights = Tensor(np.zeros((channels_in, channels_out)), requires_grad=True)
    else:
        weights = Tensor(_uniform(rng, (channels_in, channels_out), channels_in),
                         requires_grad=True)
    if not with_norm:
        return GraphLayerParams(adjacency, weights)
    return GraphLayerParams(
        adjacency, weights,
        gamma=Tensor(np.ones(channels_out), requires_grad=True),
        beta=Tensor(np.zeros(channels_out), requires_grad=True),
        stats=RunningStats(momentum=bn_momentum, eps=bn_eps))


def init_refinement_params(pose_dim: int, window: int, stages: int, pair_count: int,
                           latent_dim: int, rng: np.random.Generator,
                           use_summary: bool = True, dropout: float = 0.3,
                           bn_eps: float = 1e-5, bn_momentum: float = 0.1) -> RefinementParams:
    if stages < 1:
        raise ConfigurationError("need at least one refinement stage")
    if pair_count < 0:
        raise ConfigurationError("pair count must be nonnegative")
    channels = (2 if use_summary else 1) * window
    built = []
    for _ in range(stages):
        blocks = [_init_layer(rng, pose_dim, channels, latent_dim, bn_eps, bn_momentum)]
        for _ in range(2 * pair_count):
            blocks.append(_init_layer(rng, pose_dim, latent_dim, latent_dim,
                                      bn_eps, bn_momentum))
        output_gc = _init_layer(rng, pose_dim, latent_dim, channels, bn_eps, bn_momentum,
                                zero_weights=True, with_norm=False)
        built.append(GlmParams(blocks, output_gc, dropout))
    return RefinementParams(built)

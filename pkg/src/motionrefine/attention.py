"""Motion attention: summarize an arbitrary-length history into a fixed window.

The last ``query_len`` observed frames form the query; every dense
sub-window of the history forms a key (first ``query_len`` frames) and a
value (the full ``query_len + future_len`` frames, kept in pose space).
Two small rectified conv nets embed query and keys, raw scores are plain
dot products (nonnegative by construction) and the summary is the
score-normalized convex combination of the value windows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, SkeletonError
from .kinematics import PoseSequence
from .tensor import Tensor, as_tensor, conv1d, mul, relu, reshape, tensor_sum, transpose, sliding_windows


def sequence_to_channels(seq: PoseSequence) -> np.ndarray:
    """(frames, joints, 3) -> (joints*3, frames), channel p = joint*3 + axis."""
    t = seq.frames
    return seq.coords.reshape(t, -1).T.copy()


def channels_to_sequence(channels: np.ndarray, frame_rate: float) -> PoseSequence:
    channels = np.asarray(channels, dtype=np.float64)
    frames = channels.shape[-1]
    if channels.shape[0] % 3 != 0:
        raise DimensionError(f"channel count {channels.shape[0]} is not a multiple of 3")
    coords = channels.T.reshape(frames, channels.shape[0] // 3, 3)
    return PoseSequence(coords, frame_rate)


def kernel_widths(query_len: int) -> tuple[int, int]:
    """Two conv widths whose combined receptive field equals the query length."""
    if query_len < 1:
        raise ConfigurationError(f"query_len must be positive, got {query_len}")
    first = query_len // 2 + 1
    return first, query_len - first + 1


@dataclass
class ConvLayer:
    kernels: Tensor            # (channels_out, channels_in, width)
    bias: Tensor | None

    @property
    def width(self) -> int:
        return self.kernels.shape[2]


@dataclass
class WindowEncoder:
    """Two rectified conv layers collapsing one query-length window to a code."""

    first: ConvLayer
    second: ConvLayer

    @property
    def receptive_field(self) -> int:
        return self.first.width + self.second.width - 1

    @property
    def latent_dim(self) -> int:
        return self.second.kernels.shape[0]


@dataclass
class AttentionParams:
    query_net: WindowEncoder
    key_net: WindowEncoder


@dataclass
class MotionSummary:
    values: Tensor             # (..., joints*3, query_len + future_len)
    attention_weights: Tensor  # (..., window_count), simplex rows
    used_fallback: bool = False


def _init_conv(rng: np.random.Generator, channels_out: int, channels_in: int,
               width: int, bias: bool) -> ConvLayer:
    bound = 1.0 / np.sqrt(channels_in * width)
    kernels = Tensor(rng.uniform(-bound, bound, (channels_out, channels_in, width)),
                     requires_grad=True)
    b = Tensor(np.zeros(channels_out), requires_grad=True) if bias else None
    return ConvLayer(kernels, b)


def init_attention_params(pose_dim: int, query_len: int, latent_dim: int,
                          rng: np.random.Generator, bias: bool = True,
                          widths: tuple[int, int] | None = None) -> AttentionParams:
    w1, w2 = widths if widths is not None else kernel_widths(query_len)
    if w1 + w2 - 1 != query_len:
        raise ConfigurationError(
            f"kernel widths {w1}+{w2}-1 != query length {query_len}")
    nets = []
    for _ in range(2):
        nets.append(WindowEncoder(
            _init_conv(rng, latent_dim, pose_dim, w1, bias),
            _init_conv(rng, latent_dim, latent_dim, w2, bias)))
    return AttentionParams(query_net=nets[0], key_net=nets[1])


def encode(net: WindowEncoder, window) -> Tensor:
    """(..., pose_dim, query_len) window -> (..., latent_dim) code."""
    window = as_tensor(window)
    if window.shape[-1] != net.receptive_field:
        raise DimensionError(
            f"window has {window.shape[-1]} frames, encoder expects {net.receptive_field}")
    hidden = relu(conv1d(window, net.first.kernels, net.first.bias))
    out = relu(conv1d(hidden, net.second.kernels, net.second.bias))
    # both conv layers are valid-only, so the temporal axis is length 1 here
    return reshape(out, out.shape[:-1])


def summarize_history(history, params: AttentionParams, query_len: int,
                      future_len: int) -> MotionSummary:
    """Attention core over channel-major history tensors.

    history: (pose_dim, frames) or (batch, pose_dim, frames) with
    frames >= query_len + future_len.
    """
    history = as_tensor(history)
    single = history.ndim == 2
    if single:
        history = reshape(history, (1,) + history.shape)
    if history.ndim != 3:
        raise DimensionError(f"history must be 2-D or 3-D, got {history.shape}")
    batch, pose_dim, frames = history.shape
    window = query_len + future_len
    count = frames - window + 1
    if count < 1:
        raise DimensionError(
            f"history too short: {frames} frames < query+future window {window}")

    query = history[:, :, frames - query_len:]
    query_code = encode(params.query_net, query)                      # (B, d)
    latent = params.key_net.latent_dim

    key_span = history[:, :, :count + query_len - 1]
    key_windows = sliding_windows(key_span, query_len)                # (B, P, count, L)
    key_windows = transpose(key_windows, (0, 2, 1, 3))
    key_windows = reshape(key_windows, (batch * count, pose_dim, query_len))
    key_codes = reshape(encode(params.key_net, key_windows), (batch, count, latent))

    scores = tensor_sum(mul(reshape(query_code, (batch, 1, latent)), key_codes), axis=2)
    denom = tensor_sum(scores, axis=1, keepdims=True)                 # (B, 1)
    zero_rows = denom.data == 0.0
    if zero_rows.any():
        # rectifiers can zero every score; fall back to uniform aggregation
        safe = scores / Tensor(denom.data + zero_rows)
        weights = safe + Tensor(zero_rows / count)
        used_fallback = True
    else:
        weights = scores / denom
        used_fallback = False

    value_windows = sliding_windows(history, window)                  # (B, P, count, L+F)
    spread = reshape(weights, (batch, 1, count, 1))
    summary = tensor_sum(mul(spread, value_windows), axis=2)          # (B, P, L+F)

    if single:
        summary = reshape(summary, summary.shape[1:])
        weights = reshape(weights, (count,))
    return MotionSummary(summary, weights, used_fallback)


def summarize(history: PoseSequence, params: AttentionParams, query_len: int,
              future_len: int) -> MotionSummary:
    """Summarize a pose sequence into a (pose_dim, query_len+future_len) window."""
    return summarize_history(sequence_to_channels(history), params, query_len, future_len)


def extend_history(history: PoseSequence, new_prediction: PoseSequence) -> PoseSequence:
    if history.joints != new_prediction.joints:
        raise SkeletonError(
            f"joint counts differ: {history.joints} vs {new_prediction.joints}")
    if history.frame_rate != new_prediction.frame_rate:
        raise SkeletonError(
            f"frame rates differ: {history.frame_rate} vs {new_prediction.frame_rate}")
    coords = np.concatenate([history.coords, new_prediction.coords], axis=0)
    return PoseSequence(coords, history.frame_rate)

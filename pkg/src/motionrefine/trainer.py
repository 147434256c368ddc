"""Optimization loop, evaluation protocol, autoregressive driver, checkpoints.

Training is deterministic under a fixed seed: one generator drives
parameter init, epoch shuffling and dropout in that order, and its state
travels inside checkpoints, so save/load mid-run reproduces the
uninterrupted run bit for bit.

Checkpoint format "MCKPT1": magic ``MCKPT001``, u32 header length, JSON
header (configs, epoch, optimizer step, rng state, embedded skeleton,
array index, payload hash), then all arrays as little-endian float64 in
index order.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .attention import channels_to_sequence, extend_history, sequence_to_channels
from .data import SequenceDataset, TrainingWindow, extract_windows
from .errors import ConfigurationError, DataError, DimensionError, FormatError
from .kinematics import PoseSequence, Skeleton, skeleton_from_text, skeleton_to_text
from .losses import LossConfig, build_loss_weights, loss_total
from .model import (
    ModelConfig,
    ModelParams,
    config_from_dict,
    config_to_dict,
    init_model_params,
    model_forward,
    named_parameters,
    named_running_stats,
)
from .tensor import Mode, Tensor, backward, no_grad, transpose, zero_grads
from .transforms import dct_basis

CKPT_MAGIC = b"MCKPT001"


@dataclass
class OptimizerConfig:
    lr: float = 0.005
    lr_decay: float = 0.97
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class AdamState:
    """First/second moment accumulators mirroring the parameter shapes."""

    def __init__(self, params: dict[str, Tensor]):
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.step = 0


def lr_schedule(epoch: int, initial_lr: float, decay: float) -> float:
    if epoch < 0:
        raise ConfigurationError("epoch must be nonnegative")
    return initial_lr * decay ** epoch


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One in-place update; a missing gradient counts as zero."""
    state.step += 1
    t = state.step
    correct1 = 1.0 - beta1 ** t
    correct2 = 1.0 - beta2 ** t
    for name, p in params.items():
        grad = p.grad
        if grad is None:
            grad = np.zeros_like(p.data)
        elif grad.shape != p.data.shape:
            raise DimensionError(
                f"gradient shape {grad.shape} does not match parameter "
                f"{name} of shape {p.data.shape}")
        m = state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * grad
        v = state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * grad * grad
        p.data = p.data - lr * (m / correct1) / (np.sqrt(v / correct2) + eps)


@dataclass
class TrainSettings:
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    val_fraction: float = 0.2
    window_stride: int = 1
    stop_train_mpjpe: float | None = None
    checkpoint_dir: str | None = None
    checkpoint_every: int = 0  # 0 saves only the final state (when dir is set)
    log_fn: object = None

    def replay_fields(self) -> dict:
        """The settings that must match for a resumed run to replay exactly."""
        return {"batch_size": self.batch_size, "seed": self.seed,
                "val_fraction": self.val_fraction, "window_stride": self.window_stride}


@dataclass
class TrainResult:
    params: ModelParams
    adam: AdamState
    rng: np.random.Generator
    metrics: list[dict]
    epochs_run: int
    model_config: ModelConfig
    loss_config: LossConfig
    optimizer_config: OptimizerConfig
    settings: TrainSettings
    skeleton: Skeleton


def _window_batches(windows: list[TrainingWindow], order, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield [windows[i] for i in order[start:start + batch_size]]


def _history_channels(histories: np.ndarray) -> np.ndarray:
    batch, frames = histories.shape[0], histories.shape[1]
    return histories.reshape(batch, frames, -1).transpose(0, 2, 1)


def _prediction_to_poses(prediction: Tensor, joints: int) -> Tensor:
    batch, _, frames = prediction.shape
    return transpose(prediction, (0, 2, 1)).reshape(batch, frames, joints, 3)


def _forward_batch(params, config, basis, batch, mode):
    histories = np.stack([w.history for w in batch])
    targets = np.stack([w.target for w in batch])
    truth = np.concatenate([histories[:, -config.query_len:], targets], axis=1)
    out = model_forward(params, Tensor(_history_channels(histories)), config, basis, mode)
    return out, truth


def _stage_future_errors(stage_pred: np.ndarray, targets: np.ndarray,
                         config: ModelConfig) -> np.ndarray:
    """Per-window per-future-frame MPJPE from a (B, P, window) stage output."""
    batch = stage_pred.shape[0]
    poses = stage_pred.transpose(0, 2, 1).reshape(batch, config.window, config.joints, 3)
    future = poses[:, -config.future_len:]
    return np.linalg.norm(future - targets, axis=-1).mean(axis=-1)  # (B, F)


def dataset_mpjpe(windows: list[TrainingWindow], params: ModelParams,
                  config: ModelConfig, basis, batch_size: int = 64) -> float:
    """Eval-mode MPJPE over all future frames, averaged over windows."""
    if not windows:
        return float("nan")
    total, count = 0.0, 0
    with no_grad():
        for start in range(0, len(windows), batch_size):
            batch = windows[start:start + batch_size]
            out, _ = _forward_batch(params, config, basis, batch, Mode.eval())
            targets = np.stack([w.target for w in batch])
            errors = _stage_future_errors(out.prediction.data, targets, config)
            total += errors.sum()
            count += errors.size
    return total / count


def train(dataset: SequenceDataset, model_config: ModelConfig, loss_config: LossConfig,
          optimizer_config: OptimizerConfig | None = None,
          settings: TrainSettings | None = None, resume=None) -> TrainResult:
    """Shuffled mini-batch training with the per-epoch decayed Adam schedule."""
    opt = optimizer_config or OptimizerConfig()
    settings = settings or TrainSettings()
    skeleton = dataset.skeleton
    if model_config.joints != skeleton.joint_count:
        raise ConfigurationError(
            f"model expects {model_config.joints} joints, "
            f"dataset skeleton has {skeleton.joint_count}")

    n_val = int(len(dataset.sequences) * settings.val_fraction)
    n_train = len(dataset.sequences) - n_val
    train_set = SequenceDataset(skeleton, dataset.sequences[:n_train])
    val_set = (SequenceDataset(skeleton, dataset.sequences[n_train:])
               if n_val else None)
    train_windows = extract_windows(train_set, model_config.history_len,
                                    model_config.future_len, settings.window_stride)
    if not train_windows:
        raise ConfigurationError("dataset yields no training windows")
    val_windows = (extract_windows(val_set, model_config.history_len,
                                   model_config.future_len, settings.window_stride)
                   if val_set else [])

    basis = dct_basis(model_config.window)
    weights = build_loss_weights(skeleton, model_config.query_len,
                                 model_config.future_len, loss_config)

    if resume is not None:
        _check_resume_compat(resume, model_config, loss_config, opt, settings)
        params, adam, rng = resume.params, resume.adam, resume.rng
        start_epoch = resume.epoch
    else:
        rng = np.random.default_rng(settings.seed)
        params = init_model_params(model_config, rng)
        adam = AdamState(named_parameters(params))
        start_epoch = 0

    named = named_parameters(params)
    metrics: list[dict] = []
    epochs_run = start_epoch

    def checkpoint_to(path, epoch):
        save_checkpoint(path, params, adam, rng, epoch, model_config, loss_config,
                        opt, settings.replay_fields(), skeleton)

    for epoch in range(start_epoch, settings.epochs):
        lr = lr_schedule(epoch, opt.lr, opt.lr_decay)
        order = rng.permutation(len(train_windows))
        batch_losses = []
        for batch_index, batch in enumerate(_window_batches(train_windows, order,
                                                            settings.batch_size)):
            out, truth = _forward_batch(params, model_config, basis, batch,
                                        Mode.train(rng))
            truth_t = Tensor(truth)
            supervised = out.stage_outputs if model_config.supervise_stages \
                else [out.prediction]
            loss = None
            for stage_pred in supervised:
                poses = _prediction_to_poses(stage_pred, model_config.joints)
                term = loss_total(poses, truth_t, weights, loss_config,
                                  model_config.future_len)
                loss = term if loss is None else loss + term
            if len(supervised) > 1:
                loss = loss * (1.0 / len(supervised))
            if not np.isfinite(loss.data):
                sources = [w.source for w in batch]
                raise DataError(
                    f"non-finite loss at epoch {epoch}, batch {batch_index} "
                    f"(windows {sources})")
            backward(loss)
            adam_step(named, adam, lr, opt.beta1, opt.beta2, opt.eps)
            zero_grads(named.values())
            batch_losses.append(float(loss.data))

        train_mpjpe = dataset_mpjpe(train_windows, params, model_config, basis)
        record = {"epoch": epoch, "lr": lr,
                  "train_loss": float(np.mean(batch_losses)),
                  "train_mpjpe": train_mpjpe}
        if val_windows:
            record["val_mpjpe"] = dataset_mpjpe(val_windows, params, model_config, basis)
        metrics.append(record)
        if settings.log_fn is not None:
            settings.log_fn(record)
        epochs_run = epoch + 1

        if settings.checkpoint_dir and settings.checkpoint_every and \
                epochs_run % settings.checkpoint_every == 0:
            checkpoint_to(Path(settings.checkpoint_dir) /
                          f"checkpoint_{epochs_run:04d}.mckpt", epochs_run)
        if settings.stop_train_mpjpe is not None and \
                train_mpjpe < settings.stop_train_mpjpe:
            break

    if settings.checkpoint_dir:
        Path(settings.checkpoint_dir).mkdir(parents=True, exist_ok=True)
        checkpoint_to(Path(settings.checkpoint_dir) / "checkpoint.mckpt", epochs_run)
    return TrainResult(params, adam, rng, metrics, epochs_run, model_config,
                       loss_config, opt, settings, skeleton)


def predict_autoregressive(history: PoseSequence, params: ModelParams,
                           config: ModelConfig, horizon: int) -> PoseSequence:
    """Repeatedly refine and append the predicted future until ``horizon`` frames.

    Eval mode throughout: batch-norm running statistics stay frozen, so
    repeated calls are bit-identical.
    """
    if horizon < 0:
        raise ConfigurationError("horizon must be nonnegative")
    if horizon == 0:
        return PoseSequence(np.zeros((0, history.joints, 3)), history.frame_rate)
    if history.frames < config.window:
        raise DimensionError(
            f"history of {history.frames} frames is shorter than one "
            f"query+future window {config.window}")
    basis = dct_basis(config.window)
    work = history
    passes = math.ceil(horizon / config.future_len)
    with no_grad():
        for _ in range(passes):
            channels = sequence_to_channels(work)
            out = model_forward(params, Tensor(channels), config, basis, Mode.eval())
            future = out.prediction.data[:, -config.future_len:]
            work = extend_history(work, channels_to_sequence(future, work.frame_rate))
    coords = work.coords[history.frames:history.frames + horizon].copy()
    return PoseSequence(coords, history.frame_rate)


def frames_from_milliseconds(frames_ms, frame_rate: float, future_len: int) -> list[int]:
    """Map millisecond marks to 1-based future frame indices, exactly."""
    indices = []
    for ms in frames_ms:
        exact = ms * frame_rate / 1000.0
        index = round(exact)
        if abs(exact - index) > 1e-9:
            raise ConfigurationError(
                f"{ms} ms is not an integral frame at {frame_rate} fps")
        if not 1 <= index <= future_len:
            raise ConfigurationError(
                f"{ms} ms maps to future frame {index}, outside [1, {future_len}]")
        indices.append(int(index))
    return indices


def evaluate(dataset: SequenceDataset, params: ModelParams, config: ModelConfig,
             frames_ms, stride: int = 1, per_stage: bool = False,
             loss_config: LossConfig | None = None, batch_size: int = 64) -> dict:
    """Per-frame MPJPE table over all evaluation windows, optionally per action.

    With ``per_stage`` the table gains one row per refinement stage plus the
    repeat-last-pose baseline as stage 0.  With a loss config the record also
    carries the mean training objective over the windows.
    """
    rates = {seq.frame_rate for seq in dataset.sequences}
    if len(rates) != 1:
        raise ConfigurationError(f"sequences disagree on frame rate: {sorted(rates)}")
    frame_rate = rates.pop()
    indices = frames_from_milliseconds(frames_ms, frame_rate, config.future_len)
    windows = extract_windows(dataset, config.history_len, config.future_len, stride)
    if not windows:
        raise ConfigurationError("dataset yields no evaluation windows")
    basis = dct_basis(config.window)
    weights = (build_loss_weights(dataset.skeleton, config.query_len,
                                  config.future_len, loss_config)
               if loss_config is not None else None)

    per_frame_errors = []          # (window, future frame)
    stage_errors = [[] for _ in range(config.stages + 1)] if per_stage else None
    losses = []
    with no_grad():
        for start in range(0, len(windows), batch_size):
            batch = windows[start:start + batch_size]
            out, truth = _forward_batch(params, config, basis, batch, Mode.eval())
            targets = np.stack([w.target for w in batch])
            per_frame_errors.append(
                _stage_future_errors(out.prediction.data, targets, config))
            if per_stage:
                histories = np.stack([w.history for w in batch])
                baseline = np.repeat(histories[:, -1:], config.future_len, axis=1)
                stage_errors[0].append(
                    np.linalg.norm(baseline - targets, axis=-1).mean(axis=-1))
                for n, stage_pred in enumerate(out.stage_outputs, start=1):
                    stage_errors[n].append(
                        _stage_future_errors(stage_pred.data, targets, config))
            if loss_config is not None:
                poses = _prediction_to_poses(out.prediction, config.joints)
                losses.append(float(loss_total(poses, Tensor(truth), weights,
                                               loss_config, config.future_len).data))

    errors = np.concatenate(per_frame_errors, axis=0)  # (windows, future_len)
    record = {
        "frames_ms": list(frames_ms),
        "frame_indices": indices,
        "window_count": int(errors.shape[0]),
        "mpjpe": [float(errors[:, i - 1].mean()) for i in indices],
    }
    if dataset.labels is not None:
        per_action = {}
        window_labels = [dataset.labels[w.source[0]] for w in windows]
        for label in sorted(set(window_labels)):
            mask = np.array([wl == label for wl in window_labels])
            per_action[label] = {
                "count": int(mask.sum()),
                "mpjpe": [float(errors[mask, i - 1].mean()) for i in indices],
            }
        record["per_action"] = per_action
    if per_stage:
        stacked = [np.concatenate(rows, axis=0) for rows in stage_errors]
        record["stage_mpjpe"] = [
            [float(stage[:, i - 1].mean()) for i in indices] for stage in stacked]
        record["stage_overall"] = [float(stage.mean()) for stage in stacked]
    if loss_config is not None:
        record["mean_loss"] = float(np.mean(losses))
    return record


def stage_mean_mpjpe(windows: list[TrainingWindow], params: ModelParams,
                     config: ModelConfig, batch_size: int = 64) -> list[float]:
    """Dataset-mean future MPJPE of every stage output, first stage first."""
    basis = dct_basis(config.window)
    sums = np.zeros(config.stages)
    count = 0
    with no_grad():
        for start in range(0, len(windows), batch_size):
            batch = windows[start:start + batch_size]
            out, _ = _forward_batch(params, config, basis, batch, Mode.eval())
            targets = np.stack([w.target for w in batch])
            for n, stage_pred in enumerate(out.stage_outputs):
                errors = _stage_future_errors(stage_pred.data, targets, config)
                sums[n] += errors.sum()
            count += targets.shape[0] * config.future_len
    return [float(s / count) for s in sums]


# -- checkpoint container ---------------------------------------------------

@dataclass
class Checkpoint:
    params: ModelParams
    adam: AdamState
    rng: np.random.Generator
    epoch: int
    model_config: ModelConfig
    loss_config: LossConfig
    optimizer_config: OptimizerConfig
    replay_settings: dict
    skeleton: Skeleton
    config_hash: str


def _config_hash(model_config, loss_config, optimizer_config) -> str:
    canon = json.dumps({"model": config_to_dict(model_config),
                        "loss": asdict(loss_config),
                        "optimizer": asdict(optimizer_config)}, sort_keys=True)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _state_arrays(params: ModelParams, adam: AdamState) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    named = named_parameters(params)
    for name, tensor in named.items():
        arrays[f"param.{name}"] = tensor.data
    for name, stats in named_running_stats(params).items():
        if stats.initialized:
            arrays[f"stats.{name}.mean"] = stats.mean
            arrays[f"stats.{name}.var"] = stats.var
    for name in named:
        arrays[f"adam.m.{name}"] = adam.m[name]
        arrays[f"adam.v.{name}"] = adam.v[name]
    return arrays


def save_checkpoint(path, params: ModelParams, adam: AdamState,
                    rng: np.random.Generator, epoch: int, model_config: ModelConfig,
                    loss_config: LossConfig, optimizer_config: OptimizerConfig,
                    replay_settings: dict, skeleton: Skeleton):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = _state_arrays(params, adam)
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                       for a in arrays.values())
    header = {
        "version": 1,
        "epoch": epoch,
        "adam_step": adam.step,
        "rng_state": rng.bit_generator.state,
        "model_config": config_to_dict(model_config),
        "loss_config": asdict(loss_config),
        "optimizer_config": asdict(optimizer_config),
        "replay_settings": replay_settings,
        "skeleton": skeleton_to_text(skeleton),
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays.items()],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "config_hash": _config_hash(model_config, loss_config, optimizer_config),
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(CKPT_MAGIC) + 4 or raw[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise FormatError(f"{path}: not an MCKPT1 checkpoint")
    (header_len,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + header_len:
        raise FormatError(f"{path}: truncated header")
    header = json.loads(raw[12:12 + header_len].decode("utf-8"))
    payload = raw[12 + header_len:]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise FormatError(f"{path}: payload hash mismatch, file is corrupt")

    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        chunk = payload[offset:offset + 8 * count]
        if len(chunk) != 8 * count:
            raise FormatError(f"{path}: truncated payload at {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += 8 * count
    if offset != len(payload):
        raise FormatError(f"{path}: {len(payload) - offset} trailing payload bytes")

    model_config = config_from_dict(header["model_config"])
    loss_config = LossConfig(**header["loss_config"])
    optimizer_config = OptimizerConfig(**header["optimizer_config"])
    skeleton = skeleton_from_text(header["skeleton"], source=str(path))

    # rebuild the parameter structure from the config, then load values by name
    params = init_model_params(model_config, np.random.default_rng(0))
    named = named_parameters(params)
    adam = AdamState(named)
    for name, tensor in named.items():
        key = f"param.{name}"
        if key not in arrays:
            raise FormatError(f"{path}: missing array {key}")
        if arrays[key].shape != tensor.data.shape:
            raise FormatError(f"{path}: array {key} has shape {arrays[key].shape}, "
                              f"expected {tensor.data.shape}")
        tensor.data = arrays[key]
        adam.m[name] = arrays[f"adam.m.{name}"]
        adam.v[name] = arrays[f"adam.v.{name}"]
    for name, stats in named_running_stats(params).items():
        mean_key = f"stats.{name}.mean"
        if mean_key in arrays:
            stats.mean = arrays[mean_key]
            stats.var = arrays[f"stats.{name}.var"]
    adam.step = header["adam_step"]
    rng = np.random.default_rng(0)
    rng.bit_generator.state = header["rng_state"]
    return Checkpoint(params, adam, rng, header["epoch"], model_config, loss_config,
                      optimizer_config, header["replay_settings"], skeleton,
                      header["config_hash"])


def _check_resume_compat(resume: Checkpoint, model_config, loss_config,
                         optimizer_config, settings: TrainSettings):
    if _config_hash(model_config, loss_config, optimizer_config) != resume.config_hash:
        raise ConfigurationError(
            "resume checkpoint was trained under a different configuration")
    if settings.replay_fields() != resume.replay_settings:
        raise ConfigurationError(
            f"resume settings {settings.replay_fields()} differ from "
            f"checkpoint settings {resume.replay_settings}")

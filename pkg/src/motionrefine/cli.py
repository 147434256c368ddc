"""Command-line interface: train, predict, eval, gen-synth.

Run configuration is a flat JSON document.  Resolution order is
package defaults, then the --config file, then --set KEY=VALUE
overrides, then dedicated flags; unknown keys are rejected.  The
resolved configuration is echoed into every output directory and the
per-epoch metrics log is line-delimited JSON.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .data import (
    SYNTH_KINDS,
    SynthSpec,
    gen_synthetic,
    load_dataset,
    load_sequence,
    save_sequence,
)
from .errors import (
    ConfigurationError,
    DataError,
    DimensionError,
    FormatError,
    SkeletonError,
    StateError,
    TapeError,
)
from .kinematics import save_skeleton, synthetic_skeleton
from .losses import LossConfig
from .model import ModelConfig, count_parameters, init_model_params
from .trainer import (
    OptimizerConfig,
    TrainSettings,
    evaluate,
    load_checkpoint,
    predict_autoregressive,
    train,
)

CONFIG_DEFAULTS: dict[str, object] = {
    "data": "",
    # architecture
    "history_len": 50, "query_len": 10, "future_len": 10,
    "stages": 3, "glb_pairs": 2, "latent_dim": 256, "dropout": 0.3,
    "attention_mode": "attention", "attention_bias": True,
    "use_summary": True, "supervise_stages": False,
    "bn_eps": 1e-5, "bn_momentum": 0.1,
    # loss
    "use_st": True, "use_st_weights": True, "use_velocity": True,
    "reconstruct_query": True, "spatial_floor": 0.1, "temporal_form": "unit_final",
    # optimizer and loop
    "lr": 0.005, "lr_decay": 0.97, "adam_beta1": 0.9, "adam_beta2": 0.999,
    "adam_eps": 1e-8, "epochs": 200, "batch_size": 32, "seed": 0,
    "val_fraction": 0.2, "window_stride": 1, "checkpoint_every": 0,
}

ABLATION_KEYS = ("use_st", "use_st_weights", "use_velocity", "reconstruct_query",
                 "temporal_form", "spatial_floor", "attention_mode", "stages")


def _coerce(key: str, value, default) -> object:
    if isinstance(value, str):
        if isinstance(default, bool):
            lowered = value.strip().lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ConfigurationError(f"{key}: expected a boolean, got {value!r}")
        if isinstance(default, int) and not isinstance(default, bool):
            return int(value)
        if isinstance(default, float):
            return float(value)
        return value
    if isinstance(default, bool) and not isinstance(value, bool):
        raise ConfigurationError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(default, float) and isinstance(value, int):
        return float(value)
    return value


def resolve_config(config_path: str | None, overrides: list[str] | None,
                   flags: dict | None = None) -> dict:
    resolved = dict(CONFIG_DEFAULTS)

    def apply(key, value, origin):
        if key not in resolved:
            raise ConfigurationError(f"unknown configuration key {key!r} ({origin})")
        resolved[key] = _coerce(key, value, CONFIG_DEFAULTS[key])

    if config_path:
        try:
            payload = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as bad:
            raise ConfigurationError(f"{config_path}: invalid JSON ({bad})") from None
        if not isinstance(payload, dict):
            raise ConfigurationError(f"{config_path}: expected a JSON object")
        for key, value in payload.items():
            apply(key, value, config_path)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        apply(key.strip(), value.strip(), "--set")
    for key, value in (flags or {}).items():
        if value is not None:
            apply(key, value, "flag")
    return resolved


def model_config_from(resolved: dict, joints: int) -> ModelConfig:
    return ModelConfig(
        joints=joints,
        history_len=resolved["history_len"], query_len=resolved["query_len"],
        future_len=resolved["future_len"], stages=resolved["stages"],
        glb_pairs=resolved["glb_pairs"], latent_dim=resolved["latent_dim"],
        dropout=resolved["dropout"], attention_mode=resolved["attention_mode"],
        attention_bias=resolved["attention_bias"], use_summary=resolved["use_summary"],
        supervise_stages=resolved["supervise_stages"], bn_eps=resolved["bn_eps"],
        bn_momentum=resolved["bn_momentum"])


def loss_config_from(resolved: dict) -> LossConfig:
    return LossConfig(
        use_st=resolved["use_st"], use_st_weights=resolved["use_st_weights"],
        use_velocity=resolved["use_velocity"],
        reconstruct_query=resolved["reconstruct_query"],
        spatial_floor=resolved["spatial_floor"],
        temporal_form=resolved["temporal_form"])


def optimizer_config_from(resolved: dict) -> OptimizerConfig:
    return OptimizerConfig(
        lr=resolved["lr"], lr_decay=resolved["lr_decay"],
        beta1=resolved["adam_beta1"], beta2=resolved["adam_beta2"],
        eps=resolved["adam_eps"])


def _echo_config(resolved: dict, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_train(args) -> int:
    resolved = resolve_config(args.config, args.set,
                              {"data": args.data, "seed": args.seed,
                               "epochs": args.epochs})
    if not resolved["data"]:
        raise ConfigurationError("missing required field: data (dataset directory)")
    dataset = load_dataset(resolved["data"])
    model_config = model_config_from(resolved, dataset.skeleton.joint_count)
    loss_config = loss_config_from(resolved)

    if args.dry_run:
        params = init_model_params(model_config, np.random.default_rng(resolved["seed"]))
        print(json.dumps(resolved, indent=2, sort_keys=True))
        print(f"parameter count: {count_parameters(params)}")
        return 0

    if not args.out:
        raise ConfigurationError("missing required field: out (output directory)")
    out_dir = Path(args.out)
    _echo_config(resolved, out_dir)
    metrics_path = out_dir / "metrics.jsonl"
    with open(metrics_path, "w", encoding="utf-8") as log:
        def log_record(record):
            log.write(json.dumps(record) + "\n")
            log.flush()
        settings = TrainSettings(
            epochs=resolved["epochs"], batch_size=resolved["batch_size"],
            seed=resolved["seed"], val_fraction=resolved["val_fraction"],
            window_stride=resolved["window_stride"],
            checkpoint_dir=str(out_dir), checkpoint_every=resolved["checkpoint_every"],
            log_fn=log_record)
        result = train(dataset, model_config, loss_config,
                       optimizer_config_from(resolved), settings)
    last = result.metrics[-1] if result.metrics else {}
    print(f"trained {result.epochs_run} epochs; "
          f"final train MPJPE {last.get('train_mpjpe', float('nan')):.4f} "
          f"({dataset.skeleton.units})")
    print(f"checkpoint: {out_dir / 'checkpoint.mckpt'}")
    return 0


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    seq_name, history = load_sequence(args.input)
    if seq_name != ckpt.skeleton.name or history.joints != ckpt.skeleton.joint_count:
        raise SkeletonError(
            f"input skeleton {seq_name!r} ({history.joints} joints) does not match "
            f"checkpoint skeleton {ckpt.skeleton.name!r} "
            f"({ckpt.skeleton.joint_count} joints)")
    prediction = predict_autoregressive(history, ckpt.params, ckpt.model_config,
                                        args.horizon)
    save_sequence(args.output, prediction, ckpt.skeleton.name)
    print(f"wrote {prediction.frames} frames to {args.output}")
    return 0


def _apply_ablation(ckpt, overrides: list[str]):
    """Loss/stage switch overrides on a loaded checkpoint, shape-safe only."""
    model_config, loss_config = ckpt.model_config, ckpt.loss_config
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"--ablation expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in ABLATION_KEYS:
            raise ConfigurationError(
                f"--ablation key {key!r} not in {ABLATION_KEYS}")
        if key == "stages":
            stages = int(value)
            if not 1 <= stages <= ckpt.model_config.stages:
                raise ConfigurationError(
                    f"stages override {stages} outside [1, {ckpt.model_config.stages}]")
            model_config = dataclasses.replace(model_config, stages=stages)
            ckpt.params.refinement.stages = ckpt.params.refinement.stages[:stages]
        elif key == "attention_mode":
            if value == "attention" and ckpt.params.attention is None:
                raise ConfigurationError(
                    "checkpoint was trained without attention parameters")
            model_config = dataclasses.replace(
                model_config, attention_mode=_coerce(key, value, "attention"))
        else:
            default = getattr(LossConfig(), key)
            loss_config = dataclasses.replace(
                loss_config, **{key: _coerce(key, value, default)})
    return model_config, loss_config


def _print_table(record: dict):
    header = ["window"] + [f"{ms}ms" for ms in record["frames_ms"]]
    rows = [("overall", record["mpjpe"])]
    for label, entry in sorted(record.get("per_action", {}).items()):
        rows.append((label, entry["mpjpe"]))
    for n, values in enumerate(record.get("stage_mpjpe", [])):
        name = "stage0 (repeat last pose)" if n == 0 else f"stage{n}"
        rows.append((name, values))
    width = max(len(r[0]) for r in rows + [("window", [])]) + 2
    print("".join([header[0].ljust(width)] + [h.rjust(10) for h in header[1:]]))
    for name, values in rows:
        print("".join([name.ljust(width)] + [f"{v:10.3f}" for v in values]))


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model_config, loss_config = _apply_ablation(ckpt, args.ablation or [])
    dataset = load_dataset(args.data)
    if dataset.skeleton.joint_count != ckpt.skeleton.joint_count:
        raise SkeletonError(
            f"dataset skeleton {dataset.skeleton.name!r} does not match "
            f"checkpoint skeleton {ckpt.skeleton.name!r}")
    frames_ms = [float(tok) for tok in args.frames_ms.split(",") if tok.strip()]
    if not frames_ms:
        raise ConfigurationError("--frames-ms lists no frames")
    record = evaluate(dataset, ckpt.params, model_config, frames_ms,
                      stride=args.stride, per_stage=args.stages,
                      loss_config=loss_config)
    record["checkpoint"] = str(args.checkpoint)
    record["ablation"] = args.ablation or []
    _print_table(record)
    out_dir = Path(args.out) if args.out else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    record_path = out_dir / "eval_record.json"
    record_path.write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")
    print(f"record: {record_path}")
    return 0


def cmd_gen_synth(args) -> int:
    if not args.out:
        raise ConfigurationError("missing required field: out (output directory)")
    if args.kind not in SYNTH_KINDS:
        raise ConfigurationError(f"--kind must be one of {SYNTH_KINDS}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    skeleton = synthetic_skeleton(args.chains, args.joints_per_chain, args.bone_length)
    save_skeleton(skeleton, out_dir / "skeleton.mskel")
    for i in range(args.count):
        spec = SynthSpec(kind=args.kind, amplitude=args.amplitude, period=args.period,
                         frames=args.frames, seed=seed + i,
                         frame_rate=args.frame_rate)
        seq = gen_synthetic(skeleton, spec)
        save_sequence(out_dir / f"{args.kind}_{i:03d}.mseq", seq, skeleton.name)
    manifest = {k: getattr(args, k) for k in
                ("kind", "amplitude", "period", "frames", "count",
                 "chains", "joints_per_chain", "bone_length", "frame_rate")}
    manifest["seed"] = seed
    (out_dir / "gen_synth.resolved.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote skeleton and {args.count} sequences to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration file")
    common.add_argument("--seed", type=int, default=None, help="override the seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--dry-run", action="store_true",
                        help="print the resolved configuration and do nothing")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one configuration key")

    parser = argparse.ArgumentParser(
        prog="motionrefine",
        description="Human motion prediction via iterative frequency-space refinement")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", parents=[common], help="train a model")
    p_train.add_argument("--data", help="dataset directory (skeleton.mskel + *.mseq)")
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.set_defaults(func=cmd_train)

    p_predict = sub.add_parser("predict", parents=[common],
                               help="autoregressive prediction from a checkpoint")
    p_predict.add_argument("checkpoint")
    p_predict.add_argument("input", help="history sequence (.mseq)")
    p_predict.add_argument("output", help="output sequence path (.mseq)")
    p_predict.add_argument("--horizon", type=int, required=True,
                           help="number of future frames to generate")
    p_predict.set_defaults(func=cmd_predict)

    p_eval = sub.add_parser("eval", parents=[common],
                            help="MPJPE table at millisecond marks")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("data", help="dataset directory")
    p_eval.add_argument("--frames-ms", default="80,400,560,1000",
                        help="comma-separated millisecond marks")
    p_eval.add_argument("--stride", type=int, default=1)
    p_eval.add_argument("--stages", action="store_true",
                        help="add one MPJPE row per refinement stage")
    p_eval.add_argument("--ablation", action="append", metavar="KEY=VALUE",
                        help="loss/stage switch override, repeatable")
    p_eval.set_defaults(func=cmd_eval)

    p_gen = sub.add_parser("gen-synth", parents=[common],
                           help="generate a synthetic dataset")
    p_gen.add_argument("--kind", default="sinusoid")
    p_gen.add_argument("--count", type=int, default=8)
    p_gen.add_argument("--amplitude", type=float, default=100.0)
    p_gen.add_argument("--period", type=float, default=16.0)
    p_gen.add_argument("--frames", type=int, default=100)
    p_gen.add_argument("--frame-rate", type=float, default=25.0)
    p_gen.add_argument("--chains", type=int, default=1)
    p_gen.add_argument("--joints-per-chain", type=int, default=4)
    p_gen.add_argument("--bone-length", type=float, default=100.0)
    p_gen.set_defaults(func=cmd_gen_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, SkeletonError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (FormatError, DataError, DimensionError, StateError, TapeError,
            OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def run():
    raise SystemExit(main())


if __name__ == "__main__":
    run()

"""Operator command line: dataset generation, training, evaluation, and
gradient checking from one executable.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric
failure (non-finite loss), 5 gradient-check tolerance violation. Logs go to
stderr; machine-readable results go to stdout or files. The CROSSFUSE_SEED
environment variable overrides the seed from any config file. No command
leaves a partial output file behind: everything is written to a temp path
and renamed on success.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import gradcheck
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    ABLATION_MODES,
    FusionModelConfig,
    SynthSpec,
    TrainConfig,
    canonical_json,
    dataclass_from_dict,
    load_json_file,
)
from .errors import ConfigError, FormatError, NonFiniteLossError
from .fusion import build_model
from .synthdata import generate, load_dataset, save_dataset
from .train import confusion_csv_lines, evaluate, load_params, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_GRADCHECK = 5

SEED_ENV = "CROSSFUSE_SEED"
GRADCHECK_CORRUPT_ENV = "CROSSFUSE_GRADCHECK_CORRUPT"


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _env_seed() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _load_run_config(path: str | None) -> tuple[FusionModelConfig, TrainConfig]:
    """Training config file: {"model": {...}, "train": {...}}, both optional."""
    if path is None:
        return FusionModelConfig(), TrainConfig()
    raw = load_json_file(path, where="train config")
    if not isinstance(raw, dict):
        raise ConfigError("train config: expected a JSON object")
    unknown = sorted(set(raw) - {"model", "train"})
    if unknown:
        raise ConfigError(f"train config: unknown sections {unknown}; use 'model' and 'train'")
    model_cfg = dataclass_from_dict(FusionModelConfig, raw.get("model", {}), where="train config [model]")
    train_cfg = dataclass_from_dict(TrainConfig, raw.get("train", {}), where="train config [train]")
    return model_cfg, train_cfg


def cmd_gen(args) -> int:
    try:
        raw = load_json_file(args.spec, where="dataset spec")
        spec = dataclass_from_dict(SynthSpec, raw, where="dataset spec")
        seed = _env_seed()
        if seed is not None:
            spec = dataclass_from_dict(SynthSpec, {**raw, "seed": seed}, where="dataset spec")
    except ConfigError as exc:
        _log(f"error: {exc}")
        return EXIT_CONFIG
    try:
        dataset = generate(spec)
        save_dataset(dataset, args.out)
    except OSError as exc:
        _log(f"error: cannot write dataset: {exc}")
        return EXIT_IO
    _log(f"wrote {len(dataset.train)} train / {len(dataset.val)} val examples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        model_cfg, train_cfg = _load_run_config(args.config)
        seed = _env_seed()
        if seed is not None:
            train_cfg = TrainConfig(**{**train_cfg.__dict__, "seed": seed})
    except ConfigError as exc:
        _log(f"error: {exc}")
        return EXIT_CONFIG
    try:
        dataset = load_dataset(args.data)
    except (FormatError, ConfigError, OSError) as exc:
        _log(f"error: cannot read dataset: {exc}")
        return EXIT_IO

    model = build_model(model_cfg, seed=train_cfg.seed)
    log_lines: list[str] = []

    def record(entry: dict) -> None:
        line = canonical_json(entry)
        log_lines.append(line)
        _log(line)

    try:
        result = train(model, dataset.train, dataset.val, train_cfg,
                       ablation=args.ablation, log_fn=record)
    except NonFiniteLossError as exc:
        _log(f"error: {exc}")
        return EXIT_NUMERIC

    load_params(model, result.best_params)
    try:
        save_checkpoint(args.out, model, ablation=args.ablation)
        log_path = Path(args.log) if args.log else Path(str(args.out) + ".log.jsonl")
        _atomic_write_text(log_path, "".join(line + "\n" for line in log_lines))
    except OSError as exc:
        _log(f"error: cannot write outputs: {exc}")
        return EXIT_IO
    _log(f"best epoch {result.best_epoch} checkpoint -> {args.out}")
    print(f"val_accuracy={result.best_val_accuracy!r}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        model, ablation = load_checkpoint(args.ckpt)
    except (FormatError, ConfigError) as exc:
        _log(f"error: bad checkpoint: {exc}")
        return EXIT_CONFIG
    except OSError as exc:
        _log(f"error: cannot read checkpoint: {exc}")
        return EXIT_IO
    try:
        dataset = load_dataset(args.data)
    except (FormatError, ConfigError, OSError) as exc:
        _log(f"error: cannot read dataset: {exc}")
        return EXIT_IO
    report = evaluate(model, dataset.val, ablation=ablation)
    if args.confusion:
        try:
            _atomic_write_text(Path(args.confusion),
                               "".join(line + "\n" for line in confusion_csv_lines(report)))
        except OSError as exc:
            _log(f"error: cannot write confusion matrix: {exc}")
            return EXIT_IO
    _log(f"evaluated {report.num_samples} samples (ablation={ablation})")
    print(f"val_accuracy={report.accuracy!r}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    try:
        if args.config:
            raw = load_json_file(args.config, where="model config")
            cfg = dataclass_from_dict(FusionModelConfig, raw, where="model config")
        else:
            cfg = gradcheck.tiny_model_config()
        ops = None
        if args.ops:
            ops = [name.strip() for name in args.ops.split(",") if name.strip()]
    except ConfigError as exc:
        _log(f"error: {exc}")
        return EXIT_CONFIG

    corrupt = os.environ.get(GRADCHECK_CORRUPT_ENV, "")
    gradcheck.corrupt_ops = {name.strip() for name in corrupt.split(",") if name.strip()}

    try:
        results = gradcheck.run_op_checks(ops=ops)
    except KeyError as exc:
        _log(f"error: {exc.args[0]}")
        return EXIT_CONFIG
    if ops is None or gradcheck.MODEL_CHECK_NAME in ops:
        results.append(gradcheck.whole_model_check(cfg))
    failures = []
    for res in results:
        print(res.line())
        if not res.passed:
            failures.append(res)
    if failures:
        _log("gradient check failed for: " + ", ".join(f"{r.name}({r.bits}b)" for r in failures))
        return EXIT_GRADCHECK
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossfuse",
        description="Audio-visual fusion classifier: data generation, training, "
                    "evaluation, and gradient verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic bimodal dataset")
    p_gen.add_argument("--spec", required=True, help="dataset spec JSON file")
    p_gen.add_argument("--out", required=True, help="output dataset directory")
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="train on a dataset directory")
    p_train.add_argument("--data", required=True, help="dataset directory")
    p_train.add_argument("--config", default=None,
                         help='JSON file {"model": {...}, "train": {...}}; defaults when omitted')
    p_train.add_argument("--out", required=True, help="checkpoint output path")
    p_train.add_argument("--log", default=None,
                         help="JSON-lines training log path (default: <out>.log.jsonl)")
    p_train.add_argument("--ablation", choices=ABLATION_MODES, default="full")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset's val split")
    p_eval.add_argument("--data", required=True, help="dataset directory")
    p_eval.add_argument("--ckpt", required=True, help="checkpoint path")
    p_eval.add_argument("--confusion", default=None, help="write 3x3 confusion CSV here")
    p_eval.set_defaults(func=cmd_eval)

    p_gc = sub.add_parser("gradcheck", help="run finite-difference gradient checks")
    p_gc.add_argument("--config", default=None,
                      help="model config JSON for the whole-model check (default: tiny config)")
    p_gc.add_argument("--ops", default=None,
                      help="comma-separated op subset (pseudo-op 'model' = whole-model check)")
    p_gc.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

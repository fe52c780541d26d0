"""Command-line interface: train, enhance, evaluate, simulate, gradcheck.

Machine-readable results go to stdout as line-delimited JSON; progress and
diagnostics go to stderr.  Exit codes: 0 success, 1 usage error, 2 invalid
configuration, 3 IO failure, 4 numerical or contract failure.  Runs are
deterministic: the same command on the same inputs produces byte-identical
checkpoints, images, and reports.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    generate_pairs,
    load_paired_dir,
    read_ppm,
    resize_bilinear,
    to_float01,
    to_signed,
    to_uint8,
    to_unit,
    write_ppm,
)
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    PairingError,
    PpmError,
    ShapeError,
)
from .gradcheck import REGISTRY, gradcheck_many
from .generator import ModelConfig, build_generator, generator_forward
from .metrics import evaluate_pairs, hist_equalize
from .tensor import Tensor, no_grad
from .training import TrainConfig, init_training, train_epoch

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

EVAL_SEED_OFFSET = 1000  # held-out simulated pairs come from seed + this


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse reserves exit code 2 for usage; this package uses 1."""

    def error(self, message):
        raise _UsageError(message)


# ---------------------------------------------------------------------------
# run configuration


@dataclasses.dataclass(frozen=True)
class DataConfig:
    source: str = "simulated"
    root: str | None = None
    n_pairs: int = 8
    image_size: int = 64

    def validate(self) -> None:
        if self.source not in ("simulated", "euvp"):
            raise ConfigError(f"data.source must be 'simulated' or 'euvp', got {self.source!r}")
        if self.source == "euvp" and not self.root:
            raise ConfigError("data.root is required when data.source is 'euvp'")
        if self.n_pairs < 1:
            raise ConfigError(f"data.n_pairs must be >= 1, got {self.n_pairs}")
        if self.image_size < 1:
            raise ConfigError(f"data.image_size must be >= 1, got {self.image_size}")


@dataclasses.dataclass(frozen=True)
class OutputConfig:
    checkpoint_path: str = "checkpoint.swpg"
    report_path: str = "report.json"


@dataclasses.dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    training: TrainConfig
    data: DataConfig
    output: OutputConfig

    def digest(self) -> str:
        doc = {
            "model": self.model.to_dict(),
            "training": self.training.to_dict(),
            "data": dataclasses.asdict(self.data),
            "output": dataclasses.asdict(self.output),
        }
        blob = json.dumps(doc, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]


_MODEL_KEYS = {
    "input_size", "patch_size", "embed_dim", "depths", "heads", "window",
    "block_kind", "use_discriminator",
}


def _check_keys(section: dict, allowed, where: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"config: unknown key {where}.{unknown[0]!r}")


def parse_run_config(doc: dict) -> RunConfig:
    """Strict parse: every key must be known, every value validated."""
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be a JSON object")
    _check_keys(doc, ("model", "training", "data", "output"), "<top>")
    for name in ("model", "training", "data", "output"):
        if name in doc and not isinstance(doc[name], dict):
            raise ConfigError(f"config: {name} must be an object")

    model_doc = dict(doc.get("model", {}))
    _check_keys(model_doc, _MODEL_KEYS, "model")
    training_doc = dict(doc.get("training", {}))
    _check_keys(training_doc, {f.name for f in dataclasses.fields(TrainConfig)}, "training")
    data_doc = dict(doc.get("data", {}))
    _check_keys(data_doc, {f.name for f in dataclasses.fields(DataConfig)}, "data")
    output_doc = dict(doc.get("output", {}))
    _check_keys(output_doc, {f.name for f in dataclasses.fields(OutputConfig)}, "output")

    try:
        training = TrainConfig(**training_doc)
        # the generator objective weight and seed live in the training
        # section of the file; the model carries copies for checkpointing
        model = ModelConfig(**model_doc, lambda_l1=training.lambda_l1, seed=training.seed)
        data = DataConfig(**data_doc)
        output = OutputConfig(**output_doc)
    except TypeError as exc:
        raise ConfigError(f"config: {exc}") from exc
    training.validate()
    model.validate()
    data.validate()
    if data.image_size != model.input_size:
        raise ConfigError(
            f"config: data.image_size {data.image_size} must equal model.input_size {model.input_size}"
        )
    return RunConfig(model=model, training=training, data=data, output=output)


def load_run_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: invalid JSON: {exc}") from exc
    return parse_run_config(doc)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()


def _note(msg: str) -> None:
    sys.stderr.write(msg + "\n")


# ---------------------------------------------------------------------------
# subcommands


def _load_train_pairs(cfg: RunConfig):
    if cfg.data.source == "simulated":
        return generate_pairs(cfg.data.n_pairs, cfg.data.image_size, seed=cfg.training.seed)
    pairs = load_paired_dir(cfg.data.root, "train", cfg.data.image_size)
    if not pairs:
        raise ContractError(f"no training pairs found under {cfg.data.root}")
    return pairs


def _load_eval_pairs(cfg: RunConfig):
    if cfg.data.source == "simulated":
        return generate_pairs(cfg.data.n_pairs, cfg.data.image_size, seed=cfg.training.seed + EVAL_SEED_OFFSET)
    pairs = load_paired_dir(cfg.data.root, "validation", cfg.data.image_size)
    if not pairs:
        raise ContractError(f"no validation pairs found under {cfg.data.root}")
    return pairs


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.resume:
        state = load_checkpoint(args.resume)
        if state.model_cfg != cfg.model:
            raise ConfigError("resume: checkpoint model config differs from --config")
        if state.train_cfg != cfg.training:
            raise ConfigError("resume: checkpoint training config differs from --config")
        _note(f"resumed from {args.resume} at epoch {state.epoch}")
    else:
        state = init_training(cfg.model, cfg.training)
    _note(
        f"generator parameters: {state.gen.parameter_count()}, "
        f"discriminator parameters: {state.disc.parameter_count()}"
    )
    pairs = _load_train_pairs(cfg)
    _note(f"training on {len(pairs)} pairs, batch {cfg.training.batch_size}")
    while state.epoch < cfg.training.epochs:
        record = train_epoch(state, pairs)
        save_checkpoint(state, cfg.output.checkpoint_path)
        _emit(record)
    return EXIT_OK


def _enhancer_from_checkpoint(path):
    state = load_checkpoint(path)
    gen = state.gen
    size = state.model_cfg.input_size

    def enhance(img_pm1: np.ndarray) -> np.ndarray:
        from . import tensor as T

        T.reset_tape()
        with no_grad():
            out = generator_forward(gen, Tensor(img_pm1[None]), train=False)
        return out.data[0]

    return enhance, state


def cmd_enhance(args) -> int:
    enhance, state = _enhancer_from_checkpoint(args.ckpt)
    if args.config:
        cfg = load_run_config(args.config)
        for f in dataclasses.fields(ModelConfig):
            if getattr(cfg.model, f.name) != getattr(state.model_cfg, f.name):
                raise ConfigError(
                    f"checkpoint model.{f.name} is {getattr(state.model_cfg, f.name)!r} "
                    f"but config says {getattr(cfg.model, f.name)!r}"
                )
    size = state.model_cfg.input_size
    img = to_float01(read_ppm(args.input))
    img = resize_bilinear(img, size, size)
    out = enhance(to_signed(img))
    write_ppm(args.output, to_uint8(to_unit(out)))
    _emit({"input": args.input, "output": args.output, "size": size})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_run_config(args.config)
    pairs = _load_eval_pairs(cfg)
    if args.ckpt:
        enhance, state = _enhancer_from_checkpoint(args.ckpt)
        baseline = "none"
        enhancer = enhance
    elif args.baseline == "identity":
        baseline = "identity"
        enhancer = lambda img: img
    else:
        baseline = "histeq"

        def enhancer(img):
            eq = hist_equalize(to_uint8(to_unit(img)))
            return to_signed(to_float01(eq))

    report = evaluate_pairs(pairs, enhancer, baseline=baseline, config_digest=cfg.digest())
    path = args.report or cfg.output.report_path
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    _emit({"report": path, "baseline": baseline, **{k: _json_num(v) for k, v in report.aggregate.items()}})
    return EXIT_OK


def _json_num(v: float):
    if np.isfinite(v):
        return v
    return "inf" if v > 0 else ("-inf" if v < 0 else "nan")


def cmd_simulate(args) -> int:
    cfg = load_run_config(args.config)
    pairs = generate_pairs(cfg.data.n_pairs, cfg.data.image_size, seed=cfg.training.seed)
    os.makedirs(args.out, exist_ok=True)
    for pair in pairs:
        write_ppm(os.path.join(args.out, f"{pair.id}_A.ppm"), to_uint8(to_unit(pair.degraded)))
        write_ppm(os.path.join(args.out, f"{pair.id}_B.ppm"), to_uint8(to_unit(pair.reference)))
    _emit({"dir": args.out, "count": len(pairs), "size": cfg.data.image_size})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    names = [args.op] if args.op else sorted(REGISTRY)
    failed = 0
    for name in names:
        rep = gradcheck_many(name)
        _emit(
            {
                "op": rep.op,
                "max_rel_err": rep.max_rel_err,
                "tolerance": rep.tolerance,
                "passed": rep.passed,
            }
        )
        if not rep.passed:
            failed += 1
    if failed:
        raise ContractError(f"gradcheck: {failed} op(s) exceeded tolerance")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> _Parser:
    parser = _Parser(prog="aquaswin", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("train", help="train a model per a run config", parents=[], add_help=True)
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance one PPM image with a trained model")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--input", required=True, help="input PPM")
    p.add_argument("--output", required=True, help="output PPM")
    p.add_argument("--config", help="optional run config cross-checked against the checkpoint")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="score a model or baseline on held-out pairs")
    p.add_argument("--config", required=True, help="run config JSON")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--ckpt", help="checkpoint to evaluate")
    group.add_argument("--baseline", choices=("identity", "histeq"), help="reference method")
    p.add_argument("--report", help="report path (default: output.report_path)")
    p.set_defaults(func=cmd_evaluate, ckpt=None, baseline=None)

    p = sub.add_parser("simulate", help="write a simulated paired dataset as PPM files")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gradcheck", help="finite-difference check of the autodiff ops")
    p.add_argument("--op", choices=sorted(REGISTRY), help="single op (default: all)")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        _note(f"usage error: {exc}")
        return EXIT_USAGE
    if not getattr(args, "func", None):
        _note("usage error: a command is required (train, enhance, evaluate, simulate, gradcheck)")
        return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        _note(f"config error: {exc}")
        return EXIT_CONFIG
    except (PpmError, PairingError, CheckpointError, OSError) as exc:
        _note(f"io error: {exc}")
        return EXIT_IO
    except (ShapeError, ContractError) as exc:
        _note(f"numerical error: {exc}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

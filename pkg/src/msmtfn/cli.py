"""Command-line entry point: synth, augment, train, eval, predict, gradcheck.

Exit codes: 0 success, 1 validation failure, 2 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .augment import AugmentPolicy, HomophoneDict, expand_dataset
from .config import ModelConfig
from .dataio import load_examples, load_manifest, manifest_digest, synth_dataset, write_manifest
from .errors import MaskError, NumericError, ShapeError, ValidationError
from .gradcheck import toy_model_check
from .model import MSMTFN
from .train import TrainConfig, evaluate, predictions, train, write_jsonl, write_report

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2

_TRAIN_FIELDS = [f for f in dataclasses.fields(TrainConfig) if f.name != "model"]
_MODEL_FIELDS = [f for f in dataclasses.fields(ModelConfig)
                 if f.name not in {f.name for f in _TRAIN_FIELDS} | {"use_bottleneck"}]
_POLICY_FIELDS = [f for f in dataclasses.fields(AugmentPolicy) if f.name != "per_record"]


def parse_value(text: str):
    """Config-file scalar: JSON literal, yes/no, comma list, else the raw string."""
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null"):
        return None
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text:
        return [parse_value(part) for part in text.split(",") if part.strip()]
    return text


def read_config(path) -> dict:
    """Plain ``key = value`` lines; '#' starts a comment. Dashes in keys become underscores."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split(sep, 1)
        out[key.strip().replace("-", "_")] = parse_value(value)
    return out


def _add_fields(parser, fields, prefix: str = ""):
    for f in fields:
        flag = "--" + prefix + f.name.replace("_", "-")
        dest = prefix.replace("-", "_") + f.name
        if f.type in ("bool", bool) and f.default is False:
            parser.add_argument(flag, dest=dest, action="store_true", default=argparse.SUPPRESS)
        else:
            parser.add_argument(flag, dest=dest, type=parse_value, default=argparse.SUPPRESS, metavar="V")


def _settings(args) -> dict:
    settings = read_config(args.config) if getattr(args, "config", None) else {}
    settings.update({k: v for k, v in vars(args).items() if k not in ("command", "config", "func")})
    return settings


def _pick(settings: dict, fields, prefix: str = "") -> dict:
    out = {}
    for f in fields:
        key = prefix + f.name
        if key in settings:
            out[f.name] = settings[key]
        elif prefix and f.name in settings and f.name != "seed":
            out[f.name] = settings[f.name]
    return out


def build_train_config(settings: dict) -> TrainConfig:
    model = ModelConfig(**_pick(settings, _MODEL_FIELDS))
    return TrainConfig(model=model, **_pick(settings, _TRAIN_FIELDS))


def build_policy(settings: dict, prefix: str = "") -> AugmentPolicy:
    return AugmentPolicy(**_pick(settings, _POLICY_FIELDS, prefix))


# -- commands ---------------------------------------------------------------------

def cmd_synth(args) -> int:
    manifest, records = synth_dataset(args.out, args.n_calls, args.segments, args.strength, args.seed,
                                      args.audio_frames, args.text_tokens, args.split, args.mode, args.id_prefix,
                                      args.prototype_seed)
    print(f"wrote {len(records)} calls to {manifest}")
    print(f"digest {manifest_digest(records)}")
    return EXIT_OK


def cmd_augment(args) -> int:
    settings = _settings(args)
    policy = build_policy(settings)
    homophones = HomophoneDict.load(settings["homophones"]) if settings.get("homophones") else None
    records = load_manifest(args.manifest)
    expanded = expand_dataset(records, policy, homophones)
    written = write_manifest(expanded, args.out, wav_dir=Path(args.out).stem + "_wav")
    print(f"wrote {len(written)} records ({len(records)} originals) to {args.out}")
    print(f"digest {manifest_digest(written)}")
    return EXIT_OK


def cmd_train(args) -> int:
    settings = _settings(args)
    config = build_train_config(settings)
    policy = build_policy(settings, "aug_") if settings.get("augment") else None
    if policy is not None:
        policy = dataclasses.replace(policy, seed=config.seed)
    homophones = HomophoneDict.load(settings["homophones"]) if settings.get("homophones") else None
    train_records = load_manifest(args.train)
    val_records = load_manifest(args.val) if args.val else []
    result = train(train_records, val_records, config, args.out, policy, homophones)
    print(f"trained {result.steps} steps; best epoch {result.best_epoch}: {result.report.summary()}")
    print(f"checkpoint {result.checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _ = MSMTFN.load(args.checkpoint)
    examples = load_examples(load_manifest(args.manifest), args.stub_seed, args.remove_silence)
    report = evaluate(model, examples)
    print(report.summary())
    if args.out:
        write_report(report, args.out, "eval")
    return EXIT_OK


def cmd_predict(args) -> int:
    model, _ = MSMTFN.load(args.checkpoint)
    examples = load_examples(load_manifest(args.manifest), args.stub_seed, args.remove_silence)
    rows = predictions(model, examples)
    write_jsonl(rows, args.out)
    print(f"wrote {len(rows)} predictions to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    err = toy_model_check(args.seed, args.eps, None if args.max_coords <= 0 else args.max_coords)
    ok = err <= args.tolerance
    print(f"max relative error {err:.3e} ({'ok' if ok else 'FAILED'}, tolerance {args.tolerance:g})")
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msmtfn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labelled corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-calls", type=int, default=16)
    p.add_argument("--segments", type=int, default=3)
    p.add_argument("--strength", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--audio-frames", type=int, default=24)
    p.add_argument("--text-tokens", type=int, default=8)
    p.add_argument("--split", default="train")
    p.add_argument("--mode", choices=("features", "raw"), default="features")
    p.add_argument("--id-prefix", default="c")
    p.add_argument("--prototype-seed", type=int, default=0, help="class evidence shared across seeds")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("augment", help="expand a training manifest with augmented copies")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--homophones", default=argparse.SUPPRESS)
    _add_fields(p, _POLICY_FIELDS)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--train", required=True)
    p.add_argument("--val")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--augment", action="store_true", default=argparse.SUPPRESS,
                   help="expand raw training records with the augmentation policy")
    p.add_argument("--homophones", default=argparse.SUPPRESS)
    _add_fields(p, _TRAIN_FIELDS)
    _add_fields(p, _MODEL_FIELDS)
    _add_fields(p, [f for f in _POLICY_FIELDS if f.name != "seed"], prefix="aug-")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "evaluate a checkpoint"),
                                 ("predict", cmd_predict, "write per-call predictions")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--manifest", required=True)
        p.add_argument("--out", required=(name == "predict"))
        p.add_argument("--stub-seed", type=int, default=0)
        p.add_argument("--remove-silence", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full toy model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--max-coords", type=int, default=4, help="coordinates per tensor; 0 = all")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    verbose = args.verbose
    del args.verbose
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, ShapeError, MaskError, FileNotFoundError, ValueError, TypeError) as exc:
        if verbose:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

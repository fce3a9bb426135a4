"""Command-line entry point: ``train | ablate | report | gen-data``.

Configuration is one JSON object with flat dotted keys (``"train.tau": 0.1``).
``--set KEY=VALUE`` overrides single keys; VALUE is parsed as JSON when it
can be, otherwise taken as a string.  Exit codes: 0 success, 2 invalid
configuration, 3 data error, 4 non-finite numerics.  ``PROTOSSM_LOG`` sets the
log level.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import fields
from importlib import resources
from pathlib import Path

import numpy as np

from .data import (Dataset, SyntheticSpec, gen_synthetic, limit_per_class, read_cifar_file,
                   standardize, to_cifar_bytes)
from .errors import ConfigError, DataError, EvaluationError, ParameterError, StateError
from .metrics import incremental_curve
from .sdsm import SdsmConfig, save_checkpoint
from .stream import TaskSchedule, TrainConfig, run_stream

log = logging.getLogger("protossm")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

_TRAIN_DEFAULTS = {f"train.{f.name if f.name != 'lam' else 'lambda'}": f.default
                   for f in fields(TrainConfig) if f.name != "seed"}

DEFAULTS = {
    "seed": 0,
    "seeds": 10,
    "data.source": "synthetic",
    "data.num_classes": 10,
    "data.input_dim": 16,
    "data.samples_per_class": 200,
    "data.separation": 5.0,
    "data.stddev": 1.0,
    "data.seed": None,
    "data.train_path": "",
    "data.test_path": "",
    "data.granularity": "fine",
    "data.standardize": False,
    "data.train_per_class": 0,
    "data.test_per_class": 0,
    "schedule.tasks": None,
    "schedule.classes_per_task": 2,
    "schedule.batch_size": 10,
    "model.patch_len": 4,
    "model.hidden_dim": 16,
    "model.pooling": "mean",
    **_TRAIN_DEFAULTS,
}

VARIANTS = {"baseline": (False, False), "no_apa": (False, True),
            "no_mf": (True, False), "full": (True, True)}


def reference_config():
    text = resources.files("protossm").joinpath("configs/reference.json").read_text()
    return json.loads(text)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _check_type(key, value):
    default = DEFAULTS[key]
    if key == "data.seed":
        ok = value is None or (isinstance(value, int) and not isinstance(value, bool))
    elif key == "schedule.tasks":
        ok = value is None or (isinstance(value, list) and all(
            isinstance(t, list) and all(isinstance(k, int) and not isinstance(k, bool) for k in t)
            for t in value))
    elif isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, str)
    if not ok:
        raise ConfigError(f"{key}: unexpected value {value!r}")


def load_config(path=None, overrides=()):
    """Merge defaults, the JSON file at ``path`` and ``KEY=VALUE`` overrides; validate types."""
    cfg = dict(DEFAULTS)
    if path is None:
        cfg.update(reference_config())
    else:
        try:
            with open(path) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config must be a JSON object with dotted keys")
        cfg.update(loaded)
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = _parse_value(raw)
    for key, value in cfg.items():
        _check_type(key, value)
    for key in ("data.num_classes", "data.input_dim", "data.samples_per_class", "seeds",
                "schedule.classes_per_task", "schedule.batch_size"):
        if cfg[key] < 1:
            raise ConfigError(f"{key}: must be positive, got {cfg[key]}")
    if cfg["data.source"] not in ("synthetic", "cifar10", "cifar100"):
        raise ConfigError(f"data.source: unknown source {cfg['data.source']!r}")
    if cfg["data.source"] != "synthetic" and not cfg["data.train_path"]:
        raise ConfigError("data.train_path: required for CIFAR sources")
    return cfg


def train_config(cfg, seed=None, **flags):
    kwargs = {}
    for key, value in cfg.items():
        if key.startswith("train."):
            name = key[len("train."):]
            kwargs["lam" if name == "lambda" else name] = value
    kwargs.update(flags)
    kwargs["seed"] = cfg["seed"] if seed is None else seed
    try:
        return TrainConfig(**kwargs)
    except ParameterError as exc:
        name = getattr(exc, "field", "?")
        raise ConfigError(f"train.{'lambda' if name == 'lam' else name}: {exc}") from exc


def synthetic_spec(cfg, seed):
    try:
        return SyntheticSpec(cfg["data.num_classes"], cfg["data.input_dim"],
                             cfg["data.samples_per_class"], float(cfg["data.separation"]),
                             float(cfg["data.stddev"]),
                             seed if cfg["data.seed"] is None else cfg["data.seed"])
    except ParameterError as exc:
        raise ConfigError(f"data.{str(exc).split()[0]}: {exc}") from exc


def model_config(cfg, input_dim, num_classes):
    try:
        return SdsmConfig(input_dim, cfg["model.patch_len"], cfg["model.hidden_dim"], num_classes,
                          cfg["model.pooling"])
    except ParameterError as exc:
        raise ConfigError(f"model: {exc}") from exc


def schedule(cfg, num_classes):
    try:
        if cfg["schedule.tasks"] is not None:
            return TaskSchedule(cfg["schedule.tasks"], cfg["schedule.batch_size"])
        return TaskSchedule.split(num_classes, cfg["schedule.classes_per_task"],
                                  cfg["schedule.batch_size"])
    except ParameterError as exc:
        raise ConfigError(f"schedule: {exc}") from exc


def validate(cfg):
    """Build every run object once so that config errors surface before side effects."""
    train_config(cfg)
    K = cfg["data.num_classes"]
    if cfg["data.source"] == "synthetic":
        spec = synthetic_spec(cfg, cfg["seed"])
        d = spec.input_dim
    else:
        d, K = 3072, (10 if cfg["data.source"] == "cifar10" else
                      (100 if cfg["data.granularity"] == "fine" else 20))
    model_config(cfg, d, K)
    sched = schedule(cfg, K)
    bad = [k for t in sched.tasks for k in t if not 0 <= k < K]
    if bad:
        raise ConfigError(f"schedule.tasks: class {bad[0]} outside [0, {K})")


def load_data(cfg, seed):
    if cfg["data.source"] == "synthetic":
        train, test = gen_synthetic(synthetic_spec(cfg, seed))
    else:
        try:
            train = read_cifar_file(cfg["data.train_path"], cfg["data.source"], cfg["data.granularity"])
            test_path = cfg["data.test_path"] or cfg["data.train_path"]
            test = read_cifar_file(test_path, cfg["data.source"], cfg["data.granularity"])
        except OSError as exc:
            raise DataError(f"cannot read CIFAR file: {exc}") from exc
        if cfg["data.train_per_class"]:
            train = limit_per_class(train, cfg["data.train_per_class"])
        if cfg["data.test_per_class"]:
            test = limit_per_class(test, cfg["data.test_per_class"])
    if cfg["data.standardize"]:
        train, test = standardize(train, test)
    return train, test


def run_one(cfg, seed, **flags):
    train, test = load_data(cfg, seed)
    tcfg = train_config(cfg, seed, **flags)
    mcfg = model_config(cfg, train.input_dim, train.num_classes)
    echo = dict(cfg, seed=seed)
    echo.update({f"train.{'lambda' if k == 'lam' else k}": v for k, v in flags.items()})
    return run_stream(schedule(cfg, train.num_classes), train, test, mcfg, tcfg, echo)


def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def cmd_train(args):
    cfg = load_config(args.config, args.set)
    validate(cfg)
    ledger = run_one(cfg, cfg["seed"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "metrics.json", ledger.metrics_json())
    _write(out / "accuracy_matrix.csv", ledger.accuracy_csv())
    _write(out / "steps.csv", ledger.steps_csv())
    save_checkpoint(out / "model.ckpt", ledger.model, ledger.bank)
    print(f"avg_accuracy={ledger.avg_accuracy:.4f} avg_forgetting={ledger.avg_forgetting:.4f} -> {out}")
    return EXIT_OK


def cmd_ablate(args):
    cfg = load_config(args.config, args.set)
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError(f"--seeds must be positive, got {args.seeds}")
        cfg["seeds"] = args.seeds
    validate(cfg)
    rows = []
    for i in range(cfg["seeds"]):
        seed = cfg["seed"] + i
        for variant, (use_apa, use_mf) in VARIANTS.items():
            ledger = run_one(cfg, seed, use_apa=use_apa, use_mf=use_mf)
            rows.append((variant, seed, ledger.avg_accuracy, ledger.avg_forgetting))
            log.info("%s seed=%d acc=%.4f forg=%.4f", variant, seed, ledger.avg_accuracy,
                     ledger.avg_forgetting)
    text = ablation_csv(rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "ablation.csv", text)
    print(text, end="")
    return EXIT_OK


def ablation_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "seed", "avg_accuracy", "avg_forgetting"])
    for variant, seed, acc, forg in rows:
        w.writerow([variant, seed, f"{acc:.6f}", f"{forg:.6f}"])
    for variant in VARIANTS:
        mine = [r for r in rows if r[0] == variant]
        if mine:
            w.writerow([variant, "mean", f"{np.mean([r[2] for r in mine]):.6f}",
                        f"{np.mean([r[3] for r in mine]):.6f}"])
    return buf.getvalue()


def cmd_report(args):
    curves = []
    for run in args.runs:
        path = Path(run) / "metrics.json"
        try:
            metrics = json.loads(path.read_text())
            R = metrics["accuracy_matrix"]
            curve = incremental_curve(R)
        except (OSError, ValueError, KeyError, TypeError, StateError) as exc:
            raise DataError(f"{path}: missing or corrupt metrics ({exc})") from exc
        curves.append((str(run), curve, metrics.get("avg_accuracy"), metrics.get("avg_forgetting")))

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "task", "incremental_accuracy"])
    for run, curve, _, _ in curves:
        for i, v in enumerate(curve):
            w.writerow([run, i + 1, f"{v:.6f}"])
    width = max(len(r) for r, *_ in curves)
    lines = [f"{'run':<{width}}  tasks  avg_acc  avg_forget  curve"]
    for run, curve, acc, forg in curves:
        lines.append(f"{run:<{width}}  {len(curve):>5}  {acc:7.4f}  {forg:10.4f}  "
                     + " ".join(f"{v:.3f}" for v in curve))
    summary = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write(out / "report.csv", buf.getvalue())
        _write(out / "summary.txt", summary)
    else:
        sys.stdout.write(buf.getvalue())
    sys.stdout.write(summary)
    return EXIT_OK


def cmd_gen_data(args):
    cfg = load_config(args.config, args.set)
    spec = synthetic_spec(cfg, cfg["seed"])
    if spec.num_classes > 100:
        raise ConfigError("data.num_classes: CIFAR layouts hold at most 100 classes")
    if not args.out:
        raise ConfigError("--out: output file path required")
    train, test = gen_synthetic(spec)
    both = Dataset(np.vstack([train.inputs, test.inputs]),
                   np.concatenate([train.labels, test.labels]), spec.num_classes)
    blob = to_cifar_bytes(both)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "wb") as fh:
        fh.write(blob)
    print(f"wrote {len(both)} records ({len(blob)} bytes) to {args.out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="protossm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="JSON config with dotted keys (default: bundled reference)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--out", default=None, help=out_help)

    p = sub.add_parser("train", help="run one seeded stream and write its ledger")
    common(p, "output directory (default: runs/train)")
    p.set_defaults(func=cmd_train, default_out="runs/train")
    p = sub.add_parser("ablate", help="baseline / no_apa / no_mf / full over several seeds")
    common(p, "output directory (default: runs/ablate)")
    p.add_argument("--seeds", type=int, default=None)
    p.set_defaults(func=cmd_ablate, default_out="runs/ablate")
    p = sub.add_parser("report", help="incremental-accuracy curves from run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report, default_out=None)
    p = sub.add_parser("gen-data", help="write a synthetic dataset as CIFAR-style records")
    common(p, "output file")
    p.set_defaults(func=cmd_gen_data, default_out=None)
    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get("PROTOSSM_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.out is None:
        args.out = args.default_out
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (EvaluationError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

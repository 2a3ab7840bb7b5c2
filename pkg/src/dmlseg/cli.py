"""Command-line driver.

Subcommands: gen-data, gen-gt, train, eval, predict, grad-check,
experiment.  Options may come from a `key = value` config file via
--config; explicit flags override file values.  Exit codes: 0 success,
1 usage/config, 2 data, 3 numeric.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import tensor
from .checkpoint import load_gt_cache, load_model_checkpoint, save_gt_cache
from .errors import ConfigError, DataError, NumericError, UsageError
from .kv import parse_kv
from .metrics import report_csv, report_table
from .model import ModelConfig, build_model, describe, forward, predict_labels
from .synth_data import (SceneSpec, palette, read_corpus, read_ppm, write_corpus,
                         write_pgm, write_ppm)
from .train import (TrainConfig, evaluate, grad_check, prepare_targets,
                    run_experiment, train)

MODEL_KEYS = ("num_classes", "input_size", "low_channels", "seg_channels",
              "dml_extra_stride", "window_sizes", "lambda", "levels")

MODEL_DEFAULTS = {
    "num_classes": "8",
    "input_size": "96x96",
    "low_channels": "24/2,48/2",
    "seg_channels": "64,64",
    "dml_extra_stride": "2",
    "window_sizes": "11,5,3",
    "lambda": "1.0",
    "levels": "3",
}

# small 3-level network used by grad-check unless overridden
CHECK_DEFAULTS = {
    "num_classes": "4",
    "input_size": "32x32",
    "low_channels": "8/2,8/2",
    "seg_channels": "8,8",
    "dml_extra_stride": "2",
    "window_sizes": "5,3,1",
    "lambda": "1.0",
    "levels": "3",
}


class Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(sub):
    sub.add_argument("--config", type=Path, help="key = value config file")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--serial", action="store_true",
                     help="force fully serial execution (the default and "
                          "reference mode; accepted for compatibility)")


def _add_model_flags(sub):
    sub.add_argument("--classes", type=int, dest="num_classes")
    sub.add_argument("--input-size", dest="input_size", help="HxW")
    sub.add_argument("--low-channels", dest="low_channels", help="w/s,w/s,...")
    sub.add_argument("--seg-channels", dest="seg_channels", help="w,w,...")
    sub.add_argument("--dml-extra-stride", type=int, dest="dml_extra_stride")
    sub.add_argument("--windows", dest="window_sizes", help="odd,decreasing")
    sub.add_argument("--lambda", type=float, dest="lam")
    sub.add_argument("--levels", type=int)


def _add_train_flags(sub):
    sub.add_argument("--iterations", type=int)
    sub.add_argument("--batch-size", type=int, dest="batch_size")
    sub.add_argument("--lr", type=float)
    sub.add_argument("--momentum", type=float)
    sub.add_argument("--weight-decay", type=float, dest="weight_decay")
    sub.add_argument("--lr-poly", type=float, dest="lr_poly")
    sub.add_argument("--eval-every", type=int, dest="eval_every")
    sub.add_argument("--precision", choices=("train32", "check64"))


def _file_kv(args) -> dict[str, str]:
    if getattr(args, "config", None) is None:
        return {}
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_kv(path.read_text(encoding="utf-8"))


def _merged(args, defaults: dict[str, str]) -> dict[str, str]:
    """defaults < config file < explicit flags."""
    kv = dict(defaults)
    kv.update(_file_kv(args))
    overrides = {
        "num_classes": getattr(args, "num_classes", None),
        "input_size": getattr(args, "input_size", None),
        "low_channels": getattr(args, "low_channels", None),
        "seg_channels": getattr(args, "seg_channels", None),
        "dml_extra_stride": getattr(args, "dml_extra_stride", None),
        "window_sizes": getattr(args, "window_sizes", None),
        "lambda": getattr(args, "lam", None),
        "levels": getattr(args, "levels", None),
        "iterations": getattr(args, "iterations", None),
        "batch_size": getattr(args, "batch_size", None),
        "lr": getattr(args, "lr", None),
        "momentum": getattr(args, "momentum", None),
        "weight_decay": getattr(args, "weight_decay", None),
        "lr_poly": getattr(args, "lr_poly", None),
        "eval_every": getattr(args, "eval_every", None),
        "precision": getattr(args, "precision", None),
        "seed": getattr(args, "seed", None),
    }
    kv.update({k: str(v) for k, v in overrides.items() if v is not None})
    return kv


def _model_config(kv: dict[str, str]) -> ModelConfig:
    levels = int(kv.get("levels", "3"))
    windows = kv.get("window_sizes", "")
    window_sizes = tuple(int(w) for w in windows.split(",")) if windows else ()
    window_sizes = window_sizes[:levels]
    merged = {k: kv[k] for k in MODEL_KEYS if k in kv}
    merged["window_sizes"] = ",".join(str(w) for w in window_sizes)
    merged["levels"] = str(levels)
    return ModelConfig.from_kv(merged)


def _train_config(kv: dict[str, str]) -> TrainConfig:
    try:
        return TrainConfig(
            iterations=int(kv.get("iterations", "300")),
            batch_size=int(kv.get("batch_size", "8")),
            momentum=float(kv.get("momentum", "0.9")),
            weight_decay=float(kv.get("weight_decay", "0.0005")),
            lr=float(kv.get("lr", "0.01")),
            seed=int(kv.get("seed", "0")),
            eval_every=int(kv.get("eval_every", "0")),
            precision=kv.get("precision", "train32"),
            lr_poly=float(kv.get("lr_poly", "0.0")),
        )
    except ValueError as exc:
        raise ConfigError(f"bad training option: {exc}") from exc


def _cmd_gen_data(args) -> int:
    kv = _merged(args, {})
    h, _, w = kv.get("input_size", kv.get("size", "96x96")).partition("x")
    spec_kw = dict(
        seed=int(kv.get("seed", "0")),
        size=(int(h), int(w)),
        num_classes=int(kv.get("num_classes", "8")),
    )
    if "pools" in kv:
        spec_kw["pools"] = tuple(tuple(int(c) for c in part.split(","))
                                 for part in kv["pools"].split("|"))
    for key in ("shapes_min", "shapes_max"):
        if key in kv:
            spec_kw[key] = int(kv[key])
    for key in ("jitter", "noise"):
        if key in kv:
            spec_kw[key] = float(kv[key])
    spec = SceneSpec(**spec_kw)
    n_train = int(kv.get("n_train", str(args.train)))
    n_val = int(kv.get("n_val", str(args.val)))
    corpus = write_corpus(spec, n_train, n_val, args.out)
    print(f"wrote {n_train} train / {n_val} val scenes to {corpus.root}")
    return 0


def _cmd_gen_gt(args) -> int:
    corpus = read_corpus(args.corpus)
    cfg = _model_config(_merged(args, MODEL_DEFAULTS))
    masks = [corpus.load_mask(i) for i in range(len(corpus.entries))]
    grids, targets = prepare_targets(masks, cfg)
    save_gt_cache(args.out, cfg, corpus.content_hash, grids, targets)
    print(f"cached targets for {len(masks)} masks at {args.out}")
    return 0


def _cmd_train(args) -> int:
    corpus = read_corpus(args.corpus)
    kv = _merged(args, MODEL_DEFAULTS)
    model_cfg = _model_config(kv)
    train_cfg = _train_config(kv)
    grids = targets = None
    if args.gt_cache is not None:
        all_grids, all_targets = load_gt_cache(args.gt_cache, model_cfg,
                                               corpus.content_hash)
        idxs = corpus.indices("train")
        grids = [all_grids[i] for i in idxs]
        targets = [all_targets[i] for i in idxs]
    result = train(corpus, model_cfg, train_cfg, args.out,
                   grids=grids, targets=targets)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"loss csv:   {result.loss_csv_path}")
    print(f"objective:  {result.reports[0].total:.4f} -> {result.reports[-1].total:.4f}")
    return 0


def _cmd_eval(args) -> int:
    model = load_model_checkpoint(args.checkpoint)
    corpus = read_corpus(args.corpus)
    report = evaluate(model, corpus, args.split)
    if args.out is not None:
        Path(args.out).write_text(report_csv(report), encoding="utf-8")
    sys.stdout.write(report_table(report, name=f"levels={model.config.levels}"))
    return 0


def _cmd_predict(args) -> int:
    model = load_model_checkpoint(args.checkpoint)
    tensor.set_precision("train32")
    image = read_ppm(args.image)
    x = tensor.Tensor(image[None])
    net = forward(model, x)
    labels = predict_labels(net.p, model.config.input_size)[0]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pgm(out.with_suffix(".pgm"), labels)
    colors = np.rint(palette(model.config.num_classes) * 255) / 255
    write_ppm(out.with_suffix(".ppm"),
              colors[labels].transpose(2, 0, 1).astype(np.float32))
    print(f"wrote {out.with_suffix('.pgm')} and {out.with_suffix('.ppm')}")
    return 0


def _cmd_grad_check(args) -> int:
    cfg = _model_config(_merged(args, CHECK_DEFAULTS))
    report = grad_check(cfg, args.tolerance, seed=args.seed or 0)
    for line in report.lines():
        print(line)
    if not report.passed:
        raise NumericError(f"gradient check failed: max relative error "
                           f"{report.max_rel_err:.3e} > {args.tolerance:.3e}")
    return 0


def _cmd_experiment(args) -> int:
    corpus = read_corpus(args.corpus)
    kv = _merged(args, MODEL_DEFAULTS)
    base_cfg = _model_config(kv)
    train_cfg = _train_config(kv)
    levels = tuple(int(v) for v in args.run_levels.split(","))
    csv_text, _ = run_experiment(corpus, base_cfg, train_cfg, args.out, levels)
    sys.stdout.write(csv_text)
    return 0


def _cmd_describe(args) -> int:
    cfg = _model_config(_merged(args, MODEL_DEFAULTS))
    sys.stdout.write(describe(build_model(cfg, seed=args.seed or 0)))
    return 0


def build_parser() -> Parser:
    parser = Parser(prog="dmlseg", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-data", parents=[], help="generate a synthetic corpus")
    _add_common(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--train", type=int, default=500)
    p.add_argument("--val", type=int, default=100)
    p.add_argument("--classes", type=int, dest="num_classes")
    p.add_argument("--input-size", dest="input_size", help="HxW")
    p.set_defaults(func=_cmd_gen_data)

    p = subs.add_parser("gen-gt", help="cache multi-label targets for a corpus")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_gen_gt)

    p = subs.add_parser("train", help="train a model on a corpus")
    _add_common(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--gt-cache", type=Path, dest="gt_cache")
    p.set_defaults(func=_cmd_train)

    p = subs.add_parser("eval", help="evaluate a checkpoint on a corpus split")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--split", default="val", choices=("train", "val"))
    p.add_argument("--out", type=Path, help="write per-class CSV here")
    p.set_defaults(func=_cmd_eval)

    p = subs.add_parser("predict", help="label one PPM image")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True,
                   help="output prefix (.pgm labels + .ppm colors)")
    p.set_defaults(func=_cmd_predict)

    p = subs.add_parser("grad-check", help="finite-difference gradient check")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=_cmd_grad_check)

    p = subs.add_parser("experiment", help="levels ablation: train/eval variants")
    _add_common(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--run-levels", default="0,1,2,3",
                   help="comma list of level counts to compare")
    p.set_defaults(func=_cmd_experiment)

    p = subs.add_parser("describe", help="print the layer inventory")
    _add_common(p)
    _add_model_flags(p)
    p.set_defaults(func=_cmd_describe)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

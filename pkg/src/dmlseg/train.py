"""Training loop, evaluation, end-to-end gradient checking and the
baseline-vs-multi-label ablation experiment."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor
from .checkpoint import save_model_checkpoint
from .errors import ConfigError, NumericError
from .gt_gen import IGNORE, downsample_mask, multilabel_from_grid_mask
from .losses import LossReport, multilabel_nll, softmax_nll, total_objective
from .metrics import EvalReport, accumulate, finalize
from .model import Model, ModelConfig, build_model, forward, predict_labels
from .optim import sgd_step
from .synth_data import Corpus
from .tensor import Tensor, record


@dataclass(frozen=True)
class TrainConfig:
    iterations: int
    batch_size: int = 8
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr: float = 0.01
    seed: int = 0
    eval_every: int = 0  # 0: checkpoint only at the end
    precision: str = "train32"
    lr_poly: float = 0.0  # 0: constant rate

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1:
            raise ConfigError("iterations and batch_size must be positive")
        if not (0 <= self.momentum < 1):
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0 or self.lr < 0:
            raise ConfigError("lr and weight_decay must be non-negative")


@dataclass
class TrainResult:
    model: Model
    checkpoint_path: Path
    loss_csv_path: Path
    reports: list[LossReport]


def _load_split(corpus: Corpus, split: str):
    idxs = corpus.indices(split)
    images = [corpus.load_image(i) for i in idxs]
    masks = [corpus.load_mask(i) for i in idxs]
    return images, masks


def prepare_targets(masks, config: ModelConfig):
    """Decimated segmentation masks plus per-level presence targets."""
    grids = [downsample_mask(m, config.s_low, config.num_classes) for m in masks]
    targets = [multilabel_from_grid_mask(g, config) for g in grids]
    return grids, targets


def _batch_iterator(n: int, batch_size: int, seed: int):
    """Seeded without-replacement epochs, partial tail batches dropped."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield order[start:start + batch_size]


def train(corpus: Corpus, model_cfg: ModelConfig, train_cfg: TrainConfig,
          out_dir: Path, grids=None, targets=None) -> TrainResult:
    """SGD over the joint objective; writes checkpoint.dmls and loss.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensor.set_precision(train_cfg.precision)

    images, masks = _load_split(corpus, "train")
    if not images:
        raise ConfigError("corpus has no training images")
    if train_cfg.batch_size > len(images):
        raise ConfigError(f"batch size {train_cfg.batch_size} exceeds "
                          f"{len(images)} training images")
    if grids is None or targets is None:
        grids, targets = prepare_targets(masks, model_cfg)

    model = build_model(model_cfg, seed=train_cfg.seed)
    params = model.parameters()
    ckpt_path = out / "checkpoint.dmls"
    csv_path = out / "loss.csv"
    batches = _batch_iterator(len(images), train_cfg.batch_size, train_cfg.seed)
    reports: list[LossReport] = []
    rows = [LossReport.csv_header(model_cfg.levels)]

    try:
        for it in range(train_cfg.iterations):
            idx = next(batches)
            x = Tensor(np.stack([images[i] for i in idx]))
            y_seg = np.stack([grids[i] for i in idx])
            y_mul = [np.stack([targets[i][j] for i in idx])
                     for j in range(model_cfg.levels)]

            try:
                with record() as g:
                    net = forward(model, x)
                    l_mul = [multilabel_nll(net.m[j], y_mul[j])
                             for j in range(model_cfg.levels)]
                    l_seg = softmax_nll(net.p, y_seg)
                    total, report = total_objective(
                        l_seg, l_mul, model_cfg.lam,
                        valid_pixel_count=int((y_seg != IGNORE).sum()))
                if not math.isfinite(report.total):
                    raise NumericError("non-finite loss")
                g.backward(total)
            except NumericError as exc:
                raise NumericError(
                    f"{exc} at iteration {it}; last good checkpoint "
                    f"{'retained at ' + str(ckpt_path) if ckpt_path.exists() else 'none'}"
                ) from exc

            lr = train_cfg.lr
            if train_cfg.lr_poly > 0:
                lr *= (1.0 - it / train_cfg.iterations) ** train_cfg.lr_poly
            sgd_step(params, lr, train_cfg.momentum, train_cfg.weight_decay)

            reports.append(report)
            rows.append(report.csv_row(it))
            if train_cfg.eval_every and (it + 1) % train_cfg.eval_every == 0:
                save_model_checkpoint(ckpt_path, model)
    finally:
        csv_path.write_text("\n".join(rows) + "\n", encoding="utf-8")

    save_model_checkpoint(ckpt_path, model)
    return TrainResult(model=model, checkpoint_path=ckpt_path,
                       loss_csv_path=csv_path, reports=reports)


def evaluate(model: Model, corpus: Corpus, split: str = "val",
             batch_size: int = 8) -> EvalReport:
    """Full-resolution metric accumulation over one split; never records a
    graph and never touches parameters."""
    idxs = corpus.indices(split)
    if not idxs:
        raise ConfigError(f"corpus has no {split!r} images")
    full = corpus.spec.size
    report = EvalReport(num_classes=model.config.num_classes)
    for start in range(0, len(idxs), batch_size):
        chunk = idxs[start:start + batch_size]
        x = Tensor(np.stack([corpus.load_image(i) for i in chunk]))
        net = forward(model, x)
        pred = predict_labels(net.p, full)
        for row, i in enumerate(chunk):
            accumulate(pred[row], corpus.load_mask(i), report)
    return finalize(report)


@dataclass
class GradCheckReport:
    per_layer: dict[str, float]
    max_rel_err: float
    tolerance: float
    passed: bool

    def lines(self) -> list[str]:
        out = [f"{name:<24} max_rel_err {err:.3e}" for name, err in self.per_layer.items()]
        out.append(f"overall max {self.max_rel_err:.3e} "
                   f"{'<=' if self.passed else '>'} tolerance {self.tolerance:.3e}")
        return out


def _rel_err(analytic: np.ndarray, numeric: np.ndarray, abs_floor=1e-8) -> float:
    mag = np.abs(analytic) + np.abs(numeric)
    diff = np.abs(analytic - numeric)
    small = mag < abs_floor
    rel = np.where(small, diff, diff / np.where(small, 1.0, mag))
    return float(rel.max()) if rel.size else 0.0


def grad_check(model_cfg: ModelConfig, tolerance: float, *, batch: int = 2,
               step: float = 1e-5, seed: int = 0) -> GradCheckReport:
    """Compare every parameter gradient of the full objective against
    central finite differences on one small random batch (64-bit)."""
    prev_mode = tensor.precision()
    tensor.set_precision("check64")
    try:
        model = build_model(model_cfg, seed=seed)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
        for p in model.parameters():
            # probe at a generic smooth point: the init point is degenerate
            # (adaptive layers exactly zero, zero biases putting relu inputs
            # on the kink, where central differences are unreliable)
            p.tensor.data += rng.normal(scale=0.1, size=p.tensor.shape)
            if p.name.endswith(".bias"):
                p.tensor.data += 0.1
        h, w = model_cfg.input_size
        x_data = rng.random((batch, 3, h, w))
        masks = rng.integers(0, model_cfg.num_classes, size=(batch, h, w)).astype(np.uint8)
        masks[rng.random((batch, h, w)) < 0.05] = IGNORE
        grids = np.stack([downsample_mask(m, model_cfg.s_low, model_cfg.num_classes)
                          for m in masks])
        levels = [multilabel_from_grid_mask(g, model_cfg) for g in grids]
        y_mul = [np.stack([lv[j] for lv in levels]) for j in range(model_cfg.levels)]

        def loss_value() -> float:
            net = forward(model, Tensor(x_data))
            l_mul = [multilabel_nll(net.m[j], y_mul[j]) for j in range(model_cfg.levels)]
            l_seg = softmax_nll(net.p, grids)
            total, _ = total_objective(l_seg, l_mul, model_cfg.lam)
            return total.item()

        with record() as g:
            net = forward(model, Tensor(x_data))
            l_mul = [multilabel_nll(net.m[j], y_mul[j]) for j in range(model_cfg.levels)]
            l_seg = softmax_nll(net.p, grids)
            total, _ = total_objective(l_seg, l_mul, model_cfg.lam)
        g.backward(total)

        per_layer: dict[str, float] = {}
        for p in model.parameters():
            analytic = p.tensor.grad.copy()
            numeric = np.zeros_like(analytic)
            data = p.tensor.data
            flat = data.reshape(-1)
            nflat = numeric.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                hi = loss_value()
                flat[i] = orig - step
                lo = loss_value()
                flat[i] = orig
                nflat[i] = (hi - lo) / (2 * step)
            per_layer[p.name] = _rel_err(analytic, numeric)
        worst = max(per_layer.values())
        return GradCheckReport(per_layer=per_layer, max_rel_err=worst,
                               tolerance=tolerance, passed=worst <= tolerance)
    finally:
        tensor.set_precision(prev_mode)


EXPERIMENT_HEADER = "levels,mean_iou,mean_wrong_class,mean_wrong_label"


def run_experiment(corpus: Corpus, base_cfg: ModelConfig, train_cfg: TrainConfig,
                   out_dir: Path, levels=(0, 1, 2, 3)) -> tuple[str, list[EvalReport]]:
    """Train and evaluate one variant per level count with a shared seed,
    corpus and schedule; returns the comparison CSV text."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = base_cfg.to_text() + (
        f"iterations = {train_cfg.iterations}\nbatch_size = {train_cfg.batch_size}\n"
        f"lr = {train_cfg.lr!r}\nlr_poly = {train_cfg.lr_poly!r}\n"
        f"momentum = {train_cfg.momentum!r}\nweight_decay = {train_cfg.weight_decay!r}\n"
        f"seed = {train_cfg.seed}\nrun_levels = {','.join(str(j) for j in levels)}\n")
    (out / "experiment_config.txt").write_text(manifest, encoding="utf-8")
    rows = [EXPERIMENT_HEADER]
    eval_reports = []
    for j in levels:
        cfg = dataclasses.replace(base_cfg, levels=j,
                                  window_sizes=base_cfg.window_sizes[:j])
        result = train(corpus, cfg, train_cfg, out / f"level{j}")
        report = evaluate(result.model, corpus, "val")
        eval_reports.append(report)
        rows.append(f"{j},{report.mean_iou:.6f},{report.mean_wrong_class:.6f},"
                    f"{report.mean_wrong_label:.6f}")
    csv_text = "\n".join(rows) + "\n"
    (out / "experiment.csv").write_text(csv_text, encoding="utf-8")
    return csv_text, eval_reports

"""Optimization loop: decoupled-weight-decay Adam under a poly schedule.

The loop is deterministic given the config seed: model init, batch
sampling and augmentation all draw from generators derived from it, so
two runs with the same seed produce bit-identical loss logs in
single-threaded mode.
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import checkpoint
from .autodiff import Parameter, Tensor, backward, no_grad
from .data import AugmentationPolicy, BiTemporalSample, augment
from .errors import (ConfigError, NumericalError, OptimizerError,
                     TrainingDiverged)
from .loss import LossBundle, total_loss
from .metrics import ConfusionMatrix, MetricScores, confusion, score
from .network import AblationConfig, ChangeDetector, variant_config

LOG_NAME = "loss_log.tsv"
FINAL_CHECKPOINT = "model.ckpt"


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 5e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    power: float = 0.9
    max_iteration: int = 1000
    batch_size: int = 4
    seed: int = 0
    checkpoint_every: int = 250
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def __post_init__(self):
        if self.lr0 <= 0.0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"betas must lie in [0, 1), got "
                              f"{self.beta1}/{self.beta2}")
        if self.max_iteration < 1:
            raise ConfigError(f"max_iteration must be >= 1, got "
                              f"{self.max_iteration}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


_INT_KEYS = {"max_iteration", "batch_size", "seed", "checkpoint_every"}
_FLOAT_KEYS = {"lr0", "weight_decay", "beta1", "beta2", "eps", "power"}


def parse_config(path, *, warn=lambda msg: print(f"warning: {msg}",
                                                 file=sys.stderr)) -> TrainConfig:
    """Line-based key=value config; unknown keys and bad lines are errors."""
    fields: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {lineno}: expected key=value, "
                              f"got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        try:
            if key in _INT_KEYS:
                fields[key] = int(value)
            elif key in _FLOAT_KEYS:
                fields[key] = float(value)
            elif key == "variant":
                fields["ablation"] = variant_config(value)
            else:
                raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"{path}: line {lineno}: bad value for "
                              f"{key!r}: {value!r}") from e
    if "lr0" not in fields:
        warn(f"{path}: no lr0 given, falling back to 0.0005")
    return TrainConfig(**fields)


def poly_lr(iteration: int, cfg: TrainConfig) -> float:
    """lr0 * (1 - iteration/max_iteration)^power; zero once training ends."""
    if iteration < 0:
        raise ValueError(f"iteration must be non-negative, got {iteration}")
    if iteration >= cfg.max_iteration:
        return 0.0
    return cfg.lr0 * (1.0 - iteration / cfg.max_iteration) ** cfg.power


class AdamW:
    """Adam with decoupled weight decay and bias-corrected moments.

    Normalization scales and biases are exempt from decay (their
    parameters carry ``decay=False``).
    """

    def __init__(self, named_params: Sequence[tuple[str, Parameter]],
                 cfg: TrainConfig):
        self.params = list(named_params)
        self.cfg = cfg
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self, lr: float) -> None:
        cfg = self.cfg
        for name, p in self.params:
            if p.grad is None:
                raise OptimizerError(f"parameter '{name}' has no gradient")
            if not np.isfinite(p.grad).all():
                raise OptimizerError(f"non-finite gradient for parameter "
                                     f"'{name}'")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - cfg.beta1 ** t
        c2 = 1.0 - cfg.beta2 ** t
        for name, p in self.params:
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            if p.decay and cfg.weight_decay:
                p.data -= lr * cfg.weight_decay * p.data
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


@dataclass
class TrainResult:
    model: ChangeDetector
    checkpoint_path: Path
    log_path: Path
    iterations: int
    first_loss: float
    final_loss: float


def _batch_arrays(samples: Sequence[BiTemporalSample], dtype):
    t1 = np.stack([s.image_t1 for s in samples]).astype(dtype)
    t2 = np.stack([s.image_t2 for s in samples]).astype(dtype)
    g = np.stack([s.gt_change for s in samples])[:, None].astype(dtype)
    return Tensor(t1), Tensor(t2), Tensor(g)


def step_loss(model: ChangeDetector, t1: Tensor, t2: Tensor,
              g: Tensor) -> LossBundle:
    """Forward plus the full deep-supervised objective."""
    bundle = model(t1, t2)
    aux = bundle.level_probs + bundle.refined_probs
    return total_loss(aux, bundle.change, bundle.uncertainty, g, model.cfg)


def train(samples: Sequence[BiTemporalSample], cfg: TrainConfig, out_dir, *,
          policy: Optional[AugmentationPolicy] = None,
          progress: bool = False) -> TrainResult:
    """Run the optimization loop and leave a checkpoint plus loss log.

    On a non-finite loss or gradient the loop aborts, keeps the last
    periodic checkpoint and the partial log, and raises TrainingDiverged.
    """
    if not samples:
        raise ConfigError("train: dataset is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if policy is None:
        policy = AugmentationPolicy()

    model = ChangeDetector(cfg.ablation, seed=cfg.seed, dtype=np.float32)
    optimizer = AdamW(list(model.named_parameters()), cfg)
    rng = np.random.default_rng((cfg.seed, 0xA46))
    log_path = out_dir / LOG_NAME
    lines: list[str] = []
    first_loss = final_loss = float("nan")
    start = time.perf_counter()

    def flush_log():
        log_path.write_text("".join(lines))

    for it in range(cfg.max_iteration):
        idx = rng.integers(0, len(samples), size=cfg.batch_size)
        batch = [augment(samples[i], policy, rng) for i in idx]
        t1, t2, g = _batch_arrays(batch, np.float32)
        model.train()
        try:
            losses = step_loss(model, t1, t2, g)
        except NumericalError as e:
            flush_log()
            raise TrainingDiverged(
                f"{e} at iteration {it}; last-good checkpoint retained "
                f"in {out_dir}") from e
        values = losses.values()
        if not np.isfinite(values["total"]):
            flush_log()
            raise TrainingDiverged(
                f"non-finite loss {values['total']} at iteration {it}; "
                f"last-good checkpoint retained in {out_dir}")
        backward(losses.total)
        lr = poly_lr(it, cfg)
        try:
            optimizer.step(lr)
        except OptimizerError as e:
            flush_log()
            raise TrainingDiverged(
                f"{e} at iteration {it}; last-good checkpoint retained "
                f"in {out_dir}") from e
        model.zero_grad()

        if it == 0:
            first_loss = values["total"]
        final_loss = values["total"]
        lines.append(f"{it}\t{values['l_bce']:.17g}\t{values['l_dice']:.17g}"
                     f"\t{values['l_u']:.17g}\t{values['total']:.17g}"
                     f"\t{lr:.17g}\n")
        if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            checkpoint.save(model, out_dir / f"ckpt-{it + 1:06d}.ckpt")
        if progress and (it + 1) % 50 == 0:
            elapsed = time.perf_counter() - start
            print(f"iter {it + 1}/{cfg.max_iteration} "
                  f"total={values['total']:.4f} lr={lr:.2e} "
                  f"[{elapsed:.0f}s]", file=sys.stderr)

    final_path = out_dir / FINAL_CHECKPOINT
    checkpoint.save(model, final_path)
    flush_log()
    return TrainResult(model, final_path, log_path, cfg.max_iteration,
                       first_loss, final_loss)


def predict_sample(model: ChangeDetector, sample: BiTemporalSample):
    """Eval-mode inference: (binary change map, change probs, uncertainty)."""
    model.eval()
    with no_grad():
        bundle = model.forward_sample(sample)
    probs = bundle.change.data[0, 0]
    unc = bundle.uncertainty.data[0, 0] if bundle.uncertainty is not None \
        else None
    return (probs >= 0.5).astype(np.uint8), probs, unc


def evaluate_model(model: ChangeDetector,
                   samples: Sequence[BiTemporalSample]
                   ) -> tuple[MetricScores, ConfusionMatrix]:
    """Micro-averaged scores over a dataset (threshold 0.5)."""
    total = ConfusionMatrix(0, 0, 0, 0)
    for s in samples:
        pred, _, _ = predict_sample(model, s)
        total = total + confusion(pred, s.gt_change)
    return score(total), total


def uncertainty_means(model: ChangeDetector,
                      samples: Sequence[BiTemporalSample]
                      ) -> tuple[float, float]:
    """Pooled mean uncertainty over mispredicted and correct pixels."""
    unc_all, err_all = [], []
    for s in samples:
        pred, _, unc = predict_sample(model, s)
        if unc is None:
            raise ValueError("model has no uncertainty branch")
        unc_all.append(unc.reshape(-1))
        err_all.append((pred != s.gt_change).reshape(-1))
    unc_cat = np.concatenate(unc_all)
    err_cat = np.concatenate(err_all)
    if not err_cat.any() or err_cat.all():
        raise ValueError("uncertainty_means: one pixel partition is empty")
    return float(unc_cat[err_cat].mean()), float(unc_cat[~err_cat].mean())

"""Composite L1 loss, Adam, the learning-rate schedule and the training loop."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ddcn.core import Tensor, astensor, bicubic_resize, mean_abs_error, no_grad
from ddcn.core.rng import SplitMix64
from ddcn.errors import DataError, DimensionError
from ddcn.model import ModelConfig, forward, init_params, is_trainable
from ddcn.model.checkpoint import AdamState
from ddcn.video import TrainingPair, augment_flip

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    lr_initial: float = 1e-4
    lr_drop: float = 1e-5
    drop_after: int = 40
    post_drop_epochs: int = 15
    batch_size: int = 8
    lambda_up: float = 0.01
    use_composite_loss: bool = True
    augment: bool = True
    seed: int = 0
    epochs: int | None = None

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.lr_initial <= 0 or self.lr_drop <= 0:
            raise ValueError("learning rates must be positive")
        if self.lambda_up < 0:
            raise ValueError("lambda_up must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    @property
    def total_epochs(self) -> int:
        return self.drop_after + self.post_drop_epochs if self.epochs is None else self.epochs

    @property
    def effective_lambda(self) -> float:
        return self.lambda_up if self.use_composite_loss else 0.0


@dataclass
class LossBreakdown:
    l_ir: float
    l_up: float
    total: float
    graph: Tensor | None = field(default=None, repr=False, compare=False)


@dataclass
class HistoryRow:
    epoch: int
    l_ir: float
    l_up: float
    total: float
    lr: float


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    adam: AdamState
    history: list[HistoryRow]
    step_losses: list[float]
    epochs: int


def composite_loss(reconstructed, upsampled, truth, lambda_up: float = 0.01) -> LossBreakdown:
    """L = L_IR + lambda_up * L_UP with both terms as mean absolute error.

    ``upsampled`` does not depend on model parameters, so the second term only
    shifts the reported value; it contributes no gradient.
    """
    reconstructed, upsampled, truth = astensor(reconstructed), astensor(upsampled), astensor(truth)
    if not (reconstructed.shape == upsampled.shape == truth.shape):
        raise DimensionError(f"loss operands differ: {reconstructed.shape}, {upsampled.shape}, "
                             f"{truth.shape}")
    l_ir = mean_abs_error(reconstructed, truth)
    l_up = mean_abs_error(upsampled, truth)
    total = l_ir + lambda_up * l_up
    return LossBreakdown(l_ir.item(), l_up.item(), total.item(), total)


def adam_step(params, grads, state: AdamState, lr: float, config: TrainConfig):
    """One bias-corrected Adam update. Returns new (params, state); inputs are untouched."""
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    new_params = dict(params)
    m, v = {}, {}
    for name, mom in state.m.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != mom.shape:
            raise DimensionError(f"{name}: gradient shape {g.shape} != {mom.shape}")
        m[name] = b1 * mom + (1.0 - b1) * g
        v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m[name] / c1
        v_hat = v[name] / c2
        new_params[name] = np.asarray(params[name]) - lr * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return new_params, AdamState(m, v, t)


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    return config.lr_initial if epoch < config.drop_after else config.lr_drop


def sample_gradients(pair: TrainingPair, params, model_config: ModelConfig, lambda_up: float):
    """Forward/backward one pair in train mode.

    Returns (loss breakdown, gradients by name, updated BN running stats).
    """
    leaves = {k: Tensor(v, requires_grad=is_trainable(k)) for k, v in params.items()}
    stats: dict[str, np.ndarray] = {}
    out = forward(pair.lr.frames, leaves, model_config, mode="train", stats=stats)
    with no_grad():
        up = bicubic_resize(Tensor(pair.lr.reference), model_config.scale)
    if out.shape != pair.hr.shape:
        raise DimensionError(f"output {out.shape} does not match HR truth {pair.hr.shape}")
    loss = composite_loss(out, up, pair.hr, lambda_up)
    loss.graph.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
             for k, t in leaves.items() if t.requires_grad}
    return loss, grads, stats


def _check_dataset(dataset: Sequence[TrainingPair], model_config: ModelConfig) -> None:
    if not dataset:
        raise DataError("training dataset is empty")
    for i, pair in enumerate(dataset):
        if len(pair.lr) != model_config.frames:
            raise DimensionError(f"sample {i}: {len(pair.lr)} frames, model expects "
                                 f"{model_config.frames}")
        _, h, w = pair.lr.shape
        if pair.hr.shape != (3, h * model_config.scale, w * model_config.scale):
            raise DimensionError(f"sample {i}: HR {pair.hr.shape} is not {model_config.scale}x "
                                 f"LR {(3, h, w)}")


def train(dataset: Sequence[TrainingPair], model_config: ModelConfig, config: TrainConfig,
          progress: Callable[[HistoryRow], None] | None = None,
          params: dict[str, np.ndarray] | None = None,
          adam: AdamState | None = None, start_epoch: int = 0,
          step_callback: Callable[[int, LossBreakdown], None] | None = None) -> TrainResult:
    """Mini-batch Adam over ``dataset``; gradients are averaged across each batch.

    Samples in a batch are processed one after another in a fixed order, so a
    run is bit-reproducible under single-threaded BLAS.
    """
    _check_dataset(dataset, model_config)
    params = dict(init_params(model_config, config.seed) if params is None else params)
    adam = AdamState.fresh(params) if adam is None else adam
    rng = SplitMix64(config.seed ^ 0xA5A5A5A5)
    lam = config.effective_lambda
    history: list[HistoryRow] = []
    step_losses: list[float] = []
    epoch = start_epoch
    for epoch in range(start_epoch, config.total_epochs):
        lr = lr_schedule(epoch, config)
        order = rng.permutation(len(dataset))
        sums = np.zeros(3)
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            acc: dict[str, np.ndarray] = {}
            batch_sums = np.zeros(3)
            for idx in batch:
                pair = dataset[idx]
                if config.augment:
                    pair = augment_flip(pair, int(rng.next_u64(1)[0]))
                loss, grads, stats = sample_gradients(pair, params, model_config, lam)
                params.update(stats)
                for k, g in grads.items():
                    acc[k] = g if k not in acc else acc[k] + g
                batch_sums += (loss.l_ir, loss.l_up, loss.total)
            sums += batch_sums
            scale = 1.0 / len(batch)
            params, adam = adam_step(params, {k: g * scale for k, g in acc.items()}, adam, lr,
                                     config)
            step_losses.append(float(batch_sums[2] * scale))
            if step_callback is not None:
                step_callback(len(step_losses), LossBreakdown(*(batch_sums * scale).tolist()))
        mean = sums / len(dataset)
        row = HistoryRow(epoch, float(mean[0]), float(mean[1]), float(mean[2]), lr)
        history.append(row)
        log.debug("epoch %d l_ir=%.6f total=%.6f lr=%g", epoch, row.l_ir, row.total, lr)
        if progress is not None:
            progress(row)
    done = max(start_epoch, config.total_epochs)
    return TrainResult(params, adam, history, step_losses, done)


def write_history_csv(history: Sequence[HistoryRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "l_ir", "l_up", "total", "lr"])
        for r in history:
            w.writerow([r.epoch, f"{r.l_ir:.8f}", f"{r.l_up:.8f}", f"{r.total:.8f}", f"{r.lr:g}"])


def predict(frames, params, model_config: ModelConfig) -> np.ndarray:
    """Eval-mode forward without building a graph."""
    with no_grad():
        return forward(list(frames), params, model_config, mode="eval").data

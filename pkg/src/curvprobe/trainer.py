"""Training loop with per-sample loss and theta_1 snapshots at checkpoint epochs."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import Dataset, save_checkpoint, subset_indices
from .directions import sign_direction, input_gradient
from .errors import IncompleteLogError, TrainingDivergedError
from .trajectory import step_geometry, travel_points
from .zoo import Classifier, outputs

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 64
    lr: float = 5e-4
    weight_decay: float = 0.05
    optimizer: str = "adamw"
    schedule: str = "constant"
    ckpt_every: int = 10
    seed: int = 0
    track_n: int = 1000
    theta_step: float = 0.002

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.epochs < 0 or self.batch_size < 1 or self.ckpt_every < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and ckpt_every >= 1 required")
        if self.optimizer not in ("adamw", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def checkpoint_epochs(self) -> list[int]:
        epochs = sorted({0, *range(self.ckpt_every, self.epochs + 1, self.ckpt_every), self.epochs})
        return epochs


class AdamW:
    def __init__(self, params, lr: float, weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.wd, self.betas, self.eps = lr, weight_decay, betas, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.t += 1
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if lr == 0:
                continue
            if self.wd and p.ndim > 1:
                p.data *= np.float32(1 - lr * self.wd)
            p.data -= np.float32(lr) * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params, lr: float, weight_decay: float = 0.0, momentum: float = 0.9):
        self.params = list(params)
        self.lr, self.wd, self.momentum = lr, weight_decay, momentum
        self.buf = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        for p, b in zip(self.params, self.buf):
            if p.grad is None:
                continue
            g = p.grad + self.wd * p.data if (self.wd and p.ndim > 1) else p.grad
            b *= self.momentum
            b += g
            if lr:
                p.data -= np.float32(lr) * b


@dataclass
class TrainingDynamicsLog:
    sample_ids: np.ndarray  # (S,)
    epochs: list[int]
    loss: np.ndarray  # (S, E)
    theta1: np.ndarray  # (S, E)

    @property
    def final_theta1(self) -> np.ndarray:
        return self.theta1[:, -1]

    def validate(self) -> None:
        s, e = len(self.sample_ids), len(self.epochs)
        if self.loss.shape != (s, e) or self.theta1.shape != (s, e):
            raise IncompleteLogError(f"log shape mismatch: {s} samples, {e} checkpoints, "
                                     f"loss {self.loss.shape}, theta1 {self.theta1.shape}")
        if not np.all(np.isfinite(self.loss)):
            raise IncompleteLogError("log has missing loss entries")


@dataclass
class TrainResult:
    model: Classifier
    checkpoints: list[tuple[int, Path | None]]
    log: TrainingDynamicsLog
    history: list[float] = field(default_factory=list)  # mean training loss per epoch


def per_sample_loss(model: Classifier, images: np.ndarray, labels: np.ndarray) -> np.ndarray:
    logits, _ = outputs(model, images)
    with T.no_grad():
        return T.cross_entropy(T.Tensor(logits), labels, reduction="none").data.astype(np.float64)


def theta1_batch(model: Classifier, images: np.ndarray, labels: np.ndarray, step: float,
                 batch_size: int = 128) -> np.ndarray:
    """theta_1 along the FGSM direction for many samples, two steps of size ``step``."""
    out = np.full(len(labels), np.nan)
    for s in range(0, len(labels), batch_size):
        xb, yb = images[s:s + batch_size], labels[s:s + batch_size]
        g = input_gradient(model, xb, yb)
        for k in range(len(yb)):
            if not np.any(g[k]) or not np.all(np.isfinite(g[k])):
                continue
            pts = travel_points(xb[k], sign_direction(g[k]), 2, 2 * step)
            _, z = outputs(model, pts)
            out[s + k] = step_geometry(z)[1][0]
    return out


def _lr_at(cfg: TrainConfig, epoch: int) -> float:
    if cfg.schedule == "cosine" and cfg.epochs > 0:
        return 0.5 * cfg.lr * (1 + math.cos(math.pi * epoch / cfg.epochs))
    return cfg.lr


def train(model: Classifier, ds: Dataset, cfg: TrainConfig, out_dir=None, track_theta: bool = True) -> TrainResult:
    """Train ``model`` on ``ds``; snapshot tracked-sample losses and theta_1 at checkpoint epochs.

    Checkpoints go to ``out_dir`` as ``ckpt_epochNNNN.cprb`` for epoch 0, every
    ``ckpt_every`` epochs and the last epoch, plus ``final.cprb`` when at least
    one epoch ran.
    """
    if len(ds) == 0:
        raise ValueError("training set is empty")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    params = model.parameters()
    opt = AdamW(params, cfg.lr, cfg.weight_decay) if cfg.optimizer == "adamw" else SGD(params, cfg.lr, cfg.weight_decay)
    order_rng = np.random.default_rng([cfg.seed, 1])
    tracked = np.sort(subset_indices(len(ds), min(cfg.track_n, len(ds)), cfg.seed))
    ck_epochs = cfg.checkpoint_epochs()
    losses = np.zeros((len(tracked), len(ck_epochs)))
    thetas = np.full((len(tracked), len(ck_epochs)), np.nan)
    checkpoints: list[tuple[int, Path | None]] = []
    history: list[float] = []

    def snapshot(epoch: int) -> None:
        col = ck_epochs.index(epoch)
        model.eval()
        losses[:, col] = per_sample_loss(model, ds.images[tracked], ds.labels[tracked])
        if track_theta:
            thetas[:, col] = theta1_batch(model, ds.images[tracked], ds.labels[tracked], cfg.theta_step)
        path = None
        if out_dir is not None:
            path = save_checkpoint(model, out_dir / f"ckpt_epoch{epoch:04d}.cprb", epoch)
        checkpoints.append((epoch, path))
        if len(tracked):
            logger.info("epoch %d: tracked loss %.4f", epoch, float(losses[:, col].mean()))

    snapshot(0)
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        lr = _lr_at(cfg, epoch - 1)
        perm = order_rng.permutation(len(ds))
        total, count = 0.0, 0
        for s in range(0, len(ds), cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            logits, _ = model(ds.images[idx])
            loss = T.cross_entropy(logits, ds.labels[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                last = next((p for _, p in reversed(checkpoints) if p is not None), None)
                raise TrainingDivergedError(f"loss became {value} at epoch {epoch}", last)
            model.zero_grad()
            loss.backward()
            opt.step(lr)
            total += value * len(idx)
            count += len(idx)
        history.append(total / count)
        if epoch in ck_epochs:
            snapshot(epoch)
    model.eval()
    if out_dir is not None and cfg.epochs > 0:
        save_checkpoint(model, out_dir / "final.cprb", cfg.epochs)
    log = TrainingDynamicsLog(ds.indices[tracked], ck_epochs, losses, thetas)
    return TrainResult(model, checkpoints, log, history)


def dynamics_report(log: TrainingDynamicsLog, clip: float = 2.0) -> dict:
    """Loss-change heatmap rows, loss-vs-change scatter rows, theta_1-vs-final rows.

    ``loss_change`` rows are sorted by final theta_1 (ascending, missing last)
    and clipped to [-clip, clip]; the scatter tables keep raw values.
    """
    log.validate()
    final = log.final_theta1
    order = np.argsort(np.where(np.isfinite(final), final, np.inf), kind="stable")
    delta = np.diff(log.loss, axis=1)
    heat = []
    for s in order:
        row = {"sample_id": int(log.sample_ids[s]), "final_theta1": float(final[s])}
        for k in range(delta.shape[1]):
            row[f"d{log.epochs[k]}_{log.epochs[k + 1]}"] = float(np.clip(delta[s, k], -clip, clip))
        heat.append(row)
    loss_rows, theta_rows = [], []
    for s in range(len(log.sample_ids)):
        for k, e in enumerate(log.epochs):
            loss_rows.append({"sample_id": int(log.sample_ids[s]), "epoch": e, "loss": float(log.loss[s, k]),
                              "loss_change_to_end": float(log.loss[s, -1] - log.loss[s, k]),
                              "final_theta1": float(final[s])})
            theta_rows.append({"sample_id": int(log.sample_ids[s]), "epoch": e,
                               "theta1": float(log.theta1[s, k]), "final_theta1": float(final[s])})
    return {"loss_change": heat, "loss_scatter": loss_rows, "theta_scatter": theta_rows}


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)

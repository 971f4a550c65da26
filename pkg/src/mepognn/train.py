"""Training loop, optimiser, curriculum schedule and batched forecasting."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, NumericDomainError, Parameter
from .data import WindowSet, Windows
from .mechanistic import ClampCounter
from .model import MepoGNN

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "horizon", "train_mae", "val_mae", "seconds")


@dataclass
class TrainConfig:
    batch: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-8
    max_epochs: int = 300
    patience: int = 20
    curriculum_step: int = 2
    seed: int = 0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        self.validate()

    def validate(self) -> None:
        for name in ("batch", "lr", "max_epochs", "patience", "curriculum_step", "adam_eps"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ContractError("weight_decay must be nonnegative")
        if self.patience >= self.max_epochs:
            raise ContractError("patience must be smaller than max_epochs")
        if not all(0 <= b < 1 for b in self.adam_betas):
            raise ContractError("adam betas must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d


def curriculum_horizon(epoch: int, t_out: int, step: int = 2) -> int:
    """Supervised horizon at 1-based ``epoch``: one more day every ``step`` epochs, capped at ``t_out``."""
    if epoch < 1:
        raise ContractError("epochs are counted from 1")
    return min(math.ceil(epoch / step), t_out)


class AdamW:
    """Adaptive-moment descent with weight decay applied directly to the parameters."""

    def __init__(self, params: list[Parameter], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = [p for p in params if p.trainable]
        self.lr, self.eps, self.weight_decay = lr, eps, weight_decay
        self.b1, self.b2 = betas
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.weight_decay:
                p.value *= 1.0 - self.lr * self.weight_decay
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t}


def mae_loss(y_hat: ad.Tensor, Y: np.ndarray, horizon: int) -> ad.Tensor:
    """Mean absolute error over forecast days ``1 .. horizon``."""
    return ad.mean(ad.tabs(y_hat[:, :, :horizon] - Y[:, :, :horizon]))


def _forward(model: MepoGNN, ws: WindowSet, idx, steps: int | None = None, clamp: ClampCounter | None = None):
    O = None if ws.O is None else ws.O[idx]
    return model.forward(ws.X[idx], ws.S0[idx], ws.I0[idx], ws.R0[idx], O, steps=steps, clamp=clamp)


@dataclass
class Prediction:
    y: np.ndarray  # (W, N, T_out)
    beta: np.ndarray
    gamma: np.ndarray

    @property
    def r_hat(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return self.beta / self.gamma


def predict(model: MepoGNN, ws: WindowSet, batch: int = 64, clamp: ClampCounter | None = None) -> Prediction:
    """Forecast every window of ``ws`` without recording gradients."""
    clamp = clamp if clamp is not None else ClampCounter()
    ys, bs, gs = [], [], []
    for lo in range(0, len(ws), batch):
        idx = slice(lo, lo + batch)
        f = _forward(model, ws, idx, clamp=clamp)
        ys.append(f.y.value)
        bs.append(f.beta.value)
        gs.append(f.gamma.value)
    n, t = ws.Y.shape[1], ws.Y.shape[2]
    if not ys:
        empty = np.zeros((0, n, t))
        return Prediction(empty, empty.copy(), empty.copy())
    return Prediction(np.concatenate(ys), np.concatenate(bs), np.concatenate(gs))


def evaluate_mae(model: MepoGNN, ws: WindowSet) -> float:
    p = predict(model, ws)
    return float(np.mean(np.abs(p.y - ws.Y)))


@dataclass
class TrainResult:
    best_epoch: int
    best_val: float
    stopped_epoch: int
    log: list[dict] = field(default_factory=list)
    best_state: dict[str, np.ndarray] = field(default_factory=dict)
    clamped: int = 0


def snapshot(model: MepoGNN) -> dict[str, np.ndarray]:
    return {name: p.value.copy() for name, p in model.named_parameters().items()}


def restore(model: MepoGNN, state: dict[str, np.ndarray]) -> None:
    params = model.named_parameters()
    missing = set(params) ^ set(state)
    if missing:
        raise ContractError(f"parameter blocks differ: {sorted(missing)}")
    for name, value in state.items():
        if params[name].value.shape != value.shape:
            raise ContractError(f"block {name}: shape {value.shape} != {params[name].value.shape}")
        params[name].value[...] = value


def write_log(path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def train(model: MepoGNN, windows: Windows, cfg: TrainConfig = TrainConfig(), log_path=None,
          use_validation: bool = True, timing: bool = True) -> TrainResult:
    """Fit ``model`` on the training windows; the best-validation parameters are restored on return.

    Validation MAE is always computed over the full forecast length.  With
    ``use_validation`` false (or an empty validation split) the training MAE
    over the full length selects the checkpoint instead.  ``timing`` false
    leaves the seconds column empty so logs are byte-reproducible.
    """
    train_ws, val_ws = windows.train, windows.val
    if len(train_ws) == 0:
        raise ContractError("training split has no windows")
    if use_validation and len(val_ws) == 0:
        raise ContractError("validation split has no windows; shorten T_in/T_out or disable validation")
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    opt = AdamW(params, cfg.lr, cfg.adam_betas, cfg.adam_eps, cfg.weight_decay)
    t_out = windows.t_out
    result = TrainResult(best_epoch=0, best_val=math.inf, stopped_epoch=0)
    clamp = ClampCounter()
    for epoch in range(1, cfg.max_epochs + 1):
        start = time.perf_counter()
        h = curriculum_horizon(epoch, t_out, cfg.curriculum_step)
        order = rng.permutation(len(train_ws))
        total, count = 0.0, 0
        for b, lo in enumerate(range(0, len(order), cfg.batch)):
            idx = np.sort(order[lo:lo + cfg.batch])
            with ad.Tape() as tape:
                f = _forward(model, train_ws, idx, steps=h, clamp=clamp)
                loss = mae_loss(f.y, train_ws.Y[idx], h)
                if not np.isfinite(loss.value):
                    raise NumericDomainError(f"non-finite training loss at epoch {epoch}, batch {b}")
                tape.backward(loss, params)
            opt.step()
            total += float(loss.value) * len(idx)
            count += len(idx)
        train_mae = total / count
        score_ws = val_ws if use_validation else train_ws
        val_mae = evaluate_mae(model, score_ws)
        if not np.isfinite(val_mae):
            raise NumericDomainError(f"non-finite validation error at epoch {epoch}")
        seconds = time.perf_counter() - start if timing else None
        result.log.append({"epoch": epoch, "horizon": h, "train_mae": train_mae, "val_mae": val_mae,
                           "seconds": seconds})
        log.debug("epoch %d h=%d train %.4f val %.4f", epoch, h, train_mae, val_mae)
        result.stopped_epoch = epoch
        if val_mae < result.best_val or result.best_epoch == 0:
            result.best_val, result.best_epoch = val_mae, epoch
            result.best_state = snapshot(model)
        elif epoch - result.best_epoch >= cfg.patience:
            break
    restore(model, result.best_state)
    result.clamped = clamp.count
    if log_path is not None:
        write_log(Path(log_path), result.log)
    return result

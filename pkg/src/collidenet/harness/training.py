"""Training loop, optimizers and evaluation."""
from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import numerics as nx
from ..config import ExperimentConfig, TrainConfig
from ..datagen import ClipSample, Dataset, balance_and_augment
from ..errors import InputError, LoadError, NonFiniteError, TrainingDiverged
from ..temporal import CollideNet, predict
from .checkpoint import Checkpoint


def derive_seed(seed: int, *tags) -> int:
    """Independent 63-bit seed for a named sub-stream of ``seed``."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for tag in tags:
        words.extend(tag.encode() if isinstance(tag, str) else [int(tag)])
    return int(np.random.SeedSequence(words).generate_state(2, np.uint64)[0] >> np.uint64(1))


class Adam:
    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params, lr: float):
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data = p.data - self.lr * p.grad


def make_optimizer(cfg: TrainConfig, params):
    return Adam(params, cfg.lr) if cfg.optimizer == "adam" else SGD(params, cfg.lr)


def stack_inputs(samples: list[ClipSample]) -> np.ndarray:
    # stored precision (float32); the model widens each batch to float64
    return np.stack([s.data for s in samples])


def labels_of(samples: list[ClipSample]) -> np.ndarray:
    return np.array([s.ttc_label for s in samples], dtype=np.float64)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict]
    best_epoch: int
    best_val_mse: float

    def history_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.history)


def _dump_diagnostics(path: Path | None, info: dict) -> None:
    if path is None:
        return
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "diagnostics.json", "w") as fh:
        json.dump(info, fh, indent=2, sort_keys=True, default=str)


def mse_of(model: CollideNet, samples: list[ClipSample], batch_size: int) -> float:
    pred = predict(model, stack_inputs(samples), batch_size)
    return float(np.mean((pred - labels_of(samples)) ** 2))


def train(model: CollideNet, dataset: Dataset, config: ExperimentConfig, seed: int = 0,
          out_dir: str | os.PathLike | None = None, log=None) -> TrainResult:
    """Adam/SGD on MSE with validation-driven lr halving and early stopping.

    Returns the best-validation checkpoint (epoch 0 is the initial model) and
    one history record per epoch.
    """
    cfg = config.train
    cfg.validate()
    if not dataset.train or not dataset.val:
        raise InputError("training needs non-empty train and val splits")
    out_path = Path(out_dir) if out_dir is not None else None
    train_set = balance_and_augment(dataset.train, derive_seed(seed, "balance")) if cfg.balance else list(dataset.train)
    x_all = stack_inputs(train_set)
    y_all = labels_of(train_set)
    rng = np.random.default_rng(derive_seed(seed, "shuffle"))
    opt = make_optimizer(cfg, model.parameters())

    best_val = mse_of(model, dataset.val, cfg.eval_batch_size)
    best = Checkpoint.from_model(model, config, epoch=0, seed=seed, val_mse=repr(best_val))
    best_epoch, since_best, since_decay = 0, 0, 0
    history: list[dict] = []
    recent: list[float] = []
    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        order = rng.permutation(len(y_all))
        total = 0.0
        for step, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            model.zero_grad()
            try:
                with nx.Tape():
                    pred = model(x_all[idx].astype(np.float64))
                    loss = nx.mean(nx.square(nx.sub(pred, y_all[idx])))
                value = loss.item()
                if not np.isfinite(value):
                    raise NonFiniteError("loss is not finite")
                nx.backward(loss)
            except NonFiniteError as exc:
                _dump_diagnostics(out_path, {
                    "epoch": epoch, "step": step, "lr": opt.lr, "error": str(exc), "recent_losses": recent[-20:],
                    "param_norms": {k: float(np.linalg.norm(p.data)) for k, p in model.named_parameters()},
                })
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}: {exc}") from exc
            opt.step()
            recent.append(value)
            total += value * len(idx)
        train_mse = total / len(y_all)
        val_mse = mse_of(model, dataset.val, cfg.eval_batch_size)
        record = {"epoch": epoch, "train_mse": train_mse, "val_mse": val_mse, "lr": opt.lr, "lr_decay": False}
        if val_mse < best_val:
            best_val, best_epoch, since_best, since_decay = val_mse, epoch, 0, 0
            best = Checkpoint.from_model(model, config, epoch=epoch, seed=seed, val_mse=repr(val_mse))
        else:
            since_best += 1
            since_decay += 1
            if since_decay >= cfg.plateau_patience:
                opt.lr *= 0.5
                since_decay = 0
                record["lr_decay"] = True
        history.append(record)
        if log is not None:
            log(f"epoch {epoch}: train {train_mse:.4f} val {val_mse:.4f} lr {record['lr']:.2e}")
        if since_best >= cfg.early_stop_patience:
            break
    return TrainResult(best, history, best_epoch, best_val)


@dataclass
class EvalReport:
    mse: float
    ids: list[str]
    labels: np.ndarray
    predictions: np.ndarray
    fingerprint: str
    seed: int
    split: str = "test"
    extra: dict = field(default_factory=dict)

    @property
    def residuals(self) -> np.ndarray:
        return self.predictions - self.labels

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("id,ttc_label,prediction,residual\n")
        for i, y, p, r in zip(self.ids, self.labels, self.predictions, self.residuals):
            buf.write(f"{i},{y!r},{p!r},{r!r}\n")
        return buf.getvalue()

    def summary_csv(self) -> str:
        return (f"split,n,mse,fingerprint,seed\n"
                f"{self.split},{len(self.ids)},{self.mse!r},{self.fingerprint},{self.seed}\n")


def evaluate_predictor(predict_fn, samples: list[ClipSample], fingerprint: str = "", seed: int = 0,
                       split: str = "test") -> EvalReport:
    """Score any ``inputs -> predictions`` callable on a list of samples."""
    if not samples:
        raise InputError("cannot evaluate an empty split")
    y = labels_of(samples)
    pred = np.asarray(predict_fn(stack_inputs(samples)), dtype=np.float64).reshape(-1)
    mse = float(np.mean((pred - y) ** 2))
    return EvalReport(mse, [s.id for s in samples], y, pred, fingerprint, seed, split)


def evaluate(ckpt: Checkpoint, dataset: Dataset, split: str = "test", batch_size: int | None = None) -> EvalReport:
    model = ckpt.build_model()
    samples = dataset.split(split)
    if samples and samples[0].data.shape[0] != model.eff.temporal.seq_len:
        raise LoadError("dataset clips do not match the checkpoint's sequence length")
    bs = batch_size or ckpt.config.train.eval_batch_size
    seed = int(ckpt.meta.get("seed", 0))
    return evaluate_predictor(lambda x: predict(model, x, bs), samples, ckpt.config.fingerprint(), seed, split)


def constant_baseline(dataset: Dataset, split: str = "test") -> EvalReport:
    """Predict the training-label mean everywhere."""
    c = float(labels_of(dataset.train).mean())
    return evaluate_predictor(lambda x: np.full(len(x), c), dataset.split(split), "constant-mean", 0, split)

"""Desk-scale training: Adam, a one-cycle schedule, and checkpoints.

A dataset is a list of :class:`~mixerbench.tasks.TaskSample`; it is
split 60/20/20 into train/val/test by a seeded permutation.  Training
minimizes the task loss with Adam under a one-cycle learning rate, logs
a CSV row per step, tracks the best validation loss, and restores the
best parameters on exit.

Checkpoints are flat binary files::

    magic b'MBCK' | u16 version | u32 config length | config text
    u64 step | f64 val loss | u32 param count
    per param: u16 name length | name utf-8 | array block

with array blocks as in :mod:`mixerbench.tasks`.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from . import tasks as TK
from .backbones import Model, config_text
from .params import named_parameters
from .tasks import TaskSample, _pack_array, _unpack_array
from .tensor import Tensor

__all__ = [
    "TrainConfig",
    "TrainResult",
    "AdamState",
    "init_adam",
    "adam_step",
    "zero_grads",
    "one_cycle_lr",
    "split_dataset",
    "sample_loss",
    "train",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
]

SPLIT_FRACTIONS = (0.6, 0.2, 0.2)


@dataclass
class TrainConfig:
    steps: int = 200
    batch_size: int = 4
    lr_max: float = 3e-4
    warmup_frac: float = 0.25
    eval_every: int = 25
    seed: int = 0
    augment: bool = False
    log_path: object = None          # CSV with step,train_loss,val_loss,lr
    checkpoint_path: object = None   # best-validation weights


@dataclass
class TrainResult:
    history: list
    best_step: int
    best_val_loss: float
    splits: dict


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_adam(model) -> AdamState:
    state = AdamState()
    for name, p in named_parameters(model):
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(model, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place Adam update; parameters without a gradient are skipped."""
    state.step += 1
    t = state.step
    for name, p in named_parameters(model):
        if p.grad is None:
            continue
        g = p.grad.data
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def zero_grads(model) -> None:
    for _, p in named_parameters(model):
        p.grad = None


def one_cycle_lr(step: int, total_steps: int, lr_max: float,
                 warmup_frac: float = 0.25) -> float:
    """Cosine ramp from lr_max/25 to lr_max, then cosine decay to lr_max/1e4.

    The peak sits exactly at ``round(warmup_frac * total_steps)`` and the
    schedule ends exactly at ``lr_max / 1e4`` when ``step == total_steps``.
    """
    if total_steps <= 0:
        raise ValueError(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside schedule [0, {total_steps}]")
    warmup = max(int(round(warmup_frac * total_steps)), 1)
    lr_start = lr_max / 25.0
    lr_end = lr_max / 1e4
    if step < warmup:
        u = step / warmup
        return lr_start + (lr_max - lr_start) * 0.5 * (1.0 - math.cos(math.pi * u))
    u = (step - warmup) / max(total_steps - warmup, 1)
    return lr_end + (lr_max - lr_end) * 0.5 * (1.0 + math.cos(math.pi * u))


# ---------------------------------------------------------------------------
# Data handling
# ---------------------------------------------------------------------------

def split_dataset(count: int, seed: int = 0) -> dict:
    """Seeded 60/20/20 permutation split of sample indices."""
    if count < 5:
        raise ValueError(f"need at least 5 samples to split, got {count}")
    order = np.random.default_rng((seed, 17)).permutation(count)
    n_train = max(int(round(SPLIT_FRACTIONS[0] * count)), 1)
    n_val = max(int(round(SPLIT_FRACTIONS[1] * count)), 1)
    return {
        "train": [int(i) for i in order[:n_train]],
        "val": [int(i) for i in order[n_train : n_train + n_val]],
        "test": [int(i) for i in order[n_train + n_val :]],
    }


def sample_loss(model: Model, sample: TaskSample) -> Tensor:
    out = model.forward(T.constant(sample.image)).output
    if model.task == "denoising":
        return TK.denoise_loss(out, sample.target)
    return TK.cross_entropy(out, sample.target)


def _dataset_loss(model: Model, dataset: list, indices) -> float:
    total = 0.0
    for i in indices:
        total += float(sample_loss(model, dataset[i]).data)
    return total / max(len(indices), 1)


def _snapshot(model) -> dict:
    return {name: p.data.copy() for name, p in named_parameters(model)}


def _restore(model, snapshot: dict) -> None:
    for name, p in named_parameters(model):
        p.data[...] = snapshot[name]


# ---------------------------------------------------------------------------
# The loop
# ---------------------------------------------------------------------------

def train(model: Model, dataset: list, config: TrainConfig) -> TrainResult:
    if model.task == "features":
        raise ValueError("cannot train a features-only model; pick a task head")
    for sample in dataset:
        if sample.task != model.task:
            raise ValueError(f"dataset task {sample.task!r} != model task {model.task!r}")
    splits = split_dataset(len(dataset), config.seed)
    rng = np.random.default_rng((config.seed, 23))
    state = init_adam(model)
    history: list = []
    best_val = math.inf
    best_step = -1
    best_params = _snapshot(model)

    log_fh = open(config.log_path, "w") if config.log_path else None
    if log_fh:
        log_fh.write("step,train_loss,val_loss,lr\n")
    try:
        for step in range(config.steps):
            lr = one_cycle_lr(step, config.steps, config.lr_max, config.warmup_frac)
            picks = rng.choice(splits["train"], size=config.batch_size, replace=True)
            zero_grads(model)
            with T.Tape() as tape:
                total = None
                for k, i in enumerate(picks):
                    sample = dataset[int(i)]
                    if config.augment:
                        sample = TK.augment(sample, rng=np.random.default_rng(
                            (config.seed, step, int(k))))
                    loss = sample_loss(model, sample)
                    total = loss if total is None else total + loss
                total = T.mul_scalar(total, 1.0 / config.batch_size)
            train_loss = float(total.data)
            if not math.isfinite(train_loss):
                raise RuntimeError(f"non-finite training loss at step {step}")
            T.backward(tape, total)
            adam_step(model, state, lr)

            val_loss = None
            if (step + 1) % config.eval_every == 0 or step == config.steps - 1:
                val_loss = _dataset_loss(model, dataset, splits["val"])
                if val_loss < best_val:
                    best_val = val_loss
                    best_step = step
                    best_params = _snapshot(model)
                    if config.checkpoint_path:
                        save_checkpoint(config.checkpoint_path, model,
                                        step=step, val_loss=val_loss)
            row = {"step": step, "train_loss": train_loss, "val_loss": val_loss, "lr": lr}
            history.append(row)
            if log_fh:
                val_text = "" if val_loss is None else f"{val_loss:.8g}"
                log_fh.write(f"{step},{train_loss:.8g},{val_text},{lr:.8g}\n")
    finally:
        if log_fh:
            log_fh.close()

    _restore(model, best_params)
    return TrainResult(history=history, best_step=best_step,
                       best_val_loss=best_val, splits=splits)


def evaluate(model: Model, dataset: list, indices=None) -> dict:
    """Task metrics with bootstrap intervals over the given samples."""
    if indices is None:
        indices = range(len(dataset))
    samples = [dataset[int(i)] for i in indices]
    if model.task == "segmentation":
        scores = []
        for s in samples:
            out = model.forward(T.constant(s.image)).output
            pred = np.argmax(out.data, axis=0)
            scores.append(TK.mean_dice(pred, s.target, model.num_classes))
        lo, hi = TK.bootstrap_ci(scores)
        return {"mean_dice": float(np.mean(scores)), "mean_dice_ci": (lo, hi)}
    if model.task == "denoising":
        model_scores, baseline_scores = [], []
        for s in samples:
            out = model.forward(T.constant(s.image)).output
            model_scores.append(TK.ssim(out.data[0], s.target[0]))
            baseline_scores.append(TK.ssim(s.image[0], s.target[0]))
        lo, hi = TK.bootstrap_ci(model_scores)
        return {
            "ssim": float(np.mean(model_scores)),
            "ssim_ci": (lo, hi),
            "baseline_ssim": float(np.mean(baseline_scores)),
        }
    if model.task == "classification":
        scores, labels = [], []
        for s in samples:
            logits = model.forward(T.constant(s.image)).output.data
            shifted = np.exp(logits - logits.max())
            scores.append(float(shifted[1] / shifted.sum()))
            labels.append(int(s.target))
        return {"auroc": TK.auroc(scores, labels),
                "auroc_ci": _auroc_bootstrap(scores, labels)}
    raise ValueError(f"cannot evaluate task {model.task!r}")


def _auroc_bootstrap(scores, labels, n_boot: int = 1000, seed: int = 0) -> tuple:
    """Index bootstrap of the auroc, skipping single-class resamples."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    stats = []
    for _ in range(n_boot):
        idx = rng.integers(0, len(scores), size=len(scores))
        picked = labels[idx]
        if picked.min() == picked.max():
            continue
        stats.append(TK.auroc(scores[idx], picked))
    if not stats:
        return (math.nan, math.nan)
    return float(np.percentile(stats, 2.5)), float(np.percentile(stats, 97.5))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CK_MAGIC = b"MBCK"
_CK_VERSION = 1


def save_checkpoint(path, model: Model, step: int = 0, val_loss: float = math.nan) -> None:
    text = config_text(model.config).encode()
    items = list(named_parameters(model))
    blob = _CK_MAGIC + struct.pack("<H", _CK_VERSION)
    blob += struct.pack("<I", len(text)) + text
    blob += struct.pack("<Qd", step, val_loss)
    blob += struct.pack("<I", len(items))
    for name, p in items:
        encoded = name.encode()
        blob += struct.pack("<H", len(encoded)) + encoded
        blob += _pack_array(p.data)
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path, model: Model) -> dict:
    """Restore parameters into ``model``; config text must match exactly."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != _CK_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != _CK_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 6
    (text_len,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    text = buf[pos : pos + text_len].decode()
    pos += text_len
    if text != config_text(model.config):
        saved_hash = hashlib.sha256(text.encode()).hexdigest()
        raise ValueError(
            f"{path}: checkpoint config does not match model config "
            f"(saved hash {saved_hash[:12]})"
        )
    step, val_loss = struct.unpack_from("<Qd", buf, pos)
    pos += 16
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    stored = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos : pos + name_len].decode()
        pos += name_len
        arr, pos = _unpack_array(buf, pos)
        stored[name] = arr
    for name, p in named_parameters(model):
        if name not in stored:
            raise ValueError(f"{path}: checkpoint is missing parameter {name}")
        if stored[name].shape != p.data.shape:
            raise ValueError(
                f"{path}: shape mismatch for {name}: "
                f"{stored[name].shape} vs {p.data.shape}"
            )
        p.data[...] = stored[name]
    return {"step": int(step), "val_loss": float(val_loss), "config_text": text}

"""Supervised training on paired-dose images.

Pairs arrive in HU; both doses are converted to water-relative attenuation
(mu / mu_water = 1 + HU/1000, so air is 0 and water 1) and the low-dose
side is band-split before entering the network. The loss is mean squared
error against the normal-dose attenuation image. Validation runs the full
denoising path and reports RMSE back in HU.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .ctsim import AIR_HU, HU, CtImage, TrainingPair
from .freq import decompose
from .model import ModelConfig, TransCT, build_model
from .optim import AdamState, adam_step
from .tensor import ShapeError, Tensor, mul, sub
from .tctio import TensorFormatError, tensor_from_bytes, tensor_to_bytes

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"TCK1"


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; the last epoch checkpoint on
    disk predates the divergence."""


class CheckpointError(ValueError):
    """A checkpoint file failed to parse or disagrees with the model."""


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 8
    lr_schedule: tuple = ((0, 1e-4), (180, 1e-5))
    seed: int = 0
    # Cap on the global gradient norm; without any normalization layers
    # the residual attention stacks occasionally take one catastrophic
    # step at high lr, and a finite-but-huge spike wrecks the run. 0 = off.
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.clip_norm < 0:
            raise ValueError(f"clip_norm must be >= 0, got {self.clip_norm}")
        sched = tuple((int(e), float(lr)) for e, lr in self.lr_schedule)
        if not sched or sched[0][0] != 0:
            raise ValueError("lr_schedule must start at epoch 0")
        epochs = [e for e, _ in sched]
        if epochs != sorted(set(epochs)):
            raise ValueError(f"lr_schedule epochs must strictly increase, got {epochs}")
        if any(lr < 0 for _, lr in sched):
            raise ValueError("learning rates must be non-negative")
        self.lr_schedule = sched


def lr_at(schedule, epoch):
    lr = schedule[0][1]
    for start, value in schedule:
        if epoch >= start:
            lr = value
    return lr


def mse_loss(pred, target):
    """Mean over all elements of the squared difference."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shapes disagree: {pred.shape} vs {target.shape}")
    diff = sub(pred, target)
    return mul(diff, diff).mean()


# -- inference helpers ----------------------------------------------------


def _hu_to_rel(grid):
    """HU -> water-relative attenuation (air 0, water 1); the mu_water
    magnitude cancels out of this ratio."""
    return (1.0 + grid.astype(np.float32) / 1000.0).astype(np.float32)


def _rel_to_hu(grid):
    return (grid.astype(np.float64) - 1.0) * 1000.0


def _pad_to_multiple(grid, multiple):
    H, W = grid.shape
    ph = (-H) % multiple
    pw = (-W) % multiple
    if ph or pw:
        grid = np.pad(grid, ((0, ph), (0, pw)), mode="reflect")
    return grid, (H, W)


def denoise_image(model, img):
    """Run the full path on one HU image: convert to relative attenuation,
    pad to a multiple of 32 (reflected), band-split, denoise, crop, and
    convert back to HU (floored at air)."""
    if img.unit != HU:
        raise ValueError(f"denoise_image expects a HU image, got {img.unit!r}")
    rel = _hu_to_rel(img.grid)
    padded, (H, W) = _pad_to_multiple(rel, 32)
    bands = decompose(padded, model.config.sigma)
    x_low = Tensor(bands.low.data[None, None])
    x_high = Tensor(bands.high.data[None, None])
    out = model(x_low, x_high).data[0, 0, :H, :W]
    hu = np.maximum(_rel_to_hu(out), AIR_HU).astype(np.float32)
    return CtImage(hu, HU, img.pixel_spacing_mm)


def validate(model, pairs):
    """Mean RMSE (HU) of denoised low-dose images against normal dose."""
    if not pairs:
        raise ValueError("validate needs at least one pair")
    errs = []
    for pair in pairs:
        out = denoise_image(model, pair.ld)
        errs.append(float(np.sqrt(np.mean((out.grid - pair.nd.grid) ** 2))))
    return float(np.mean(errs))


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(model, path, epoch):
    """Single-file checkpoint: JSON header (config, epoch, parameter names)
    followed by one framed tensor per parameter. Written via a temp file so
    an interrupted save never clobbers the previous checkpoint."""
    named = list(model.named_parameters())
    header = {
        "config": asdict(model.config),
        "epoch": int(epoch),
        "names": [name for name, _ in named],
    }
    blob = json.dumps(header).encode("utf-8")
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(blob).to_bytes(4, "little"))
        fh.write(blob)
        for _, p in named:
            fh.write(tensor_to_bytes(np.asarray(p.data, dtype=np.float32)))
    os.replace(tmp, path)


def _read_checkpoint(path):
    raw = open(path, "rb").read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic {raw[:4]!r}")
    if len(raw) < 8:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    hlen = int.from_bytes(raw[4:8], "little")
    try:
        header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint header: {exc}") from None
    offset = 8 + hlen
    arrays = {}
    try:
        for name in header["names"]:
            arr, offset = tensor_from_bytes(raw, offset)
            arrays[name] = arr
    except TensorFormatError as exc:
        raise CheckpointError(f"{path}: bad tensor payload: {exc}") from None
    return header, arrays


def load_checkpoint_into(model, path):
    """Restore parameters in place; the stored config must match the
    model's. Returns the stored epoch."""
    header, arrays = _read_checkpoint(path)
    stored = header.get("config", {})
    current = asdict(model.config)
    # the init seed does not shape the architecture, so a checkpoint may
    # be restored into a model that was seeded differently
    diffs = {
        k: (stored.get(k), current.get(k))
        for k in set(stored) | set(current)
        if k != "seed" and stored.get(k) != current.get(k)
    }
    if diffs:
        raise CheckpointError(f"{path}: config mismatch {diffs}")
    for name, p in model.named_parameters():
        if name not in arrays:
            raise CheckpointError(f"{path}: checkpoint is missing parameter {name}")
        arr = arrays[name]
        if arr.shape != tuple(p.shape):
            raise CheckpointError(
                f"{path}: parameter {name} has shape {arr.shape}, expected {tuple(p.shape)}"
            )
        p.value.data = arr.astype(np.float32)
    return int(header.get("epoch", 0))


def load_checkpoint(path):
    """Rebuild the model a checkpoint describes. Returns (model, epoch)."""
    header, _ = _read_checkpoint(path)
    try:
        config = ModelConfig(**header["config"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad config block: {exc}") from None
    model = build_model(config)
    epoch = load_checkpoint_into(model, path)
    return model, epoch


# -- the loop --------------------------------------------------------------


@dataclass
class TrainResult:
    epochs_run: int
    final_train_mse: float
    final_val_rmse: float
    history: list = field(default_factory=list)


def _prepare(pairs, sigma):
    """HU pairs -> stacked relative-attenuation arrays (low band, high
    band, normal-dose target)."""
    lows, highs, targets = [], [], []
    for pair in pairs:
        bands = decompose(_hu_to_rel(pair.ld.grid), sigma)
        lows.append(bands.low.data)
        highs.append(bands.high.data)
        targets.append(_hu_to_rel(pair.nd.grid))
    stack = lambda xs: np.stack(xs)[:, None].astype(np.float32)
    return stack(lows), stack(highs), stack(targets)


def train(model, pairs, val_pairs, cfg, out_dir):
    """Run the optimization loop.

    Writes ``checkpoint.tck`` and ``history.csv`` under ``out_dir`` after
    every epoch. A non-finite loss raises TrainingDiverged and leaves the
    previous epoch's checkpoint in place.
    """
    if not pairs:
        raise ValueError("train needs at least one pair")
    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, "checkpoint.tck")
    hist_path = os.path.join(out_dir, "history.csv")

    H, W = pairs[0].ld.grid.shape
    if H % 32 or W % 32:
        raise ShapeError(f"training patches must be multiples of 32, got {H}x{W}")

    lows, highs, targets = _prepare(pairs, model.config.sigma)
    params = model.parameters()
    state = AdamState.for_params(params)
    rng = np.random.default_rng(cfg.seed)
    n = len(pairs)

    history = []
    with open(hist_path, "w", newline="") as fh:
        csv.writer(fh).writerow(["epoch", "lr", "train_mse", "val_rmse_hu", "seconds"])

    final_mse = float("nan")
    final_val = float("nan")
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = lr_at(cfg.lr_schedule, epoch)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x_low = Tensor(lows[idx])
            x_high = Tensor(highs[idx])
            target = Tensor(targets[idx])
            try:
                pred = model(x_low, x_high)
                loss = mse_loss(pred, target)
                value = loss.item()
            except ValueError as exc:
                # exploded parameters can overflow inside the forward pass
                # before the loss itself ever goes non-finite
                if "NaN or infinite" not in str(exc):
                    raise
                value = float("nan")
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}; last checkpoint kept at "
                    f"{ckpt_path}"
                )
            model.zero_grad()
            loss.backward()
            grads = [p.grad for p in params]
            if cfg.clip_norm > 0:
                gnorm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
                if gnorm > cfg.clip_norm:
                    scale = cfg.clip_norm / gnorm
                    grads = [g * scale for g in grads]
            adam_step(params, grads, state, lr)
            losses.append(value)

        final_mse = float(np.mean(losses))
        try:
            final_val = validate(model, val_pairs) if val_pairs else float("nan")
        except ValueError as exc:
            if "NaN or infinite" not in str(exc):
                raise
            raise TrainingDiverged(
                f"non-finite activations during validation at epoch {epoch}; "
                f"last checkpoint kept at {ckpt_path}"
            ) from None
        seconds = time.perf_counter() - t0
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_mse": final_mse,
            "val_rmse_hu": final_val,
            "seconds": seconds,
        }
        history.append(row)
        with open(hist_path, "a", newline="") as fh:
            csv.writer(fh).writerow(
                [epoch, f"{lr:g}", f"{final_mse:.8e}", f"{final_val:.4f}", f"{seconds:.2f}"]
            )
        if any(not np.isfinite(p.data).all() for p in params):
            raise TrainingDiverged(
                f"non-finite parameters after epoch {epoch}; last checkpoint "
                f"kept at {ckpt_path}"
            )
        save_checkpoint(model, ckpt_path, epoch)
        log.info(
            "epoch %d lr %g train_mse %.3e val_rmse %.2f HU (%.1fs)",
            epoch, lr, final_mse, final_val, seconds,
        )

    return TrainResult(
        epochs_run=cfg.epochs,
        final_train_mse=final_mse,
        final_val_rmse=final_val,
        history=history,
    )

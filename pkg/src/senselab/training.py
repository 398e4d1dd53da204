"""Two-stage supervised training with Adam and deterministic seeding.

Stage one trains the per-SU encoder end to end: every SU's sequence is a
training row carrying the shared PU label, and all rows flow through the
same weights.  Stage two freezes that encoder, caches the fused token
sequences for the whole dataset in one pass, and trains the group-level
tier on top of them.  Everything is driven by seed substreams, so a
(seed, data, config) triple maps to one exact checkpoint.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import autodiff as ad
from . import dataset as ds
from .autodiff import Tensor
from .mobility import substream, STREAM_TRAIN


class TrainingDiverged(RuntimeError):
    """Loss or a gradient stopped being finite."""


@dataclass
class TrainConfig:
    lr: float = 1e-5
    batch_size: int = 16
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.1
    finetune_su: bool = False    # stage 2 may optionally unfreeze tier one
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)

    def with_overrides(self, **kw):
        return replace(self, **kw)


@dataclass
class TrainReport:
    stage: int
    entries: list = field(default_factory=list)  # per-epoch dicts
    wall_time_s: float = 0.0
    checkpoint_hash: str = ""

    def add(self, epoch, loss, train_acc, val_acc):
        self.entries.append({"epoch": epoch, "loss": loss,
                             "train_acc": train_acc, "val_acc": val_acc})

    @property
    def final_loss(self):
        return self.entries[-1]["loss"] if self.entries else float("nan")

    def to_csv(self, path):
        """Deterministic per-epoch log (no timing columns)."""
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "loss", "train_acc", "val_acc"])
            for e in self.entries:
                writer.writerow([e["epoch"], repr(e["loss"]),
                                 repr(e["train_acc"]), repr(e["val_acc"])])

    def to_json(self, path):
        summary = {
            "stage": self.stage,
            "epochs": len(self.entries),
            "final_loss": self.final_loss,
            "final_train_acc": self.entries[-1]["train_acc"] if self.entries else None,
            "final_val_acc": self.entries[-1]["val_acc"] if self.entries else None,
            "wall_time_s": self.wall_time_s,
            "checkpoint_hash": self.checkpoint_hash,
        }
        with open(path, "w") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
            f.write("\n")


def cross_entropy(probs, labels):
    """Mean negative log-likelihood of 2-class probabilities.

    ``probs`` is a (B, 2) tensor whose rows sum to one; ``labels`` a
    length-B 0/1 array.  Probabilities are clamped to [1e-12, 1] before
    the log, so a confidently wrong prediction stays finite.
    """
    labels = np.asarray(labels)
    onehot = np.eye(2)[labels.astype(int)]
    picked = ad.reduce_sum(ad.mul(probs, Tensor(onehot)), axis=-1)
    return ad.scale(ad.reduce_mean(ad.log(ad.clamp_min(picked, 1e-12))), -1.0)


class Adam:
    """Bias-corrected Adam over a named parameter dict."""

    def __init__(self, params, cfg: TrainConfig):
        self.params = dict(params)
        self.cfg = cfg
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def step(self):
        cfg = self.cfg
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - cfg.beta1 ** t
        bc2 = 1.0 - cfg.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged(
                    f"non-finite gradient in {name} at step {t} "
                    f"(|g|_max={np.max(np.abs(g))})")
            self.m[name] = cfg.beta1 * self.m[name] + (1.0 - cfg.beta1) * g
            self.v[name] = cfg.beta2 * self.v[name] + (1.0 - cfg.beta2) * (g * g)
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def split_indices(num_samples, cfg: TrainConfig):
    """Deterministic train/validation split at the sample level."""
    order = substream(cfg.seed, STREAM_TRAIN, 0).permutation(num_samples)
    n_val = int(round(cfg.val_fraction * num_samples))
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def _batches(indices, batch_size):
    for start in range(0, len(indices), batch_size):
        yield indices[start:start + batch_size]


def _accuracy(probs_data, labels):
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(np.argmax(probs_data, axis=-1) == labels))


def train_stage1(planes, labels, model, cfg: TrainConfig):
    """Train the per-SU tier; returns (report, standardization stats).

    ``planes`` are raw (K, S, lam, H, H, C) tensors; each (sample, SU)
    pair becomes one training row with the sample's label.  The
    standardization statistics come from the training split only.
    """
    t0 = time.perf_counter()
    k, s_count = planes.shape[:2]
    train_idx, val_idx = split_indices(k, cfg)
    stats = ds.compute_standardization(planes[train_idx])
    z = ds.apply_standardization(planes, stats)

    # (sample, su) -> row
    rows = z.reshape((k * s_count,) + z.shape[2:])
    row_labels = np.repeat(labels.astype(int), s_count)
    train_rows = np.concatenate([train_idx * s_count + s for s in range(s_count)])
    train_rows.sort()
    val_rows = np.concatenate([val_idx * s_count + s for s in range(s_count)])
    val_rows.sort()

    opt = Adam({n: p for n, p in model.params.items() if n.startswith("su.")}, cfg)
    report = TrainReport(stage=1)
    for epoch in range(cfg.epochs):
        order = substream(cfg.seed, STREAM_TRAIN, 1, epoch).permutation(train_rows)
        losses, hits, seen = [], 0, 0
        for batch in _batches(order, cfg.batch_size):
            opt.zero_grad()
            probs, _ = model.su_forward(rows[batch])
            loss = cross_entropy(probs, row_labels[batch])
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(f"stage 1 loss became {value} at epoch {epoch}")
            ad.backward(loss)
            opt.step()
            losses.append(value * len(batch))
            hits += int(np.sum(np.argmax(probs.data, axis=-1) == row_labels[batch]))
            seen += len(batch)
        val_acc = _eval_su_accuracy(model, rows, row_labels, val_rows, cfg.batch_size)
        report.add(epoch, sum(losses) / seen, hits / seen, val_acc)
    report.wall_time_s = time.perf_counter() - t0
    return report, stats


def _eval_su_accuracy(model, rows, row_labels, eval_rows, batch_size):
    if len(eval_rows) == 0:
        return float("nan")
    hits = 0
    with ad.no_grad():
        for batch in _batches(eval_rows, batch_size):
            probs, _ = model.su_forward(rows[batch])
            hits += int(np.sum(np.argmax(probs.data, axis=-1) == row_labels[batch]))
    return hits / len(eval_rows)


def fused_sequences(model, planes_std, batch_size=64):
    """Frozen-tier pass: fused (K, N_t, d) token sequences for all samples."""
    k, s_count = planes_std.shape[:2]
    out = np.empty((k, model.config.n_tokens, model.config.embed_dim))
    with ad.no_grad():
        for start in range(0, k, batch_size):
            chunk = planes_std[start:start + batch_size]
            k_seqs = [model.su_forward(chunk[:, s])[1].data for s in range(s_count)]
            out[start:start + len(chunk)] = np.max(np.stack(k_seqs), axis=0)
    return out


def train_stage2(planes, labels, model, cfg: TrainConfig, stats):
    """Train the group-level tier on top of the frozen per-SU encoder.

    The fused sequences are cached in a single frozen-tier pass, so the
    stage-one weights provably cannot move (they are never in the
    gradient graph); an assertion verifies that every step.  Setting
    ``finetune_su`` instead runs the full graph and updates both tiers.
    """
    t0 = time.perf_counter()
    k = planes.shape[0]
    train_idx, val_idx = split_indices(k, cfg)
    z = ds.apply_standardization(planes, stats)
    labels = labels.astype(int)
    for p in model.params.values():
        p.grad = None  # drop stage-1 leftovers so the leak assertion is meaningful

    if cfg.finetune_su:
        opt = Adam(model.params, cfg)
    else:
        fused = fused_sequences(model, z)
        frozen_before = {n: p.data.copy() for n, p in model.params.items()
                         if n.startswith("su.")}
        opt = Adam({n: p for n, p in model.params.items() if n.startswith("col.")}, cfg)

    report = TrainReport(stage=2)
    for epoch in range(cfg.epochs):
        order = substream(cfg.seed, STREAM_TRAIN, 2, epoch).permutation(train_idx)
        losses, hits, seen = [], 0, 0
        for batch in _batches(order, cfg.batch_size):
            opt.zero_grad()
            if cfg.finetune_su:
                probs, _, _ = model.group_forward(z[batch])
            else:
                probs = model.collab_forward(Tensor(fused[batch]))
            loss = cross_entropy(probs, labels[batch])
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(f"stage 2 loss became {value} at epoch {epoch}")
            ad.backward(loss)
            if not cfg.finetune_su:
                leaked = [n for n, p in model.params.items()
                          if n.startswith("su.") and p.grad is not None]
                assert not leaked, f"gradient leaked into frozen parameters: {leaked}"
            opt.step()
            losses.append(value * len(batch))
            hits += int(np.sum(np.argmax(probs.data, axis=-1) == labels[batch]))
            seen += len(batch)
        val_acc = _eval_group_accuracy(model, z, labels, val_idx, cfg.batch_size,
                                       None if cfg.finetune_su else fused)
        report.add(epoch, sum(losses) / seen, hits / seen, val_acc)

    if not cfg.finetune_su:
        for n, before in frozen_before.items():
            assert np.array_equal(model.params[n].data, before), \
                f"frozen parameter {n} changed during stage 2"
    report.wall_time_s = time.perf_counter() - t0
    return report


def _eval_group_accuracy(model, z, labels, idx, batch_size, fused=None):
    if len(idx) == 0:
        return float("nan")
    hits = 0
    with ad.no_grad():
        for batch in _batches(idx, batch_size):
            if fused is None:
                probs, _, _ = model.group_forward(z[batch])
            else:
                probs = model.collab_forward(Tensor(fused[batch]))
            hits += int(np.sum(np.argmax(probs.data, axis=-1) == labels[batch]))
    return hits / len(idx)

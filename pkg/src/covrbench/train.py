"""Deterministic mini-batch training for both stages, with AdamW updates.

Stage 1 fits the linear classifier head on pooled frame-sequence
embeddings under softmax cross-entropy. Stage 2 fits the text projection
and fusion MLP under the hard-negative-weighted contrastive loss, using
the other targets in the batch as negatives; the base embedding tables are
never modified.

Reproducibility contract: a fixed (seed, config, data) triple produces
bitwise-identical checkpoints and metric histories on one platform. Batch
order is an epoch-wise shuffle drawn from a generator seeded once per run,
and gradient reductions happen in fixed order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .errors import MissingIdError, NumericError, ValidationError
from .loss import LossConfig, hn_nce_loss, loss_grad
from .model import (
    ClassifierHead,
    FusionParams,
    composed_backward,
    composed_forward,
    pool_frames,
    softmax,
    target_backward,
    target_forward,
)
from .store import EmbeddingTable
from .triplets import Triplet

logger = logging.getLogger(__name__)

FULL_SCALE_BATCH = 512
DESK_SCALE_BATCH = 64


@dataclass(frozen=True)
class AdamWConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int | None = None  # None: 512, or 64 below 10*512 items
    epochs: int = 100
    seed: int = 0
    adamw: AdamWConfig = field(default_factory=AdamWConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    eval_every: int = 10
    dedup_batch_labels: bool = False

    def __post_init__(self):
        if self.lr < 0:
            raise ValidationError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")

    def resolve_batch_size(self, n_items: int) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return FULL_SCALE_BATCH if n_items >= 10 * FULL_SCALE_BATCH else DESK_SCALE_BATCH

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "adamw": {
                "beta1": self.adamw.beta1,
                "beta2": self.adamw.beta2,
                "eps": self.adamw.eps,
                "weight_decay": self.adamw.weight_decay,
            },
            "loss": {"tau": self.loss.tau, "alpha": self.loss.alpha, "beta": self.loss.beta},
            "eval_every": self.eval_every,
            "dedup_batch_labels": self.dedup_batch_labels,
        }


class AdamWState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self):
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.skipped_steps = 0


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    cfg: TrainConfig,
) -> dict[str, np.ndarray]:
    """One decoupled-weight-decay update over the named parameters.

    A non-finite gradient anywhere skips the whole step and bumps the
    skipped-step counter, leaving parameters and moments untouched.
    """
    for name, g in grads.items():
        if params[name].shape != g.shape:
            raise ValidationError(f"gradient shape mismatch for {name!r}")
        if not np.all(np.isfinite(g)):
            state.skipped_steps += 1
            logger.warning("skipping update: non-finite gradient in %s", name)
            return params

    state.step += 1
    t = state.step
    a = cfg.adamw
    bc1 = 1.0 - a.beta1**t
    bc2 = 1.0 - a.beta2**t
    out = dict(params)
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        v = state.v[name]
        m = a.beta1 * m + (1.0 - a.beta1) * g
        v = a.beta2 * v + (1.0 - a.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / bc1
        v_hat = v / bc2
        p = params[name]
        out[name] = p - cfg.lr * (m_hat / (np.sqrt(v_hat) + a.eps)) - cfg.lr * a.weight_decay * p
    return out


# ---------------------------------------------------------------------------
# run bookkeeping


@dataclass
class RunManifest:
    config: dict
    seed: int
    dataset_fingerprint: str
    history: list[dict] = field(default_factory=list)
    skipped_steps: int = 0

    def append(self, row: dict) -> None:
        self.history.append(row)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "config_hash": hashlib.sha256(
                json.dumps(self.config, sort_keys=True).encode()
            ).hexdigest(),
            "seed": self.seed,
            "dataset_fingerprint": self.dataset_fingerprint,
            "history": self.history,
            "skipped_steps": self.skipped_steps,
        }

    def write(self, path: str | Path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        tmp.replace(path)


def write_metrics_csv(path: str | Path, history: list[dict]) -> None:
    path = Path(path)
    keys: list[str] = []
    for row in history:
        for k in row:
            if k not in keys:
                keys.append(k)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=keys)
        writer.writeheader()
        writer.writerows(history)
    tmp.replace(path)


def dataset_fingerprint(*parts: str) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


# ---------------------------------------------------------------------------
# stage 1


def train_stage1(
    frame_embeddings: EmbeddingTable,
    labels: Mapping[str, int],
    cfg: TrainConfig,
    head: ClassifierHead | None = None,
) -> tuple[ClassifierHead, RunManifest]:
    """Fit the classifier head on pooled clip embeddings.

    Classes must be contiguous 0..C-1 and every record in the table must
    be labeled.
    """
    ids = frame_embeddings.ids()
    for clip_id in ids:
        if clip_id not in labels:
            raise ValidationError(f"unlabeled clip {clip_id!r}")
    classes = sorted(set(labels[i] for i in ids))
    n_classes = len(classes)
    if n_classes < 2:
        raise ValidationError("training needs at least 2 classes")
    if classes != list(range(n_classes)):
        raise ValidationError(f"classes must be contiguous 0..C-1, got {classes[:5]}...")

    rng = np.random.default_rng(cfg.seed)
    if head is None:
        head = ClassifierHead.init(frame_embeddings.dim, n_classes, rng)
    x = np.stack(
        [
            pool_frames(
                frame_embeddings.get(i).frames
                if frame_embeddings.get(i).frames is not None
                else frame_embeddings.get(i).vector,
                head.pooling,
            )
            for i in ids
        ]
    )
    y = np.array([labels[i] for i in ids], dtype=np.int64)
    n = len(ids)
    batch = min(cfg.resolve_batch_size(n), n)

    params = {"classifier.W": head.W.astype(np.float64), "classifier.b": head.b.astype(np.float64)}
    state = AdamWState()
    manifest = RunManifest(
        config=cfg.to_dict(),
        seed=cfg.seed,
        dataset_fingerprint=dataset_fingerprint(frame_embeddings.checksum(), str(sorted(labels.items()))),
    )

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        counted = 0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            xb, yb = x[idx], y[idx]
            logits = xb @ params["classifier.W"] + params["classifier.b"]
            probs = softmax(logits)
            p_true = np.clip(probs[np.arange(len(idx)), yb], 1e-12, None)
            loss = float(-np.log(p_true).mean())
            if not np.isfinite(loss):
                state.skipped_steps += 1
                continue
            one_hot = np.zeros_like(probs)
            one_hot[np.arange(len(idx)), yb] = 1.0
            dlogits = (probs - one_hot) / len(idx)
            grads = {
                "classifier.W": xb.T @ dlogits,
                "classifier.b": dlogits.sum(axis=0),
            }
            params = adamw_step(params, grads, state, cfg)
            total += loss * len(idx)
            counted += len(idx)
        if counted == 0:
            raise NumericError(f"every batch skipped in epoch {epoch}")
        manifest.append({"epoch": epoch, "loss": total / counted})

    head.W = params["classifier.W"]
    head.b = params["classifier.b"]
    manifest.skipped_steps = state.skipped_steps
    return head, manifest


def stage1_accuracy(
    frame_embeddings: EmbeddingTable, labels: Mapping[str, int], head: ClassifierHead
) -> float:
    ids = frame_embeddings.ids()
    correct = 0
    for clip_id in ids:
        rec = frame_embeddings.get(clip_id)
        pooled = pool_frames(rec.frames if rec.frames is not None else rec.vector, head.pooling)
        pred = int(np.argmax(pooled @ head.W + head.b))
        correct += int(pred == labels[clip_id])
    return correct / len(ids)


# ---------------------------------------------------------------------------
# stage 2


def _batches(
    order: np.ndarray,
    batch: int,
    target_keys: list[str] | None,
) -> list[np.ndarray]:
    """Slice an epoch order into batches, optionally avoiding duplicate
    target keys inside a batch (deferred items keep their relative order)."""
    if target_keys is None:
        return [order[i : i + batch] for i in range(0, len(order), batch)]
    batches: list[list[int]] = []
    pending = [int(i) for i in order]
    while pending:
        used: set[str] = set()
        cur: list[int] = []
        deferred: list[int] = []
        for i in pending:
            key = target_keys[i]
            if len(cur) < batch and key not in used:
                cur.append(i)
                used.add(key)
            else:
                deferred.append(i)
        batches.append(cur)  # always nonempty, so this terminates
        pending = deferred
    return [np.asarray(b, dtype=np.int64) for b in batches]


def train_stage2(
    triplets: list[Triplet],
    video_embeddings: EmbeddingTable,
    text_embeddings: EmbeddingTable,
    params: FusionParams,
    cfg: TrainConfig,
    target_labels: Mapping[str, str] | None = None,
    eval_fn: Callable[[FusionParams, int], dict] | None = None,
) -> tuple[FusionParams, RunManifest]:
    """Contrastive fit of projection + fusion against in-batch negatives.

    Text embeddings are looked up by modification text (the text table is
    keyed by the exact string). ``eval_fn``, when given, is called every
    ``cfg.eval_every`` epochs and its dict is merged into that epoch's row.
    """
    if not triplets:
        raise ValidationError("no triplets to train on")
    for t in triplets:
        if t.query_clip_id not in video_embeddings:
            raise MissingIdError(f"query clip {t.query_clip_id!r} not in video table")
        if t.target_clip_id not in video_embeddings:
            raise MissingIdError(f"target clip {t.target_clip_id!r} not in video table")
        if t.modification_text not in text_embeddings:
            raise MissingIdError(f"no text embedding for {t.modification_text!r}")

    zq = np.stack([video_embeddings.vector(t.query_clip_id) for t in triplets]).astype(np.float64)
    zt = np.stack([video_embeddings.vector(t.target_clip_id) for t in triplets]).astype(np.float64)
    ztext = np.stack([text_embeddings.vector(t.modification_text) for t in triplets]).astype(
        np.float64
    )

    n = len(triplets)
    batch = cfg.resolve_batch_size(n)
    if batch > n:
        logger.warning("batch size %d exceeds %d triplets; using one batch", batch, n)
        batch = n

    keys: list[str] | None = None
    if cfg.dedup_batch_labels:
        if target_labels is not None:
            keys = [target_labels[t.target_clip_id] for t in triplets]
        else:
            keys = [t.target_clip_id for t in triplets]

    rng = np.random.default_rng(cfg.seed)
    param_dict = dict(params.named_parameters())
    trainable = [name for name in param_dict if not name.startswith("classifier.")]
    state = AdamWState()
    manifest = RunManifest(
        config=cfg.to_dict(),
        seed=cfg.seed,
        dataset_fingerprint=dataset_fingerprint(
            video_embeddings.checksum(),
            text_embeddings.checksum(),
            str(len(triplets)),
        ),
    )

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        counted = 0
        for idx in _batches(order, batch, keys):
            zqm, cache = composed_forward(zq[idx], ztext[idx], params)
            zt_n, tcache = target_forward(zt[idx], params)
            s = zqm @ zt_n.T
            loss = hn_nce_loss(s, cfg.loss)
            if not np.isfinite(loss):
                state.skipped_steps += 1
                continue
            ds = loss_grad(s, cfg.loss)
            grads = composed_backward(ds @ zt_n, params, cache)
            grads.update(target_backward(ds.T @ zqm, params, tcache))
            current = {name: param_dict[name] for name in trainable if name in grads}
            updated = adamw_step(current, grads, state, cfg)
            for name, arr in updated.items():
                param_dict[name] = arr
                params.set_parameter(name, arr)
            total += loss * len(idx)
            counted += len(idx)
        if counted == 0:
            raise NumericError(f"every batch skipped in epoch {epoch}")
        row = {"epoch": epoch, "loss": total / counted}
        if eval_fn is not None and (epoch + 1) % cfg.eval_every == 0:
            row.update(eval_fn(params, epoch))
        manifest.append(row)

    manifest.skipped_steps = state.skipped_steps
    return params, manifest

"""Trainable retrieval head: text projection, fusion MLP, classifier head.

Everything here is plain numpy with hand-written backward passes; there is
no autodiff. Forward functions cache what the backward needs. Parameters
live in float64 so finite-difference checks are meaningful; checkpoints
store float32 (see save_checkpoint).

Composed-query path: the projected text embedding is concatenated with the
query video embedding, pushed through a two-hidden-layer ReLU MLP, and the
output is unit-normalized by the loss path (the gradient flows through the
normalization).
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CorruptionError,
    DegenerateVectorError,
    FormatError,
    NumericError,
    ShapeError,
    ValidationError,
)

CHECKPOINT_MAGIC = b"TFCP"
CHECKPOINT_VERSION = 1

POOL_MEAN = "mean"
POOL_MAX = "max"


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class ProjectionLayer:
    """Affine map taking raw text-encoder outputs into the video space."""

    W: np.ndarray  # (d_text, d_proj)
    b: np.ndarray  # (d_proj,)

    @classmethod
    def init(cls, d_text: int, d_proj: int, rng: np.random.Generator) -> "ProjectionLayer":
        return cls(W=glorot_uniform(rng, d_text, d_proj), b=np.zeros(d_proj))

    @property
    def d_text(self) -> int:
        return self.W.shape[0]

    @property
    def d_proj(self) -> int:
        return self.W.shape[1]


@dataclass
class FusionMLP:
    """Two ReLU hidden layers plus a linear output."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    @classmethod
    def init(
        cls,
        d_in: int,
        d_out: int,
        rng: np.random.Generator,
        hidden: tuple[int, int] | None = None,
    ) -> "FusionMLP":
        h1, h2 = hidden if hidden is not None else (d_in, max(1, d_in // 2))
        return cls(
            W1=glorot_uniform(rng, d_in, h1),
            b1=np.zeros(h1),
            W2=glorot_uniform(rng, h1, h2),
            b2=np.zeros(h2),
            W3=glorot_uniform(rng, h2, d_out),
            b3=np.zeros(d_out),
        )

    @property
    def d_in(self) -> int:
        return self.W1.shape[0]

    @property
    def d_out(self) -> int:
        return self.W3.shape[1]

    def validate(self) -> None:
        if self.W1.shape[1] != self.W2.shape[0] or self.W2.shape[1] != self.W3.shape[0]:
            raise ShapeError("fusion layer shapes do not chain")


@dataclass
class ClassifierHead:
    """Linear classifier over pooled frame rows."""

    W: np.ndarray  # (d, C)
    b: np.ndarray  # (C,)
    pooling: str = POOL_MEAN

    @classmethod
    def init(cls, d: int, n_classes: int, rng: np.random.Generator, pooling: str = POOL_MEAN) -> "ClassifierHead":
        if n_classes < 2:
            raise ValidationError(f"need at least 2 classes, got {n_classes}")
        if pooling not in (POOL_MEAN, POOL_MAX):
            raise ValidationError(f"unknown pooling {pooling!r}")
        return cls(W=glorot_uniform(rng, d, n_classes), b=np.zeros(n_classes), pooling=pooling)

    @property
    def n_classes(self) -> int:
        return self.W.shape[1]


@dataclass
class FusionParams:
    """Full trainable state of the retrieval head.

    The target branch is the identity unless ``target_projection`` is set,
    in which case targets pass through their own affine layer before
    normalization.
    """

    projection: ProjectionLayer
    fusion: FusionMLP
    classifier: ClassifierHead | None = None
    target_projection: ProjectionLayer | None = None

    @classmethod
    def init(
        cls,
        d_video: int,
        d_text: int,
        seed: int,
        d_proj: int | None = None,
        hidden: tuple[int, int] | None = None,
        n_classes: int | None = None,
        learned_target_projection: bool = False,
    ) -> "FusionParams":
        rng = np.random.default_rng(seed)
        d_proj = d_video if d_proj is None else d_proj
        projection = ProjectionLayer.init(d_text, d_proj, rng)
        fusion = FusionMLP.init(d_video + d_proj, d_video, rng, hidden=hidden)
        classifier = None
        if n_classes is not None:
            classifier = ClassifierHead.init(d_video, n_classes, rng)
        target_projection = None
        if learned_target_projection:
            target_projection = ProjectionLayer.init(d_video, d_video, rng)
        return cls(projection, fusion, classifier, target_projection)

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        """Flat (name, array) view in fixed declaration order."""
        params = [
            ("projection.W", self.projection.W),
            ("projection.b", self.projection.b),
            ("fusion.W1", self.fusion.W1),
            ("fusion.b1", self.fusion.b1),
            ("fusion.W2", self.fusion.W2),
            ("fusion.b2", self.fusion.b2),
            ("fusion.W3", self.fusion.W3),
            ("fusion.b3", self.fusion.b3),
        ]
        if self.target_projection is not None:
            params.append(("target_projection.W", self.target_projection.W))
            params.append(("target_projection.b", self.target_projection.b))
        if self.classifier is not None:
            params.append(("classifier.W", self.classifier.W))
            params.append(("classifier.b", self.classifier.b))
        return params

    def set_parameter(self, name: str, value: np.ndarray) -> None:
        obj_name, attr = name.split(".")
        obj = getattr(self, obj_name)
        if obj is None:
            raise ValidationError(f"parameter group {obj_name!r} not present")
        if getattr(obj, attr).shape != value.shape:
            raise ShapeError(f"shape mismatch for {name}")
        setattr(obj, attr, value)


# ---------------------------------------------------------------------------
# forward ops


def project_text(z_text: np.ndarray, proj: ProjectionLayer) -> np.ndarray:
    """z_m = W^T z_text + b. Accepts a vector or a batch of rows."""
    z = np.asarray(z_text, dtype=np.float64)
    if z.shape[-1] != proj.d_text:
        raise ShapeError(f"text dim {z.shape[-1]} != projection input {proj.d_text}")
    return z @ proj.W + proj.b


def fuse(z_q: np.ndarray, z_m: np.ndarray, mlp: FusionMLP) -> np.ndarray:
    """Composed-query embedding from concatenated [z_q ; z_m]."""
    out, _ = fuse_forward(z_q, z_m, mlp)
    return out


def fuse_forward(z_q: np.ndarray, z_m: np.ndarray, mlp: FusionMLP) -> tuple[np.ndarray, dict]:
    """Forward pass that also returns the cache needed by fuse_backward."""
    zq = np.atleast_2d(np.asarray(z_q, dtype=np.float64))
    zm = np.atleast_2d(np.asarray(z_m, dtype=np.float64))
    if zq.shape[0] != zm.shape[0]:
        raise ShapeError("query and text batches differ in length")
    x = np.concatenate([zq, zm], axis=1)
    if x.shape[1] != mlp.d_in:
        raise ShapeError(f"fusion input dim {x.shape[1]} != expected {mlp.d_in}")
    a1 = x @ mlp.W1 + mlp.b1
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ mlp.W2 + mlp.b2
    h2 = np.maximum(a2, 0.0)
    out = h2 @ mlp.W3 + mlp.b3
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite values in fusion forward pass")
    cache = {"x": x, "a1": a1, "h1": h1, "a2": a2, "h2": h2, "d_q": zq.shape[1]}
    if np.asarray(z_q).ndim == 1:
        out = out[0]
    return out, cache


def fuse_backward(d_out: np.ndarray, mlp: FusionMLP, cache: dict) -> tuple[dict, np.ndarray, np.ndarray]:
    """Gradients of the fusion output: (parameter grads, d_z_q, d_z_m)."""
    d_out = np.atleast_2d(np.asarray(d_out, dtype=np.float64))
    x, a1, h1, a2, h2 = cache["x"], cache["a1"], cache["h1"], cache["a2"], cache["h2"]
    grads = {}
    grads["fusion.W3"] = h2.T @ d_out
    grads["fusion.b3"] = d_out.sum(axis=0)
    dh2 = d_out @ mlp.W3.T
    da2 = dh2 * (a2 > 0)
    grads["fusion.W2"] = h1.T @ da2
    grads["fusion.b2"] = da2.sum(axis=0)
    dh1 = da2 @ mlp.W2.T
    da1 = dh1 * (a1 > 0)
    grads["fusion.W1"] = x.T @ da1
    grads["fusion.b1"] = da1.sum(axis=0)
    dx = da1 @ mlp.W1.T
    d_q = cache["d_q"]
    return grads, dx[:, :d_q], dx[:, d_q:]


def normalize_rows(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateVectorError("cannot normalize zero rows")
    return x / norms


def normalize_rows_backward(d_y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Backward of row-wise unit normalization y = x / ||x||."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d_y = np.atleast_2d(np.asarray(d_y, dtype=np.float64))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    y = x / norms
    return (d_y - (d_y * y).sum(axis=1, keepdims=True) * y) / norms


def pool_frames(frames: np.ndarray, pooling: str) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 1:
        return frames
    if pooling == POOL_MEAN:
        return frames.mean(axis=0)
    if pooling == POOL_MAX:
        return frames.max(axis=0)
    raise ValidationError(f"unknown pooling {pooling!r}")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax along the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def classify(frames_or_clip: np.ndarray, head: ClassifierHead) -> np.ndarray:
    """Class probabilities for one clip (frame matrix or flat embedding)."""
    pooled = pool_frames(frames_or_clip, head.pooling)
    if pooled.shape[0] != head.W.shape[0]:
        raise ShapeError(f"input dim {pooled.shape[0]} != head dim {head.W.shape[0]}")
    return softmax(pooled @ head.W + head.b)


CROSS_ENTROPY_FLOOR = 1e-12


def cross_entropy(p_hat: np.ndarray, y: np.ndarray) -> float:
    """-log p at the true class; probabilities floored at 1e-12."""
    p_hat = np.asarray(p_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p_hat.shape != y.shape or p_hat.ndim != 1:
        raise ShapeError("cross_entropy expects matching single-sample vectors")
    hot = np.flatnonzero(y > 0.5)
    if hot.size != 1:
        raise ValidationError("label must be one-hot")
    p_true = float(p_hat[hot[0]])
    if p_true < CROSS_ENTROPY_FLOOR:
        logging.getLogger(__name__).warning(
            "true-class probability %.3g clamped to %.0e", p_true, CROSS_ENTROPY_FLOOR
        )
        p_true = CROSS_ENTROPY_FLOOR
    return -float(np.log(p_true))


# ---------------------------------------------------------------------------
# composed-query pipeline (stage 2 forward + backward)


def composed_forward(
    z_q: np.ndarray,
    z_text: np.ndarray,
    params: FusionParams,
) -> tuple[np.ndarray, dict]:
    """Unit-normalized composed-query rows plus backward cache."""
    z_m = project_text(z_text, params.projection)
    raw, cache = fuse_forward(z_q, z_m, params.fusion)
    raw = np.atleast_2d(raw)
    zqm = normalize_rows(raw)
    cache["raw"] = raw
    cache["z_text"] = np.atleast_2d(np.asarray(z_text, dtype=np.float64))
    return zqm, cache


def composed_backward(d_zqm: np.ndarray, params: FusionParams, cache: dict) -> dict:
    """Parameter gradients for the composed-query branch."""
    d_raw = normalize_rows_backward(d_zqm, cache["raw"])
    grads, _d_zq, d_zm = fuse_backward(d_raw, params.fusion, cache)
    z_text = cache["z_text"]
    grads["projection.W"] = z_text.T @ d_zm
    grads["projection.b"] = d_zm.sum(axis=0)
    return grads


def target_forward(z_t: np.ndarray, params: FusionParams) -> tuple[np.ndarray, dict]:
    """Unit-normalized target rows (identity branch unless projection set)."""
    z_t = np.atleast_2d(np.asarray(z_t, dtype=np.float64))
    if params.target_projection is not None:
        raw = project_text(z_t, params.target_projection)
    else:
        raw = z_t
    return normalize_rows(raw), {"z_t": z_t, "raw": raw}


def target_backward(d_zt: np.ndarray, params: FusionParams, cache: dict) -> dict:
    d_raw = normalize_rows_backward(d_zt, cache["raw"])
    if params.target_projection is None:
        return {}
    return {
        "target_projection.W": cache["z_t"].T @ d_raw,
        "target_projection.b": d_raw.sum(axis=0),
    }


# ---------------------------------------------------------------------------
# checkpoints


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()


def save_checkpoint(
    params: "FusionParams | list[tuple[str, np.ndarray]]",
    path: str | Path,
    config: dict | None = None,
    seed: int | None = None,
) -> None:
    """Binary checkpoint: magic, version, shape table, f32 payload in order."""
    path = Path(path)
    named = params.named_parameters() if isinstance(params, FusionParams) else list(params)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<H", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(named)))
        for name, arr in named:
            name_b = name.encode("utf-8")
            f.write(struct.pack("<H", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
        for _name, arr in named:
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tmp.replace(path)

    sidecar = {
        "config": config or {},
        "config_hash": config_hash(config or {}),
        "seed": seed,
        "parameters": {name: list(arr.shape) for name, arr in named},
    }
    side_path = path.with_name(path.name + ".json")
    side_tmp = side_path.with_name(side_path.name + ".tmp")
    side_tmp.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    side_tmp.replace(side_path)


def load_checkpoint_arrays(path: str | Path) -> dict[str, np.ndarray]:
    """Read the raw named arrays (float64) from a checkpoint file."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<H", f.read(2))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", f.read(4))
        shapes: list[tuple[str, tuple[int, ...]]] = []
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            dims = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
            shapes.append((name, dims))
        arrays: dict[str, np.ndarray] = {}
        for name, dims in shapes:
            n_values = int(np.prod(dims)) if dims else 1
            payload = f.read(4 * n_values)
            if len(payload) != 4 * n_values:
                raise CorruptionError(f"truncated checkpoint payload at {name!r}")
            arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float64)
        if f.read(1):
            raise CorruptionError("trailing bytes after checkpoint payload")
    return arrays


def load_checkpoint_into(params: FusionParams, path: str | Path) -> FusionParams:
    arrays = load_checkpoint_arrays(path)
    expected = dict(params.named_parameters())
    if set(arrays) != set(expected):
        raise ValidationError(
            f"checkpoint parameters {sorted(arrays)} do not match model {sorted(expected)}"
        )
    for name, arr in arrays.items():
        params.set_parameter(name, arr)
    return params


def params_from_arrays(arrays: dict[str, np.ndarray]) -> FusionParams:
    """Rebuild a retrieval head directly from checkpoint arrays."""
    required = [
        "projection.W", "projection.b",
        "fusion.W1", "fusion.b1", "fusion.W2", "fusion.b2", "fusion.W3", "fusion.b3",
    ]
    missing = [name for name in required if name not in arrays]
    if missing:
        raise ValidationError(f"checkpoint missing parameters: {missing}")
    projection = ProjectionLayer(W=arrays["projection.W"], b=arrays["projection.b"])
    fusion = FusionMLP(
        W1=arrays["fusion.W1"], b1=arrays["fusion.b1"],
        W2=arrays["fusion.W2"], b2=arrays["fusion.b2"],
        W3=arrays["fusion.W3"], b3=arrays["fusion.b3"],
    )
    fusion.validate()
    classifier = None
    if "classifier.W" in arrays:
        classifier = ClassifierHead(W=arrays["classifier.W"], b=arrays["classifier.b"])
    target_projection = None
    if "target_projection.W" in arrays:
        target_projection = ProjectionLayer(
            W=arrays["target_projection.W"], b=arrays["target_projection.b"]
        )
    return FusionParams(projection, fusion, classifier, target_projection)


def load_params(path: str | Path) -> FusionParams:
    return params_from_arrays(load_checkpoint_arrays(path))

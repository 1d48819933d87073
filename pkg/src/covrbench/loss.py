"""Hard-negative-weighted symmetric contrastive loss over a cosine matrix.

The batch loss takes an n x n cosine matrix S between composed queries
(rows) and targets (columns). Entries are divided by a temperature tau
before exponentiation. Negative weights come from a softmax-like scheme
over a concentration-scaled copy of the raw cosines, beta * S: row i of
the query->target weights puts mass (n-1) * softmax_{j != i}(beta * S[i, j])
on the negatives and a constant alpha on the diagonal; the target->query
weights do the same column-wise. With alpha = 1 and beta = 0 every
negative weighs 1 and the loss is exactly symmetric InfoNCE.

Two deliberate conventions, fixed here so callers and tests agree:
  * tau divides every similarity term of the loss (the exponentiated
    entries and the diagonal term), while the weight computation sees the
    raw cosines scaled only by beta. This keeps beta's scale independent
    of tau.
  * Weights are constants with respect to differentiation by default
    (a reweighting, not an objective term). ``through_weights=True``
    differentiates the full expression instead, for ablations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVectorError, NumericError, ShapeError, ValidationError


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.07
    alpha: float = 1.0
    beta: float = 0.0
    n: int | None = None

    def __post_init__(self):
        if not self.tau > 0:
            raise ValidationError(f"tau must be positive, got {self.tau}")
        if not 0 < self.alpha <= 1:
            raise ValidationError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.beta < 0:
            raise ValidationError(f"beta must be >= 0, got {self.beta}")

    def check_batch(self, s: np.ndarray) -> None:
        if self.n is not None and s.shape[0] != self.n:
            raise ShapeError(f"batch size {s.shape[0]} != configured n={self.n}")


def _as_square(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"similarity matrix must be square, got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise NumericError("similarity matrix contains non-finite values")
    return s


def similarity_matrix(zqm: np.ndarray, zt: np.ndarray) -> np.ndarray:
    """Pairwise cosine matrix between rows of ``zqm`` and rows of ``zt``."""
    zqm = np.asarray(zqm, dtype=np.float64)
    zt = np.asarray(zt, dtype=np.float64)
    if zqm.ndim != 2 or zt.ndim != 2 or zqm.shape != zt.shape:
        raise ShapeError(f"expected matching 2-d inputs, got {zqm.shape} and {zt.shape}")
    nq = np.linalg.norm(zqm, axis=1)
    nt = np.linalg.norm(zt, axis=1)
    if np.any(nq == 0) or np.any(nt == 0):
        raise DegenerateVectorError("zero row in similarity inputs")
    return (zqm / nq[:, None]) @ (zt / nt[:, None]).T


def hn_weights(s: np.ndarray, cfg: LossConfig) -> tuple[np.ndarray, np.ndarray]:
    """Negative-sample weights for both retrieval directions.

    Returns (w_i2t, w_t2i). Row i of w_i2t holds the weights applied to
    exp(S'[i, :]) in the query->target term; column i of w_t2i holds those
    for exp(S'[:, i]) in the target->query term. Diagonals are alpha. Each
    off-diagonal row of w_i2t and column of w_t2i sums to n - 1.
    """
    s = _as_square(s)
    cfg.check_batch(s)
    n = s.shape[0]
    if n == 1:
        w = np.array([[cfg.alpha]])
        return w, w.copy()

    scaled = cfg.beta * s
    off = ~np.eye(n, dtype=bool)

    def directional(rows: np.ndarray) -> np.ndarray:
        # (n-1) * softmax over the off-diagonal entries of each row,
        # max-shifted for stability.
        shift = np.where(off, rows, -np.inf).max(axis=1, keepdims=True)
        e = np.exp(rows - shift) * off
        w = (n - 1) * e / e.sum(axis=1, keepdims=True)
        np.fill_diagonal(w, cfg.alpha)
        return w

    w_i2t = directional(scaled)
    w_t2i = directional(scaled.T).T
    return w_i2t, w_t2i


def _weighted_lse(scores: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Row-wise log(sum_j exp(scores[i, j]) * weights[i, j]), max-shifted."""
    shift = scores.max(axis=1, keepdims=True)
    return shift[:, 0] + np.log(np.sum(np.exp(scores - shift) * weights, axis=1))


def hn_nce_loss(
    s: np.ndarray,
    cfg: LossConfig,
    weights: tuple[np.ndarray, np.ndarray] | None = None,
) -> float:
    """Batch loss value.

    ``weights`` can be supplied to evaluate the loss with weights frozen at
    a reference similarity matrix, which is how the default (stop-gradient)
    derivative is checked against finite differences.
    """
    s = _as_square(s)
    cfg.check_batch(s)
    w_i2t, w_t2i = weights if weights is not None else hn_weights(s, cfg)
    sp = s / cfg.tau
    # query->target reads rows of S'; target->query reads columns.
    i2t = _weighted_lse(sp, w_i2t)
    t2i = _weighted_lse(sp.T, w_t2i.T)
    per_row = i2t + t2i - 2.0 * np.diag(sp)
    return float(per_row.mean())


def loss_grad(s: np.ndarray, cfg: LossConfig, through_weights: bool = False) -> np.ndarray:
    """d(loss)/dS, treating the weights as constants unless asked otherwise."""
    s = _as_square(s)
    cfg.check_batch(s)
    n = s.shape[0]
    w_i2t, w_t2i = hn_weights(s, cfg)
    sp = s / cfg.tau

    def weighted_softmax(scores: np.ndarray, weights: np.ndarray) -> np.ndarray:
        shift = scores.max(axis=1, keepdims=True)
        e = np.exp(scores - shift) * weights
        return e / e.sum(axis=1, keepdims=True)

    p = weighted_softmax(sp, w_i2t)          # rows: query->target posteriors
    q = weighted_softmax(sp.T, w_t2i.T).T    # columns: target->query posteriors
    grad = (p + q - 2.0 * np.eye(n)) / (n * cfg.tau)

    if through_weights and cfg.beta != 0.0 and n > 1:
        off = ~np.eye(n, dtype=bool)

        def weight_path(scores_raw: np.ndarray, posterior: np.ndarray) -> np.ndarray:
            # d/dS of log sum_j exp(S'_ij) w_ij through w's softmax, per row:
            # sum_{j!=i} posterior_ij * beta * (delta_jl - u_il) for l != i,
            # with u the off-diagonal softmax of beta * S.
            shift = np.where(off, cfg.beta * scores_raw, -np.inf).max(axis=1, keepdims=True)
            e = np.exp(cfg.beta * scores_raw - shift) * off
            u = e / e.sum(axis=1, keepdims=True)
            po = posterior * off
            return cfg.beta * (po - po.sum(axis=1, keepdims=True) * u)

        grad = grad + weight_path(s, p) / n
        grad = grad + (weight_path(s.T, q.T) / n).T

    return grad

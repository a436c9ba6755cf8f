"""Forward-pass numerical primitives: attention, score fusion, and losses.

These are the deterministic arithmetic kernels of the detection head:
scaled dot-product attention over BEV feature positions, convex two-branch
classification-score fusion, focal and smooth-L1 losses, and the weighted
total-loss composition.  No learning happens here; parameters arrive as
plain arrays and scalars.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError, ValidationError

PROB_CLAMP = 1e-6  # guards ln(p) at the extremes
_ROW_SUM_TOL = 1e-6


def attention_weights(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Row-wise softmax of Q K^T / sqrt(c): one weight row per position.

    Q and K are (N, c) with matching shapes; the result is (N, N) with
    rows summing to 1.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.ndim == 1:
        q = q[:, None]
    if k.ndim == 1:
        k = k[:, None]
    if q.shape != k.shape:
        raise DomainError(f"Q shape {q.shape} does not match K shape {k.shape}")
    if q.ndim != 2 or q.shape[0] < 1 or q.shape[1] < 1:
        raise DomainError(f"expected (N >= 1, c >= 1) matrices, got shape {q.shape}")
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(k))):
        raise DomainError("attention inputs must be finite")
    logits = q @ k.T / math.sqrt(q.shape[1])
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    return w


def attention_context(w: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Convex combination of value rows by attention weights: o = W V."""
    w = np.asarray(w, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise DomainError(f"weight matrix must be square, got shape {w.shape}")
    if values.shape[0] != w.shape[1]:
        raise DomainError(
            f"value rows {values.shape[0]} do not match weight columns {w.shape[1]}"
        )
    if np.max(np.abs(w.sum(axis=1) - 1.0), initial=0.0) > _ROW_SUM_TOL:
        raise DomainError("weight rows must sum to 1")
    return w @ values


@dataclass(frozen=True)
class FusionInputs:
    """Two per-anchor score maps and their per-position mixing weights.

    All four arrays broadcast together; weights are nonnegative and sum
    to 1 at every position.
    """

    p_local: np.ndarray
    p_vote: np.ndarray
    w_local: np.ndarray
    w_vote: np.ndarray

    def __post_init__(self):
        for name in ("p_local", "p_vote", "w_local", "w_vote"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if np.any(self.w_local < 0) or np.any(self.w_vote < 0):
            raise ValidationError("fusion weights must be nonnegative")
        if np.max(np.abs(self.w_local + self.w_vote - 1.0), initial=0.0) > _ROW_SUM_TOL:
            raise ValidationError("fusion weights must sum to 1 at every position")


def fuse_scores(inputs: FusionInputs) -> np.ndarray:
    """Per-position convex blend: W_local * P_local + W_vote * P_vote."""
    return inputs.w_local * inputs.p_local + inputs.w_vote * inputs.p_vote


def focal_loss(p_t, alpha_f: float = 0.25, gamma_f: float = 2.0):
    """-alpha (1 - p)^gamma ln(p) with p clamped to [1e-6, 1 - 1e-6].

    Exactly 0 for p_t >= 1 (perfect prediction, no clamp artifact).
    Broadcasts over arrays.
    """
    p = np.asarray(p_t, dtype=np.float64)
    clamped = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = -alpha_f * (1.0 - clamped) ** gamma_f * np.log(clamped)
    out = np.where(p >= 1.0, 0.0, loss)
    return float(out) if np.isscalar(p_t) else out


def smooth_l1(d):
    """0.5 d^2 inside |d| < 1, |d| - 0.5 outside; continuous at |d| = 1."""
    a = np.abs(np.asarray(d, dtype=np.float64))
    out = np.where(a < 1.0, 0.5 * a * a, a - 0.5)
    return float(out) if np.isscalar(d) else out


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the total loss composition.

    alpha/beta/gamma mix the three classification terms, w_dist/w_ang the
    two voting terms, and lambda_det/lambda_nv the two top-level groups.
    """

    lambda_det: float = 1.0
    lambda_nv: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 2.0
    w_dist: float = 0.2
    w_ang: float = 0.06
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0

    def __post_init__(self):
        for name in ("lambda_det", "lambda_nv", "alpha", "beta", "gamma",
                     "w_dist", "w_ang", "focal_alpha", "focal_gamma"):
            if getattr(self, name) < 0:
                raise ValidationError(f"loss weight {name} must be nonnegative")


class TotalLoss(NamedTuple):
    l_cls: float
    l_det: float
    l_nv: float
    loss: float


def total_loss(l_local, l_vote, l_fusion, l_reg, l_dist, l_ang,
               w: LossWeights = LossWeights()) -> TotalLoss:
    """Compose precomputed loss terms into the weighted training objective.

    l_cls = alpha*l_local + beta*l_vote + gamma*l_fusion
    l_det = l_cls + l_reg
    l_nv  = w_dist*l_dist + w_ang*l_ang
    loss  = lambda_det*l_det + lambda_nv*l_nv
    """
    l_cls = w.alpha * l_local + w.beta * l_vote + w.gamma * l_fusion
    l_det = l_cls + l_reg
    l_nv = w.w_dist * l_dist + w.w_ang * l_ang
    return TotalLoss(l_cls, l_det, l_nv, w.lambda_det * l_det + w.lambda_nv * l_nv)

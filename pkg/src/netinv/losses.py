"""Loss terms for inversion and training-like reconstruction.

Every term returns a scalar tracked tensor so gradients flow back to the
generator; `LossBreakdown` records the raw values and weights for logging.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .errors import ContractError, DomainError

EPS = 1e-8


@dataclass
class LossBreakdown:
    terms: dict                 # name -> raw value (float)
    weights: dict               # name -> weight (float)
    total: float

    def check(self, rel=1e-6):
        want = sum(self.weights.get(k, 0.0) * v for k, v in self.terms.items())
        scale = max(abs(want), abs(self.total), 1e-12)
        if abs(want - self.total) > rel * scale:
            raise ContractError(f"loss breakdown inconsistent: total {self.total} "
                                f"vs weighted sum {want}")
        return self


def _as_tensor(x):
    return x if isinstance(x, ag.Tensor) else ag.Tensor(np.asarray(x, dtype=np.float32))


def kl_loss(probs, target):
    """Mean over the batch of KL(target || probs), eps-floored inside logs."""
    probs = _as_tensor(probs)
    target = np.asarray(target if not isinstance(target, ag.Tensor) else target.data,
                        dtype=np.float64)
    for name, rows in (("probs", probs.data), ("target", target)):
        sums = np.sum(rows, axis=-1)
        if np.any(np.abs(sums - 1.0) > 1e-3):
            raise ContractError(f"{name} rows are not distributions (sum deviates by "
                                f"{np.max(np.abs(sums - 1.0)):.2e})")
    t = ag.Tensor(target.astype(probs.dtype))
    log_ratio = ag.sub(ag.log(ag.add(t, EPS)), ag.log(ag.add(probs, EPS)))
    return ag.mean(ag.sum_(ag.mul(t, log_ratio), axis=-1))


def weighted_ce_loss(logits, labels, class_weights=None):
    """Mean over the batch of weight[label] * (-log softmax(logits)[label])."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    m = logits.shape[-1]
    if labels.min() < 0 or labels.max() >= m:
        raise DomainError(f"labels outside [0, {m}): {labels.min()}..{labels.max()}")
    if class_weights is None:
        class_weights = np.ones(m)
    class_weights = np.asarray(class_weights, dtype=np.float64)
    onehot = np.zeros((len(labels), m), dtype=logits.dtype)
    onehot[np.arange(len(labels)), labels] = 1.0
    per_sample = ag.neg(ag.sum_(ag.mul(ag.log_softmax(logits), ag.Tensor(onehot)), axis=-1))
    w = class_weights[labels].astype(logits.dtype)
    return ag.mean(ag.mul(per_sample, ag.Tensor(w)))


def _row_normalize(features):
    norms = ag.sqrt(ag.add(ag.sum_(ag.square(features), axis=1, keepdims=True), EPS ** 2))
    return ag.div(features, norms)


def cosine_diversity_loss(features):
    """Mean pairwise cosine similarity over unordered feature pairs."""
    features = _as_tensor(features)
    B = features.shape[0]
    if B < 2:
        raise ContractError("cosine diversity needs a batch of at least 2")
    n = _row_normalize(features)
    gram = ag.matmul(n, ag.transpose(n))
    offdiag = (1.0 - np.eye(B)).astype(features.dtype)
    return ag.div(ag.sum_(ag.mul(gram, ag.Tensor(offdiag))),
                  ag.Tensor(np.asarray(B * (B - 1), dtype=features.dtype)))


def ortho_loss(features):
    """Squared Frobenius distance of the normalized Gram matrix from identity."""
    features = _as_tensor(features)
    B = features.shape[0]
    if B < 1:
        raise ContractError("ortho loss needs a non-empty batch")
    n = _row_normalize(features)
    gram = ag.matmul(n, ag.transpose(n))
    eye = ag.Tensor(np.eye(B, dtype=features.dtype))
    return ag.sum_(ag.square(ag.sub(gram, eye)))


def tv_loss(images):
    """Mean squared adjacent-pixel difference, normalized per image pixel."""
    images = _as_tensor(images)
    B, C, H, W = images.shape
    if H < 2 or W < 2:
        raise ContractError(f"tv loss needs H, W >= 2, got {images.shape}")
    dh = ag.sub(ag.take_slice(images, 2, 1, H), ag.take_slice(images, 2, 0, H - 1))
    dw = ag.sub(ag.take_slice(images, 3, 1, W), ag.take_slice(images, 3, 0, W - 1))
    total = ag.add(ag.sum_(ag.square(dh)), ag.sum_(ag.square(dw)))
    return ag.div(total, ag.Tensor(np.asarray(B * C * H * W, dtype=images.dtype)))


def pixel_loss(images):
    """Mean squared hinge outside [0, 1]: (max(0, x-1))^2 + (max(0, -x))^2."""
    images = _as_tensor(images)
    over = ag.relu(ag.sub(images, 1.0))
    under = ag.relu(ag.neg(images))
    return ag.mean(ag.add(ag.square(over), ag.square(under)))


def compose_total(terms, weights, order):
    """Weighted sum of loss tensors in a fixed key order, skipping zero weights.

    Using one composition routine everywhere keeps the inversion and
    reconstruction totals bit-consistent when the extra weights are zero.
    """
    total = None
    for name in order:
        w = weights.get(name, 0.0)
        if w == 0.0 or name not in terms:
            continue
        piece = ag.mul(terms[name], ag.Tensor(np.asarray(w, dtype=terms[name].dtype)))
        total = piece if total is None else ag.add(total, piece)
    return total


def soften_onehot(labels, m, s=0.1, dtype=np.float32):
    """KL target: (1-s) * onehot + s/m."""
    labels = np.asarray(labels, dtype=np.int64)
    t = np.full((len(labels), m), s / m, dtype=dtype)
    t[np.arange(len(labels)), labels] += 1.0 - s
    return t

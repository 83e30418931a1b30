"""Loss functions used by the layout model.

All losses reduce to scalars.  Masked variants average over the mask's
active entries (a zero mask yields zero loss rather than dividing by
zero).
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, log_softmax


def _mask_array(mask, fallback_shape):
    if mask is None:
        return np.ones(fallback_shape)
    mask = np.asarray(mask, dtype=np.float64)
    return mask


def l2_loss(pred, target, mask=None):
    """Mean squared error; `mask` broadcasts against pred's leading axes."""
    target = np.asarray(target, dtype=np.float64)
    diff = pred - Tensor(target)
    sq = diff * diff
    if mask is None:
        return sq.mean() if sq.size else Tensor(0.0)
    mask = _mask_array(mask, pred.shape)
    while mask.ndim < len(pred.shape):
        mask = mask[..., None]
    weight = np.broadcast_to(mask, pred.shape)
    total = float(weight.sum())
    if total == 0.0:
        return Tensor(0.0)
    return (sq * weight).sum() * (1.0 / total)


def cross_entropy(logits, labels, mask=None):
    """Softmax cross entropy; labels are integer class ids.

    logits: (..., k); labels: (...) ints; mask: (...) of {0,1}.
    """
    labels = np.asarray(labels)
    logp = log_softmax(logits, axis=-1)
    onehot = np.zeros(logits.shape)
    np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
    picked = (logp * onehot).sum(axis=-1)
    if mask is None:
        return -picked.mean() if picked.size else Tensor(0.0)
    mask = _mask_array(mask, picked.shape)
    total = float(mask.sum())
    if total == 0.0:
        return Tensor(0.0)
    return (picked * mask).sum() * (-1.0 / total)


def kl_standard_normal(mu, logvar):
    """KL(q || N(0, I)) for diagonal Gaussians, averaged over the batch.

    mu, logvar: (B, d).  Per sample: -0.5 * sum(1 + logvar - mu^2 - var).
    """
    var = logvar.exp()
    per_dim = 1.0 + logvar - mu * mu - var
    return per_dim.sum(axis=-1).mean() * -0.5

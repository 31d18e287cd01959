"""Classifier-based estimate of the total correlation of residuals."""
from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .nets import Mlp


class DiscriminatorError(Exception):
    pass


class NoiseDiscriminator(Mlp):
    """Logit of "jointly drawn" versus "independently shuffled" residual vectors."""

    def __init__(self, rng, in_dim, hidden=512, depth=3, name="disc"):
        super().__init__(rng, (in_dim,) + (hidden,) * depth + (1,), name)
        self.in_dim = in_dim

    def logits(self, v):
        return self(v).reshape(-1)


def permute_negatives(residuals, rng):
    """Shuffle every column independently across the batch."""
    r = np.asarray(residuals, dtype=float)
    if r.ndim != 2 or r.shape[0] < 2:
        raise DiscriminatorError("need a 2-d batch with at least two rows")
    idx = np.argsort(rng.random(r.shape), axis=0)
    return np.take_along_axis(r, idx, axis=0)


def _frozen_logits(D, v):
    """Logits whose graph reaches ``v`` but not the discriminator parameters."""
    saved = [(layer, layer.w, layer.b) for layer in D.layers]
    try:
        for layer, w, b in saved:
            layer.w, layer.b = dc.Tensor(w.data), dc.Tensor(b.data)
        return D.logits(v)
    finally:
        for layer, w, b in saved:
            layer.w, layer.b = w, b


def tc_loss(D, positives):
    """Mean log density ratio ``log D / (1 - D)``, i.e. the mean logit."""
    return _frozen_logits(D, positives).mean()


def disc_loss(D, positives, negatives):
    """Negated logistic objective; only the discriminator receives gradient."""
    pos = np.asarray(positives.data if isinstance(positives, dc.Tensor) else positives)
    neg = np.asarray(negatives.data if isinstance(negatives, dc.Tensor) else negatives)
    if pos.shape != neg.shape:
        raise DiscriminatorError(f"batch mismatch {pos.shape} vs {neg.shape}")
    lp = D.logits(pos)
    ln = D.logits(neg)
    return 0.5 * (dc.softplus(-lp).mean() + dc.softplus(ln).mean())


def accuracy(D, positives, negatives):
    with dc.no_grad():
        lp = D.logits(np.asarray(positives)).data
        ln = D.logits(np.asarray(negatives)).data
    return float(0.5 * ((lp > 0).mean() + (ln < 0).mean()))

"""Softmax head on the latent code and the out-of-sample inference path."""
from __future__ import annotations

import numpy as np

from .nn import softmax


def classify(z, weight, bias):
    """Logits and softmax probabilities for one latent vector or a batch of rows."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    if Z.shape[1] != weight.shape[0]:
        raise ValueError(f"latent vector has length {Z.shape[1]}, head expects {weight.shape[0]}")
    logits = Z @ weight + bias
    probs = softmax(logits)
    return (logits[0], probs[0]) if single else (logits, probs)


def predict_unseen(x, model):
    """Class id(s) for raw sample(s) via encoder -> FC -> argmax.

    Accepts a single sample with the model's input shape or a batch. Only the
    encoder and head are used; the self-expression matrix is never read.
    """
    x = np.asarray(x, dtype=float)
    single = x.shape == model.input_shape or (x.ndim == 1 and x.size == int(np.prod(model.input_shape)))
    batch = x[None] if single else x
    Z = model.encode(batch)
    _, probs = classify(Z, model.head.params["W"], model.head.params["b"])
    pred = np.argmax(probs, axis=1)
    return int(pred[0]) if single else pred


def update_centroids(logits, labels, previous=None, k=None):
    """Per-cluster mean of the logits; empty clusters keep their previous centroid (or zero)."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if k is None:
        k = len(previous) if previous is not None else int(labels.max()) + 1
    out = np.zeros((k, logits.shape[1])) if previous is None else np.array(previous, dtype=float)
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, logits.shape[1]))
    np.add.at(sums, labels, logits)
    nonempty = counts > 0
    out[nonempty] = sums[nonempty] / counts[nonempty, None]
    return out

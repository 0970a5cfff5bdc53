"""Training objective: cross-entropy plus center and speaker-basis terms.

The total objective is ``L = L_ce + lam * L_center + L_basis``.  Class
centers are not backprop parameters; they follow the count-normalized
update rule of the original center-loss formulation, applied once per
optimizer step.
"""

from __future__ import annotations

import warnings

import numpy as np

from . import tensor as T
from .tensor import Tensor, cross_entropy  # re-exported: cross_entropy is the CE term

__all__ = ["cross_entropy", "CenterBank", "center_loss", "update_centers",
           "basis_loss", "combined_loss"]

BASIS_NORM_EPS = 1e-8


class CenterBank:
    """One center per training speaker, updated outside backprop."""

    def __init__(self, num_speakers, embedding_dim, alpha=0.5, dtype=np.float64):
        self.centers = np.zeros((num_speakers, embedding_dim), dtype=dtype)
        self.alpha = alpha

    @property
    def num_speakers(self):
        return self.centers.shape[0]

    @property
    def embedding_dim(self):
        return self.centers.shape[1]


def center_loss(embeddings, labels, bank):
    """(1/2) sum_i ||x_i - c_{y_i}||^2 over the mini-batch.

    Differentiable w.r.t. the embeddings; centers enter as constants.
    """
    labels = np.asarray(labels)
    if embeddings.shape[1] != bank.embedding_dim:
        raise ValueError(
            f"embedding dim {embeddings.shape[1]} != bank dim {bank.embedding_dim}")
    gathered = Tensor(bank.centers[labels].astype(embeddings.dtype))
    diff = embeddings - gathered
    return (diff * diff).sum() * 0.5


def update_centers(embeddings, labels, bank):
    """Count-normalized center update: c_j -= alpha * sum(c_j - x_i) / (1 + n_j)."""
    emb = embeddings.data if isinstance(embeddings, Tensor) else np.asarray(embeddings)
    labels = np.asarray(labels)
    for j in np.unique(labels):
        idx = labels == j
        delta = (bank.centers[j] - emb[idx]).sum(axis=0) / (1.0 + idx.sum())
        bank.centers[j] -= bank.alpha * delta


def basis_loss(weight):
    """Sum of pairwise cosines between output-layer weight columns.

    Both (i, j) and (j, i) orderings are counted, so M=2 identical columns
    give exactly 2.  Norm products are floored at a small epsilon so
    zero columns cannot divide by zero.
    """
    if weight.ndim != 2 or weight.shape[1] < 2:
        raise ValueError(f"basis loss needs a (D, M>=2) weight, got shape {weight.shape}")
    norms_sq = (weight * weight).sum(axis=0, keepdims=True)  # (1, M)
    if np.any(norms_sq.data < BASIS_NORM_EPS ** 2):
        warnings.warn("basis loss: near-zero basis vector, norm epsilon-stabilized")
    norms = T.sqrt(norms_sq)
    gram = T.matmul(weight.T, weight)                         # (M, M)
    denom = T.maximum_const(T.matmul(norms.T, norms), BASIS_NORM_EPS)
    cosines = gram / denom
    off_diag = Tensor(1.0 - np.eye(weight.shape[1], dtype=weight.dtype))
    return (cosines * off_diag).sum()


def combined_loss(logits, embeddings, labels, bank, basis_weight, lam=1e-3):
    """Single scalar node: L_ce + lam * L_center + L_basis."""
    if lam < 0:
        raise ValueError(f"center-loss weight must be non-negative, got {lam}")
    return (cross_entropy(logits, labels)
            + lam * center_loss(embeddings, labels, bank)
            + basis_loss(basis_weight))

"""Trial-pair feature constructions and back-end classifiers.

Pair features over embeddings e (enrol) and t (test), both of dimension D:

* b-vector:    concat(e + t, e - t, e * t)          -> 3D
* concat&mul:  concat(e, t, e * t)                  -> 3D
* rb-vector:   b-vector plus PCA-reduced b-vectors of each side against a
               k-means codebook of training embeddings -> 3D + 2*K*d_pca

The back-end DNN is four 1024-unit leaky-ReLU layers with a 2-class softmax
head; the returned score is the same-speaker probability.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Linear, Module
from .tensor import Tensor

COSINE_EPS = 1e-12

BACKEND_KINDS = ("cosine", "b-vector", "rb-vector", "concat-mul")


@dataclass
class TrialPair:
    enrol: np.ndarray
    test: np.ndarray
    label: int | None = None  # 1 same speaker, 0 different

    def __post_init__(self):
        self.enrol = np.asarray(self.enrol, dtype=np.float64)
        self.test = np.asarray(self.test, dtype=np.float64)
        if self.enrol.shape != self.test.shape:
            raise ValueError(
                f"embedding dims differ: {self.enrol.shape} vs {self.test.shape}")


def cosine_score(pair):
    """cos(enrol, test) in [-1, 1], epsilon-stabilized against zero vectors."""
    e, t = pair.enrol, pair.test
    denom = np.linalg.norm(e) * np.linalg.norm(t)
    if denom < COSINE_EPS:
        warnings.warn("cosine score of a near-zero embedding, epsilon-stabilized")
        denom = COSINE_EPS
    return float(np.dot(e, t) / denom)


def b_vector(pair):
    """concat(e + t, e - t, e * t); dimension 3D."""
    e, t = pair.enrol, pair.test
    return np.concatenate([e + t, e - t, e * t])


def concat_mul(pair):
    """concat(e, t, e * t); dimension 3D."""
    e, t = pair.enrol, pair.test
    return np.concatenate([e, t, e * t])


# -- representative codebook (k-means + PCA) -----------------------------------


def _kmeans_pp_init(x, k, rng):
    n = len(x)
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        probs = d2 / d2.sum() if d2.sum() > 0 else np.full(n, 1.0 / n)
        centroids[i] = x[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, ((x - centroids[i]) ** 2).sum(axis=1))
    return centroids


def kmeans(x, k, seed=0, max_iter=100):
    """Lloyd's algorithm with k-means++ init; converges on an assignment fixpoint.

    Empty clusters are re-seeded from the point farthest from its assigned
    centroid.  Returns (centroids, assignments, inertia_history).
    """
    x = np.asarray(x, dtype=np.float64)
    if len(x) < k:
        raise ValueError(f"k-means needs at least k={k} points, got {len(x)}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(x, k, rng)
    assign = None
    inertia_history = []
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        inertia_history.append(float(d2[np.arange(len(x)), new_assign].sum()))
        for j in range(k):
            members = x[new_assign == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
            else:
                farthest = d2[np.arange(len(x)), new_assign].argmax()
                centroids[j] = x[farthest]
                new_assign[farthest] = j
        if assign is not None and np.array_equal(assign, new_assign):
            break
        assign = new_assign
    return centroids, assign, inertia_history


class PCA:
    """Plain SVD-based PCA with orthonormal components (F, d)."""

    def __init__(self, n_components):
        self.n_components = n_components
        self.mean = None
        self.components = None

    def fit(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.n_components > min(x.shape):
            raise ValueError(
                f"d_pca={self.n_components} exceeds min(n_samples, n_features)={min(x.shape)}")
        self.mean = x.mean(axis=0)
        _, _, vt = np.linalg.svd(x - self.mean, full_matrices=False)
        self.components = vt[: self.n_components].T
        return self

    def transform(self, x):
        return (np.asarray(x) - self.mean) @ self.components


@dataclass
class RepresentativeCodebook:
    """K representative vectors plus a PCA over representative b-vectors."""

    vectors: np.ndarray  # (K, D)
    pca: PCA


def fit_codebook(train_embeddings, k=8, d_pca=16, seed=0):
    """k-means codebook plus PCA fitted on codebook-vs-training b-vectors."""
    emb = np.asarray(train_embeddings, dtype=np.float64)
    centroids, _, _ = kmeans(emb, k, seed=seed)
    bvecs = np.stack([
        b_vector(TrialPair(c, x)) for c in centroids for x in emb
    ])
    pca = PCA(d_pca).fit(bvecs)
    return RepresentativeCodebook(vectors=centroids, pca=pca)


def r_vector(embedding, codebook):
    """PCA-reduced b-vectors of one embedding against every codebook vector."""
    parts = [codebook.pca.transform(b_vector(TrialPair(c, embedding)))
             for c in codebook.vectors]
    return np.concatenate(parts)


def rb_vector(pair, codebook):
    """[b_vector(pair) | r(enrol) | r(test)]; dimension 3D + 2*K*d_pca."""
    if codebook is None or codebook.pca.components is None:
        raise ValueError("rb-vector requires a fitted codebook")
    return np.concatenate([b_vector(pair), r_vector(pair.enrol, codebook),
                           r_vector(pair.test, codebook)])


def pair_feature(kind, pair, codebook=None):
    if kind == "b-vector":
        return b_vector(pair)
    if kind == "concat-mul":
        return concat_mul(pair)
    if kind == "rb-vector":
        return rb_vector(pair, codebook)
    raise ValueError(f"unknown back-end feature kind {kind!r}")


def feature_dim(kind, embedding_dim, codebook=None):
    if kind in ("b-vector", "concat-mul"):
        return 3 * embedding_dim
    if kind == "rb-vector":
        k, d = codebook.vectors.shape[0], codebook.pca.n_components
        return 3 * embedding_dim + 2 * k * d
    raise ValueError(f"unknown back-end feature kind {kind!r}")


# -- back-end DNN ---------------------------------------------------------------


class BackendDNN(Module):
    """Four hidden FC layers with leaky ReLU and a 2-class softmax head."""

    def __init__(self, input_dim, hidden=1024, num_layers=4, slope=0.3,
                 seed=0, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.slope = slope
        self.input_dim = input_dim
        dims = [input_dim] + [hidden] * num_layers
        layers = Module()
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            layers.register_child(str(i), Linear(a, b, rng=rng, dtype=dtype))
        self.layers = self.register_child("layers", layers)
        self.head = self.register_child("head", Linear(dims[-1], 2, rng=rng, dtype=dtype))

    def forward(self, x):
        """Logits (N, 2) for a feature batch (N, input_dim)."""
        if x.shape[-1] != self.input_dim:
            raise ValueError(
                f"feature dim {x.shape[-1]} does not match model input {self.input_dim}")
        h = x if isinstance(x, Tensor) else Tensor(x)
        for layer in self.layers._children.values():
            h = T.leaky_relu(layer(h), self.slope)
        return self.head(h)

    def score(self, features):
        """Same-speaker probabilities in [0, 1] for a feature batch (N, F)."""
        features = np.atleast_2d(np.asarray(features))
        with T.no_grad():
            logits = self.forward(Tensor(features)).data
        z = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        return p[:, 1]


def backend_dnn_score(feature, model):
    """Same-speaker probability of a single pair feature."""
    return float(model.score(feature)[0])

"""Graph revision over segment embeddings: learn edges, sparsify, propagate.

Segments start as an identity graph (self-loops only). A two-layer hidden
transform produces node embeddings whose pairwise dot products score candidate
edges; each row keeps its top-K scores, the kept scores are added to the
initial adjacency, and the rows are L1-normalized so propagation is a convex
mixture. Gradients flow through the kept similarity values, so edge weights
are trained jointly with everything else.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T


def identity_graph(n: int, dtype=np.float32) -> T.Tensor:
    """The initial document graph: self-loops only."""
    return T.Tensor(np.eye(n, dtype=dtype))


def aggregate_segments(e: T.Tensor, mask: np.ndarray) -> T.Tensor:
    """(N, d) segment embeddings: mean over each segment's valid character rows."""
    n, L, d = e.shape
    counts = mask.sum(axis=1)
    if (counts == 0).any():
        empty = int(np.argmin(counts))
        raise ValueError(f"segment {empty} has no valid characters to aggregate")
    mask3 = T.repeat(T.Tensor(mask[:, :, None].astype(e.dtype)), d, axis=2)
    total = T.tsum(T.mul(e, mask3), axis=1)
    inv = T.Tensor((1.0 / counts)[:, None].astype(e.dtype))
    return T.mul(total, T.repeat(inv, d, axis=1))


def hidden_embed(se: T.Tensor, a: T.Tensor, w1: T.Tensor, w2: T.Tensor) -> T.Tensor:
    """Node embeddings for edge scoring: A . tanh(A . SE . W1) . W2."""
    return T.matmul(T.matmul(a, T.tanh(T.matmul(T.matmul(a, se), w1))), w2)


def knn_support(raw: np.ndarray, k: int) -> np.ndarray:
    """Boolean keep-mask of each row's K largest entries, ties to lower column."""
    n = raw.shape[0]
    keep = np.zeros_like(raw, dtype=bool)
    for i in range(n):
        order = np.argsort(-raw[i], kind="stable")
        keep[i, order[: min(k, n)]] = True
    return keep


def similarity_knn(he: T.Tensor, k: int) -> T.Tensor:
    """Sparse non-negative edge scores: top-K dot products per row, clamped at 0.

    Selection runs on the raw scores (negative entries can be selected and
    then clamp to zero); gradient flows through the kept entries only.
    """
    if k < 1:
        raise ValueError(f"neighbor count must be >= 1, got {k}")
    raw = T.matmul(he, T.transpose(he, (1, 0)))
    keep = knn_support(raw.data, k)
    return T.relu(T.mul(raw, T.Tensor(keep.astype(raw.dtype))))


def revise(a: T.Tensor, s: T.Tensor) -> T.Tensor:
    """Row-L1-normalize(A + S): reweight old edges and admit the new ones."""
    total = T.add(a, s)
    inv = T.power(T.tsum(total, axis=1, keepdims=True), -1.0)
    return T.mul(total, T.repeat(inv, a.shape[1], axis=1))


def graph_conv(a_revised: T.Tensor, se: T.Tensor, w3: T.Tensor) -> T.Tensor:
    """Propagate context along the revised graph: A' . SE . W3."""
    return T.matmul(T.matmul(a_revised, se), w3)


def broadcast_to_chars(se_prime: T.Tensor, e: T.Tensor, mask: np.ndarray) -> T.Tensor:
    """Add each segment's revised embedding back onto its valid character rows."""
    n, L, d = e.shape
    grown = T.repeat(T.reshape(se_prime, (n, 1, d)), L, axis=1)
    mask3 = T.repeat(T.Tensor(mask[:, :, None].astype(e.dtype)), d, axis=2)
    return T.mul(T.add(e, grown), mask3)

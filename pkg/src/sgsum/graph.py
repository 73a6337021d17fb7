"""Sentence-graph construction for one cluster.

G holds tf-idf cosine similarities for every sentence pair in the cluster
(the graph is complete; missing edges are just zero weights). G_same keeps
only same-document entries. Both are turned into nonpositive Gaussian
attention biases; the cross-document entries of the same-document bias
collapse to the constant -1/(2 sigma^2).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .textproc import Cluster, SparseVector, TfIdfModel, cosine, fit_tfidf, vectorize

BIAS_FORMS = ("paper", "squared_difference")
TFIDF_SCOPES = ("per_cluster", "global")


@dataclass(frozen=True, eq=False)
class ClusterGraph:
    n: int
    doc_of: tuple[int, ...]
    G: np.ndarray
    G_same: np.ndarray
    sigma: float


@dataclass(frozen=True, eq=False)
class BiasMatrices:
    R: np.ndarray
    R_prime: np.ndarray


def similarity_matrix(vectors: Sequence[SparseVector]) -> np.ndarray:
    """Symmetric pairwise cosine matrix; diagonal pinned to 1 for nonzero vectors."""
    n = len(vectors)
    sim = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        sim[i, i] = 1.0 if vectors[i].pairs else 0.0
        for j in range(i + 1, n):
            sim[i, j] = sim[j, i] = cosine(vectors[i], vectors[j])
    return sim


def same_document_mask(doc_of: Sequence[int]) -> np.ndarray:
    ids = np.asarray(doc_of)
    return np.equal.outer(ids, ids)


def build_cluster_graph(
    cluster: Cluster,
    tfidf_scope: str = "per_cluster",
    sigma: float = 1.0,
    model: TfIdfModel | None = None,
) -> ClusterGraph:
    """Build G and G_same for a cluster.

    With per-cluster scope the tf-idf model is fitted on this cluster's
    sentences; with global scope a pre-fitted corpus model must be supplied.
    """
    if sigma <= 0.0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if tfidf_scope not in TFIDF_SCOPES:
        raise ValueError(f"tfidf_scope must be one of {TFIDF_SCOPES}, got {tfidf_scope!r}")
    sentences = cluster.sentences()
    if not sentences:
        raise ValueError(f"cluster {cluster.cluster_id!r} has no sentences with tokens")
    if tfidf_scope == "per_cluster":
        model = fit_tfidf([s.tokens for s in sentences])
    elif model is None:
        raise ValueError("global tfidf_scope requires a fitted model")
    vectors = [vectorize(model, s.tokens) for s in sentences]
    sim = similarity_matrix(vectors)
    doc_of = tuple(s.doc_index for s in sentences)
    g_same = np.where(same_document_mask(doc_of), sim, 0.0)
    return ClusterGraph(n=len(sentences), doc_of=doc_of, G=sim, G_same=g_same, sigma=sigma)


def gaussian_bias(matrix: np.ndarray, sigma: float, form: str = "paper") -> np.ndarray:
    """Elementwise attention penalty derived from a similarity matrix.

    form="paper" uses -(1 - m^2) / (2 sigma^2); form="squared_difference"
    uses -(1 - m)^2 / (2 sigma^2). Both are 0 at m=1 and most negative at
    m=0, so higher similarity always means a milder penalty.
    """
    if sigma <= 0.0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    m = np.asarray(matrix, dtype=np.float64)
    denom = 2.0 * sigma * sigma
    if form == "paper":
        return -(1.0 - m * m) / denom
    if form == "squared_difference":
        return -((1.0 - m) ** 2) / denom
    raise ValueError(f"bias form must be one of {BIAS_FORMS}, got {form!r}")


def bias_matrices(graph: ClusterGraph, form: str = "paper") -> BiasMatrices:
    """R from G and R_prime from G_same, using the graph's sigma."""
    return BiasMatrices(
        R=gaussian_bias(graph.G, graph.sigma, form),
        R_prime=gaussian_bias(graph.G_same, graph.sigma, form),
    )

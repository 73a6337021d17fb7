"""Cluster graph construction and the Gaussian attention biases."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import brute_force_cosine, brute_force_tfidf_weights
from sgsum.graph import (
    bias_matrices,
    build_cluster_graph,
    gaussian_bias,
    same_document_mask,
    similarity_matrix,
)
from sgsum.textproc import fit_tfidf, make_cluster, vectorize


class TestBuildClusterGraph:
    def test_single_sentence(self):
        cluster = make_cluster("c", [("d0", "Một hai ba.")])
        g = build_cluster_graph(cluster)
        assert g.n == 1
        assert g.G.tolist() == [[1.0]]
        assert g.G_same.tolist() == [[1.0]]

    def test_identical_single_sentence_documents(self):
        cluster = make_cluster("c", [("d0", "Một hai ba."), ("d1", "Một hai ba.")])
        g = build_cluster_graph(cluster)
        assert np.allclose(g.G, [[1.0, 1.0], [1.0, 1.0]], atol=1e-12)
        assert g.G_same.tolist() == [[1.0, 0.0], [0.0, 1.0]]

    def test_matches_brute_force(self, vn_cluster):
        g = build_cluster_graph(vn_cluster)
        sentences = vn_cluster.sentences()
        corpus = [list(s.tokens) for s in sentences]
        for i in range(g.n):
            for j in range(g.n):
                wa = brute_force_tfidf_weights(corpus, corpus[i])
                wb = brute_force_tfidf_weights(corpus, corpus[j])
                assert g.G[i, j] == pytest.approx(brute_force_cosine(wa, wb), abs=1e-12)
                same_doc = sentences[i].doc_index == sentences[j].doc_index
                expected_same = g.G[i, j] if same_doc else 0.0
                assert g.G_same[i, j] == expected_same

    def test_diagonal_and_symmetry(self, vn_cluster):
        g = build_cluster_graph(vn_cluster)
        assert np.all(np.diag(g.G) == 1.0)
        assert np.array_equal(g.G, g.G.T)
        assert np.array_equal(g.G_same, g.G_same.T)
        assert np.all(g.G >= 0.0) and np.all(g.G <= 1.0)

    def test_bad_sigma_rejected(self, vn_cluster):
        with pytest.raises(ValueError, match="sigma"):
            build_cluster_graph(vn_cluster, sigma=0.0)

    def test_global_scope_requires_model(self, vn_cluster):
        with pytest.raises(ValueError, match="model"):
            build_cluster_graph(vn_cluster, tfidf_scope="global")

    def test_global_scope_with_model(self, vn_cluster):
        model = fit_tfidf([s.tokens for s in vn_cluster.sentences()])
        g = build_cluster_graph(vn_cluster, tfidf_scope="global", model=model)
        assert g.n == vn_cluster.sentence_count

    def test_permutation_equivariance(self):
        corpus = [["a", "b"], ["b", "c"], ["c", "d"], ["a", "d"], ["b", "d"]]
        model = fit_tfidf(corpus)
        vectors = [vectorize(model, s) for s in corpus]
        sim = similarity_matrix(vectors)
        rng = np.random.default_rng(7)
        for _ in range(5):
            perm = rng.permutation(len(vectors))
            permuted = similarity_matrix([vectors[i] for i in perm])
            assert np.array_equal(permuted, sim[np.ix_(perm, perm)])
        doc_of = (0, 0, 1, 1, 2)
        mask = same_document_mask(doc_of)
        perm = rng.permutation(5)
        assert np.array_equal(
            same_document_mask([doc_of[i] for i in perm]),
            mask[np.ix_(perm, perm)],
        )


class TestGaussianBias:
    def test_substitution_paper_form(self):
        assert gaussian_bias(np.array([[1.0]]), 1.0)[0, 0] == 0.0
        assert gaussian_bias(np.array([[0.0]]), 1.0)[0, 0] == -0.5
        assert gaussian_bias(np.array([[0.5]]), 1.0)[0, 0] == -0.375

    def test_substitution_squared_difference_form(self):
        form = "squared_difference"
        assert gaussian_bias(np.array([[1.0]]), 1.0, form)[0, 0] == 0.0
        assert gaussian_bias(np.array([[0.0]]), 1.0, form)[0, 0] == -0.5
        assert gaussian_bias(np.array([[0.5]]), 1.0, form)[0, 0] == -0.125

    def test_sigma_validation(self):
        with pytest.raises(ValueError):
            gaussian_bias(np.eye(2), 0.0)
        with pytest.raises(ValueError):
            gaussian_bias(np.eye(2), -1.0)

    def test_unknown_form(self):
        with pytest.raises(ValueError, match="form"):
            gaussian_bias(np.eye(2), 1.0, "gauss")

    @given(
        st.floats(0.0, 1.0), st.floats(0.0, 1.0),
        st.floats(0.05, 4.0),
        st.sampled_from(["paper", "squared_difference"]),
    )
    @settings(max_examples=300)
    def test_monotone_and_bounded(self, a, b, sigma, form):
        lo, hi = sorted((a, b))
        fa = gaussian_bias(np.array([[lo]]), sigma, form)[0, 0]
        fb = gaussian_bias(np.array([[hi]]), sigma, form)[0, 0]
        assert fb >= fa
        if hi - lo > 1e-9:  # below an ulp the strict ordering can round away
            assert fb > fa
        floor = -1.0 / (2.0 * sigma * sigma)
        for value in (fa, fb):
            assert floor - 1e-12 <= value <= 0.0


class TestBiasMatrices:
    def test_identical_pair_same_document(self):
        cluster = make_cluster("c", [("d0", "Một hai ba. Một hai ba.")])
        b = bias_matrices(build_cluster_graph(cluster))
        assert b.R[0, 1] == pytest.approx(0.0, abs=1e-12)
        assert b.R_prime[0, 1] == pytest.approx(0.0, abs=1e-12)

    def test_identical_pair_different_documents(self):
        cluster = make_cluster("c", [("d0", "Một hai ba."), ("d1", "Một hai ba.")])
        b = bias_matrices(build_cluster_graph(cluster, sigma=1.0))
        assert b.R[0, 1] == pytest.approx(0.0, abs=1e-12)
        assert b.R_prime[0, 1] == -0.5  # G_same is zeroed across documents

    def test_matches_elementwise_recomputation(self, vn_cluster):
        g = build_cluster_graph(vn_cluster, sigma=0.7)
        b = bias_matrices(g)
        denom = 2.0 * 0.7 * 0.7
        assert np.allclose(b.R, -(1.0 - g.G ** 2) / denom, atol=0)
        assert np.allclose(b.R_prime, -(1.0 - g.G_same ** 2) / denom, atol=0)
        assert np.array_equal(b.R, b.R.T)
        assert np.array_equal(b.R_prime, b.R_prime.T)
        assert np.all(b.R <= 0.0) and np.all(b.R_prime <= 0.0)

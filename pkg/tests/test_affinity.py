import numpy as np
import pytest
import scipy.sparse as sp

from boundarylearn.affinity import (
    AffinityConfig,
    build_affinity,
    estimate_sigma,
    partition_blocks,
    save_matrix_market,
)
from boundarylearn.graph import BoundarySample, LabelState, RegionGraph, SuperpixelNode, apply_labels


def graph_from_features(x):
    """Path RAG whose i-th boundary carries feature row i."""
    x = np.asarray(x, dtype=np.float64)
    n_edges = x.shape[0]
    nodes = [SuperpixelNode(i, 1) for i in range(n_edges + 1)]
    edges = [BoundarySample(i, i, i + 1, x[i]) for i in range(n_edges)]
    return RegionGraph(nodes, edges)


class TestEstimateSigma:
    def test_identical_features_clamped_to_floor(self):
        graph = graph_from_features(np.ones((5, 3)))
        config = estimate_sigma(graph, floor=1e-8)
        assert np.all(config.sigma_diag == 1e-8)

    def test_two_point_variance(self):
        # feature alternating 0 and 2 -> population variance 1
        x = np.array([[0.0], [2.0], [0.0], [2.0]])
        config = estimate_sigma(graph_from_features(x))
        assert config.sigma_diag[0] == pytest.approx(1.0)

    def test_three_point_variance(self):
        # {1, 3, 5}: mean 3, population variance 8/3
        config = estimate_sigma(graph_from_features(np.array([[1.0], [3.0], [5.0]])))
        assert config.sigma_diag[0] == pytest.approx(8.0 / 3.0)


class TestBuildAffinity:
    def test_identical_points_weight_one(self):
        x = np.array([[1.0, 2.0], [1.0, 2.0], [5.0, 5.0]])
        aff = build_affinity(graph_from_features(x), AffinityConfig(np.ones(2), neighbors_k=1))
        assert aff.weights[0, 1] == pytest.approx(1.0)

    def test_known_kernel_value(self):
        # d=1, sigma=1, x=0 vs 2: exp(-0.5 * 4) = exp(-2)
        x = np.array([[0.0], [2.0]])
        aff = build_affinity(graph_from_features(x), AffinityConfig(np.ones(1), neighbors_k=1))
        assert aff.weights[0, 1] == pytest.approx(np.exp(-2.0))

    def test_knn_union_on_a_line(self):
        # points at 0, 1, 3: with k=1 the middle point picks its nearer
        # neighbor (0); 3 also picks 1, so the pair {1,3} survives by union.
        x = np.array([[0.0], [1.0], [3.0]])
        aff = build_affinity(graph_from_features(x), AffinityConfig(np.ones(1), neighbors_k=1))
        w = aff.weights.toarray()
        assert w[0, 1] > 0 and w[1, 0] > 0
        assert w[1, 2] > 0 and w[2, 1] > 0  # kept because 3's nearest is 1
        assert w[0, 2] == 0.0  # neither endpoint selected the far pair

    def test_brute_force_knn_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(40, 3))
        sigma = np.array([0.5, 1.0, 2.0])
        k = 4
        aff = build_affinity(graph_from_features(x), AffinityConfig(sigma, neighbors_k=k))
        # oracle: exact pairwise kernel, union of top-k per row
        diff = x[:, None, :] - x[None, :, :]
        d2 = (diff**2 / sigma).sum(-1)
        w_full = np.exp(-0.5 * d2)
        np.fill_diagonal(w_full, 0.0)
        expect = np.zeros_like(w_full)
        for i in range(40):
            nbr = np.argsort(-w_full[i], kind="stable")[:k]
            expect[i, nbr] = w_full[i, nbr]
        expect = np.maximum(expect, expect.T)
        assert np.allclose(aff.weights.toarray(), expect, rtol=0, atol=1e-12)

    def test_symmetry_and_zero_diagonal_exact(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(60, 4))
        aff = build_affinity(graph_from_features(x), AffinityConfig(np.ones(4), neighbors_k=5))
        w = aff.weights
        assert (w != w.T).nnz == 0
        assert np.all(w.diagonal() == 0.0)
        assert np.all(w.data > 0) and np.all(w.data <= 1.0)
        assert np.allclose(aff.degrees, np.asarray(w.sum(axis=1)).ravel())

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            build_affinity(graph_from_features(np.ones((3, 2))), AffinityConfig(np.ones(3)))


class TestLaplacianProperties:
    def rand_affinity(self, seed, n=30):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(n, 3))
        return build_affinity(graph_from_features(x), AffinityConfig(np.ones(3), neighbors_k=4))

    def test_smoothness_identity(self):
        # 0.5 * sum_ij W_ij (y_i - y_j)^2 == y' L y
        for seed in range(5):
            aff = self.rand_affinity(seed)
            lap = aff.laplacian()
            w = aff.weights.tocoo()
            rng = np.random.default_rng(100 + seed)
            for _ in range(20):
                y = rng.normal(size=aff.n)
                direct = 0.5 * float(
                    (w.data * (y[w.row] - y[w.col]) ** 2).sum()
                )
                quad = float(y @ (lap @ y))
                assert quad == pytest.approx(direct, rel=1e-12, abs=1e-12)

    def test_positive_semidefinite(self):
        aff = self.rand_affinity(42, n=50)
        lap = aff.laplacian()
        rng = np.random.default_rng(7)
        ys = rng.normal(size=(1000, aff.n))
        quads = np.einsum("ij,ij->i", ys, (lap @ ys.T).T)
        assert np.all(quads >= -1e-9)


class TestPartitionBlocks:
    def path_affinity(self):
        # path a-b-c with unit weights
        w = sp.csr_matrix(np.array([
            [0.0, 1.0, 0.0],
            [1.0, 0.0, 1.0],
            [0.0, 1.0, 0.0],
        ]))
        from boundarylearn.affinity import AffinityGraph

        return AffinityGraph(weights=w)

    def test_path_graph_blocks(self):
        aff = self.path_affinity()
        state = apply_labels(LabelState.initial(3), {0: 1, 2: -1})
        l_uu, w_ul = partition_blocks(aff, state)
        assert l_uu.shape == (1, 1)
        assert l_uu[0, 0] == pytest.approx(2.0)  # degree of the middle point
        assert w_ul.toarray().tolist() == [[1.0, 1.0]]

    def test_all_labeled_gives_empty_system(self):
        aff = self.path_affinity()
        state = apply_labels(LabelState.initial(3), {0: 1, 1: 1, 2: -1})
        l_uu, w_ul = partition_blocks(aff, state)
        assert l_uu.shape == (0, 0)
        assert w_ul.shape == (0, 3)

    def test_no_labels_is_error(self):
        with pytest.raises(ValueError, match="no labeled"):
            partition_blocks(self.path_affinity(), LabelState.initial(3))

    def test_partition_size_mismatch(self):
        with pytest.raises(ValueError, match="covers"):
            partition_blocks(self.path_affinity(), LabelState.initial(5))

    def test_global_degrees_on_diagonal(self):
        # L_uu must keep degrees from the full graph, not the subgraph.
        rng = np.random.default_rng(3)
        x = rng.normal(size=(20, 2))
        aff = build_affinity(graph_from_features(x), AffinityConfig(np.ones(2), neighbors_k=3))
        state = apply_labels(LabelState.initial(20), {i: 1 for i in range(0, 20, 3)})
        l_uu, _ = partition_blocks(aff, state)
        unl = np.array(state.unlabeled_ids)
        assert np.allclose(l_uu.diagonal(), aff.degrees[unl])


def test_matrix_market_export(tmp_path):
    rng = np.random.default_rng(1)
    aff = build_affinity(
        graph_from_features(rng.normal(size=(10, 2))),
        AffinityConfig(np.ones(2), neighbors_k=2),
    )
    out = tmp_path / "w.mtx"
    save_matrix_market(aff, out)
    from scipy.io import mmread

    back = mmread(str(out)).tocsr()
    assert np.allclose(back.toarray(), aff.weights.toarray())

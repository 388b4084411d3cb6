import numpy as np
import pytest
import scipy.linalg
from scipy.spatial.distance import cdist

from duase import (
    ValidationError,
    cmds,
    iso_mirror,
    isomap_1d,
    minimal_connected_knn,
    pairwise_block_distances,
)


def rotation(theta):
    return np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])


class TestPairwiseDistances:
    def test_identical_blocks_zero(self):
        block = np.random.default_rng(0).normal(size=(10, 2))
        D = pairwise_block_distances([block, block.copy(), block.copy()])
        assert np.all(D == 0)

    def test_rotated_block_distinguishes_modes(self):
        block = np.random.default_rng(1).normal(size=(20, 2))
        rotated = block @ rotation(0.9)
        direct = pairwise_block_distances([block, rotated], mode="direct")
        procrustes = pairwise_block_distances([block, rotated], mode="procrustes")
        assert direct[0, 1] > 0.1
        assert procrustes[0, 1] < 1e-10

    def test_spectral_norm_oracle(self):
        rng = np.random.default_rng(2)
        blocks = [rng.normal(size=(15, 3)) for _ in range(3)]
        D = pairwise_block_distances(blocks)
        for t in range(3):
            for s in range(3):
                expected = (
                    0.0
                    if t == s
                    else scipy.linalg.svdvals(blocks[t] - blocks[s])[0] / np.sqrt(15)
                )
                assert abs(D[t, s] - expected) < 1e-10

    def test_frobenius_flag(self):
        rng = np.random.default_rng(3)
        blocks = [rng.normal(size=(8, 2)) for _ in range(2)]
        D = pairwise_block_distances(blocks, norm="frobenius")
        expected = np.linalg.norm(blocks[0] - blocks[1]) / np.sqrt(8)
        assert abs(D[0, 1] - expected) < 1e-12

    def test_symmetry_and_nonnegativity(self):
        rng = np.random.default_rng(4)
        blocks = [rng.normal(size=(9, 2)) for _ in range(4)]
        for mode in ("direct", "procrustes"):
            D = pairwise_block_distances(blocks, mode=mode)
            assert np.array_equal(D, D.T)
            assert np.all(D >= 0)
            assert np.all(np.diag(D) == 0)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError, match="shape"):
            pairwise_block_distances([np.zeros((3, 2)), np.zeros((4, 2))])


class TestCmds:
    def test_two_points(self):
        coords = cmds(np.array([[0.0, 1.0], [1.0, 0.0]]), 1)
        assert np.allclose(sorted(coords[:, 0]), [-0.5, 0.5], atol=1e-12)
        # sign rule: the largest-magnitude entry (tie broken at index 0) is positive
        assert coords[0, 0] == pytest.approx(0.5)

    def test_euclidean_distances_recovered(self):
        rng = np.random.default_rng(5)
        points = rng.normal(size=(7, 3))
        D = cdist(points, points)
        coords = cmds(D, 3)
        recovered = cdist(coords, coords)
        assert np.abs(recovered - D).max() < 1e-8

    def test_zero_distances_give_zero_coordinates(self):
        coords = cmds(np.zeros((4, 4)), 2)
        assert np.all(coords == 0)

    def test_negative_eigenvalues_clamped(self, caplog):
        # a violently non-Euclidean matrix: triangle inequality broken
        D = np.array([[0.0, 10.0, 0.1], [10.0, 0.0, 0.1], [0.1, 0.1, 0.0]])
        coords = cmds(D, 2)
        assert np.all(np.isfinite(coords))

    def test_validation(self):
        with pytest.raises(ValidationError, match="c < S"):
            cmds(np.zeros((3, 3)), 3)
        with pytest.raises(ValidationError, match="symmetric"):
            cmds(np.array([[0.0, 1.0], [2.0, 0.0]]), 1)
        with pytest.raises(ValidationError, match="diagonal"):
            cmds(np.eye(3), 1)


class TestMinimalConnectedKnn:
    def test_collinear_chain_needs_k1(self):
        points = np.array([[0.0], [1.0], [2.0], [3.0]])
        k, weights = minimal_connected_knn(points)
        assert k == 1
        assert weights[0, 1] == 1.0
        assert np.isinf(weights[0, 2])

    def test_two_far_clusters_need_k3(self):
        cluster = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.8]])
        points = np.vstack([cluster, cluster + [50.0, 0.0]])
        k, _ = minimal_connected_knn(points)
        assert k == 3

    def test_brute_force_connectivity_oracle(self):
        rng = np.random.default_rng(6)
        points = rng.normal(size=(9, 2)) * rng.integers(1, 4, (9, 1))
        k, _ = minimal_connected_knn(points)
        dist = cdist(points, points)

        def connected_at(kk):
            S = len(points)
            adj = np.zeros((S, S), dtype=bool)
            for i in range(S):
                order = np.argsort(dist[i], kind="stable")
                neighbors = [j for j in order if j != i][:kk]
                adj[i, neighbors] = True
            adj |= adj.T
            seen = {0}
            stack = [0]
            while stack:
                u = stack.pop()
                for v in range(S):
                    if adj[u, v] and v not in seen:
                        seen.add(v)
                        stack.append(v)
            return len(seen) == S

        assert connected_at(k)
        assert k == 1 or not connected_at(k - 1)

    def test_two_points(self):
        k, weights = minimal_connected_knn(np.array([[0.0], [2.0]]))
        assert k == 1 and weights[0, 1] == 2.0


class TestIsomap1d:
    def test_collinear_recovers_centered_arc_length(self):
        positions = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
        points = np.column_stack([positions, np.zeros(5)])
        curve = isomap_1d(points)
        expected = positions - positions.mean()
        assert np.abs(np.abs(curve) - np.abs(expected)).max() < 1e-8
        assert curve[0] <= 0
        assert np.abs(curve - expected).max() < 1e-8

    def test_circle_arc_monotone(self):
        theta = np.linspace(0, np.pi / 2, 12)
        points = np.column_stack([np.cos(theta), np.sin(theta)])
        curve = isomap_1d(points)
        diffs = np.diff(curve)
        assert np.all(diffs > 0) or np.all(diffs < 0)

    def test_two_points(self):
        curve = isomap_1d(np.array([[0.0], [3.0]]))
        assert np.allclose(curve, [-1.5, 1.5])


class TestIsoMirror:
    def test_identical_blocks_constant_zero_curve(self):
        block = np.random.default_rng(7).normal(size=(12, 3))
        result = iso_mirror([block, block.copy(), block.copy()], c=1)
        assert np.abs(result.curve).max() < 1e-12

    def test_common_rotation_invariance_in_procrustes_mode(self):
        rng = np.random.default_rng(8)
        blocks = [rng.normal(size=(14, 2)) for _ in range(4)]
        R = rotation(1.1)
        base = iso_mirror(blocks, mode="procrustes", c=2)
        rotated = iso_mirror([b @ R for b in blocks], mode="procrustes", c=2)
        assert np.abs(base.D_hat - rotated.D_hat).max() < 1e-10

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        blocks = [rng.normal(size=(10, 2)) for _ in range(5)]
        a = iso_mirror(blocks, c=2)
        b = iso_mirror(blocks, c=2)
        assert np.array_equal(a.curve, b.curve)
        assert a.knn_k == b.knn_k

    def test_records_intermediates(self):
        rng = np.random.default_rng(10)
        blocks = [rng.normal(size=(10, 2)) for _ in range(4)]
        result = iso_mirror(blocks, c=2)
        assert result.D_hat.shape == (4, 4)
        assert result.cmds_coords.shape == (4, 2)
        assert len(result.curve) == 4
        assert result.orientation_anchor == 0
        assert result.curve[0] <= 0

    def test_c_must_be_below_block_count(self):
        blocks = [np.zeros((5, 2)), np.ones((5, 2))]
        with pytest.raises(ValidationError, match="c < S"):
            iso_mirror(blocks, c=2)

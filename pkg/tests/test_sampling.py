import json

import numpy as np
import pytest

from duase import (
    BlockModelSpec,
    LatentPositions,
    ValidationError,
    expected_unfolded,
    latent_positions_from_spec,
    load_positions,
    sample_dmprdpg,
    sample_dmpsbm,
    save_positions,
    sbm_latent_positions,
)
from duase.experiments import reference_blockmodel


def constant_positions(n, d, K, T, value):
    block = np.full((n, d), value)
    return LatentPositions(X_blocks=[block] * K, Y_blocks=[block] * T)


def single_community_spec(n, K, T, p):
    labels = np.zeros(n, dtype=np.int64)
    return BlockModelSpec(
        G1=1,
        G2=1,
        z=[labels] * K,
        upsilon=[labels] * T,
        B={(k, t): np.array([[p]]) for k in range(K) for t in range(T)},
    )


class TestDmprdpgSampler:
    def test_zero_probabilities_give_empty_graph(self):
        g = sample_dmprdpg(constant_positions(10, 2, 2, 2, 0.0), seed=0)
        assert g.nnz == 0

    def test_unit_probabilities_give_complete_graph(self):
        n = 12
        g = sample_dmprdpg(constant_positions(n, 1, 2, 1, 1.0), seed=0)
        for k in range(2):
            A = g.block(k, 0).toarray()
            assert np.array_equal(A, 1 - np.eye(n))

    def test_binomial_concentration(self):
        # all inner products 0.3; empirical density within 3 sigma
        n, p = 2000, 0.3
        pos = constant_positions(n, 1, 1, 1, np.sqrt(p))
        g = sample_dmprdpg(pos, seed=123)
        m = n * (n - 1)
        sigma = np.sqrt(p * (1 - p) / m)
        assert abs(g.nnz / m - p) < 3 * sigma

    def test_rejects_invalid_probabilities(self):
        pos = constant_positions(5, 1, 1, 1, 1.1)
        with pytest.raises(ValidationError, match="outside"):
            sample_dmprdpg(pos, seed=0)

    def test_seeded_determinism(self):
        pos = constant_positions(30, 1, 2, 2, 0.5)
        a = sample_dmprdpg(pos, seed=9)
        b = sample_dmprdpg(pos, seed=9)
        c = sample_dmprdpg(pos, seed=10)
        for k in range(2):
            for t in range(2):
                assert (a.block(k, t) != b.block(k, t)).nnz == 0
        assert any((a.block(k, t) != c.block(k, t)).nnz for k in range(2) for t in range(2))

    def test_block_substreams_are_order_independent(self):
        # block (k, t) must depend only on (seed, k, t), so a graph with more
        # blocks reproduces the smaller graph's shared blocks exactly
        base = constant_positions(20, 1, 1, 1, 0.5)
        wide = constant_positions(20, 1, 2, 3, 0.5)
        g_small = sample_dmprdpg(base, seed=4)
        g_wide = sample_dmprdpg(wide, seed=4)
        assert (g_small.block(0, 0) != g_wide.block(0, 0)).nnz == 0


class TestDmpsbmSampler:
    def test_zero_block_matrix(self):
        g = sample_dmpsbm(single_community_spec(15, 2, 2, 0.0), seed=0)
        assert g.nnz == 0

    def test_reference_blockmodel_matches_displayed_values(self):
        spec = reference_blockmodel(1000)
        assert (spec.G1, spec.G2, spec.K, spec.T, spec.n) == (4, 4, 3, 3, 1000)
        B00 = spec.B[0, 0]
        assert B00[0, 0] == 0.08 and B00[0, 2] == 0.18 and B00[1, 1] == 0.20
        assert np.array_equal(spec.B[0, 0], spec.B[0, 2])  # times 0 and 2 identical
        assert np.array_equal(spec.B[0, 0], spec.B[1, 0])  # layers 0 and 1 identical
        assert np.all(spec.B[2, 1] == 0.08)  # flat third layer
        B01 = spec.B[0, 1]
        assert np.array_equal(B01[0], B01[1])  # communities 0 and 1 merge at t=1
        counts = np.bincount(spec.z[0])
        assert np.array_equal(counts, [250, 250, 250, 250])

    def test_per_block_density_matches_mixture_oracle(self):
        n = 1000
        spec = reference_blockmodel(n)
        g = sample_dmpsbm(spec, seed=77)
        pi = np.bincount(spec.z[0], minlength=4) / n
        for k, t in [(0, 0), (1, 1), (2, 2)]:
            expected = float(pi @ spec.B[k, t] @ pi)  # diagonal exclusion is O(1/n)
            m = n * (n - 1)
            density = g.block(k, t).nnz / m
            sigma = np.sqrt(expected * (1 - expected) / m)
            assert abs(density - expected) < 3 * sigma + 1.0 / n

    def test_edge_probability_is_block_lookup(self):
        # deterministic blocks: B entries 0 or 1 reproduce exact bipartite structure
        z = np.array([0, 0, 1, 1])
        B = {(0, 0): np.array([[0.0, 1.0], [0.0, 0.0]])}
        spec = BlockModelSpec(G1=2, G2=2, z=[z], upsilon=[z], B=B)
        A = sample_dmpsbm(spec, seed=1).block(0, 0).toarray()
        expected = np.zeros((4, 4))
        expected[:2, 2:] = 1
        assert np.array_equal(A, expected)

    def test_undirected_mode(self):
        spec = single_community_spec(40, 2, 2, 0.4)
        g = sample_dmpsbm(spec, seed=5, undirected=True)
        assert not g.directed
        for k in range(2):
            for t in range(2):
                A = g.block(k, t)
                assert (A != A.T).nnz == 0

    def test_undirected_requires_matching_labels(self):
        z = [np.array([0, 0, 1, 1])]
        ups = [np.array([1, 1, 0, 0])]
        B = {(0, 0): np.full((2, 2), 0.5)}
        spec = BlockModelSpec(G1=2, G2=2, z=z, upsilon=ups, B=B)
        with pytest.raises(ValidationError, match="z == upsilon"):
            sample_dmpsbm(spec, seed=0, undirected=True)


class TestBlockmodelFactorization:
    def test_scalar_block(self):
        spec = single_community_spec(5, 1, 1, 0.25)
        mu, lam = sbm_latent_positions(spec)
        assert mu[0].shape == (1, 1)
        assert abs((mu[0] @ lam[0].T).item() - 0.25) < 1e-12

    def test_reference_blockmodel_rank_five(self):
        mu, lam = sbm_latent_positions(reference_blockmodel(100))
        assert mu[0].shape == (4, 5)
        assert lam[0].shape == (4, 5)

    def test_construct_then_factor_oracle(self):
        rng = np.random.default_rng(3)
        G1, G2, K, T, d = 3, 4, 2, 3, 2
        mu_true = rng.uniform(0.1, 0.5, (K, G1, d))
        lam_true = rng.uniform(0.1, 0.5, (T, G2, d))
        B = {(k, t): mu_true[k] @ lam_true[t].T for k in range(K) for t in range(T)}
        labels_z = [rng.integers(0, G1, 30) for _ in range(K)]
        labels_u = [rng.integers(0, G2, 30) for _ in range(T)]
        spec = BlockModelSpec(G1=G1, G2=G2, z=labels_z, upsilon=labels_u, B=B)
        mu, lam = sbm_latent_positions(spec)
        assert mu[0].shape[1] == d
        worst = max(
            np.abs(mu[k] @ lam[t].T - B[k, t]).max() for k in range(K) for t in range(T)
        )
        assert worst < 1e-8


class TestExpectedUnfolded:
    def test_constant_positions(self):
        P = expected_unfolded(constant_positions(4, 1, 2, 2, 0.5))
        assert np.allclose(P.matrix, 0.25)
        # diagonal entries are retained in the probability matrix
        assert P.block(0, 0)[0, 0] == 0.25

    def test_blockmodel_cellwise_lookup(self):
        spec = reference_blockmodel(16)
        P = expected_unfolded(spec)
        for k in range(3):
            for t in range(3):
                block = P.block(k, t)
                for i in range(16):
                    for j in range(16):
                        assert block[i, j] == spec.B[k, t][spec.z[k][i], spec.upsilon[t][j]]

    def test_dual_construction_oracle(self):
        spec = reference_blockmodel(24)
        from_spec = expected_unfolded(spec).matrix
        from_positions = expected_unfolded(latent_positions_from_spec(spec)).matrix
        assert np.abs(from_spec - from_positions).max() < 1e-8


class TestLatentPositionTypes:
    def test_probability_invariant(self):
        pos = constant_positions(5, 2, 1, 1, 0.9)  # inner product 1.62 > 1
        with pytest.raises(ValidationError, match="outside"):
            pos.validate()

    def test_scaling_consistency(self):
        xi = [np.full((4, 1), 0.8)]
        nu = [np.full((4, 1), 0.6)]
        pos = LatentPositions(
            X_blocks=[0.5 * xi[0]],
            Y_blocks=[0.5 * nu[0]],
            rho=0.25,
            xi_blocks=xi,
            nu_blocks=nu,
        )
        pos.validate()
        bad = LatentPositions(
            X_blocks=[0.9 * xi[0]],
            Y_blocks=[0.5 * nu[0]],
            rho=0.25,
            xi_blocks=xi,
            nu_blocks=nu,
        )
        with pytest.raises(ValidationError, match="sqrt"):
            bad.validate()

    def test_rank_bound(self):
        pos = constant_positions(10, 3, 2, 2, 0.3)
        P = expected_unfolded(pos)
        assert np.linalg.matrix_rank(P.matrix) <= 3

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        pos = LatentPositions(
            X_blocks=[rng.uniform(0, 0.5, (6, 2)) for _ in range(2)],
            Y_blocks=[rng.uniform(0, 0.5, (6, 2)) for _ in range(3)],
        )
        save_positions(pos, tmp_path)
        loaded = load_positions(tmp_path)
        assert loaded.K == 2 and loaded.T == 3
        for a, b in zip(pos.X_blocks + pos.Y_blocks, loaded.X_blocks + loaded.Y_blocks):
            assert np.array_equal(a, b)


class TestBlockModelSpecJson:
    def test_round_trip(self):
        spec = reference_blockmodel(12)
        restored = BlockModelSpec.from_json(spec.to_json())
        assert restored.G1 == 4 and restored.n == 12
        for key in spec.B:
            assert np.array_equal(restored.B[key], spec.B[key])
        payload = json.loads(spec.to_json())
        assert "0,0" in payload["B"]

    def test_malformed_json(self):
        with pytest.raises(ValidationError, match="malformed"):
            BlockModelSpec.from_json('{"G1": 2}')

    def test_label_range_validation(self):
        with pytest.raises(ValidationError, match="z labels"):
            BlockModelSpec(
                G1=2,
                G2=2,
                z=[np.array([0, 5])],
                upsilon=[np.array([0, 1])],
                B={(0, 0): np.full((2, 2), 0.5)},
            )

    def test_probability_range_validation(self):
        with pytest.raises(ValidationError, match=r"\[0, 1\]"):
            BlockModelSpec(
                G1=1,
                G2=1,
                z=[np.array([0, 0])],
                upsilon=[np.array([0, 0])],
                B={(0, 0): np.array([[1.5]])},
            )

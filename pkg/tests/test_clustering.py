import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duase import (
    ValidationError,
    adjusted_rand_index,
    cluster_left,
    cluster_right,
    duase,
    expected_unfolded,
    fit_gmm,
    latent_positions_from_spec,
    match_components,
    sample_dmpsbm,
)
from duase.experiments import reference_blockmodel


def two_blobs(seed=0, m=200, gap=10.0):
    rng = np.random.default_rng(seed)
    pts = np.vstack(
        [rng.normal([-gap, 0], 1, (m, 2)), rng.normal([gap, 0], 1, (m, 2))]
    )
    return pts, np.repeat([0, 1], m)


class TestFitGmm:
    def test_separated_clusters_exact(self):
        pts, truth = two_blobs()
        fit = fit_gmm(pts, 2, seed=1)
        assert adjusted_rand_index(fit.hard_labels, truth) == 1.0
        assert fit.converged and not fit.collapsed

    def test_single_component_is_sample_mle(self):
        pts, _ = two_blobs(seed=3)
        fit = fit_gmm(pts, 1, seed=0, restarts=1)
        mu = pts.mean(axis=0)
        S = (pts - mu).T @ (pts - mu) / len(pts)
        assert np.abs(fit.means[0] - mu).max() < 1e-10
        assert np.abs(fit.covariances[0] - S).max() < 1e-10
        assert np.allclose(fit.weights, [1.0])

    def test_loglik_monotone_over_iterations(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(300, 3)) + rng.integers(0, 2, 300)[:, None] * 4.0
        fit = fit_gmm(pts, 3, seed=2, restarts=3)
        trace = fit.loglik_trace
        assert len(trace) >= 2
        slack = 1e-8 * np.abs(trace[:-1])
        assert np.all(np.diff(trace) >= -slack)

    def test_weights_on_simplex_and_covariances_spd(self):
        pts, _ = two_blobs(seed=9, gap=2.0)
        fit = fit_gmm(pts, 3, seed=4)
        assert abs(fit.weights.sum() - 1.0) < 1e-12
        for cov in fit.covariances:
            assert np.linalg.eigvalsh(cov)[0] > 0

    def test_degenerate_input_flagged(self):
        fit = fit_gmm(np.ones((40, 2)), 2, seed=0)
        assert not fit.converged
        assert fit.collapsed

    def test_needs_enough_points(self):
        with pytest.raises(ValidationError, match="points"):
            fit_gmm(np.zeros((4, 2)), 2, seed=0)

    def test_scale_invariant_hard_labels(self):
        pts, _ = two_blobs(seed=11, gap=6.0)
        base = fit_gmm(pts, 2, seed=7)
        doubled = fit_gmm(pts * 2.0, 2, seed=7)
        assert np.array_equal(base.hard_labels, doubled.hard_labels)

    def test_seeded_determinism(self):
        pts, _ = two_blobs(seed=13, gap=3.0)
        a = fit_gmm(pts, 2, seed=21)
        b = fit_gmm(pts, 2, seed=21)
        assert np.array_equal(a.hard_labels, b.hard_labels)
        assert a.log_likelihood == b.log_likelihood


class TestAri:
    def test_identical_labelings(self):
        assert adjusted_rand_index([0, 0, 1, 1, 2], [5, 5, 3, 3, 9]) == 1.0

    def test_constant_vs_balanced_split(self):
        # hand contingency computation gives exactly zero
        assert adjusted_rand_index([0, 0, 0, 0], [0, 0, 1, 1]) == 0.0

    @given(st.lists(st.integers(0, 3), min_size=2, max_size=30))
    @settings(max_examples=40, deadline=None)
    def test_permutation_of_label_names_invariant(self, labels):
        other = np.random.default_rng(0).integers(0, 3, len(labels))
        renamed = [(x + 7) * 3 for x in labels]
        a = adjusted_rand_index(labels, other)
        b = adjusted_rand_index(renamed, other)
        assert a == pytest.approx(b, abs=1e-12)

    @given(st.lists(st.integers(0, 2), min_size=2, max_size=20))
    @settings(max_examples=40, deadline=None)
    def test_symmetry(self, labels):
        other = np.random.default_rng(1).integers(0, 4, len(labels))
        assert adjusted_rand_index(labels, other) == pytest.approx(
            adjusted_rand_index(other, labels), abs=1e-12
        )

    def test_range(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a = rng.integers(0, 3, 12)
            b = rng.integers(0, 3, 12)
            assert -1.0 <= adjusted_rand_index(a, b) <= 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValidationError, match="equal length"):
            adjusted_rand_index([0, 1], [0, 1, 2])


class TestMatchComponents:
    def test_recovers_shuffle(self):
        rng = np.random.default_rng(0)
        reference = rng.normal(size=(5, 3)) * 4
        perm_true = np.array([3, 0, 4, 1, 2])
        fitted = reference[perm_true] + rng.normal(0, 0.01, (5, 3))
        perm = match_components(fitted, reference)
        # perm[g] is the fitted index matched to reference g
        assert np.array_equal(fitted[perm].round(1), reference.round(1))

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError, match="equal shape"):
            match_components(np.zeros((2, 2)), np.zeros((3, 2)))


@pytest.fixture(scope="module")
def noiseless_pair():
    spec = reference_blockmodel(120)
    pair = duase(expected_unfolded(spec), 5)
    return spec, pair


class TestBlockClustering:
    def test_noiseless_right_blocks_exact(self, noiseless_pair):
        spec, pair = noiseless_pair
        result = cluster_right(pair, 4, seed=0)
        # at t=1 communities 0 and 1 coincide exactly: clustering cannot and
        # need not separate them, so check the distinct-time blocks
        for t in (0, 2):
            assert adjusted_rand_index(result.labels[t], spec.upsilon[t]) == 1.0

    def test_noiseless_left_blocks_exact(self, noiseless_pair):
        spec, pair = noiseless_pair
        result = cluster_left(pair, 4, seed=0)
        for k in (0, 1):
            assert adjusted_rand_index(result.labels[k], spec.z[k]) == 1.0

    def test_point_mass_blocks_have_exactly_g_distinct_rows(self, noiseless_pair):
        _, pair = noiseless_pair
        distinct = np.unique(pair.Y_hat_blocks[0].round(10), axis=0)
        assert len(distinct) == 4

    def test_pooled_mode_returns_per_block_labels(self, noiseless_pair):
        spec, pair = noiseless_pair
        result = cluster_right(pair, 4, seed=0, pooled=True)
        assert result.pooled and len(result.fits) == 1
        assert len(result.labels) == 3
        assert all(len(lab) == 120 for lab in result.labels)

    def test_sampled_blocks_cross_block_agreement(self):
        # layers 0/1 and times 0/2 are identically distributed by design, so
        # their recovered labelings agree up to noise
        spec = reference_blockmodel(600)
        g = sample_dmpsbm(spec, seed=101)
        pair = duase(g, 3)
        left = cluster_left(pair, 4, seed=1)
        right = cluster_right(pair, 4, seed=1)
        assert adjusted_rand_index(left.labels[0], left.labels[1]) >= 0.9
        assert adjusted_rand_index(right.labels[0], right.labels[2]) >= 0.9
        # the flat layer has no community signal at all
        assert abs(adjusted_rand_index(left.labels[2], spec.z[2])) < 0.05

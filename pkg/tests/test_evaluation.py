"""Tests for embeddings, PCA, decoded grids and paths, distances and classifiers."""

import numpy as np
import pytest
from scipy.stats import ortho_group

from src.data import Dataset, normalize
from src.errors import (
    DomainError,
    InsufficientPointsError,
    MissingSamplesError,
    ShapeError,
    UndefinedCorrelationError,
)
from src.evaluation import (
    Embedding,
    accuracy,
    compare_consistency,
    decode_grid,
    decode_path,
    decode_plane,
    distance_density,
    embed,
    group_distance,
    lda_fit,
    lda_predict,
    load_embedding,
    ood_consistency,
    pairwise_distances,
    pca_embedding,
    pca_fit,
    pca_project,
    pca_reconstruct,
    save_embedding,
    signature_score,
    spearman,
)
from src.jets import decode, encoder_forward


def grouped_embedding(points, n_held):
    n = len(points)
    groups = tuple('held' if i < n_held else 'rest' for i in range(n))
    return Embedding(points, tuple(f"s{i}" for i in range(n)), groups=groups)


class TestEmbed:
    def test_rows_are_encoder_means(self, tiny_models, rng):
        dataset = Dataset(rng.standard_normal((8, 5)), tuple('abcde'))
        embedding = embed(tiny_models, dataset)
        np.testing.assert_array_equal(embedding.points, encoder_forward(tiny_models.encoder, dataset.matrix)[0])
        assert embedding.sample_ids == dataset.sample_ids

    def test_duplicates_map_together(self, tiny_models, rng):
        row = rng.standard_normal(5)
        embedding = embed(tiny_models, Dataset(np.stack([row, row]), tuple('abcde')))
        np.testing.assert_array_equal(embedding.points[0], embedding.points[1])

    def test_frozen_normalization(self, tiny_models, rng):
        train = Dataset(rng.normal(2.0, 3.0, size=(30, 5)), tuple('abcde'))
        held = Dataset(rng.normal(2.0, 3.0, size=(6, 5)), tuple('abcde'))
        _, record = normalize(train, 'standardize')
        manual = encoder_forward(tiny_models.encoder, record.apply(held.matrix))[0]
        np.testing.assert_array_equal(embed(tiny_models, held, record).points, manual)

    def test_feature_count(self, tiny_models):
        with pytest.raises(ShapeError):
            embed(tiny_models, Dataset(np.zeros((2, 4)), tuple('abcd')))

    def test_csv_preserves_points(self, tmp_path, rng):
        embedding = Embedding(rng.standard_normal((5, 2)), tuple('vwxyz'),
                              labels=tuple('aabbb'), groups=tuple('ppqqq'))
        save_embedding(embedding, tmp_path / 'e.csv')
        loaded = load_embedding(tmp_path / 'e.csv')
        np.testing.assert_array_equal(loaded.points, embedding.points)
        assert loaded.sample_ids == embedding.sample_ids
        assert loaded.labels == embedding.labels
        assert loaded.groups == embedding.groups


class TestPca:
    def test_line_y_equals_x(self):
        t = np.linspace(-2, 2, 9)
        model = pca_fit(np.column_stack([t, t]), 1)
        np.testing.assert_allclose(model.components[0], [1 / np.sqrt(2), 1 / np.sqrt(2)], atol=1e-12)

    def test_sign_convention(self, rng):
        model = pca_fit(rng.standard_normal((50, 4)) * [5, 3, 2, 1], 3)
        pivots = np.argmax(np.abs(model.components), axis=1)
        assert np.all(model.components[np.arange(3), pivots] > 0)

    def test_mean_projects_to_origin(self, rng):
        data = rng.standard_normal((40, 3)) + 4.0
        model = pca_fit(data, 2)
        np.testing.assert_allclose(pca_project(model, data.mean(axis=0)), 0.0, atol=1e-12)

    def test_orthonormal_and_ordered(self, rng):
        model = pca_fit(rng.standard_normal((100, 6)) @ rng.standard_normal((6, 6)), 4)
        np.testing.assert_allclose(model.components @ model.components.T, np.eye(4), atol=1e-8)
        assert np.all(np.diff(model.explained_variance) <= 0)

    def test_reconstruction_error_nonincreasing(self, rng):
        data = rng.standard_normal((60, 5)) @ rng.standard_normal((5, 5))
        errors = [np.mean((data - pca_reconstruct(pca_fit(data, k), data)) ** 2) for k in range(1, 6)]
        assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))
        assert errors[-1] == pytest.approx(0.0, abs=1e-20)

    def test_isotropic_variances(self, rng):
        model = pca_fit(rng.standard_normal((10_000, 3)), 3)
        assert model.explained_variance[0] / model.explained_variance[-1] < 1.1

    def test_k_too_large(self, rng):
        with pytest.raises(DomainError):
            pca_fit(rng.standard_normal((3, 5)), 4)

    def test_pca_embedding_keeps_tags(self, rng):
        dataset = Dataset(rng.standard_normal((10, 3)), tuple('abc'), groups=tuple('xy' * 5))
        embedding = pca_embedding(pca_fit(dataset, 2), dataset)
        assert embedding.points.shape == (10, 2)
        assert embedding.groups == dataset.groups


class TestDecoding:
    def test_grid_corners(self, affine_decoder):
        grid, decoded = decode_grid(affine_decoder, [(-1.0, 1.0), (0.0, 2.0)], 2)
        np.testing.assert_array_equal(grid, [[-1.0, 0.0], [-1.0, 2.0], [1.0, 0.0], [1.0, 2.0]])
        assert decoded.shape == (4, 4)

    def test_affine_grid_preserves_collinearity(self, affine_decoder):
        grid, decoded = decode_grid(affine_decoder, [(-1.0, 1.0), (-1.0, 1.0)], 3)
        np.testing.assert_allclose(decoded[1] - decoded[0], decoded[2] - decoded[1], atol=1e-10)

    def test_grid_box_dimension(self, affine_decoder):
        with pytest.raises(ShapeError):
            decode_grid(affine_decoder, [(-1.0, 1.0)], 3)

    def test_plane(self, affine_decoder):
        points, decoded = decode_plane(affine_decoder, [0.0, 0.0], [1.0, 0.0], [0.0, 1.0], 1.0, 3)
        assert points.shape == (9, 2)
        np.testing.assert_array_equal(decoded, decode(affine_decoder, points))

    def test_path_endpoints(self, decoder):
        t, decoded = decode_path(decoder, [0.1, -0.4], [1.5, 2.0], 2)
        np.testing.assert_array_equal(t, [0.0, 1.0])
        np.testing.assert_array_equal(decoded[0], decode(decoder, np.array([0.1, -0.4])))
        np.testing.assert_array_equal(decoded[1], decode(decoder, np.array([1.5, 2.0])))

    def test_long_path_endpoints_bitwise(self, decoder):
        _, decoded = decode_path(decoder, [0.3, 0.3], [-2.0, 1.0], 17)
        np.testing.assert_array_equal(decoded[-1], decode(decoder, np.array([-2.0, 1.0])))

    def test_affine_path_is_linear(self, affine_decoder):
        _, decoded = decode_path(affine_decoder, [0.0, 1.0], [3.0, -2.0], 10)
        np.testing.assert_allclose(np.diff(decoded, n=2, axis=0), 0.0, atol=1e-10)

    def test_path_needs_two_points(self, decoder):
        with pytest.raises(DomainError):
            decode_path(decoder, [0.0, 0.0], [1.0, 1.0], 1)


class TestDistances:
    def test_three_four_five(self):
        np.testing.assert_array_equal(pairwise_distances([[0.0, 0.0], [3.0, 4.0]]), [5.0])

    def test_collinear(self):
        np.testing.assert_array_equal(pairwise_distances([[0.0], [1.0], [2.0]]), [1.0, 2.0, 1.0])

    def test_duplicate_point(self):
        assert 0.0 in pairwise_distances([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]])

    def test_rigid_motion_invariance(self, rng):
        points = rng.standard_normal((20, 3))
        moved = points @ ortho_group.rvs(3, random_state=2).T + np.array([1.0, -5.0, 2.0])
        np.testing.assert_allclose(pairwise_distances(moved), pairwise_distances(points), atol=1e-10)

    def test_needs_two_points(self):
        with pytest.raises(InsufficientPointsError):
            pairwise_distances([[1.0, 1.0]])


class TestSpearman:
    def test_increasing(self):
        assert spearman([1, 2, 3, 4, 5], [0.1, 0.5, 2.0, 7.0, 9.0]) == 1.0

    def test_reversed(self):
        assert spearman([1, 2, 3], [3, 2, 1]) == -1.0

    def test_one_swap(self):
        assert spearman([1, 2, 3, 4], [1, 3, 2, 4]) == 0.8

    def test_ties_use_average_ranks(self):
        assert spearman([1, 1, 2], [1, 2, 3]) == pytest.approx(np.sqrt(3) / 2)

    def test_monotone_transform_invariance(self, rng):
        a, b = rng.uniform(0.1, 3.0, 30), rng.uniform(0.1, 3.0, 30)
        assert spearman(np.exp(a), b ** 3) == spearman(a, b)

    def test_zero_variance(self):
        with pytest.raises(UndefinedCorrelationError):
            spearman([1, 1, 1], [1, 2, 3])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            spearman([1, 2], [1, 2, 3])


class TestOodConsistency:
    def test_same_embedding(self, rng):
        embedding = grouped_embedding(rng.standard_normal((60, 2)), 10)
        assert ood_consistency(embedding, embedding, 'held') == 1.0

    def test_rigid_motion(self, rng):
        points = rng.standard_normal((60, 3))
        moved = points @ ortho_group.rvs(3, random_state=4).T + 2.5
        rho = ood_consistency(grouped_embedding(points, 10), grouped_embedding(moved, 10), 'held')
        assert rho == pytest.approx(1.0, abs=1e-12)

    def test_shuffled_points_are_uncorrelated(self, rng):
        points = rng.standard_normal((240, 2))
        shuffled = points[rng.permutation(240)]
        rho = ood_consistency(grouped_embedding(points, 30), grouped_embedding(shuffled, 30), 'held')
        assert abs(rho) < 0.3

    def test_within_group_same_embedding(self, rng):
        embedding = grouped_embedding(rng.standard_normal((60, 2)), 10)
        assert ood_consistency(embedding, embedding, 'held', pairs='within') == 1.0

    def test_within_group_rigid_motion(self, rng):
        points = rng.standard_normal((60, 3))
        moved = points @ ortho_group.rvs(3, random_state=4).T - 1.0
        rho = ood_consistency(grouped_embedding(points, 10), grouped_embedding(moved, 10), 'held',
                              pairs='within')
        assert rho == pytest.approx(1.0, abs=1e-12)

    def test_within_group_ignores_rest(self, rng):
        points = rng.standard_normal((30, 2))
        moved = points.copy()
        moved[10:] = rng.standard_normal((20, 2))
        full, other = grouped_embedding(points, 10), grouped_embedding(moved, 10)
        assert ood_consistency(full, other, 'held', pairs='within') == 1.0
        assert ood_consistency(full, other, 'held') < 1.0

    def test_within_group_needs_two_held_samples(self, rng):
        embedding = grouped_embedding(rng.standard_normal((10, 2)), 1)
        with pytest.raises(InsufficientPointsError):
            ood_consistency(embedding, embedding, 'held', pairs='within')

    def test_unknown_pairing(self, rng):
        embedding = grouped_embedding(rng.standard_normal((10, 2)), 3)
        with pytest.raises(DomainError):
            ood_consistency(embedding, embedding, 'held', pairs='all')

    def test_mismatched_samples(self, rng):
        full = grouped_embedding(rng.standard_normal((10, 2)), 3)
        other = Embedding(full.points, tuple(f"t{i}" for i in range(10)), groups=full.groups)
        with pytest.raises(MissingSamplesError):
            ood_consistency(full, other, 'held')

    def test_unknown_group(self, rng):
        embedding = grouped_embedding(rng.standard_normal((10, 2)), 3)
        with pytest.raises(MissingSamplesError):
            ood_consistency(embedding, embedding, 'absent')

    def test_distance_density_columns(self, rng):
        d_full, d_holdout = rng.uniform(0, 3, 500), rng.uniform(0, 2, 500)
        density = distance_density(d_full, d_holdout, bins=10)
        assert density.shape == (10, 10)
        totals = density.sum(axis=0)
        np.testing.assert_allclose(totals[totals > 0], 1.0)

    def test_compare_consistency(self):
        statistic, p_value = compare_consistency([0.9, 0.85, 0.95, 0.8, 0.92, 0.88],
                                                 [0.6, 0.7, 0.5, 0.62, 0.55, 0.72])
        assert statistic == 0.0
        assert 0.0 < p_value < 0.05

    def test_group_distance(self):
        embedding = Embedding(np.array([[0.0, 0.0], [2.0, 0.0], [4.0, 3.0]]), ('a', 'b', 'c'),
                              groups=('ref', 'ref', 'other'))
        np.testing.assert_allclose(group_distance(embedding, 'ref'), [1.0, 1.0, np.sqrt(18.0)])


class TestDiscriminant:
    def test_midpoint_rule(self):
        points = np.array([[-4.0], [-3.0], [-2.0], [2.0], [3.0], [4.0]])
        model = lda_fit(points, ['-', '-', '-', '+', '+', '+'])
        assert lda_predict(model, np.array([[1.0]]))[0] == '+'
        assert lda_predict(model, np.array([[-0.5]]))[0] == '-'

    def test_hand_dataset(self):
        points = np.array([[0.0, 0.0], [0.0, 1.0], [2.0, 0.0], [2.0, 1.0]])
        model = lda_fit(points, ['a', 'a', 'b', 'b'])
        predicted = lda_predict(model, np.array([[0.9, 0.3], [1.1, 0.7], [-5.0, 4.0]]))
        assert list(predicted) == ['a', 'b', 'a']

    def test_separable_clusters(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            a = rng.standard_normal((40, 2))
            b = rng.standard_normal((40, 2)) + np.array([12.0, 0.0])
            labels = ['a'] * 40 + ['b'] * 40
            model = lda_fit(np.vstack([a, b]), labels)
            assert accuracy(lda_predict(model, np.vstack([a, b])), labels) == 1.0

    def test_single_class(self):
        with pytest.raises(DomainError):
            lda_fit(np.zeros((3, 2)), ['a', 'a', 'a'])

    def test_accuracy(self):
        assert accuracy(['a', 'b', 'b', 'a'], ['a', 'b', 'a', 'a']) == 0.75


class TestSignature:
    @pytest.fixture
    def dataset(self):
        return Dataset(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]), ('g1', 'g2', 'g3'))

    def test_all_features(self, dataset):
        np.testing.assert_array_equal(signature_score(dataset, ['g1', 'g2', 'g3']), [6.0, 15.0])

    def test_single_feature(self, dataset):
        np.testing.assert_array_equal(signature_score(dataset, ['g2']), [2.0, 5.0])

    def test_two_features(self, dataset):
        np.testing.assert_array_equal(signature_score(dataset, ['g1', 'g3']), [4.0, 10.0])

    def test_unknown_feature(self, dataset):
        with pytest.raises(DomainError):
            signature_score(dataset, ['g1', 'nope'])

"""End-to-end experiments on synthetic manifolds. Slow; run with ``pytest -m slow``."""

from dataclasses import replace

import numpy as np
import pytest

from src.data import SplitSpec, gen_synthetic, normalize, split
from src.evaluation import (
    accuracy,
    embed,
    lda_fit,
    lda_predict,
    ood_consistency,
    pca_fit,
    pca_project,
    pca_reconstruct,
)
from src.jets import decode, encoder_forward, init_model_pair
from src.training import (
    TrainingConfig,
    curvature_summary,
    derive_streams,
    sample_curvature_points,
    train,
)

pytestmark = pytest.mark.slow

SEEDS = range(5)


def reconstruction_mse(models, matrix):
    means, _ = encoder_forward(models.encoder, matrix)
    return float(np.mean((decode(models.decoder, means) - matrix) ** 2))


def test_strong_regularization_flattens_decoder():
    ratios, excess = [], []
    for seed in SEEDS:
        data = gen_synthetic('linear_subspace', {'N': 50, 'm': 2}, n=2000, noise_sigma=0.05, seed=seed)
        train_set, test_set = split(data, SplitSpec('random_fraction', fraction=0.2, seed=seed))
        train_set, record = normalize(train_set, 'standardize')
        test_matrix = record.apply(test_set.matrix)
        config = TrainingConfig(gamma=10.0, delta=10.0, epochs=150, batch_size=100,
                                learning_rate=5e-3, seed=seed)

        initial = init_model_pair(50, 2, config.hidden_dims, derive_streams(seed).init)
        rng = np.random.default_rng(seed)
        initial_means, _ = encoder_forward(initial.encoder, train_set.matrix)
        before = curvature_summary(initial, sample_curvature_points(initial_means, 256, 2.0, rng))

        models, _ = train(train_set.matrix, config)
        means, _ = encoder_forward(models.encoder, train_set.matrix)
        after = curvature_summary(models, sample_curvature_points(means, 256, 2.0, rng))
        ratios.append(np.sqrt(after.ex_max) / np.sqrt(before.ex_mean))

        pca = pca_fit(train_set.matrix, 2)
        pca_mse = float(np.mean((pca_reconstruct(pca, test_matrix) - test_matrix) ** 2))
        excess.append(reconstruction_mse(models, test_matrix) / pca_mse)

    assert np.median(ratios) <= 0.1
    assert np.median(excess) <= 1.5


def held_out_consistency(gamma, delta, seed):
    data = gen_synthetic('curved_sheet_clusters', {'N': 50, 'k': 6}, n=1200, noise_sigma=0.01, seed=seed)
    normalized, _ = normalize(data, 'standardize')
    rest, _ = split(normalized, SplitSpec('holdout_groups', groups=('c0',)))
    config = TrainingConfig(gamma=gamma, delta=delta, epochs=60, batch_size=100,
                            learning_rate=5e-3, seed=seed)
    full, _ = train(normalized.matrix, config)
    holdout, _ = train(rest.matrix, replace(config, seed=seed + 1000))
    return ood_consistency(embed(full, normalized), embed(holdout, normalized), 'c0')


def test_held_out_cluster_embeds_consistently():
    regularized = [held_out_consistency(1.0, 1.0, seed) for seed in SEEDS]
    plain = [held_out_consistency(0.0, 0.0, seed) for seed in SEEDS]
    assert np.median(regularized) >= 0.8
    assert np.median(regularized) > np.median(plain)


def test_latent_space_separates_classes_better_than_pca():
    latent_scores, pca_scores = [], []
    for seed in SEEDS:
        data = gen_synthetic('curved_sheet_clusters', {'N': 50, 'k': 4, 'curvature': 3.0},
                             n=800, noise_sigma=0.05, seed=seed)
        normalized, _ = normalize(data, 'standardize')
        train_set, test_set = split(normalized, SplitSpec('random_fraction', fraction=0.3, seed=seed))
        config = TrainingConfig(gamma=1.0, delta=1.0, latent_dim=3, epochs=60, batch_size=100,
                                learning_rate=5e-3, seed=seed)
        models, _ = train(train_set.matrix, config)

        latent_train, latent_test = embed(models, train_set), embed(models, test_set)
        classifier = lda_fit(latent_train.points, train_set.labels)
        latent_scores.append(accuracy(lda_predict(classifier, latent_test.points), test_set.labels))

        pca = pca_fit(train_set, 3)
        projected_train = pca_project(pca, train_set.matrix)
        projected_test = pca_project(pca, test_set.matrix)
        classifier = lda_fit(projected_train, train_set.labels)
        pca_scores.append(accuracy(lda_predict(classifier, projected_test), test_set.labels))

    assert np.median(latent_scores) > np.median(pca_scores)

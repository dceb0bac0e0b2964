"""Shared fixtures for the Gamma-VAE test suite."""

import numpy as np
import pytest
from click.testing import CliRunner

from src.data import gen_synthetic, save_matrix
from src.jets import MlpModel, init_mlp, init_model_pair


def perturbed(models, rng, scale=0.1):
    """Model with every parameter (biases included) nudged off its initialization."""
    return models.with_parameters([p + scale * rng.standard_normal(p.shape)
                                   for p in models.parameters()])


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_models(rng):
    """N=5, m=2, one hidden layer of 8 units."""
    return perturbed(init_model_pair(5, 2, [8], rng), rng)


@pytest.fixture
def decoder(rng):
    """Two-hidden-layer softplus decoder R^2 -> R^6."""
    model = init_mlp([2, 10, 10, 6], 'decoder', rng)
    return model.with_parameters([p + 0.2 * rng.standard_normal(p.shape) for p in model.parameters()])


@pytest.fixture
def affine_decoder():
    weights = np.array([[1.0, 2.0], [3.0, 4.0], [-1.0, 0.5], [0.0, 2.0]])
    return MlpModel((2, 4), (weights,), (np.array([0.5, -1.0, 0.0, 2.0]),), 'decoder')


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def linear_csv(tmp_path):
    """Small linear_subspace dataset on disk."""
    path = tmp_path / 'linear.csv'
    save_matrix(gen_synthetic('linear_subspace', {'N': 6, 'm': 2}, n=64, noise_sigma=0.05, seed=3), path)
    return path


@pytest.fixture
def clusters_csv(tmp_path):
    path = tmp_path / 'clusters.csv'
    dataset = gen_synthetic('curved_sheet_clusters', {'N': 8, 'k': 3}, n=90, noise_sigma=0.01, seed=5)
    save_matrix(dataset, path)
    return path

"""Embeddings, decoded grids and the diagnostics used to compare them."""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import cdist, pdist
from scipy.stats import rankdata, wilcoxon

from .data import Dataset, NormalizationRecord
from .errors import (
    DomainError,
    InsufficientPointsError,
    MissingSamplesError,
    ParseError,
    ShapeError,
    UndefinedCorrelationError,
)
from .jets import MlpModel, ModelPair, decode, encoder_forward

logger = logging.getLogger(__name__)

DEFAULT_DENSITY_BINS = 50


@dataclass(frozen=True)
class Embedding:
    """Latent coordinates (encoder means) with the source dataset's tags."""

    points: np.ndarray
    sample_ids: Tuple[str, ...]
    labels: Optional[Tuple[str, ...]] = None
    groups: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        object.__setattr__(self, 'points', points)
        if not np.all(np.isfinite(points)):
            raise DomainError("embedding contains non-finite coordinates")
        if len(self.sample_ids) != points.shape[0]:
            raise ShapeError(f"{len(self.sample_ids)} sample ids for {points.shape[0]} points")
        for name in ('labels', 'groups'):
            values = getattr(self, name)
            if values is not None and len(values) != points.shape[0]:
                raise ShapeError(f"{name} has length {len(values)}, expected {points.shape[0]}")

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def embed(models: ModelPair, dataset: Dataset,
          record: Optional[NormalizationRecord] = None) -> Embedding:
    """Encoder means of ``dataset`` after the (frozen) training normalization."""
    if dataset.n_features != models.data_dim:
        raise ShapeError(f"dataset has {dataset.n_features} features, model expects {models.data_dim}")
    matrix = dataset.matrix if record is None else record.apply(dataset.matrix)
    mean, _ = encoder_forward(models.encoder, matrix)
    return Embedding(mean, dataset.sample_ids, dataset.labels, dataset.groups)


def save_embedding(embedding: Embedding, path: Union[str, Path]) -> None:
    """Write ``sample_id,z1..zm,label,group`` CSV."""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['sample_id', *(f"z{i + 1}" for i in range(embedding.dim)), 'label', 'group'])
        for i, sample_id in enumerate(embedding.sample_ids):
            writer.writerow([
                sample_id,
                *(repr(float(v)) for v in embedding.points[i]),
                embedding.labels[i] if embedding.labels is not None else '',
                embedding.groups[i] if embedding.groups is not None else '',
            ])


def load_embedding(path: Union[str, Path]) -> Embedding:
    """Read an embedding CSV (also accepts externally computed embeddings in the same layout)."""
    try:
        with open(path, 'r', newline='') as f:
            rows = [row for row in csv.reader(f) if row]
    except OSError as e:
        raise ParseError(f"cannot read embedding {path}: {e}")
    if not rows:
        raise ParseError(f"{path} is empty")
    header = rows[0]
    coord_cols = [i for i, name in enumerate(header) if name.startswith('z') and name[1:].isdigit()]
    if 'sample_id' not in header or not coord_cols:
        raise ParseError(f"{path} needs sample_id and z1..zm columns")
    id_col = header.index('sample_id')
    label_col = header.index('label') if 'label' in header else None
    group_col = header.index('group') if 'group' in header else None

    ids, points, labels, groups = [], [], [], []
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"ragged row: expected {len(header)} fields, found {len(row)}", line=line)
        ids.append(row[id_col])
        try:
            points.append([float(row[i]) for i in coord_cols])
        except ValueError:
            raise ParseError("non-numeric coordinate", line=line)
        if label_col is not None:
            labels.append(row[label_col])
        if group_col is not None:
            groups.append(row[group_col])
    return Embedding(
        np.array(points),
        tuple(ids),
        tuple(labels) if label_col is not None and any(labels) else None,
        tuple(groups) if group_col is not None and any(groups) else None,
    )


@dataclass(frozen=True)
class PcaModel:
    """Principal axes (rows of ``components``) with their explained variance."""

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray


def _as_matrix(data: Union[Dataset, np.ndarray]) -> np.ndarray:
    return data.matrix if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)


def pca_fit(data: Union[Dataset, np.ndarray], k: int) -> PcaModel:
    """
    Top-k eigenvectors of the (population) covariance.

    Each component's largest-magnitude entry is made positive.
    """
    matrix = _as_matrix(data)
    n, n_features = matrix.shape
    if not 1 <= k <= min(n, n_features):
        raise DomainError(f"k={k} must lie in [1, {min(n, n_features)}]")
    mean = matrix.mean(axis=0)
    covariance = np.atleast_2d(np.cov(matrix, rowvar=False, bias=True))
    eigvals, eigvecs = np.linalg.eigh(covariance)
    order = np.argsort(eigvals)[::-1][:k]
    components = eigvecs[:, order].T
    pivots = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(k), pivots])
    components = components * signs[:, None]
    return PcaModel(mean, components, np.clip(eigvals[order], 0.0, None))


def pca_project(pca: PcaModel, points: np.ndarray) -> np.ndarray:
    return (np.asarray(points, dtype=np.float64) - pca.mean) @ pca.components.T


def pca_reconstruct(pca: PcaModel, points: np.ndarray) -> np.ndarray:
    return pca_project(pca, points) @ pca.components + pca.mean


def pca_embedding(pca: PcaModel, dataset: Dataset) -> Embedding:
    """Linear baseline embedding in the PCA coordinates."""
    return Embedding(pca_project(pca, dataset.matrix), dataset.sample_ids,
                     dataset.labels, dataset.groups)


def decode_grid(decoder: MlpModel, box: Sequence[Tuple[float, float]],
                resolution: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Decode a regular lattice over a latent box.

    Args:
        decoder: Decoder model
        box: (low, high) per latent axis
        resolution: Points per axis

    Returns:
        (resolution^m x m lattice, decoded rows)
    """
    if len(box) != decoder.input_dim:
        raise ShapeError(f"box has {len(box)} axes, decoder latent dim is {decoder.input_dim}")
    if resolution < 1:
        raise DomainError(f"resolution must be positive, got {resolution}")
    bounds = np.asarray(box, dtype=np.float64)
    if not np.all(np.isfinite(bounds)):
        raise DomainError("latent box must have finite bounds")
    axes = [np.linspace(lo, hi, resolution) for lo, hi in bounds]
    grid = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, len(box))
    return grid, decode(decoder, grid)


def decode_plane(decoder: MlpModel, origin: Sequence[float], u: Sequence[float],
                 v: Sequence[float], extent: float, resolution: int) -> Tuple[np.ndarray, np.ndarray]:
    """Decode the latent plane origin + a u + b v for a, b in [-extent, extent]."""
    origin, u, v = (np.asarray(x, dtype=np.float64) for x in (origin, u, v))
    ticks = np.linspace(-extent, extent, resolution)
    a, b = np.meshgrid(ticks, ticks, indexing='ij')
    points = origin + a.reshape(-1, 1) * u + b.reshape(-1, 1) * v
    return points, decode(decoder, points)


def decode_path(decoder: MlpModel, z_start: Sequence[float], z_end: Sequence[float],
                n_points: int) -> Tuple[np.ndarray, np.ndarray]:
    """Decode ``n_points`` evenly spaced points on a latent segment (endpoints exact)."""
    if n_points < 2:
        raise DomainError(f"path needs at least 2 points, got {n_points}")
    z_start = np.asarray(z_start, dtype=np.float64)
    z_end = np.asarray(z_end, dtype=np.float64)
    t = np.linspace(0.0, 1.0, n_points)
    points = [(1.0 - s) * z_start + s * z_end for s in t]
    return t, np.stack([decode(decoder, p) for p in points])


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    """Condensed Euclidean distances in (i < j) order."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[0] < 2:
        raise InsufficientPointsError("pairwise distances need at least 2 points")
    return pdist(points, metric='euclidean')


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    """Pearson correlation of average ranks."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"spearman inputs differ in length: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise InsufficientPointsError("spearman needs at least 2 pairs")
    ra = rankdata(a) - (len(a) + 1) / 2.0
    rb = rankdata(b) - (len(b) + 1) / 2.0
    ss_a, ss_b = float(ra @ ra), float(rb @ rb)
    if ss_a == 0 or ss_b == 0:
        raise UndefinedCorrelationError("a rank vector has zero variance")
    # identical or reversed rankings are exact
    if np.array_equal(ra, rb):
        return 1.0
    if np.array_equal(ra, -rb):
        return -1.0
    rho = float(ra @ rb) / np.sqrt(ss_a * ss_b)
    return float(min(1.0, max(-1.0, rho)))


def _group_mask(embedding: Embedding, groups: Union[str, Sequence[str]]) -> np.ndarray:
    if embedding.groups is None:
        raise MissingSamplesError("embedding carries no group tags")
    wanted = {groups} if isinstance(groups, str) else set(groups)
    mask = np.array([g in wanted for g in embedding.groups])
    if not mask.any():
        raise MissingSamplesError(f"no samples in group(s) {sorted(wanted)}")
    if mask.all():
        raise MissingSamplesError("every sample is in the held-out group(s)")
    return mask


OOD_PAIRS = ('rest', 'within')


def ood_distances(full: Embedding, holdout: Embedding, groups: Union[str, Sequence[str]],
                  pairs: str = 'rest') -> Tuple[np.ndarray, np.ndarray]:
    """
    Distances involving the held-out samples in both embeddings, in matching order.

    ``pairs='rest'`` pairs every held-out sample with every other sample; ``'within'``
    pairs the held-out samples with each other.
    """
    if pairs not in OOD_PAIRS:
        raise DomainError(f"unknown distance pairing {pairs!r}, expected one of {OOD_PAIRS}")
    if full.sample_ids != holdout.sample_ids:
        missing = sorted(set(full.sample_ids) ^ set(holdout.sample_ids))
        detail = f"; unmatched ids e.g. {missing[:3]}" if missing else " (ordering differs)"
        raise MissingSamplesError(f"embeddings do not cover the same samples{detail}")
    mask = _group_mask(full, groups)
    if pairs == 'within':
        return pairwise_distances(full.points[mask]), pairwise_distances(holdout.points[mask])
    d_full = cdist(full.points[mask], full.points[~mask]).ravel()
    d_holdout = cdist(holdout.points[mask], holdout.points[~mask]).ravel()
    return d_full, d_holdout


def ood_consistency(full: Embedding, holdout: Embedding, groups: Union[str, Sequence[str]],
                    pairs: str = 'rest') -> float:
    """Spearman correlation of held-out sample distances between two embeddings."""
    d_full, d_holdout = ood_distances(full, holdout, groups, pairs)
    rho = spearman(d_full, d_holdout)
    logger.info(f"OOD consistency for {groups} ({pairs}): rho={rho:.4f} over {len(d_full)} distances")
    return rho


def distance_density(d_full: np.ndarray, d_holdout: np.ndarray,
                     bins: int = DEFAULT_DENSITY_BINS) -> np.ndarray:
    """
    Column-normalized 2-D histogram of paired distances.

    Columns bin ``d_full`` and rows bin ``d_holdout``, each over [0, max]; every
    nonempty column sums to 1.
    """
    max_full = float(np.max(d_full)) if len(d_full) else 0.0
    max_holdout = float(np.max(d_holdout)) if len(d_holdout) else 0.0
    counts, _, _ = np.histogram2d(
        d_holdout, d_full, bins=bins,
        range=[[0.0, max_holdout or 1.0], [0.0, max_full or 1.0]],
    )
    totals = counts.sum(axis=0, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


def group_distance(embedding: Embedding, reference_group: str) -> np.ndarray:
    """Distance of every sample to the centroid of ``reference_group``."""
    if embedding.groups is None:
        raise MissingSamplesError("embedding carries no group tags")
    mask = np.array([g == reference_group for g in embedding.groups])
    if not mask.any():
        raise MissingSamplesError(f"no samples in group {reference_group!r}")
    centroid = embedding.points[mask].mean(axis=0)
    return np.linalg.norm(embedding.points - centroid, axis=1)


def compare_consistency(rho_a: Sequence[float], rho_b: Sequence[float]) -> Tuple[float, float]:
    """Wilcoxon signed-rank test on paired per-group consistencies; returns (statistic, p)."""
    if len(rho_a) != len(rho_b):
        raise ShapeError(f"paired inputs differ in length: {len(rho_a)} vs {len(rho_b)}")
    result = wilcoxon(rho_a, rho_b)
    return float(result.statistic), float(result.pvalue)


@dataclass
class LinearDiscriminant:
    """Shared-covariance Gaussian classifier with frequency priors."""

    jitter_scale: float = 1e-6
    classes: np.ndarray = field(default=None, repr=False)
    means: np.ndarray = field(default=None, repr=False)
    log_priors: np.ndarray = field(default=None, repr=False)
    _factor: tuple = field(default=None, repr=False)

    def fit(self, points: np.ndarray, labels: Sequence[str]) -> 'LinearDiscriminant':
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        labels = np.asarray(labels)
        if len(labels) != points.shape[0]:
            raise ShapeError(f"{len(labels)} labels for {points.shape[0]} points")
        self.classes, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
        if len(self.classes) < 2:
            raise DomainError("discriminant needs at least 2 classes")
        n, dim = points.shape
        self.means = np.stack([points[inverse == k].mean(axis=0) for k in range(len(self.classes))])
        centered = points - self.means[inverse]
        pooled = centered.T @ centered / max(n - len(self.classes), 1)
        jitter = self.jitter_scale * np.trace(pooled) / dim
        try:
            self._factor = cho_factor(pooled + jitter * np.eye(dim))
        except LinAlgError:
            raise DomainError("pooled covariance is singular after jitter")
        self.log_priors = np.log(counts / n)
        return self

    def scores(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        weights = cho_solve(self._factor, self.means.T)
        offsets = -0.5 * np.einsum('kd,dk->k', self.means, weights) + self.log_priors
        return points @ weights + offsets

    def predict(self, points: np.ndarray) -> np.ndarray:
        return self.classes[np.argmax(self.scores(points), axis=1)]


def lda_fit(points: np.ndarray, labels: Sequence[str], jitter_scale: float = 1e-6) -> LinearDiscriminant:
    return LinearDiscriminant(jitter_scale).fit(points, labels)


def lda_predict(model: LinearDiscriminant, points: np.ndarray) -> np.ndarray:
    return model.predict(points)


def accuracy(predicted: Sequence[str], truth: Sequence[str]) -> float:
    predicted, truth = np.asarray(predicted), np.asarray(truth)
    if predicted.shape != truth.shape or len(truth) == 0:
        raise ShapeError("accuracy needs equal-length, nonempty label arrays")
    return float(np.mean(predicted == truth))


def signature_score(dataset: Dataset, features: Sequence[str]) -> np.ndarray:
    """Per-sample sum over the named feature columns."""
    if not features:
        raise DomainError("signature needs at least one feature")
    unknown = [name for name in features if name not in dataset.feature_names]
    if unknown:
        raise DomainError(f"unknown feature name(s): {', '.join(unknown)}")
    columns = [dataset.feature_names.index(name) for name in features]
    return dataset.matrix[:, columns].sum(axis=1)

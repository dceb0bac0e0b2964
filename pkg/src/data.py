"""Datasets: loading, normalization, synthetic generators and splits."""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DegenerateSplitError, DomainError, ParseError, ShapeError

logger = logging.getLogger(__name__)

SCHEMES = ('log1p_standardize', 'standardize', 'none')
SPLIT_MODES = ('random_fraction', 'holdout_groups')

SYNTHETIC_PARAMS = {
    'linear_subspace': {'N': 50, 'm': 2},
    'swiss_roll': {'N': 3},
    'curved_sheet_clusters': {'N': 50, 'k': 6, 'curvature': 1.0, 'spread': 0.15, 'scale': 3.0},
    'sphere': {'N': 3, 'R': 1.0},
}


@dataclass(frozen=True)
class Dataset:
    """n x N sample matrix with optional per-sample labels and groups."""

    matrix: np.ndarray
    feature_names: Tuple[str, ...]
    labels: Optional[Tuple[str, ...]] = None
    groups: Optional[Tuple[str, ...]] = None
    sample_ids: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ShapeError(f"dataset matrix must be 2-D, got shape {matrix.shape}")
        object.__setattr__(self, 'matrix', matrix)
        n, n_features = matrix.shape
        if len(self.feature_names) != n_features:
            raise ShapeError(f"{len(self.feature_names)} feature names for {n_features} columns")
        if not self.sample_ids:
            object.__setattr__(self, 'sample_ids', tuple(f"s{i}" for i in range(n)))
        for name in ('labels', 'groups', 'sample_ids'):
            values = getattr(self, name)
            if values is not None and len(values) != n:
                raise ShapeError(f"{name} has length {len(values)}, expected {n}")

    @property
    def n_samples(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_features(self) -> int:
        return self.matrix.shape[1]

    def subset(self, indices: Sequence[int]) -> 'Dataset':
        indices = list(indices)

        def pick(values):
            return None if values is None else tuple(values[i] for i in indices)

        return Dataset(self.matrix[indices], self.feature_names, pick(self.labels),
                       pick(self.groups), pick(self.sample_ids))

    def with_matrix(self, matrix: np.ndarray) -> 'Dataset':
        return Dataset(matrix, self.feature_names, self.labels, self.groups, self.sample_ids)


def load_matrix(path: Union[str, Path], fmt: str = 'csv', has_header: bool = True,
                label_column: Optional[str] = None, group_column: Optional[str] = None,
                id_column: Optional[str] = None) -> Dataset:
    """
    Read a rectangular CSV/TSV file of numeric features.

    Args:
        path: File to read
        fmt: 'csv' or 'tsv'
        has_header: First row holds column names (otherwise columns are named by index)
        label_column, group_column, id_column: Columns taken out of the feature matrix

    Returns:
        Dataset with the remaining columns as features
    """
    if fmt not in ('csv', 'tsv'):
        raise ParseError(f"unknown format {fmt!r}")
    delimiter = ',' if fmt == 'csv' else '\t'
    try:
        with open(path, 'r', newline='') as f:
            rows = [(i + 1, row) for i, row in enumerate(csv.reader(f, delimiter=delimiter))
                    if row]
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}")
    if not rows:
        raise ParseError(f"{path} is empty")

    if has_header:
        header = [name.strip() for name in rows[0][1]]
        rows = rows[1:]
    else:
        header = [str(i) for i in range(len(rows[0][1]))]
    width = len(header)

    special = {}
    for role, name in (('label', label_column), ('group', group_column), ('id', id_column)):
        if name is None:
            continue
        if name not in header:
            raise ParseError(f"missing {role} column", column=name)
        special[role] = header.index(name)
    feature_idx = [i for i in range(width) if i not in special.values()]
    if not feature_idx:
        raise ParseError(f"{path} has no feature columns")

    matrix = np.empty((len(rows), len(feature_idx)))
    extra: Dict[str, List[str]] = {role: [] for role in special}
    for r, (line, row) in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"ragged row: expected {width} fields, found {len(row)}", line=line)
        for c, col in enumerate(feature_idx):
            try:
                matrix[r, c] = float(row[col])
            except ValueError:
                raise ParseError(f"non-numeric value {row[col]!r}", line=line, column=header[col])
        for role, col in special.items():
            extra[role].append(row[col].strip())

    logger.info(f"Loaded {matrix.shape[0]} x {matrix.shape[1]} matrix from {path}")
    return Dataset(
        matrix,
        tuple(header[i] for i in feature_idx),
        labels=tuple(extra['label']) if 'label' in extra else None,
        groups=tuple(extra['group']) if 'group' in extra else None,
        sample_ids=tuple(extra['id']) if 'id' in extra else (),
    )


def save_matrix(dataset: Dataset, path: Union[str, Path]) -> None:
    """Write ``sample_id, features..., [label], [group]`` as CSV."""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        header = ['sample_id', *dataset.feature_names]
        if dataset.labels is not None:
            header.append('label')
        if dataset.groups is not None:
            header.append('group')
        writer.writerow(header)
        for i in range(dataset.n_samples):
            row = [dataset.sample_ids[i], *(repr(float(v)) for v in dataset.matrix[i])]
            if dataset.labels is not None:
                row.append(dataset.labels[i])
            if dataset.groups is not None:
                row.append(dataset.groups[i])
            writer.writerow(row)


@dataclass(frozen=True)
class NormalizationRecord:
    """Per-feature shift and scale fitted on training data."""

    scheme: str
    shift: np.ndarray
    scale: np.ndarray

    def apply(self, matrix: np.ndarray) -> np.ndarray:
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape[-1] != len(self.shift):
            raise ShapeError(f"normalization expects {len(self.shift)} features, "
                             f"got {matrix.shape[-1]}")
        if self.scheme == 'log1p_standardize':
            if np.any(matrix < 0):
                raise DomainError("log1p_standardize requires nonnegative values")
            matrix = np.log1p(matrix)
        out = (matrix - self.shift) / self.scale
        if not np.all(np.isfinite(out)):
            raise DomainError("normalized data contains non-finite values")
        return out

    def invert(self, matrix: np.ndarray) -> np.ndarray:
        out = np.asarray(matrix, dtype=np.float64) * self.scale + self.shift
        if self.scheme == 'log1p_standardize':
            out = np.expm1(out)
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {'shift': self.shift.tolist(), 'scale': self.scale.tolist(), 'scheme': self.scheme}

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> 'NormalizationRecord':
        try:
            scheme = payload['scheme']
            shift = np.asarray(payload['shift'], dtype=np.float64)
            scale = np.asarray(payload['scale'], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"malformed normalization record: {e}")
        if scheme not in SCHEMES or shift.shape != scale.shape or shift.ndim != 1:
            raise ParseError("inconsistent normalization record")
        return cls(scheme, shift, scale)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'NormalizationRecord':
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except OSError as e:
            raise ParseError(f"cannot read normalization record {path}: {e}")
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid normalization JSON in {path}: {e.msg}", line=e.lineno)


def normalize(dataset: Dataset, scheme: str = 'log1p_standardize') -> Tuple[Dataset, NormalizationRecord]:
    """
    Fit and apply per-feature normalization.

    Standardization uses the population (1/n) variance; constant features keep scale 1.
    """
    if scheme not in SCHEMES:
        raise DomainError(f"unknown normalization scheme {scheme!r}")
    matrix = dataset.matrix
    n_features = dataset.n_features
    if scheme == 'none':
        record = NormalizationRecord(scheme, np.zeros(n_features), np.ones(n_features))
        return dataset.with_matrix(record.apply(matrix)), record

    if scheme == 'log1p_standardize':
        if np.any(matrix < 0):
            raise DomainError("log1p_standardize requires nonnegative values")
        matrix = np.log1p(matrix)
    shift = matrix.mean(axis=0)
    scale = matrix.std(axis=0)
    constant = scale == 0
    if np.any(constant):
        logger.warning(f"{int(constant.sum())} constant feature(s) kept with scale 1")
        scale = np.where(constant, 1.0, scale)
    record = NormalizationRecord(scheme, shift, scale)
    return dataset.with_matrix(record.apply(dataset.matrix)), record


def apply_normalization(dataset: Dataset, record: NormalizationRecord) -> Dataset:
    """Normalize new data with frozen training statistics."""
    return dataset.with_matrix(record.apply(dataset.matrix))


def _orthonormal_frame(rng: np.random.Generator, n_rows: int, n_cols: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n_rows, n_cols)))
    return q * np.sign(np.diag(r))


def _synthetic_params(kind: str, params: Mapping[str, Any]) -> Dict[str, Any]:
    if kind not in SYNTHETIC_PARAMS:
        raise DomainError(f"unknown synthetic kind {kind!r}")
    defaults = SYNTHETIC_PARAMS[kind]
    unknown = sorted(set(params) - set(defaults))
    if unknown:
        raise DomainError(f"unknown parameters for {kind}: {', '.join(unknown)}")
    merged = dict(defaults)
    for name, value in params.items():
        try:
            merged[name] = type(defaults[name])(value)
        except (TypeError, ValueError):
            raise DomainError(f"invalid value for {kind} parameter {name}: {value!r}")
    return merged


def gen_synthetic(kind: str, params: Optional[Mapping[str, Any]] = None, n: int = 1000,
                  noise_sigma: float = 0.0, seed: int = 0) -> Dataset:
    """
    Generate a synthetic benchmark manifold.

    Kinds:
        linear_subspace: x = A z + b with orthonormal A (N x m), z standard normal
        swiss_roll: (t cos t, h, t sin t) rotated into N dims
        curved_sheet_clusters: k Gaussian clusters on a quadratic 2-D sheet; groups = cluster
        sphere: uniform points on a radius-R sphere (centered at the origin) in N dims
    """
    p = _synthetic_params(kind, params or {})
    if n < 1:
        raise DomainError(f"n must be positive, got {n}")
    if noise_sigma < 0:
        raise DomainError(f"noise_sigma must be nonnegative, got {noise_sigma}")
    rng = np.random.default_rng(seed)
    labels = groups = None

    if kind == 'linear_subspace':
        if not 1 <= p['m'] <= p['N']:
            raise DomainError(f"linear_subspace needs 1 <= m <= N, got m={p['m']}, N={p['N']}")
        frame = _orthonormal_frame(rng, p['N'], p['m'])
        offset = rng.standard_normal(p['N'])
        matrix = rng.standard_normal((n, p['m'])) @ frame.T + offset
    elif kind == 'swiss_roll':
        if p['N'] < 3:
            raise DomainError(f"swiss_roll needs N >= 3, got {p['N']}")
        t = 1.5 * np.pi * (1.0 + 2.0 * rng.uniform(size=n))
        height = 21.0 * rng.uniform(size=n)
        coords = np.column_stack([t * np.cos(t), height, t * np.sin(t)])
        matrix = coords @ _orthonormal_frame(rng, p['N'], 3).T
    elif kind == 'curved_sheet_clusters':
        if p['N'] < 5 or p['k'] < 1:
            raise DomainError(f"curved_sheet_clusters needs N >= 5 and k >= 1, got N={p['N']}, k={p['k']}")
        angles = 2.0 * np.pi * np.arange(p['k']) / p['k']
        centers = 0.6 * np.column_stack([np.cos(angles), np.sin(angles)])
        cluster = rng.permutation(np.arange(n) % p['k'])
        st = centers[cluster] + p['spread'] * rng.standard_normal((n, 2))
        s, t = st[:, 0], st[:, 1]
        c = p['curvature']
        sheet = p['scale'] * np.column_stack([s, t, c * s ** 2, c * t ** 2, c * s * t])
        matrix = sheet @ _orthonormal_frame(rng, p['N'], 5).T
        labels = groups = tuple(f"c{j}" for j in cluster)
    else:
        if p['N'] < 3 or not p['R'] > 0:
            raise DomainError(f"sphere needs N >= 3 and R > 0, got N={p['N']}, R={p['R']}")
        directions = rng.standard_normal((n, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        matrix = (p['R'] * directions) @ _orthonormal_frame(rng, p['N'], 3).T

    if noise_sigma > 0:
        matrix = matrix + noise_sigma * rng.standard_normal(matrix.shape)
    logger.info(f"Generated {kind} dataset: {n} x {matrix.shape[1]}, noise {noise_sigma}")
    return Dataset(matrix, tuple(f"f{i}" for i in range(matrix.shape[1])), labels, groups)


@dataclass(frozen=True)
class SplitSpec:
    """How to divide a dataset: a seeded random fraction or held-out groups."""

    mode: str
    fraction: Optional[float] = None
    groups: Tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.mode not in SPLIT_MODES:
            raise DomainError(f"unknown split mode {self.mode!r}")
        if self.mode == 'random_fraction':
            if self.fraction is None or not 0 < self.fraction < 1:
                raise DomainError(f"fraction must lie in (0, 1), got {self.fraction}")
        elif not self.groups:
            raise DomainError("holdout_groups split needs at least one group")


def split(dataset: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset]:
    """
    Partition a dataset into (train, held_out), preserving order within each part.

    ``fraction`` is the held-out share for random_fraction splits.
    """
    n = dataset.n_samples
    if spec.mode == 'holdout_groups':
        if dataset.groups is None:
            raise DomainError("dataset has no groups to hold out")
        missing = sorted(set(spec.groups) - set(dataset.groups))
        if missing:
            raise DomainError(f"holdout groups not in dataset: {', '.join(missing)}")
        held = np.array([g in spec.groups for g in dataset.groups])
    else:
        rng = np.random.default_rng(spec.seed)
        n_held = int(round(spec.fraction * n))
        held = np.zeros(n, dtype=bool)
        held[rng.permutation(n)[:n_held]] = True

    train_idx = np.flatnonzero(~held)
    held_idx = np.flatnonzero(held)
    if len(train_idx) == 0:
        raise DegenerateSplitError("split leaves no training samples")
    logger.info(f"Split {n} samples: {len(train_idx)} train, {len(held_idx)} held out")
    return dataset.subset(train_idx), dataset.subset(held_idx)

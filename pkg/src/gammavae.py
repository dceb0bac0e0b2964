#!/usr/bin/env python3
"""Gamma-VAE command-line interface."""

import csv
import functools
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import click
import numpy as np

from . import __version__
from .config import load_settings, load_training_config, setup_logging, thread_count
from .data import (
    SCHEMES,
    SYNTHETIC_PARAMS,
    Dataset,
    NormalizationRecord,
    SplitSpec,
    apply_normalization,
    gen_synthetic,
    load_matrix,
    normalize,
    save_matrix,
    split,
)
from .errors import (
    ConfigError,
    DivergedTrainingError,
    DomainError,
    GammaVaeError,
    OutputExistsError,
    ParseError,
    ShapeError,
)
from .evaluation import (
    OOD_PAIRS,
    Embedding,
    accuracy,
    decode_grid,
    decode_path,
    distance_density,
    embed,
    lda_fit,
    load_embedding,
    ood_distances,
    pca_embedding,
    pca_fit,
    pca_project,
    save_embedding,
    signature_score,
    spearman,
)
from .geometry import directional_curvatures, evaluate_points, tangent_angles
from .jets import ModelPair, decoder_jet, load_checkpoint, save_checkpoint
from .training import (
    METRICS_HEADER,
    curvature_summary,
    sample_curvature_points,
    sweep_regularization,
    train,
)

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = 'checkpoint.json'
NORMALIZATION_FILE = 'normalization.json'
MANIFEST_FILE = 'manifest.json'


@dataclass
class RunManifest:
    """Record of one command run; written last, atomically."""

    command: str
    config: Optional[str] = None
    inputs: List[str] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)
    seed: Optional[int] = None
    version: str = __version__
    duration_seconds: float = 0.0


class Run:
    """Output directory, manifest bookkeeping and settings for one command."""

    def __init__(self, command: str, out: str, force: bool, settings: Dict[str, Any]):
        self.out = Path(out)
        self.settings = settings
        self.manifest = RunManifest(command)
        self.started = time.monotonic()
        if self.out.exists() and not force:
            raise OutputExistsError(f"output {self.out} already exists (use --force to overwrite)")
        if self.out.exists() and not self.out.is_dir():
            raise OutputExistsError(f"output {self.out} is not a directory")

    @property
    def defaults(self) -> Dict[str, Any]:
        return self.settings['defaults']

    def input(self, *paths: Optional[str]) -> None:
        self.manifest.inputs.extend(str(p) for p in paths if p)

    def path(self, name: str) -> Path:
        """Reserve an output file; the directory is created on first use."""
        self.out.mkdir(parents=True, exist_ok=True)
        target = self.out / name
        self.manifest.outputs.append(str(target))
        return target

    def write_csv(self, name: str, header: Sequence[str], rows) -> Path:
        target = self.path(name)
        with open(target, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(header)
            writer.writerows(rows)
        logger.info(f"Wrote {target}")
        return target

    def write_json(self, name: str, payload: Any) -> Path:
        target = self.path(name)
        target.write_text(json.dumps(payload, indent=2))
        logger.info(f"Wrote {target}")
        return target

    def finish(self) -> None:
        self.manifest.duration_seconds = round(time.monotonic() - self.started, 3)
        self.out.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.out, prefix='.manifest-', suffix='.json')
        with os.fdopen(fd, 'w') as f:
            json.dump(asdict(self.manifest), f, indent=2)
        os.replace(tmp, self.out / MANIFEST_FILE)
        logger.info(f"Finished {self.manifest.command} in {self.manifest.duration_seconds}s")


def handle_errors(func):
    """Turn library errors into a one-line JSON report and the matching exit code."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except GammaVaeError as e:
            logger.debug("Command failed", exc_info=True)
            click.echo(json.dumps({'error': e.kind, 'code': e.exit_code, 'message': str(e)}), err=True)
            sys.exit(e.exit_code)
    return wrapper


def _parse_floats(text: str, what: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(',')])
    except ValueError:
        raise ParseError(f"{what} must be comma-separated numbers, got {text!r}")


def _parse_widths(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(',')]
    except ValueError:
        raise ConfigError(f"--hidden-dims must be comma-separated integers, got {text!r}")


def _parse_params(pairs: Sequence[str]) -> Dict[str, str]:
    params = {}
    for pair in pairs:
        key, sep, value = pair.partition('=')
        if not sep:
            raise ParseError(f"parameter must look like KEY=VALUE, got {pair!r}")
        params[key.strip()] = value.strip()
    return params


def _read_dataset(path: str, label_column: Optional[str], group_column: Optional[str],
                  id_column: Optional[str]) -> Dataset:
    """Load a data file; sample_id/label/group columns are picked up by name unless given."""
    fmt = 'tsv' if path.endswith(('.tsv', '.txt')) else 'csv'
    try:
        with open(path, 'r', newline='') as f:
            header = next(csv.reader(f, delimiter=',' if fmt == 'csv' else '\t'), [])
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}")
    header = [name.strip() for name in header]
    return load_matrix(
        path, fmt=fmt,
        label_column=label_column or ('label' if 'label' in header else None),
        group_column=group_column or ('group' if 'group' in header else None),
        id_column=id_column or ('sample_id' if 'sample_id' in header else None),
    )


def _normalization_for(checkpoint: str, explicit: Optional[str]) -> Optional[NormalizationRecord]:
    path = Path(explicit) if explicit else Path(checkpoint).with_name(NORMALIZATION_FILE)
    if explicit or path.exists():
        return NormalizationRecord.load(path)
    logger.warning(f"No normalization record next to {checkpoint}; using data as given")
    return None


def _embed_checkpoint(checkpoint: str, dataset: Dataset,
                      normalization: Optional[str] = None) -> Embedding:
    models = load_checkpoint(checkpoint)
    if dataset.n_features != models.data_dim:
        raise ShapeError(f"{checkpoint} expects {models.data_dim} features, data has {dataset.n_features}")
    return embed(models, dataset, _normalization_for(checkpoint, normalization))


def _box_bounds(box: Sequence[Tuple[float, float]], models: ModelPair) -> List[Tuple[float, float]]:
    if not box:
        return [(-3.0, 3.0)] * models.latent_dim
    if len(box) != models.latent_dim:
        raise ShapeError(f"--box given {len(box)} times, latent dim is {models.latent_dim}")
    for lo, hi in box:
        if not lo < hi:
            raise DomainError(f"box bounds must satisfy low < high, got ({lo}, {hi})")
    return list(box)


def data_options(func):
    for decorator in reversed([
        click.option('--data', required=True, type=click.Path(exists=True, dir_okay=False),
                     help='CSV/TSV data file'),
        click.option('--label-column', default=None, help='Label column (default: "label" if present)'),
        click.option('--group-column', default=None, help='Group column (default: "group" if present)'),
        click.option('--id-column', default=None, help='Sample id column (default: "sample_id" if present)'),
    ]):
        func = decorator(func)
    return func


def output_options(func):
    for decorator in reversed([
        click.option('--out', required=True, type=click.Path(), help='Fresh output directory'),
        click.option('--force', is_flag=True, help='Write into an existing output directory'),
    ]):
        func = decorator(func)
    return func


@click.group()
@click.version_option(__version__)
@click.option('--settings', default=None, type=click.Path(), help='YAML settings file')
@click.pass_context
@handle_errors
def cli(ctx, settings):
    """Gamma-VAE - curvature-regularized variational autoencoders"""
    ctx.obj = load_settings(settings)
    setup_logging(ctx.obj)


@cli.command()
@click.option('--kind', required=True, type=click.Choice(sorted(SYNTHETIC_PARAMS)))
@click.option('--param', 'params', multiple=True, help='Generator parameter KEY=VALUE')
@click.option('--n', 'n_samples', default=1000, show_default=True, type=int)
@click.option('--noise', default=0.0, show_default=True, type=float, help='Gaussian noise sigma')
@click.option('--seed', default=0, show_default=True, type=int)
@output_options
@click.pass_obj
@handle_errors
def gen(settings, kind, params, n_samples, noise, seed, out, force):
    """Generate a synthetic benchmark dataset"""
    run = Run('gen', out, force, settings)
    dataset = gen_synthetic(kind, _parse_params(params), n_samples, noise, seed)
    run.manifest.seed = seed
    save_matrix(dataset, run.path('data.csv'))
    run.finish()


@cli.command('train')
@click.option('--config', 'config_path', default=None, type=click.Path(exists=True, dir_okay=False),
              help='TrainingConfig JSON')
@data_options
@output_options
@click.option('--seed', default=None, type=int)
@click.option('--beta', default=None, type=float)
@click.option('--gamma', default=None, type=float)
@click.option('--delta', default=None, type=float)
@click.option('--m-samples', default=None, type=int)
@click.option('--sampler-scale', default=None, type=float)
@click.option('--learning-rate', default=None, type=float)
@click.option('--epochs', default=None, type=int)
@click.option('--batch-size', default=None, type=int)
@click.option('--latent-dim', default=None, type=int)
@click.option('--hidden-dims', default=None, help='Comma-separated hidden layer widths')
@click.option('--normalize', 'scheme', default=None, type=click.Choice(SCHEMES))
@click.option('--holdout-group', 'holdout_groups', multiple=True,
              help='Group excluded from training (repeatable)')
@click.pass_obj
@handle_errors
def train_command(settings, config_path, data, label_column, group_column, id_column, out, force,
                  seed, beta, gamma, delta, m_samples, sampler_scale, learning_rate, epochs,
                  batch_size, latent_dim, hidden_dims, scheme, holdout_groups):
    """Train a Gamma-VAE and write checkpoint, normalization and metrics"""
    run = Run('train', out, force, settings)
    overrides = {
        'seed': seed, 'beta': beta, 'gamma': gamma, 'delta': delta, 'm_samples': m_samples,
        'sampler_scale': sampler_scale, 'learning_rate': learning_rate, 'epochs': epochs,
        'batch_size': batch_size, 'latent_dim': latent_dim,
        'hidden_dims': _parse_widths(hidden_dims) if hidden_dims else None,
    }
    config = load_training_config(config_path, overrides)
    dataset = _read_dataset(data, label_column, group_column, id_column)
    if holdout_groups:
        dataset, held = split(dataset, SplitSpec('holdout_groups', groups=tuple(holdout_groups)))
        logger.info(f"Holding out {held.n_samples} samples in {', '.join(holdout_groups)}")
    normalized, record = normalize(dataset, scheme or run.defaults['normalize'])
    run.input(config_path, data)
    run.manifest.config = config_path
    run.manifest.seed = config.seed

    try:
        models, log = train(normalized.matrix, config)
    except DivergedTrainingError as e:
        run.write_csv('metrics.csv', METRICS_HEADER, (m.row() for m in e.log))
        run.write_json('config.json', config.to_dict())
        run.finish()
        raise
    save_checkpoint(models, run.path(CHECKPOINT_FILE))
    record.save(run.path(NORMALIZATION_FILE))
    run.write_csv('metrics.csv', METRICS_HEADER, (m.row() for m in log))
    run.write_json('config.json', config.to_dict())
    run.finish()


@cli.command('embed')
@click.option('--checkpoint', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--normalization', default=None, type=click.Path(exists=True, dir_okay=False),
              help='Normalization record (default: the one next to the checkpoint)')
@data_options
@output_options
@click.pass_obj
@handle_errors
def embed_command(settings, checkpoint, normalization, data, label_column, group_column, id_column,
                  out, force):
    """Write encoder-mean embeddings of a dataset"""
    run = Run('embed', out, force, settings)
    dataset = _read_dataset(data, label_column, group_column, id_column)
    embedding = _embed_checkpoint(checkpoint, dataset, normalization)
    run.input(checkpoint, normalization, data)
    save_embedding(embedding, run.path('embedding.csv'))
    run.finish()


@cli.command()
@click.option('--checkpoint', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--box', multiple=True, type=(float, float), help='LOW HIGH per latent axis')
@click.option('--resolution', default=20, show_default=True, type=int)
@click.option('--jitter-scale', default=None, type=float)
@click.option('--sqrt', 'take_sqrt', is_flag=True, help='Report square roots of the curvature scalars')
@click.option('--directional', is_flag=True, help='Add largest curvature over tangent directions')
@output_options
@click.pass_obj
@handle_errors
def curvature(settings, checkpoint, box, resolution, jitter_scale, take_sqrt, directional, out, force):
    """Curvature map over a regular latent grid"""
    run = Run('curvature', out, force, settings)
    models = load_checkpoint(checkpoint)
    bounds = _box_bounds(box, models)
    if resolution < 1:
        raise DomainError(f"resolution must be positive, got {resolution}")
    jitter = run.defaults['jitter_scale'] if jitter_scale is None else jitter_scale
    run.input(checkpoint)

    grid, _ = decode_grid(models.decoder, bounds, resolution)
    jet, geometry = evaluate_points(models.decoder, grid, jitter, thread_count())
    center = decoder_jet(models.decoder, np.mean(np.asarray(bounds), axis=1))
    pe, ex = geometry.pe_curvature, geometry.ex_curvature
    if take_sqrt:
        pe, ex = np.sqrt(pe), np.sqrt(ex)

    header = [*(f"z{i + 1}" for i in range(models.latent_dim)), 'pe', 'ex', 'max_tangent_angle']
    if directional:
        header += ['max_pe_direction', 'max_ex_direction']
    rows = []
    for i, z in enumerate(grid):
        row = [*(repr(float(v)) for v in z), repr(float(pe[i])), repr(float(ex[i])),
               repr(float(tangent_angles(jet[i], center)[-1]))]
        if directional:
            point_geometry = geometry[i]
            row += [repr(v) for v in directional_curvatures(jet[i], point_geometry)]
        rows.append(row)
    run.write_csv('curvature.csv', header, rows)
    run.finish()


@cli.command()
@click.option('--checkpoint', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--box', multiple=True, type=(float, float), help='LOW HIGH per latent axis')
@click.option('--resolution', default=20, show_default=True, type=int)
@click.option('--components', 'k', default=3, show_default=True, type=int,
              help='PCA components of the decoded grid')
@output_options
@click.pass_obj
@handle_errors
def grid(settings, checkpoint, box, resolution, k, out, force):
    """Decode a latent grid and project it onto its principal components"""
    run = Run('grid', out, force, settings)
    models = load_checkpoint(checkpoint)
    lattice, decoded = decode_grid(models.decoder, _box_bounds(box, models), resolution)
    pca = pca_fit(decoded, k)
    projected = pca_project(pca, decoded)
    run.input(checkpoint)
    header = [*(f"z{i + 1}" for i in range(models.latent_dim)), *(f"pc{j + 1}" for j in range(k))]
    run.write_csv('grid.csv', header,
                  ([*(repr(float(v)) for v in z), *(repr(float(v)) for v in p)]
                   for z, p in zip(lattice, projected)))
    run.finish()


@cli.command()
@click.option('--checkpoint', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--origin', required=True, help='Comma-separated latent point')
@click.option('--samples', default=100, show_default=True, type=int)
@click.option('--radius', default=1.0, show_default=True, type=float,
              help='Standard deviation of sampled offsets from the origin')
@click.option('--seed', default=0, show_default=True, type=int)
@output_options
@click.pass_obj
@handle_errors
def angles(settings, checkpoint, origin, samples, radius, seed, out, force):
    """Principal angles between the tangent space at an origin and at nearby points"""
    run = Run('angles', out, force, settings)
    models = load_checkpoint(checkpoint)
    z0 = _parse_floats(origin, '--origin')
    if len(z0) != models.latent_dim:
        raise ShapeError(f"origin has {len(z0)} coordinates, latent dim is {models.latent_dim}")
    if samples < 1 or radius <= 0:
        raise DomainError("--samples must be positive and --radius must be > 0")
    run.input(checkpoint)
    run.manifest.seed = seed

    points = z0 + radius * np.random.default_rng(seed).standard_normal((samples, len(z0)))
    base = decoder_jet(models.decoder, z0)
    jets = decoder_jet(models.decoder, points)
    m = models.latent_dim
    header = [*(f"z{i + 1}" for i in range(m)), *(f"angle{i + 1}" for i in range(m))]
    run.write_csv('angles.csv', header,
                  ([*(repr(float(v)) for v in z), *(repr(float(a)) for a in tangent_angles(base, jets[i]))]
                   for i, z in enumerate(points)))
    run.finish()


@cli.command()
@click.option('--checkpoint', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--start', 'z_start', required=True, help='Comma-separated latent start point')
@click.option('--end', 'z_end', required=True, help='Comma-separated latent end point')
@click.option('--points', 'n_points', default=50, show_default=True, type=int)
@click.option('--denormalize', is_flag=True, help='Map trajectories back to input units')
@click.option('--normalization', default=None, type=click.Path(exists=True, dir_okay=False))
@click.option('--data', default=None, type=click.Path(exists=True, dir_okay=False),
              help='Data file whose header names the features')
@output_options
@click.pass_obj
@handle_errors
def path(settings, checkpoint, z_start, z_end, n_points, denormalize, normalization, data, out, force):
    """Decoded feature trajectories along a latent segment"""
    run = Run('path', out, force, settings)
    models = load_checkpoint(checkpoint)
    start, end = _parse_floats(z_start, '--start'), _parse_floats(z_end, '--end')
    for point in (start, end):
        if len(point) != models.latent_dim:
            raise ShapeError(f"path endpoint has {len(point)} coordinates, latent dim is {models.latent_dim}")
    names = [f"x{i + 1}" for i in range(models.data_dim)]
    if data:
        names = list(_read_dataset(data, None, None, None).feature_names)
        if len(names) != models.data_dim:
            raise ShapeError(f"{data} has {len(names)} features, model decodes {models.data_dim}")
    record = _normalization_for(checkpoint, normalization) if denormalize else None
    if denormalize and record is None:
        raise DomainError("--denormalize needs a normalization record")
    run.input(checkpoint, normalization, data)

    t, decoded = decode_path(models.decoder, start, end, n_points)
    if record is not None:
        decoded = record.invert(decoded)
    run.write_csv('path.csv', ['t', *names],
                  ([repr(float(s)), *(repr(float(v)) for v in row)] for s, row in zip(t, decoded)))
    run.finish()


@cli.command()
@click.option('--full-checkpoint', default=None, type=click.Path(exists=True, dir_okay=False))
@click.option('--holdout-checkpoint', default=None, type=click.Path(exists=True, dir_okay=False))
@click.option('--full-embedding', default=None, type=click.Path(exists=True, dir_okay=False),
              help='Precomputed embedding CSV instead of --full-checkpoint')
@click.option('--holdout-embedding', default=None, type=click.Path(exists=True, dir_okay=False),
              help='Precomputed embedding CSV instead of --holdout-checkpoint')
@click.option('--data', default=None, type=click.Path(exists=True, dir_okay=False))
@click.option('--group', 'groups', required=True, multiple=True, help='Held-out group (repeatable)')
@click.option('--bins', default=None, type=int, help='Density histogram bins per axis')
@click.option('--pairs', default='rest', show_default=True, type=click.Choice(OOD_PAIRS),
              help='Held-out samples paired with the rest or with each other')
@output_options
@click.pass_obj
@handle_errors
def ood(settings, full_checkpoint, holdout_checkpoint, full_embedding, holdout_embedding, data,
        groups, bins, pairs, out, force):
    """Out-of-distribution re-embedding consistency between two models"""
    run = Run('ood', out, force, settings)
    if bool(full_checkpoint) == bool(full_embedding) or bool(holdout_checkpoint) == bool(holdout_embedding):
        raise ParseError("give exactly one of --*-checkpoint / --*-embedding for each side")
    if (full_checkpoint or holdout_checkpoint) and not data:
        raise ParseError("--data is required when embedding from checkpoints")
    bins = bins or int(run.defaults['density_bins'])
    if bins < 1:
        raise DomainError(f"bins must be positive, got {bins}")
    dataset = _read_dataset(data, None, None, None) if data else None
    run.input(full_checkpoint, full_embedding, holdout_checkpoint, holdout_embedding, data)

    full = load_embedding(full_embedding) if full_embedding else _embed_checkpoint(full_checkpoint, dataset)
    holdout = (load_embedding(holdout_embedding) if holdout_embedding
               else _embed_checkpoint(holdout_checkpoint, dataset))
    d_full, d_holdout = ood_distances(full, holdout, groups, pairs)
    rho = spearman(d_full, d_holdout)
    logger.info(f"OOD consistency for {', '.join(groups)}: rho={rho:.4f} ({pairs} pairs)")
    density = distance_density(d_full, d_holdout, bins)

    if full_checkpoint:
        save_embedding(full, run.path('full_embedding.csv'))
    if holdout_checkpoint:
        save_embedding(holdout, run.path('holdout_embedding.csv'))
    run.write_csv('consistency.csv', ['groups', 'pairs', 'rho', 'n_distances'],
                  [[';'.join(groups), pairs, repr(rho), len(d_full)]])
    run.write_csv('density.csv', ['row_bin', 'col_bin', 'density'],
                  ([r, c, repr(float(density[r, c]))]
                   for r in range(bins) for c in range(bins)))
    click.echo(f"rho = {rho:.4f}")
    run.finish()


@cli.command()
@click.option('--embedding', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--labels', 'labels_path', default=None, type=click.Path(exists=True, dir_okay=False),
              help='CSV with sample_id,label (default: labels in the embedding)')
@click.option('--holdout-fraction', default=0.3, show_default=True, type=float)
@click.option('--seed', default=0, show_default=True, type=int)
@output_options
@click.pass_obj
@handle_errors
def classify(settings, embedding, labels_path, holdout_fraction, seed, out, force):
    """Linear discriminant accuracy in an embedding"""
    run = Run('classify', out, force, settings)
    emb = load_embedding(embedding)
    labels = emb.labels
    if labels_path:
        with open(labels_path, 'r', newline='') as f:
            reader = csv.DictReader(f)
            absent = [c for c in ('sample_id', 'label') if c not in (reader.fieldnames or [])]
            if absent:
                raise ParseError(f"labels file {labels_path} lacks column(s) {', '.join(absent)}")
            table = {row['sample_id']: row['label'] for row in reader}
        missing = [s for s in emb.sample_ids if s not in table]
        if missing:
            raise ParseError(f"{len(missing)} embedded samples have no label, e.g. {missing[0]!r}")
        labels = tuple(table[s] for s in emb.sample_ids)
    if labels is None:
        raise ParseError("no labels: the embedding has no label column and --labels was not given")
    run.input(embedding, labels_path)
    run.manifest.seed = seed

    tagged = Dataset(emb.points, tuple(f"z{i + 1}" for i in range(emb.dim)), labels,
                     sample_ids=emb.sample_ids)
    train_set, test_set = split(tagged, SplitSpec('random_fraction', holdout_fraction, seed=seed))
    model = lda_fit(train_set.matrix, train_set.labels, run.defaults['jitter_scale'])
    rows = []
    summary = []
    for name, part in (('train', train_set), ('test', test_set)):
        if part.n_samples == 0:
            continue
        predicted = model.predict(part.matrix)
        summary.append([name, repr(accuracy(predicted, part.labels)), part.n_samples])
        rows += [[s, truth, guess, name] for s, truth, guess in zip(part.sample_ids, part.labels, predicted)]
    run.write_csv('predictions.csv', ['sample_id', 'label', 'predicted', 'split'], rows)
    run.write_csv('accuracy.csv', ['split', 'accuracy', 'n'], summary)
    for name, acc, n in summary:
        click.echo(f"{name} accuracy = {float(acc):.4f} (n={n})")
    run.finish()


@cli.command()
@data_options
@click.option('--components', 'k', default=2, show_default=True, type=int)
@click.option('--normalize', 'scheme', default=None, type=click.Choice(SCHEMES))
@click.option('--holdout-group', 'holdout_groups', multiple=True,
              help='Group left out of the PCA fit (still projected)')
@output_options
@click.pass_obj
@handle_errors
def pca(settings, data, label_column, group_column, id_column, k, scheme, holdout_groups, out, force):
    """Linear baseline embedding"""
    run = Run('pca', out, force, settings)
    dataset = _read_dataset(data, label_column, group_column, id_column)
    fit_set = split(dataset, SplitSpec('holdout_groups', groups=tuple(holdout_groups)))[0] \
        if holdout_groups else dataset
    fit_set, record = normalize(fit_set, scheme or run.defaults['normalize'])
    model = pca_fit(fit_set, k)
    run.input(data)
    save_embedding(pca_embedding(model, apply_normalization(dataset, record)), run.path('embedding.csv'))
    run.write_json('pca.json', {
        'mean': model.mean.tolist(),
        'components': model.components.tolist(),
        'explained_variance': model.explained_variance.tolist(),
    })
    run.finish()


@cli.command()
@click.option('--config', 'config_path', default=None, type=click.Path(exists=True, dir_okay=False))
@data_options
@click.option('--pair', 'pairs', required=True, multiple=True, type=(float, float),
              help='GAMMA DELTA to train with (repeatable)')
@click.option('--seed', default=None, type=int)
@click.option('--normalize', 'scheme', default=None, type=click.Choice(SCHEMES))
@output_options
@click.pass_obj
@handle_errors
def sweep(settings, config_path, data, label_column, group_column, id_column, pairs, seed, scheme,
          out, force):
    """Train across curvature weights and tabulate the final metrics"""
    run = Run('sweep', out, force, settings)
    config = load_training_config(config_path, {'seed': seed})
    dataset = _read_dataset(data, label_column, group_column, id_column)
    normalized, _ = normalize(dataset, scheme or run.defaults['normalize'])
    run.input(config_path, data)
    run.manifest.config = config_path
    run.manifest.seed = config.seed

    rows = sweep_regularization(normalized.matrix, config, pairs)
    header = ['gamma', 'delta', *METRICS_HEADER]
    run.write_csv('sweep.csv', header, ([row[name] for name in header] for row in rows))
    run.finish()


@cli.command()
@data_options
@click.option('--features', required=True, help='Comma-separated feature names')
@click.option('--normalize', 'scheme', default=None, type=click.Choice(SCHEMES))
@output_options
@click.pass_obj
@handle_errors
def signature(settings, data, label_column, group_column, id_column, features, scheme, out, force):
    """Per-sample signature score over a feature subset"""
    run = Run('signature', out, force, settings)
    dataset = _read_dataset(data, label_column, group_column, id_column)
    normalized, _ = normalize(dataset, scheme or run.defaults['normalize'])
    scores = signature_score(normalized, [name.strip() for name in features.split(',') if name.strip()])
    run.input(data)
    run.write_csv('signature.csv', ['sample_id', 'score'],
                  ([s, repr(float(v))] for s, v in zip(dataset.sample_ids, scores)))
    run.finish()


@cli.command()
@click.option('--checkpoint', required=True, type=click.Path(exists=True, dir_okay=False))
@data_options
@click.option('--samples', 'm_samples', default=256, show_default=True, type=int)
@click.option('--sampler-scale', default=2.0, show_default=True, type=float)
@click.option('--seed', default=0, show_default=True, type=int)
@click.option('--jitter-scale', default=None, type=float)
@click.pass_obj
@handle_errors
def audit(settings, checkpoint, data, label_column, group_column, id_column, m_samples,
          sampler_scale, seed, jitter_scale):
    """Print mean and max curvature over points sampled around the embedded data"""
    models = load_checkpoint(checkpoint)
    emb = _embed_checkpoint(checkpoint, _read_dataset(data, label_column, group_column, id_column))
    points = sample_curvature_points(emb.points, m_samples, sampler_scale, np.random.default_rng(seed))
    jitter = settings['defaults']['jitter_scale'] if jitter_scale is None else jitter_scale
    summary = curvature_summary(models, points, jitter, thread_count())
    for name, value in asdict(summary).items():
        click.echo(f"{name}: {value:.6g}")


def main():
    """Main entry point."""
    cli()


if __name__ == '__main__':
    main()

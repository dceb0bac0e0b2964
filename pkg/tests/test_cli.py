"""Command-line tests driven through click's CliRunner."""

import csv
import json
import logging

import pytest

from src.gammavae import cli
from src.training import METRICS_HEADER

TRAIN_FLAGS = ['--epochs', '2', '--batch-size', '16', '--hidden-dims', '8', '--m-samples', '4',
               '--latent-dim', '2', '--seed', '1']


@pytest.fixture(autouse=True)
def reset_logging():
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, '_gammavae', False):
            root.removeHandler(handler)


def read_rows(path):
    with open(path, newline='') as f:
        return list(csv.reader(f))


def train_run(runner, data, out, *extra):
    result = runner.invoke(cli, ['train', '--data', str(data), '--out', str(out), *TRAIN_FLAGS, *extra])
    assert result.exit_code == 0, result.output
    return out / 'checkpoint.json'


class TestGen:
    def test_writes_data_and_manifest(self, runner, tmp_path):
        out = tmp_path / 'gen'
        result = runner.invoke(cli, ['gen', '--kind', 'sphere', '--param', 'N=5', '--n', '20',
                                     '--seed', '2', '--out', str(out)])
        assert result.exit_code == 0, result.output
        rows = read_rows(out / 'data.csv')
        assert rows[0][0] == 'sample_id'
        assert len(rows) == 21
        manifest = json.loads((out / 'manifest.json').read_text())
        assert manifest['command'] == 'gen'
        assert manifest['seed'] == 2
        assert manifest['outputs'] == [str(out / 'data.csv')]

    def test_existing_output_is_refused(self, runner, tmp_path):
        out = tmp_path / 'gen'
        out.mkdir()
        result = runner.invoke(cli, ['gen', '--kind', 'sphere', '--n', '10', '--out', str(out)])
        assert result.exit_code == 3
        assert '"error": "output_exists"' in result.output
        assert not (out / 'data.csv').exists()

    def test_force_overwrites(self, runner, tmp_path):
        out = tmp_path / 'gen'
        out.mkdir()
        result = runner.invoke(cli, ['gen', '--kind', 'sphere', '--n', '10', '--out', str(out), '--force'])
        assert result.exit_code == 0, result.output
        assert (out / 'data.csv').exists()

    def test_bad_parameter(self, runner, tmp_path):
        result = runner.invoke(cli, ['gen', '--kind', 'sphere', '--param', 'R', '--out', str(tmp_path / 'g')])
        assert result.exit_code == 2


class TestTrain:
    def test_outputs(self, runner, tmp_path, linear_csv):
        out = tmp_path / 'run'
        train_run(runner, linear_csv, out)
        for name in ('checkpoint.json', 'normalization.json', 'metrics.csv', 'config.json', 'manifest.json'):
            assert (out / name).exists()
        rows = read_rows(out / 'metrics.csv')
        assert rows[0] == METRICS_HEADER
        assert len(rows) == 3
        assert json.loads((out / 'config.json').read_text())['hidden_dims'] == [8]

    def test_unknown_config_key(self, runner, tmp_path, linear_csv):
        config = tmp_path / 'config.json'
        config.write_text(json.dumps({'gama': 1.0}))
        out = tmp_path / 'run'
        result = runner.invoke(cli, ['train', '--data', str(linear_csv), '--config', str(config),
                                     '--out', str(out)])
        assert result.exit_code == 2
        assert '"error": "config_error"' in result.output
        assert not out.exists()

    def test_flag_overrides_config_file(self, runner, tmp_path, linear_csv):
        config = tmp_path / 'config.json'
        config.write_text(json.dumps({'gamma': 5.0, 'epochs': 7}))
        out = tmp_path / 'run'
        train_run(runner, linear_csv, out, '--config', str(config))
        saved = json.loads((out / 'config.json').read_text())
        assert saved['gamma'] == 5.0
        assert saved['epochs'] == 2

    def test_divergence_keeps_partial_metrics(self, runner, tmp_path, linear_csv):
        out = tmp_path / 'run'
        result = runner.invoke(cli, ['train', '--data', str(linear_csv), '--out', str(out), *TRAIN_FLAGS,
                                     '--learning-rate', '1e300'])
        assert result.exit_code == 4
        assert '"error": "diverged_training"' in result.output
        assert read_rows(out / 'metrics.csv')[0] == METRICS_HEADER
        assert (out / 'config.json').exists()
        assert not (out / 'checkpoint.json').exists()
        manifest = json.loads((out / 'manifest.json').read_text())
        assert manifest['command'] == 'train'

    def test_deterministic_outputs(self, runner, tmp_path, linear_csv):
        for name in ('a', 'b'):
            checkpoint = train_run(runner, linear_csv, tmp_path / f"train_{name}")
            result = runner.invoke(cli, ['embed', '--checkpoint', str(checkpoint), '--data', str(linear_csv),
                                         '--out', str(tmp_path / f"embed_{name}")])
            assert result.exit_code == 0, result.output
        for first, second in (('train_a/metrics.csv', 'train_b/metrics.csv'),
                              ('train_a/checkpoint.json', 'train_b/checkpoint.json'),
                              ('embed_a/embedding.csv', 'embed_b/embedding.csv')):
            assert (tmp_path / first).read_bytes() == (tmp_path / second).read_bytes()


class TestModelCommands:
    @pytest.fixture
    def checkpoint(self, runner, tmp_path, linear_csv):
        return train_run(runner, linear_csv, tmp_path / 'model')

    def test_embed_feature_mismatch(self, runner, tmp_path, checkpoint, clusters_csv):
        out = tmp_path / 'embed'
        result = runner.invoke(cli, ['embed', '--checkpoint', str(checkpoint), '--data', str(clusters_csv),
                                     '--out', str(out)])
        assert result.exit_code == 3
        assert '"error": "shape_error"' in result.output
        assert not out.exists()

    def test_embed_columns(self, runner, tmp_path, checkpoint, linear_csv):
        out = tmp_path / 'embed'
        result = runner.invoke(cli, ['embed', '--checkpoint', str(checkpoint), '--data', str(linear_csv),
                                     '--out', str(out)])
        assert result.exit_code == 0, result.output
        rows = read_rows(out / 'embedding.csv')
        assert rows[0] == ['sample_id', 'z1', 'z2', 'label', 'group']
        assert len(rows) == 65

    def test_curvature(self, runner, tmp_path, checkpoint):
        out = tmp_path / 'curv'
        result = runner.invoke(cli, ['curvature', '--checkpoint', str(checkpoint), '--box', '-1', '1',
                                     '--box', '-1', '1', '--resolution', '3', '--directional',
                                     '--out', str(out)])
        assert result.exit_code == 0, result.output
        rows = read_rows(out / 'curvature.csv')
        assert rows[0] == ['z1', 'z2', 'pe', 'ex', 'max_tangent_angle', 'max_pe_direction', 'max_ex_direction']
        assert len(rows) == 10
        assert all(float(row[2]) >= 0 and float(row[3]) >= 0 for row in rows[1:])

    def test_curvature_box_dimension(self, runner, tmp_path, checkpoint):
        result = runner.invoke(cli, ['curvature', '--checkpoint', str(checkpoint), '--box', '-1', '1',
                                     '--out', str(tmp_path / 'curv')])
        assert result.exit_code == 3

    def test_grid(self, runner, tmp_path, checkpoint):
        out = tmp_path / 'grid'
        result = runner.invoke(cli, ['grid', '--checkpoint', str(checkpoint), '--resolution', '4',
                                     '--components', '2', '--out', str(out)])
        assert result.exit_code == 0, result.output
        rows = read_rows(out / 'grid.csv')
        assert rows[0] == ['z1', 'z2', 'pc1', 'pc2']
        assert len(rows) == 17

    def test_angles(self, runner, tmp_path, checkpoint):
        out = tmp_path / 'angles'
        result = runner.invoke(cli, ['angles', '--checkpoint', str(checkpoint), '--origin', '0,0',
                                     '--samples', '5', '--out', str(out)])
        assert result.exit_code == 0, result.output
        rows = read_rows(out / 'angles.csv')
        assert rows[0] == ['z1', 'z2', 'angle1', 'angle2']
        assert len(rows) == 6

    def test_path_denormalized(self, runner, tmp_path, checkpoint, linear_csv):
        out = tmp_path / 'path'
        result = runner.invoke(cli, ['path', '--checkpoint', str(checkpoint), '--start', '-1,0',
                                     '--end', '1,0.5', '--points', '7', '--denormalize',
                                     '--data', str(linear_csv), '--out', str(out)])
        assert result.exit_code == 0, result.output
        rows = read_rows(out / 'path.csv')
        assert rows[0][0] == 't'
        assert len(rows[0]) == 7
        assert [float(row[0]) for row in (rows[1], rows[-1])] == [0.0, 1.0]

    def test_path_endpoint_dimension(self, runner, tmp_path, checkpoint):
        result = runner.invoke(cli, ['path', '--checkpoint', str(checkpoint), '--start', '0,0,0',
                                     '--end', '1,1', '--out', str(tmp_path / 'path')])
        assert result.exit_code == 3

    def test_audit(self, runner, checkpoint, linear_csv):
        result = runner.invoke(cli, ['audit', '--checkpoint', str(checkpoint), '--data', str(linear_csv),
                                     '--samples', '8'])
        assert result.exit_code == 0, result.output
        assert 'pe_mean:' in result.output


class TestEmbeddingCommands:
    @pytest.fixture
    def embedding(self, runner, tmp_path, clusters_csv):
        out = tmp_path / 'pca'
        result = runner.invoke(cli, ['pca', '--data', str(clusters_csv), '--components', '2', '--out', str(out)])
        assert result.exit_code == 0, result.output
        return out / 'embedding.csv'

    def test_pca_outputs(self, embedding):
        pca = json.loads((embedding.parent / 'pca.json').read_text())
        assert len(pca['components']) == 2
        assert read_rows(embedding)[0] == ['sample_id', 'z1', 'z2', 'label', 'group']

    def test_ood_identical_embeddings(self, runner, tmp_path, embedding):
        out = tmp_path / 'ood'
        result = runner.invoke(cli, ['ood', '--full-embedding', str(embedding),
                                     '--holdout-embedding', str(embedding), '--group', 'c0',
                                     '--bins', '5', '--out', str(out)])
        assert result.exit_code == 0, result.output
        assert 'rho = 1.0000' in result.output
        assert read_rows(out / 'consistency.csv')[1][1:3] == ['rest', '1.0']
        density = read_rows(out / 'density.csv')
        assert density[0] == ['row_bin', 'col_bin', 'density']
        assert len(density) == 26

    def test_ood_within_group_pairs(self, runner, tmp_path, embedding):
        out = tmp_path / 'ood'
        result = runner.invoke(cli, ['ood', '--full-embedding', str(embedding),
                                     '--holdout-embedding', str(embedding), '--group', 'c0',
                                     '--pairs', 'within', '--bins', '5', '--out', str(out)])
        assert result.exit_code == 0, result.output
        assert 'rho = 1.0000' in result.output
        row = read_rows(out / 'consistency.csv')[1]
        assert row[1] == 'within'
        n_held = sum(1 for r in read_rows(embedding)[1:] if r[-1] == 'c0')
        assert int(row[3]) == n_held * (n_held - 1) // 2

    def test_ood_needs_one_source_per_side(self, runner, tmp_path, embedding):
        result = runner.invoke(cli, ['ood', '--full-embedding', str(embedding), '--group', 'c0',
                                     '--out', str(tmp_path / 'ood')])
        assert result.exit_code == 2

    def test_ood_unknown_group(self, runner, tmp_path, embedding):
        result = runner.invoke(cli, ['ood', '--full-embedding', str(embedding),
                                     '--holdout-embedding', str(embedding), '--group', 'nope',
                                     '--out', str(tmp_path / 'ood')])
        assert result.exit_code == 3
        assert '"error": "missing_samples"' in result.output

    def test_classify(self, runner, tmp_path, embedding):
        out = tmp_path / 'classify'
        result = runner.invoke(cli, ['classify', '--embedding', str(embedding), '--seed', '3',
                                     '--out', str(out)])
        assert result.exit_code == 0, result.output
        summary = read_rows(out / 'accuracy.csv')
        assert [row[0] for row in summary[1:]] == ['train', 'test']
        assert all(0.0 <= float(row[1]) <= 1.0 for row in summary[1:])
        assert len(read_rows(out / 'predictions.csv')) == 91

    def test_classify_labels_file_without_label_column(self, runner, tmp_path, embedding):
        labels = tmp_path / 'labels.csv'
        ids = [r[0] for r in read_rows(embedding)[1:]]
        labels.write_text('sample_id,cell_type\n' + ''.join(f"{s},x\n" for s in ids))
        out = tmp_path / 'classify'
        result = runner.invoke(cli, ['classify', '--embedding', str(embedding), '--labels', str(labels),
                                     '--out', str(out)])
        assert result.exit_code == 2
        assert '"error": "parse_error"' in result.output
        assert 'label' in result.output
        assert not out.exists()

    def test_signature(self, runner, tmp_path, clusters_csv):
        out = tmp_path / 'sig'
        result = runner.invoke(cli, ['signature', '--data', str(clusters_csv), '--features', 'f0,f1',
                                     '--out', str(out)])
        assert result.exit_code == 0, result.output
        assert read_rows(out / 'signature.csv')[0] == ['sample_id', 'score']

    def test_signature_unknown_feature(self, runner, tmp_path, clusters_csv):
        result = runner.invoke(cli, ['signature', '--data', str(clusters_csv), '--features', 'gene_x',
                                     '--out', str(tmp_path / 'sig')])
        assert result.exit_code == 3


def test_sweep(runner, tmp_path, linear_csv):
    out = tmp_path / 'sweep'
    result = runner.invoke(cli, ['sweep', '--data', str(linear_csv), '--pair', '0', '0', '--pair', '1', '1',
                                 '--config', str(_tiny_config(tmp_path)), '--out', str(out)])
    assert result.exit_code == 0, result.output
    rows = read_rows(out / 'sweep.csv')
    assert rows[0] == ['gamma', 'delta', *METRICS_HEADER]
    assert len(rows) == 3


def _tiny_config(tmp_path):
    path = tmp_path / 'tiny.json'
    path.write_text(json.dumps({'epochs': 1, 'batch_size': 16, 'hidden_dims': [8], 'm_samples': 4}))
    return path


class TestSettings:
    def test_malformed_settings_file(self, runner, tmp_path):
        settings = tmp_path / 'settings.yaml'
        settings.write_text('logging: [unclosed\n')
        out = tmp_path / 'gen'
        result = runner.invoke(cli, ['--settings', str(settings), 'gen', '--kind', 'sphere', '--n', '10',
                                     '--out', str(out)])
        assert result.exit_code == 2
        assert '"error": "config_error"' in result.output
        assert not out.exists()

    def test_unknown_log_level(self, runner, tmp_path):
        settings = tmp_path / 'settings.yaml'
        settings.write_text('logging:\n  level: LOUD\n')
        result = runner.invoke(cli, ['--settings', str(settings), 'gen', '--kind', 'sphere', '--n', '10',
                                     '--out', str(tmp_path / 'gen')])
        assert result.exit_code == 2
        assert '"error": "config_error"' in result.output

    def test_settings_must_be_a_mapping(self, runner, tmp_path):
        settings = tmp_path / 'settings.yaml'
        settings.write_text('- logging\n')
        result = runner.invoke(cli, ['--settings', str(settings), 'gen', '--kind', 'sphere', '--n', '10',
                                     '--out', str(tmp_path / 'gen')])
        assert result.exit_code == 2

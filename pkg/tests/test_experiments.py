import json
import os

import numpy as np
import pytest

import app
from experiments import artifacts
from experiments.config import (
    ExperimentConfigError, build_config, deep_merge, list_presets, resolve_config, save_config_file,
)
from experiments.report import ManifestError, format_report, report
from experiments.runner import attack_targets, load_experiment_dataset, run_experiment


TINY_DOC = {
    'seed': 2,
    'dataset': {'kind': 'synthetic', 'classes': 3, 'dim': 16, 'n': 48, 'n_test': 24},
    'model': {'name': 'mlp-tiny', 'options': {'hidden': 8}},
    'fl': {'num_clients': 3, 'local_epochs': 1, 'batch_size': 8, 'learning_rate': 0.3, 'rounds': 2},
    'policy': 'int8',
    'attack': {'max_iterations': 5},
    'experiment': {'defenses': ['none', 'quantize'], 'attack_views': ['raw_float', 'int_payload_as_float'],
                   'attack_trials': 2},
}


# ---- config documents ----

def test_deep_merge():
    base = {'a': {'x': 1, 'y': [1, 2]}, 'b': 1}
    out = deep_merge(base, {'a': {'y': [3]}, 'c': 2})
    assert out == {'a': {'x': 1, 'y': [3]}, 'b': 1, 'c': 2}
    assert base['a']['y'] == [1, 2]


def test_resolve_preset_and_seed_override():
    cfg = resolve_config(preset='table1-desk')
    assert cfg.preset == 'table1-desk'
    assert cfg.fl.num_clients == 4
    assert cfg.fl.m == 4
    assert cfg.dp.epsilon == 1.0
    assert cfg.experiment['defenses'] == ['none', 'quantize', 'dp']
    cfg = resolve_config(preset='table1-desk', seed=7)
    assert cfg.seed == 7
    assert cfg.fl.seed == 7
    assert cfg.attack.seed == 7


def test_config_file_merges_over_its_preset(tmp_path):
    path = str(tmp_path / 'run.yml')
    save_config_file({'preset': 'comm-report', 'fl': {'rounds': 1}, 'seed': 3}, path)
    cfg = resolve_config(path)
    assert cfg.fl.rounds == 1
    assert cfg.fl.learning_rate == 0.3
    assert cfg.seed == 3
    assert cfg.policy == 'int8'


@pytest.mark.parametrize('doc', [
    {'bogus': {}},
    {'fl': {'seed': 3}},
    {'fl': {'policy': 'int8'}},
    {'fl': {'rounds': 'many'}},
    {'seed': -1},
    {'experiment': {'defenses': ['encrypt']}},
    {'experiment': {'attack_views': ['telepathy']}},
    {'experiment': {'attack_batch': 9}},
    {'experiment': {'extra': 1}},
    {'dp': {'epsilon': 0}},
    {'attack': {'optimizer': 'sgd'}},
])
def test_bad_documents_rejected(doc):
    with pytest.raises(ValueError):
        build_config(doc)


def test_unknown_preset_and_missing_file(tmp_path):
    with pytest.raises(ExperimentConfigError, match='unknown preset'):
        resolve_config(preset='nope')
    with pytest.raises(FileNotFoundError):
        resolve_config(str(tmp_path / 'missing.json'))
    bad = tmp_path / 'bad.json'
    bad.write_text('[1, 2]')
    with pytest.raises(ExperimentConfigError, match='mapping'):
        resolve_config(str(bad))


def test_every_preset_builds():
    names = list_presets()
    for expected in ('table1-desk', 'comm-report', 'attack-desk', 'mode-mismatch'):
        assert expected in names
    for name in names:
        assert resolve_config(preset=name).preset == name


# ---- artifacts ----

def test_csv_header_without_rows(tmp_path):
    path = str(tmp_path / 'metrics.csv')
    assert artifacts.write_metrics_csv(path, []) == 0
    with open(path, encoding='utf-8') as fh:
        assert fh.read() == ','.join(artifacts.METRICS_COLUMNS) + '\n'


def test_csv_column_order_and_float_format(tmp_path):
    path = str(tmp_path / 'attack.csv')
    artifacts.write_attack_csv(path, [{'psnr': 20.0, 'mse': 0.1 + 0.2, 'view': 'raw_float', 'trial': 0,
                                       'iteration': 1, 'match_loss': 1e-12}])
    with open(path, encoding='utf-8') as fh:
        lines = fh.read().splitlines()
    assert lines[0] == 'view,trial,iteration,match_loss,mse,psnr'
    assert lines[1] == 'raw_float,0,1,1e-12,0.3,20'


def test_pgm_round_trip(tmp_path):
    path = str(tmp_path / 'x.pgm')
    x = np.zeros((2, 8, 8))
    x[1] = 1.0
    artifacts.write_pgm(path, x)
    with open(path, 'rb') as fh:
        assert fh.read(11) == b'P5\n16 8\n255'
    img = artifacts.read_pgm(path)
    assert img.shape == (8, 16)
    assert img[:, :8].max() == 0
    assert img[:, 8:].min() == 255
    with pytest.raises(ValueError):
        artifacts.to_image(np.zeros((1, 1, 2, 2)))


def test_staging_failure_leaves_nothing(tmp_path):
    out = tmp_path / 'run'
    with pytest.raises(RuntimeError):
        with artifacts.staging_dir(str(out)) as tmp:
            artifacts.write_manifest(os.path.join(tmp, artifacts.MANIFEST_NAME), {'tool': 'x'})
            raise RuntimeError('boom')
    assert not out.exists()
    assert os.listdir(tmp_path) == []


def test_staging_success_moves_files(tmp_path):
    out = tmp_path / 'run'
    with artifacts.staging_dir(str(out)) as tmp:
        artifacts.write_manifest(os.path.join(tmp, artifacts.MANIFEST_NAME), {'tool': 'x'})
        artifacts.write_metrics_csv(os.path.join(tmp, 'metrics.csv'), [])
    assert sorted(os.listdir(out)) == ['manifest.json', 'metrics.csv']
    assert artifacts.load_manifest(str(out / 'manifest.json')) == {'tool': 'x'}
    assert os.listdir(tmp_path) == ['run']


# ---- report ----

def test_report_of_empty_manifest():
    text = format_report({'tool': 'fedquant', 'version': '0.1.0', 'seed': 0})
    assert 'no rounds' in text
    assert 'no attacks' in text
    assert 'search space: unknown' in text


def test_report_search_space_line():
    text = format_report({'tool': 'fedquant', 'version': '0.1.0', 'seed': 0,
                          'search_space': {'modes': 2, 'layers': 8, 'value': 256}})
    assert 'search space: 256 (m^L = 2^8)' in text


@pytest.mark.parametrize('manifest', [
    [],
    {'tool': 'fedquant', 'seed': 0},
    {'tool': 'fedquant', 'version': '0.1.0', 'seed': 0, 'rounds': []},
    {'tool': 'fedquant', 'version': '0.1.0', 'seed': 0, 'attacks': {'raw_float': {'trials': 1}}},
])
def test_malformed_manifest(manifest):
    with pytest.raises(ManifestError):
        format_report(manifest)


# ---- end to end ----

def test_run_experiment_writes_reproducible_outputs(tmp_path):
    cfg = build_config(TINY_DOC)
    first = run_experiment(cfg, str(tmp_path / 'a'))
    run_experiment(cfg, str(tmp_path / 'b'))

    files = sorted(os.listdir(tmp_path / 'a'))
    for name in ('manifest.json', 'metrics.csv', 'attack.csv', 'truth_trial0.pgm', 'raw_float_trial1.pgm',
                 'int_payload_as_float_trial0.pgm'):
        assert name in files
    for name in ('metrics.csv', 'attack.csv'):
        assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()

    metrics = artifacts.read_csv(str(tmp_path / 'a' / 'metrics.csv'))
    assert list(metrics.columns) == artifacts.METRICS_COLUMNS
    assert len(metrics) == 4
    assert metrics['clients'].tolist() == ['0;1;2'] * 4

    manifest = artifacts.load_manifest(str(tmp_path / 'a' / 'manifest.json'))
    assert manifest['bytes']['per_update']['payload_ratio'] == 4.0
    assert manifest['search_space'] == {'modes': 2, 'layers': 2, 'value': 4}
    totals = manifest['bytes']['totals']
    assert totals['none']['upstream_payload_bytes'] == 4 * totals['quantize']['upstream_payload_bytes']
    assert set(manifest['attacks']) == {'raw_float', 'int_payload_as_float'}
    assert manifest['attacks']['raw_float']['trials'] == 2
    assert format_report(manifest) == format_report(first)
    assert format_report(json.loads(artifacts.dump_manifest(first))) == format_report(first)


def test_report_prints(capsys):
    text = report({'tool': 'fedquant', 'version': '0.1.0', 'seed': 1})
    assert capsys.readouterr().out == text


# ---- CLI ----

def test_cli_presets(capsys):
    assert app.main(['presets']) == 0
    assert 'table1-desk' in capsys.readouterr().out


def test_cli_missing_manifest(tmp_path, capsys):
    assert app.main(['report', '--out-dir', str(tmp_path / 'none')]) == 1
    assert capsys.readouterr().err.startswith('error:')


def test_cli_bad_preset(tmp_path, capsys):
    assert app.main(['train', '--preset', 'nope', '--out-dir', str(tmp_path), '--quiet']) == 1
    assert 'unknown preset' in capsys.readouterr().err


def test_cli_train_then_report(tmp_path, capsys):
    config = tmp_path / 'tiny.json'
    config.write_text(json.dumps(TINY_DOC))
    out = str(tmp_path / 'out')
    assert app.main(['train', '--config', str(config), '--out-dir', out, '--seed', '5', '--quiet']) == 0
    assert sorted(os.listdir(out)) == ['manifest.json', 'metrics.csv']
    assert artifacts.load_manifest(os.path.join(out, 'manifest.json'))['seed'] == 5
    capsys.readouterr()
    assert app.main(['report', '--out-dir', out]) == 0
    assert 'search space: 4 (m^L = 2^2)' in capsys.readouterr().out


def test_attack_targets_stable_across_trial_counts():
    cfg = resolve_config(preset='attack-desk')
    dataset = load_experiment_dataset(cfg)
    short = list(attack_targets(cfg, dataset, 2))
    long = list(attack_targets(cfg, dataset, 5))
    assert [k for k, _ in long] == [0, 1, 2, 3, 4]
    for (_, a), (_, b) in zip(short, long):
        np.testing.assert_array_equal(a.inputs, b.inputs)
        np.testing.assert_array_equal(a.labels, b.labels)
    other = list(attack_targets(build_config(deep_merge(cfg.to_dict(), {'seed': 1})), dataset, 2))
    assert not np.array_equal(other[0][1].inputs, short[0][1].inputs) or \
        not np.array_equal(other[1][1].inputs, short[1][1].inputs)


@pytest.mark.slow
def test_table1_desk_ordering(tmp_path):
    manifest = run_experiment(resolve_config(preset='table1-desk'), str(tmp_path), tasks=('train',))
    final = manifest['final']
    assert final['quantize']['accuracy'] >= final['none']['accuracy'] - 0.02
    assert final['quantize']['accuracy'] > final['dp']['accuracy']


@pytest.mark.slow
def test_comm_report_bytes(tmp_path):
    manifest = run_experiment(resolve_config(preset='comm-report'), str(tmp_path), tasks=('train',))
    per_update = manifest['bytes']['per_update']
    assert per_update['payload_ratio'] == 4.0
    assert per_update['message_ratio'] >= 3.8

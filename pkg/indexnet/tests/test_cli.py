import json
import os
from os.path import exists, join

import pandas as pd
import pytest

from indexnet import training
from indexnet.cli import main
from indexnet.metrics import MetricsReport

SMALL_CONFIG = """
lookback = 8
horizon = 4
d_model = 8
d_ff = 8
m = 1
T_dim = 4
C_dim = 4
batch_size = 128
max_epochs = 1
"""


def run_dir_of(out):
    return [line.split(':', 1)[1] for line in out.splitlines() if line.startswith('run_dir:')][-1]


@pytest.fixture(scope='module')
def config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp('config') / 'small.cfg'
    path.write_text(SMALL_CONFIG)
    return str(path)


@pytest.fixture(scope='module')
def trained_run(config_path, tmp_path_factory):
    out = str(tmp_path_factory.mktemp('runs'))
    assert main(['train', '--config', config_path, '--data', 'synthetic:hourly', '--out', out]) == 0
    run_dir = join(out, sorted(os.listdir(out), key=lambda d: int(d) if d.isdigit() else -1)[-1])
    return run_dir


def test_help():
    with pytest.raises(SystemExit) as e:
        main(['--help'])
    assert e.value.code == 0
    with pytest.raises(SystemExit) as e:
        main(['train', '--help'])
    assert e.value.code == 0


def test_usage_error():
    with pytest.raises(SystemExit) as e:
        main(['train', '--preset', 'unknown'])
    assert e.value.code == 2


def test_train_manifest(trained_run):
    artifacts = join(trained_run, 'artifacts')
    for name in ['checkpoint.pt', 'history.jsonl', 'metrics.json']:
        assert exists(join(artifacts, name))
    with open(join(trained_run, 'run.json')) as f:
        run = json.load(f)
    assert run['status'] == 'COMPLETED'
    assert run['info']['dataset']['name'] == 'hourly'
    assert run['info']['param_count'] > 0
    with open(join(trained_run, 'config.json')) as f:
        config = json.load(f)
    assert config['seed'] == 0 and config['lookback'] == 8
    with open(join(artifacts, 'history.jsonl')) as f:
        history = [json.loads(line) for line in f]
    assert [h['epoch'] for h in history] == [0, 1]
    assert set(history[0]) == {'epoch', 'train_mse', 'val_mse', 'elapsed_s'}


def test_train_is_reproducible(trained_run, config_path, tmp_path, capsys):
    assert main(['train', '--config', config_path, '--data', 'synthetic:hourly', '--out', str(tmp_path)]) == 0
    run_dir = run_dir_of(capsys.readouterr().out)
    with open(join(run_dir, 'artifacts', 'metrics.json')) as f:
        again = json.load(f)
    with open(join(trained_run, 'artifacts', 'metrics.json')) as f:
        first = json.load(f)
    assert again['test']['mse'] == first['test']['mse']
    assert again['val']['mae'] == first['val']['mae']
    with open(join(run_dir, 'artifacts', 'checkpoint.pt'), 'rb') as f:
        again_bytes = f.read()
    with open(join(trained_run, 'artifacts', 'checkpoint.pt'), 'rb') as f:
        assert f.read() == again_bytes


def test_eval(trained_run, capsys):
    checkpoint = join(trained_run, 'artifacts', 'checkpoint.pt')
    assert main(['eval', '--checkpoint', checkpoint, '--data', 'synthetic:hourly']) == 0
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert report['mse'] > 0
    assert report['space'] == 'standardized'
    with open(join(trained_run, 'artifacts', 'metrics.json')) as f:
        assert report['mse'] == json.load(f)['test']['mse']


def test_eval_horizon_mismatch(trained_run, capsys):
    checkpoint = join(trained_run, 'artifacts', 'checkpoint.pt')
    code = main(['eval', '--checkpoint', checkpoint, '--data', 'synthetic:hourly', '--horizon', '96'])
    assert code == 2
    err = capsys.readouterr().err
    assert '96' in err and 'horizon 4' in err


def test_export_embeddings(trained_run, tmp_path):
    checkpoint = join(trained_run, 'artifacts', 'checkpoint.pt')
    out = str(tmp_path / 'embeddings')
    assert main(['export-embeddings', '--checkpoint', checkpoint, '--out', out]) == 0
    assert sorted(os.listdir(out)) == ['day_of_week.json', 'hour.json', 'identity.json']
    with open(join(out, 'identity.json')) as f:
        document = json.load(f)
    assert document['labels'] == [1, 2, 3]
    assert len(document['pca']['coords']) == 3


def test_unknown_config_key(tmp_path, capsys):
    path = tmp_path / 'bad.cfg'
    path.write_text('lookback = 96\nwarmup_steps = 100\n')
    assert main(['train', '--config', str(path), '--data', 'synthetic:hourly', '--out', str(tmp_path)]) == 2
    assert 'warmup_steps' in capsys.readouterr().err


def test_none_for_required_key(tmp_path, capsys):
    path = tmp_path / 'none.cfg'
    path.write_text('lookback = none\n')
    assert main(['train', '--config', str(path), '--data', 'synthetic:hourly', '--out', str(tmp_path)]) == 2
    assert 'lookback cannot be none' in capsys.readouterr().err


def test_missing_data(config_path, tmp_path, monkeypatch):
    monkeypatch.setenv('INDEXNET_DATA_DIR', str(tmp_path))
    code = main(['train', '--config', config_path, '--data', 'no_such.csv', '--out', str(tmp_path / 'runs')])
    assert code == 3


def test_corrupt_checkpoint(tmp_path, capsys):
    path = tmp_path / 'checkpoint.pt'
    path.write_bytes(b'garbage')
    assert main(['export-embeddings', '--checkpoint', str(path), '--out', str(tmp_path / 'out')]) == 3
    assert 'CheckpointError' in capsys.readouterr().err


def test_ablate(config_path, tmp_path, capsys):
    assert main(['ablate', '--config', config_path, '--data', 'synthetic:hourly', '--seed', '3',
                 '--out', str(tmp_path)]) == 0
    run_dir = run_dir_of(capsys.readouterr().out)
    table = pd.read_csv(join(run_dir, 'artifacts', 'ablation.csv'))
    assert table['case'].tolist() == [1, 2, 3, 4]
    assert (table['status'] == 'done').all()
    assert table['te'].tolist() == [False, False, True, True]
    with open(join(run_dir, 'run.json')) as f:
        assert json.load(f)['info']['ablation_seed'] == 3
    with open(join(run_dir, 'config.json')) as f:
        assert json.load(f)['seed'] == 3


def test_interrupted_ablation(config_path, tmp_path, monkeypatch):
    def first_case_only(ds, config, workers=1, on_result=None):
        on_result(1, MetricsReport(mse=.5, mae=.4, mape=1., rmse=.7, n_points=10))
        raise RuntimeError('worker lost')

    monkeypatch.setattr(training, 'ablation_run', first_case_only)
    with pytest.raises(RuntimeError, match='worker lost'):
        main(['ablate', '--config', config_path, '--data', 'synthetic:hourly', '--out', str(tmp_path)])
    table = pd.read_csv(join(tmp_path, '1', 'artifacts', 'ablation.csv'))
    assert table['case'].tolist() == [1, 2, 3, 4]
    assert table['status'].tolist() == ['done', 'incomplete', 'incomplete', 'incomplete']
    assert table['mse'][0] == .5 and table['mse'][1:].isna().all()
    with open(join(tmp_path, '1', 'run.json')) as f:
        assert json.load(f)['status'] == 'FAILED'


def test_preset_metadata_in_run_info(config_path, tmp_path, capsys):
    assert main(['train', '--preset', 'etth1', '--config', config_path, '--data', 'synthetic:hourly',
                 '--out', str(tmp_path)]) == 0
    run_dir = run_dir_of(capsys.readouterr().out)
    with open(join(run_dir, 'run.json')) as f:
        info = json.load(f)['info']['dataset']
    assert info['adf'] == -5.91
    assert info['explicit_timestamps']
    assert info['published_windows'] == [8545, 2881, 2881]

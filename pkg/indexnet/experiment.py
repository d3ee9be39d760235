"""Sacred experiment behind the `train` and `ablate` commands.

Every run directory of the FileStorageObserver is the run manifest: `config.json`,
`run.json` (status, host, dependencies, sources, `info.dataset` with its sha256,
`result`), sacred's `metrics.json`, and an `artifacts/` folder.

    python -m indexnet.experiment train with etth1 data=ETTh1.csv
"""
import hashlib
import json
import os
import tempfile
from os.path import basename, exists, join, splitext

import pandas as pd
from sacred import SETTINGS, Experiment
from sacred.observers import FileStorageObserver

from indexnet import __version__, training
from indexnet.checkpoint import save_checkpoint
from indexnet.config import CONFIG_KEYS, PRESETS, TrainConfig, from_mapping, get_preset
from indexnet.data import fit_standardizer
from indexnet.dataset import TimeSeriesDataset, get_output_dir, load_csv, make_data, resolve_data_path
from indexnet.model import param_breakdown

SETTINGS.CAPTURE_MODE = 'no'

SYNTHETIC_PREFIX = 'synthetic:'

exp = Experiment('indexnet', save_git_info=False)
exp.add_config(dict(TrainConfig().to_dict(), data=None))
for preset_name, preset in PRESETS.items():
    exp.add_named_config(preset_name, preset.config_updates(preset_name))


def sha256sum(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def load_dataset(data, config: TrainConfig) -> TimeSeriesDataset:
    """A CSV path (resolved against INDEXNET_DATA_DIR) or `synthetic:<name>`."""
    if data is None and config.dataset is not None:
        data = get_preset(config.dataset).filename
    if data is not None and data.startswith(SYNTHETIC_PREFIX):
        ds = make_data(data[len(SYNTHETIC_PREFIX):], freq_minutes=config.freq_minutes or 60)
        if config.train_end is not None or config.val_end is not None:
            train_end = config.train_end or ds.split_bounds[0]
            val_end = config.val_end or ds.split_bounds[1]
            ds = TimeSeriesDataset(ds.values, ds.calendar, ds.freq_minutes, (train_end, val_end),
                                   ds.channels, name=ds.name)
        return ds
    path = resolve_data_path(data)
    name = config.dataset or splitext(basename(path))[0]
    return load_csv(path, freq_minutes=config.freq_minutes, name=name, train_end=config.train_end,
                    val_end=config.val_end)


def dataset_info(ds: TimeSeriesDataset, config: TrainConfig):
    info = ds.meta()
    if ds.path is not None:
        info['sha256'] = sha256sum(ds.path)
    if config.dataset is not None and config.dataset.lower() in PRESETS:
        preset = get_preset(config.dataset)
        info.update(explicit_timestamps=preset.timestamp, adf=preset.adf,
                    published_windows=list(preset.split_sizes))
    return info


def artifact_dir(_run):
    if _run.observers:
        output_dir = join(_run.observers[0].dir, 'artifacts')
    else:
        output_dir = tempfile.mkdtemp()
    if not exists(output_dir):
        os.makedirs(output_dir)
    return output_dir


def train_config(_config) -> TrainConfig:
    return from_mapping({key: _config[key] for key in CONFIG_KEYS})


@exp.main
def train(data, _config, _run, _log):
    config = train_config(_config)
    ds = load_dataset(data, config)
    _run.info['version'] = __version__
    _run.info['dataset'] = dataset_info(ds, config)
    output_dir = artifact_dir(_run)

    stats = fit_standardizer(ds)
    model, history = training.train(ds, config, stats=stats, _run=_run,
                                    history_path=join(output_dir, 'history.jsonl'))
    _run.info['param_count'] = model.param_count()
    _run.info['param_breakdown'] = param_breakdown(model.params, model.tables, model.channel_table)
    save_checkpoint(join(output_dir, 'checkpoint.pt'), model, stats, config, ds.meta())

    val = training.evaluate(model, ds, 'val', stats=stats)
    test = training.evaluate(model, ds, 'test', stats=stats)
    result = dict(val=val.to_dict(), test=test.to_dict(), epochs=len(history) - 1)
    with open(join(output_dir, 'metrics.json'), 'w') as f:
        json.dump(result, f, indent=2)
    _log.info(f'Artifacts written to {output_dir}')
    print(f'val_mse:{val.mse:.6f} test_mse:{test.mse:.6f} test_mae:{test.mae:.6f}')
    return result


ABLATION_COLUMNS = ['case', 'te', 'ce', 'mse', 'mae', 'status']


def append_rows(path, rows):
    pd.DataFrame(rows, columns=ABLATION_COLUMNS).to_csv(path, mode='a', header=not exists(path), index=False)


@exp.command
def ablate(data, _config, _run, _log):
    config = train_config(_config)
    ds = load_dataset(data, config)
    _run.info['version'] = __version__
    _run.info['dataset'] = dataset_info(ds, config)
    _run.info['ablation_seed'] = config.seed
    csv_path = join(artifact_dir(_run), 'ablation.csv')
    done = {}

    def on_result(case, report):
        te, ce = training.ABLATION_CASES[case]
        done[case] = report
        append_rows(csv_path, [dict(case=case, te=te, ce=ce, mse=report.mse, mae=report.mae, status='done')])

    try:
        reports = training.ablation_run(ds, config, workers=config.workers, on_result=on_result)
    except BaseException:
        missing = [dict(case=case, te=te, ce=ce, mse=None, mae=None, status='incomplete')
                   for case, (te, ce) in training.ABLATION_CASES.items() if case not in done]
        append_rows(csv_path, missing)
        _log.warning(f'Ablation interrupted after {len(done)} of {len(training.ABLATION_CASES)} cases')
        raise
    for case, report in reports.items():
        te, ce = training.ABLATION_CASES[case]
        print(f'case:{case} te:{int(te)} ce:{int(ce)} mse:{report.mse:.6f} mae:{report.mae:.6f}')
    return {str(case): report.to_dict() for case, report in reports.items()}


def run_command(command, config: TrainConfig, data=None, out_dir=None):
    """Run `command` under a FileStorageObserver rooted at `out_dir`; returns the sacred Run."""
    if out_dir is None:
        out_dir = join(get_output_dir(), command)
    exp.observers = [FileStorageObserver(out_dir)]
    return exp.run(command, config_updates=dict(config.to_dict(), data=data))


if __name__ == '__main__':
    exp.run_commandline()

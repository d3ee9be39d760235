import json
import logging
import time
from collections import OrderedDict
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import torch
from joblib import Parallel, delayed
from sklearn.model_selection import ParameterGrid

from indexnet.config import TrainConfig
from indexnet.data import RowSampler, StandardizerStats, WindowSet, fit_standardizer, make_windows
from indexnet.dataset import TimeSeriesDataset
from indexnet.errors import ConfigError, DataError, NumericError, ShapeError
from indexnet.metrics import MetricsReport, compute_metrics, mean_report
from indexnet.model import ForwardTrace, IndexNet
from indexnet.numeric import AdamState, adam_step

logger = logging.getLogger(__name__)

# case: (te_enabled, ce_enabled)
ABLATION_CASES = OrderedDict([(1, (False, False)), (2, (False, True)), (3, (True, False)), (4, (True, True))])
EVAL_BATCH_SIZE = 1024


class EpochRecord(NamedTuple):
    epoch: int
    train_mse: float
    val_mse: float
    elapsed_s: float

    def to_dict(self):
        return self._asdict()


def mse_loss(trace: ForwardTrace, target: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Loss in the instance-normalized space of each row and its gradient wrt y_norm."""
    target_hat = (target - trace.norm_state.mu) / trace.norm_state.sigma
    diff = trace.y_norm - target_hat
    return (diff ** 2).mean(), diff * (2. / diff.numel())


def iter_rows(windows: WindowSet, batch_size: int):
    """All (window, channel) rows in order: window-major, then channel."""
    sampler = RowSampler(len(windows), windows.n_channels, batch_size, cycle=False)
    for window_idx, channel_idx in sampler.epoch(0):
        yield windows.rows(window_idx, channel_idx) + (channel_idx + 1,)


def predict_windows(model: IndexNet, windows: WindowSet, batch_size=EVAL_BATCH_SIZE):
    """Predictions and targets in the standardized space, both n_windows x N x T."""
    preds, targets = [], []
    for x, target, calendar, channels in iter_rows(windows, batch_size):
        preds.append(model.predict(x, calendar, channels))
        targets.append(target)
    shape = (len(windows), windows.n_channels, windows.horizon)
    return torch.cat(preds).reshape(shape), torch.cat(targets).reshape(shape)


def normalized_loss(model: IndexNet, windows: WindowSet, batch_size=EVAL_BATCH_SIZE) -> float:
    total, count = 0., 0
    for x, target, calendar, channels in iter_rows(windows, batch_size):
        _, trace = model.forward(x, calendar, channels)
        loss, _ = mse_loss(trace, target)
        total += loss.item() * len(x)
        count += len(x)
    return total / count


def check_model_fits(model: IndexNet, ds: TimeSeriesDataset):
    if model.channel_table.n_channels != ds.n_channels:
        raise ShapeError('number of channels', model.channel_table.n_channels, ds.n_channels)
    if model.tables.freq_minutes != ds.freq_minutes:
        raise ConfigError(f'Sampling interval {ds.freq_minutes} min does not match the model '
                          f'({model.tables.freq_minutes} min)')
    if model.dims.te_enabled and model.tables.month_level and ds.synthesized:
        raise ConfigError('month features unavailable: the calendar was synthesized from step indices')


def train(ds: TimeSeriesDataset, config: TrainConfig, stats: Optional[StandardizerStats] = None,
          _run=None, history_path=None) -> Tuple[IndexNet, List[EpochRecord]]:
    """Adam on the MSE of (window, channel) rows, with early stopping on validation MSE.

    Epoch 0 is an evaluation of the initial model. `train_mse` is measured in the
    instance-normalized space, `val_mse` in the standardized space where metrics are
    reported. The returned model holds the parameters of the best validation epoch.
    """
    if stats is None:
        stats = fit_standardizer(ds)
    L, T = config.lookback, config.horizon
    train_set = make_windows(ds, 'train', L, T, stats).to(config.device)
    val_set = make_windows(ds, 'val', L, T, stats).to(config.device)
    for split, windows in (('train', train_set), ('val', val_set)):
        if len(windows) == 0:
            raise DataError(f'Empty {split} split for L={L}, T={T}')

    model = IndexNet.build(config.dims, ds.n_channels, ds.freq_minutes, config.active_groups,
                           config.init_mode, seed=config.seed, device=config.device)
    check_model_fits(model, ds)
    optimizer = AdamState(config.lr)
    sampler = RowSampler(len(train_set), ds.n_channels, config.batch_size, seed=config.seed)
    logger.info(f'Training on {ds.name}: {len(train_set)} train windows x {ds.n_channels} channels, '
                f'{model.param_count()} parameters')

    t0 = time.perf_counter()
    history = []

    def record(epoch, train_mse):
        pred, truth = predict_windows(model, val_set)
        val_mse = compute_metrics(pred, truth).mse
        entry = EpochRecord(epoch, train_mse, val_mse, time.perf_counter() - t0)
        history.append(entry)
        if config.verbose:
            print(' '.join(f'{k}:{v:.2e}' if isinstance(v, float) else f'{k}:{v}'
                           for k, v in entry.to_dict().items()))
        if _run is not None:
            for key in ('train_mse', 'val_mse'):
                _run.log_scalar(key, getattr(entry, key), epoch)
        return val_mse

    best_val = record(0, normalized_loss(model, train_set))
    best_state = {name: p.clone() for name, p in model.parameters().items()}
    bad_epochs = 0
    for epoch in range(1, config.max_epochs + 1):
        total, count = 0., 0
        for batch, (window_idx, channel_idx) in enumerate(sampler.epoch(epoch)):
            x, target, calendar = train_set.rows(window_idx, channel_idx)
            model.zero_grads()
            _, trace = model.forward(x, calendar, channel_idx + 1)
            loss, grad = mse_loss(trace, target)
            if not torch.isfinite(loss):
                raise NumericError(f'Non-finite loss at epoch {epoch}, batch {batch}')
            model.backward(trace, grad)
            adam_step(optimizer, model.parameters(), model.gradients())
            total += loss.item() * len(x)
            count += len(x)
        val_mse = record(epoch, total / count)
        if val_mse < best_val:
            best_val = val_mse
            best_state = {name: p.clone() for name, p in model.parameters().items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            # patience = 0 disables early stopping
            if config.patience and bad_epochs >= config.patience:
                logger.info(f'Early stopping at epoch {epoch}, best val_mse {best_val:.4e}')
                break
    for name, p in model.parameters().items():
        p.copy_(best_state[name])
    model.zero_grads()

    if history_path is not None:
        write_history(history, history_path)
    return model, history


def write_history(history: Sequence[EpochRecord], path):
    with open(path, 'w') as f:
        for entry in history:
            f.write(json.dumps(entry.to_dict()) + '\n')
    return path


def evaluate(model: IndexNet, ds: TimeSeriesDataset, split='test', horizon: Optional[int] = None,
             stats: Optional[StandardizerStats] = None, space='standardized') -> MetricsReport:
    if horizon is not None and horizon != model.dims.horizon:
        raise ConfigError(f'Requested horizon {horizon} does not match the checkpoint horizon {model.dims.horizon}')
    if space not in ('standardized', 'raw'):
        raise ConfigError(f'Unknown metric space {space!r}, expected standardized or raw')
    check_model_fits(model, ds)
    if stats is None:
        stats = fit_standardizer(ds)
    windows = make_windows(ds, split, model.dims.lookback, model.dims.horizon, stats).to(model.device)
    if len(windows) == 0:
        raise DataError(f'Empty {split} split for L={model.dims.lookback}, T={model.dims.horizon}')
    pred, truth = predict_windows(model, windows)
    if space == 'raw':
        mean = stats.mean.to(pred.device)[None, :, None]
        std = stats.std.to(pred.device)[None, :, None]
        pred, truth = pred * std + mean, truth * std + mean
    return compute_metrics(pred.cpu(), truth.cpu(), space=space)


def train_and_evaluate(ds: TimeSeriesDataset, config: TrainConfig, split='test'):
    model, history = train(ds, config)
    return evaluate(model, ds, split), history


def run_configs(ds: TimeSeriesDataset, configs: Sequence[TrainConfig], workers=1):
    """Independent runs fanned out with joblib, yielded in submission order."""
    return Parallel(n_jobs=workers, return_as='generator')(delayed(train_and_evaluate)(ds, config)
                                                          for config in configs)


def ablation_run(ds: TimeSeriesDataset, config: TrainConfig, workers=1, on_result=None) -> Dict[int, MetricsReport]:
    """Test metrics of the four {TE, CE} x {on, off} variants, all with the seed of `config`.

    `on_result(case, report)` is called as each case finishes.
    """
    configs = [config.replace(te_enabled=te, ce_enabled=ce) for te, ce in ABLATION_CASES.values()]
    reports = OrderedDict()
    for case, (report, _) in zip(ABLATION_CASES, run_configs(ds, configs, workers=workers)):
        te, ce = ABLATION_CASES[case]
        logger.info(f'Ablation case {case} (te={te}, ce={ce}): test mse {report.mse:.4e}, mae {report.mae:.4e}')
        reports[case] = report
        if on_result is not None:
            on_result(case, report)
    return reports


def seed_average(ds: TimeSeriesDataset, config: TrainConfig, seeds=(0, 1, 2), workers=1):
    configs = [config.replace(seed=seed) for seed in seeds]
    reports = [report for report, _ in run_configs(ds, configs, workers=workers)]
    return reports, mean_report(reports)


def init_ablation(ds: TimeSeriesDataset, config: TrainConfig, seeds=(0, 1, 2), workers=1):
    """Seed-averaged test metrics of zero-initialized against N(0, 0.02^2)-initialized tables."""
    grid = list(ParameterGrid({'init_mode': ['zeros', 'random'], 'seed': list(seeds)}))
    configs = [config.replace(**params) for params in grid]
    reports = {'zeros': [], 'random': []}
    for params, (report, _) in zip(grid, run_configs(ds, configs, workers=workers)):
        reports[params['init_mode']].append(report)
    return {mode: mean_report(mode_reports) for mode, mode_reports in reports.items()}

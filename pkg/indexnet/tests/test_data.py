import logging

import pytest
import torch
from torch.testing import assert_close

from indexnet.data import RowSampler, apply_standardizer, fit_standardizer, invert_standardizer, make_windows
from indexnet.dataset import TimeSeriesDataset, index_proxy_calendar, make_data
from indexnet.errors import ConfigError


def make_ramp(n_steps=100, n_channels=2):
    values = torch.arange(n_steps * n_channels, dtype=torch.float64).reshape(n_steps, n_channels)
    return TimeSeriesDataset(values, index_proxy_calendar(n_steps), 60)


def test_standardizer_uses_train_split_only():
    ds = make_data('white_noise', n_steps=200)
    ds.values[150:] += 100.
    stats = fit_standardizer(ds)
    train = ds.values[:140]
    assert_close(stats.mean, train.mean(0))
    assert_close(stats.std, train.std(0, unbiased=False))
    z = apply_standardizer(stats, train)
    assert_close(z.mean(0), torch.zeros(2, dtype=torch.float64), atol=1e-12, rtol=0)
    assert_close(invert_standardizer(stats, z), train)

def test_standardizer_round_trip_on_windows():
    ds = make_data('hourly', n_steps=2000)
    stats = fit_standardizer(ds)
    windows = make_windows(ds, 'train', 96, 96)
    z = torch.stack([windows[i].input for i in range(1000)]).transpose(1, 2)
    assert (apply_standardizer(stats, invert_standardizer(stats, z)) - z).abs().max() < 1e-9



def test_standardizer_zero_variance(caplog):
    ds = make_data('white_noise', n_steps=100)
    ds.values[:, 1] = 3.
    with caplog.at_level(logging.WARNING):
        stats = fit_standardizer(ds)
    assert 'c1' in caplog.text
    assert stats.std[1].item() == 1e-8
    assert torch.isfinite(apply_standardizer(stats, ds.values)).all()


@pytest.mark.parametrize("lookback,horizon", [(4, 2), (10, 5), (1, 1)])
def test_window_counts(lookback, horizon):
    ds = make_ramp(100)
    train = make_windows(ds, 'train', lookback, horizon)
    val = make_windows(ds, 'val', lookback, horizon)
    assert len(train) == 70 - lookback - horizon + 1
    # val inputs reach back into the train split, targets stay inside val
    assert val.starts[0].item() == 70 - lookback
    assert val.starts[-1].item() + lookback + horizon == 80


def test_window_contents():
    ds = make_ramp(100)
    windows = make_windows(ds, 'train', 4, 2)
    stats = fit_standardizer(ds)
    window = windows[3]
    raw = invert_standardizer(stats, torch.cat([window.input, window.target], dim=1).T)
    assert_close(raw, ds.values[3:9])
    assert window.input.shape == (2, 4)
    assert window.start_calendar.hour == 3


def test_rows_match_windows():
    ds = make_data('hourly', n_steps=300)
    windows = make_windows(ds, 'train', 8, 4)
    x, y, calendar = windows.rows(torch.tensor([5, 7]), torch.tensor([2, 0]))
    assert_close(x[0], windows[5].input[2])
    assert_close(y[1], windows[7].target[0])
    assert calendar[1].tolist() == windows[7].start_calendar.as_row()


def test_short_split(caplog):
    ds = make_ramp(100)
    with caplog.at_level(logging.WARNING):
        windows = make_windows(ds, 'test', 30, 25)
    assert len(windows) == 0
    assert 'too short' in caplog.text


def test_windows_invalid():
    with pytest.raises(ConfigError):
        make_windows(make_ramp(), 'train', 0, 3)


def test_row_sampler_covers_every_row():
    sampler = RowSampler(10, 3, batch_size=4, seed=0)
    assert len(sampler) == 8
    seen = set()
    for window_idx, channel_idx in sampler.epoch(1):
        assert len(window_idx) <= 4
        seen.update(zip(window_idx.tolist(), channel_idx.tolist()))
    assert seen == {(w, c) for w in range(10) for c in range(3)}


def test_row_sampler_seeded():
    def order(seed, epoch):
        return [w.tolist() + c.tolist() for w, c in RowSampler(20, 2, 8, seed=seed).epoch(epoch)]
    assert order(0, 1) == order(0, 1)
    assert order(0, 1) != order(0, 2)
    assert order(0, 1) != order(1, 1)


def test_row_sampler_ordered():
    batches = list(RowSampler(3, 2, 4, cycle=False).epoch(0))
    assert batches[0][0].tolist() == [0, 0, 1, 1]
    assert batches[0][1].tolist() == [0, 1, 0, 1]

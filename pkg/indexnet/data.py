import logging
from typing import Iterator, NamedTuple, Sequence

import numpy as np
import torch
from sklearn.utils import shuffle

from indexnet.dataset import CalendarFields, TimeSeriesDataset
from indexnet.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8


class StandardizerStats(NamedTuple):
    mean: torch.Tensor
    std: torch.Tensor

    def state_dict(self):
        return dict(mean=self.mean.clone(), std=self.std.clone())


def fit_standardizer(ds: TimeSeriesDataset) -> StandardizerStats:
    """Per-channel population statistics of the train split."""
    train_end, _ = ds.split_bounds
    train = ds.values[:train_end]
    if len(train) == 0:
        raise DataError('Empty train split')
    mean = train.mean(dim=0)
    std = train.std(dim=0, unbiased=False)
    flat = std < STD_FLOOR
    if flat.any():
        names = [ds.channels[i] for i in flat.nonzero()[:, 0].tolist()]
        logger.warning(f'Zero-variance channels {names}: std clamped to {STD_FLOOR}')
        std = std.clamp_min(STD_FLOOR)
    return StandardizerStats(mean, std)


def apply_standardizer(stats: StandardizerStats, values: torch.Tensor) -> torch.Tensor:
    return (values - stats.mean) / stats.std


def invert_standardizer(stats: StandardizerStats, values: torch.Tensor) -> torch.Tensor:
    return values * stats.std + stats.mean


class Window(NamedTuple):
    input: torch.Tensor  # N x L
    target: torch.Tensor  # N x T
    start_calendar: CalendarFields
    start: int


class WindowSet(Sequence):
    """Stride-1 windows of a split, over the globally standardized series.

    Windows are addressed by their start step; `input`/`target` of a Window are views
    of the standardized values.
    """

    def __init__(self, values: torch.Tensor, calendar: torch.Tensor, starts: torch.Tensor,
                 lookback: int, horizon: int):
        self.values = values
        self.calendar = calendar
        self.starts = starts
        self.lookback = lookback
        self.horizon = horizon

    def __len__(self):
        return len(self.starts)

    def __getitem__(self, i) -> Window:
        s = int(self.starts[i])
        L, T = self.lookback, self.horizon
        return Window(input=self.values[s:s + L].transpose(0, 1),
                      target=self.values[s + L:s + L + T].transpose(0, 1),
                      start_calendar=CalendarFields.from_row(self.calendar[s].tolist()), start=s)

    @property
    def n_channels(self):
        return self.values.shape[1]

    def rows(self, window_idx: torch.Tensor, channel_idx: torch.Tensor):
        """Batch of (window, channel) rows: inputs B x L, targets B x T, calendars B x 5."""
        starts = self.starts[window_idx]
        offsets = torch.arange(self.lookback + self.horizon)
        steps = starts[:, None] + offsets[None, :]
        series = self.values[steps, channel_idx[:, None]]
        return series[:, :self.lookback], series[:, self.lookback:], self.calendar[starts]

    def to(self, device):
        self.values = self.values.to(device)
        self.calendar = self.calendar.to(device)
        self.starts = self.starts.to(device)
        return self


def make_windows(ds: TimeSeriesDataset, split: str, lookback: int, horizon: int,
                 stats: StandardizerStats = None) -> WindowSet:
    """Targets always lie inside `split`; val/test inputs may reach back into the previous split."""
    if lookback < 1 or horizon < 1:
        raise ConfigError(f'Lookback and horizon must be positive, got L={lookback}, T={horizon}')
    if stats is None:
        stats = fit_standardizer(ds)
    begin, end = ds.split_range(split)
    first = begin if split == 'train' else max(begin - lookback, 0)
    last = end - lookback - horizon
    if last < first:
        logger.warning(f'Split {split!r} of {end - begin} steps is too short for L={lookback}, T={horizon}: '
                       f'no windows')
        starts = torch.zeros(0, dtype=torch.long)
    else:
        starts = torch.arange(first, last + 1)
    return WindowSet(apply_standardizer(stats, ds.values), ds.calendar, starts, lookback, horizon)


def epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


class RowSampler:
    """Mini-batches of (window, channel) rows, reshuffled every epoch from (seed, epoch)."""

    def __init__(self, n_windows: int, n_channels: int, batch_size: int, seed: int = 0, cycle=True):
        self.n_windows = n_windows
        self.n_channels = n_channels
        self.batch_size = batch_size
        self.seed = seed
        self.cycle = cycle

    def __len__(self):
        n = self.n_windows * self.n_channels
        return (n + self.batch_size - 1) // self.batch_size

    def epoch(self, epoch: int) -> Iterator[torch.Tensor]:
        idx = np.arange(self.n_windows * self.n_channels, dtype=np.int64)
        if self.cycle:
            idx = shuffle(idx, random_state=epoch_seed(self.seed, epoch))
        for cursor in range(0, len(idx), self.batch_size):
            rows = torch.from_numpy(idx[cursor:cursor + self.batch_size])
            yield rows // self.n_channels, rows % self.n_channels

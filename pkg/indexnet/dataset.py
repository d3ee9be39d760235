import logging
import os
from os.path import exists, expanduser, join
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd
import torch

from indexnet.errors import ConfigError, DataError
from indexnet.numeric import DTYPE

logger = logging.getLogger(__name__)

# Column order of the per-step calendar tensor.
CALENDAR_FIELDS = ('minute', 'hour', 'day_of_week', 'day_of_month', 'month')
ABSENT = -1


class CalendarFields(NamedTuple):
    minute_idx: int
    hour: int
    day_of_week: int
    day_of_month: Optional[int]  # zero-based, None when synthesized
    month: Optional[int]  # zero-based, None when synthesized

    @property
    def has_month(self):
        return self.day_of_month is not None and self.month is not None

    def as_row(self):
        return [self.minute_idx, self.hour, self.day_of_week,
                ABSENT if self.day_of_month is None else self.day_of_month,
                ABSENT if self.month is None else self.month]

    @classmethod
    def from_row(cls, row):
        row = [int(v) for v in row]
        return cls(row[0], row[1], row[2],
                   None if row[3] == ABSENT else row[3],
                   None if row[4] == ABSENT else row[4])


def check_freq(freq_minutes):
    if freq_minutes is None or freq_minutes <= 0 or 60 % freq_minutes != 0:
        raise ConfigError(f'Sampling interval must be a positive divisor of 60 minutes, got {freq_minutes}')
    return int(freq_minutes)


def index_proxy_features(t: int, freq_minutes: int = 60) -> CalendarFields:
    """Calendar fields of step `t` when the dataset has no timestamps."""
    steps_per_hour = 60 // check_freq(freq_minutes)
    return CalendarFields(minute_idx=t % steps_per_hour,
                          hour=(t // steps_per_hour) % 24,
                          day_of_week=(t // (24 * steps_per_hour)) % 7,
                          day_of_month=None, month=None)


def index_proxy_calendar(n_steps: int, freq_minutes: int = 60) -> torch.Tensor:
    steps_per_hour = 60 // check_freq(freq_minutes)
    t = torch.arange(n_steps)
    absent = torch.full_like(t, ABSENT)
    return torch.stack([t % steps_per_hour, (t // steps_per_hour) % 24,
                        (t // (24 * steps_per_hour)) % 7, absent, absent], dim=1)


def timestamp_calendar(dates: pd.DatetimeIndex, freq_minutes: int) -> torch.Tensor:
    freq_minutes = check_freq(freq_minutes)
    fields = np.stack([np.asarray(dates.minute) // freq_minutes, np.asarray(dates.hour),
                       np.asarray(dates.dayofweek), np.asarray(dates.day) - 1,
                       np.asarray(dates.month) - 1], axis=1)
    return torch.from_numpy(fields.astype(np.int64))


class TimeSeriesDataset:
    def __init__(self, values: torch.Tensor, calendar: torch.Tensor, freq_minutes: int,
                 split_bounds: Optional[Tuple[int, int]] = None, channels: Optional[List[str]] = None,
                 name: Optional[str] = None, path: Optional[str] = None):
        self.values = torch.as_tensor(values, dtype=DTYPE)
        self.calendar = torch.as_tensor(calendar, dtype=torch.long)
        self.freq_minutes = check_freq(freq_minutes)
        self.name = name
        self.path = path
        n_steps, n_channels = self.values.shape
        if self.calendar.shape != (n_steps, len(CALENDAR_FIELDS)):
            raise DataError(f'Calendar has shape {tuple(self.calendar.shape)}, '
                            f'expected ({n_steps}, {len(CALENDAR_FIELDS)})')
        self.channels = list(channels) if channels is not None else [f'c{i}' for i in range(n_channels)]
        if len(self.channels) != n_channels:
            raise DataError(f'{len(self.channels)} channel names for {n_channels} channels')
        if split_bounds is None:
            split_bounds = default_split(n_steps, name)
        train_end, val_end = split_bounds
        if not 0 < train_end < val_end < n_steps:
            raise DataError(f'Invalid split bounds ({train_end}, {val_end}) for {n_steps} steps')
        self.split_bounds = (int(train_end), int(val_end))

    @property
    def n_steps(self):
        return self.values.shape[0]

    @property
    def n_channels(self):
        return self.values.shape[1]

    @property
    def synthesized(self):
        """True when month-level fields are absent (index-proxy calendar)."""
        return bool((self.calendar[:, 3:] == ABSENT).any())

    def calendar_at(self, t: int) -> CalendarFields:
        return CalendarFields.from_row(self.calendar[t].tolist())

    def split_range(self, split: str) -> Tuple[int, int]:
        train_end, val_end = self.split_bounds
        ranges = {'train': (0, train_end), 'val': (train_end, val_end), 'test': (val_end, self.n_steps)}
        if split not in ranges:
            raise ConfigError(f'Unknown split {split!r}, expected one of train, val, test')
        return ranges[split]

    def permute_channels(self, order: List[int]) -> 'TimeSeriesDataset':
        return TimeSeriesDataset(self.values[:, order], self.calendar, self.freq_minutes, self.split_bounds,
                                 [self.channels[i] for i in order], name=self.name, path=self.path)

    def meta(self):
        return dict(name=self.name, path=self.path, freq_minutes=self.freq_minutes,
                    split_bounds=list(self.split_bounds), channels=self.channels,
                    n_steps=self.n_steps, synthesized=self.synthesized)


# Fixed borders of the ETT benchmark loaders (12/4/4 months, truncated after the test span).
ETT_BORDERS = {60: (8640, 11520, 14400), 15: (34560, 46080, 57600)}


def is_ett(name):
    return name is not None and name.lower().startswith('ett')


# Train and train + val fractions of the chronological split; PeMS follows 6:2:2.
SPLIT_FRACTIONS = {'pems': (.6, .8)}
DEFAULT_FRACTIONS = (.7, .8)


def split_fractions(name):
    key = (name or '').lower()
    return next((f for prefix, f in SPLIT_FRACTIONS.items() if key.startswith(prefix)), DEFAULT_FRACTIONS)


def default_split(n_steps: int, name: Optional[str] = None, freq_minutes: Optional[int] = None):
    if is_ett(name):
        freq = freq_minutes or (60 if name.lower().startswith('etth') else 15)
        if freq in ETT_BORDERS and n_steps >= ETT_BORDERS[freq][2]:
            return ETT_BORDERS[freq][:2]
    if n_steps < 3:
        raise DataError(f'{n_steps} steps cannot be split into train, val and test')
    train_fraction, val_fraction = split_fractions(name)
    val_end = min(max(int(n_steps * val_fraction), 2), n_steps - 1)
    return min(max(int(n_steps * train_fraction), 1), val_end - 1), val_end


def infer_freq(dates: pd.DatetimeIndex) -> int:
    if len(dates) < 2:
        raise ConfigError('Cannot infer the sampling interval from fewer than two timestamps')
    minutes = int(round(np.median(np.diff(dates.asi8)) / 6e10))
    return check_freq(minutes)


def load_csv(path, freq_minutes: Optional[int] = None, name: Optional[str] = None,
             train_end: Optional[int] = None, val_end: Optional[int] = None) -> TimeSeriesDataset:
    """Load a CSV with an optional leading `date` column and numeric channel columns."""
    if not exists(path):
        raise DataError(f'No such file: {path}')
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise DataError(f'{path}: empty file')
    except pd.errors.ParserError as e:
        raise DataError(f'{path}: ragged rows ({e})')
    if len(df) == 0:
        raise DataError(f'{path}: no data rows')
    # Short rows are filled with NaN by the parser; data rows start at file line 2.
    missing = (df.isna() | (df == '')).any(axis=1).to_numpy().nonzero()[0]
    if len(missing):
        raise DataError(f'{path}: ragged or incomplete row {missing[0] + 2}')

    has_date = df.columns[0].strip().lower() == 'date'
    channels = list(df.columns[1:] if has_date else df.columns)
    if not channels:
        raise DataError(f'{path}: no channel columns')

    values = np.empty((len(df), len(channels)), dtype=np.float64)
    for j, column in enumerate(channels):
        parsed = pd.to_numeric(df[column], errors='coerce')
        bad = parsed.isna().to_numpy().nonzero()[0]
        if len(bad):
            raise DataError(f'{path}: unparseable number {df[column].iloc[bad[0]]!r} '
                            f'in column {column!r}, row {bad[0] + 2}')
        values[:, j] = parsed.to_numpy(dtype=np.float64)

    if has_date:
        dates = pd.to_datetime(df.iloc[:, 0], format='ISO8601', errors='coerce')
        bad = dates.isna().to_numpy().nonzero()[0]
        if len(bad):
            raise DataError(f'{path}: unparseable date {df.iloc[bad[0], 0]!r} in row {bad[0] + 2}')
        dates = pd.DatetimeIndex(dates)
        if freq_minutes is None:
            freq_minutes = infer_freq(dates)
        calendar = timestamp_calendar(dates, freq_minutes)
    else:
        if freq_minutes is None:
            freq_minutes = 60
        calendar = index_proxy_calendar(len(df), freq_minutes)

    n_steps = len(df)
    if is_ett(name) and freq_minutes in ETT_BORDERS and n_steps > ETT_BORDERS[freq_minutes][2]:
        n_steps = ETT_BORDERS[freq_minutes][2]
        values, calendar = values[:n_steps], calendar[:n_steps]
    auto_train, auto_val = default_split(n_steps, name, freq_minutes)
    train_end = auto_train if train_end is None else train_end
    val_end = auto_val if val_end is None else val_end
    logger.info(f'Loaded {path}: {n_steps} steps, {len(channels)} channels, '
                f'tau={freq_minutes}min, split=({train_end}, {val_end})')
    return TimeSeriesDataset(torch.from_numpy(values), calendar, freq_minutes, (train_end, val_end),
                             channels=channels, name=name, path=str(path))


def get_data_dir():
    return os.environ.get('INDEXNET_DATA_DIR', expanduser('~/data/indexnet'))


def get_output_dir():
    output_dir = expanduser('~/output/indexnet')
    if not exists(output_dir):
        os.makedirs(output_dir)
    return output_dir


def resolve_data_path(path):
    """`path` as given if it exists, else looked up under the data root."""
    if path is None:
        raise ConfigError('No dataset given (--data)')
    if exists(path):
        return path
    candidate = join(get_data_dir(), path)
    if exists(candidate):
        return candidate
    raise DataError(f'No such dataset: {path} (also looked in {get_data_dir()})')


def synthetic_dates(n_steps, freq_minutes, start='2016-07-01 00:00'):
    return pd.date_range(start, periods=n_steps, freq=f'{freq_minutes}min')


def make_sine(n_steps=2000, n_channels=2, period=24, seed=0, freq_minutes=60):
    rng = np.random.RandomState(seed)
    t = np.arange(n_steps)[:, None]
    phases = rng.uniform(0, 2 * np.pi, size=n_channels)[None, :]
    return np.sin(2 * np.pi * t / period + phases), synthetic_dates(n_steps, freq_minutes)


def make_hourly(n_steps=24 * 7 * 10, n_channels=3, noise=.1, seed=0, freq_minutes=60):
    """Hour-of-day profile, weekend level shift, and per-channel profiles and slopes."""
    rng = np.random.RandomState(seed)
    dates = synthetic_dates(n_steps, freq_minutes)
    hours = np.asarray(dates.hour)
    weekend = (np.asarray(dates.dayofweek) >= 5).astype(float)
    common = rng.randn(24)
    values = np.empty((n_steps, n_channels))
    for c in range(n_channels):
        profile = common + .5 * rng.randn(24)
        slope = (c - (n_channels - 1) / 2) * 2. / 24
        # slope restarts every day so it shapes the continuation, not a global trend
        values[:, c] = profile[hours] + slope * hours + weekend * (1 + c)
    values += noise * rng.randn(n_steps, n_channels)
    return values, dates


def make_channel_pairs(n_steps=24 * 7 * 10, seed=0, freq_minutes=60):
    """Channels 0 and 1 identical, channels 2 and 3 distinct from them and each other."""
    rng = np.random.RandomState(seed)
    dates = synthetic_dates(n_steps, freq_minutes)
    hours = np.asarray(dates.hour)
    base = np.sin(2 * np.pi * hours / 24)
    values = np.stack([base, base, -2 * base + .3 * rng.randn(n_steps),
                       np.cos(4 * np.pi * hours / 24) + .3 * rng.randn(n_steps)], axis=1)
    return values, dates


def make_white_noise(n_steps=4000, n_channels=2, seed=0, freq_minutes=60):
    rng = np.random.RandomState(seed)
    return rng.randn(n_steps, n_channels), synthetic_dates(n_steps, freq_minutes)


def make_data(data_source, n_steps=None, seed=0, freq_minutes=60, with_dates=True, **kwargs):
    makers = {'sine': make_sine, 'hourly': make_hourly, 'channel_pairs': make_channel_pairs,
              'white_noise': make_white_noise}
    if data_source not in makers:
        raise ConfigError(f'Unknown synthetic dataset {data_source!r}')
    if n_steps is not None:
        kwargs['n_steps'] = n_steps
    values, dates = makers[data_source](seed=seed, freq_minutes=freq_minutes, **kwargs)
    if with_dates:
        calendar = timestamp_calendar(dates, freq_minutes)
    else:
        calendar = index_proxy_calendar(len(values), freq_minutes)
    return TimeSeriesDataset(torch.from_numpy(np.ascontiguousarray(values)), calendar, freq_minutes,
                             name=data_source)


def save_csv(ds: TimeSeriesDataset, path, start='2016-07-01 00:00', with_dates=True):
    df = pd.DataFrame(ds.values.numpy(), columns=ds.channels)
    if with_dates:
        df.insert(0, 'date', synthetic_dates(ds.n_steps, ds.freq_minutes, start).strftime('%Y-%m-%d %H:%M:%S'))
    df.to_csv(path, index=False)
    return path

"""Timestamp and channel-identity embedding tables.

Timestamp tables are indexed by the calendar fields of a window's first step and summed
into a week-level vector (minute + hour + day of week) and a month-level vector
(day of month + month). The channel table holds one identity row per channel.
Everything is zero at construction, so an untrained model is blind to both.

This module has no dependency on the forecaster; any backbone can call
`IndexEmbedding.retrieve` / `IndexEmbedding.backward` around its own layers.
"""
from typing import Dict, NamedTuple, Optional, Sequence, Union

import torch

from indexnet.dataset import ABSENT, CALENDAR_FIELDS, CalendarFields, check_freq
from indexnet.errors import ConfigError, ShapeError
from indexnet.numeric import DTYPE

GROUPS = {'week': ('minute', 'hour', 'day_of_week'),
          'month': ('day_of_month', 'month')}
TABLE_ROWS = {'hour': 24, 'day_of_week': 7, 'day_of_month': 31, 'month': 12}
FIELD_COLUMN = {name: i for i, name in enumerate(CALENDAR_FIELDS)}
RANDOM_INIT_STD = .02


def check_groups(active_groups):
    active_groups = tuple(active_groups)
    unknown = set(active_groups) - set(GROUPS)
    if unknown:
        raise ConfigError(f'Unknown timestamp groups {sorted(unknown)}, expected a subset of {sorted(GROUPS)}')
    return tuple(g for g in GROUPS if g in active_groups)


class TimestampTables:
    def __init__(self, freq_minutes: int, t_dim: int, active_groups=('week',), device='cpu'):
        self.freq_minutes = check_freq(freq_minutes)
        if t_dim < 1:
            raise ConfigError(f'T_dim must be positive, got {t_dim}')
        self.t_dim = t_dim
        self.active_groups = check_groups(active_groups)
        self.n_minute_slots = 60 // self.freq_minutes
        rows = dict(TABLE_ROWS)
        if self.n_minute_slots > 1:
            rows = dict(minute=self.n_minute_slots, **rows)
        # hourly data: no minute table
        self.tables = {name: torch.zeros((n, t_dim), dtype=DTYPE, device=device) for name, n in rows.items()}
        self.grads = {name: torch.zeros_like(table) for name, table in self.tables.items()}

    @property
    def week_level(self):
        return 'week' in self.active_groups

    @property
    def month_level(self):
        return 'month' in self.active_groups

    def group_tables(self, group):
        return [name for name in GROUPS[group] if name in self.tables]

    def active_tables(self):
        return [name for group in self.active_groups for name in self.group_tables(group)]

    def zero_grads(self):
        for grad in self.grads.values():
            grad.zero_()

    def parameters(self, prefix='timestamp.'):
        return {f'{prefix}{name}': self.tables[name] for name in self.active_tables()}

    def gradients(self, prefix='timestamp.'):
        return {f'{prefix}{name}': self.grads[name] for name in self.active_tables()}


class ChannelTable:
    def __init__(self, n_channels: int, c_dim: int, device='cpu'):
        if n_channels < 1 or c_dim < 1:
            raise ConfigError(f'Channel table needs N >= 1 and C_dim >= 1, got N={n_channels}, C_dim={c_dim}')
        self.weight = torch.zeros((n_channels, c_dim), dtype=DTYPE, device=device)
        self.grad = torch.zeros_like(self.weight)

    @property
    def n_channels(self):
        return self.weight.shape[0]

    @property
    def c_dim(self):
        return self.weight.shape[1]

    def zero_grads(self):
        self.grad.zero_()

    def parameters(self, prefix='channel.'):
        return {f'{prefix}identity': self.weight}

    def gradients(self, prefix='channel.'):
        return {f'{prefix}identity': self.grad}


class IndexVectors(NamedTuple):
    e_w: torch.Tensor
    e_m: torch.Tensor
    e_identity: Optional[torch.Tensor]
    source_indices: Dict[str, torch.Tensor]


def build_tables(freq_minutes: int, t_dim: int, n_channels: int, c_dim: int, active_groups=('week',),
                 init_mode='zeros', generator: Optional[torch.Generator] = None, device='cpu'):
    tables = TimestampTables(freq_minutes, t_dim, active_groups, device=device)
    channel_table = ChannelTable(n_channels, c_dim, device=device)
    if init_mode == 'random':
        for name, table in tables.tables.items():
            noise = torch.randn(table.shape, generator=generator, dtype=DTYPE) * RANDOM_INIT_STD
            table.copy_(noise.to(device))
    elif init_mode != 'zeros':
        raise ConfigError(f'Unknown init_mode {init_mode!r}, expected zeros or random')
    return tables, channel_table


def as_calendar_batch(calendar: Union[CalendarFields, torch.Tensor, Sequence[int]]) -> torch.Tensor:
    if isinstance(calendar, CalendarFields):
        calendar = calendar.as_row()
    calendar = torch.as_tensor(calendar, dtype=torch.long)
    if calendar.dim() == 1:
        calendar = calendar[None, :]
    if calendar.shape[-1] != len(CALENDAR_FIELDS):
        raise ShapeError('calendar fields', len(CALENDAR_FIELDS), calendar.shape[-1])
    return calendar


def retrieve_timestamp(tables: TimestampTables, calendar):
    """Sum of the active week-level rows and of the active month-level rows.

    `calendar` is a CalendarFields or a B x 5 tensor of calendar rows. Returns (e_w, e_m,
    source_indices) with e_w/e_m of shape B x T_dim (T_dim for a single CalendarFields).
    """
    single = isinstance(calendar, CalendarFields)
    calendar = as_calendar_batch(calendar)
    device = next(iter(tables.tables.values())).device
    calendar = calendar.to(device)
    if tables.month_level and (calendar[:, 3:] == ABSENT).any():
        raise ConfigError('month features unavailable: the calendar was synthesized from step indices')
    source_indices = {}
    vectors = {}
    for group in GROUPS:
        e = torch.zeros((len(calendar), tables.t_dim), dtype=DTYPE, device=device)
        if group in tables.active_groups:
            for name in tables.group_tables(group):
                rows = calendar[:, FIELD_COLUMN[name]]
                n_rows = tables.tables[name].shape[0]
                if (rows < 0).any() or (rows >= n_rows).any():
                    raise ConfigError(f'Calendar field {name} out of range [0, {n_rows})')
                source_indices[name] = rows
                e = e + tables.tables[name][rows]
        vectors[group] = e
    e_w, e_m = vectors['week'], vectors['month']
    if single:
        e_w, e_m = e_w[0], e_m[0]
    return e_w, e_m, source_indices


def retrieve_channel(table: ChannelTable, n):
    """Identity row I_n = n - 1 of channel n (1-based; int or tensor of ints)."""
    single = isinstance(n, int)
    n = torch.as_tensor(n, dtype=torch.long).reshape(-1)
    if (n < 1).any() or (n > table.n_channels).any():
        raise IndexError(f'Channel index out of range 1..{table.n_channels}: {n.tolist()}')
    rows = (n - 1).to(table.weight.device)
    e_identity = table.weight[rows]
    return e_identity[0] if single else e_identity


def embedding_backward(tables: Optional[TimestampTables], channel_table: Optional[ChannelTable],
                       source_indices: Dict[str, torch.Tensor], grad_e_w=None, grad_e_m=None, grad_identity=None):
    """Route gradients to exactly the rows that produced the retrieved vectors."""
    if tables is not None:
        for group, grad in (('week', grad_e_w), ('month', grad_e_m)):
            if grad is None or group not in tables.active_groups:
                continue
            grad = grad.reshape(-1, tables.t_dim)
            for name in tables.group_tables(group):
                tables.grads[name].index_add_(0, source_indices[name].reshape(-1), grad)
    if channel_table is not None and grad_identity is not None:
        channel_table.grad.index_add_(0, source_indices['identity'].reshape(-1),
                                      grad_identity.reshape(-1, channel_table.c_dim))


class IndexEmbedding:
    """Backbone-agnostic façade over the timestamp and channel tables."""

    def __init__(self, freq_minutes: int, t_dim: int, n_channels: int, c_dim: int, active_groups=('week',),
                 te_enabled=True, ce_enabled=True, init_mode='zeros', generator=None, device='cpu'):
        self.te_enabled = te_enabled
        self.ce_enabled = ce_enabled
        self.tables, self.channel_table = build_tables(freq_minutes, t_dim, n_channels, c_dim, active_groups,
                                                       init_mode=init_mode, generator=generator, device=device)

    @classmethod
    def from_tables(cls, tables: Optional[TimestampTables], channel_table: Optional[ChannelTable], te_enabled=True,
                    ce_enabled=True):
        """Façade over tables that already exist."""
        embedding = cls.__new__(cls)
        embedding.te_enabled = te_enabled
        embedding.ce_enabled = ce_enabled
        embedding.tables, embedding.channel_table = tables, channel_table
        return embedding

    @property
    def width(self):
        """Number of features appended to a representation."""
        return self.tables.t_dim * self.te_enabled + self.channel_table.c_dim * self.ce_enabled

    def retrieve(self, calendar, channels) -> IndexVectors:
        source_indices = {}
        e_w = e_m = e_identity = None
        if self.te_enabled:
            e_w, e_m, source_indices = retrieve_timestamp(self.tables, calendar)
        if self.ce_enabled:
            e_identity = retrieve_channel(self.channel_table, channels)
            rows = torch.as_tensor(channels, dtype=torch.long).reshape(-1) - 1
            source_indices['identity'] = rows.to(self.channel_table.weight.device)
        return IndexVectors(e_w, e_m, e_identity, source_indices)

    def concat(self, z: torch.Tensor, vectors: IndexVectors) -> torch.Tensor:
        parts = [z]
        if self.te_enabled:
            parts.append((vectors.e_w + vectors.e_m).reshape(z.shape[:-1] + (-1,)))
        if self.ce_enabled:
            parts.append(vectors.e_identity.reshape(z.shape[:-1] + (-1,)))
        return torch.cat(parts, dim=-1)

    def backward(self, grad_concat: torch.Tensor, vectors: IndexVectors, d_model: int) -> torch.Tensor:
        """Split the gradient of `concat` output; route the embedding slices; return dL/dz."""
        cursor = d_model
        if self.te_enabled:
            grad_e = grad_concat[..., cursor:cursor + self.tables.t_dim]
            cursor += self.tables.t_dim
            # e_w and e_m enter as a sum: both receive the slice unchanged
            embedding_backward(self.tables, None, vectors.source_indices, grad_e, grad_e)
        if self.ce_enabled:
            grad_identity = grad_concat[..., cursor:cursor + self.channel_table.c_dim]
            embedding_backward(None, self.channel_table, vectors.source_indices, grad_identity=grad_identity)
        return grad_concat[..., :d_model]

    def zero_grads(self):
        self.tables.zero_grads()
        self.channel_table.zero_grads()

    def parameters(self):
        params = {}
        if self.te_enabled:
            params.update(self.tables.parameters())
        if self.ce_enabled:
            params.update(self.channel_table.parameters())
        return params

    def gradients(self):
        grads = {}
        if self.te_enabled:
            grads.update(self.tables.gradients())
        if self.ce_enabled:
            grads.update(self.channel_table.gradients())
        return grads

    def state_dict(self):
        return dict(freq_minutes=self.tables.freq_minutes, t_dim=self.tables.t_dim,
                    n_channels=self.channel_table.n_channels, c_dim=self.channel_table.c_dim,
                    active_groups=list(self.tables.active_groups), te_enabled=self.te_enabled,
                    ce_enabled=self.ce_enabled,
                    tables={name: t.clone().cpu() for name, t in self.tables.tables.items()},
                    identity=self.channel_table.weight.clone().cpu())

    @classmethod
    def from_state_dict(cls, state, device='cpu'):
        embedding = cls(state['freq_minutes'], state['t_dim'], state['n_channels'], state['c_dim'],
                        state['active_groups'], te_enabled=state['te_enabled'], ce_enabled=state['ce_enabled'],
                        device=device)
        for name, table in embedding.tables.tables.items():
            if tuple(state['tables'][name].shape) != tuple(table.shape):
                raise ShapeError(f'timestamp table {name}', tuple(table.shape),
                                 tuple(state['tables'][name].shape))
            table.copy_(state['tables'][name])
        if tuple(state['identity'].shape) != tuple(embedding.channel_table.weight.shape):
            raise ShapeError('channel table', tuple(embedding.channel_table.weight.shape),
                             tuple(state['identity'].shape))
        embedding.channel_table.weight.copy_(state['identity'])
        return embedding

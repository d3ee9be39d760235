from typing import Dict, NamedTuple, Optional

import torch

from indexnet.embedding import ChannelTable, IndexEmbedding, IndexVectors, TimestampTables
from indexnet.errors import ConfigError, ShapeError
from indexnet.numeric import (AffineLayer, ResidualBlock, affine_backward, affine_forward, residual_backward,
                              residual_forward)

SIGMA_FLOOR = 1e-5


class ModelDims(NamedTuple):
    lookback: int
    horizon: int
    d_model: int
    d_ff: int
    n_layers: int
    t_dim: int
    c_dim: int
    te_enabled: bool = True
    ce_enabled: bool = True

    @property
    def width(self):
        """Width D of the residual stream."""
        return self.d_model + self.t_dim * self.te_enabled + self.c_dim * self.ce_enabled


class ModelParams:
    """Input projection, residual MLP blocks and output head."""

    def __init__(self, dims: ModelDims, generator: Optional[torch.Generator] = None, device='cpu'):
        for key in ('lookback', 'horizon', 'd_model', 'd_ff'):
            if getattr(dims, key) < 1:
                raise ConfigError(f'{key} must be positive, got {getattr(dims, key)}')
        if dims.n_layers < 0:
            raise ConfigError(f'n_layers must be non-negative, got {dims.n_layers}')
        self.dims = dims
        self.input_proj = AffineLayer(dims.lookback, dims.d_model, generator=generator, device=device)
        self.blocks = [ResidualBlock(dims.width, dims.d_ff, generator=generator, device=device)
                       for _ in range(dims.n_layers)]
        self.head = AffineLayer(dims.width, dims.horizon, generator=generator, device=device)
        self.check()

    def check(self):
        dims = self.dims
        if self.input_proj.in_features != dims.lookback or self.input_proj.out_features != dims.d_model:
            raise ShapeError('input projection', (dims.d_model, dims.lookback),
                             tuple(self.input_proj.weight.shape))
        for i, block in enumerate(self.blocks):
            if block.width != dims.width or block.outer.out_features != dims.width:
                raise ShapeError(f'residual block {i} outer width', dims.width, block.outer.out_features)
        if self.head.in_features != dims.width or self.head.out_features != dims.horizon:
            raise ShapeError('output head', (dims.horizon, dims.width), tuple(self.head.weight.shape))

    def layers(self) -> Dict[str, AffineLayer]:
        layers = {'input_proj.': self.input_proj}
        for i, block in enumerate(self.blocks):
            layers.update(block.layers(f'blocks.{i}.'))
        layers['head.'] = self.head
        return layers

    def parameters(self):
        return {k: v for prefix, layer in self.layers().items() for k, v in layer.parameters(prefix).items()}

    def gradients(self):
        return {k: v for prefix, layer in self.layers().items() for k, v in layer.gradients(prefix).items()}

    def zero_grads(self):
        for layer in self.layers().values():
            layer.zero_grads()

    def fill_(self, value: float):
        for layer in self.layers().values():
            layer.fill_(value)
        return self


class InstanceNormState(NamedTuple):
    mu: torch.Tensor
    sigma: torch.Tensor


def instance_normalize(x: torch.Tensor):
    """Z-score over the last (time) axis, sigma clamped at 1e-5; no learnable affine."""
    if x.shape[-1] < 2:
        raise ShapeError('instance normalization window length', '>= 2', x.shape[-1])
    mu = x.mean(dim=-1, keepdim=True)
    sigma = x.std(dim=-1, unbiased=False, keepdim=True).clamp_min(SIGMA_FLOOR)
    return (x - mu) / sigma, InstanceNormState(mu, sigma)


def instance_denormalize(y_norm: torch.Tensor, state: InstanceNormState):
    return y_norm * state.sigma + state.mu


class ForwardTrace:
    def __init__(self, x_hat, norm_state, z, vectors: IndexVectors, z_tc, block_caches, h_final, y_norm):
        self.x_hat = x_hat
        self.norm_state = norm_state
        self.z = z
        self.vectors = vectors
        self.z_tc = z_tc
        self.block_caches = block_caches
        self.h_final = h_final
        self.y_norm = y_norm

    @property
    def source_indices(self):
        return self.vectors.source_indices


def forward_batch(params: ModelParams, embedding: IndexEmbedding, x: torch.Tensor, calendar: torch.Tensor,
                  channels: torch.Tensor):
    """Predict B x T from B x L channel rows with B x 5 start calendars and 1-based channel ids."""
    dims = params.dims
    if x.shape[-1] != dims.lookback:
        raise ShapeError('input window length', dims.lookback, x.shape[-1])
    x_hat, norm_state = instance_normalize(x)
    z = affine_forward(params.input_proj, x_hat)
    vectors = embedding.retrieve(calendar, channels)
    z_tc = embedding.concat(z, vectors)
    h = z_tc
    block_caches = []
    for block in params.blocks:
        h, cache = residual_forward(block, h)
        block_caches.append(cache)
    y_norm = affine_forward(params.head, h)
    y = instance_denormalize(y_norm, norm_state)
    return y, ForwardTrace(x_hat, norm_state, z, vectors, z_tc, block_caches, h, y_norm)


def backward_batch(params: ModelParams, embedding: IndexEmbedding, trace: ForwardTrace, grad_y_norm: torch.Tensor):
    """Accumulate gradients of every block and of the rows read by the matching forward."""
    grad = grad_y_norm.reshape(trace.y_norm.shape)
    grad_h = affine_backward(params.head, trace.h_final, grad)
    for block, cache in zip(reversed(params.blocks), reversed(trace.block_caches)):
        grad_h = residual_backward(block, cache, grad_h)
    grad_z = embedding.backward(grad_h, trace.vectors, params.dims.d_model)
    affine_backward(params.input_proj, trace.x_hat, grad_z)


def wrap_tables(params: ModelParams, tables: Optional[TimestampTables], channel_table: Optional[ChannelTable]):
    return IndexEmbedding.from_tables(tables, channel_table, te_enabled=params.dims.te_enabled,
                                      ce_enabled=params.dims.ce_enabled)


def forward(params: ModelParams, tables, channel_table, window, n: int):
    """Forecast channel `n` (1-based) of a single Window."""
    if not 1 <= n <= window.input.shape[0]:
        raise IndexError(f'Channel index {n} out of range 1..{window.input.shape[0]}')
    y, trace = forward_batch(params, wrap_tables(params, tables, channel_table),
                             window.input[n - 1][None, :].to(params.head.weight.device),
                             torch.tensor([window.start_calendar.as_row()]), torch.tensor([n]))
    return y[0], trace


def backward(params: ModelParams, tables, channel_table, trace: ForwardTrace, grad_y_norm: torch.Tensor):
    backward_batch(params, wrap_tables(params, tables, channel_table), trace, grad_y_norm)


def param_breakdown(params: ModelParams, tables=None, channel_table=None) -> Dict[str, int]:
    counts = {'input_proj': sum(p.numel() for p in params.input_proj.parameters().values())}
    for i, block in enumerate(params.blocks):
        counts[f'blocks.{i}'] = sum(p.numel() for layer in block.layers().values()
                                    for p in layer.parameters().values())
    counts['head'] = sum(p.numel() for p in params.head.parameters().values())
    if params.dims.te_enabled and tables is not None:
        for name, table in tables.parameters().items():
            counts[name] = table.numel()
    if params.dims.ce_enabled and channel_table is not None:
        counts['channel.identity'] = channel_table.weight.numel()
    return counts


def param_count(params: ModelParams, tables=None, channel_table=None) -> int:
    return sum(param_breakdown(params, tables, channel_table).values())


class IndexNet:
    """Forecaster: trainable parameters plus the index embedding, with a batched interface."""

    def __init__(self, params: ModelParams, embedding: IndexEmbedding):
        dims = params.dims
        if dims.te_enabled != embedding.te_enabled or dims.ce_enabled != embedding.ce_enabled:
            raise ConfigError('Embedding flags do not match model dims')
        if embedding.tables.t_dim != dims.t_dim or embedding.channel_table.c_dim != dims.c_dim:
            raise ShapeError('embedding widths', (dims.t_dim, dims.c_dim),
                             (embedding.tables.t_dim, embedding.channel_table.c_dim))
        self.params = params
        self.embedding = embedding

    @classmethod
    def build(cls, dims: ModelDims, n_channels: int, freq_minutes: int, active_groups=('week',),
              init_mode='zeros', seed=0, device='cpu'):
        generator = torch.Generator().manual_seed(seed)
        params = ModelParams(dims, generator=generator, device=device)
        embedding = IndexEmbedding(freq_minutes, dims.t_dim, n_channels, dims.c_dim, active_groups,
                                   te_enabled=dims.te_enabled, ce_enabled=dims.ce_enabled,
                                   init_mode=init_mode, generator=generator, device=device)
        return cls(params, embedding)

    @property
    def dims(self) -> ModelDims:
        return self.params.dims

    @property
    def tables(self):
        return self.embedding.tables

    @property
    def channel_table(self):
        return self.embedding.channel_table

    @property
    def device(self):
        return self.params.head.weight.device

    def forward(self, x, calendar, channels):
        return forward_batch(self.params, self.embedding, x, calendar, channels)

    def predict(self, x, calendar, channels):
        return self.forward(x, calendar, channels)[0]

    def backward(self, trace: ForwardTrace, grad_y_norm):
        backward_batch(self.params, self.embedding, trace, grad_y_norm)

    def parameters(self):
        return {**self.params.parameters(), **self.embedding.parameters()}

    def gradients(self):
        return {**self.params.gradients(), **self.embedding.gradients()}

    def zero_grads(self):
        self.params.zero_grads()
        self.embedding.zero_grads()

    def param_count(self):
        return param_count(self.params, self.tables, self.channel_table)

    def state_dict(self):
        return dict(dims=self.dims._asdict(),
                    params={k: v.clone().cpu() for k, v in self.params.parameters().items()},
                    embedding=self.embedding.state_dict())

    @classmethod
    def from_state_dict(cls, state, device='cpu'):
        dims = ModelDims(**state['dims'])
        params = ModelParams(dims, device=device)
        current = params.parameters()
        missing = set(current) - set(state['params'])
        if missing:
            raise ConfigError(f'Missing parameter blocks {sorted(missing)}')
        for name, p in current.items():
            if tuple(state['params'][name].shape) != tuple(p.shape):
                raise ShapeError(f'parameter block {name}', tuple(p.shape), tuple(state['params'][name].shape))
            p.copy_(state['params'][name])
        return cls(params, IndexEmbedding.from_state_dict(state['embedding'], device=device))

"""Training configuration, per-dataset presets and the flat `key = value` config format.

Config file example::

    # ETTh1, horizon 96
    lookback = 96
    horizon = 96
    lr = 5e-4
    active_groups = week

The short names L, T, m, T_dim and C_dim are accepted as aliases.
"""
from dataclasses import asdict, dataclass, fields
from typing import Optional, Tuple

from indexnet.errors import ConfigError
from indexnet.model import ModelDims


def is_optional(kind):
    return type(None) in getattr(kind, '__args__', ())


@dataclass
class TrainConfig:
    lookback: int = 96
    horizon: int = 96
    d_model: int = 128
    d_ff: int = 128
    n_layers: int = 3
    t_dim: int = 16
    c_dim: int = 16
    lr: float = 5e-4
    batch_size: int = 256
    max_epochs: int = 30
    patience: int = 3
    seed: int = 0
    te_enabled: bool = True
    ce_enabled: bool = True
    active_groups: Tuple[str, ...] = ('week',)
    init_mode: str = 'zeros'
    dataset: Optional[str] = None
    freq_minutes: Optional[int] = None
    train_end: Optional[int] = None
    val_end: Optional[int] = None
    device: str = 'cpu'
    workers: int = 1
    verbose: bool = False

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) is None and not is_optional(f.type):
                raise ConfigError(f'{f.name} cannot be none')
        if isinstance(self.active_groups, str):
            self.active_groups = tuple(g.strip() for g in self.active_groups.split(',') if g.strip())
        self.active_groups = tuple(self.active_groups)
        if self.init_mode not in ('zeros', 'random'):
            raise ConfigError(f'init_mode must be zeros or random, got {self.init_mode!r}')
        for key in ('lookback', 'horizon', 'd_model', 'd_ff', 't_dim', 'c_dim', 'batch_size', 'workers'):
            if getattr(self, key) < 1:
                raise ConfigError(f'{key} must be positive, got {getattr(self, key)}')
        for key in ('n_layers', 'max_epochs', 'patience'):
            if getattr(self, key) < 0:
                raise ConfigError(f'{key} must be non-negative, got {getattr(self, key)}')
        if self.lr < 0:
            raise ConfigError(f'lr must be non-negative, got {self.lr}')

    @property
    def dims(self) -> ModelDims:
        return ModelDims(self.lookback, self.horizon, self.d_model, self.d_ff, self.n_layers, self.t_dim,
                         self.c_dim, self.te_enabled, self.ce_enabled)

    def to_dict(self):
        d = asdict(self)
        d['active_groups'] = list(self.active_groups)
        return d

    def replace(self, **updates) -> 'TrainConfig':
        return from_mapping({**self.to_dict(), **updates})


CONFIG_KEYS = tuple(f.name for f in fields(TrainConfig))
FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}
ALIASES = {'L': 'lookback', 'T': 'horizon', 'm': 'n_layers', 'T_dim': 't_dim', 'C_dim': 'c_dim'}


def canonical_key(key):
    return ALIASES.get(key, key)


def check_keys(mapping):
    unknown = sorted(k for k in mapping if canonical_key(k) not in CONFIG_KEYS)
    if unknown:
        raise ConfigError(f'Unknown config keys: {", ".join(unknown)}')


def from_mapping(mapping) -> TrainConfig:
    check_keys(mapping)
    return TrainConfig(**{canonical_key(k): v for k, v in mapping.items()})


def parse_value(key, text):
    text = text.strip()
    kind = FIELD_TYPES[key]
    if text.lower() in ('none', 'null', ''):
        if not is_optional(kind):
            raise ConfigError(f'{key} cannot be none')
        return None
    try:
        if kind in (int, Optional[int]):
            return int(text)
        if kind is float:
            return float(text)
        if kind is bool:
            if text.lower() not in ('true', 'false', '1', '0', 'yes', 'no'):
                raise ValueError(text)
            return text.lower() in ('true', '1', 'yes')
    except ValueError:
        raise ConfigError(f'Invalid value {text!r} for {key}')
    if key == 'active_groups':
        return tuple(g.strip() for g in text.split(',') if g.strip())
    return text


def parse_config_text(text, source='<config>'):
    values = {}
    unknown = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f'{source}:{lineno}: expected `key = value`, got {line!r}')
        key, value = (part.strip() for part in line.split('=', 1))
        key = canonical_key(key)
        if key not in CONFIG_KEYS:
            unknown.append(key)
            continue
        values[key] = parse_value(key, value)
    if unknown:
        raise ConfigError(f'{source}: unknown config keys: {", ".join(unknown)}')
    return values


def parse_config_file(path):
    try:
        with open(path, 'r') as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f'Cannot read config {path}: {e}')
    return parse_config_text(text, source=str(path))


@dataclass(frozen=True)
class Preset:
    """Hyperparameters of one benchmark dataset plus its descriptive metadata."""
    n_layers: int
    t_dim: int
    c_dim: int
    timestamp: bool
    lr: float
    d_model: int
    d_ff: int
    n_channels: int
    split_sizes: Tuple[int, int, int]
    freq_minutes: int
    adf: float
    filename: str
    horizon: int = 96
    month_level: bool = False

    def config_updates(self, name):
        return dict(dataset=name, n_layers=self.n_layers, t_dim=self.t_dim, c_dim=self.c_dim, lr=self.lr,
                    d_model=self.d_model, d_ff=self.d_ff, freq_minutes=self.freq_minutes, horizon=self.horizon,
                    active_groups=['week', 'month'] if self.month_level else ['week'])


# Layers, T_dim, C_dim, explicit timestamps, lr, d_model, d_ff; then channels, window counts
# (train, val, test) at L=96, sampling interval, ADF statistic.
PRESETS = {
    'etth1': Preset(3, 16, 16, True, 5e-4, 128, 128, 7, (8545, 2881, 2881), 60, -5.91, 'ETTh1.csv'),
    'etth2': Preset(2, 16, 16, True, 5e-5, 128, 128, 7, (8545, 2881, 2881), 60, -4.13, 'ETTh2.csv'),
    'ettm1': Preset(3, 16, 16, True, 2e-4, 128, 128, 7, (34465, 11521, 11521), 15, -14.98, 'ETTm1.csv'),
    'ettm2': Preset(3, 16, 16, True, 2e-4, 128, 128, 7, (34465, 11521, 11521), 15, -5.66, 'ETTm2.csv'),
    'weather': Preset(3, 16, 16, True, 5e-4, 512, 512, 21, (36792, 5271, 10540), 10, -26.68, 'weather.csv'),
    'solar': Preset(2, 16, 16, False, 5e-4, 512, 512, 137, (36601, 5161, 10417), 10, -37.23,
                    'solar_AL.csv'),
    'electricity': Preset(3, 16, 16, True, 1e-3, 512, 512, 321, (18317, 2633, 5261), 60, -8.44,
                          'electricity.csv'),
    'traffic': Preset(3, 256, 256, True, 1e-3, 512, 1024, 862, (12185, 1757, 3509), 60, -15.02, 'traffic.csv',
                      month_level=True),
    'pems03': Preset(3, 16, 16, False, 1e-3, 512, 512, 358, (15617, 5135, 5135), 5, -19.05, 'PEMS03.csv',
                     horizon=12),
    'pems04': Preset(3, 16, 16, False, 1e-3, 512, 512, 307, (10172, 3375, 3375), 5, -15.66, 'PEMS04.csv',
                     horizon=12),
    'pems07': Preset(3, 16, 16, False, 1e-3, 512, 512, 883, (16911, 5622, 5622), 5, -20.60, 'PEMS07.csv',
                     horizon=12),
    'pems08': Preset(3, 16, 16, False, 1e-3, 512, 512, 170, (10690, 3548, 265), 5, -16.04, 'PEMS08.csv',
                     horizon=12),
}


def get_preset(name) -> Preset:
    key = name.lower()
    if key not in PRESETS:
        raise ConfigError(f'Unknown preset {name!r}, expected one of {", ".join(PRESETS)}')
    return PRESETS[key]


def resolve_config(preset=None, file_values=None, overrides=None) -> TrainConfig:
    """Defaults < preset < config file < command-line overrides."""
    values = {}
    if preset is not None:
        values.update(get_preset(preset).config_updates(preset.lower()))
    values.update(file_values or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return from_mapping(values)

import logging
from typing import NamedTuple, Optional

import torch

from indexnet.config import TrainConfig, from_mapping
from indexnet.data import StandardizerStats
from indexnet.errors import CheckpointError, IndexNetError
from indexnet.model import IndexNet

logger = logging.getLogger(__name__)

FORMAT = 'indexnet-checkpoint'
VERSION = 1


class Checkpoint(NamedTuple):
    model: IndexNet
    stats: StandardizerStats
    config: Optional[TrainConfig]
    dataset: dict


def save_checkpoint(path, model: IndexNet, stats: StandardizerStats, config: Optional[TrainConfig] = None,
                    dataset_meta: Optional[dict] = None):
    state = dict(format=FORMAT, version=VERSION,
                 config=config.to_dict() if config is not None else None,
                 model=model.state_dict(),
                 stats=dict(mean=stats.mean.clone().cpu(), std=stats.std.clone().cpu()),
                 dataset=dataset_meta or {})
    torch.save(state, path)
    logger.info(f'Saved checkpoint to {path}')
    return path


def load_checkpoint(path, device='cpu') -> Checkpoint:
    try:
        state = torch.load(path, map_location='cpu')
    except FileNotFoundError:
        raise CheckpointError(f'Checkpoint not found: {path}')
    except Exception as e:
        raise CheckpointError(f'Unreadable checkpoint {path}: {e}')
    if not isinstance(state, dict) or state.get('format') != FORMAT:
        raise CheckpointError(f'{path} is not an {FORMAT} file')
    if state.get('version') != VERSION:
        raise CheckpointError(f'Unsupported checkpoint version {state.get("version")} in {path}, '
                              f'expected {VERSION}')
    try:
        model = IndexNet.from_state_dict(state['model'], device=device)
        stats = StandardizerStats(state['stats']['mean'].to(torch.float64), state['stats']['std'].to(torch.float64))
        config = from_mapping(state['config']) if state['config'] is not None else None
    except IndexNetError:
        raise
    except (KeyError, TypeError, AttributeError) as e:
        raise CheckpointError(f'Malformed checkpoint {path}: {e!r}')
    return Checkpoint(model, stats, config, state.get('dataset', {}))

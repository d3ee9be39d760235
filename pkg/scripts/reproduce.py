#!/bin/env python
"""Long-term forecasting grid: datasets x horizons x seeds, plus the component and init ablations.

Each point is one sacred run under ~/output/indexnet/<grid>; datasets are read from
$INDEXNET_DATA_DIR. Analyse with `python analyse.py`.
"""
import sys
from os.path import join

from joblib import Parallel, delayed
from sklearn.model_selection import ParameterGrid

from indexnet.config import resolve_config
from indexnet.dataset import get_output_dir
from indexnet.experiment import run_command


def run_one(command, params, grid):
    params = dict(params)
    preset = params.pop('preset')
    config = resolve_config(preset, overrides=params)
    run = run_command(command, config, out_dir=join(get_output_dir(), grid))
    return run.result


grid = sys.argv[1] if len(sys.argv) > 1 else 'long_term'
n_jobs = int(sys.argv[2]) if len(sys.argv) > 2 else 1

n_seeds = 3
seeds = list(range(n_seeds))

if grid == 'long_term':
    command = 'train'
    grids = [ParameterGrid({'preset': ['etth1', 'ettm1'],
                            'horizon': [96, 192, 336, 720],
                            'seed': seeds})]
elif grid == 'long_term_all':
    command = 'train'
    grids = [ParameterGrid({'preset': ['etth1', 'etth2', 'ettm1', 'ettm2', 'weather', 'electricity',
                                       'traffic', 'solar'],
                            'horizon': [96, 192, 336, 720],
                            'seed': seeds}),
             ParameterGrid({'preset': ['pems03', 'pems04', 'pems07', 'pems08'],
                            'horizon': [12, 24, 48, 96],
                            'seed': seeds})]
elif grid == 'ablation':
    command = 'ablate'
    grids = [ParameterGrid({'preset': ['etth1', 'ettm1'],
                            'horizon': [96],
                            'seed': seeds})]
elif grid == 'init':
    # zeros against N(0, 0.02^2) table init, lookback 336
    command = 'train'
    grids = [ParameterGrid({'preset': ['etth1', 'weather'],
                            'lookback': [336],
                            'horizon': [96],
                            'init_mode': ['zeros', 'random'],
                            'seed': seeds})]
else:
    raise ValueError(f'Unknown grid {grid}')

configs = [params for param_grid in grids for params in param_grid]
print(f'{len(configs)} runs in grid {grid}')
results = Parallel(n_jobs=n_jobs, verbose=10)(delayed(run_one)(command, params, grid) for params in configs)

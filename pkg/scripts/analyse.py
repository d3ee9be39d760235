import json
import os
import sys
from os.path import join

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns

from indexnet.checkpoint import load_checkpoint
from indexnet.dataset import get_output_dir
from indexnet.introspection import hour_neighbor_contrast, pca_project

pt_width = 397.48499
pt_per_inch = 72.27
width = pt_width / pt_per_inch


def gather(output_dirs):
    records = []
    for output_dir in output_dirs:
        for exp_dir in os.listdir(output_dir):
            try:
                conf = json.load(open(join(output_dir, exp_dir, 'config.json'), 'r'))
                run = json.load(open(join(output_dir, exp_dir, 'run.json'), 'r'))
                status = run['status']
            except (OSError, ValueError):
                print(f'No run for {exp_dir}')
                continue
            result = run.get('result')
            if status != 'COMPLETED' or result is None:
                print(f'No result for {exp_dir}, {status}')
                continue
            if 'test' in result:
                rows = [dict(case=0, **result['test'])]
            else:
                rows = [dict(case=int(case), **report) for case, report in result.items()]
            for row in rows:
                row.update({k: v for k, v in conf.items() if not isinstance(v, list)})
                row['exp_dir'] = join(output_dir, exp_dir)
                records.append(row)
    df = pd.DataFrame(records)
    df.to_pickle(join(get_output_dir(), 'all.pkl'))
    return df


def seed_table(df, keys=('dataset', 'horizon', 'case', 'init_mode')):
    keys = [k for k in keys if k in df.columns]
    return df.groupby(keys)[['mse', 'mae']].agg(['mean', 'std'])


def plot_ablation(df):
    df = df.query('case > 0')
    names = {1: 'w/o TE, w/o CE', 2: 'w/o TE', 3: 'w/o CE', 4: 'IndexNet'}
    df = df.assign(variant=df['case'].map(names))
    fig, axes = plt.subplots(1, 2, figsize=(width, width * .35))
    for ax, metric in zip(axes, ['mse', 'mae']):
        sns.barplot(data=df, x='dataset', y=metric, hue='variant', ax=ax, errorbar='sd')
        ax.set_xlabel('')
        ax.legend(frameon=False, fontsize=6)
    sns.despine(fig)
    plt.savefig(join(get_output_dir(), 'ablation.pdf'), bbox_inches='tight')


def plot_embeddings(exp_dir):
    """3D PCA scatter of the hour, day-of-week and channel tables of one run."""
    model = load_checkpoint(join(exp_dir, 'artifacts', 'checkpoint.pt')).model
    tables = {'hour': model.tables.tables['hour'], 'day_of_week': model.tables.tables['day_of_week'],
              'identity': model.channel_table.weight}
    fig = plt.figure(figsize=(width, width * .35))
    for i, (name, table) in enumerate(tables.items()):
        projection = pca_project(table.numpy())
        coords = projection.coords
        ax = fig.add_subplot(1, 3, i + 1, projection='3d')
        ax.scatter(coords[:, 0], coords[:, 1], coords[:, 2], c=np.arange(len(coords)), cmap='twilight')
        for label, xyz in zip(projection.labels, coords):
            ax.text(*xyz, str(label), fontsize=5)
        evr = ', '.join(f'{v:.2f}' for v in projection.explained_variance_ratio)
        ax.set_title(f'{name} ({evr})', fontsize=7)
        if name == 'hour':
            neighbor, antipode = hour_neighbor_contrast(coords)
            print(f'{exp_dir} hour neighbor:{neighbor:.3e} antipode:{antipode:.3e}')
    plt.savefig(join(get_output_dir(), 'embeddings.pdf'), bbox_inches='tight')


if __name__ == '__main__':
    grids = sys.argv[1:] or ['long_term']
    df = gather([join(get_output_dir(), grid) for grid in grids])
    print(seed_table(df))
    if (df['case'] > 0).any():
        plot_ablation(df)
    best = df.query('case == 0').sort_values('mse')
    if len(best):
        plot_embeddings(best['exp_dir'].iloc[0])

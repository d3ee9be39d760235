"""PCA projections of learned embedding tables and their JSON export."""
import json
import logging
import os
from typing import List, NamedTuple, Optional

import numpy as np

from indexnet.embedding import ChannelTable, TimestampTables
from indexnet.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

RANK_TOL = 1e-12


class ProjectionResult(NamedTuple):
    labels: List
    coords: np.ndarray  # rows x k
    explained_variance_ratio: np.ndarray  # k
    components: np.ndarray  # k x D
    mean: np.ndarray  # D

    def reconstruct(self):
        return self.coords @ self.components + self.mean


def pca_project(rows, k=3, labels=None) -> ProjectionResult:
    """Project centered rows on the top-k eigenvectors of their D x D covariance.

    Components are signed so that their first nonzero coordinate is positive. Directions
    beyond the rank of the rows are zero, with zero variance ratio.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise ConfigError(f'PCA needs at least 2 rows, got shape {rows.shape}')
    n, d = rows.shape
    if not 1 <= k <= d:
        raise ConfigError(f'PCA needs 1 <= k <= D, got k={k}, D={d}')
    mean = rows.mean(axis=0)
    centered = rows - mean
    cov = centered.T @ centered / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:k]
    eigvals, components = eigvals[order], eigvecs[:, order].T.copy()
    total = max(np.trace(cov), 0.)
    for i in range(k):
        if eigvals[i] <= RANK_TOL * total:
            eigvals[i] = 0.
            components[i] = 0.
            continue
        nonzero = np.flatnonzero(np.abs(components[i]) > RANK_TOL)
        if components[i, nonzero[0]] < 0:
            components[i] *= -1
    evr = eigvals / total if total > 0 else np.zeros(k)
    coords = centered @ components.T
    if labels is None:
        labels = list(range(n))
    return ProjectionResult(list(labels), coords, evr, components, mean)


def table_labels(name, n_rows, freq_minutes=60):
    if name == 'minute':
        return [i * freq_minutes for i in range(n_rows)]
    if name == 'identity':
        return list(range(1, n_rows + 1))
    return list(range(n_rows))


def embedding_documents(tables: Optional[TimestampTables], channel_table: Optional[ChannelTable], k=3):
    named_rows = {}
    if tables is not None:
        for name in tables.active_tables():
            named_rows[name] = tables.tables[name]
    if channel_table is not None:
        named_rows['identity'] = channel_table.weight
    freq = tables.freq_minutes if tables is not None else 60
    for name, table in named_rows.items():
        rows = table.detach().cpu().numpy()
        labels = table_labels(name, len(rows), freq)
        if len(rows) < 2:
            logger.warning(f'Table {name} has a single row: no projection')
            pca = None
        else:
            projection = pca_project(rows, k=min(k, rows.shape[1]), labels=labels)
            pca = dict(coords=projection.coords.tolist(), evr=projection.explained_variance_ratio.tolist())
        yield name, dict(table=name, dim=int(rows.shape[1]), labels=labels, rows=rows.tolist(), pca=pca)


def export_embeddings(tables, channel_table, path, k=3):
    """Write one `<table>.json` per active table into the directory `path`."""
    try:
        os.makedirs(path, exist_ok=True)
        written = []
        for name, document in embedding_documents(tables, channel_table, k=k):
            filename = os.path.join(path, f'{name}.json')
            with open(filename, 'w') as f:
                json.dump(document, f)
            written.append(filename)
    except OSError as e:
        raise DataError(f'Cannot write embeddings to {path}: {e}')
    logger.info(f'Exported {len(written)} embedding tables to {path}')
    return written


def mean_distance(coords, pairs):
    coords = np.asarray(coords)
    return float(np.mean([np.linalg.norm(coords[i] - coords[j]) for i, j in pairs]))


def hour_neighbor_contrast(coords):
    """Mean distance between adjacent hours, and between hours 12 apart."""
    n = len(coords)
    neighbors = [(h, (h + 1) % n) for h in range(n)]
    antipodes = [(h, (h + n // 2) % n) for h in range(n)]
    return mean_distance(coords, neighbors), mean_distance(coords, antipodes)

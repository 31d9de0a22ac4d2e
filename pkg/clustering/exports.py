"""
Plot-ready artifacts: long-format CSV files for paths, labels and selection
scores, dendrogram JSON and Newick, JSON reports and the run manifest.
"""
import logging
import platform
from pathlib import Path
from typing import List

import django
import numpy as np
import pandas as pd
import rest_framework
import scipy
import sklearn
from django.conf import settings
from rest_framework.renderers import JSONRenderer

from clustering.path import ClusterPath, Dendrogram
from clustering.selection import SelectionReport
from clustering.serializers import SelectionReportSerializer

logger = logging.getLogger('clustering')


def _float_format() -> str:
    return settings.SONCLUSTER['FLOAT_FORMAT']


def _plain(value):
    """
    numpy scalars and arrays to the JSON-compatible Python equivalents
    """
    if isinstance(value, dict):
        return {str(key): _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def render_json(data) -> bytes:
    """
    Strict JSON; NaN or infinity raise ValueError
    """
    return JSONRenderer().render(_plain(data), renderer_context={'indent': 2})


def write_json(data, path) -> Path:
    path = Path(path)
    path.write_bytes(render_json(data) + b'\n')
    return path


def path_frame(path: ClusterPath) -> pd.DataFrame:
    """
    One row per (gamma, node, dim)
    """
    frames = []
    for snapshot in path:
        U = np.asarray(snapshot.U)
        p, n = U.shape
        frames.append(pd.DataFrame({
            'gamma': np.full(p * n, snapshot.gamma),
            'node': np.tile(np.arange(n), p),
            'dim': np.repeat(np.arange(p), n),
            'value': U.ravel(),
        }))
    if not frames:
        return pd.DataFrame(columns=['gamma', 'node', 'dim', 'value'])
    return pd.concat(frames, ignore_index=True)


def labels_frame(path: ClusterPath) -> pd.DataFrame:
    frames = [pd.DataFrame({
        'gamma': np.full(snapshot.partition.n, snapshot.gamma),
        'node': np.arange(snapshot.partition.n),
        'cluster': snapshot.partition.labels,
    }) for snapshot in path]
    if not frames:
        return pd.DataFrame(columns=['gamma', 'node', 'cluster'])
    return pd.concat(frames, ignore_index=True)


def write_path_csv(path: ClusterPath, file) -> Path:
    path_frame(path).to_csv(file, index=False, float_format=_float_format())
    return Path(file)


def write_labels_csv(path: ClusterPath, file) -> Path:
    labels_frame(path).to_csv(file, index=False, float_format=_float_format())
    return Path(file)


def write_dendrogram(dendrogram: Dendrogram, json_file, newick_file) -> List[Path]:
    write_json(dendrogram.to_json(), json_file)
    Path(newick_file).write_text(dendrogram.newick(_float_format()) + '\n')
    return [Path(json_file), Path(newick_file)]


def write_selection(report: SelectionReport, csv_file, json_file) -> List[Path]:
    pd.DataFrame(report.rows(), columns=['gamma', 'score', 'K']).to_csv(csv_file, index=False,
                                                                        float_format=_float_format())
    write_json(SelectionReportSerializer(report).data, json_file)
    return [Path(csv_file), Path(json_file)]


def versions() -> dict:
    return {
        'python': platform.python_version(),
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'scikit-learn': sklearn.__version__,
        'pandas': pd.__version__,
        'django': django.get_version(),
        'djangorestframework': rest_framework.VERSION,
    }


def write_manifest(config: dict, artifacts: List[Path], file) -> Path:
    """
    Everything needed to rerun: the configuration echo, seed and package
    versions. No timestamps, reruns are byte-identical.
    """
    manifest = {
        'config': config,
        'seed': config.get('seed'),
        'versions': versions(),
        'artifacts': sorted(Path(artifact).name for artifact in artifacts),
    }
    write_json(manifest, file)
    logger.info('Exports - manifest with %i artifacts written to %s' % (len(artifacts), file))
    return Path(file)

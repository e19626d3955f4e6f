"""
Output files of an experiment run:

    metrics.csv      one row per (defense, round)
    attack.csv       one row per (view, trial, iteration)
    *.pgm            binary greyscale images (P5, maxval 255)
    manifest.json    config snapshot, summaries and byte accounting

Everything is written into a scratch directory next to the output
directory and moved into place at the end, manifest last, so a failed
run never leaves a partial manifest behind.
"""

import json
import logging
import os
import shutil
import tempfile
from contextlib import contextmanager

import numpy as np
import pandas as pd


log = logging.getLogger(__name__)

TOOL_NAME = 'fedquant'
TOOL_VERSION = '0.1.0'

METRICS_COLUMNS = ['defense', 'round', 'clients', 'accuracy', 'loss', 'client_loss',
                   'upstream_bytes', 'upstream_payload_bytes', 'downstream_bytes', 'downstream_payload_bytes']
ATTACK_COLUMNS = ['view', 'trial', 'iteration', 'match_loss', 'mse', 'psnr']
FLOAT_FORMAT = '%.8g'

MANIFEST_NAME = 'manifest.json'


def write_csv(path, rows, columns):
    """Fixed header row and column order, even for zero rows."""
    df = pd.DataFrame(rows, columns=columns)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    return len(df)


def write_metrics_csv(path, rows):
    return write_csv(path, rows, METRICS_COLUMNS)


def write_attack_csv(path, rows):
    return write_csv(path, rows, ATTACK_COLUMNS)


def read_csv(path):
    return pd.read_csv(path, dtype={'clients': str})


def to_image(x):
    """(C, H, W), (H, W) or flat input -> 2-D uint8 image, channels side by side."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim == 3:
        x = np.concatenate(list(x), axis=1)
    if x.ndim != 2:
        raise ValueError(f'cannot render an input of shape {x.shape}')
    return np.rint(np.clip(x, 0.0, 1.0) * 255).astype(np.uint8)


def write_pgm(path, x):
    img = to_image(x)
    h, w = img.shape
    with open(path, 'wb') as fh:
        fh.write(f'P5\n{w} {h}\n255\n'.encode('ascii'))
        fh.write(img.tobytes())


def read_pgm(path):
    """Read a P5 file written by write_pgm; returns a uint8 (H, W) array."""
    with open(path, 'rb') as fh:
        data = fh.read()
    parts = data.split(b'\n', 3)
    if len(parts) < 4 or parts[0] != b'P5':
        raise ValueError(f'{path}: not a binary PGM')
    w, h = (int(v) for v in parts[1].split())
    if int(parts[2]) != 255:
        raise ValueError(f'{path}: unsupported maxval {parts[2]!r}')
    pixels = np.frombuffer(parts[3], dtype=np.uint8)
    if pixels.size != w * h:
        raise ValueError(f'{path}: expected {w * h} pixels, got {pixels.size}')
    return pixels.reshape(h, w)


def dump_manifest(manifest):
    return json.dumps(manifest, indent=2, sort_keys=False) + '\n'


def write_manifest(path, manifest):
    with open(path, 'w', encoding='utf-8') as fh:
        fh.write(dump_manifest(manifest))


def load_manifest(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f'manifest not found: {path}')
    with open(path, 'r', encoding='utf-8') as fh:
        return json.load(fh)


@contextmanager
def staging_dir(out_dir):
    """Yield a scratch directory; on success move its files into out_dir.

    The manifest is moved last.  On error the scratch directory is removed
    and out_dir is left as it was.
    """
    out_dir = os.path.abspath(out_dir)
    parent = os.path.dirname(out_dir)
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix='.staging-', dir=parent)
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    os.makedirs(out_dir, exist_ok=True)
    names = sorted(os.listdir(tmp), key=lambda n: n == MANIFEST_NAME)
    for name in names:
        os.replace(os.path.join(tmp, name), os.path.join(out_dir, name))
    shutil.rmtree(tmp, ignore_errors=True)
    log.info('wrote %d files to %s', len(names), out_dir)

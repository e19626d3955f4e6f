import logging
import os
from dataclasses import dataclass, field

import numpy as np

from nn.params import Batch
from parsers.cifar import parse_cifar_batch
from parsers.detect import DatasetFormatError, detect_format
from parsers.idx import parse_idx_pair
from data.synthetic import make_blobs


log = logging.getLogger(__name__)

DEFAULT_MAX_ITEMS = 0  # 0 = load everything

IDX_FILES = {
    'train': ('train-images-idx3-ubyte', 'train-labels-idx1-ubyte'),
    'test': ('t10k-images-idx3-ubyte', 't10k-labels-idx1-ubyte'),
}
CIFAR_TRAIN_FILES = tuple(f'data_batch_{i}.bin' for i in range(1, 6))
CIFAR_TEST_FILE = 'test_batch.bin'


@dataclass(frozen=True)
class Dataset:
    """Train/test split with pixels scaled to [0, 1] and integer labels."""
    name: str
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.train_x) == 0:
            raise DatasetFormatError(f'{self.name}: empty training split')
        if len(self.test_x) == 0:
            raise DatasetFormatError(f'{self.name}: empty test split')
        if self.train_x.shape[1:] != self.test_x.shape[1:]:
            raise DatasetFormatError(f'{self.name}: train inputs {self.train_x.shape[1:]} and test inputs '
                                     f'{self.test_x.shape[1:]} differ in shape')
        for split, y in (('train', self.train_y), ('test', self.test_y)):
            if y.size and (y.min() < 0 or y.max() >= self.classes):
                raise DatasetFormatError(f'{self.name}: {split} labels outside [0, {self.classes})')
        for split, x in (('train', self.train_x), ('test', self.test_x)):
            if x.min() < 0 or x.max() > 1:
                raise DatasetFormatError(f'{self.name}: {split} pixels outside [0, 1]')

    @property
    def input_shape(self):
        return tuple(int(d) for d in self.train_x.shape[1:])

    def train_batch(self):
        return Batch.of(self.train_x, self.train_y)

    def test_batch(self):
        return Batch.of(self.test_x, self.test_y)

    def to_dict(self):
        return {
            'name': self.name,
            'train': int(len(self.train_y)),
            'test': int(len(self.test_y)),
            'input_shape': list(self.input_shape),
            'classes': self.classes,
            **self.meta,
        }


def _find(directory, stem):
    for name in (stem, stem + '.gz'):
        p = os.path.join(directory, name)
        if os.path.isfile(p):
            return p
    # some mirrors rename idx3-ubyte to idx3.ubyte
    alt = stem.replace('-idx', '.idx').replace('-ubyte', '.ubyte')
    for name in (alt, alt + '.gz'):
        p = os.path.join(directory, name)
        if os.path.isfile(p):
            return p
    raise FileNotFoundError(f'{stem} not found in {directory}')


def _load_idx(path, name='idx', classes=10, max_train=DEFAULT_MAX_ITEMS, max_test=DEFAULT_MAX_ITEMS,
              train_images=None, train_labels=None, test_images=None, test_labels=None):
    files = {
        'train': (train_images or _find(path, IDX_FILES['train'][0]),
                  train_labels or _find(path, IDX_FILES['train'][1])),
        'test': (test_images or _find(path, IDX_FILES['test'][0]),
                 test_labels or _find(path, IDX_FILES['test'][1])),
    }
    for images, labels in files.values():
        if detect_format(images) != 'idx-images':
            raise DatasetFormatError(f'{images}: not an IDX image file')
        if detect_format(labels) != 'idx-labels':
            raise DatasetFormatError(f'{labels}: not an IDX label file')

    train_x, train_y = parse_idx_pair(*files['train'], max_items=max_train)
    test_x, test_y = parse_idx_pair(*files['test'], max_items=max_test)
    meta = {'format': 'idx', 'truncated': bool(max_train or max_test)}
    return Dataset(name, train_x, train_y, test_x, test_y, int(classes), meta)


def _load_cifar(path, name='cifar10', classes=10, max_train=DEFAULT_MAX_ITEMS, max_test=DEFAULT_MAX_ITEMS):
    train_files = [os.path.join(path, f) for f in CIFAR_TRAIN_FILES if os.path.isfile(os.path.join(path, f))]
    if not train_files:
        raise FileNotFoundError(f'no data_batch_*.bin files in {path}')
    xs, ys = [], []
    remaining = max_train
    for f in train_files:
        x, y = parse_cifar_batch(f, max_items=remaining)
        xs.append(x)
        ys.append(y)
        if max_train:
            remaining -= len(y)
            if remaining <= 0:
                break
    test_x, test_y = parse_cifar_batch(os.path.join(path, CIFAR_TEST_FILE), max_items=max_test)
    meta = {'format': 'cifar-bin', 'truncated': bool(max_train or max_test)}
    return Dataset(name, np.concatenate(xs), np.concatenate(ys), test_x, test_y, int(classes), meta)


def _load_synthetic(path=None, name='synthetic', classes=10, dim=64, n=400, n_test=None, seed=0, spread=0.15):
    n_test = n_test if n_test is not None else max(int(n) // 4, int(classes))
    train_x, train_y, test_x, test_y = make_blobs(classes=int(classes), dim=int(dim), n_train=int(n),
                                                  n_test=int(n_test), seed=int(seed), spread=float(spread))
    meta = {'format': 'synthetic', 'seed': int(seed), 'spread': float(spread)}
    return Dataset(name, train_x, train_y, test_x, test_y, int(classes), meta)


LOADER_MAP = {
    'idx': _load_idx,
    'cifar-bin': _load_cifar,
    'synthetic': _load_synthetic,
}


def detect_dataset_kind(path):
    """Guess 'idx' or 'cifar-bin' for a dataset directory."""
    if not path or not os.path.isdir(path):
        return 'unknown'
    for entry in sorted(os.listdir(path)):
        fmt = detect_format(os.path.join(path, entry))
        if fmt == 'cifar-bin':
            return 'cifar-bin'
        if fmt.startswith('idx'):
            return 'idx'
    return 'unknown'


def load_dataset(kind, path=None, **params):
    """Load a dataset by kind ('idx', 'cifar-bin', 'synthetic' or 'auto').

    File-backed kinds read from the directory ``path``; synthetic data is
    generated from ``params`` alone.  Raises DatasetFormatError on malformed
    files and FileNotFoundError on missing ones.
    """
    if kind == 'auto':
        kind = detect_dataset_kind(path)
    loader = LOADER_MAP.get(kind)
    if not loader:
        raise DatasetFormatError(f'no loader for dataset kind: {kind}')
    if kind != 'synthetic' and not (path and os.path.isdir(path)):
        raise FileNotFoundError(f'dataset directory not found: {path}')

    dataset = loader(path, **params)
    log.info('loaded %s dataset %s: %d train / %d test, input %s, %d classes',
             kind, dataset.name, len(dataset.train_y), len(dataset.test_y),
             dataset.input_shape, dataset.classes)
    return dataset

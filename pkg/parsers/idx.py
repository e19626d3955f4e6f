"""
IDX (MNIST / Fashion-MNIST) parser.

    [offset] [type]          [value]
    0000     32 bit integer  0x00000803 (2051) images | 0x00000801 (2049) labels
    0004     32 bit integer  number of items
    0008     32 bit integer  rows      (images only)
    0012     32 bit integer  columns   (images only)
    ....     unsigned byte   pixels / labels

All integers are big-endian.
"""

import struct

import numpy as np

from parsers.detect import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, DatasetFormatError, open_binary


def parse_idx_images(file_path, max_items=0):
    """Return uint8 images of shape (count, rows, cols)."""
    with open_binary(file_path) as f:
        header = f.read(16)
        if len(header) < 16:
            raise DatasetFormatError(f'{file_path}: truncated header ({len(header)} of 16 bytes)')
        magic, count, rows, cols = struct.unpack('>IIII', header)
        if magic != IDX_IMAGES_MAGIC:
            raise DatasetFormatError(f'{file_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}')
        n = min(count, max_items) if max_items else count
        need = n * rows * cols
        data = f.read(need)
    if len(data) < need:
        raise DatasetFormatError(f'{file_path}: truncated file, expected {need} pixel bytes for {n} images, '
                                 f'got {len(data)}')
    return np.frombuffer(data, dtype=np.uint8).reshape(n, rows, cols), count


def parse_idx_labels(file_path, max_items=0):
    """Return uint8 labels of shape (count,)."""
    with open_binary(file_path) as f:
        header = f.read(8)
        if len(header) < 8:
            raise DatasetFormatError(f'{file_path}: truncated header ({len(header)} of 8 bytes)')
        magic, count = struct.unpack('>II', header)
        if magic != IDX_LABELS_MAGIC:
            raise DatasetFormatError(f'{file_path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}')
        n = min(count, max_items) if max_items else count
        data = f.read(n)
    if len(data) < n:
        raise DatasetFormatError(f'{file_path}: truncated file, expected {n} labels, got {len(data)}')
    return np.frombuffer(data, dtype=np.uint8).copy(), count


def parse_idx_pair(images_path, labels_path, max_items=0):
    """Images scaled to [0, 1] with a channel axis, plus int64 labels."""
    images, image_count = parse_idx_images(images_path, max_items)
    labels, label_count = parse_idx_labels(labels_path, max_items)
    if image_count != label_count:
        raise DatasetFormatError(f'count mismatch: {images_path} has {image_count} images, '
                                 f'{labels_path} has {label_count} labels')
    x = (images.astype(np.float32) / 255.0)[:, None, :, :]
    return x, labels.astype(np.int64)

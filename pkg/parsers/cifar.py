import numpy as np

from parsers.detect import CIFAR_RECORD_BYTES, DatasetFormatError, open_binary


def parse_cifar_batch(file_path, max_items=0):
    """Parse a CIFAR-10 binary batch: 3073-byte records (label + 3x32x32 pixels).

    Returns float32 images in [0, 1] of shape (n, 3, 32, 32) and int64 labels.
    """
    with open_binary(file_path) as f:
        data = f.read()

    full, rest = divmod(len(data), CIFAR_RECORD_BYTES)
    if rest:
        raise DatasetFormatError(f'{file_path}: truncated record at index {full} '
                                 f'({rest} of {CIFAR_RECORD_BYTES} bytes)')
    n = min(full, max_items) if max_items else full
    records = np.frombuffer(data, dtype=np.uint8, count=n * CIFAR_RECORD_BYTES).reshape(n, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise DatasetFormatError(f'{file_path}: label {labels[bad]} out of range at index {bad}')
    images = records[:, 1:].reshape(n, 3, 32, 32).astype(np.float32) / 255.0
    return images, labels

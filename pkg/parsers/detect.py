import gzip
import os


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073


class DatasetFormatError(ValueError):
    """A dataset file is malformed (bad magic, truncation, count mismatch)."""


def open_binary(path):
    """Open a dataset file, transparently gunzipping *.gz files."""
    if str(path).lower().endswith('.gz'):
        return gzip.open(path, 'rb')
    return open(path, 'rb')


def detect_format(file_path):
    """Detect the format of a dataset file.

    Returns one of: 'idx-images', 'idx-labels', 'cifar-bin', 'unknown'
    """
    if not os.path.isfile(file_path):
        return 'unknown'

    try:
        with open_binary(file_path) as f:
            head = f.read(4)
    except OSError:
        return 'unknown'

    if len(head) == 4:
        magic = int.from_bytes(head, 'big')
        if magic == IDX_IMAGES_MAGIC:
            return 'idx-images'
        if magic == IDX_LABELS_MAGIC:
            return 'idx-labels'

    # CIFAR binaries carry no header; fall back on extension and record size
    name = os.path.basename(file_path).lower()
    if name.endswith('.bin'):
        size = os.path.getsize(file_path)
        if size and size % CIFAR_RECORD_BYTES == 0:
            return 'cifar-bin'
        if 'batch' in name:
            return 'cifar-bin'

    return 'unknown'

from collections import Counter


def _histogram(labels):
    counts = Counter(int(y) for y in labels)
    return {str(k): counts[k] for k in sorted(counts)}


def compute_dataset_stats(dataset, shards=None):
    """Class balance of each split and, when shards are given, of each client.

    Returns a JSON-serializable dict.
    """
    train_counts = Counter(int(y) for y in dataset.train_y)
    stats = {
        'name': dataset.name,
        'train_count': int(len(dataset.train_y)),
        'test_count': int(len(dataset.test_y)),
        'input_shape': list(dataset.input_shape),
        'classes': dataset.classes,
        'train_labels': _histogram(dataset.train_y),
        'test_labels': _histogram(dataset.test_y),
        'top_classes': {str(k): v for k, v in train_counts.most_common(5)},
        'balance': (min(train_counts.values()) / max(train_counts.values())) if train_counts else 0.0,
    }
    if shards is not None:
        stats['clients'] = [
            {'client': i, 'size': int(len(idx)), 'labels': _histogram(dataset.train_y[idx])}
            for i, idx in enumerate(shards)
        ]
    return stats


def format_dataset_stats(stats):
    """Short human-readable lines for the CLI."""
    lines = [f'{stats["name"]}: {stats["train_count"]} train / {stats["test_count"]} test, '
             f'input {tuple(stats["input_shape"])}, {stats["classes"]} classes, '
             f'class balance {stats["balance"]:.2f}']
    for c in stats.get('clients', []):
        labels = ' '.join(f'{k}:{v}' for k, v in c['labels'].items())
        lines.append(f'  client {c["client"]:>3}: {c["size"]:>6} samples  [{labels}]')
    return lines

import pandas as pd


REQUIRED_KEYS = ('tool', 'version', 'seed')


class ManifestError(ValueError):
    """Manifest is missing fields or has the wrong shape."""


def _check(manifest):
    if not isinstance(manifest, dict):
        raise ManifestError(f'manifest must be a JSON object, got {type(manifest).__name__}')
    missing = [k for k in REQUIRED_KEYS if k not in manifest]
    if missing:
        raise ManifestError(f'manifest is missing {", ".join(missing)}')
    for k in ('rounds', 'final', 'attacks', 'bytes', 'search_space'):
        if not isinstance(manifest.get(k, {}), dict):
            raise ManifestError(f'manifest field {k!r} must be an object')


def _table(rows, columns):
    df = pd.DataFrame(rows, columns=columns)
    return df.to_string(index=False, float_format=lambda v: f'{v:.4f}')


def accuracy_lines(manifest):
    rounds = manifest.get('rounds', {})
    if not any(rounds.values()):
        return ['accuracy', '  no rounds']
    rows = []
    for defense, recs in rounds.items():
        if not recs:
            continue
        last = recs[-1]
        rows.append({'defense': defense, 'rounds': len(recs), 'accuracy': last['accuracy'],
                     'loss': last['loss'], 'client_loss': last['client_loss']})
    return ['accuracy'] + ['  ' + line for line in
                           _table(rows, ['defense', 'rounds', 'accuracy', 'loss', 'client_loss']).splitlines()]


def attack_lines(manifest):
    attacks = manifest.get('attacks', {})
    if not attacks:
        return ['attacks', '  no attacks']
    rows = [{'view': view, 'trials': s['trials'], 'recovered': s['successes'],
             'median_mse': s['median_mse'], 'median_psnr': s['median_psnr']}
            for view, s in attacks.items()]
    return ['attacks'] + ['  ' + line for line in
                          _table(rows, ['view', 'trials', 'recovered', 'median_mse', 'median_psnr']).splitlines()]


def byte_lines(manifest):
    b = manifest.get('bytes', {})
    lines = ['bytes']
    per_update = b.get('per_update')
    if per_update:
        lines.append(f'  per update: float32 payload {per_update["float_payload_bytes"]} B, '
                     f'quantized payload {per_update["quantized_payload_bytes"]} B '
                     f'(ratio {per_update["payload_ratio"]:.2f}), '
                     f'messages {per_update["float_message_bytes"]} B vs {per_update["quantized_message_bytes"]} B '
                     f'(ratio {per_update["message_ratio"]:.2f})')
    totals = b.get('totals', {})
    if totals:
        rows = [{'defense': d, **t} for d, t in totals.items()]
        cols = ['defense', 'upstream_bytes', 'upstream_payload_bytes', 'downstream_bytes', 'downstream_payload_bytes']
        lines.extend('  ' + line for line in _table(rows, cols).splitlines())
    if len(lines) == 1:
        lines.append('  no byte accounting')
    return lines


def search_space_line(manifest):
    s = manifest.get('search_space')
    if not s:
        return 'search space: unknown'
    return f'search space: {s["value"]} (m^L = {s["modes"]}^{s["layers"]})'


def format_report(manifest):
    """Human-readable summary of a manifest; deterministic for equal manifests."""
    _check(manifest)
    try:
        lines = [f'{manifest["tool"]} {manifest["version"]}  preset={manifest.get("preset")}  '
                 f'seed={manifest["seed"]}']
        ds = manifest.get('dataset')
        if ds:
            lines.append(f'dataset: {ds.get("name")} ({ds.get("train_count")} train / {ds.get("test_count")} test)')
        lines += accuracy_lines(manifest)
        lines += attack_lines(manifest)
        lines += byte_lines(manifest)
        lines.append(search_space_line(manifest))
    except (KeyError, TypeError) as e:
        raise ManifestError(f'malformed manifest: {e!r}') from None
    return '\n'.join(lines) + '\n'


def report(manifest, out=None):
    """Print the summary to ``out`` (stdout by default) and return it."""
    text = format_report(manifest)
    print(text, end='', file=out)
    return text

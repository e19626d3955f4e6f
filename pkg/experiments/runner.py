import logging
import os

import numpy as np
from tqdm import tqdm

from attack.leakage import observe, run_attack
from data.loader import load_dataset
from data.stats import compute_dataset_stats, format_dataset_stats
from experiments import artifacts
from fl.server import make_clients, run_training
from nn.backprop import backward, init_params
from nn.model import build_model
from nn.params import Batch
from quant.gradset import attack_search_space, payload_bytes, quantize_set
from quant.policy import policy_from_config
from quant.wire import header_bytes, message_bytes


log = logging.getLogger(__name__)

TASKS = ('train', 'attack')
ABLATION_VIEWS = ('dequantized_correct', 'dequantized_wrong_mode')


def load_experiment_dataset(cfg):
    ds = dict(cfg.dataset)
    kind = ds.pop('kind', 'synthetic')
    path = ds.pop('path', None)
    if kind == 'synthetic':
        ds.setdefault('seed', cfg.seed)
    return load_dataset(kind, path, **ds)


def byte_summary(params, policy):
    """Per-update payload and message sizes, float32 versus the policy."""
    grads = params.as_grads()
    qg = quantize_set(grads, policy)
    float_payload, quant_payload = payload_bytes(grads), payload_bytes(qg)
    float_message, quant_message = message_bytes(grads), message_bytes(qg)
    return {
        'elements': params.num_elements(),
        'float_payload_bytes': float_payload,
        'quantized_payload_bytes': quant_payload,
        'header_bytes': header_bytes(qg),
        'float_message_bytes': float_message,
        'quantized_message_bytes': quant_message,
        'payload_ratio': float_payload / quant_payload,
        'message_ratio': float_message / quant_message,
    }


def run_train_suite(cfg, dataset, spec, progress=False):
    """FL training for each requested defense; returns (csv rows, rounds, final)."""
    rows, rounds, final = [], {}, {}
    for defense in cfg.experiment['defenses']:
        print(f'Training with defense={defense} ...')
        records, _ = run_training(cfg.fl.replace(defense=defense), dataset, spec, progress=progress)
        rows.extend({'defense': defense, **r.to_row()} for r in records)
        rounds[defense] = [r.to_dict() for r in records]
        if records:
            final[defense] = {'accuracy': records[-1].accuracy, 'loss': records[-1].loss,
                              'client_loss': records[-1].client_loss}
            print(f'  accuracy {records[-1].accuracy:.4f} after {len(records)} rounds')
    return rows, rounds, final


def attack_targets(cfg, dataset, trials):
    """One ground-truth batch per trial, drawn from the training split.

    Trial k's batch depends only on the seed and k, not on the trial count.
    """
    size = int(cfg.experiment['attack_batch'])
    for k, child in enumerate(np.random.SeedSequence(cfg.seed).spawn(trials)):
        idx = np.random.default_rng(child).choice(len(dataset.train_y), size=size, replace=False)
        yield k, Batch.of(dataset.train_x[idx], dataset.train_y[idx])


def run_attack_suite(cfg, dataset, spec, params, policy, views, out_dir, progress=False):
    """Attack each trial's update under every view; writes PGMs, returns (csv rows, summaries)."""
    trials = int(cfg.experiment['attack_trials'])
    rows = []
    per_view = {v: [] for v in views}
    for k, truth in tqdm(list(attack_targets(cfg, dataset, trials)), desc='attack', disable=not progress,
                         leave=False):
        grads = backward(spec, params, truth)
        artifacts.write_pgm(os.path.join(out_dir, f'truth_trial{k}.pgm'), _tile(truth.inputs))
        for view in views:
            result = run_attack(spec, params, observe(view, grads, policy), truth,
                                cfg.attack.replace(view=view, seed=cfg.attack.seed + k))
            artifacts.write_pgm(os.path.join(out_dir, f'{view}_trial{k}.pgm'), _tile(result.recovered))
            for it, (loss, mse, psnr) in enumerate(zip(result.loss_curve, result.mse_curve,
                                                       result.psnr_curve), start=1):
                rows.append({'view': view, 'trial': k, 'iteration': it,
                             'match_loss': loss, 'mse': mse, 'psnr': psnr})
            per_view[view].append(result.summary())

    summaries = {}
    for view, results in per_view.items():
        mses = [r['mse'] for r in results]
        hits = [r['iterations_to_success'] for r in results if r['success']]
        summaries[view] = {
            'trials': len(results),
            'successes': len(hits),
            'median_mse': float(np.median(mses)),
            'median_psnr': float(np.median([r['psnr'] for r in results])),
            'median_iterations_to_success': float(np.median(hits)) if hits else None,
            'divergences': int(sum(r['divergences'] for r in results)),
            'results': results,
        }
        print(f'  {view}: median MSE {summaries[view]["median_mse"]:.4f}, '
              f'{len(hits)}/{len(results)} recovered')
    return rows, summaries


def _tile(inputs):
    """Batch of inputs -> one image, samples side by side."""
    images = [artifacts.to_image(x) for x in inputs]
    return np.concatenate(images, axis=1).astype(np.float64) / 255.0


def run_experiment(cfg, out_dir, tasks=TASKS, views=None, progress=False):
    """Run the requested tasks and write every output atomically.

    Returns the manifest dict (also written to out_dir/manifest.json).
    """
    for t in tasks:
        if t not in TASKS:
            raise ValueError(f'unknown task {t!r}; choose from {TASKS}')
    views = list(views or cfg.experiment['attack_views'])

    print('Loading dataset...')
    dataset = load_experiment_dataset(cfg)
    spec = build_model(cfg.fl.model, dataset.input_shape, dataset.classes, **cfg.fl.model_options)
    params = init_params(spec, cfg.seed)
    policy = policy_from_config(params.keys(), cfg.policy)
    _, shards = make_clients(dataset, cfg.fl)
    print(f'  {dataset.name}: {len(dataset.train_y)} train / {len(dataset.test_y)} test, model {spec.name} '
          f'({spec.num_params()} parameters), policy {policy.name}')

    modes = int(cfg.experiment['modes'])
    layers = len(policy.layers())
    manifest = {
        'tool': artifacts.TOOL_NAME,
        'version': artifacts.TOOL_VERSION,
        'preset': cfg.preset,
        'seed': cfg.seed,
        'config': cfg.to_dict(),
        'policy': policy.to_dict(),
        'dataset': compute_dataset_stats(dataset, shards),
        'rounds': {},
        'final': {},
        'attacks': {},
        'bytes': {'per_update': byte_summary(params, policy), 'totals': {}},
        'search_space': {'modes': modes, 'layers': layers, 'value': attack_search_space(modes, layers)},
    }
    if 'train' in tasks:
        for line in format_dataset_stats(manifest['dataset']):
            print(line)

    with artifacts.staging_dir(out_dir) as tmp:
        if 'train' in tasks:
            rows, rounds, final = run_train_suite(cfg, dataset, spec, progress)
            artifacts.write_metrics_csv(os.path.join(tmp, 'metrics.csv'), rows)
            manifest['rounds'], manifest['final'] = rounds, final
            manifest['bytes']['totals'] = {
                d: {k: int(sum(r[k] for r in recs)) for k in
                    ('upstream_bytes', 'upstream_payload_bytes', 'downstream_bytes', 'downstream_payload_bytes')}
                for d, recs in rounds.items()
            }
        if 'attack' in tasks:
            print(f'Attacking {cfg.experiment["attack_trials"]} trials x {len(views)} views...')
            rows, summaries = run_attack_suite(cfg, dataset, spec, params, policy, views, tmp, progress)
            artifacts.write_attack_csv(os.path.join(tmp, 'attack.csv'), rows)
            manifest['attacks'] = summaries
        artifacts.write_manifest(os.path.join(tmp, artifacts.MANIFEST_NAME), manifest)
    return manifest

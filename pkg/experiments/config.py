"""
Experiment configuration documents and shipped presets.

A config document is JSON or YAML with the sections

    preset, description, seed, dataset, model, fl, policy, dp, attack, experiment

A document that names a ``preset`` is deep-merged over presets/<name>.yml;
its own keys win.  The merged document is then split into typed configs
(FLConfig, DPConfig, AttackConfig), each of which rejects unknown keys.
"""

import copy
import json
import os
from dataclasses import dataclass

import yaml

from attack.leakage import VIEWS, AttackConfig
from fl.config import DEFENSES, FLConfig
from privacy.dp import DPConfig


PRESETS_DIR = os.path.join(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
    'presets',
)

SECTIONS = ('preset', 'description', 'seed', 'dataset', 'model', 'fl', 'policy', 'dp', 'attack', 'experiment')

DEFAULT_EXPERIMENT = {
    'defenses': list(DEFENSES),
    'attack_views': list(VIEWS),
    'attack_trials': 5,
    'attack_batch': 1,
    'modes': 2,
}
MAX_ATTACK_BATCH = 4


class ExperimentConfigError(ValueError):
    """Malformed config document or unknown preset."""


# ---- documents ----

def deep_merge(base, override):
    """Recursive dict merge; values from ``override`` win, lists are replaced."""
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config_file(path):
    """Read a JSON or YAML config document (by extension)."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f'config file not found: {path}')
    with open(path, 'r', encoding='utf-8') as fh:
        try:
            if path.lower().endswith('.json'):
                doc = json.load(fh)
            else:
                doc = yaml.safe_load(fh) or {}
        except (json.JSONDecodeError, yaml.YAMLError) as e:
            raise ExperimentConfigError(f'{path}: cannot parse config: {e}') from None
    if not isinstance(doc, dict):
        raise ExperimentConfigError(f'{path}: config must be a mapping, got {type(doc).__name__}')
    return doc


def save_config_file(doc, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as fh:
        if path.lower().endswith('.json'):
            json.dump(doc, fh, indent=2)
        else:
            yaml.dump(doc, fh, default_flow_style=False, sort_keys=False, allow_unicode=True)


# ---- presets ----

def preset_path(name, presets_dir=None):
    return os.path.join(presets_dir or PRESETS_DIR, f'{name}.yml')


def load_preset(name, presets_dir=None):
    """Load a preset document; raises ExperimentConfigError for unknown names."""
    path = preset_path(name, presets_dir)
    if not os.path.isfile(path):
        raise ExperimentConfigError(f'unknown preset {name!r}; available: {", ".join(list_presets(presets_dir))}')
    with open(path, 'r', encoding='utf-8') as fh:
        doc = yaml.safe_load(fh) or {}
    doc.setdefault('preset', name)
    return doc


def list_presets(presets_dir=None):
    d = presets_dir or PRESETS_DIR
    if not os.path.isdir(d):
        return []
    return sorted(os.path.splitext(f)[0] for f in os.listdir(d) if f.endswith('.yml'))


def describe_presets(presets_dir=None):
    """[(name, description)] for every shipped preset."""
    out = []
    for name in list_presets(presets_dir):
        doc = load_preset(name, presets_dir)
        out.append((name, str(doc.get('description', '')).strip()))
    return out


# ---- typed view ----

@dataclass(frozen=True)
class ExperimentConfig:
    doc: dict
    fl: FLConfig
    dp: DPConfig
    attack: AttackConfig
    experiment: dict

    @property
    def preset(self):
        return self.doc.get('preset')

    @property
    def seed(self):
        return int(self.doc.get('seed', 0))

    @property
    def dataset(self):
        return self.doc.get('dataset', {'kind': 'synthetic'})

    @property
    def policy(self):
        return self.doc.get('policy', 'mixed')

    def to_dict(self):
        return copy.deepcopy(self.doc)


def _section(doc, name):
    value = doc.get(name) or {}
    if not isinstance(value, dict):
        raise ExperimentConfigError(f'section {name!r} must be a mapping, got {type(value).__name__}')
    return value


def build_config(doc):
    """Split a merged document into typed configs."""
    unknown = set(doc) - set(SECTIONS)
    if unknown:
        raise ExperimentConfigError(f'unknown config sections: {sorted(unknown)}')
    doc = copy.deepcopy(doc)
    seed = int(doc.setdefault('seed', 0))
    if seed < 0:
        raise ExperimentConfigError(f'seed must be >= 0, got {seed}')
    doc.setdefault('dataset', {'kind': 'synthetic'})
    doc.setdefault('policy', 'mixed')

    model = _section(doc, 'model')
    dp = DPConfig.from_dict(_section(doc, 'dp'))
    fl_doc = dict(_section(doc, 'fl'))
    for k in ('dp', 'policy', 'model', 'model_options', 'seed'):
        if k in fl_doc:
            raise ExperimentConfigError(f'fl.{k} is set by its own top-level section')
    fl_doc.update(dp=dp, policy=doc['policy'], seed=seed,
                  model=model.get('name', 'mlp-tiny'), model_options=dict(model.get('options') or {}))
    fl = FLConfig.from_dict(fl_doc)

    attack_doc = dict(_section(doc, 'attack'))
    attack_doc.setdefault('seed', seed)
    attack = AttackConfig.from_dict(attack_doc)

    experiment = dict(DEFAULT_EXPERIMENT)
    experiment.update(_section(doc, 'experiment'))
    unknown = set(experiment) - set(DEFAULT_EXPERIMENT)
    if unknown:
        raise ExperimentConfigError(f'unknown experiment keys: {sorted(unknown)}')
    for d in experiment['defenses']:
        if d not in DEFENSES:
            raise ExperimentConfigError(f'unknown defense {d!r}; choose from {DEFENSES}')
    for v in experiment['attack_views']:
        if v not in VIEWS:
            raise ExperimentConfigError(f'unknown attack view {v!r}; choose from {VIEWS}')
    if int(experiment['attack_trials']) < 1:
        raise ExperimentConfigError('attack_trials must be >= 1')
    if not 1 <= int(experiment['attack_batch']) <= MAX_ATTACK_BATCH:
        raise ExperimentConfigError(f'attack_batch must lie in [1, {MAX_ATTACK_BATCH}]')
    if int(experiment['modes']) < 1:
        raise ExperimentConfigError('modes must be >= 1')
    doc['experiment'] = experiment
    return ExperimentConfig(doc, fl, dp, attack, experiment)


def resolve_config(config_path=None, preset=None, seed=None, presets_dir=None):
    """Config file and/or preset name plus a seed override -> ExperimentConfig."""
    doc = load_config_file(config_path) if config_path else {}
    name = preset or doc.get('preset')
    if name:
        doc = deep_merge(load_preset(name, presets_dir), doc)
        doc['preset'] = name
    if seed is not None:
        doc['seed'] = int(seed)
    return build_config(doc)

"""
Per-layer mixed-precision policies.

A policy assigns (bits, mode) to every tensor of a ParamSet layout.  The
default mixed policy alternates by parameterized-layer ordinal:

    even ordinal -> (int8,  SCALED)
    odd ordinal  -> (int16, MIN_COMBINED)

Policies are distributed out-of-band (config), never inferred from data.
"""

from dataclasses import dataclass

from quant.codec import QuantMode, QuantizationError, type_bounds


class PolicyError(ValueError):
    """Policy does not cover a tensor, or covers one twice."""


@dataclass(frozen=True)
class PolicyEntry:
    layer_index: int
    role: str
    bits: int
    mode: QuantMode

    def to_dict(self):
        return {'layer': self.layer_index, 'role': self.role, 'bits': self.bits, 'mode': self.mode.name}


@dataclass(frozen=True)
class QuantPolicy:
    entries: tuple
    name: str = 'custom'

    def __post_init__(self):
        object.__setattr__(self, 'entries', tuple(self.entries))
        seen = set()
        for e in self.entries:
            key = (e.layer_index, e.role)
            if key in seen:
                raise PolicyError(f'policy covers layer {e.layer_index} {e.role} twice')
            seen.add(key)
            try:
                type_bounds(e.bits)
            except QuantizationError as err:
                raise PolicyError(f'layer {e.layer_index} {e.role}: {err}') from None

    def lookup(self, layer_index, role):
        for e in self.entries:
            if e.layer_index == layer_index and e.role == role:
                return e
        raise PolicyError(f'policy has no entry for layer {layer_index} {role}')

    def check_covers(self, keys):
        """keys: [(layer_index, role)]; each must be covered exactly once."""
        keys = list(keys)
        for layer_index, role in keys:
            self.lookup(layer_index, role)
        extra = set((e.layer_index, e.role) for e in self.entries) - set(keys)
        if extra:
            li, role = sorted(extra)[0]
            raise PolicyError(f'policy entry for layer {li} {role} matches no tensor')

    def layers(self):
        return sorted(set(e.layer_index for e in self.entries))

    def modes_used(self):
        return sorted(set(e.mode for e in self.entries))

    def to_dict(self):
        return {'name': self.name, 'entries': [e.to_dict() for e in self.entries]}


def _layer_ordinals(keys):
    order = []
    for layer_index, _ in keys:
        if layer_index not in order:
            order.append(layer_index)
    return {li: n for n, li in enumerate(order)}


def mixed_policy(keys, choices=((8, QuantMode.SCALED), (16, QuantMode.MIN_COMBINED))):
    """Cycle through ``choices`` by layer ordinal; weight and bias share a choice."""
    ordinals = _layer_ordinals(keys)
    entries = []
    for layer_index, role in keys:
        bits, mode = choices[ordinals[layer_index] % len(choices)]
        entries.append(PolicyEntry(layer_index, role, bits, QuantMode.parse(mode)))
    return QuantPolicy(entries, name='mixed')


def uniform_policy(keys, bits=8, mode=QuantMode.SCALED):
    mode = QuantMode.parse(mode)
    return QuantPolicy([PolicyEntry(li, role, bits, mode) for li, role in keys],
                       name=f'int{bits}-{mode.name.lower()}')


def policy_from_config(keys, cfg):
    """Build a policy for a layout from its config value.

    cfg may be a name ('mixed', 'int8', 'int16'), a dict
    {'kind': 'mixed'|'uniform', 'bits': ..., 'mode': ..., 'choices': [...]},
    or {'entries': [{'layer':, 'role':, 'bits':, 'mode':}, ...]}.
    """
    keys = list(keys)
    if cfg is None or cfg == 'mixed':
        return mixed_policy(keys)
    if cfg == 'int8':
        return uniform_policy(keys, 8, QuantMode.SCALED)
    if cfg == 'int16':
        return uniform_policy(keys, 16, QuantMode.SCALED)
    if not isinstance(cfg, dict):
        raise PolicyError(f'unknown policy {cfg!r}')

    if 'entries' in cfg:
        entries = []
        for item in cfg['entries']:
            try:
                entries.append(PolicyEntry(int(item['layer']), item['role'], int(item['bits']),
                                           QuantMode.parse(item['mode'])))
            except KeyError as e:
                raise PolicyError(f'policy entry missing field {e}') from None
        policy = QuantPolicy(entries, name=cfg.get('name', 'custom'))
        policy.check_covers(keys)
        return policy

    kind = cfg.get('kind', 'mixed')
    if kind == 'uniform':
        return uniform_policy(keys, int(cfg.get('bits', 8)), cfg.get('mode', 'SCALED'))
    if kind == 'mixed':
        choices = cfg.get('choices')
        if choices:
            choices = tuple((int(c['bits']), QuantMode.parse(c['mode'])) for c in choices)
            return mixed_policy(keys, choices)
        return mixed_policy(keys)
    raise PolicyError(f'unknown policy kind {kind!r}')

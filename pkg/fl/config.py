from dataclasses import asdict, dataclass, field, fields

from privacy.dp import DPConfig


DEFENSES = ('none', 'quantize', 'dp')
PARTITIONS = ('iid', 'dirichlet')


class ConfigError(ValueError):
    """Invalid federated-training configuration."""


@dataclass(frozen=True)
class FLConfig:
    """Federated training parameters.

    ``clients_per_round`` of None samples every client each round.
    ``policy`` is the raw policy config (a name or a dict); it is resolved
    against the model layout when training starts.
    """
    num_clients: int = 15
    clients_per_round: int = None
    local_epochs: int = 1
    batch_size: int = 16
    learning_rate: float = 0.1
    rounds: int = 20
    defense: str = 'quantize'
    policy: object = 'mixed'
    dp: DPConfig = field(default_factory=DPConfig)
    model: str = 'mlp-tiny'
    model_options: dict = field(default_factory=dict)
    partition: str = 'iid'
    dirichlet_alpha: float = 0.5
    workers: int = 1
    seed: int = 0

    @property
    def m(self):
        return self.num_clients if self.clients_per_round is None else self.clients_per_round

    @property
    def quantization(self):
        return self.defense == 'quantize'

    def validate(self):
        if self.num_clients < 1:
            raise ConfigError(f'num_clients must be >= 1, got {self.num_clients}')
        if not 1 <= self.m <= self.num_clients:
            raise ConfigError(f'clients_per_round must lie in [1, {self.num_clients}], got {self.m}')
        if self.local_epochs < 1:
            raise ConfigError(f'local_epochs must be >= 1, got {self.local_epochs}')
        if self.batch_size < 1:
            raise ConfigError(f'batch_size must be >= 1, got {self.batch_size}')
        if self.rounds < 0:
            raise ConfigError(f'rounds must be >= 0, got {self.rounds}')
        if not self.learning_rate > 0:
            raise ConfigError(f'learning_rate must be > 0, got {self.learning_rate}')
        if self.defense not in DEFENSES:
            raise ConfigError(f'unknown defense {self.defense!r}; choose one of {DEFENSES}')
        if self.partition not in PARTITIONS:
            raise ConfigError(f'unknown partition {self.partition!r}; choose one of {PARTITIONS}')
        if not self.dirichlet_alpha > 0:
            raise ConfigError(f'dirichlet_alpha must be > 0, got {self.dirichlet_alpha}')
        if self.workers < 1:
            raise ConfigError(f'workers must be >= 1, got {self.workers}')
        if self.defense == 'dp':
            self.dp.validate()
        return self

    def replace(self, **changes):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return type(self)(**d)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f'unknown fl keys: {sorted(unknown)}')
        if isinstance(d.get('dp'), dict):
            d['dp'] = DPConfig.from_dict(d['dp'])
        for k in ('num_clients', 'local_epochs', 'batch_size', 'rounds', 'workers', 'seed'):
            if k in d:
                d[k] = int(d[k])
        if d.get('clients_per_round') is not None:
            d['clients_per_round'] = int(d['clients_per_round'])
        for k in ('learning_rate', 'dirichlet_alpha'):
            if k in d:
                d[k] = float(d[k])
        return cls(**d).validate()

    def to_dict(self):
        d = asdict(self)
        d['clients_per_round'] = self.m
        return d

"""
Gaussian differential-privacy baseline.

Each transmitted client update is clipped to global L2 norm C and receives
i.i.d. N(0, sigma^2) noise per coordinate with the standard Gaussian
mechanism calibration

    sigma = C * sqrt(2 * ln(1.25 / delta)) / epsilon

The guarantee is per release (one round update of one client); there is no
cross-round accounting.
"""

import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from nn.params import GradSet


log = logging.getLogger(__name__)


class DPConfigError(ValueError):
    """Invalid (epsilon, delta, clip norm)."""


@dataclass(frozen=True)
class DPConfig:
    epsilon: float = 1.0
    delta: float = 1e-5
    clip_norm: float = 1.0

    def validate(self):
        if not self.epsilon > 0:
            raise DPConfigError(f'epsilon must be > 0, got {self.epsilon}')
        if not 0 < self.delta < 1:
            raise DPConfigError(f'delta must lie in (0, 1), got {self.delta}')
        if not self.clip_norm > 0:
            raise DPConfigError(f'clip_norm must be > 0, got {self.clip_norm}')
        return self

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d or {}) - known
        if unknown:
            raise DPConfigError(f'unknown dp keys: {sorted(unknown)}')
        return cls(**{k: float(v) for k, v in (d or {}).items()}).validate()

    def to_dict(self):
        return asdict(self)


def gaussian_sigma(cfg):
    cfg.validate()
    if np.isinf(cfg.epsilon):
        return 0.0
    return float(cfg.clip_norm * np.sqrt(2.0 * np.log(1.25 / cfg.delta)) / cfg.epsilon)


def clip_update(update, clip_norm):
    """Scale by min(1, C / ||update||_2), the norm taken over all tensors."""
    norm = update.l2_norm()
    if norm <= clip_norm or norm == 0:
        return update
    factor = np.float32(clip_norm / norm)
    clipped = update.map(lambda v: v * factor)
    # float32 rounding can leave the product a hair above C
    while clipped.l2_norm() > clip_norm:
        factor = np.nextafter(factor, np.float32(0))
        clipped = update.map(lambda v: v * factor)
    return clipped


def privatize(update, cfg, rng):
    """Clip then add Gaussian noise; deterministic for a given rng state."""
    sigma = gaussian_sigma(cfg)
    clipped = clip_update(update, cfg.clip_norm)
    if sigma == 0:
        return clipped
    noisy = clipped.map(lambda v: (v + rng.normal(0.0, sigma, size=v.shape)).astype(np.float32), cls=GradSet)
    log.debug('privatized update: norm %.4f -> clipped %.4f, sigma %.4f',
              update.l2_norm(), clipped.l2_norm(), sigma)
    return noisy

"""
Gradient-inversion attack.

The attacker holds the model (spec + parameters) and one observed update
and searches for an input whose gradient matches it:

    minimize_x  sum over tensors of ||backward(spec, params, (x, y)) - observed||^2

starting from seeded uniform noise in the [0, 1] pixel box.  The default
outer optimizer is projected gradient descent with Armijo backtracking,
which only ever accepts steps that lower the match loss.

What the attacker observes depends on the view:

    raw_float               the float32 update itself
    int_payload_as_float    integer payloads read as floats, no ranges
    dequantized_correct     decoded with the right mode and ranges
    dequantized_wrong_mode  decoded with the other mode's formula and the
                            tensor's true float range
"""

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from attack.metrics import reconstruction_metrics
from nn.backprop import backward, check_batch, grad_match_and_input_gradient
from nn.params import Batch
from quant.codec import QuantMode
from quant.gradset import dequantize_set, payloads_as_floats, quantize_set


log = logging.getLogger(__name__)

VIEWS = ('raw_float', 'int_payload_as_float', 'dequantized_correct', 'dequantized_wrong_mode')
LABEL_MODES = ('known', 'optimized')
OPTIMIZERS = ('gd', 'adam')
GRADIENT_METHODS = ('auto', 'finite_difference', 'analytic')

FD_PIXEL_LIMIT = 256
ARMIJO_C = 1e-4
MAX_HALVINGS = 40


class AttackConfigError(ValueError):
    """Invalid attack configuration."""


class AttackDivergedError(ValueError):
    """Every divergence retry produced a non-finite loss."""


class _Diverged(Exception):
    pass


@dataclass(frozen=True)
class AttackConfig:
    max_iterations: int = 300
    step_size: float = 0.1
    restarts: int = 1
    label_mode: str = 'known'
    view: str = 'raw_float'
    mse_max: float = 0.01
    psnr_min: float = 20.0
    optimizer: str = 'gd'
    gradient_method: str = 'auto'
    clamp_inputs: bool = True
    fd_step: float = 1e-3
    max_divergence_retries: int = 3
    seed: int = 0

    def validate(self):
        if self.max_iterations < 1:
            raise AttackConfigError(f'max_iterations must be >= 1, got {self.max_iterations}')
        if self.restarts < 1:
            raise AttackConfigError(f'restarts must be >= 1, got {self.restarts}')
        if not self.step_size > 0:
            raise AttackConfigError(f'step_size must be > 0, got {self.step_size}')
        if not (self.mse_max > 0 and self.psnr_min > 0):
            raise AttackConfigError(f'success thresholds must be positive, got mse_max={self.mse_max}, '
                                    f'psnr_min={self.psnr_min}')
        if not self.fd_step > 0:
            raise AttackConfigError(f'fd_step must be > 0, got {self.fd_step}')
        if self.max_divergence_retries < 0 or self.seed < 0:
            raise AttackConfigError('max_divergence_retries and seed must be >= 0')
        for name, value, allowed in (('label_mode', self.label_mode, LABEL_MODES),
                                     ('view', self.view, VIEWS),
                                     ('optimizer', self.optimizer, OPTIMIZERS),
                                     ('gradient_method', self.gradient_method, GRADIENT_METHODS)):
            if value not in allowed:
                raise AttackConfigError(f'unknown {name} {value!r}; choose one of {allowed}')
        return self

    def replace(self, **changes):
        d = asdict(self)
        d.update(changes)
        return type(self)(**d)

    @classmethod
    def from_dict(cls, d):
        types = {f.name: f.type for f in fields(cls)}
        unknown = set(d or {}) - set(types)
        if unknown:
            raise AttackConfigError(f'unknown attack keys: {sorted(unknown)}')
        return cls(**{k: types[k](v) for k, v in (d or {}).items()}).validate()

    def to_dict(self):
        return asdict(self)


@dataclass
class AttackResult:
    recovered: np.ndarray
    view: str
    loss_curve: list = field(default_factory=list)
    mse_curve: list = field(default_factory=list)
    psnr_curve: list = field(default_factory=list)
    mse: float = float('nan')
    psnr: float = 0.0
    iterations_to_success: int = None
    divergences: int = 0
    labels: np.ndarray = None

    @property
    def success(self):
        return self.iterations_to_success is not None

    @property
    def iterations(self):
        return len(self.loss_curve)

    def summary(self):
        return {
            'view': self.view,
            'iterations': self.iterations,
            'final_match_loss': self.loss_curve[-1] if self.loss_curve else None,
            'mse': self.mse,
            'psnr': self.psnr,
            'success': self.success,
            'iterations_to_success': self.iterations_to_success,
            'divergences': self.divergences,
        }


def gradient_match_loss(spec, params, dummy, target):
    """Sum over tensors of the squared L2 distance between the dummy's gradient and target."""
    target.check_layout(params)
    g = backward(spec, params, dummy)
    return float(sum(np.sum((a.value.astype(np.float64) - b.value.astype(np.float64)) ** 2)
                     for a, b in zip(g, target)))


def _central_difference(f, x, h):
    grad = np.zeros_like(x, dtype=np.float64)
    flat = grad.reshape(-1)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        flat[i] = (f(xp) - f(xm)) / (2 * h)
    return grad


def attack_gradient(spec, params, dummy, target, method='auto', h=1e-3):
    """d gradient_match_loss / d dummy inputs.

    'auto' uses central differences up to 256 input values and double
    backpropagation above that.
    """
    if method == 'auto':
        method = 'finite_difference' if dummy.inputs.size <= FD_PIXEL_LIMIT else 'analytic'
    if method == 'analytic':
        return grad_match_and_input_gradient(spec, params, dummy, target)[1]
    if method == 'finite_difference':
        target.check_layout(params)

        def f(x):
            return gradient_match_loss(spec, params, Batch(x, dummy.labels, dummy.soft_targets), target)
        return _central_difference(f, dummy.inputs, h)
    raise AttackConfigError(f'unknown gradient method {method!r}')


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def observe(view, grads, policy=None):
    """What an attacker with the given view sees of a float32 update."""
    if view == 'raw_float':
        return grads
    if view not in VIEWS:
        raise AttackConfigError(f'unknown view {view!r}; choose one of {VIEWS}')
    if policy is None:
        raise AttackConfigError(f'view {view} needs a quantization policy')
    qg = quantize_set(grads, policy)
    if view == 'int_payload_as_float':
        return payloads_as_floats(qg)
    if view == 'dequantized_correct':
        return dequantize_set(qg)
    wrong = {}
    ranges = {}
    for e, g in zip(qg, grads):
        key = (e.layer_index, e.role)
        wrong[key] = QuantMode.MIN_COMBINED if e.tensor.mode == QuantMode.SCALED else QuantMode.SCALED
        ranges[key] = (float(g.value.min()), float(g.value.max()))
    return dequantize_set(qg, mode_override=wrong, ranges=ranges)


class _Problem:
    """Match loss and its gradient over (pixels, label logits)."""

    def __init__(self, spec, params, target, truth, cfg):
        self.spec, self.params, self.target, self.cfg = spec, params, target, cfg
        self.labels = truth.labels
        self.optimize_labels = cfg.label_mode == 'optimized'

    def batch(self, x, logits):
        if self.optimize_labels:
            return Batch(x, np.argmax(logits, axis=1), _softmax(logits))
        return Batch(x, self.labels)

    def loss(self, x, logits):
        return gradient_match_loss(self.spec, self.params, self.batch(x, logits), self.target)

    def grad(self, x, logits):
        gx = attack_gradient(self.spec, self.params, self.batch(x, logits), self.target,
                             self.cfg.gradient_method, self.cfg.fd_step)
        gl = None
        if self.optimize_labels:
            gl = _central_difference(lambda z: self.loss(x, z), logits, self.cfg.fd_step)
        return gx, gl


def _project(x, cfg):
    return np.clip(x, 0.0, 1.0) if cfg.clamp_inputs else x


def _optimize(problem, truth, cfg, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=truth.inputs.shape)
    logits = rng.normal(0.0, 1.0, size=(truth.size, problem.spec.classes)) if problem.optimize_labels else None
    result = AttackResult(recovered=x, view=cfg.view)

    loss = problem.loss(x, logits)
    if not np.isfinite(loss):
        raise _Diverged()
    step = None
    m = v = None

    for it in range(1, cfg.max_iterations + 1):
        gx, gl = problem.grad(x, logits)
        if not (np.all(np.isfinite(gx)) and (gl is None or np.all(np.isfinite(gl)))):
            raise _Diverged()

        if cfg.optimizer == 'adam':
            g = gx if gl is None else np.concatenate([gx.ravel(), gl.ravel()])
            if m is None:
                m, v = np.zeros_like(g), np.zeros_like(g)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            update = cfg.step_size * (m / (1 - 0.9 ** it)) / (np.sqrt(v / (1 - 0.999 ** it)) + 1e-8)
            x = _project(x - update[:x.size].reshape(x.shape), cfg)
            if gl is not None:
                logits = logits - update[x.size:].reshape(logits.shape)
            loss = problem.loss(x, logits)
            if not np.isfinite(loss):
                raise _Diverged()
        else:
            if step is None:
                step = cfg.step_size / max(float(np.abs(gx).max()), 1e-12)
            accepted = False
            for _ in range(MAX_HALVINGS):
                x_new = _project(x - step * gx, cfg)
                logits_new = None if gl is None else logits - step * gl
                decrease = float(np.sum(gx * (x - x_new)))
                if gl is not None:
                    decrease += float(np.sum(gl * (logits - logits_new)))
                new_loss = problem.loss(x_new, logits_new)
                if np.isfinite(new_loss) and new_loss <= loss - ARMIJO_C * decrease:
                    accepted = True
                    break
                step *= 0.5
            if accepted:
                x, logits, loss = x_new, logits_new, new_loss
                step *= 2.0

        mse, psnr = reconstruction_metrics(x, truth.inputs)
        result.loss_curve.append(float(loss))
        result.mse_curve.append(mse)
        result.psnr_curve.append(psnr)
        if result.iterations_to_success is None and mse <= cfg.mse_max and psnr >= cfg.psnr_min:
            result.iterations_to_success = it
        log.debug('attack %s iter %d: match %.3e mse %.4f', cfg.view, it, loss, mse)
        if cfg.optimizer == 'gd' and not accepted:
            # no descent step exists at float precision
            break

    result.recovered = x
    result.mse, result.psnr = reconstruction_metrics(x, truth.inputs)
    result.labels = np.argmax(logits, axis=1) if logits is not None else truth.labels
    return result


def run_attack(spec, params, observed, truth, cfg):
    """Reconstruct ``truth`` from the observed update.

    With several restarts the one with the lowest final match loss is kept
    (the attacker cannot see the ground truth).  A non-finite loss restarts
    from a fresh seed, counted in ``divergences``.
    """
    cfg.validate()
    params = params.astype(np.float64)
    target = observed.as_grads().astype(np.float64)
    target.check_layout(params)
    check_batch(spec, truth)
    truth = Batch.of(truth.inputs, truth.labels, dtype=np.float64)
    problem = _Problem(spec, params, target, truth, cfg)

    best = None
    divergences = 0
    for r in range(cfg.restarts):
        retry = 0
        while True:
            try:
                res = _optimize(problem, truth, cfg, [cfg.seed, r, retry])
                break
            except _Diverged:
                divergences += 1
                retry += 1
                log.warning('attack %s restart %d diverged (retry %d)', cfg.view, r, retry)
                if retry > cfg.max_divergence_retries:
                    raise AttackDivergedError(f'attack diverged {retry} times on restart {r}') from None
        if best is None or res.loss_curve[-1] < best.loss_curve[-1]:
            best = res
    best.divergences = divergences
    log.info('attack %s: mse %.4f psnr %.2f success %s after %d iterations',
             cfg.view, best.mse, best.psnr, best.success, best.iterations)
    return best

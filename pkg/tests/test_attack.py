import numpy as np
import pytest

from attack.leakage import (
    AttackConfig, AttackConfigError, attack_gradient, gradient_match_loss, observe, run_attack,
)
from attack.metrics import PSNR_CAP, reconstruction_metrics
from conftest import random_batch
from experiments.config import build_config, deep_merge, resolve_config
from experiments.runner import load_experiment_dataset, run_attack_suite
from nn.backprop import backward, init_params
from nn.model import build_model
from nn.params import Batch
from quant.policy import mixed_policy


def attack_setup(spec, rng, seed=0):
    params = init_params(spec, seed).astype(np.float64)
    truth = random_batch(rng, spec, size=1)
    return params, truth, backward(spec, params, truth)


# ---- metrics ----

def test_metrics():
    x = np.full((1, 2, 2), 0.5)
    assert reconstruction_metrics(x, x) == (0.0, PSNR_CAP)
    mse, psnr = reconstruction_metrics(x + 0.1, x)
    assert mse == pytest.approx(0.01)
    assert psnr == pytest.approx(20.0)
    with pytest.raises(ValueError, match='shape mismatch'):
        reconstruction_metrics(x, x.ravel())


# ---- match loss and its gradient ----

def test_match_loss_is_zero_at_truth(tiny_spec, rng):
    params, truth, target = attack_setup(tiny_spec, rng)
    assert gradient_match_loss(tiny_spec, params, truth, target) == 0.0
    other = Batch(truth.inputs, (truth.labels + 1) % tiny_spec.classes)
    assert gradient_match_loss(tiny_spec, params, other, target) > 0.0
    moved = Batch(np.clip(truth.inputs + 0.2, 0, 1), truth.labels)
    assert gradient_match_loss(tiny_spec, params, moved, target) > 0.0


def test_match_loss_rejects_layout_mismatch(tiny_spec, conv_spec, rng):
    params, truth, _ = attack_setup(tiny_spec, rng)
    wrong = backward(conv_spec, init_params(conv_spec, 0), random_batch(rng, conv_spec, size=1))
    with pytest.raises(ValueError):
        gradient_match_loss(tiny_spec, params, truth, wrong)


def test_attack_gradient_vanishes_at_truth(tiny_spec, rng):
    params, truth, target = attack_setup(tiny_spec, rng)
    g = attack_gradient(tiny_spec, params, truth, target, 'finite_difference', h=1e-4)
    assert np.abs(g).max() < 1e-4
    g = attack_gradient(tiny_spec, params, truth, target, 'analytic')
    assert np.abs(g).max() < 1e-12


@pytest.mark.parametrize('spec_name', ['tiny_spec', 'conv_spec'])
def test_analytic_attack_gradient_matches_finite_differences(spec_name, request, rng):
    spec = request.getfixturevalue(spec_name)
    params, truth, target = attack_setup(spec, rng, seed=2)
    dummy = Batch(rng.uniform(0, 1, size=truth.inputs.shape), truth.labels)
    analytic = attack_gradient(spec, params, dummy, target, 'analytic')
    numeric = attack_gradient(spec, params, dummy, target, 'finite_difference', h=1e-5)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-2, atol=1e-4)


def test_doubling_the_residual_scales_loss_and_gradient(tiny_spec, rng):
    params, truth, target = attack_setup(tiny_spec, rng)
    dummy = Batch(rng.uniform(0, 1, size=truth.inputs.shape), truth.labels)
    g = backward(tiny_spec, params, dummy)
    doubled = g.zip_map(target, lambda a, b: a - 2 * (a - b))
    base = gradient_match_loss(tiny_spec, params, dummy, target)
    assert gradient_match_loss(tiny_spec, params, dummy, doubled) == pytest.approx(4 * base, rel=1e-9)
    np.testing.assert_allclose(attack_gradient(tiny_spec, params, dummy, doubled, 'analytic'),
                               2 * attack_gradient(tiny_spec, params, dummy, target, 'analytic'),
                               rtol=1e-9, atol=1e-15)


def test_unknown_gradient_method(tiny_spec, rng):
    params, truth, target = attack_setup(tiny_spec, rng)
    with pytest.raises(AttackConfigError):
        attack_gradient(tiny_spec, params, truth, target, 'symbolic')


# ---- views ----

def test_observe_views(tiny_spec, rng):
    params = init_params(tiny_spec, 0)
    grads = backward(tiny_spec, params, random_batch(rng, tiny_spec, size=1, dtype=np.float32))
    policy = mixed_policy(grads.keys())
    assert observe('raw_float', grads) is grads

    raw = observe('int_payload_as_float', grads, policy)
    assert raw.layout() == grads.layout()
    assert all(np.array_equal(e.value, np.round(e.value)) for e in raw)

    correct = observe('dequantized_correct', grads, policy)
    np.testing.assert_allclose(correct.flat(), grads.flat(), atol=np.abs(grads.flat()).max() / 100)

    wrong = observe('dequantized_wrong_mode', grads, policy)
    assert wrong.layout() == grads.layout()
    err_wrong = np.abs(wrong.flat() - grads.flat()).max()
    err_right = np.abs(correct.flat() - grads.flat()).max()
    assert err_wrong > err_right

    with pytest.raises(AttackConfigError, match='needs a quantization policy'):
        observe('dequantized_correct', grads)
    with pytest.raises(AttackConfigError):
        observe('hologram', grads, policy)


# ---- config ----

@pytest.mark.parametrize('changes', [
    {'max_iterations': 0}, {'restarts': 0}, {'step_size': 0.0}, {'mse_max': 0.0},
    {'label_mode': 'guessed'}, {'view': 'x'}, {'optimizer': 'lbfgs'}, {'gradient_method': 'magic'},
    {'fd_step': -1.0}, {'seed': -1},
])
def test_invalid_attack_config(changes):
    with pytest.raises(AttackConfigError):
        AttackConfig().replace(**changes).validate()


def test_attack_config_from_dict():
    cfg = AttackConfig.from_dict({'max_iterations': '25', 'step_size': 1, 'view': 'raw_float'})
    assert cfg.max_iterations == 25
    assert cfg.step_size == 1.0
    with pytest.raises(AttackConfigError, match='unknown attack keys'):
        AttackConfig.from_dict({'iterations': 10})


# ---- optimization ----

def test_gd_loss_curve_never_increases(tiny_spec, rng):
    params, truth, target = attack_setup(tiny_spec, rng)
    result = run_attack(tiny_spec, params, target, truth, AttackConfig(max_iterations=40))
    curve = result.loss_curve
    assert 1 <= len(curve) <= 40
    assert all(b <= a for a, b in zip(curve, curve[1:]))
    assert len(result.mse_curve) == len(curve) == len(result.psnr_curve)
    assert result.recovered.shape == truth.inputs.shape
    assert result.recovered.min() >= 0.0 and result.recovered.max() <= 1.0


def test_attack_is_deterministic_and_restarts_keep_the_best(tiny_spec, rng):
    params, truth, target = attack_setup(tiny_spec, rng)
    cfg = AttackConfig(max_iterations=15, seed=4)
    a = run_attack(tiny_spec, params, target, truth, cfg)
    b = run_attack(tiny_spec, params, target, truth, cfg)
    assert a.loss_curve == b.loss_curve
    assert np.array_equal(a.recovered, b.recovered)
    best = run_attack(tiny_spec, params, target, truth, cfg.replace(restarts=3))
    assert best.loss_curve[-1] <= a.loss_curve[-1]
    assert best.divergences == 0


def test_attack_success_is_recorded(tiny_spec, rng):
    params, truth, target = attack_setup(tiny_spec, rng)
    result = run_attack(tiny_spec, params, target, truth, AttackConfig(max_iterations=30, mse_max=10.0,
                                                                       psnr_min=1e-6))
    assert result.success
    assert result.iterations_to_success == 1
    summary = result.summary()
    assert summary['success'] is True
    assert summary['iterations'] == result.iterations


def test_optimized_labels_and_adam_run(tiny_spec, rng):
    params, truth, target = attack_setup(tiny_spec, rng)
    result = run_attack(tiny_spec, params, target, truth,
                        AttackConfig(max_iterations=5, label_mode='optimized'))
    assert result.labels.shape == (1,)
    assert 0 <= int(result.labels[0]) < tiny_spec.classes
    result = run_attack(tiny_spec, params, target, truth,
                        AttackConfig(max_iterations=5, optimizer='adam', step_size=0.05))
    assert len(result.loss_curve) == 5
    assert np.all(np.isfinite(result.loss_curve))


def test_analytic_gradient_path_runs_on_conv(conv_spec, rng):
    params, truth, target = attack_setup(conv_spec, rng)
    result = run_attack(conv_spec, params, target, truth,
                        AttackConfig(max_iterations=10, gradient_method='analytic'))
    curve = result.loss_curve
    assert all(b <= a for a, b in zip(curve, curve[1:]))


def test_attack_checks_truth_shape(tiny_spec, rng):
    params, _, target = attack_setup(tiny_spec, rng)
    with pytest.raises(ValueError):
        run_attack(tiny_spec, params, target, Batch.of(np.zeros((1, 1, 4, 4)), [0]), AttackConfig())


# ---- desk-scale separation ----

def _suite(preset, tmp_path, trials=5):
    cfg = resolve_config(preset=preset)
    cfg = build_config(deep_merge(cfg.to_dict(), {'experiment': {'attack_trials': trials}}))
    dataset = load_experiment_dataset(cfg)
    spec = build_model(cfg.fl.model, dataset.input_shape, dataset.classes, **cfg.fl.model_options)
    params = init_params(spec, cfg.seed)
    policy = mixed_policy(params.keys())
    views = cfg.experiment['attack_views']
    _, summaries = run_attack_suite(cfg, dataset, spec, params, policy, views, str(tmp_path))
    return summaries


@pytest.mark.slow
def test_quantized_view_defeats_the_attack(tmp_path):
    s = _suite('attack-desk', tmp_path)
    raw, payload = s['raw_float'], s['int_payload_as_float']
    assert raw['successes'] >= 4
    assert all(r['iterations_to_success'] <= 300 for r in raw['results'] if r['success'])
    assert payload['successes'] == 0
    assert all(r['mse'] >= 0.05 for r in payload['results'])
    assert payload['median_mse'] >= 5 * raw['median_mse']


@pytest.mark.slow
def test_wrong_mode_decoding_hurts_the_attack(tmp_path):
    s = _suite('mode-mismatch', tmp_path)
    assert s['dequantized_wrong_mode']['median_mse'] >= 3 * s['dequantized_correct']['median_mse']


@pytest.mark.slow
def test_attack_separation_over_twenty_trials(tmp_path):
    s = _suite('attack-desk', tmp_path, trials=20)
    raw, payload = s['raw_float'], s['int_payload_as_float']
    correct, wrong = s['dequantized_correct'], s['dequantized_wrong_mode']
    assert all(v['trials'] == 20 for v in s.values())

    assert raw['successes'] >= 10
    assert payload['successes'] == 0
    assert payload['median_mse'] >= 5 * raw['median_mse']
    assert wrong['median_mse'] >= 3 * correct['median_mse']

    close = sum(r['mse'] <= 0.02 for r in correct['results'])
    assert close >= raw['successes']

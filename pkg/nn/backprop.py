"""
Forward pass, cross-entropy loss, analytic backpropagation and SGD.

All functions are pure: they read a ModelSpec, a ParamSet and a Batch and
return fresh arrays.  Arithmetic runs in the dtype of the parameters
(float32 for training).
"""

import numpy as np

from nn.params import BIAS, WEIGHT, GradSet, LayoutError, ParamEntry, ParamSet


class ShapeError(ValueError):
    """Batch or parameter shapes do not match the model."""


def init_params(spec, seed):
    """Glorot-uniform weights, zero biases, deterministic for a fixed seed.

    Each weight tensor is drawn from uniform(-a, a) with
    a = sqrt(6 / (fan_in + fan_out)).
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    entries = []
    for i, layer in enumerate(spec.layers):
        if not layer.parameterized:
            continue
        shapes = layer.param_shapes()
        fan_in, fan_out = layer.fans()
        a = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-a, a, size=shapes[WEIGHT]).astype(np.float32)
        entries.append(ParamEntry(i, WEIGHT, w))
        entries.append(ParamEntry(i, BIAS, np.zeros(shapes[BIAS], dtype=np.float32)))
    return ParamSet(entries)


def check_params(spec, params):
    expected = [(i, role, tuple(shape)) for i, role, shape in spec.param_layout()]
    got = list(params.layout())
    if expected != got:
        for e, g in zip(expected, got):
            if e != g:
                raise LayoutError(f'parameter layout mismatch: expected {e}, got {g}')
        raise LayoutError(f'parameter layout mismatch: expected {len(expected)} tensors, got {len(got)}')


def check_batch(spec, batch):
    got = tuple(batch.inputs.shape[1:])
    if got != spec.input_shape:
        raise ShapeError(f'batch input shape mismatch: expected {spec.input_shape}, got {got}')
    if batch.soft_targets is not None and batch.soft_targets.shape != (batch.size, spec.classes):
        raise ShapeError(f'soft target shape mismatch: expected {(batch.size, spec.classes)}, '
                         f'got {batch.soft_targets.shape}')


def _layer_params(params):
    by_layer = {}
    for e in params:
        by_layer.setdefault(e.layer_index, {})[e.role] = e.value
    return by_layer


def _forward(spec, by_layer, x):
    caches = []
    a = x
    for i, layer in enumerate(spec.layers):
        p = by_layer.get(i, {})
        a, cache = layer.forward(a, p.get(WEIGHT), p.get(BIAS))
        caches.append(cache)
    return a, caches


def _softmax_xent(logits, targets):
    """Row-max-shifted log-softmax; returns (loss, probs)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    loss = -(targets * log_p).sum(axis=1).mean()
    return float(loss), np.exp(log_p)


def _backward(spec, by_layer, caches, dlogits):
    """Returns (grads by layer index, dy per layer, input gradient)."""
    grads = {}
    dys = [None] * len(spec.layers)
    dy = dlogits
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        dys[i] = dy
        w = by_layer.get(i, {}).get(WEIGHT)
        dx, dw, db = layer.backward(caches[i], dy, w)
        if layer.parameterized:
            grads[i] = (dw, db)
        dy = dx
    return grads, dys, dy


def _grad_set(spec, grads):
    entries = []
    for i in spec.parameterized_layers():
        dw, db = grads[i]
        entries.append(ParamEntry(i, WEIGHT, dw))
        entries.append(ParamEntry(i, BIAS, db))
    return GradSet(entries)


def _run(spec, params, batch):
    check_batch(spec, batch)
    check_params(spec, params)
    by_layer = _layer_params(params)
    dtype = params[0].value.dtype
    x = batch.inputs.astype(dtype, copy=False)
    logits, caches = _forward(spec, by_layer, x)
    targets = batch.targets(spec.classes).astype(dtype, copy=False)
    loss, probs = _softmax_xent(logits, targets)
    return by_layer, caches, logits, targets, loss, probs


def forward_loss(spec, params, batch):
    """Logits and mean cross-entropy of softmax(logits) against the labels."""
    _, _, logits, _, loss, _ = _run(spec, params, batch)
    return logits, loss


def predict(spec, params, inputs):
    """Logits for a stack of inputs without computing a loss."""
    if tuple(inputs.shape[1:]) != spec.input_shape:
        raise ShapeError(f'input shape mismatch: expected {spec.input_shape}, got {tuple(inputs.shape[1:])}')
    logits, _ = _forward(spec, _layer_params(params), inputs.astype(params[0].value.dtype, copy=False))
    return logits


def loss_and_grads(spec, params, batch):
    """One forward/backward pass: (loss, GradSet, input gradient)."""
    by_layer, caches, _, targets, loss, probs = _run(spec, params, batch)
    dlogits = (probs - targets) / batch.size
    grads, _, dx = _backward(spec, by_layer, caches, dlogits)
    return loss, _grad_set(spec, grads), dx


def backward(spec, params, batch):
    """Gradient of the mean-batch loss w.r.t. every parameter tensor."""
    return loss_and_grads(spec, params, batch)[1]


def input_gradient(spec, params, batch):
    """Gradient of the loss w.r.t. the input pixels, same shape as the inputs."""
    return loss_and_grads(spec, params, batch)[2]


def sgd_step(params, grads, mu):
    """w' = w - mu * g for every tensor."""
    if mu < 0:
        raise ValueError(f'learning rate must be non-negative, got {mu}')
    params.check_layout(grads)
    mu = np.asarray(mu, dtype=params[0].value.dtype) if len(params) else mu
    return params.zip_map(grads, lambda w, g: w - mu * g, cls=ParamSet)


def grad_match_and_input_gradient(spec, params, batch, target):
    """Double backpropagation for the gradient-matching objective.

    Returns (match_loss, d match_loss / d inputs) where
    match_loss = sum over tensors of ||backward(spec, params, batch) - target||^2.
    Label targets are treated as constants.
    """
    target.check_layout(params)
    by_layer, caches, _, targets, _, probs = _run(spec, params, batch)
    bsz = batch.size
    dlogits = (probs - targets) / bsz
    grads, dys, _ = _backward(spec, by_layer, caches, dlogits)

    # ---- residuals: cotangents of the parameter gradients ----
    residual = {}
    match = 0.0
    for i in spec.parameterized_layers():
        dw, db = grads[i]
        rw = dw - target.get(i, WEIGHT)
        rb = db - target.get(i, BIAS)
        match += float(np.sum(rw * rw) + np.sum(rb * rb))
        residual[i] = (2 * rw, 2 * rb)

    # ---- reverse of the backward pass (input side first) ----
    direct = [None] * len(spec.layers)
    dx_bar = None
    for i, layer in enumerate(spec.layers):
        w = by_layer.get(i, {}).get(WEIGHT)
        dw_bar, db_bar = residual.get(i, (None, None))
        if layer.parameterized:
            x_bar, dy_bar = layer.adjoint(caches[i], dys[i], w, dx_bar, dw_bar, db_bar)
        else:
            x_bar, dy_bar = layer.adjoint(caches[i], dys[i], w, dx_bar, None, None)
        direct[i] = x_bar
        dx_bar = dy_bar

    # ---- through dlogits = (softmax(z) - q) / B ----
    v = dx_bar / bsz
    a_bar = probs * (v - (probs * v).sum(axis=1, keepdims=True))

    # ---- reverse of the forward pass ----
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        w = by_layer.get(i, {}).get(WEIGHT)
        a_bar = layer.backward(caches[i], a_bar, w)[0]
        if direct[i] is not None:
            a_bar = a_bar + direct[i]
    return match, a_bar

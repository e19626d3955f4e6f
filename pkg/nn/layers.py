"""
Layer menu: dense, conv2d, maxpool(2), activation (relu|tanh), flatten.

Every layer works on a batch (leading dim B) and implements three passes:

    forward(x, w, b)                   -> (y, cache)
    backward(cache, dy, w)             -> (dx, dw, db)
    adjoint(cache, dy, w, dx_bar, dw_bar, db_bar) -> (x_bar, dy_bar)

``adjoint`` is the reverse-mode derivative of ``backward`` itself: given the
cotangents of backward's outputs it returns the cotangent of the layer input
(the direct part only, the forward path is handled by the caller) and of the
incoming ``dy``.  It is what makes double backpropagation possible.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ModelSpecError(ValueError):
    """Layer shapes do not compose."""


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


# ---- dense ----

@dataclass(frozen=True)
class Dense:
    n_in: int
    n_out: int

    kind = 'dense'
    parameterized = True

    def output_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.n_in:
            raise ModelSpecError(f'dense({self.n_in}, {self.n_out}) expects input ({self.n_in},), got {tuple(in_shape)}')
        return (self.n_out,)

    def param_shapes(self):
        return {'weight': (self.n_in, self.n_out), 'bias': (self.n_out,)}

    def fans(self):
        return self.n_in, self.n_out

    def forward(self, x, w, b):
        return x @ w + b, x

    def backward(self, cache, dy, w):
        x = cache
        return dy @ w.T, x.T @ dy, dy.sum(axis=0)

    def adjoint(self, cache, dy, w, dx_bar, dw_bar, db_bar):
        x = cache
        x_bar = dy @ dw_bar.T
        dy_bar = x @ dw_bar + db_bar
        if dx_bar is not None:
            dy_bar = dy_bar + dx_bar @ w
        return x_bar, dy_bar

    def to_dict(self):
        return {'type': self.kind, 'in': self.n_in, 'out': self.n_out}

    def __str__(self):
        return f'dense({self.n_in}->{self.n_out})'


# ---- conv2d (valid padding, stride 1) ----

def im2col(x, k):
    """(B, C, H, W) -> (B, Ho*Wo, C*k*k) patch matrix."""
    bsz, ch, h, w = x.shape
    ho, wo = h - k + 1, w - k + 1
    windows = sliding_window_view(x, (k, k), axis=(2, 3))
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(bsz, ho * wo, ch * k * k)


def col2im(cols, x_shape, k):
    """Adjoint of im2col: scatter-add patches back onto the image grid."""
    bsz, ch, h, w = x_shape
    ho, wo = h - k + 1, w - k + 1
    cols = cols.reshape(bsz, ho, wo, ch, k, k)
    out = np.zeros(x_shape, dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + ho, j:j + wo] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out


@dataclass(frozen=True)
class Conv2D:
    in_ch: int
    out_ch: int
    k: int

    kind = 'conv2d'
    parameterized = True

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_ch:
            raise ModelSpecError(f'conv2d({self.in_ch}, {self.out_ch}, k{self.k}) expects input '
                                 f'({self.in_ch}, H, W), got {tuple(in_shape)}')
        _, h, w = in_shape
        if h < self.k or w < self.k:
            raise ModelSpecError(f'conv2d kernel {self.k} larger than input {h}x{w}')
        return (self.out_ch, h - self.k + 1, w - self.k + 1)

    def param_shapes(self):
        return {'weight': (self.out_ch, self.in_ch, self.k, self.k), 'bias': (self.out_ch,)}

    def fans(self):
        area = self.k * self.k
        return self.in_ch * area, self.out_ch * area

    def forward(self, x, w, b):
        bsz, _, h, wd = x.shape
        ho, wo = h - self.k + 1, wd - self.k + 1
        cols = im2col(x, self.k)
        wm = w.reshape(self.out_ch, -1)
        y = cols @ wm.T + b
        return y.transpose(0, 2, 1).reshape(bsz, self.out_ch, ho, wo), (cols, x.shape)

    def backward(self, cache, dy, w):
        cols, x_shape = cache
        bsz = dy.shape[0]
        dyf = dy.reshape(bsz, self.out_ch, -1).transpose(0, 2, 1)
        wm = w.reshape(self.out_ch, -1)
        dw = np.tensordot(dyf, cols, axes=([0, 1], [0, 1])).reshape(w.shape)
        db = dyf.sum(axis=(0, 1))
        dx = col2im(dyf @ wm, x_shape, self.k)
        return dx, dw, db

    def adjoint(self, cache, dy, w, dx_bar, dw_bar, db_bar):
        cols, x_shape = cache
        bsz = dy.shape[0]
        dyf = dy.reshape(bsz, self.out_ch, -1).transpose(0, 2, 1)
        wm = w.reshape(self.out_ch, -1)
        wm_bar = dw_bar.reshape(self.out_ch, -1)
        x_bar = col2im(dyf @ wm_bar, x_shape, self.k)
        dyf_bar = cols @ wm_bar.T + db_bar
        if dx_bar is not None:
            dyf_bar = dyf_bar + im2col(dx_bar, self.k) @ wm.T
        return x_bar, dyf_bar.transpose(0, 2, 1).reshape(dy.shape)

    def to_dict(self):
        return {'type': self.kind, 'in_ch': self.in_ch, 'out_ch': self.out_ch, 'k': self.k}

    def __str__(self):
        return f'conv2d({self.in_ch}->{self.out_ch}, k{self.k})'


# ---- maxpool(2) ----

@dataclass(frozen=True)
class MaxPool2D:
    size: int = 2

    kind = 'maxpool'
    parameterized = False

    def output_shape(self, in_shape):
        if self.size != 2:
            raise ModelSpecError(f'maxpool supports size 2 only, got {self.size}')
        if len(in_shape) != 3 or in_shape[1] < 2 or in_shape[2] < 2:
            raise ModelSpecError(f'maxpool(2) expects input (C, H>=2, W>=2), got {tuple(in_shape)}')
        ch, h, w = in_shape
        return (ch, h // 2, w // 2)

    def param_shapes(self):
        return {}

    @staticmethod
    def _windows(x):
        bsz, ch, h, w = x.shape
        ho, wo = h // 2, w // 2
        xc = x[:, :, :2 * ho, :2 * wo]
        return xc.reshape(bsz, ch, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(bsz, ch, ho, wo, 4)

    def forward(self, x, w=None, b=None):
        win = self._windows(x)
        idx = win.argmax(axis=-1)
        mask = np.arange(4) == idx[..., None]
        y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        return y, (mask, x.shape)

    def backward(self, cache, dy, w=None):
        mask, x_shape = cache
        bsz, ch, ho, wo, _ = mask.shape
        dwin = mask * dy[..., None]
        dxc = dwin.reshape(bsz, ch, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(bsz, ch, 2 * ho, 2 * wo)
        dx = np.zeros(x_shape, dtype=dy.dtype)
        dx[:, :, :2 * ho, :2 * wo] = dxc
        return dx, None, None

    def adjoint(self, cache, dy, w, dx_bar, dw_bar, db_bar):
        mask, _ = cache
        if dx_bar is None:
            return None, np.zeros_like(dy)
        return None, (mask * self._windows(dx_bar)).sum(axis=-1)

    def to_dict(self):
        return {'type': self.kind, 'size': self.size}

    def __str__(self):
        return 'maxpool(2)'


# ---- activations ----

@dataclass(frozen=True)
class Activation:
    fn: str = 'relu'

    kind = 'activation'
    parameterized = False

    def output_shape(self, in_shape):
        if self.fn not in ('relu', 'tanh'):
            raise ModelSpecError(f'unknown activation {self.fn!r}')
        return tuple(in_shape)

    def param_shapes(self):
        return {}

    def forward(self, x, w=None, b=None):
        if self.fn == 'relu':
            return np.maximum(x, 0), x > 0
        y = np.tanh(x)
        return y, y

    def backward(self, cache, dy, w=None):
        if self.fn == 'relu':
            return dy * cache, None, None
        return dy * (1 - cache * cache), None, None

    def adjoint(self, cache, dy, w, dx_bar, dw_bar, db_bar):
        if dx_bar is None:
            return None, np.zeros_like(dy)
        if self.fn == 'relu':
            return None, dx_bar * cache
        y = cache
        slope = 1 - y * y
        return dx_bar * dy * (-2 * y) * slope, dx_bar * slope

    def to_dict(self):
        return {'type': self.kind, 'fn': self.fn}

    def __str__(self):
        return self.fn


@dataclass(frozen=True)
class Flatten:
    kind = 'flatten'
    parameterized = False

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def param_shapes(self):
        return {}

    def forward(self, x, w=None, b=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, dy, w=None):
        return dy.reshape(cache), None, None

    def adjoint(self, cache, dy, w, dx_bar, dw_bar, db_bar):
        if dx_bar is None:
            return None, np.zeros_like(dy)
        return None, dx_bar.reshape(dy.shape)

    def to_dict(self):
        return {'type': self.kind}

    def __str__(self):
        return 'flatten'


def layer_from_dict(d):
    """Build a layer from its config dict, e.g. {'type': 'dense', 'in': 64, 'out': 32}."""
    kind = d.get('type', '')
    try:
        if kind == 'dense':
            return Dense(int(d['in']), int(d['out']))
        if kind == 'conv2d':
            return Conv2D(int(d['in_ch']), int(d['out_ch']), int(d['k']))
        if kind == 'maxpool':
            return MaxPool2D(int(d.get('size', 2)))
        if kind == 'activation':
            return Activation(d.get('fn', 'relu'))
        if kind == 'flatten':
            return Flatten()
    except KeyError as e:
        raise ModelSpecError(f'{kind} layer missing field {e}') from None
    raise ModelSpecError(f'unknown layer type {kind!r}')

"""
Model specifications and the named architectures used by the simulator.

    mlp-tiny     flatten - dense(in->32) - relu - dense(32->classes)
    lenet-small  conv(C->6,k5) - relu - maxpool - conv(6->16,k5) - relu - maxpool
                 - flatten - dense(->120) - relu - dense(->84) - relu - dense(->classes)
"""

from dataclasses import dataclass

import numpy as np

from nn.layers import (
    Activation, Conv2D, Dense, Flatten, MaxPool2D, ModelSpecError, layer_from_dict,
)


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple
    input_shape: tuple
    classes: int
    name: str = 'custom'

    def __post_init__(self):
        object.__setattr__(self, 'layers', tuple(self.layers))
        object.__setattr__(self, 'input_shape', tuple(int(d) for d in self.input_shape))
        self.validate()

    def validate(self):
        """Check that consecutive layer shapes compose and end in (classes,)."""
        if not any(layer.parameterized for layer in self.layers):
            raise ModelSpecError('model needs at least one parameterized layer')
        if self.classes < 2:
            raise ModelSpecError(f'class count must be >= 2, got {self.classes}')
        shape = self.input_shape
        prev = 'input'
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ModelSpecError as e:
                raise ModelSpecError(f'layers {prev} -> {i}:{layer} do not compose: {e}') from None
            prev = f'{i}:{layer}'
        if shape != (self.classes,):
            raise ModelSpecError(f'layers {prev} -> output do not compose: final shape {shape}, '
                                 f'expected ({self.classes},)')

    def shapes(self):
        """Input shape of every layer followed by the output shape."""
        out = [self.input_shape]
        for layer in self.layers:
            out.append(layer.output_shape(out[-1]))
        return out

    def param_layout(self):
        """[(layer_index, role, shape)] in ParamSet order."""
        layout = []
        for i, layer in enumerate(self.layers):
            if layer.parameterized:
                shapes = layer.param_shapes()
                layout.append((i, 'weight', shapes['weight']))
                layout.append((i, 'bias', shapes['bias']))
        return layout

    def parameterized_layers(self):
        return [i for i, layer in enumerate(self.layers) if layer.parameterized]

    def num_params(self):
        return int(sum(np.prod(shape) for _, _, shape in self.param_layout()))

    def to_dict(self):
        return {
            'name': self.name,
            'input_shape': list(self.input_shape),
            'classes': self.classes,
            'layers': [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            layers=tuple(layer_from_dict(item) for item in d['layers']),
            input_shape=tuple(d['input_shape']),
            classes=int(d['classes']),
            name=d.get('name', 'custom'),
        )

    def __str__(self):
        return f'{self.name}: ' + ' - '.join(str(layer) for layer in self.layers)


def mlp_tiny(input_shape=(1, 8, 8), classes=10, hidden=32):
    n_in = int(np.prod(input_shape))
    return ModelSpec(
        layers=(Flatten(), Dense(n_in, hidden), Activation('relu'), Dense(hidden, classes)),
        input_shape=input_shape,
        classes=classes,
        name='mlp-tiny',
    )


def lenet_small(input_shape=(1, 28, 28), classes=10):
    ch, h, w = input_shape
    h1, w1 = (h - 4) // 2, (w - 4) // 2
    h2, w2 = (h1 - 4) // 2, (w1 - 4) // 2
    return ModelSpec(
        layers=(
            Conv2D(ch, 6, 5), Activation('relu'), MaxPool2D(2),
            Conv2D(6, 16, 5), Activation('relu'), MaxPool2D(2),
            Flatten(),
            Dense(16 * h2 * w2, 120), Activation('relu'),
            Dense(120, 84), Activation('relu'),
            Dense(84, classes),
        ),
        input_shape=input_shape,
        classes=classes,
        name='lenet-small',
    )


MODEL_BUILDERS = {
    'mlp-tiny': mlp_tiny,
    'lenet-small': lenet_small,
}


def build_model(name, input_shape, classes, **kwargs):
    """Build a named architecture for the given input shape and class count."""
    builder = MODEL_BUILDERS.get(name)
    if builder is None:
        raise ModelSpecError(f'unknown model {name!r}; choose one of {sorted(MODEL_BUILDERS)}')
    return builder(input_shape=tuple(input_shape), classes=int(classes), **kwargs)

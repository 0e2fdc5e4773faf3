"""Parameterized layers and a tiny module container."""
import math

import numpy as np

from . import ops
from .tensor import Parameter


class Module:
    """Base container: parameters are discovered from attributes in definition order."""

    def __init__(self):
        self.training = True

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            full = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def train(self, mode=True):
        self.training = mode
        for value in vars(self).values():
            if isinstance(value, Module):
                value.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng, bound, shape, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, in_features, out_features, rng, name="linear", dtype=np.float32):
        super().__init__()
        bound = 1.0 / math.sqrt(in_features)
        self.weight = Parameter(_uniform(rng, bound, (out_features, in_features), dtype), f"{name}.weight", name)
        self.bias = Parameter(_uniform(rng, bound, (out_features,), dtype), f"{name}.bias", name)

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, rng, kernel=4, stride=2, pad=1, name="conv", dtype=np.float32):
        super().__init__()
        bound = 1.0 / math.sqrt(in_ch * kernel * kernel)
        self.weight = Parameter(_uniform(rng, bound, (out_ch, in_ch, kernel, kernel), dtype), f"{name}.weight", name)
        self.bias = Parameter(_uniform(rng, bound, (out_ch,), dtype), f"{name}.bias", name)
        self.stride, self.pad = stride, pad

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class ConvTranspose2d(Module):
    def __init__(self, in_ch, out_ch, rng, kernel=4, stride=2, pad=1, output_pad=0, name="deconv", dtype=np.float32):
        super().__init__()
        # fan-in of the adjoint conv, as torch does for transposed convs
        bound = 1.0 / math.sqrt(out_ch * kernel * kernel)
        self.weight = Parameter(_uniform(rng, bound, (in_ch, out_ch, kernel, kernel), dtype), f"{name}.weight", name)
        self.bias = Parameter(_uniform(rng, bound, (out_ch,), dtype), f"{name}.bias", name)
        self.stride, self.pad, self.output_pad = stride, pad, output_pad

    def forward(self, x):
        return ops.conv2d_transpose(x, self.weight, self.bias, self.stride, self.pad, self.output_pad)

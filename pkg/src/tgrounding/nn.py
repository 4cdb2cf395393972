"""Parameter containers built on :mod:`tgrounding.tensor`."""

import numpy as np

from . import tensor as tn
from .errors import LoadError
from .tensor import Tensor


def param(data):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


class Module:
    """Collects trainable tensors from attributes, lists and child modules."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            yield from _walk(value, f"{prefix}{name}")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise LoadError(f"parameter names differ: missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise LoadError(f"{name}: checkpoint shape {arr.shape} vs model {p.shape}")
            p.data = arr.copy()

    def num_parameters(self):
        return sum(p.size for p in self.parameters())


def _walk(value, name):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = param(rng.uniform(-bound, bound, size=(n_in, n_out)))
        self.bias = param(rng.uniform(-bound, bound, size=n_out)) if bias else None

    def __call__(self, x):
        return tn.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, width, eps=tn.LAYER_NORM_EPS):
        self.gain = param(np.ones(width))
        self.bias = param(np.zeros(width))
        self.eps = eps

    def __call__(self, x):
        return tn.layer_norm(x, self.gain, self.bias, self.eps)


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel_size, rng, bias=True):
        bound = 1.0 / np.sqrt(c_in * kernel_size * kernel_size)
        self.weight = param(rng.uniform(-bound, bound, size=(kernel_size, kernel_size, c_in, c_out)))
        self.bias = param(rng.uniform(-bound, bound, size=c_out)) if bias else None

    def __call__(self, x):
        return tn.conv2d(x, self.weight, self.bias)

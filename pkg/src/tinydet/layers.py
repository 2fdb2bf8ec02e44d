"""Layer objects chaining the tensor ops with explicit backward passes.

A layer caches whatever its backward needs during forward, accumulates
parameter gradients into `Param.grad`, and returns the input gradient from
`backward`.  This is deliberately not an autodiff graph: composition order
is written out by hand in each block.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T


class Param:
    """A named trainable array with an accumulated gradient slot."""

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    def zero_grad(self):
        self.grad[...] = 0


class Layer:
    def params(self) -> list[Param]:
        return []

    def state_arrays(self) -> list[np.ndarray]:
        """Mutable non-trainable state (e.g. BN running stats)."""
        return []

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def astype(self, dtype):
        """Convert all parameters and state in place (used for 64-bit grad checks)."""
        for p in self.params():
            p.value = p.value.astype(dtype)
            p.grad = p.grad.astype(dtype)
        self._cast_state(dtype)
        return self

    def _cast_state(self, dtype):
        pass


class Conv2d(Layer):
    def __init__(self, name: str, cp: T.ConvParams, stride: int = 1):
        self.name = name
        self.cp = cp
        self.stride = stride
        self.weight = Param(f"{name}.weight", cp.kernel)
        self.bias = Param(f"{name}.bias", cp.bias) if cp.bias is not None else None
        self._x = None

    def params(self):
        return [self.weight] + ([self.bias] if self.bias else [])

    def forward(self, x):
        self._x = x
        self.cp.kernel = self.weight.value
        if self.bias is not None:
            self.cp.bias = self.bias.value
        return T.conv2d(x, self.cp, stride=self.stride)

    def backward(self, grad_out):
        gx, gk, gb = T.conv2d_backward(self._x, self.cp, grad_out, stride=self.stride)
        self.weight.grad += gk
        if self.bias is not None:
            self.bias.grad += gb
        return gx


class BatchNorm2d(Layer):
    def __init__(self, name: str, state: T.BatchNormState):
        self.name = name
        self.state = state
        self.gamma = Param(f"{name}.gamma", state.gamma)
        self.beta = Param(f"{name}.beta", state.beta)
        self.update_running = True
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def state_arrays(self):
        return [self.state.running_mean, self.state.running_var]

    def forward(self, x):
        self.state.gamma = self.gamma.value
        self.state.beta = self.beta.value
        y, self._cache = T.batchnorm(x, self.state, update_running=self.update_running)
        return y

    def backward(self, grad_out):
        gx, gg, gb = T.batchnorm_backward(grad_out, self._cache)
        self.gamma.grad += gg
        self.beta.grad += gb
        return gx

    def _cast_state(self, dtype):
        self.state.running_mean = self.state.running_mean.astype(dtype)
        self.state.running_var = self.state.running_var.astype(dtype)
        self.state.gamma = self.gamma.value
        self.state.beta = self.beta.value


class ReLU(Layer):
    def __init__(self):
        self._x = None

    def forward(self, x):
        self._x = x
        return T.activation(x, "relu")

    def backward(self, grad_out):
        return T.activation_backward(self._x, "relu", grad_out)


class Upsample2x(Layer):
    def __init__(self, mode: str):
        self.mode = mode
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return T.upsample2x(x, self.mode)

    def backward(self, grad_out):
        return T.upsample2x_backward(self._shape, self.mode, grad_out)


class Sequential(Layer):
    def __init__(self, *layers: Layer):
        self.layers = list(layers)

    def params(self):
        return [p for l in self.layers for p in l.params()]

    def state_arrays(self):
        return [s for l in self.layers for s in l.state_arrays()]

    def forward(self, x):
        for l in self.layers:
            x = l.forward(x)
        return x

    def backward(self, grad_out):
        for l in reversed(self.layers):
            grad_out = l.backward(grad_out)
        return grad_out

    def _cast_state(self, dtype):
        for l in self.layers:
            l.astype(dtype)


def uniform_conv_init(
    rng: np.random.Generator,
    out_c: int,
    in_c_per_group: int,
    kh: int,
    kw: int,
    *,
    groups: int = 1,
    padding=(0, 0),
    bias: bool = True,
    dtype=np.float32,
) -> T.ConvParams:
    """Centered uniform init with fan-in scaling."""
    fan_in = in_c_per_group * kh * kw
    bound = 1.0 / np.sqrt(fan_in)
    kernel = rng.uniform(-bound, bound, size=(out_c, in_c_per_group, kh, kw)).astype(dtype)
    b = rng.uniform(-bound, bound, size=out_c).astype(dtype) if bias else None
    return T.ConvParams(kernel=kernel, bias=b, groups=groups, padding=padding)

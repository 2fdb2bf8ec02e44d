"""Efficient upsampling convolution block.

Pipeline: 2x upsample -> depthwise 3x3 -> batch norm -> ReLU -> 1x1 channel
projection.  The upsample mode defaults to nearest (the depthwise conv does
the smoothing; nearest keeps the op bit-exactly testable) with bilinear
selectable.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import BatchNorm2d, Conv2d, Layer, ReLU, Sequential, Upsample2x, uniform_conv_init


class EucbBlock(Layer):
    """(n, C, h, w) -> (n, out_c, 2h, 2w)."""

    def __init__(
        self,
        in_c: int,
        out_c: int,
        rng: np.random.Generator,
        *,
        upsample_mode: str = "nearest",
        name: str = "eucb",
    ):
        self.in_c = in_c
        self.out_c = out_c
        self.name = name
        dw = uniform_conv_init(rng, in_c, 1, 3, 3, groups=in_c, padding=(1, 1))
        proj = uniform_conv_init(rng, out_c, in_c, 1, 1)
        self.pipe = Sequential(
            Upsample2x(upsample_mode),
            Conv2d(f"{name}.dw", dw),
            BatchNorm2d(f"{name}.bn", T.BatchNormState.identity(in_c)),
            ReLU(),
            Conv2d(f"{name}.proj", proj),
        )
        self.bn = self.pipe.layers[2]

    def params(self):
        return self.pipe.params()

    def state_arrays(self):
        return self.pipe.state_arrays()

    def forward(self, x):
        if x.shape[1] != self.in_c:
            raise T.ShapeError(f"{self.name}: expected {self.in_c} channels, got {x.shape[1]}")
        return self.pipe.forward(x)

    def backward(self, grad_out):
        return self.pipe.backward(grad_out)

    def _cast_state(self, dtype):
        self.pipe.astype(dtype)

    def set_mode(self, mode: str):
        self.bn.state.mode = mode


def eucb_flops(in_c: int, out_c: int, h: int, w: int) -> int:
    """MAC count after upsampling to (2h, 2w): depthwise 3x3 + 1x1 projection."""
    hw4 = 4 * h * w
    return in_c * hw4 * 9 + in_c * out_c * hw4


def plain_upsample_baseline(x: np.ndarray, mode: str = "nearest") -> np.ndarray:
    """Bare 2x upsample: the 'plain' ablation arm.  Delegates bit-for-bit."""
    return T.upsample2x(x, mode)

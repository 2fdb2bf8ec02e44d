"""Minimal dense-tensor ops with hand-written backward passes.

All feature maps are numpy arrays of shape (n, c, h, w), float32 by default
and float64 in gradient-check mode.  There is no autodiff graph: every op
comes as a forward/backward pair, and blocks chain them explicitly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor or parameter shapes are inconsistent."""


class NumericError(ValueError):
    """Raised when a tensor contains NaN or Inf."""


def check_finite(x: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in tensor '{name}'")


def _require_nchw(x: np.ndarray, name: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"'{name}' must be rank-4 (n, c, h, w), got shape {x.shape}")


@dataclass
class ConvParams:
    """Convolution weights: kernel (out_c, in_c_per_group, kh, kw), stride fixed at 1."""

    kernel: np.ndarray
    bias: np.ndarray | None = None
    groups: int = 1
    padding: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.kernel.ndim != 4:
            raise ShapeError(f"kernel must be rank-4, got shape {self.kernel.shape}")
        if self.groups < 1:
            raise ShapeError(f"groups must be positive, got {self.groups}")
        oc = self.kernel.shape[0]
        if oc % self.groups != 0:
            raise ShapeError(f"out channels {oc} not divisible by groups {self.groups}")
        if self.bias is not None and self.bias.shape != (oc,):
            raise ShapeError(f"bias shape {self.bias.shape} != ({oc},)")

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1] * self.groups


@dataclass
class BatchNormState:
    """Per-channel affine batch normalization state."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1
    mode: str = "train"

    def __post_init__(self):
        c = self.gamma.shape[0]
        for name in ("beta", "running_mean", "running_var"):
            arr = getattr(self, name)
            if arr.shape != (c,):
                raise ShapeError(f"{name} shape {arr.shape} != ({c},)")
        if np.any(self.running_var < 0):
            raise ValueError("running_var entries must be >= 0")
        if not (0.0 < self.momentum < 1.0):
            raise ValueError(f"momentum must lie in (0, 1), got {self.momentum}")

    @classmethod
    def identity(cls, channels: int, dtype=np.float32, **kw) -> "BatchNormState":
        return cls(
            gamma=np.ones(channels, dtype),
            beta=np.zeros(channels, dtype),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
            **kw,
        )


def _conv_geometry(x, p: ConvParams, stride: int):
    n, c, h, w = x.shape
    oc, icpg, kh, kw = p.kernel.shape
    if c % p.groups != 0 or icpg != c // p.groups:
        raise ShapeError(
            f"input channels {c} incompatible with kernel {p.kernel.shape} "
            f"and groups {p.groups}"
        )
    ph, pw = p.padding
    oh = (h + 2 * ph - kh) // stride + 1
    ow = (w + 2 * pw - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"kernel ({kh}, {kw}) with padding ({ph}, {pw}) does not fit "
            f"input ({h}, {w})"
        )
    return n, c, h, w, oc, icpg, kh, kw, ph, pw, oh, ow


def conv2d(x: np.ndarray, p: ConvParams, *, stride: int = 1) -> np.ndarray:
    """Cross-correlation with zero padding.  Stride 1 unless the caller is the
    detector stem, which declares its stride-2 convolutions explicitly."""
    _require_nchw(x, "conv input")
    check_finite(x, "conv input")
    n, c, h, w, oc, icpg, kh, kw, ph, pw, oh, ow = _conv_geometry(x, p, stride)
    g = p.groups
    ocpg = oc // g
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = np.zeros((n, oc, oh, ow), dtype=x.dtype)

    if g == c and icpg == 1 and ocpg == 1:
        # depthwise: one broadcast multiply per tap, fixed tap order
        for ki in range(kh):
            for kj in range(kw):
                patch = xp[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride]
                out += p.kernel[:, 0, ki, kj][None, :, None, None] * patch
    else:
        for gi in range(g):
            xg = xp[:, gi * icpg : (gi + 1) * icpg]
            # column rows are laid out tap-major: (ki, kj, ic)
            km = (
                p.kernel[gi * ocpg : (gi + 1) * ocpg]
                .transpose(0, 2, 3, 1)
                .reshape(ocpg, kh * kw * icpg)
            )
            cols = np.empty((n, kh * kw * icpg, oh * ow), dtype=x.dtype)
            idx = 0
            for ki in range(kh):
                for kj in range(kw):
                    patch = xg[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride]
                    cols[:, idx * icpg : (idx + 1) * icpg] = patch.reshape(n, icpg, oh * ow)
                    idx += 1
            out[:, gi * ocpg : (gi + 1) * ocpg] = (km @ cols).reshape(n, ocpg, oh, ow)
    if p.bias is not None:
        out += p.bias[None, :, None, None]
    return out


def conv2d_backward(
    x: np.ndarray, p: ConvParams, grad_out: np.ndarray, *, stride: int = 1
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Analytic gradients of conv2d w.r.t. input, kernel, and bias."""
    n, c, h, w, oc, icpg, kh, kw, ph, pw, oh, ow = _conv_geometry(x, p, stride)
    if grad_out.shape != (n, oc, oh, ow):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} != forward output ({n}, {oc}, {oh}, {ow})"
        )
    g = p.groups
    ocpg = oc // g
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    gxp = np.zeros_like(xp)
    gk = np.zeros_like(p.kernel)

    if g == c and icpg == 1 and ocpg == 1:
        for ki in range(kh):
            for kj in range(kw):
                patch = xp[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride]
                gk[:, 0, ki, kj] = np.einsum("nchw,nchw->c", grad_out, patch)
                gxp[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += (
                    p.kernel[:, 0, ki, kj][None, :, None, None] * grad_out
                )
    else:
        for gi in range(g):
            xg = xp[:, gi * icpg : (gi + 1) * icpg]
            go = grad_out[:, gi * ocpg : (gi + 1) * ocpg].reshape(n, ocpg, oh * ow)
            for ki in range(kh):
                for kj in range(kw):
                    patch = xg[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride]
                    pm = np.ascontiguousarray(patch).reshape(n, icpg, oh * ow)
                    gk[gi * ocpg : (gi + 1) * ocpg, :, ki, kj] = (
                        go @ pm.transpose(0, 2, 1)
                    ).sum(axis=0)
                    ktap = p.kernel[gi * ocpg : (gi + 1) * ocpg, :, ki, kj]  # (ocpg, icpg)
                    contrib = (ktap.T @ go).reshape(n, icpg, oh, ow)
                    gxp[
                        :,
                        gi * icpg : (gi + 1) * icpg,
                        ki : ki + stride * oh : stride,
                        kj : kj + stride * ow : stride,
                    ] += contrib
    grad_x = gxp[:, :, ph : ph + h, pw : pw + w]
    grad_bias = grad_out.sum(axis=(0, 2, 3)) if p.bias is not None else None
    return grad_x, gk, grad_bias


def _bilinear_matrix(src: int, dtype) -> np.ndarray:
    """Row-interpolation matrix (2*src, src) for 2x upsampling with
    half-pixel-center convention: output u samples source (u + 0.5)/2 - 0.5,
    clamped to [0, src - 1]."""
    m = np.zeros((2 * src, src), dtype=dtype)
    for u in range(2 * src):
        s = min(max((u + 0.5) / 2.0 - 0.5, 0.0), src - 1.0)
        i0 = int(np.floor(s))
        i1 = min(i0 + 1, src - 1)
        t = s - i0
        m[u, i0] += 1.0 - t
        m[u, i1] += t
    return m


def upsample2x(x: np.ndarray, mode: str = "nearest") -> np.ndarray:
    """Double spatial resolution.  nearest duplicates each pixel into a 2x2
    block; bilinear uses the half-pixel-center convention with edge clamping."""
    _require_nchw(x, "upsample input")
    check_finite(x, "upsample input")
    if mode == "nearest":
        return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)
    if mode == "bilinear":
        n, c, h, w = x.shape
        mr = _bilinear_matrix(h, x.dtype)
        mc = _bilinear_matrix(w, x.dtype)
        tmp = np.einsum("ri,ncij->ncrj", mr, x)
        return np.einsum("cj,nmrj->nmrc", mc, tmp)
    raise ValueError(f"unknown upsample mode '{mode}'")


def upsample2x_backward(x_shape: tuple, mode: str, grad_out: np.ndarray) -> np.ndarray:
    n, c, h, w = x_shape
    if grad_out.shape != (n, c, 2 * h, 2 * w):
        raise ShapeError(f"grad_out shape {grad_out.shape} != ({n}, {c}, {2 * h}, {2 * w})")
    if mode == "nearest":
        return grad_out.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))
    if mode == "bilinear":
        mr = _bilinear_matrix(h, grad_out.dtype)
        mc = _bilinear_matrix(w, grad_out.dtype)
        tmp = np.einsum("ri,ncrj->ncij", mr, grad_out)
        return np.einsum("cj,nmic->nmij", mc, tmp)
    raise ValueError(f"unknown upsample mode '{mode}'")


def batchnorm(
    x: np.ndarray, s: BatchNormState, *, update_running: bool = True
) -> tuple[np.ndarray, dict]:
    """Normalize per channel.  Returns (output, cache) where cache feeds
    batchnorm_backward.  Train mode uses biased batch statistics over
    (n, h, w) and folds them into the running stats by momentum."""
    _require_nchw(x, "batchnorm input")
    if x.shape[1] != s.gamma.shape[0]:
        raise ShapeError(f"channel count {x.shape[1]} != BN channels {s.gamma.shape[0]}")
    if s.mode == "train":
        n, c, h, w = x.shape
        if n * h * w == 0:
            raise ValueError("batchnorm train mode requires a non-empty batch")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        if update_running:
            s.running_mean[...] = (1 - s.momentum) * s.running_mean + s.momentum * mean
            s.running_var[...] = (1 - s.momentum) * s.running_var + s.momentum * var
    else:
        mean, var = s.running_mean, s.running_var
    inv_std = 1.0 / np.sqrt(var + s.epsilon)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = s.gamma[None, :, None, None] * xhat + s.beta[None, :, None, None]
    cache = {"xhat": xhat, "inv_std": inv_std, "mode": s.mode, "gamma": s.gamma}
    return y, cache


def batchnorm_backward(
    grad_out: np.ndarray, cache: dict
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (grad_x, grad_gamma, grad_beta) for batchnorm."""
    xhat = cache["xhat"]
    inv_std = cache["inv_std"][None, :, None, None]
    gamma = cache["gamma"][None, :, None, None]
    grad_gamma = np.einsum("nchw,nchw->c", grad_out, xhat)
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    if cache["mode"] == "eval":
        return grad_out * gamma * inv_std, grad_gamma, grad_beta
    n, c, h, w = grad_out.shape
    m = n * h * w
    gxhat = grad_out * gamma
    grad_x = (
        inv_std
        / m
        * (
            m * gxhat
            - gxhat.sum(axis=(0, 2, 3), keepdims=True)
            - xhat * np.einsum("nchw,nchw->c", gxhat, xhat)[None, :, None, None]
        )
    )
    return grad_x, grad_gamma, grad_beta


def activation(x: np.ndarray, kind: str) -> np.ndarray:
    check_finite(x, "activation input")
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation '{kind}'")


def activation_backward(x: np.ndarray, kind: str, grad_out: np.ndarray) -> np.ndarray:
    if grad_out.shape != x.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != input shape {x.shape}")
    if kind == "relu":
        return grad_out * (x > 0)
    if kind == "sigmoid":
        s = sigmoid(x)
        return grad_out * s * (1 - s)
    raise ValueError(f"unknown activation '{kind}'")


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable sigmoid (separate branches for each sign)."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def eltwise(a: np.ndarray, b: np.ndarray, kind: str) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"eltwise operand shapes differ: {a.shape} vs {b.shape}")
    if kind == "mul":
        return a * b
    if kind == "add":
        return a + b
    raise ValueError(f"unknown eltwise kind '{kind}'")


def concat_channels(xs: list[np.ndarray]) -> np.ndarray:
    if not xs:
        raise ShapeError("concat_channels needs at least one input")
    base = (xs[0].shape[0],) + xs[0].shape[2:]
    for x in xs:
        _require_nchw(x, "concat input")
        if (x.shape[0],) + x.shape[2:] != base:
            raise ShapeError("concat inputs disagree on (n, h, w)")
    return np.concatenate(xs, axis=1)


# --- tensor snapshot file format -------------------------------------------

SNAPSHOT_MAGIC = b"SMET"
SNAPSHOT_VERSION = 1


def save_tensor(path_or_file, x: np.ndarray) -> None:
    """Write one array: magic 'SMET', u32 version, u32 rank, rank x u64 dims,
    then little-endian float32 values in row-major order."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    f = open(path_or_file, "wb") if own else path_or_file
    try:
        f.write(SNAPSHOT_MAGIC)
        f.write(struct.pack("<II", SNAPSHOT_VERSION, x.ndim))
        f.write(struct.pack(f"<{x.ndim}Q", *x.shape))
        f.write(np.ascontiguousarray(x, dtype="<f4").tobytes())
    finally:
        if own:
            f.close()


def load_tensor(path_or_file) -> np.ndarray:
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    f = open(path_or_file, "rb") if own else path_or_file
    try:
        magic = f.read(4)
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"bad tensor snapshot magic {magic!r}")
        version, rank = struct.unpack("<II", f.read(8))
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        dims = struct.unpack(f"<{rank}Q", f.read(8 * rank))
        count = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(f.read(4 * count), dtype="<f4", count=count)
        return data.reshape(dims).copy()
    finally:
        if own:
            f.close()

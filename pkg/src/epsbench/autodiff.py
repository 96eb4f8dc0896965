"""Dense-tensor engine with reverse-mode differentiation.

Covers exactly the layer set the CNN baselines need: 3x3 same-padding
convolution, batch normalization, ReLU and elementwise add, plus the ADAM
update and a finite-difference gradient checker. Activations are laid out
N x C x H x W, conv kernels O x I x Kh x Kw.

There is no general broadcasting: shapes must match exactly except for the
documented bias/affine broadcasts inside conv2d and batchnorm. Default
precision is 64-bit so gradient checks and oracle comparisons are
meaningful; call set_default_dtype(np.float32) to trade accuracy for speed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

_default_dtype = np.float64


def set_default_dtype(dtype) -> None:
    """Set the dtype newly created tensors use (float64 or float32)."""
    global _default_dtype
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ValueError(f"unsupported dtype {dt}; use float64 or float32")
    _default_dtype = dt.type


def get_default_dtype():
    return _default_dtype


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class Tensor:
    """N-dimensional value/gradient pair forming a reverse-mode graph node.

    Tensors are immutable values once created, except for the explicit
    in-place optimizer update in adam_step. `grad` is populated by
    backward() and has the same shape as `data` when present.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=_default_dtype)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"],
                backward: Callable[[np.ndarray], None]) -> "Tensor":
        """Wrap an op result, recording parents and the gradient rule."""
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = False
        out.name = ""
        out._parents = tuple(parents)
        out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(()))

    def needs_grad(self) -> bool:
        return self.requires_grad or bool(self._parents)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode pass seeding d(self)/d(self) = 1; scalar outputs only."""
        if self.size != 1:
            raise ShapeError(f"backward() requires a scalar output, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"


def param(data, name: str = "") -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(data, requires_grad=True, name=name)


def _check_same_shape(a: Tensor, b: Tensor, opname: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{opname}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# Convolution


def _im2col(xpt: np.ndarray, kh: int, kw: int, H: int, W: int) -> np.ndarray:
    """Stack kh*kw shifted views of padded channel-major input as (C*kh*kw, N*H*W)."""
    C, N = xpt.shape[:2]
    cols = np.empty((C, kh, kw, N, H, W), dtype=xpt.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xpt[:, :, i:i + H, j:j + W]
    return cols.reshape(C * kh * kw, N * H * W)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Stride-1 'same' convolution with zero padding.

    x: N x C x H x W, kernel: O x C x Kh x Kw (odd extents), bias: O.
    Output: N x O x H x W with
    out[n,o,y,x] = bias[o] + sum_{c,dy,dx} x[n,c,y+dy-ph, x+dx-pw] * kernel[o,c,dy,dx].
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be N x C x H x W, got {x.shape}")
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be O x C x Kh x Kw, got {kernel.shape}")
    N, C, H, W = x.shape
    O, Ci, kh, kw = kernel.shape
    if Ci != C:
        raise ShapeError(
            f"conv2d: kernel expects {Ci} input channels but input has {C}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if bias.shape != (O,):
        raise ShapeError(f"conv2d: bias must have shape ({O},), got {bias.shape}")
    ph, pw = kh // 2, kw // 2

    # channel-major im2col so forward/backward are single large GEMMs
    xpt = np.pad(x.data.transpose(1, 0, 2, 3),
                 ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _im2col(xpt, kh, kw, H, W)                     # (K, N*P)
    kmat = kernel.data.reshape(O, -1)                     # (O, K)
    out = (kmat @ cols).reshape(O, N, H, W).transpose(1, 0, 2, 3).copy()
    out += bias.data[None, :, None, None]

    def backward(g: np.ndarray) -> None:
        gt = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(O, -1)
        if bias.needs_grad():
            bias.accumulate_grad(gt.sum(axis=1))
        if kernel.needs_grad():
            kernel.accumulate_grad((gt @ cols.T).reshape(kernel.shape))
        if x.needs_grad():
            dcols = (kmat.T @ gt).reshape(C, kh, kw, N, H, W)
            dxpt = np.zeros_like(xpt)
            for i in range(kh):
                for j in range(kw):
                    dxpt[:, :, i:i + H, j:j + W] += dcols[:, i, j]
            x.accumulate_grad(
                dxpt[:, :, ph:ph + H, pw:pw + W].transpose(1, 0, 2, 3))

    return Tensor.from_op(out, (x, kernel, bias), backward)


# ---------------------------------------------------------------------------
# Batch normalization


@dataclass
class BatchNormState:
    """Per-channel running statistics updated by exponential moving average."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5
    initialized: bool = False

    @classmethod
    def for_channels(cls, channels: int, momentum: float = 0.9,
                     eps: float = 1e-5) -> "BatchNormState":
        return cls(
            running_mean=np.zeros(channels, dtype=_default_dtype),
            running_var=np.ones(channels, dtype=_default_dtype),
            momentum=momentum,
            eps=eps,
        )


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
              training: bool) -> Tensor:
    """Per-channel normalization followed by the gamma/beta affine map.

    Train mode computes batch statistics over N x H x W and updates the
    running stats; infer mode uses the running stats and requires them to
    have been initialized (by training or a checkpoint load).
    """
    if x.ndim != 4:
        raise ShapeError(f"batchnorm: input must be N x C x H x W, got {x.shape}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(
            f"batchnorm: gamma/beta must have shape ({C},), got {gamma.shape}/{beta.shape}")

    eps = state.eps
    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        m = state.momentum
        state.running_mean = m * state.running_mean + (1.0 - m) * mean
        state.running_var = m * state.running_var + (1.0 - m) * var
        state.initialized = True
    else:
        if not state.initialized:
            raise ValueError(
                "batchnorm: running statistics are uninitialized; train the model "
                "or load a checkpoint before inference")
        mean = state.running_mean
        var = state.running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g: np.ndarray) -> None:
        if beta.needs_grad():
            beta.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if gamma.needs_grad():
            gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)))
        if x.needs_grad():
            gxh = g * gamma.data[None, :, None, None]
            if training:
                mean_g = gxh.mean(axis=(0, 2, 3))
                mean_gx = (gxh * xhat).mean(axis=(0, 2, 3))
                dx = inv_std[None, :, None, None] * (
                    gxh - mean_g[None, :, None, None]
                    - xhat * mean_gx[None, :, None, None])
            else:
                dx = gxh * inv_std[None, :, None, None]
            x.accumulate_grad(dx)

    return Tensor.from_op(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# Elementwise ops


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); subgradient at exactly 0 is defined as 0."""
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)

    def backward(g: np.ndarray) -> None:
        if x.needs_grad():
            x.accumulate_grad(g * mask)

    return Tensor.from_op(out, (x,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two identically shaped tensors (skip connections)."""
    _check_same_shape(a, b, "add")
    out = a.data + b.data

    def backward(g: np.ndarray) -> None:
        if a.needs_grad():
            a.accumulate_grad(g)
        if b.needs_grad():
            b.accumulate_grad(g)

    return Tensor.from_op(out, (a, b), backward)


# ---------------------------------------------------------------------------
# ADAM


@dataclass
class AdamState:
    """Moment accumulators and step counter for the ADAM update."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray],
              state: AdamState) -> AdamState:
    """One bias-corrected ADAM update, applied to params in place.

    Moment accumulators are allocated as zeros on the first call; the step
    counter increments by exactly 1 per call.
    """
    if len(params) != len(grads):
        raise ShapeError(f"adam_step: {len(params)} params but {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g)
        if g.shape != p.data.shape:
            raise ShapeError(
                f"adam_step: grad shape {g.shape} does not match param "
                f"{p.name or i} shape {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"adam_step: non-finite gradient for parameter {p.name or i}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        p.data -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return state


# ---------------------------------------------------------------------------
# Gradient checking


def grad_check(fn: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max discrepancy between analytic and central-difference gradients.

    fn must be scalar-valued. Returns
    max over coordinates of |analytic - numeric| / max(1, |numeric|).
    Evaluate away from ReLU/L1 kinks (|values| > 10*h) for meaningful results.
    """
    probe = Tensor(x.data.copy(), requires_grad=True, name=x.name)
    out = fn(probe)
    if out.size != 1:
        raise ShapeError("grad_check: fn must be scalar-valued")
    out.backward()
    analytic = probe.grad.copy()

    flat = x.data.reshape(-1)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        hi = fn(Tensor(bumped.reshape(x.shape))).item()
        bumped[i] = flat[i] - h
        lo = fn(Tensor(bumped.reshape(x.shape))).item()
        numeric[i] = (hi - lo) / (2.0 * h)
    numeric = numeric.reshape(x.shape)

    denom = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))

"""Reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps a value array and, when gradients are enabled, a link to the
tensors it was computed from plus a closure that propagates gradients to
them. ``backward(loss)`` walks the graph in reverse topological order.
Gradient accumulation order is fixed by graph construction order, so results
are bit-deterministic for a fixed seed on the same build.

All ops run in the dtype of their inputs; float32 is the training default,
float64 is used for finite-difference verification.
"""

from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NeuralError

PROB_CLAMP = 1e-12
BN_EPS = 1e-5

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "name", "_parents", "_backward_fn")

    def __init__(self, values, requires_grad: bool = False, name: str = ""):
        self.values = np.asarray(values)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.values.shape}, dtype={self.values.dtype})"


def _result(values, parents, backward_fn) -> Tensor:
    out = Tensor(values)
    if _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents):
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
        out.requires_grad = True
    return out


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.ascontiguousarray(g) if g.base is not None else g
    else:
        t.grad = t.grad + g


def backward(loss: Tensor):
    """Propagate gradients from a scalar loss to every reachable tensor."""
    if loss.values.size != 1:
        raise NeuralError(f"backward expects a scalar loss, got shape {loss.values.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    loss.grad = np.ones_like(loss.values)
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


# ---------------------------------------------------------------------------
# Elementwise / scalar ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _result(a.values + b.values, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(g):
        _accum(a, g * c)

    return _result(a.values * c, (a,), bw)


def elu(x: Tensor) -> Tensor:
    pos = x.values > 0
    y = np.where(pos, x.values, np.expm1(x.values))

    def bw(g):
        _accum(x, g * np.where(pos, np.asarray(1.0, dtype=y.dtype), y + 1.0))

    return _result(y, (x,), bw)


def softmax(x: Tensor, axis: int = 1) -> Tensor:
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        _accum(x, p * (g - dot))

    return _result(p, (x,), bw)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise NeuralError(f"drop probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        def bw_id(g):
            _accum(x, g)

        return _result(x.values, (x,), bw_id)
    if rng is None:
        raise NeuralError("dropout in training mode requires an rng")
    mask = (rng.random(x.values.shape) >= p).astype(x.values.dtype) / (1.0 - p)

    def bw(g):
        _accum(x, g * mask)

    return _result(x.values * mask, (x,), bw)


# ---------------------------------------------------------------------------
# Shape ops
# ---------------------------------------------------------------------------

def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.values.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return _result(np.concatenate([t.values for t in tensors], axis=axis), tuple(tensors), bw)


def crop2d(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    def bw(g):
        full = np.zeros_like(x.values)
        full[:, :, top:top + height, left:left + width] = g
        _accum(x, full)

    return _result(x.values[:, :, top:top + height, left:left + width], (x,), bw)


def flatten(x: Tensor) -> Tensor:
    shape = x.values.shape

    def bw(g):
        _accum(x, g.reshape(shape))

    return _result(x.values.reshape(shape[0], -1), (x,), bw)


# ---------------------------------------------------------------------------
# Parameterized layers
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Tensor, dilation: int = 1) -> Tensor:
    """Valid-mode 2D cross-correlation with tap spacing ``dilation``.

    x: (B, C, H, W); weight: (F, C, k, k); bias: (F,) -> (B, F, H', W') with
    H' = H - dilation*(k-1). No padding is applied here; volume-level padding
    happens once before dense inference.
    """
    if dilation < 1:
        raise NeuralError(f"dilation must be >= 1, got {dilation}")
    b_, c, h, w = x.values.shape
    f, c2, k, k2 = weight.values.shape
    if c != c2 or k != k2:
        raise NeuralError(f"kernel shape {weight.values.shape} incompatible with input channels {c}")
    span = dilation * (k - 1)
    ho, wo = h - span, w - span
    if ho < 1 or wo < 1:
        raise NeuralError(
            f"input {h}x{w} smaller than dilated kernel footprint {span + 1}x{span + 1}"
        )

    acc = None
    for u in range(k):
        for v in range(k):
            xs = x.values[:, :, u * dilation:u * dilation + ho, v * dilation:v * dilation + wo]
            t = np.tensordot(weight.values[:, :, u, v], xs, axes=([1], [1]))
            acc = t if acc is None else acc + t
    out = acc.transpose(1, 0, 2, 3) + bias.values[None, :, None, None]

    def bw(g):
        _accum(bias, g.sum(axis=(0, 2, 3)))
        dw = np.empty_like(weight.values)
        need_dx = x.requires_grad or x._parents
        dx = np.zeros_like(x.values) if need_dx else None
        for u in range(k):
            for v in range(k):
                xs = x.values[:, :, u * dilation:u * dilation + ho, v * dilation:v * dilation + wo]
                dw[:, :, u, v] = np.tensordot(g, xs, axes=([0, 2, 3], [0, 2, 3]))
                if need_dx:
                    contrib = np.tensordot(weight.values[:, :, u, v], g, axes=([0], [1]))
                    dx[:, :, u * dilation:u * dilation + ho, v * dilation:v * dilation + wo] += (
                        contrib.transpose(1, 0, 2, 3)
                    )
        _accum(weight, dw)
        if need_dx:
            _accum(x, dx)

    return _result(out, (x, weight, bias), bw)


def maxpool2d(x: Tensor, pool: int, stride: int | None = None) -> Tensor:
    """Per-window maximum, valid mode."""
    if stride is None:
        stride = pool
    b_, c, h, w = x.values.shape
    if pool > h or pool > w:
        raise NeuralError(f"pool size {pool} exceeds spatial extent {h}x{w}")
    win = sliding_window_view(x.values, (pool, pool), axis=(2, 3))[:, :, ::stride, ::stride]
    bo, co, ho, wo = win.shape[:4]
    flat = win.reshape(bo, co, ho, wo, pool * pool)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        du, dv = np.divmod(arg, pool)
        bi, ci, ii, ji = np.indices((bo, co, ho, wo), sparse=False)
        dx = np.zeros_like(x.values)
        np.add.at(dx, (bi, ci, ii * stride + du, ji * stride + dv), g)
        _accum(x, dx)

    return _result(np.ascontiguousarray(out), (x,), bw)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine layer: (B, D) @ (D, U) + (U,)."""
    if x.values.ndim != 2:
        raise NeuralError(f"dense expects a 2D input, got shape {x.values.shape}")
    out = x.values @ weight.values + bias.values

    def bw(g):
        _accum(bias, g.sum(axis=0))
        _accum(weight, x.values.T @ g)
        if x.requires_grad or x._parents:
            _accum(x, g @ weight.values.T)

    return _result(out, (x, weight, bias), bw)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
              running_var: np.ndarray, training: bool, momentum: float = 0.1) -> Tensor:
    """Per-channel normalization.

    Training mode normalizes with minibatch statistics (biased variance) and
    updates the running buffers in place; inference mode uses the running
    averages as constants.
    """
    if x.values.ndim == 4:
        axes = (0, 2, 3)
        def expand(a):
            return a[None, :, None, None]
    elif x.values.ndim == 2:
        axes = (0,)
        def expand(a):
            return a[None, :]
    else:
        raise NeuralError(f"batchnorm expects 2D or 4D input, got shape {x.values.shape}")

    if training:
        if x.values.shape[0] == 1:
            raise NeuralError("batchnorm is undefined for training batches of size 1")
        mu = x.values.mean(axis=axes)
        var = x.values.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x.values - expand(mu)) * expand(inv_std)
        out = expand(gamma.values) * xhat + expand(beta.values)

        def bw(g):
            _accum(beta, g.sum(axis=axes))
            _accum(gamma, (g * xhat).sum(axis=axes))
            if x.requires_grad or x._parents:
                dxhat = g * expand(gamma.values)
                m1 = dxhat.mean(axis=axes)
                m2 = (dxhat * xhat).mean(axis=axes)
                _accum(x, expand(inv_std) * (dxhat - expand(m1) - xhat * expand(m2)))

        return _result(out, (x, gamma, beta), bw)

    inv_std = 1.0 / np.sqrt(running_var + BN_EPS)
    xhat = (x.values - expand(running_mean)) * expand(inv_std)
    out = expand(gamma.values) * xhat + expand(beta.values)

    def bw_inf(g):
        _accum(beta, g.sum(axis=axes))
        _accum(gamma, (g * xhat).sum(axis=axes))
        if x.requires_grad or x._parents:
            _accum(x, g * expand(gamma.values * inv_std))

    return _result(out, (x, gamma, beta), bw_inf)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def cross_entropy(probs: Tensor, targets: np.ndarray,
                  class_weights: np.ndarray | None = None) -> Tensor:
    """Mean negative log-probability of the target classes.

    probs: (B, K) or (B, K, H, W) distributions over the class axis (axis 1);
    targets: matching integer array (B,) or (B, H, W). Probabilities are
    clamped at 1e-12 before the log. With class_weights the per-sample terms
    are weighted by the target class weight and normalized by the weight sum.
    """
    targets = np.asarray(targets)
    n_classes = probs.values.shape[1]
    if targets.shape != probs.values.shape[:1] + probs.values.shape[2:]:
        raise NeuralError(
            f"target shape {targets.shape} incompatible with probabilities {probs.values.shape}"
        )
    if targets.size and (targets.min() < 0 or targets.max() >= n_classes):
        raise NeuralError(
            f"target class {int(targets.max())} out of range for {n_classes} classes"
        )
    t_idx = np.expand_dims(targets, axis=1)
    p_t = np.take_along_axis(probs.values, t_idx, axis=1)[:, 0]
    clamped = np.maximum(p_t, PROB_CLAMP)
    if class_weights is None:
        weights = np.ones_like(clamped)
    else:
        class_weights = np.asarray(class_weights, dtype=probs.values.dtype)
        if class_weights.shape != (n_classes,):
            raise NeuralError(f"class_weights must have shape ({n_classes},)")
        weights = class_weights[targets]
    weight_sum = weights.sum()
    loss = (weights * -np.log(clamped)).sum() / weight_sum

    def bw(g):
        d = np.where(p_t > PROB_CLAMP, -weights / (clamped * weight_sum), 0.0)
        dp = np.zeros_like(probs.values)
        np.put_along_axis(dp, t_idx, np.expand_dims(d, 1), axis=1)
        _accum(probs, dp * g)

    return _result(np.asarray(loss, dtype=probs.values.dtype), (probs,), bw)

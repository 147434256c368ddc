"""Dense float64 arrays with reverse-mode automatic differentiation.

Every operation on tracked tensors records its inputs and a backward
closure on the result, so the operation graph doubles as the gradient
tape: inputs always precede their consumers (topological order by
construction).  ``backward`` on a scalar walks that graph once in
reverse, accumulates a gradient per differentiable node and returns the
resulting map.  A graph can be walked only once; rebuilding the forward
pass resets the tape.

Tensors are immutable by convention once created (optimizers mutate
parameter ``data`` between steps, never mid-graph).  All math is 64-bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, StateError, TapeError

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording for eval-time forwards."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_done")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._done = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self._op})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, *axes)

    def sqrt(self):
        return sqrt(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def backward(self):
        return backward(self)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(data, parents, op: str) -> Tensor:
    """Wrap an op result, keeping graph edges only when tracking is on.

    Untracked inputs are dropped from the parent tuple so a tensor with
    requires_grad=False never appears as a differentiable input.
    """
    out = Tensor(data)
    if _grad_enabled:
        tracked = tuple(p for p in parents if p.requires_grad)
        if tracked:
            out.requires_grad = True
            out._parents = tracked
            out._op = op
    return out


def _accum(t: Tensor, g: np.ndarray):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _broadcast_data(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_data(a, b, "add")
    out = _result(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def _bw():
            _accum(a, _unbroadcast(out.grad, a.shape))
            _accum(b, _unbroadcast(out.grad, b.shape))
        out._backward = _bw
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_data(a, b, "sub")
    out = _result(a.data - b.data, (a, b), "sub")
    if out.requires_grad:
        def _bw():
            _accum(a, _unbroadcast(out.grad, a.shape))
            _accum(b, _unbroadcast(-out.grad, b.shape))
        out._backward = _bw
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_data(a, b, "mul")
    out = _result(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def _bw():
            _accum(a, _unbroadcast(out.grad * b.data, a.shape))
            _accum(b, _unbroadcast(out.grad * a.data, b.shape))
        out._backward = _bw
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_data(a, b, "div")
    out = _result(a.data / b.data, (a, b), "div")
    if out.requires_grad:
        def _bw():
            _accum(a, _unbroadcast(out.grad / b.data, a.shape))
            _accum(b, _unbroadcast(-out.grad * out.data / b.data, b.shape))
        out._backward = _bw
    return out


def scale(a, factor: float) -> Tensor:
    return mul(a, float(factor))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs 2-D (or batched) operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = _result(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def _bw():
            g = out.grad
            _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
            _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))
        out._backward = _bw
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = _result(np.tanh(a.data), (a,), "tanh")
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad * (1.0 - out.data * out.data))
        out._backward = _bw
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = _result(np.maximum(a.data, 0.0), (a,), "relu")
    if out.requires_grad:
        def _bw():
            # subgradient at exactly 0 is 0
            _accum(a, out.grad * (a.data > 0.0))
        out._backward = _bw
    return out


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = _result(np.sqrt(a.data), (a,), "sqrt")
    if out.requires_grad:
        def _bw():
            positive = out.data > 0.0
            denom = np.where(positive, out.data, 1.0)
            # subgradient pinned to 0 at the origin to keep training finite
            _accum(a, np.where(positive, 0.5 * out.grad / denom, 0.0))
        out._backward = _bw
    return out


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), "sum")
    if out.requires_grad:
        def _bw():
            g = out.grad
            if axis is not None and not keepdims:
                axes = (axis,) if isinstance(axis, int) else tuple(axis)
                for ax in sorted(ax % a.ndim for ax in axes):
                    g = np.expand_dims(g, ax)
            _accum(a, np.broadcast_to(g, a.shape).copy())
        out._backward = _bw
    return out


def tensor_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = 1
        for ax in axes:
            count *= a.shape[ax % a.ndim]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, *shape) -> Tensor:
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out = _result(a.data.reshape(shape), (a,), "reshape")
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad.reshape(a.shape))
        out._backward = _bw
    return out


def transpose(a, *axes) -> Tensor:
    a = as_tensor(a)
    if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    if not axes:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(ax % a.ndim for ax in axes)
    out = _result(np.transpose(a.data, axes), (a,), "transpose")
    if out.requires_grad:
        inverse = tuple(np.argsort(axes))
        def _bw():
            _accum(a, np.transpose(out.grad, inverse))
        out._backward = _bw
    return out


def _check_basic_index(key):
    items = key if isinstance(key, tuple) else (key,)
    for item in items:
        if not (item is None or item is Ellipsis or isinstance(item, (int, slice))):
            raise DimensionError("only basic indexing (ints, slices) is differentiable here")


def take(a, key) -> Tensor:
    a = as_tensor(a)
    _check_basic_index(key)
    out = _result(a.data[key].copy(), (a,), "take")
    if out.requires_grad:
        def _bw():
            g = np.zeros_like(a.data)
            g[key] = out.grad
            _accum(a, g)
        out._backward = _bw
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of zero tensors")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = _result(data, tuple(tensors), "concat")
    if out.requires_grad:
        sizes = [t.shape[axis] for t in tensors]
        def _bw():
            offset = 0
            index = [slice(None)] * out.ndim
            for t, size in zip(tensors, sizes):
                index[axis] = slice(offset, offset + size)
                _accum(t, out.grad[tuple(index)])
                offset += size
        out._backward = _bw
    return out


def sliding_windows(a, width: int) -> Tensor:
    """Unfold the trailing axis into overlapping windows.

    (..., T) -> (..., T - width + 1, width), stride 1, no padding.
    """
    a = as_tensor(a)
    if width < 1:
        raise DimensionError(f"window width must be positive, got {width}")
    length = a.shape[-1]
    if length < width:
        raise DimensionError(f"temporal length {length} is shorter than window width {width}")
    data = np.lib.stride_tricks.sliding_window_view(a.data, width, axis=-1).copy()
    out = _result(data, (a,), "windows")
    if out.requires_grad:
        steps = length - width + 1
        def _bw():
            g = np.zeros_like(a.data)
            for offset in range(width):
                g[..., offset:offset + steps] += out.grad[..., :, offset]
            _accum(a, g)
        out._backward = _bw
    return out


def conv1d(inputs, kernels, bias=None) -> Tensor:
    """Valid cross-correlation along the trailing (temporal) axis.

    inputs:  (channels_in, T) or (batch, channels_in, T)
    kernels: (channels_out, channels_in, width)
    bias:    (channels_out,) or None
    returns  (..., channels_out, T - width + 1)
    """
    inputs = as_tensor(inputs)
    kernels = as_tensor(kernels)
    if kernels.ndim != 3:
        raise DimensionError(f"kernels must be (out, in, width), got {kernels.shape}")
    single = inputs.ndim == 2
    if single:
        inputs = reshape(inputs, (1,) + inputs.shape)
    if inputs.ndim != 3:
        raise DimensionError(f"conv1d input must be 2-D or 3-D, got {inputs.shape}")
    batch, chans_in, length = inputs.shape
    chans_out, k_in, width = kernels.shape
    if k_in != chans_in:
        raise DimensionError(f"conv1d channel mismatch: input {chans_in}, kernels expect {k_in}")
    if length < width:
        raise DimensionError(f"temporal length {length} is shorter than kernel width {width}")
    steps = length - width + 1
    win = sliding_windows(inputs, width)                      # (B, C_in, steps, W)
    win = transpose(win, (0, 2, 1, 3))                        # (B, steps, C_in, W)
    win = reshape(win, (batch, steps, chans_in * width))
    kmat = transpose(reshape(kernels, (chans_out, chans_in * width)), (1, 0))
    out = matmul(win, kmat)                                   # (B, steps, C_out)
    out = transpose(out, (0, 2, 1))                           # (B, C_out, steps)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (chans_out,):
            raise DimensionError(f"bias must be ({chans_out},), got {bias.shape}")
        out = add(out, reshape(bias, (1, chans_out, 1)))
    if single:
        out = reshape(out, (chans_out, steps))
    return out


@dataclass
class Mode:
    """Forward-pass context: training vs eval plus the noise source."""

    training: bool
    rng: np.random.Generator | None = None

    @classmethod
    def train(cls, rng: np.random.Generator) -> "Mode":
        return cls(True, rng)

    @classmethod
    def eval(cls) -> "Mode":
        return cls(False, None)


@dataclass
class RunningStats:
    """Exponential running mean/variance for batch normalization."""

    momentum: float = 0.1
    eps: float = 1e-5
    mean: np.ndarray | None = None
    var: np.ndarray | None = None

    @property
    def initialized(self) -> bool:
        return self.mean is not None

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray):
        if self.mean is None:
            self.mean = np.zeros_like(batch_mean)
            self.var = np.ones_like(batch_var)
        m = self.momentum
        self.mean = (1.0 - m) * self.mean + m * batch_mean
        self.var = (1.0 - m) * self.var + m * batch_var

    def copy(self) -> "RunningStats":
        return RunningStats(
            self.momentum,
            self.eps,
            None if self.mean is None else self.mean.copy(),
            None if self.var is None else self.var.copy(),
        )


def batchnorm(inputs, gamma, beta, stats: RunningStats, mode: Mode, channel_axis: int = 0) -> Tensor:
    """Normalize per channel over every other axis, then apply the affine pair.

    Train mode uses batch statistics and folds them into ``stats`` with the
    configured momentum (unbiased variance, like the usual convention).
    Eval mode is deterministic and requires initialized running stats.
    """
    inputs = as_tensor(inputs)
    gamma = as_tensor(gamma)
    beta = as_tensor(beta)
    axis = channel_axis % inputs.ndim
    channels = inputs.shape[axis]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise DimensionError(
            f"gamma/beta must be ({channels},), got {gamma.shape} and {beta.shape}")
    bshape = [1] * inputs.ndim
    bshape[axis] = channels
    gamma_b = reshape(gamma, bshape)
    beta_b = reshape(beta, bshape)
    pooled = tuple(i for i in range(inputs.ndim) if i != axis)
    if mode.training:
        mu = tensor_mean(inputs, axis=pooled, keepdims=True)
        centered = sub(inputs, mu)
        var = tensor_mean(mul(centered, centered), axis=pooled, keepdims=True)
        normalized = div(centered, sqrt(add(var, stats.eps)))
        n = inputs.size // channels
        batch_var = var.data.reshape(channels)
        unbiased = batch_var * (n / (n - 1)) if n > 1 else batch_var
        stats.update(mu.data.reshape(channels), unbiased)
    else:
        if not stats.initialized:
            raise StateError("eval-mode batchnorm before any training batch")
        mean_b = stats.mean.reshape(bshape)
        std_b = np.sqrt(stats.var + stats.eps).reshape(bshape)
        normalized = div(sub(inputs, Tensor(mean_b)), Tensor(std_b))
    return add(mul(gamma_b, normalized), beta_b)


def dropout(inputs, rate: float, rng: np.random.Generator | None, mode: Mode) -> Tensor:
    """Inverted dropout: train-time zeroing with 1/(1-rate) rescale, eval identity."""
    inputs = as_tensor(inputs)
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    if not mode.training or rate == 0.0:
        return inputs
    if rng is None:
        raise ConfigurationError("train-mode dropout needs an rng")
    mask = (rng.random(inputs.shape) >= rate) / (1.0 - rate)
    return mul(inputs, Tensor(mask))


def backward(loss: Tensor) -> dict:
    """Reverse-mode sweep from a scalar loss.

    Returns a map from every reachable differentiable tensor to its
    gradient (leaves keep it in ``.grad`` as well).  A second sweep over
    the same graph raises; rebuild the forward pass instead.
    """
    if not isinstance(loss, Tensor):
        raise TapeError("backward expects a Tensor")
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise TapeError("loss is detached from the tape (requires_grad is False)")

    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    if any(node._done for node in topo if node._backward is not None):
        raise TapeError("this graph was already consumed by backward; rebuild the forward pass")

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._done = True
            node._backward()
    return {node: node.grad for node in topo if node.grad is not None}


def zero_grads(tensors):
    for t in tensors:
        t.grad = None

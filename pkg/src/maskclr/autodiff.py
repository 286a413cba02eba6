"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is taped implicitly: each operation returns a new Tensor that
remembers its parent tensors and a closure pushing gradients back to them.
A fresh graph is recorded on every forward pass and ``backward`` may run
once per graph. Tensors belonging to one graph must stay on one thread;
independent graphs are safe to run in parallel.

Every forward result is checked for NaN/Inf and aborts with
:class:`NonFiniteError` — silent NaN is the dominant failure mode in loss
code, so it is never allowed to propagate.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ContractError,
    DegenerateVectorError,
    DimensionError,
    NonFiniteError,
)

# Norm threshold below which a vector counts as degenerate.
EPS_NORM = 1e-12


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by '{op}'")


def _unbroadcast(grad, shape):
    """Sum a gradient over the axes the forward op broadcast along."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_done")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        _check_finite(self.data, "tensor")
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def _accum(self, g):
        self.grad = np.array(g) if self.grad is None else self.grad + g

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def backward(self):
        """Populate .grad on every reachable tensor with requires_grad."""
        if self.data.shape != ():
            raise ContractError("backward() needs a scalar seed")
        if self._done:
            raise ContractError("backward() already ran on this graph; re-record the forward pass")
        self._done = True

        topo, seen, stack = [], set(), [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self):
        return transpose(self)

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _node(data, parents, backward, op):
    _check_finite(data, op)
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def add(a, b):
    a, b = _lift(a), _lift(b)
    with np.errstate(over="ignore", invalid="ignore"):
        out_data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.data.shape))

    return _node(out_data, (a, b), bw, "add")


def mul(a, b):
    a, b = _lift(a), _lift(b)
    with np.errstate(over="ignore", invalid="ignore"):
        out_data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.data.shape))

    return _node(out_data, (a, b), bw, "mul")


def div(a, b):
    a, b = _lift(a), _lift(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = a.data / b.data

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(out_data, (a, b), bw, "div")


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} x {b.shape} do not conform")
    with np.errstate(over="ignore", invalid="ignore"):
        out_data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return _node(out_data, (a, b), bw, "matmul")


def transpose(x):
    x = _lift(x)
    if x.ndim != 2:
        raise DimensionError("transpose expects a 2-D tensor")

    def bw(g):
        x._accum(g.T)

    return _node(x.data.T.copy(), (x,), bw, "transpose")


def reshape(x, shape):
    x = _lift(x)
    old = x.data.shape

    def bw(g):
        x._accum(g.reshape(old))

    return _node(x.data.reshape(shape), (x,), bw, "reshape")


def concat(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def bw(g):
        pieces = np.split(g, offsets, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accum(piece)

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def tensor_sum(x, axis=None, keepdims=False):
    x = _lift(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if not x.requires_grad:
            return
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(a % x.data.ndim for a in axes)
            shape = [1 if i in axes else n for i, n in enumerate(x.data.shape)]
            g = np.reshape(g, shape)
        x._accum(np.broadcast_to(g, x.data.shape))

    return _node(out_data, (x,), bw, "sum")


def tensor_mean(x, axis=None, keepdims=False):
    x = _lift(x)
    count = x.data.size if axis is None else np.prod(
        [x.data.shape[a % x.data.ndim] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tensor_sum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def exp(x):
    x = _lift(x)
    with np.errstate(over="ignore"):
        out_data = np.exp(x.data)

    def bw(g):
        x._accum(g * out_data)

    return _node(out_data, (x,), bw, "exp")


def log(x):
    x = _lift(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(x.data)

    def bw(g):
        x._accum(g / x.data)

    return _node(out_data, (x,), bw, "log")


def sqrt(x):
    x = _lift(x)
    out_data = np.sqrt(x.data)

    def bw(g):
        x._accum(g * 0.5 / out_data)

    return _node(out_data, (x,), bw, "sqrt")


def relu(x):
    x = _lift(x)
    keep = x.data > 0

    def bw(g):
        x._accum(g * keep)

    return _node(np.where(keep, x.data, 0.0), (x,), bw, "relu")


def sigmoid(x):
    x = _lift(x)
    out_data = 1.0 / (1.0 + np.exp(-x.data))

    def bw(g):
        x._accum(g * out_data * (1.0 - out_data))

    return _node(out_data, (x,), bw, "sigmoid")


def softmax(x, axis=-1):
    """Numerically stable softmax; rows along `axis` sum to 1."""
    x = _lift(x)
    shift = Tensor(-x.data.max(axis=axis, keepdims=True))  # constant, keeps exp in range
    e = exp(add(x, shift))
    return div(e, tensor_sum(e, axis=axis, keepdims=True))


def hard_threshold(x):
    """Binarize at 0.5 with a straight-through gradient.

    Forward emits exactly 0.0 or 1.0; backward passes the incoming
    gradient through unchanged, as if the op were the identity.
    """
    x = _lift(x)
    out_data = (x.data >= 0.5).astype(np.float64)

    def bw(g):
        x._accum(g)

    return _node(out_data, (x,), bw, "hard_threshold")


def affine(x, w, b):
    """x @ w + b for a batch of row vectors."""
    x, w, b = _lift(x), _lift(w), _lift(b)
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise DimensionError("affine expects x: NxI, w: IxO, b: O")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise DimensionError(f"affine shapes {x.shape}, {w.shape}, {b.shape} do not conform")
    return add(matmul(x, w), b)


def conv2d(x, kernel, stride=1):
    """Valid (unpadded) cross-correlation of NCHW input with FCkk kernels."""
    x, kernel = _lift(x), _lift(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError("conv2d expects x: NCHW and kernel: FCkk")
    n, c, h, w = x.shape
    f, kc, kh, kw = kernel.shape
    if kc != c:
        raise DimensionError(f"kernel channels {kc} != input channels {c}")
    if kh > h or kw > w:
        raise DimensionError(f"kernel {kh}x{kw} larger than input {h}x{w}")
    if stride < 1:
        raise DimensionError("stride must be a positive int")
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1

    windows = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # N,C,Ho,Wo,kh,kw
    with np.errstate(over="ignore", invalid="ignore"):
        out_data = np.einsum("nchwuv,fcuv->nfhw", windows, kernel.data, optimize=True)

    def bw(g):
        if kernel.requires_grad:
            kernel._accum(np.einsum("nfhw,nchwuv->fcuv", g, windows, optimize=True))
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for u in range(kh):
                for v in range(kw):
                    gx[:, :, u : u + ho * stride : stride, v : v + wo * stride : stride] += np.einsum(
                        "nfhw,fc->nchw", g, kernel.data[:, :, u, v], optimize=True
                    )
            x._accum(gx)

    return _node(out_data, (x, kernel), bw, "conv2d")


def l2_normalize(v):
    """Scale a vector (or each row of a matrix) to unit Euclidean norm."""
    v = _lift(v)
    if v.ndim not in (1, 2):
        raise DimensionError("l2_normalize expects a vector or a matrix of row vectors")
    sq = tensor_sum(mul(v, v), axis=-1, keepdims=True)
    if np.any(np.sqrt(sq.data) <= EPS_NORM):
        raise DegenerateVectorError("cannot normalize a (near-)zero vector")
    return div(v, sqrt(sq))


def cosine_sim(u, v):
    """Cosine similarity of two vectors as a differentiable scalar."""
    u, v = _lift(u), _lift(v)
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
        raise DimensionError("cosine_sim expects two equal-length vectors")
    return tensor_sum(mul(l2_normalize(u), l2_normalize(v)))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place on the parameter data."""
    if len(params) != len(grads):
        raise DimensionError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise DimensionError(f"grad shape {g.shape} != param shape {p.data.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


def finite_diff_check(f, params, eps=1e-5, max_coords_per_param=16, rng=None):
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` must be a deterministic closure over ``params`` returning a scalar
    Tensor from a freshly recorded forward pass. Returns the max over the
    sampled coordinates of |analytic - numeric| / max(1, |analytic|).
    """
    if not (1e-7 <= eps <= 1e-4):
        raise ContractError("eps must lie in [1e-7, 1e-4]")
    if rng is None:
        rng = np.random.default_rng(0)

    for p in params:
        p.zero_grad()
    f(params).backward()
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]
    for p in params:
        p.zero_grad()

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = a.reshape(-1)
        n = flat.size
        if n <= max_coords_per_param:
            coords = range(n)
        else:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f(params).data)
            flat[i] = orig - eps
            lo = float(f(params).data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            rel = abs(aflat[i] - numeric) / max(1.0, abs(aflat[i]))
            worst = max(worst, rel)
    return worst

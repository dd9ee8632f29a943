"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op returns a new :class:`Tensor`; nothing that takes part in a graph is
mutated in place.  ``backward`` walks the recorded graph once in reverse
topological order and accumulates gradients into ``.grad`` of the leaves that
asked for them.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording for the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = op

    # -- basic protocol -----------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- graph --------------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _toposort(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce("sum", self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce("mean", self, axis, keepdims)

    def max(self, axis=None, keepdims: bool = False):
        return reduce("max", self, axis, keepdims)

    def min(self, axis=None, keepdims: bool = False):
        return reduce("min", self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def abs(self):
        return absolute(self)

    def relu(self):
        return relu(self)


def _toposort(root: Tensor) -> list[Tensor]:
    # iterative DFS; each node appears once, root first
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    order.reverse()
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    needs = grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, op=op)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise ---------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), bw, "div")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)

    def bw(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(a.data ** p, (a,), bw, "pow")


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # branch-free stable logistic
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid_np(a.data)

    def bw(g):
        return (g * s * (1.0 - s),)

    return _make(s, (a,), bw, "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)

    def bw(g):
        return (g * (1.0 - t * t),)

    return _make(t, (a,), bw, "tanh")


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)

    def bw(g):
        return (g * e,)

    return _make(e, (a,), bw, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), bw, "log")


def absolute(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        # np.sign(0) == 0 gives the zero subgradient at the kink
        return (g * np.sign(a.data),)

    return _make(np.abs(a.data), (a,), bw, "abs")


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0

    def bw(g):
        return (g * on,)

    return _make(np.where(on, a.data, 0.0), (a,), bw, "relu")


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)

    def bw(g):
        return (g * inside,)

    return _make(np.clip(a.data, lo, hi), (a,), bw, "clip")


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "exp": exp, "log": log, "abs": absolute, "relu": relu}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch an elementwise op by name (``add``, ``sigmoid``, ...)."""
    if op in _BINARY:
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    if op in _UNARY:
        return _UNARY[op](a)
    raise ValueError(f"unknown elementwise op {op!r}")


# -- linear algebra --------------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules on leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), bw, "matmul")


# -- shape ops ---------------------------------------------------------------
def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape

    def bw(g):
        return (g.reshape(src),)

    return _make(a.data.reshape(shape), (a,), bw, "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))

    def bw(g):
        return (np.transpose(g, inv),)

    return _make(np.transpose(a.data, axes), (a,), bw, "transpose")


def index(a, idx) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), bw, "index")


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, bw, "concat")


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(np.stack([t.data for t in ts], axis=axis), ts, bw, "stack")


# -- reductions ----------------------------------------------------------------
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def reduce(op: str, x, axis=None, keepdims: bool = False) -> Tensor:
    """Reduce with ``sum``/``mean``/``max``/``min``; the axis is dropped unless ``keepdims``.

    max/min send the whole gradient to the first extremal element in flat
    (row-major) order along the reduced axes.
    """
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    keep_shape = tuple(1 if i in axes else n for i, n in enumerate(x.shape))
    count = int(np.prod([x.shape[i] for i in axes])) if axes else 1

    if op == "sum":
        out = x.data.sum(axis=axes)

        def bw(g):
            return (np.broadcast_to(g.reshape(keep_shape), x.shape).copy(),)
    elif op == "mean":
        out = x.data.sum(axis=axes) / count

        def bw(g):
            return (np.broadcast_to(g.reshape(keep_shape) / count, x.shape).copy(),)
    elif op in ("max", "min"):
        rest = tuple(i for i in range(x.ndim) if i not in axes)
        moved = np.transpose(x.data, rest + axes)
        flat = moved.reshape(moved.shape[: len(rest)] + (-1,))
        arg = flat.argmax(axis=-1) if op == "max" else flat.argmin(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

        def bw(g):
            gf = np.zeros_like(flat)
            np.put_along_axis(gf, arg[..., None], np.asarray(g)[..., None], axis=-1)
            gm = gf.reshape(moved.shape)
            return (np.transpose(gm, np.argsort(rest + axes)),)
    else:
        raise ValueError(f"unknown reduction {op!r}")
    out = np.asarray(out, dtype=np.float64)
    if keepdims:
        out = out.reshape(keep_shape)
        inner = bw

        def bw(g):
            return inner(g.reshape(tuple(n for i, n in enumerate(x.shape) if i not in axes)))
    return _make(out, (x,), bw, op)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    _norm_axis(axis, x.ndim)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), bw, "softmax")


# -- convolution -----------------------------------------------------------------
def _triple(v):
    if isinstance(v, int):
        return (v, v, v)
    return tuple(v)


def conv3d(x, w, bias=None, stride=1, padding: int = 0, temporal_padding: int = 0,
           temporal_mode: str = "zero") -> Tensor:
    """3D cross-correlation (no kernel flip).

    ``x`` is ``C_in x T x H x W`` or batched ``N x C_in x T x H x W``; ``w`` is
    ``C_out x C_in x t x k x k``.  ``stride`` is a spatial int or a
    ``(t, h, w)`` triple.  Spatial padding is zeros; temporal padding is zeros
    or edge replication (``temporal_mode="replicate"``).
    """
    x, w = as_tensor(x), as_tensor(w)
    squeeze = x.ndim == 4
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 5 or w.ndim != 5:
        raise ShapeError(f"conv3d expects 5-d input/kernel, got {x.shape} and {w.shape}")
    if xd.shape[1] != w.shape[1]:
        raise ShapeError(f"conv3d channel mismatch: input {x.shape}, kernel {w.shape}")
    if temporal_mode not in ("zero", "replicate"):
        raise ValueError(f"temporal_mode must be 'zero' or 'replicate', not {temporal_mode!r}")
    st, sh, sw = (1, stride, stride) if isinstance(stride, int) else _triple(stride)
    p, pt = int(padding), int(temporal_padding)
    kt, kh, kw = w.shape[2:]

    xp = np.pad(xd, ((0, 0), (0, 0), (0, 0), (p, p), (p, p)))
    if pt:
        xp = np.pad(xp, ((0, 0), (0, 0), (pt, pt), (0, 0), (0, 0)),
                    mode="edge" if temporal_mode == "replicate" else "constant")
    N, C, Tp, Hp, Wp = xp.shape
    if kt > Tp or kh > Hp or kw > Wp:
        raise ShapeError(f"kernel {w.shape[2:]} larger than padded input {(Tp, Hp, Wp)}")
    To = (Tp - kt) // st + 1
    Ho = (Hp - kh) // sh + 1
    Wo = (Wp - kw) // sw + 1
    wd = w.data

    def window(a, b, c):
        return (slice(None), slice(None),
                slice(a, a + st * (To - 1) + 1, st),
                slice(b, b + sh * (Ho - 1) + 1, sh),
                slice(c, c + sw * (Wo - 1) + 1, sw))

    offsets = [(a, b, c) for a in range(kt) for b in range(kh) for c in range(kw)]
    acc = np.zeros((N, To, Ho, Wo, wd.shape[0]))
    for a, b, c in offsets:
        acc += np.tensordot(xp[window(a, b, c)], wd[:, :, a, b, c], axes=([1], [1]))
    out = np.moveaxis(acc, -1, 1)
    parents = [x, w]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data.reshape(1, -1, 1, 1, 1)
        parents.append(bias)
    out = np.ascontiguousarray(out)

    def bw(g):
        g5 = g[None] if squeeze else g
        gl = np.moveaxis(g5, 1, -1)  # N To Ho Wo Cout
        gw = np.zeros_like(wd) if w.requires_grad else None
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for a, b, c in offsets:
            sl = window(a, b, c)
            if gw is not None:
                gw[:, :, a, b, c] = np.tensordot(gl, xp[sl], axes=([0, 1, 2, 3], [0, 2, 3, 4]))
            if gxp is not None:
                gxp[sl] += np.moveaxis(np.tensordot(gl, wd[:, :, a, b, c], axes=([4], [0])), -1, 1)
        gx = None
        if gxp is not None:
            if pt:
                core = gxp[:, :, pt:Tp - pt].copy()
                if temporal_mode == "replicate":
                    core[:, :, :1] += gxp[:, :, :pt].sum(axis=2, keepdims=True)
                    core[:, :, -1:] += gxp[:, :, Tp - pt:].sum(axis=2, keepdims=True)
            else:
                core = gxp
            gx = core[:, :, :, p:Hp - p, p:Wp - p]
            if squeeze:
                gx = gx[0]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g5.sum(axis=(0, 2, 3, 4)))
        return tuple(grads)

    if squeeze:
        out = out[0]
    return _make(out, parents, bw, "conv3d")


# -- gradient checking --------------------------------------------------------------
def numeric_grad(f: Callable[[Tensor], Tensor], x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = out.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(Tensor(x.copy())).item()
            flat[i] = orig - eps
            fm = f(Tensor(x.copy())).item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * eps)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-6) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` maps a tensor to a scalar tensor.  Relative error per coordinate is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    x0 = np.array(as_tensor(x).data, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    y = f(xt)
    if not np.all(np.isfinite(y.data)):
        raise ValueError("grad_check: f(x) is not finite")
    y.backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(x0)
    return relative_error(analytic, numeric_grad(f, x0, eps))


def directional_grad_check(f: Callable[[Tensor], Tensor], x, n_directions: int = 10,
                           eps: tuple = (1e-5, 1e-6), seed: int = 0) -> float:
    """Max relative error of ``grad . v`` against central differences along random unit ``v``.

    Better conditioned than the per-coordinate check when some gradient
    entries are many orders of magnitude below ``|f|``.  Each direction is
    scored with the best of the step sizes in ``eps``: a large step can
    straddle a ReLU or max kink, a small one loses digits to round-off, but a
    wrong analytic gradient disagrees at every step.
    """
    steps = (eps,) if np.isscalar(eps) else tuple(eps)
    x0 = np.array(as_tensor(x).data, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    y = f(xt)
    if not np.all(np.isfinite(y.data)):
        raise ValueError("directional_grad_check: f(x) is not finite")
    y.backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(x0)
    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for _ in range(n_directions):
            v = rng.normal(size=x0.shape)
            v /= np.linalg.norm(v)
            ana = float(np.sum(analytic * v))
            errs = []
            for h in steps:
                num = (f(Tensor(x0 + h * v)).item() - f(Tensor(x0 - h * v)).item()) / (2.0 * h)
                errs.append(abs(ana - num) / max(abs(ana), abs(num), 1e-8))
            worst = max(worst, min(errs))
    return worst

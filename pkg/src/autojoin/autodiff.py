"""A small reverse-mode autodiff engine over numpy arrays.

Only the operations the joint steering model and the attacks need are here:
convolution (plain and transposed), dense layers, nearest upsampling, ReLU,
Sigmoid, reshaping, elementwise add/scale and the two regression losses. Each op records its
parents and a closure that maps the output gradient to parent gradients;
:func:`backward` walks the graph in reverse topological order.
"""

from __future__ import annotations

import base64
import contextlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

_DEFAULT_DTYPE = np.float32


class NonFiniteError(ArithmeticError):
    """Raised when a forward or backward pass yields NaN or Inf."""


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the dtype new tensors are created with (e.g. float64 for grad checks)."""
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


def _check_finite(arr, where):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {where}")
    return arr


class Tensor:
    """Dense array plus optional gradient buffer and graph links."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @classmethod
    def _from_op(cls, data, parents, backward_fn, op):
        out = cls.__new__(cls)
        out.data = _check_finite(data, op)
        out.grad = None
        out.op = op
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self)

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other, self.dtype), -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__


def _raise_not_scalar(t):
    raise ValueError(f"expected a single-element tensor, got shape {t.shape}")


def _as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


# ---------------------------------------------------------------------------
# graph traversal


def topological_order(root):
    """Nodes reachable from ``root`` that take part in differentiation, parents first."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is detached from every requires_grad leaf")

    order = topological_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = node.grad + g if node.grad is not None else g.copy()
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            _check_finite(pg, f"backward of {node.op}")
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# operations


def conv2d(x, weight, bias, stride=1, padding=0):
    """Cross-correlation of NCHW ``x`` with OIHW ``weight``."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"conv2d channel mismatch: input has {c}, weight expects {ci}")
    if bias is not None and bias.shape != (o,):
        raise ValueError(f"conv2d bias shape {bias.shape} does not match {o} output channels")
    if stride < 1:
        raise ValueError("conv2d stride must be positive")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError(f"conv2d kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}")

    cols = kernels.im2col(x.data, kh, kw, stride, padding)
    wmat = weight.data.reshape(o, -1)
    out2d = cols @ wmat.T
    if bias is not None:
        out2d += bias.data
    out = np.ascontiguousarray(out2d.reshape(n, oh, ow, o).transpose(0, 3, 1, 2))

    def _backward(g):
        g2d = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (g2d.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = g2d.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gx = kernels.col2im(g2d @ wmat, x.shape, kh, kw, stride, padding)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, _backward, "conv2d")


def conv_transpose2d(x, weight, bias, stride=2, padding=1):
    """Transposed convolution of NCHW ``x`` with weight laid out (in, out, kh, kw)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv_transpose2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    ci, o, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"conv_transpose2d channel mismatch: input has {c}, weight expects {ci}")
    if bias is not None and bias.shape != (o,):
        raise ValueError(f"conv_transpose2d bias shape {bias.shape} does not match {o} output channels")
    oh = (h - 1) * stride - 2 * padding + kh
    ow = (w - 1) * stride - 2 * padding + kw
    if oh < 1 or ow < 1:
        raise ValueError("conv_transpose2d output would be empty")

    x2d = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
    wmat = weight.data.reshape(c, -1)
    out = kernels.col2im(x2d @ wmat, (n, o, oh, ow), kh, kw, stride, padding)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def _backward(g):
        gcols = kernels.im2col(g, kh, kw, stride, padding)
        gw = (x2d.T @ gcols).reshape(weight.shape) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gx = np.ascontiguousarray((gcols @ wmat.T).reshape(n, h, w, c).transpose(0, 3, 1, 2))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, _backward, "conv_transpose2d")


def dense(x, weight, bias):
    """Affine map ``x @ weight + bias`` with x: N x F, weight: F x G."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ValueError(f"dense expects 2-d input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ValueError(f"dense inner dimensions disagree: {x.shape[1]} vs {weight.shape[0]}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ValueError(f"dense bias shape {bias.shape} does not match {weight.shape[1]} outputs")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def _backward(g):
        gx = g @ weight.data.T if x.requires_grad else None
        gw = x.data.T @ g if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, _backward, "dense")


def relu(x):
    mask = x.data > 0
    return Tensor._from_op(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x):
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return Tensor._from_op(s.astype(x.dtype, copy=False), (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def reshape(x, shape):
    old = x.shape
    return Tensor._from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def flatten(x):
    return reshape(x, (x.shape[0], -1))


def upsample_nearest(x, factor=2):
    """Repeat each pixel of an NCHW tensor ``factor`` times along H and W."""
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    n, c, h, w = x.shape

    def _backward(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return Tensor._from_op(out, (x,), _backward, "upsample")


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(out, (a, b), _backward, "add")


def mul(a, b):
    out = a.data * b.data

    def _backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._from_op(out, (a, b), _backward, "mul")


def scale(x, factor):
    f = float(factor)
    return Tensor._from_op(x.data * x.dtype.type(f), (x,), lambda g: (g * f,), "scale")


def tsum(x):
    return Tensor._from_op(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def mean(x):
    n = x.data.size
    return Tensor._from_op(
        np.asarray(x.data.mean()), (x,), lambda g: (np.full(x.shape, g / n, dtype=x.dtype),), "mean"
    )


def _loss_shapes(pred, target, name):
    if pred.shape != target.shape:
        raise ValueError(f"{name}: prediction shape {pred.shape} differs from target shape {target.shape}")


def l1_loss(pred, target):
    """Mean absolute difference; subgradient 0 where pred == target."""
    target = _as_tensor(target, pred.dtype)
    _loss_shapes(pred, target, "l1_loss")
    diff = pred.data - target.data
    n = diff.size
    value = np.asarray(np.abs(diff).mean(), dtype=diff.dtype)

    def _backward(g):
        s = np.sign(diff) * (g / n)
        return s, -s

    return Tensor._from_op(value, (pred, target), _backward, "l1_loss")


def l2_loss(pred, target):
    """Mean squared difference."""
    target = _as_tensor(target, pred.dtype)
    _loss_shapes(pred, target, "l2_loss")
    diff = pred.data - target.data
    n = diff.size
    value = np.asarray(np.square(diff).mean(), dtype=diff.dtype)

    def _backward(g):
        d = diff * (2.0 * g / n)
        return d, -d

    return Tensor._from_op(value, (pred, target), _backward, "l2_loss")


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place on ``params`` (a list of arrays)."""
    if len(params) != len(grads):
        raise ValueError(f"got {len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ValueError("Adam state was initialised for a different parameter list")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"Adam shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    step_size = state.lr * np.sqrt(1.0 - b2**t) / (1.0 - b1**t)
    eps_hat = state.eps * np.sqrt(1.0 - b2**t)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= (step_size * m / (np.sqrt(v) + eps_hat)).astype(p.dtype, copy=False)
    return params, state


class Adam:
    """Thin stateful wrapper over :func:`adam_step` for a list of leaf tensors."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_FORMAT = "autojoin-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params, meta=None):
    """Write ``{name: array}`` as JSON with base64 little-endian float32 payloads."""
    entries = {}
    for name in sorted(params):
        arr = params[name]
        arr = arr.data if isinstance(arr, Tensor) else np.asarray(arr)
        payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries[name] = {"shape": list(arr.shape), "data": base64.b64encode(payload).decode("ascii")}
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dtype": "float32-le",
        "meta": meta or {},
        "params": entries,
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(params, meta)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    doc = json.loads(path.read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not an autojoin checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    params = {}
    for name, entry in doc["params"].items():
        raw = base64.b64decode(entry["data"])
        arr = np.frombuffer(raw, dtype="<f4").astype(np.float32)
        shape = tuple(entry["shape"])
        if int(np.prod(shape, dtype=np.int64)) != arr.size:
            raise ValueError(f"{path}: parameter {name!r} payload does not match shape {shape}")
        params[name] = arr.reshape(shape)
    return params, doc.get("meta", {})

"""Dense float tensors with reverse-mode automatic differentiation.

The engine is deliberately small: a Tensor wraps a contiguous row-major
numpy array (float32 by default, float64 for numerical verification), and
every differentiable operation appends one node to the currently active
Tape. Nodes are recorded in execution order, which is automatically a
topological order, so backward() is a single reverse sweep.

Shape discipline is strict: elementwise operations require identical
shapes, except that a parameter-side operand may match the non-batch
trailing shape (bias-style broadcast over the leading batch dimension).
Anything richer must go through a dedicated structured op (conv2d,
group_norm, ...) that owns its parameter shapes and backward rules.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, DimensionError

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "add",
    "sub",
    "mul",
    "scale",
    "rowscale",
    "neg",
    "matmul",
    "linear",
    "conv2d",
    "conv1x1",
    "silu",
    "mean",
    "mse_reduce",
    "mae_reduce",
    "layer_norm",
    "group_norm",
    "embedding",
    "concat",
    "reshape",
    "upsample_nearest2x",
    "add_channelwise",
]

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """N-dimensional float array, optionally participating in the grad tape.

    Attributes:
        data: contiguous numpy array (row-major).
        requires_grad: whether backward() should accumulate into .grad.
        grad: numpy array matching data, or None before any backward pass.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw array data, not another Tensor")
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in _FLOAT_DTYPES else np.float32
        self.data = np.ascontiguousarray(arr, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """Copy of the values with no grad participation."""
        return Tensor(self.data.copy(), requires_grad=False)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() on tensor of size {self.size}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; the module-level functions own the actual rules.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return neg(self)


class _Node:
    """One recorded operation: inputs, output, and its backward rule.

    The backward rule receives the accumulated gradient of the output and
    returns one gradient array (or None) per input. Returned arrays must
    be freshly allocated: the engine mutates them in place when a tensor
    feeds several consumers.
    """

    __slots__ = ("op", "inputs", "out", "bwd")

    def __init__(self, op, inputs, out, bwd):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.bwd = bwd


class Tape:
    """Ordered record of operations; usable as a context manager.

    Execution order is topological by construction (an op can only consume
    tensors that already exist), and backward() walks it exactly once in
    reverse.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tapes must be exited in LIFO order"

    def clear(self) -> None:
        self.nodes.clear()


_TAPE_STACK: list[Tape] = []


def _record(op: str, inputs: tuple, out: Tensor, bwd) -> Tensor:
    """Attach an op to the active tape when any input requires grad."""
    if _TAPE_STACK and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPE_STACK[-1].nodes.append(_Node(op, inputs, out, bwd))
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    # Backward rules hand over freshly allocated arrays, so binding without
    # a copy is safe; accumulation mutates the bound buffer in place.
    if t.grad is None:
        t.grad = g.reshape(t.shape)
    else:
        t.grad += g.reshape(t.shape)


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate .grad on every requires_grad tensor reachable from loss.

    Gradients accumulate additively, both across multiple uses inside one
    graph and across repeated backward calls (clear with zero_grad).
    """
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    produced = {id(n.out) for n in tape.nodes}
    if id(loss) not in produced and not tape.nodes:
        raise ContractError("loss is not on the tape (no recorded operations)")
    if id(loss) not in produced:
        raise ContractError("loss was not produced by an operation on this tape")

    # flows holds the not-yet-consumed upstream gradient per tensor id.
    flows: dict[int, list] = {id(loss): [loss, np.ones_like(loss.data)]}
    for node in reversed(tape.nodes):
        entry = flows.pop(id(node.out), None)
        if entry is None:
            continue  # not reachable from this loss
        g = entry[1]
        _accumulate(node.out, g)
        for inp, ig in zip(node.inputs, node.bwd(g)):
            if ig is None or not inp.requires_grad:
                continue
            slot = flows.get(id(inp))
            if slot is None:
                flows[id(inp)] = [inp, ig]
            else:
                slot[1] += ig
    # Whatever remains belongs to leaves (parameters, inputs).
    for tensor, g in flows.values():
        if tensor.requires_grad:
            _accumulate(tensor, g)


def _check_same_dtype(*tensors: Tensor) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise DimensionError(f"mixed dtypes {sorted(map(str, dtypes))}")


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> bool:
    """Validate an elementwise pair; True means b broadcasts over a's batch."""
    if a.shape == b.shape:
        return False
    if len(a.shape) >= 1 and a.shape[1:] == b.shape:
        return True
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are incompatible")


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    bcast = _binary_shapes(a, b, "add")
    _check_same_dtype(a, b)
    out = Tensor(a.data + b.data)

    def bwd(g):
        return g.copy(), (g.sum(axis=0) if bcast else g.copy())

    return _record("add", (a, b), out, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    bcast = _binary_shapes(a, b, "sub")
    _check_same_dtype(a, b)
    out = Tensor(a.data - b.data)

    def bwd(g):
        return g.copy(), (-g.sum(axis=0) if bcast else -g)

    return _record("sub", (a, b), out, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    bcast = _binary_shapes(a, b, "mul")
    _check_same_dtype(a, b)
    out = Tensor(a.data * b.data)

    def bwd(g):
        ga = g * b.data
        gb = g * a.data
        return ga, (gb.sum(axis=0) if bcast else gb)

    return _record("mul", (a, b), out, bwd)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(a.data * a.dtype.type(s))

    def bwd(g):
        return (g * s,)

    return _record("scale", (a,), out, bwd)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def rowscale(a: Tensor, coef: np.ndarray) -> Tensor:
    """Multiply each batch row by its own scalar coefficient.

    coef is a plain (batch,)-shaped constant, not a differentiable Tensor;
    this is how per-sample schedule coefficients enter the graph.
    """
    coef = np.asarray(coef, dtype=a.dtype)
    if coef.ndim != 1 or len(a.shape) < 1 or coef.shape[0] != a.shape[0]:
        raise DimensionError(f"rowscale: coef {coef.shape} does not match batch of {a.shape}")
    expanded = coef.reshape((-1,) + (1,) * (len(a.shape) - 1))
    out = Tensor(a.data * expanded)

    def bwd(g):
        return (g * expanded,)

    return _record("rowscale", (a,), out, bwd)


def silu(a: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(a.data * sig)

    def bwd(g):
        return (g * (sig * (1.0 + a.data * (1.0 - sig))),)

    return _record("silu", (a,), out, bwd)


def mean(a: Tensor) -> Tensor:
    out = Tensor(np.asarray(a.data.mean(), dtype=a.dtype))
    n = a.size

    def bwd(g):
        return (np.full(a.shape, g.reshape(())[()] / n, dtype=a.dtype),)

    return _record("mean", (a,), out, bwd)


def mse_reduce(a: Tensor, b: Tensor) -> Tensor:
    """Mean over all elements of (a - b)^2."""
    if a.shape != b.shape:
        raise DimensionError(f"mse_reduce: shapes {a.shape} vs {b.shape}")
    _check_same_dtype(a, b)
    diff = a.data - b.data
    out = Tensor(np.asarray(np.mean(diff * diff), dtype=a.dtype))
    n = a.size

    def bwd(g):
        ga = (2.0 / n) * g.reshape(())[()] * diff
        return ga, -ga

    return _record("mse_reduce", (a, b), out, bwd)


def mae_reduce(a: Tensor, b: Tensor) -> Tensor:
    """Mean over all elements of |a - b|; subgradient 0 at ties."""
    if a.shape != b.shape:
        raise DimensionError(f"mae_reduce: shapes {a.shape} vs {b.shape}")
    _check_same_dtype(a, b)
    diff = a.data - b.data
    out = Tensor(np.asarray(np.mean(np.abs(diff)), dtype=a.dtype))
    n = a.size

    def bwd(g):
        ga = g.reshape(())[()] / n * np.sign(diff)
        return ga, -ga

    return _record("mae_reduce", (a, b), out, bwd)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise DimensionError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions {a.shape} x {b.shape} disagree")
    _check_same_dtype(a, b)
    out = Tensor(a.data @ b.data)
    need_a, need_b = a.requires_grad, b.requires_grad

    def bwd(g):
        return (g @ b.data.T if need_a else None,
                a.data.T @ g if need_b else None)

    return _record("matmul", (a, b), out, bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x[batch, n] @ w[n, m] + bias[m]."""
    y = matmul(x, w)
    if b is not None:
        y = add(y, b)
    return y


# ---------------------------------------------------------------------------
# convolution (3x3 kernels, pad 1, stride 1 or 2)


def _conv_out_len(n: int, stride: int) -> int:
    return (n - 1) // stride + 1  # == ceil(n / stride) with pad 1, kernel 3


def _im2col(padded: np.ndarray, oh: int, ow: int, stride: int) -> np.ndarray:
    """(b, cin, h+2, w+2) -> (b, cin*9, oh*ow) with (ky, kx) fastest."""
    b, cin = padded.shape[:2]
    cols = np.empty((b, cin, 9, oh, ow), dtype=padded.dtype)
    for ky in range(3):
        for kx in range(3):
            cols[:, :, ky * 3 + kx] = padded[
                :, :, ky : ky + stride * oh : stride, kx : kx + stride * ow : stride
            ]
    return cols.reshape(b, cin * 9, oh * ow)


def _col2im(dcols: np.ndarray, shape: tuple, oh: int, ow: int, stride: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add columns back onto the padded plane."""
    b, cin, h, w = shape
    dpadded = np.zeros((b, cin, h + 2, w + 2), dtype=dcols.dtype)
    dcols = dcols.reshape(b, cin, 9, oh, ow)
    for ky in range(3):
        for kx in range(3):
            dpadded[:, :, ky : ky + stride * oh : stride, kx : kx + stride * ow : stride] += dcols[
                :, :, ky * 3 + kx
            ]
    return dpadded[:, :, 1 : h + 1, 1 : w + 1]


def conv2d(x: Tensor, k: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """3x3 convolution with pad 1; output spatial size is ceil(size/stride)."""
    squeeze = len(x.shape) == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise DimensionError(f"conv2d: input must be (c,h,w) or (b,c,h,w), got {x.shape}")
    if len(k.shape) != 4 or k.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d: kernel must be (cout,cin,3,3), got {k.shape}")
    if k.shape[1] != xd.shape[1]:
        raise DimensionError(f"conv2d: {xd.shape[1]} input channels vs kernel {k.shape[1]}")
    if stride not in (1, 2):
        raise DimensionError(f"conv2d: stride must be 1 or 2, got {stride}")
    if bias is not None and bias.shape != (k.shape[0],):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({k.shape[0]},)")
    _check_same_dtype(x, k, *((bias,) if bias is not None else ()))

    b, cin, h, w = xd.shape
    cout = k.shape[0]
    oh, ow = _conv_out_len(h, stride), _conv_out_len(w, stride)
    padded = np.zeros((b, cin, h + 2, w + 2), dtype=xd.dtype)
    padded[:, :, 1 : h + 1, 1 : w + 1] = xd
    cols = _im2col(padded, oh, ow, stride)  # (b, cin*9, L)
    kmat = k.data.reshape(cout, cin * 9)
    y = np.matmul(kmat, cols).reshape(b, cout, oh, ow)
    if bias is not None:
        y += bias.data.reshape(1, cout, 1, 1)
    out = Tensor(y[0] if squeeze else y)
    need_x, need_k = x.requires_grad, k.requires_grad

    def bwd(g):
        gm = (g[None] if squeeze else g).reshape(b, cout, oh * ow)
        dk = dx = None
        if need_k:
            dk = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(k.shape)
        if need_x:
            dcols = np.matmul(kmat.T, gm)
            dx = _col2im(dcols, (b, cin, h, w), oh, ow, stride)
            if squeeze:
                dx = dx[0]
        grads = [dx, dk]
        if bias is not None:
            grads.append(gm.sum(axis=(0, 2)) if bias.requires_grad else None)
        return tuple(grads)

    inputs = (x, k) if bias is None else (x, k, bias)
    return _record("conv2d", inputs, out, bwd)


def conv1x1(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Pointwise channel mix: (b,cin,h,w) x (cout,cin) -> (b,cout,h,w)."""
    if len(x.shape) != 4 or len(w.shape) != 2 or w.shape[1] != x.shape[1]:
        raise DimensionError(f"conv1x1: shapes {x.shape} and {w.shape} are incompatible")
    if bias is not None and bias.shape != (w.shape[0],):
        raise DimensionError(f"conv1x1: bias shape {bias.shape} != ({w.shape[0]},)")
    _check_same_dtype(x, w, *((bias,) if bias is not None else ()))
    b, cin, h, w_ = x.shape
    cout = w.shape[0]
    xr = x.data.reshape(b, cin, h * w_)
    y = np.matmul(w.data, xr).reshape(b, cout, h, w_)
    if bias is not None:
        y += bias.data.reshape(1, cout, 1, 1)
    out = Tensor(y)
    need_x, need_w = x.requires_grad, w.requires_grad

    def bwd(g):
        gm = g.reshape(b, cout, h * w_)
        dw = np.matmul(gm, xr.transpose(0, 2, 1)).sum(axis=0) if need_w else None
        dx = np.matmul(w.data.T, gm).reshape(x.shape) if need_x else None
        grads = [dx, dw]
        if bias is not None:
            grads.append(gm.sum(axis=(0, 2)) if bias.requires_grad else None)
        return tuple(grads)

    inputs = (x, w) if bias is None else (x, w, bias)
    return _record("conv1x1", inputs, out, bwd)


# ---------------------------------------------------------------------------
# normalization


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last dimension, then apply per-feature affine."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} != ({d},)")
    _check_same_dtype(x, gamma, beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gamma.data + beta.data)
    need_affine = gamma.requires_grad

    def bwd(g):
        sum_axes = tuple(range(len(x.shape) - 1))
        dgamma = (g * xhat).sum(axis=sum_axes) if need_affine else None
        dbeta = g.sum(axis=sum_axes) if need_affine else None
        dxhat = g * gamma.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return _record("layer_norm", (x, gamma, beta), out, bwd)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Normalize (b,c,h,w) per sample per channel group, affine per channel."""
    if len(x.shape) != 4:
        raise DimensionError(f"group_norm: expected (b,c,h,w), got {x.shape}")
    b, c, h, w = x.shape
    if c % groups != 0:
        raise DimensionError(f"group_norm: {c} channels not divisible by {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"group_norm: affine shapes {gamma.shape}/{beta.shape} != ({c},)")
    _check_same_dtype(x, gamma, beta)
    xg = x.data.reshape(b, groups, -1)
    mu = xg.mean(axis=-1, keepdims=True)
    var = xg.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat_g = (xg - mu) * inv
    xhat = xhat_g.reshape(b, c, h, w)
    out = Tensor(xhat * gamma.data.reshape(1, c, 1, 1) + beta.data.reshape(1, c, 1, 1))
    need_affine = gamma.requires_grad

    def bwd(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3)) if need_affine else None
        dbeta = g.sum(axis=(0, 2, 3)) if need_affine else None
        dxhat_g = (g * gamma.data.reshape(1, c, 1, 1)).reshape(b, groups, -1)
        dx_g = inv * (
            dxhat_g
            - dxhat_g.mean(axis=-1, keepdims=True)
            - xhat_g * (dxhat_g * xhat_g).mean(axis=-1, keepdims=True)
        )
        return dx_g.reshape(x.shape), dgamma, dbeta

    return _record("group_norm", (x, gamma, beta), out, bwd)


# ---------------------------------------------------------------------------
# structure


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup into (vocab, dim); backward scatter-adds per id."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise DimensionError(f"embedding: ids must be 1-D, got shape {ids.shape}")
    if len(table.shape) != 2:
        raise DimensionError(f"embedding: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(f"embedding: id out of range [0, {table.shape[0]})")
    out = Tensor(table.data[ids])

    def bwd(g):
        dtable = np.zeros(table.shape, dtype=table.dtype)
        np.add.at(dtable, ids, g)
        return (dtable,)

    return _record("embedding", (table,), out, bwd)


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise DimensionError("concat: empty input list")
    _check_same_dtype(*tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _record("concat", tuple(tensors), out, bwd)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    if math.prod(shape) != x.size:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    out = Tensor(x.data.reshape(shape))

    def bwd(g):
        return (g.reshape(x.shape).copy(),)  # fresh buffer, never a view of g

    return _record("reshape", (x,), out, bwd)


def upsample_nearest2x(x: Tensor) -> Tensor:
    if len(x.shape) != 4:
        raise DimensionError(f"upsample_nearest2x: expected (b,c,h,w), got {x.shape}")
    b, c, h, w = x.shape
    out = Tensor(x.data.repeat(2, axis=2).repeat(2, axis=3))

    def bwd(g):
        return (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _record("upsample_nearest2x", (x,), out, bwd)


def add_channelwise(x: Tensor, v: Tensor) -> Tensor:
    """Add a per-sample per-channel vector (b,c) onto a (b,c,h,w) map."""
    if len(x.shape) != 4 or v.shape != x.shape[:2]:
        raise DimensionError(f"add_channelwise: shapes {x.shape} and {v.shape} are incompatible")
    _check_same_dtype(x, v)
    out = Tensor(x.data + v.data[:, :, None, None])

    def bwd(g):
        return g.copy(), g.sum(axis=(2, 3))

    return _record("add_channelwise", (x, v), out, bwd)

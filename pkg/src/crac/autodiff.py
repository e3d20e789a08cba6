"""Dense tensors with a recorded operation trace and reverse-mode gradients.

A :class:`Graph` owns every value produced while it is alive. Leaves are
either parameters (named, differentiated) or constants. Each primitive
application appends a node, so ``graph.nodes`` is topologically ordered by
construction. The trace can be replayed with substituted leaf values, which
is what the finite-difference checker uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class AutodiffError(Exception):
    """Base class for graph errors."""


class ShapeError(AutodiffError, ValueError):
    pass


class NonFiniteError(AutodiffError, ArithmeticError):
    pass


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...] = ()
    attrs: dict = field(default_factory=dict)
    name: str | None = None


class Tensor:
    """Handle to one value inside a graph. Values are never mutated."""

    __slots__ = ("graph", "index")

    def __init__(self, graph: "Graph", index: int):
        self.graph = graph
        self.index = index

    @property
    def data(self) -> np.ndarray:
        return self.graph.values[self.index]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        node = self.graph.nodes[self.index]
        return f"Tensor(op={node.op}, shape={self.shape})"

    def __add__(self, other):
        return self.graph.add(self, other)

    def __radd__(self, other):
        return self.graph.add(other, self)

    def __sub__(self, other):
        return self.graph.sub(self, other)

    def __rsub__(self, other):
        return self.graph.sub(other, self)

    def __mul__(self, other):
        return self.graph.mul(self, other)

    def __rmul__(self, other):
        return self.graph.mul(other, self)

    def __neg__(self):
        return self.graph.scale(self, -1.0)

    def __matmul__(self, other):
        return self.graph.matmul(self, other)


# ---------------------------------------------------------------------------
# primitive table
#
# forward(values, **attrs) -> (out, ctx)
# vjp(grad_out, values, out, ctx, **attrs) -> list of input grads (None = skip)
# kink(values, out, ctx, **attrs) -> (distance to the nearest non-smooth point,
#                                    branch signature array)


@dataclass(frozen=True)
class Primitive:
    forward: Callable
    vjp: Callable
    kink: Callable | None = None


PRIMITIVES: dict[str, Primitive] = {}


def _register(name, forward, vjp, kink=None):
    PRIMITIVES[name] = Primitive(forward, vjp, kink)


def _unbroadcast(grad, shape):
    # only scalar-tensor broadcasting is supported
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum()).reshape(shape)


def _check_binary(a, b, op):
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform")


def _add_fwd(a, b):
    _check_binary(a, b, "add")
    return a + b, None


def _add_vjp(g, vals, out, ctx):
    a, b = vals
    return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]


def _sub_fwd(a, b):
    _check_binary(a, b, "sub")
    return a - b, None


def _sub_vjp(g, vals, out, ctx):
    a, b = vals
    return [_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)]


def _mul_fwd(a, b):
    _check_binary(a, b, "mul")
    return a * b, None


def _mul_vjp(g, vals, out, ctx):
    a, b = vals
    return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]


_register("add", _add_fwd, _add_vjp)
_register("sub", _sub_fwd, _sub_vjp)
_register("mul", _mul_fwd, _mul_vjp)
_register(
    "scale",
    lambda x, c: (x * c, None),
    lambda g, vals, out, ctx, c: [g * c],
)
_register(
    "add_scalar",
    lambda x, c: (x + c, None),
    lambda g, vals, out, ctx, c: [g],
)


def _matmul_fwd(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    return a @ b, None


_register(
    "matmul",
    _matmul_fwd,
    lambda g, vals, out, ctx: [g @ vals[1].T, vals[0].T @ g],
)


def _conv2d_fwd(x, w, b):
    if x.ndim != 4 or w.ndim != 4 or b.ndim != 1:
        raise ShapeError("conv2d expects x (N,C,H,W), w (O,C,k,k), b (O,)")
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c or kh != kw or kh % 2 == 0 or b.shape[0] != o:
        raise ShapeError(f"conv2d: input {x.shape}, kernel {w.shape}, bias {b.shape}")
    p = kh // 2
    if p:
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wd, c * kh * kw)
    else:
        cols = x.transpose(0, 2, 3, 1).reshape(n * h * wd, c)
    out = cols @ w.reshape(o, -1).T
    out += b
    out = np.ascontiguousarray(out.reshape(n, h, wd, o).transpose(0, 3, 1, 2))
    return out, cols


def _conv2d_vjp(g, vals, out, cols):
    x, w, b = vals
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    gm = g.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = (gm.T @ cols).reshape(w.shape)
    db = gm.sum(axis=0)
    dcols = gm @ w.reshape(o, -1)
    if not p:
        dx = dcols.reshape(n, h, wd, c).transpose(0, 3, 1, 2)
        return [np.ascontiguousarray(dx), dw, db]
    dcols = dcols.reshape(n, h, wd, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    dxp = np.zeros((n, c, h + 2 * p, wd + 2 * p), dtype=g.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + h, j : j + wd] += dcols[:, :, i, j]
    return [dxp[:, :, p:-p, p:-p].copy(), dw, db]


_register("conv2d", _conv2d_fwd, _conv2d_vjp)

_register(
    "relu",
    lambda x: (np.maximum(x, 0), None),
    lambda g, vals, out, ctx: [g * (vals[0] > 0)],
    lambda vals, out, ctx: (_min_abs(vals[0]), vals[0] > 0),
)


def _min_abs(a):
    return float(np.min(np.abs(a))) if a.size else np.inf


def _pool_windows(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2: spatial extents {h}x{w} must be even")
    return x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, h // 2, w // 2, 4
    )


def _maxpool_fwd(x):
    if x.ndim != 4:
        raise ShapeError("max_pool2 expects (N,C,H,W)")
    win = _pool_windows(x)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _maxpool_vjp(g, vals, out, arg):
    x = vals[0]
    n, c, h, w = x.shape
    onehot = arg[..., None] == np.arange(4)
    dwin = onehot * g[..., None]
    dx = dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return [np.ascontiguousarray(dx.reshape(n, c, h, w)).astype(g.dtype, copy=False)]


def _top2_gap(a, axis):
    if a.shape[axis] < 2:
        return np.inf
    part = -np.partition(-a, 1, axis=axis)
    first = np.take(part, 0, axis=axis)
    second = np.take(part, 1, axis=axis)
    return float(np.min(first - second)) if first.size else np.inf


def _maxpool_kink(vals, out, arg):
    # exact ties are routine after relu (all-zero windows) and harmless; only
    # argmax flips under perturbation are treated as non-smooth
    return np.inf, arg


_register("max_pool2", _maxpool_fwd, _maxpool_vjp, _maxpool_kink)


def _upsample_fwd(x):
    if x.ndim != 4:
        raise ShapeError("upsample2 expects (N,C,H,W)")
    return x.repeat(2, axis=2).repeat(2, axis=3), None


def _upsample_vjp(g, vals, out, ctx):
    n, c, h, w = vals[0].shape
    return [g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))]


_register("upsample2", _upsample_fwd, _upsample_vjp)


def _concat_fwd(*xs):
    ref = xs[0].shape
    for x in xs:
        if x.ndim != 4 or x.shape[0] != ref[0] or x.shape[2:] != ref[2:]:
            raise ShapeError(f"concat: {x.shape} does not conform with {ref}")
    return np.concatenate(xs, axis=1), None


def _concat_vjp(g, vals, out, ctx):
    bounds = np.cumsum([0] + [v.shape[1] for v in vals])
    return [g[:, bounds[i] : bounds[i + 1]] for i in range(len(vals))]


_register("concat", _concat_fwd, _concat_vjp)

_register(
    "exp",
    lambda x: (np.exp(x), None),
    lambda g, vals, out, ctx: [g * out],
)


def _log_fwd(x):
    if np.any(x <= 0):
        raise NonFiniteError("log of non-positive value")
    return np.log(x), None


_register("log", _log_fwd, lambda g, vals, out, ctx: [g / vals[0]])
_register(
    "abs",
    lambda x: (np.abs(x), None),
    lambda g, vals, out, ctx: [g * np.sign(vals[0])],
    lambda vals, out, ctx: (_min_abs(vals[0]), vals[0] > 0),
)


def _pow_fwd(x, p):
    if p != int(p) and np.any(x < 0):
        raise NonFiniteError("fractional power of a negative value")
    if p == 0:
        return np.ones_like(x), None
    return x**p, None


def _pow_vjp(g, vals, out, ctx, p):
    if p == 0:
        return [np.zeros_like(g)]
    return [g * p * vals[0] ** (p - 1)]


_register("pow", _pow_fwd, _pow_vjp)


def _reduce_grad(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


_register(
    "sum",
    lambda x, axis=None, keepdims=False: (np.asarray(x.sum(axis=axis, keepdims=keepdims)), None),
    lambda g, vals, out, ctx, axis=None, keepdims=False: [
        _reduce_grad(g, vals[0].shape, axis, keepdims)
    ],
)


def _count(shape, axis):
    if axis is None:
        return int(np.prod(shape))
    axes = (axis,) if isinstance(axis, int) else axis
    return int(np.prod([shape[a] for a in axes]))


_register(
    "mean",
    lambda x, axis=None, keepdims=False: (np.asarray(x.mean(axis=axis, keepdims=keepdims)), None),
    lambda g, vals, out, ctx, axis=None, keepdims=False: [
        _reduce_grad(g, vals[0].shape, axis, keepdims) / _count(vals[0].shape, axis)
    ],
)


def _softmax(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(x):
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _need_channels(x, op):
    if x.ndim < 2:
        raise ShapeError(f"{op} needs a channel axis at position 1")


def _softmax_fwd(x):
    _need_channels(x, "softmax")
    return _softmax(x), None


_register(
    "softmax",
    _softmax_fwd,
    lambda g, vals, out, ctx: [out * (g - (g * out).sum(axis=1, keepdims=True))],
)


def _logsoftmax_fwd(x):
    _need_channels(x, "log_softmax")
    out = _log_softmax(x)
    return out, np.exp(out)


_register(
    "log_softmax",
    _logsoftmax_fwd,
    lambda g, vals, out, prob: [g - prob * g.sum(axis=1, keepdims=True)],
)


def _sce_fwd(logits, target):
    _need_channels(logits, "softmax_cross_entropy")
    if logits.shape != target.shape:
        raise ShapeError(f"softmax_cross_entropy: {logits.shape} vs target {target.shape}")
    logp = _log_softmax(logits)
    return -(target * logp).sum(axis=1), np.exp(logp)


def _sce_vjp(g, vals, out, prob):
    target = vals[1]
    mass = target.sum(axis=1, keepdims=True)
    return [np.expand_dims(g, 1) * (prob * mass - target), None]


_register("softmax_cross_entropy", _sce_fwd, _sce_vjp)


def _maxch_fwd(x):
    _need_channels(x, "max_channel")
    arg = x.argmax(axis=1)  # lowest index wins ties
    return np.take_along_axis(x, arg[:, None], axis=1), arg


def _maxch_vjp(g, vals, out, arg):
    k = vals[0].shape[1]
    onehot = np.moveaxis(arg[..., None] == np.arange(k), -1, 1)
    return [onehot * g]


_register(
    "max_channel",
    _maxch_fwd,
    _maxch_vjp,
    lambda vals, out, arg: (_top2_gap(vals[0], 1), arg),
)


def phr_value(z, rho, lam):
    """Elementwise PHR penalty value (quadratic above the kink, flat below)."""
    active = lam + rho * z >= 0
    return np.where(active, lam * z + 0.5 * rho * z * z, -(lam * lam) / (2 * rho))


def phr_derivative(z, rho, lam):
    return np.maximum(0.0, lam + rho * z)


def _phr_fwd(z, rho, lam):
    if z.shape != rho.shape or z.shape != lam.shape:
        raise ShapeError(f"phr: z {z.shape}, rho {rho.shape}, lam {lam.shape}")
    if np.any(rho <= 0):
        raise ValueError("phr needs rho > 0")
    return phr_value(z, rho, lam), None


def _phr_vjp(g, vals, out, ctx):
    z, rho, lam = vals
    return [g * phr_derivative(z, rho, lam), None, None]


def _phr_kink(vals, out, ctx):
    z, rho, lam = vals
    s = lam + rho * z
    return float(np.min(np.abs(s) / rho)) if z.size else np.inf, s >= 0


_register("phr", _phr_fwd, _phr_vjp, _phr_kink)


# ---------------------------------------------------------------------------


class Graph:
    """Operation trace. One graph belongs to one thread."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.nodes: list[Node] = []
        self.values: list[np.ndarray] = []
        self.ctxs: list = []
        self.params: dict[str, int] = {}

    def __len__(self):
        return len(self.nodes)

    # leaves -----------------------------------------------------------

    def _leaf(self, op, value, name=None):
        arr = np.array(value, dtype=self.dtype)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite {op} leaf {name or ''}")
        arr.flags.writeable = False
        self.nodes.append(Node(op, (), {}, name))
        self.values.append(arr)
        self.ctxs.append(None)
        return Tensor(self, len(self.nodes) - 1)

    def param(self, value, name: str) -> Tensor:
        if name in self.params:
            raise AutodiffError(f"duplicate parameter name {name!r}")
        t = self._leaf("param", value, name)
        self.params[name] = t.index
        return t

    def constant(self, value) -> Tensor:
        return self._leaf("const", value)

    # primitive application --------------------------------------------

    def _as_tensor(self, x) -> Tensor:
        if isinstance(x, Tensor):
            if x.graph is not self:
                raise AutodiffError("tensor belongs to another graph")
            return x
        return self.constant(x)

    def apply(self, op: str, *inputs, **attrs) -> Tensor:
        """Apply primitive ``op`` to ``inputs`` and record the node."""
        if op not in PRIMITIVES:
            raise AutodiffError(f"unknown primitive {op!r}")
        tensors = [self._as_tensor(x) for x in inputs]
        vals = [self.values[t.index] for t in tensors]
        out, ctx = _run_forward(op, vals, attrs)
        self.nodes.append(Node(op, tuple(t.index for t in tensors), attrs))
        self.values.append(out)
        self.ctxs.append(ctx)
        return Tensor(self, len(self.nodes) - 1)

    def replay(self, overrides: dict[str, np.ndarray] | None = None):
        """Recompute every node with parameters substituted by name.

        Returns ``(values, ctxs)``; the graph itself is left untouched.
        """
        overrides = overrides or {}
        values: list[np.ndarray] = []
        ctxs: list = []
        for node, orig, octx in zip(self.nodes, self.values, self.ctxs):
            if node.op == "param" and node.name in overrides:
                v = np.asarray(overrides[node.name], dtype=self.dtype)
                if v.shape != orig.shape:
                    raise ShapeError(f"override for {node.name} has shape {v.shape}")
                values.append(v)
                ctxs.append(None)
            elif node.op in ("param", "const"):
                values.append(orig)
                ctxs.append(None)
            else:
                out, ctx = _run_forward(node.op, [values[i] for i in node.inputs], node.attrs)
                values.append(out)
                ctxs.append(ctx)
        return values, ctxs

    # conveniences -------------------------------------------------------

    def add(self, a, b):
        if isinstance(b, (int, float)) and isinstance(a, Tensor):
            return self.apply("add_scalar", a, c=float(b))
        if isinstance(a, (int, float)) and isinstance(b, Tensor):
            return self.apply("add_scalar", b, c=float(a))
        return self.apply("add", a, b)

    def sub(self, a, b):
        if isinstance(b, (int, float)) and isinstance(a, Tensor):
            return self.apply("add_scalar", a, c=-float(b))
        if isinstance(a, (int, float)) and isinstance(b, Tensor):
            return self.apply("add_scalar", self.scale(b, -1.0), c=float(a))
        return self.apply("sub", a, b)

    def mul(self, a, b):
        if isinstance(b, (int, float)) and isinstance(a, Tensor):
            return self.scale(a, b)
        if isinstance(a, (int, float)) and isinstance(b, Tensor):
            return self.scale(b, a)
        return self.apply("mul", a, b)

    def scale(self, x, c: float):
        return self.apply("scale", x, c=float(c))

    def matmul(self, a, b):
        return self.apply("matmul", a, b)

    def conv2d(self, x, w, b):
        return self.apply("conv2d", x, w, b)

    def relu(self, x):
        return self.apply("relu", x)

    def max_pool2(self, x):
        return self.apply("max_pool2", x)

    def upsample2(self, x):
        return self.apply("upsample2", x)

    def concat(self, *xs):
        return self.apply("concat", *xs)

    def exp(self, x):
        return self.apply("exp", x)

    def log(self, x):
        return self.apply("log", x)

    def abs(self, x):
        return self.apply("abs", x)

    def pow(self, x, p: float):
        return self.apply("pow", x, p=float(p))

    def sum(self, x, axis=None, keepdims=False):
        return self.apply("sum", x, axis=axis, keepdims=keepdims)

    def mean(self, x, axis=None, keepdims=False):
        return self.apply("mean", x, axis=axis, keepdims=keepdims)

    def softmax(self, x):
        return self.apply("softmax", x)

    def log_softmax(self, x):
        return self.apply("log_softmax", x)

    def softmax_cross_entropy(self, logits, target):
        """Per-pixel ``-sum_k target_k log softmax(logits)_k`` (stable, fused)."""
        return self.apply("softmax_cross_entropy", logits, target)

    def max_channel(self, x):
        """Channel-wise maximum, kept as a singleton channel ``(N,1,...)``."""
        return self.apply("max_channel", x)

    def phr(self, z, rho, lam):
        return self.apply("phr", z, rho, lam)


def _run_forward(op, vals, attrs):
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out, ctx = PRIMITIVES[op].forward(*vals, **attrs)
    out = np.asarray(out)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced non-finite output")
    return out, ctx


def _backward_values(graph, values, ctxs, loss_index):
    needs = [False] * len(graph.nodes)
    for i, node in enumerate(graph.nodes):
        if node.op == "param":
            needs[i] = True
        elif node.op != "const":
            needs[i] = any(needs[j] for j in node.inputs)
    grads: dict[int, np.ndarray] = {loss_index: np.ones_like(values[loss_index])}
    for i in range(loss_index, -1, -1):
        g = grads.pop(i, None) if graph.nodes[i].op != "param" else grads.get(i)
        node = graph.nodes[i]
        if g is None or node.op in ("param", "const"):
            continue
        ins = [values[j] for j in node.inputs]
        in_grads = PRIMITIVES[node.op].vjp(g, ins, values[i], ctxs[i], **node.attrs)
        for j, gj in zip(node.inputs, in_grads):
            if gj is None or not needs[j]:
                continue
            if j in grads:
                grads[j] = grads[j] + gj
            else:
                grads[j] = gj
    out = {}
    for name, idx in graph.params.items():
        g = grads.get(idx)
        out[name] = np.zeros_like(values[idx]) if g is None else np.asarray(g, dtype=graph.dtype)
    return out


def backward(graph: Graph, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradient of the scalar ``loss`` with respect to every parameter leaf."""
    if not isinstance(loss, Tensor) or loss.graph is not graph:
        raise AutodiffError("loss node is detached from this graph")
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    return _backward_values(graph, graph.values, graph.ctxs, loss.index)


# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    checked: dict[str, int]
    excluded: dict[str, int]
    excluded_point: bool
    tolerance: float

    @property
    def passed(self) -> bool:
        if self.excluded_point:
            return False
        return all(err <= self.tolerance for err in self.max_rel_error.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def _signatures(graph, values, ctxs):
    out = {}
    for i, node in enumerate(graph.nodes):
        prim = PRIMITIVES.get(node.op)
        if prim is None or prim.kink is None:
            continue
        vals = [values[j] for j in node.inputs]
        out[i] = prim.kink(vals, values[i], ctxs[i], **node.attrs)
    return out


def grad_check(
    graph: Graph,
    loss: Tensor,
    step: float = 1e-4,
    tolerance: float = 1e-3,
    kink_margin: float = 1e-6,
    floor: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare :func:`backward` against central differences of a replayed graph.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    The whole point is flagged excluded when any non-smooth primitive sits
    within ``kink_margin`` of its kink; single coordinates whose perturbation
    flips a branch (relu mask, argmax, PHR branch) are skipped and counted.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    analytic = backward(graph, loss)
    base = _signatures(graph, graph.values, graph.ctxs)
    excluded_point = any(dist < kink_margin for dist, _ in base.values())

    rng = np.random.default_rng(seed)
    errors, checked, skipped = {}, {}, {}
    for name, idx in graph.params.items():
        value = graph.values[idx]
        flat = np.arange(value.size)
        if max_coords is not None and value.size > max_coords:
            flat = np.sort(rng.choice(value.size, size=max_coords, replace=False))
        worst, n_ok, n_skip = 0.0, 0, 0
        for c in flat:
            fs = []
            flipped = False
            for sign in (1.0, -1.0):
                pert = np.array(value, dtype=graph.dtype)
                pert.flat[c] += sign * step
                vals, ctxs = graph.replay({name: pert})
                sig = _signatures(graph, vals, ctxs)
                if any(not np.array_equal(sig[i][1], base[i][1]) for i in base):
                    flipped = True
                    break
                fs.append(float(vals[loss.index]))
            if flipped:
                n_skip += 1
                continue
            numeric = (fs[0] - fs[1]) / (2 * step)
            a = float(analytic[name].flat[c])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, rel)
            n_ok += 1
        errors[name] = worst
        checked[name] = n_ok
        skipped[name] = n_skip
    return GradCheckReport(errors, checked, skipped, excluded_point, tolerance)

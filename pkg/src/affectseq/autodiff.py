"""Reverse-mode differentiation over dense float64 arrays.

A small static-graph engine: expressions are built once from leaf
placeholders (parameters and inputs), evaluated against concrete
bindings, and differentiated in exact reverse topological order.
The primitive set is closed; every layer and loss in this package is a
composition of the primitives below, so each backward rule stays small
enough to verify by finite differences.

Cycles cannot be constructed: a node's parents are fixed at creation,
so every expression is a DAG by construction.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

_IDS = itertools.count()

# Recommended band for central differences at 64-bit precision. Values
# outside still run but the report carries a truncation/roundoff warning.
EPSILON_BAND = (1e-8, 1e-4)


class GraphError(Exception):
    """Shape mismatch, missing binding, non-finite value, or misuse."""


class Node:
    """One vertex of a differentiable expression DAG.

    Nodes are immutable descriptions; all evaluation state lives on the
    Graph that runs them.
    """

    __slots__ = ("op", "shape", "parents", "name", "attrs")

    def __init__(self, op, shape, parents=(), name=None, **attrs):
        self.op = op
        self.shape = tuple(int(s) for s in shape)
        self.parents = tuple(parents)
        self.name = name if name is not None else f"{op}#{next(_IDS)}"
        self.attrs = attrs

    def __repr__(self):
        return f"Node({self.op!r}, shape={self.shape}, name={self.name!r})"


def param(name, shape):
    """Trainable leaf; bound at evaluate time, differentiated by backward."""
    return Node("param", _as_shape(shape), name=name)


def placeholder(name, shape):
    """Non-trainable leaf (features, labels, masks); bound at evaluate time."""
    return Node("input", _as_shape(shape), name=name)


def constant(value, name=None):
    arr = np.asarray(value, dtype=np.float64)
    return Node("const", arr.shape, name=name, value=arr)


def _as_shape(shape):
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(s) for s in shape)


def _lift(x):
    return x if isinstance(x, Node) else constant(x)


# ---------------------------------------------------------------------------
# builders


def _broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise GraphError(
            f"{op}: shapes {a.shape} and {b.shape} do not broadcast "
            f"(operands {a.name}, {b.name})"
        ) from None


def add(a, b):
    a, b = _lift(a), _lift(b)
    return Node("add", _broadcast(a, b, "add"), (a, b))


def sub(a, b):
    a, b = _lift(a), _lift(b)
    return Node("sub", _broadcast(a, b, "sub"), (a, b))


def mul(a, b):
    a, b = _lift(a), _lift(b)
    return Node("mul", _broadcast(a, b, "mul"), (a, b))


def div(a, b):
    a, b = _lift(a), _lift(b)
    return Node("div", _broadcast(a, b, "div"), (a, b))


def scale(a, c):
    """Multiply by a Python scalar."""
    return mul(a, constant(float(c)))


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.shape == () or b.shape == () or len(a.shape) > 2 or len(b.shape) > 2:
        raise GraphError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    ka = a.shape[-1]
    kb = b.shape[0]
    if ka != kb:
        raise GraphError(
            f"matmul: inner extents differ, {a.shape} @ {b.shape} "
            f"(operands {a.name}, {b.name})"
        )
    shape = ()
    if len(a.shape) == 2:
        shape += (a.shape[0],)
    if len(b.shape) == 2:
        shape += (b.shape[1],)
    return Node("matmul", shape, (a, b))


def tanh(a):
    a = _lift(a)
    return Node("tanh", a.shape, (a,))


def sigmoid(a):
    a = _lift(a)
    return Node("sigmoid", a.shape, (a,))


def softmax(a):
    """Row-wise softmax over the last axis, computed with max subtraction."""
    a = _lift(a)
    if a.shape == ():
        raise GraphError("softmax: scalar operand")
    return Node("softmax", a.shape, (a,))


def log(a, floor=0.0):
    """Natural log; operand is clamped to `floor` first when floor > 0."""
    a = _lift(a)
    return Node("log", a.shape, (a,), floor=float(floor))


def sqrt(a):
    a = _lift(a)
    return Node("sqrt", a.shape, (a,))


def _reduced_shape(a, axis, op):
    if axis is None:
        return ()
    if len(a.shape) == 0 or axis not in (0, 1) or axis >= len(a.shape):
        raise GraphError(f"{op}: axis {axis} invalid for shape {a.shape}")
    return tuple(s for i, s in enumerate(a.shape) if i != axis)


def reduce_sum(a, axis=None):
    a = _lift(a)
    return Node("sum", _reduced_shape(a, axis, "sum"), (a,), axis=axis)


def reduce_mean(a, axis=None):
    a = _lift(a)
    return Node("mean", _reduced_shape(a, axis, "mean"), (a,), axis=axis)


def variance(a, axis=None):
    """Population variance (1/n) along `axis`, or over all entries."""
    a = _lift(a)
    return Node("variance", _reduced_shape(a, axis, "variance"), (a,), axis=axis)


def covariance(a, b, axis=None):
    """Population covariance of two same-shaped operands."""
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise GraphError(f"covariance: shapes {a.shape} != {b.shape}")
    return Node("covariance", _reduced_shape(a, axis, "covariance"), (a, b), axis=axis)


def concat(nodes, axis=0):
    nodes = tuple(_lift(n) for n in nodes)
    if not nodes:
        raise GraphError("concat: no operands")
    base = nodes[0].shape
    if any(len(n.shape) != len(base) or len(base) <= axis for n in nodes):
        raise GraphError(f"concat: inconsistent ranks at axis {axis}")
    for n in nodes[1:]:
        for i, (x, y) in enumerate(zip(base, n.shape)):
            if i != axis and x != y:
                raise GraphError(
                    f"concat: shape {n.shape} of {n.name} incompatible with {base}"
                )
    shape = list(base)
    shape[axis] = sum(n.shape[axis] for n in nodes)
    return Node("concat", shape, nodes, axis=axis)


def apply_mask(a, mask):
    """Elementwise product with a fixed 0/1 array; masked entries get
    exactly-zero values and exactly-zero gradients."""
    a = _lift(a)
    m = np.asarray(mask, dtype=np.float64)
    if np.broadcast_shapes(a.shape, m.shape) != a.shape:
        raise GraphError(f"apply_mask: mask {m.shape} does not fit {a.shape}")
    return Node("mask", a.shape, (a,), mask=m)


def affine(x, w, b):
    """x @ w + b, the ubiquitous dense-layer composition."""
    return add(matmul(x, w), b)


# ---------------------------------------------------------------------------
# forward rules


def _fw_softmax(x):
    z = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def _fw_log(node, x):
    floor = node.attrs["floor"]
    return np.log(np.maximum(x, floor)) if floor > 0.0 else np.log(x)


def _centered(x, axis):
    return x - np.mean(x, axis=axis, keepdims=axis is not None)


_FORWARD = {
    "add": lambda n, a, b: a + b,
    "sub": lambda n, a, b: a - b,
    "mul": lambda n, a, b: a * b,
    "div": lambda n, a, b: a / b,
    "matmul": lambda n, a, b: np.matmul(a, b),
    "tanh": lambda n, a: np.tanh(a),
    "sigmoid": lambda n, a: 1.0 / (1.0 + np.exp(-a)),
    "softmax": lambda n, a: _fw_softmax(a),
    "log": _fw_log,
    "sqrt": lambda n, a: np.sqrt(a),
    "sum": lambda n, a: np.sum(a, axis=n.attrs["axis"]),
    "mean": lambda n, a: np.mean(a, axis=n.attrs["axis"]),
    "variance": lambda n, a: np.mean(
        _centered(a, n.attrs["axis"]) ** 2, axis=n.attrs["axis"]
    ),
    "covariance": lambda n, a, b: np.mean(
        _centered(a, n.attrs["axis"]) * _centered(b, n.attrs["axis"]),
        axis=n.attrs["axis"],
    ),
    "concat": lambda n, *parts: np.concatenate(parts, axis=n.attrs["axis"]),
    "mask": lambda n, a: a * n.attrs["mask"],
}


# ---------------------------------------------------------------------------
# backward rules; each returns one gradient per parent


def _unbroadcast(grad, shape):
    """Sum `grad` over axes that were broadcast to reach the parent shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _bw_matmul(node, g, a, b):
    a2 = a.reshape(1, -1) if a.ndim == 1 else a
    b2 = b.reshape(-1, 1) if b.ndim == 1 else b
    g2 = g.reshape(a2.shape[0], b2.shape[1])
    da = g2 @ b2.T
    db = a2.T @ g2
    return da.reshape(a.shape), db.reshape(b.shape)


def _bw_softmax(node, g, y):
    inner = np.sum(g * y, axis=-1, keepdims=True)
    return ((g - inner) * y,)


def _bw_log(node, g, x):
    floor = node.attrs["floor"]
    if floor > 0.0:
        clamped = np.maximum(x, floor)
        return (np.where(x >= floor, g / clamped, 0.0),)
    return (g / x,)


def _expand(g, axis, shape):
    """Broadcast a reduced gradient back over the reduced axis."""
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


def _bw_reduce_sum(node, g, x):
    return (_expand(g, node.attrs["axis"], x.shape).copy(),)


def _bw_reduce_mean(node, g, x):
    axis = node.attrs["axis"]
    n = x.size if axis is None else x.shape[axis]
    return (_expand(g, axis, x.shape) / n,)


def _bw_variance(node, g, x):
    axis = node.attrs["axis"]
    n = x.size if axis is None else x.shape[axis]
    return (_expand(g, axis, x.shape) * 2.0 * _centered(x, axis) / n,)


def _bw_covariance(node, g, x, y):
    axis = node.attrs["axis"]
    n = x.size if axis is None else x.shape[axis]
    ge = _expand(g, axis, x.shape)
    return ge * _centered(y, axis) / n, ge * _centered(x, axis) / n


def _bw_concat(node, g, *parts):
    axis = node.attrs["axis"]
    sizes = [p.shape[axis] for p in parts]
    return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))


_BACKWARD = {
    "add": lambda n, g, a, b: (
        _unbroadcast(g, a.shape),
        _unbroadcast(g, b.shape),
    ),
    "sub": lambda n, g, a, b: (
        _unbroadcast(g, a.shape),
        _unbroadcast(-g, b.shape),
    ),
    "mul": lambda n, g, a, b: (
        _unbroadcast(g * b, a.shape),
        _unbroadcast(g * a, b.shape),
    ),
    "div": lambda n, g, a, b: (
        _unbroadcast(g / b, a.shape),
        _unbroadcast(-g * a / (b * b), b.shape),
    ),
    "matmul": _bw_matmul,
    "tanh": lambda n, g, x, y: (g * (1.0 - y * y),),
    "sigmoid": lambda n, g, x, y: (g * y * (1.0 - y),),
    "softmax": lambda n, g, x, y: _bw_softmax(n, g, y),
    "log": _bw_log,
    "sqrt": lambda n, g, x, y: (g / (2.0 * y),),
    "sum": _bw_reduce_sum,
    "mean": _bw_reduce_mean,
    "variance": _bw_variance,
    "covariance": _bw_covariance,
    "concat": _bw_concat,
    "mask": lambda n, g, a: (g * n.attrs["mask"],),
}

# ops whose backward rule reads the cached output, not just the inputs
_NEEDS_OUTPUT = {"tanh", "sigmoid", "softmax", "sqrt"}


def _toposort(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    return order


# ---------------------------------------------------------------------------
# the graph


class Graph:
    """A rooted DAG with cached topological order and evaluation state.

    Single-writer: evaluate/backward on one instance must not be
    interleaved across threads. Distinct Graph instances are independent
    even when they share Node objects, so separate graphs may run in
    parallel over separate bindings.
    """

    def __init__(self, root, extra_params=()):
        self.root = root
        self.order = _toposort(root)
        self.params = {n.name: n for n in self.order if n.op == "param"}
        self.inputs = {n.name: n for n in self.order if n.op == "input"}
        # declared-but-unused parameters still get (zero) gradients
        for p in extra_params:
            self.params.setdefault(p.name, p)
        self._values = None

    def evaluate(self, bindings):
        """Run the forward pass; returns the root value.

        `bindings` maps every param/input leaf name to an array of the
        declared shape (extra keys are ignored). Intermediate values are
        cached for backward.
        """
        values = {}
        for node in self.order:
            if node.op == "const":
                v = node.attrs["value"]
            elif node.op in ("param", "input"):
                if node.name not in bindings:
                    raise GraphError(f"missing binding for leaf '{node.name}'")
                v = np.asarray(bindings[node.name], dtype=np.float64)
                if v.shape != node.shape:
                    raise GraphError(
                        f"binding for '{node.name}' has shape {v.shape}, "
                        f"expected {node.shape}"
                    )
            else:
                args = [values[id(p)] for p in node.parents]
                with np.errstate(all="ignore"):
                    v = _FORWARD[node.op](node, *args)
                bad = ~np.isfinite(np.asarray(v))
                if bad.any():
                    idx = int(np.flatnonzero(bad.ravel())[0])
                    raise GraphError(
                        f"non-finite value in node '{node.name}' at flat index {idx}"
                    )
            values[id(node)] = v
        self._values = values
        return values[id(self.root)]

    def cached_value(self, node):
        """Value of any node from the most recent evaluate call."""
        if self._values is None:
            raise GraphError("cached_value called before evaluate")
        return self._values[id(node)]

    def backward(self):
        """Gradient of the scalar root w.r.t. every parameter leaf.

        Visits nodes in exact reverse topological order; parameters the
        root never reads come back as exactly-zero arrays.
        """
        if self._values is None:
            raise GraphError("backward called before evaluate")
        if self.root.shape != ():
            raise GraphError(f"root must be scalar, has shape {self.root.shape}")
        values = self._values
        grads = {id(self.root): np.ones((), dtype=np.float64)}
        for node in reversed(self.order):
            if node.op in ("param", "input", "const"):
                continue
            g = grads.pop(id(node), None)
            if g is None:
                continue
            args = [values[id(p)] for p in node.parents]
            if node.op in _NEEDS_OUTPUT:
                args.append(values[id(node)])
            parent_grads = _BACKWARD[node.op](node, g, *args)
            for p, pg in zip(node.parents, parent_grads):
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return {
            name: grads.get(id(p), np.zeros(p.shape))
            for name, p in self.params.items()
        }


def evaluate(graph, bindings):
    return graph.evaluate(bindings)


def backward(graph):
    return graph.backward()


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class CoordRecord:
    param: str
    index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradientReport:
    """Comparison of analytic gradients against central differences."""

    epsilon: float
    seed: int
    records: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def max_rel_error(self):
        return max((r.rel_error for r in self.records), default=0.0)

    def per_param_max(self):
        out = {}
        for r in self.records:
            out[r.param] = max(out.get(r.param, 0.0), r.rel_error)
        return out

    def passed(self, threshold=1e-4):
        return self.max_rel_error < threshold

    def to_dict(self):
        return {
            "schema_version": "1",
            "epsilon": self.epsilon,
            "seed": self.seed,
            "n_coords": len(self.records),
            "max_rel_error": self.max_rel_error,
            "per_param_max": self.per_param_max(),
            "warnings": list(self.warnings),
            "records": [vars(r) for r in self.records],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def grad_check(graph, bindings, epsilon=1e-6, n_coords=100, seed=0, skip_params=()):
    """Compare backward() against central differences at sampled coordinates.

    Coordinates are drawn without replacement from the concatenation of
    all parameter arrays, deterministically from `seed`. The relative
    error of each coordinate is |g_a - g_fd| / max(|g_a|, |g_fd|, 1e-12).

    `skip_params` removes parameters from the sampled universe. Use it
    for parameters whose true gradient is identically zero through an
    invariance of the objective (e.g. a pure shift direction of a
    shift-invariant loss): there both routes return only rounding noise
    and the ratio carries no information; assert near-zero agreement on
    them directly instead.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if n_coords < 1:
        raise ValueError("n_coords must be >= 1")
    report = GradientReport(epsilon=epsilon, seed=seed)
    lo, hi = EPSILON_BAND
    if not lo <= epsilon <= hi:
        report.warnings.append(
            f"epsilon {epsilon:g} outside [{lo:g}, {hi:g}]; truncation or "
            "roundoff error may dominate the comparison"
        )

    graph.evaluate(bindings)
    analytic = graph.backward()

    names = sorted(n for n in graph.params if n not in set(skip_params))
    sizes = [int(np.prod(graph.params[n].shape)) if graph.params[n].shape else 1
             for n in names]
    offsets = np.cumsum([0] + sizes)
    total = int(offsets[-1])
    if total == 0:
        raise GraphError("grad_check: graph has no parameters")

    rng = np.random.default_rng(seed)
    if n_coords >= total:
        flat = np.arange(total)
    else:
        flat = np.sort(rng.choice(total, size=n_coords, replace=False))

    for f in flat:
        k = int(np.searchsorted(offsets, f, side="right") - 1)
        name, idx = names[k], int(f - offsets[k])
        base = np.asarray(bindings[name], dtype=np.float64)
        fd = []
        for delta in (epsilon, -epsilon):
            bumped = base.copy().reshape(-1)
            bumped[idx] += delta
            trial = dict(bindings)
            trial[name] = bumped.reshape(base.shape)
            fd.append(float(graph.evaluate(trial)))
        numeric = (fd[0] - fd[1]) / (2.0 * epsilon)
        ga = float(np.asarray(analytic[name]).reshape(-1)[idx])
        rel = abs(ga - numeric) / max(abs(ga), abs(numeric), 1e-12)
        report.records.append(CoordRecord(name, idx, ga, numeric, rel))

    graph.evaluate(bindings)  # restore unperturbed cache
    return report

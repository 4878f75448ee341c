"""Reverse-mode differentiation over small dense-tensor graphs.

The engine is deliberately minimal: nodes are immutable, shapes are static
(decided at graph construction), and all values are 64-bit floats.  Adjoints
are emitted as ordinary graph nodes ("graph of the gradient"), so the result
of :func:`input_grad` is itself differentiable.  That is what lets losses
containing a network's input gradient (e.g. ``grad_psi(x)``) be optimized
with respect to the network parameters without any special second-order
machinery.

Supported operations: affine (matmul + bias), elementwise CELU, elementwise
square, sum, mean, dot, scale, concat, min/max over rows, plus the handful
of structural primitives (transpose, expand, slice, ...) those lower to.

Arrays are rank 0, 1 or 2.  There is no implicit broadcasting beyond the
few documented cases (matrix + row vector, anything + scalar); everything
else must be expanded explicitly, which keeps adjoint shapes unambiguous.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "AdError",
    "ShapeError",
    "UnboundLeafError",
    "DivergenceError",
    "Node",
    "Graph",
    "GradTape",
    "AdamState",
    "leaf",
    "param",
    "const",
    "add",
    "sub",
    "neg",
    "mul",
    "scale",
    "square",
    "exp",
    "minzero",
    "stepneg",
    "celu",
    "celugrad",
    "relu",
    "matmul",
    "transpose",
    "reduce_sum",
    "reduce_mean",
    "dot",
    "concat",
    "narrow",
    "row_min",
    "row_max",
    "expand_rows",
    "expand_cols",
    "bcast",
    "affine",
    "sq_norm",
    "topo_order",
    "compile_nodes",
    "eval_graph",
    "gradients",
    "input_grad",
    "param_grad",
    "adam_init",
    "adam_step",
]

Shape = tuple[int, ...]

_ids = itertools.count()


class _Intern:
    """Structural sharing of nodes.

    Node ids are never reused, so a key of (op, parent ids, payload) stays
    valid for the lifetime of the process; entries die with their nodes.
    Constants are not interned (array payloads), leaves are, which also
    makes repeated subgraph builders reuse one leaf object per name.
    """

    def __init__(self):
        import weakref

        self._table: "weakref.WeakValueDictionary[tuple, Node]" = (
            weakref.WeakValueDictionary()
        )

    def get(self, op: str, parents: tuple, shape: Shape, aux) -> "Node":
        if op == "const":
            return Node(op, parents, shape, aux)
        key = (op, tuple(p.nid for p in parents), shape, aux)
        node = self._table.get(key)
        if node is None:
            node = Node(op, parents, shape, aux)
            self._table[key] = node
        return node


_intern = _Intern()


def _mk(op: str, parents: tuple, shape: Shape, aux=None) -> "Node":
    return _intern.get(op, parents, shape, aux)


class AdError(Exception):
    """Base class for engine errors."""


class ShapeError(AdError):
    pass


class UnboundLeafError(AdError):
    pass


class DivergenceError(AdError):
    """Raised when a loss evaluates to a non-finite value.

    Recoverable by design: training harnesses catch it, flag the run and
    keep the last finite checkpoint.
    """


class Node:
    """One operation in a graph.  Immutable after construction."""

    __slots__ = ("op", "parents", "shape", "aux", "nid", "__weakref__")

    def __init__(self, op: str, parents: Sequence["Node"], shape: Shape, aux=None):
        self.op = op
        self.parents = tuple(parents)
        self.shape = tuple(shape)
        self.aux = aux
        self.nid = next(_ids)

    def __repr__(self) -> str:
        return f"Node({self.op}, shape={self.shape}, id={self.nid})"


# ---------------------------------------------------------------------------
# constructors


def leaf(name: str, shape: Iterable[int], role: str = "input") -> Node:
    """A named free variable, bound at evaluation time."""
    if role not in ("input", "param"):
        raise ValueError(f"unknown leaf role {role!r}")
    return _mk("leaf", (), tuple(shape), (name, role))


def param(name: str, shape: Iterable[int]) -> Node:
    return leaf(name, shape, role="param")


def const(value) -> Node:
    arr = np.asarray(value, dtype=np.float64)
    return _mk("const", (), arr.shape, arr)


def _check_rank(a: Node, ranks: tuple[int, ...], who: str) -> None:
    if len(a.shape) not in ranks:
        raise ShapeError(f"{who}: unsupported rank for shape {a.shape}")


def add(a: Node, b: Node) -> Node:
    if a.shape == b.shape:
        out = a.shape
    elif len(a.shape) == 2 and b.shape == (a.shape[1],):
        out = a.shape
    elif len(b.shape) == 2 and a.shape == (b.shape[1],):
        out = b.shape
    elif b.shape == ():
        out = a.shape
    elif a.shape == ():
        out = b.shape
    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    return _mk("add", (a, b), out)


def neg(a: Node) -> Node:
    return _mk("neg", (a,), a.shape)


def sub(a: Node, b: Node) -> Node:
    return add(a, neg(b))


def mul(a: Node, b: Node) -> Node:
    if a.shape == b.shape:
        out = a.shape
    elif b.shape == ():
        out = a.shape
    elif a.shape == ():
        out = b.shape
    else:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    return _mk("mul", (a, b), out)


def scale(a: Node, c: float) -> Node:
    return _mk("scale", (a,), a.shape, float(c))


def square(a: Node) -> Node:
    return _mk("square", (a,), a.shape)


def exp(a: Node) -> Node:
    return _mk("exp", (a,), a.shape)


def minzero(a: Node) -> Node:
    """Elementwise min(x, 0)."""
    return _mk("minzero", (a,), a.shape)


def stepneg(a: Node) -> Node:
    """Elementwise indicator of x < 0.  Derivative is zero a.e."""
    return _mk("stepneg", (a,), a.shape)


def celu(a: Node) -> Node:
    """CELU with alpha = 1: max(0, x) + min(0, exp(x) - 1)."""
    return _mk("celu", (a,), a.shape)


def celugrad(a: Node) -> Node:
    """Derivative of CELU: exp(min(x, 0)), as one fused op."""
    return _mk("celugrad", (a,), a.shape)


def relu(a: Node) -> Node:
    """Positive part, expressed through minzero so gradients compose."""
    return sub(a, minzero(a))


def matmul(a: Node, b: Node) -> Node:
    sa, sb = a.shape, b.shape
    if len(sa) == 2 and len(sb) == 2:
        if sa[1] != sb[0]:
            raise ShapeError(f"matmul: {sa} @ {sb}")
        out: Shape = (sa[0], sb[1])
    elif len(sa) == 2 and len(sb) == 1:
        if sa[1] != sb[0]:
            raise ShapeError(f"matmul: {sa} @ {sb}")
        out = (sa[0],)
    elif len(sa) == 1 and len(sb) == 2:
        if sa[0] != sb[0]:
            raise ShapeError(f"matmul: {sa} @ {sb}")
        out = (sb[1],)
    else:
        raise ShapeError(f"matmul: unsupported ranks {sa} @ {sb}")
    return _mk("matmul", (a, b), out)


def transpose(a: Node) -> Node:
    _check_rank(a, (2,), "transpose")
    return _mk("transpose", (a,), (a.shape[1], a.shape[0]))


def reduce_sum(a: Node, axis: int | None = None) -> Node:
    if axis is None:
        out: Shape = ()
    else:
        _check_rank(a, (2,), "reduce_sum(axis)")
        out = (a.shape[1],) if axis == 0 else (a.shape[0],)
        if axis not in (0, 1):
            raise ShapeError(f"reduce_sum: bad axis {axis}")
    return _mk("sum", (a,), out, axis)


def reduce_mean(a: Node, axis: int | None = None) -> Node:
    n = int(np.prod(a.shape)) if axis is None else a.shape[axis]
    if n == 0:
        raise ShapeError("reduce_mean over empty axis")
    return scale(reduce_sum(a, axis), 1.0 / n)


def dot(a: Node, b: Node) -> Node:
    """Row-wise inner product for matrices, full inner product for vectors."""
    if a.shape != b.shape:
        raise ShapeError(f"dot: shapes {a.shape} and {b.shape}")
    if len(a.shape) == 2:
        return reduce_sum(mul(a, b), axis=1)
    return reduce_sum(mul(a, b))


def concat(parts: Sequence[Node], axis: int = 0) -> Node:
    parts = tuple(parts)
    if not parts:
        raise ShapeError("concat of nothing")
    r = len(parts[0].shape)
    if any(len(p.shape) != r for p in parts):
        raise ShapeError("concat: mixed ranks")
    if r == 1:
        if axis != 0:
            raise ShapeError("concat: 1-d arrays use axis 0")
        out: Shape = (sum(p.shape[0] for p in parts),)
    elif r == 2:
        if axis == 0:
            if len({p.shape[1] for p in parts}) != 1:
                raise ShapeError("concat: column mismatch")
            out = (sum(p.shape[0] for p in parts), parts[0].shape[1])
        elif axis == 1:
            if len({p.shape[0] for p in parts}) != 1:
                raise ShapeError("concat: row mismatch")
            out = (parts[0].shape[0], sum(p.shape[1] for p in parts))
        else:
            raise ShapeError(f"concat: bad axis {axis}")
    else:
        raise ShapeError("concat: rank 0 not supported")
    return _mk("concat", parts, out, axis)


def narrow(a: Node, axis: int, lo: int, hi: int) -> Node:
    """Contiguous slice [lo, hi) along the given axis."""
    if not 0 <= lo < hi <= a.shape[axis]:
        raise ShapeError(f"narrow: [{lo}, {hi}) out of range for {a.shape}")
    out = list(a.shape)
    out[axis] = hi - lo
    return _mk("narrow", (a,), tuple(out), (axis, lo, hi))


def row_min(a: Node) -> Node:
    """Minimum over each row of a matrix: (n, m) -> (n,)."""
    _check_rank(a, (2,), "row_min")
    return _mk("rmin", (a,), (a.shape[0],))


def row_max(a: Node) -> Node:
    _check_rank(a, (2,), "row_max")
    return _mk("rmax", (a,), (a.shape[0],))


def _min_mask(a: Node) -> Node:
    # One-hot argmin per row, first index on ties; constant a.e.
    return _mk("rmin_mask", (a,), a.shape)


def _max_mask(a: Node) -> Node:
    return _mk("rmax_mask", (a,), a.shape)


def expand_rows(v: Node, n: int) -> Node:
    """Tile a vector (m,) into n identical rows: -> (n, m)."""
    _check_rank(v, (1,), "expand_rows")
    return _mk("expand0", (v,), (n, v.shape[0]), n)


def expand_cols(v: Node, m: int) -> Node:
    """Tile a vector (n,) into m identical columns: -> (n, m)."""
    _check_rank(v, (1,), "expand_cols")
    return _mk("expand1", (v,), (v.shape[0], m), m)


def bcast(s: Node, shape: Iterable[int]) -> Node:
    """Broadcast a scalar to the given shape."""
    if s.shape != ():
        raise ShapeError("bcast expects a scalar")
    return _mk("bcast", (s,), tuple(shape))


def affine(x: Node, w: Node, b: Node | None = None) -> Node:
    """x @ w.T (+ b).  Weight convention: (out_features, in_features)."""
    y = matmul(x, transpose(w))
    if b is not None:
        y = add(y, b)
    return y


def sq_norm(a: Node, axis: int | None = None) -> Node:
    """Sum of squares, optionally along one axis of a matrix."""
    return reduce_sum(square(a), axis)


# ---------------------------------------------------------------------------
# forward evaluation


def _fwd_leaf(node, vals, bindings):
    name, _ = node.aux
    try:
        v = bindings[name]
    except KeyError:
        raise UnboundLeafError(f"leaf {name!r} not bound") from None
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape != node.shape:
        raise ShapeError(f"leaf {name!r}: bound {arr.shape}, declared {node.shape}")
    return arr


def _forward(node: Node, args: tuple[np.ndarray, ...]) -> np.ndarray:
    op = node.op
    if op == "add":
        return args[0] + args[1]
    if op == "neg":
        return -args[0]
    if op == "mul":
        return args[0] * args[1]
    if op == "scale":
        return args[0] * node.aux
    if op == "square":
        return args[0] * args[0]
    if op == "exp":
        return np.exp(args[0])
    if op == "minzero":
        return np.minimum(args[0], 0.0)
    if op == "stepneg":
        return (args[0] < 0.0).astype(np.float64)
    if op == "celu":
        x = args[0]
        return np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))
    if op == "celugrad":
        return np.exp(np.minimum(args[0], 0.0))
    if op == "matmul":
        return args[0] @ args[1]
    if op == "transpose":
        return args[0].T
    if op == "sum":
        return np.sum(args[0], axis=node.aux)
    if op == "concat":
        return np.concatenate(args, axis=node.aux)
    if op == "narrow":
        axis, lo, hi = node.aux
        return args[0][lo:hi] if axis == 0 else args[0][:, lo:hi]
    if op == "rmin":
        return np.min(args[0], axis=1)
    if op == "rmax":
        return np.max(args[0], axis=1)
    if op == "rmin_mask":
        m = np.zeros_like(args[0])
        m[np.arange(args[0].shape[0]), np.argmin(args[0], axis=1)] = 1.0
        return m
    if op == "rmax_mask":
        m = np.zeros_like(args[0])
        m[np.arange(args[0].shape[0]), np.argmax(args[0], axis=1)] = 1.0
        return m
    if op == "expand0":
        return np.broadcast_to(args[0], node.shape).copy()
    if op == "expand1":
        return np.broadcast_to(args[0][:, None], node.shape).copy()
    if op == "bcast":
        return np.broadcast_to(args[0], node.shape).copy()
    raise AdError(f"no forward rule for op {node.op!r}")


# ---------------------------------------------------------------------------
# symbolic adjoints


def _reduce_to(g: Node, shape: Shape) -> Node:
    """Sum g down to the given (broadcast-source) shape."""
    if g.shape == shape:
        return g
    if shape == ():
        return reduce_sum(g)
    if len(g.shape) == 2 and shape == (g.shape[1],):
        return reduce_sum(g, axis=0)
    raise ShapeError(f"cannot reduce adjoint {g.shape} to {shape}")


def _vjp(node: Node, g: Node) -> list[Node | None]:
    """Adjoint contributions for each parent, as new graph nodes."""
    op = node.op
    ps = node.parents
    if op == "add":
        return [_reduce_to(g, ps[0].shape), _reduce_to(g, ps[1].shape)]
    if op == "neg":
        return [neg(g)]
    if op == "mul":
        a, b = ps
        ga = mul(g, b) if b.shape in (a.shape, ()) else _reduce_to(mul(g, b), a.shape)
        gb = mul(g, a) if a.shape in (b.shape, ()) else _reduce_to(mul(g, a), b.shape)
        return [ga, gb]
    if op == "scale":
        return [scale(g, node.aux)]
    if op == "square":
        return [mul(g, scale(ps[0], 2.0))]
    if op == "exp":
        return [mul(g, node)]
    if op == "minzero":
        return [mul(g, stepneg(ps[0]))]
    if op == "stepneg":
        return [None]
    if op == "celu":
        return [mul(g, celugrad(ps[0]))]
    if op == "celugrad":
        # d/dx exp(min(x,0)) = exp(min(x,0)) on x<0, zero on x>0
        return [mul(mul(g, node), stepneg(ps[0]))]
    if op == "matmul":
        a, b = ps
        ra, rb = len(a.shape), len(b.shape)
        if ra == 2 and rb == 2:
            return [matmul(g, transpose(b)), matmul(transpose(a), g)]
        if ra == 2 and rb == 1:
            ga = mul(expand_cols(g, b.shape[0]), expand_rows(b, a.shape[0]))
            return [ga, matmul(transpose(a), g)]
        # (k,) @ (k, m)
        gb = mul(expand_cols(a, b.shape[1]), expand_rows(g, b.shape[0]))
        return [matmul(b, g), gb]
    if op == "transpose":
        return [transpose(g)]
    if op == "sum":
        axis = node.aux
        src = ps[0]
        if axis is None:
            if src.shape == ():
                return [g]
            if len(src.shape) == 1:
                return [bcast(g, src.shape)]
            return [bcast(g, src.shape)]
        if axis == 0:
            return [expand_rows(g, src.shape[0])]
        return [expand_cols(g, src.shape[1])]
    if op == "concat":
        axis = node.aux
        outs: list[Node | None] = []
        off = 0
        for p in ps:
            w = p.shape[axis]
            outs.append(narrow(g, axis, off, off + w))
            off += w
        return outs
    if op == "narrow":
        axis, lo, hi = node.aux
        src = ps[0]
        pieces: list[Node] = []
        if lo > 0:
            left = list(src.shape)
            left[axis] = lo
            pieces.append(const(np.zeros(left)))
        pieces.append(g)
        if hi < src.shape[axis]:
            right = list(src.shape)
            right[axis] = src.shape[axis] - hi
            pieces.append(const(np.zeros(right)))
        return [concat(pieces, axis=axis) if len(pieces) > 1 else g]
    if op == "rmin":
        return [mul(expand_cols(g, ps[0].shape[1]), _min_mask(ps[0]))]
    if op == "rmax":
        return [mul(expand_cols(g, ps[0].shape[1]), _max_mask(ps[0]))]
    if op in ("rmin_mask", "rmax_mask"):
        return [None]
    if op == "expand0":
        return [reduce_sum(g, axis=0)]
    if op == "expand1":
        return [reduce_sum(g, axis=1)]
    if op == "bcast":
        return [reduce_sum(g)]
    raise AdError(f"no adjoint rule for op {node.op!r}")


# ---------------------------------------------------------------------------
# topological order, compiled evaluation


def topo_order(roots: Sequence[Node]) -> list[Node]:
    """Deterministic post-order over the union of the roots' ancestors."""
    order: list[Node] = []
    seen: set[int] = set()
    for root in roots:
        stack: list[tuple[Node, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if node.nid in seen:
                continue
            if expanded:
                seen.add(node.nid)
                order.append(node)
            else:
                stack.append((node, True))
                for p in reversed(node.parents):
                    if p.nid not in seen:
                        stack.append((p, False))
    return order


class Compiled:
    """An execution plan for a fixed set of output nodes.

    Values of intermediates are freed as soon as their last consumer has
    run, which keeps peak memory at the live-set size rather than the
    graph size.
    """

    def __init__(self, outputs: Sequence[Node]):
        self.outputs = tuple(outputs)
        self.order = topo_order(self.outputs)
        index = {n.nid: i for i, n in enumerate(self.order)}
        self._args = [tuple(index[p.nid] for p in n.parents) for n in self.order]
        keep = {n.nid for n in self.outputs}
        last_use = [i for i in range(len(self.order))]
        for i, n in enumerate(self.order):
            for p in n.parents:
                last_use[index[p.nid]] = i
        self._free_at: list[list[int]] = [[] for _ in self.order]
        for j, n in enumerate(self.order):
            if n.nid not in keep:
                self._free_at[last_use[j]].append(j)
        self._out_idx = [index[n.nid] for n in self.outputs]

    def run(self, bindings: Mapping[str, np.ndarray]) -> list[np.ndarray]:
        vals: list[np.ndarray | None] = [None] * len(self.order)
        for i, node in enumerate(self.order):
            if node.op == "leaf":
                vals[i] = _fwd_leaf(node, vals, bindings)
            elif node.op == "const":
                vals[i] = node.aux
            else:
                vals[i] = _forward(node, tuple(vals[j] for j in self._args[i]))
            for j in self._free_at[i]:
                if j != i:
                    vals[j] = None
        return [vals[i] for i in self._out_idx]


def compile_nodes(outputs: Sequence[Node]) -> Compiled:
    return Compiled(outputs)


class Graph:
    """A rooted computation graph with a cached execution plan."""

    def __init__(self, root: Node):
        self.root = root
        self._compiled: Compiled | None = None

    def eval(self, bindings: Mapping[str, np.ndarray]) -> np.ndarray:
        if self._compiled is None:
            self._compiled = Compiled([self.root])
        return self._compiled.run(bindings)[0]

    def leaves(self, role: str | None = None) -> list[Node]:
        out = []
        seen: set[str] = set()
        for n in topo_order([self.root]):
            if n.op == "leaf" and (role is None or n.aux[1] == role):
                if n.aux[0] not in seen:
                    seen.add(n.aux[0])
                    out.append(n)
        return out

    def find_leaf(self, name: str) -> Node:
        for n in self.leaves():
            if n.aux[0] == name:
                return n
        raise UnboundLeafError(f"no leaf named {name!r} in graph")


def _as_root(g: "Graph | Node") -> Node:
    return g.root if isinstance(g, Graph) else g


def eval_graph(graph: "Graph | Node", bindings: Mapping[str, np.ndarray]) -> np.ndarray:
    """Evaluate the root. Deterministic: same bindings give identical bits."""
    if isinstance(graph, Graph):
        return graph.eval(bindings)
    return Graph(graph).eval(bindings)


# ---------------------------------------------------------------------------
# symbolic reverse mode


class GradTape:
    """Reverse accumulation over a fixed ordering of nodes.

    The output adjoint seeds to ones; adjoints accumulate additively.  All
    adjoints are graph nodes, so taping the result again yields
    second-order gradients.

    Leaves are identified by name: if the same named leaf was emitted as
    several Node objects (a subgraph builder called twice), their adjoints
    are summed, as for a single shared variable.
    """

    def __init__(self, root: Node, seed: Node | None = None):
        self.root = root
        self.order = topo_order([root])
        self.adjoints: dict[int, Node] = {}
        self._leaf_groups: dict[str, list[Node]] = {}
        for n in self.order:
            if n.op == "leaf":
                group = self._leaf_groups.setdefault(n.aux[0], [])
                if group and group[0].shape != n.shape:
                    raise ShapeError(
                        f"leaf {n.aux[0]!r} used with shapes {group[0].shape} and {n.shape}"
                    )
                group.append(n)
        if seed is None:
            seed = const(np.ones(root.shape))
        if seed.shape != root.shape:
            raise ShapeError("seed shape must match root shape")
        self.adjoints[root.nid] = seed
        for node in reversed(self.order):
            g = self.adjoints.get(node.nid)
            if g is None or not node.parents:
                continue
            for parent, contrib in zip(node.parents, _vjp(node, g)):
                if contrib is None:
                    continue
                if contrib.shape != parent.shape:
                    raise ShapeError(
                        f"adjoint shape {contrib.shape} != parent {parent.shape}"
                    )
                prev = self.adjoints.get(parent.nid)
                self.adjoints[parent.nid] = contrib if prev is None else add(prev, contrib)

    def grad(self, node: Node) -> Node:
        if node.op == "leaf":
            total: Node | None = None
            for twin in self._leaf_groups.get(node.aux[0], [node]):
                g = self.adjoints.get(twin.nid)
                if g is not None:
                    total = g if total is None else add(total, g)
            if total is not None:
                return total
        else:
            g = self.adjoints.get(node.nid)
            if g is not None:
                return g
        return const(np.zeros(node.shape))


def gradients(
    root: Node, wrt: Sequence[Node], seed: Node | None = None
) -> dict[Node, Node]:
    """Symbolic reverse-mode gradients of root with respect to given nodes.

    ``wrt`` entries may be leaves or interior nodes.  For a non-scalar root
    the seed defaults to ones, i.e. the gradient of the summed output; for
    row-independent computations this is exactly the stack of per-row
    gradients.
    """
    tape = GradTape(root, seed)
    return {w: tape.grad(w) for w in wrt}


def input_grad(graph: "Graph | Node", x: "Node | str") -> Graph:
    """Gradient of a scalar-output graph with respect to one input leaf.

    The result is returned as a new rooted view over the same nodes, so
    parameter gradients can still flow through it.
    """
    root = _as_root(graph)
    if root.shape != ():
        raise ShapeError("input_grad requires a scalar output")
    g = graph if isinstance(graph, Graph) else Graph(root)
    node = g.find_leaf(x) if isinstance(x, str) else x
    return Graph(gradients(root, [node])[node])


def param_grad(
    loss: "Graph | Node", bindings: Mapping[str, np.ndarray]
) -> dict[str, np.ndarray]:
    """Evaluate exact gradients of a scalar loss for every parameter leaf.

    Includes paths through emitted input-gradient subgraphs (second-order
    terms).  A non-finite loss raises :class:`DivergenceError`.
    """
    root = _as_root(loss)
    if root.shape != ():
        raise ShapeError("param_grad requires a scalar loss")
    g = loss if isinstance(loss, Graph) else Graph(root)
    params = g.leaves(role="param")
    if not params:
        raise AdError("loss has no parameter leaves")
    grads = gradients(root, params)
    compiled = compile_nodes([root] + [grads[p] for p in params])
    with np.errstate(all="ignore"):
        vals = compiled.run(bindings)
    if not np.isfinite(vals[0]):
        raise DivergenceError(f"loss is non-finite: {vals[0]!r}")
    return {p.aux[0]: v for p, v in zip(params, vals[1:])}


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def adam_init(params: Mapping[str, np.ndarray]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
    )


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    maximize: bool = False,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update.  Ascent is realized by negating gradients."""
    t = state.step + 1
    out: dict[str, np.ndarray] = {}
    m: dict[str, np.ndarray] = {}
    v: dict[str, np.ndarray] = {}
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for k, p in params.items():
        g = grads[k]
        if maximize:
            g = -g
        mk = beta1 * state.m[k] + (1.0 - beta1) * g
        vk = beta2 * state.v[k] + (1.0 - beta2) * g * g
        out[k] = p - lr * (mk / c1) / (np.sqrt(vk / c2) + eps)
        m[k] = mk
        v[k] = vk
    return out, AdamState(m=m, v=v, step=t)

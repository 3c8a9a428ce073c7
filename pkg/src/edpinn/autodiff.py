"""Small automatic differentiation engine for MLP-sized problems.

Two modes live here:

* reverse mode: :class:`Var` nodes hold numpy values and record the primitive
  that produced them.  :func:`gradients` walks the recorded graph backwards.
  Every vector-Jacobian rule is written with the same generic primitives, so
  passing ``create_graph=True`` yields gradients that are themselves
  differentiable (gradients of gradients, used for unrolled training).
* forward mode: :class:`Dual` carries a tangent next to its primal value.
  Duals nest (a dual whose parts are duals gives second derivatives) and are
  tagged, so perturbations introduced at different levels never mix.

Primal and tangent parts may be plain arrays, ``Var`` nodes or other duals;
all primitives below dispatch on the operand types.  Arithmetic is float64.
"""
from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Var", "Dual", "Tape", "NumericOverflowError", "DifferentiableFunction",
    "variable", "value_of", "shape_of",
    "add", "sub", "mul", "div", "neg", "power", "matmul", "tanh", "sin", "cos",
    "exp", "log", "absolute", "abs_plus", "sqrt", "square_norm", "sum_", "reshape",
    "swap_last", "getitem", "concat", "broadcast_to", "solve", "inv", "logdet",
    "gradients", "grad", "jacobian", "input_derivative", "primal", "tangent",
]


class NumericOverflowError(ArithmeticError):
    """A primitive produced a non-finite value."""

    def __init__(self, primitive: str, detail: str = ""):
        self.primitive = primitive
        msg = f"non-finite value produced by primitive '{primitive}'"
        super().__init__(msg + (f" ({detail})" if detail else ""))


# ---------------------------------------------------------------------------
# primitives


class Primitive:
    __slots__ = ("name", "fwd", "vjp")

    def __init__(self, name: str, fwd: Callable, vjp: Callable):
        self.name = name
        self.fwd = fwd
        self.vjp = vjp

    def __repr__(self):
        return f"Primitive({self.name})"


_SEQ = itertools.count()


class Var:
    """Node of the reverse-mode graph.

    ``operands`` keeps every operand of the producing primitive (constants as
    arrays, tracked inputs as ``Var``) so the tape can be replayed.
    """

    __slots__ = ("value", "prim", "operands", "attrs", "seq", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.prim = None
        self.operands = ()
        self.attrs = None
        # creation order: a node can only depend on nodes with smaller seq
        self.seq = next(_SEQ)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        op = self.prim.name if self.prim is not None else "leaf"
        return f"Var({op}, shape={self.value.shape})"

    def __len__(self):
        return len(self.value)

    __add__ = lambda a, b: add(a, b)
    __radd__ = lambda a, b: add(b, a)
    __sub__ = lambda a, b: sub(a, b)
    __rsub__ = lambda a, b: sub(b, a)
    __mul__ = lambda a, b: mul(a, b)
    __rmul__ = lambda a, b: mul(b, a)
    __truediv__ = lambda a, b: div(a, b)
    __rtruediv__ = lambda a, b: div(b, a)
    __matmul__ = lambda a, b: matmul(a, b)
    __rmatmul__ = lambda a, b: matmul(b, a)
    __neg__ = lambda a: neg(a)
    __pow__ = lambda a, p: power(a, p)
    __getitem__ = lambda a, idx: getitem(a, idx)


def variable(x) -> Var:
    """Leaf node to differentiate with respect to."""
    return Var(np.array(x, dtype=np.float64))


def _node(prim: Primitive, value, operands, attrs=None) -> Var:
    v = Var.__new__(Var)
    v.value = value
    v.prim = prim
    v.operands = operands
    v.attrs = attrs
    v.seq = next(_SEQ)
    return v


def value_of(x):
    """Strip all differentiation structure (tape nodes and tangents)."""
    while True:
        if type(x) is Var:
            return x.value
        if type(x) is Dual:
            x = x.primal
            continue
        return np.asarray(x, dtype=np.float64) if not isinstance(x, np.ndarray) else x


def shape_of(x):
    if type(x) is Dual:
        return shape_of(x.primal)
    if type(x) is Var:
        return x.value.shape
    return np.shape(x)


def _raw(x):
    return x.value if type(x) is Var else x


def _apply(prim: Primitive, operands: tuple, attrs=None):
    vals = tuple(o.value if type(o) is Var else o for o in operands)
    out = prim.fwd(*vals, **attrs) if attrs else prim.fwd(*vals)
    for o in operands:
        if type(o) is Var:
            return _node(prim, out, operands, attrs)
    return out


def _unbroadcast(g, shape):
    gshape = shape_of(g)
    if gshape == shape:
        return g
    nlead = len(gshape) - len(shape)
    axes = tuple(range(nlead)) + tuple(
        i + nlead for i, s in enumerate(shape) if s == 1 and gshape[i + nlead] != 1)
    if axes:
        g = sum_(g, axis=axes)
    if shape_of(g) != shape:
        g = reshape(g, shape)
    return g


def _vjp_add(g, ins, out, need):
    return [_unbroadcast(g, shape_of(ins[0])) if need[0] else None,
            _unbroadcast(g, shape_of(ins[1])) if need[1] else None]


def _vjp_sub(g, ins, out, need):
    return [_unbroadcast(g, shape_of(ins[0])) if need[0] else None,
            _unbroadcast(neg(g), shape_of(ins[1])) if need[1] else None]


def _vjp_mul(g, ins, out, need):
    a, b = ins
    return [_unbroadcast(mul(g, b), shape_of(a)) if need[0] else None,
            _unbroadcast(mul(g, a), shape_of(b)) if need[1] else None]


def _vjp_div(g, ins, out, need):
    a, b = ins
    ga = gb = None
    if need[0]:
        ga = _unbroadcast(div(g, b), shape_of(a))
    if need[1]:
        gb = _unbroadcast(neg(div(mul(g, out), b)), shape_of(b))
    return [ga, gb]


def _vjp_neg(g, ins, out, need):
    return [neg(g)]


def _vjp_power(g, ins, out, need, p):
    (x,) = ins
    if p == 2.0:
        return [mul(g, mul(x, 2.0))]
    return [mul(g, mul(power(x, p - 1.0), p))]


def _vjp_matmul(g, ins, out, need):
    a, b = ins
    ga = gb = None
    if need[0]:
        ga = _unbroadcast(matmul(g, swap_last(b)), shape_of(a))
    if need[1]:
        gb = _unbroadcast(matmul(swap_last(a), g), shape_of(b))
    return [ga, gb]


def _vjp_tanh(g, ins, out, need):
    return [mul(g, sub(1.0, mul(out, out)))]


def _vjp_sin(g, ins, out, need):
    return [mul(g, cos(ins[0]))]


def _vjp_cos(g, ins, out, need):
    return [neg(mul(g, sin(ins[0])))]


def _vjp_exp(g, ins, out, need):
    return [mul(g, out)]


def _vjp_log(g, ins, out, need):
    return [div(g, ins[0])]


def _vjp_abs_plus(g, ins, out, need, c):
    return [mul(g, np.sign(_raw(ins[0])))]


def _vjp_sum(g, ins, out, need, axis, keepdims):
    shape = shape_of(ins[0])
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        axes = tuple(a % len(shape) for a in axes)
        kshape = tuple(1 if i in axes else s for i, s in enumerate(shape))
        g = reshape(g, kshape)
    elif axis is None and not keepdims:
        g = reshape(g, (1,) * len(shape))
    return [broadcast_to(g, shape)]


def _vjp_reshape(g, ins, out, need, shape):
    return [reshape(g, shape_of(ins[0]))]


def _vjp_swap(g, ins, out, need):
    return [swap_last(g)]


def _vjp_getitem(g, ins, out, need, idx):
    return [_scatter(g, idx, shape_of(ins[0]))]


def _vjp_scatter(g, ins, out, need, idx, shape):
    return [getitem(g, idx)]


def _vjp_broadcast(g, ins, out, need, shape):
    return [_unbroadcast(g, shape_of(ins[0]))]


def _vjp_concat(g, ins, out, need, axis):
    grads = []
    start = 0
    nd = len(shape_of(out))
    ax = axis % nd
    for x, nd_ in zip(ins, need):
        size = shape_of(x)[ax]
        if nd_:
            idx = (slice(None),) * ax + (slice(start, start + size),)
            grads.append(getitem(g, idx))
        else:
            grads.append(None)
        start += size
    return grads


def _vjp_solve(g, ins, out, need):
    a, b = ins
    gb = solve(swap_last(a), g)
    ga = neg(matmul(gb, swap_last(out))) if need[0] else None
    return [ga, gb if need[1] else None]


def _vjp_inv(g, ins, out, need):
    ot = swap_last(out)
    return [neg(matmul(ot, matmul(g, ot)))]


def _vjp_logdet(g, ins, out, need):
    gg = reshape(g, shape_of(g) + (1, 1))
    return [mul(gg, swap_last(inv(ins[0])))]


def _fwd_scatter(g, idx, shape):
    z = np.zeros(shape)
    z[idx] = g
    return z


def _fwd_logdet(a):
    sign, ld = np.linalg.slogdet(a)
    return np.where(sign > 0, ld, np.nan)


P_ADD = Primitive("add", np.add, _vjp_add)
P_SUB = Primitive("sub", np.subtract, _vjp_sub)
P_MUL = Primitive("mul", np.multiply, _vjp_mul)
P_DIV = Primitive("div", np.divide, _vjp_div)
P_NEG = Primitive("neg", np.negative, _vjp_neg)
P_POW = Primitive("power", lambda x, p: np.power(x, p), _vjp_power)
P_MATMUL = Primitive("affine", np.matmul, _vjp_matmul)
P_TANH = Primitive("tanh", np.tanh, _vjp_tanh)
P_SIN = Primitive("sin", np.sin, _vjp_sin)
P_COS = Primitive("cos", np.cos, _vjp_cos)
P_EXP = Primitive("exp", np.exp, _vjp_exp)
P_LOG = Primitive("log", np.log, _vjp_log)
P_ABSP = Primitive("abs_plus", lambda x, c: np.abs(x) + c, _vjp_abs_plus)
P_SUM = Primitive("sum", lambda x, axis, keepdims: np.sum(x, axis=axis, keepdims=keepdims),
                  _vjp_sum)
P_RESHAPE = Primitive("reshape", lambda x, shape: np.reshape(x, shape), _vjp_reshape)
P_SWAP = Primitive("transpose", lambda x: np.swapaxes(x, -1, -2), _vjp_swap)
P_GETITEM = Primitive("getitem", lambda x, idx: x[idx], _vjp_getitem)
P_SCATTER = Primitive("scatter", _fwd_scatter, _vjp_scatter)
P_BCAST = Primitive("broadcast", lambda x, shape: np.broadcast_to(x, shape), _vjp_broadcast)
P_CONCAT = Primitive("concat", lambda *xs, axis: np.concatenate(xs, axis=axis), _vjp_concat)
P_SOLVE = Primitive("solve", np.linalg.solve, _vjp_solve)
P_INV = Primitive("inv", np.linalg.inv, _vjp_inv)
P_LOGDET = Primitive("logdet", _fwd_logdet, _vjp_logdet)


# ---------------------------------------------------------------------------
# forward mode

_tags = itertools.count(1)


class Dual:
    """Value plus tangent.  ``tangent is None`` means an exactly zero tangent.

    Larger tags sit outside smaller ones; mixing two duals with different
    tags treats the inner-tagged one as a constant of the outer level.
    """

    __slots__ = ("primal", "tangent", "tag")
    __array_priority__ = 1001

    def __init__(self, primal, tangent=None, tag: int | None = None):
        self.primal = primal
        self.tangent = tangent
        self.tag = next(_tags) if tag is None else tag

    @property
    def shape(self):
        return shape_of(self.primal)

    def __repr__(self):
        return f"Dual(tag={self.tag}, shape={self.shape})"

    __add__ = Var.__add__
    __radd__ = Var.__radd__
    __sub__ = Var.__sub__
    __rsub__ = Var.__rsub__
    __mul__ = Var.__mul__
    __rmul__ = Var.__rmul__
    __truediv__ = Var.__truediv__
    __rtruediv__ = Var.__rtruediv__
    __matmul__ = Var.__matmul__
    __rmatmul__ = Var.__rmatmul__
    __neg__ = Var.__neg__
    __pow__ = Var.__pow__
    __getitem__ = Var.__getitem__


def new_tag() -> int:
    return next(_tags)


def primal(x, tag: int | None = None):
    """Primal part at level ``tag`` (outermost level when ``tag`` is None)."""
    if type(x) is Dual and (tag is None or x.tag == tag):
        return x.primal
    return x


def tangent(x, tag: int | None = None):
    """Tangent part at level ``tag``; zeros if ``x`` carries no such level."""
    if type(x) is Dual and (tag is None or x.tag == tag):
        t = x.tangent
        return np.zeros(shape_of(x.primal)) if t is None else t
    return np.zeros(shape_of(x))


def _top_tag(a, b):
    ta = a.tag if type(a) is Dual else 0
    tb = b.tag if type(b) is Dual else 0
    return ta if ta >= tb else tb


def _split(x, tag):
    if type(x) is Dual and x.tag == tag:
        return x.primal, x.tangent
    return x, None


def _tadd(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return add(a, b)


def _dual_unary(x: Dual, f, df):
    """f(x) with tangent df(x_primal, f_value) * dx."""
    p = x.primal
    y = f(p)
    t = None if x.tangent is None else mul(df(p, y), x.tangent)
    return Dual(y, t, x.tag)


def _dual_binary(op, a, b):
    tag = _top_tag(a, b)
    ap, at = _split(a, tag)
    bp, bt = _split(b, tag)
    if op is add:
        return Dual(add(ap, bp), _tadd(at, bt), tag)
    if op is sub:
        return Dual(sub(ap, bp), _tadd(at, None if bt is None else neg(bt)), tag)
    if op is mul:
        t1 = None if at is None else mul(at, bp)
        t2 = None if bt is None else mul(ap, bt)
        return Dual(mul(ap, bp), _tadd(t1, t2), tag)
    if op is div:
        q = div(ap, bp)
        t1 = None if at is None else at
        t2 = None if bt is None else neg(mul(q, bt))
        t = _tadd(t1, t2)
        return Dual(q, None if t is None else div(t, bp), tag)
    if op is matmul:
        t1 = None if at is None else matmul(at, bp)
        t2 = None if bt is None else matmul(ap, bt)
        return Dual(matmul(ap, bp), _tadd(t1, t2), tag)
    raise TypeError(op)


def _dual_struct(x: Dual, f):
    return Dual(f(x.primal), None if x.tangent is None else f(x.tangent), x.tag)


# ---------------------------------------------------------------------------
# generic primitives (ndarray | Var | Dual)


def add(a, b):
    if type(a) is Dual or type(b) is Dual:
        return _dual_binary(add, a, b)
    return _apply(P_ADD, (a, b))


def sub(a, b):
    if type(a) is Dual or type(b) is Dual:
        return _dual_binary(sub, a, b)
    return _apply(P_SUB, (a, b))


def mul(a, b):
    if type(a) is Dual or type(b) is Dual:
        return _dual_binary(mul, a, b)
    return _apply(P_MUL, (a, b))


def div(a, b):
    if type(a) is Dual or type(b) is Dual:
        return _dual_binary(div, a, b)
    return _apply(P_DIV, (a, b))


def matmul(a, b):
    """Affine-map core: batched matrix product over the last two axes."""
    if type(a) is Dual or type(b) is Dual:
        return _dual_binary(matmul, a, b)
    return _apply(P_MATMUL, (a, b))


def neg(x):
    if type(x) is Dual:
        return _dual_struct(x, neg)
    return _apply(P_NEG, (x,))


def power(x, p: float):
    """Scalar power with a constant exponent."""
    p = float(p)
    if type(x) is Dual:
        return _dual_unary(x, lambda v: power(v, p),
                           lambda v, y: mul(power(v, p - 1.0), p))
    return _apply(P_POW, (x,), {"p": p})


def sqrt(x):
    return power(x, 0.5)


def tanh(x):
    if type(x) is Dual:
        return _dual_unary(x, tanh, lambda v, y: sub(1.0, mul(y, y)))
    return _apply(P_TANH, (x,))


def sin(x):
    if type(x) is Dual:
        return _dual_unary(x, sin, lambda v, y: cos(v))
    return _apply(P_SIN, (x,))


def cos(x):
    if type(x) is Dual:
        return _dual_unary(x, cos, lambda v, y: neg(sin(v)))
    return _apply(P_COS, (x,))


def exp(x):
    if type(x) is Dual:
        return _dual_unary(x, exp, lambda v, y: y)
    return _apply(P_EXP, (x,))


def log(x):
    if type(x) is Dual:
        return _dual_unary(x, log, lambda v, y: div(1.0, v))
    return _apply(P_LOG, (x,))


def abs_plus(x, c: float = 0.0):
    """|x| + c.  The derivative at 0 is taken as 0."""
    c = float(c)
    if type(x) is Dual:
        return _dual_unary(x, lambda v: abs_plus(v, c),
                           lambda v, y: np.sign(value_of(v)))
    return _apply(P_ABSP, (x,), {"c": c})


def absolute(x):
    return abs_plus(x, 0.0)


def sum_(x, axis=None, keepdims: bool = False):
    if type(x) is Dual:
        return _dual_struct(x, lambda v: sum_(v, axis, keepdims))
    return _apply(P_SUM, (x,), {"axis": axis, "keepdims": keepdims})


def square_norm(x, axis=None, keepdims: bool = False):
    return sum_(mul(x, x), axis=axis, keepdims=keepdims)


def reshape(x, shape):
    shape = tuple(shape)
    if type(x) is Dual:
        return _dual_struct(x, lambda v: reshape(v, shape))
    if shape_of(x) == shape:
        return x
    return _apply(P_RESHAPE, (x,), {"shape": shape})


def swap_last(x):
    """Transpose of the last two axes."""
    if type(x) is Dual:
        return _dual_struct(x, swap_last)
    return _apply(P_SWAP, (x,))


def getitem(x, idx):
    if type(x) is Dual:
        return _dual_struct(x, lambda v: getitem(v, idx))
    return _apply(P_GETITEM, (x,), {"idx": idx})


def _scatter(g, idx, shape):
    return _apply(P_SCATTER, (g,), {"idx": idx, "shape": shape})


def broadcast_to(x, shape):
    shape = tuple(shape)
    if type(x) is Dual:
        return _dual_struct(x, lambda v: broadcast_to(v, shape))
    if shape_of(x) == shape:
        return x
    return _apply(P_BCAST, (x,), {"shape": shape})


def concat(xs: Sequence, axis: int = -1):
    xs = tuple(xs)
    if any(type(x) is Dual for x in xs):
        tag = max(x.tag for x in xs if type(x) is Dual)
        parts = [_split(x, tag) for x in xs]
        p = concat([q for q, _ in parts], axis)
        if all(t is None for _, t in parts):
            return Dual(p, None, tag)
        ts = [np.zeros(shape_of(q)) if t is None else t for q, t in parts]
        return Dual(p, concat(ts, axis), tag)
    return _apply(P_CONCAT, xs, {"axis": axis})


def solve(a, b):
    """Solve a x = b over the last two axes (b is a matrix)."""
    if type(a) is Dual or type(b) is Dual:
        raise TypeError("solve does not support forward-mode tangents")
    return _apply(P_SOLVE, (a, b))


def inv(a):
    if type(a) is Dual:
        raise TypeError("inv does not support forward-mode tangents")
    return _apply(P_INV, (a,))


def logdet(a):
    """log det of symmetric positive-definite matrices (NaN otherwise)."""
    if type(a) is Dual:
        raise TypeError("logdet does not support forward-mode tangents")
    return _apply(P_LOGDET, (a,))


# ---------------------------------------------------------------------------
# tape


class Tape:
    """Topologically ordered record of the primitives leading to ``outputs``.

    Each evaluation builds its own graph, so tapes are never shared.
    """

    def __init__(self, outputs):
        outs = outputs if isinstance(outputs, (list, tuple)) else [outputs]
        self.outputs = [o for o in outs if type(o) is Var]
        self.nodes = _toposort(self.outputs)

    @property
    def leaves(self):
        return [n for n in self.nodes if n.prim is None]

    def __len__(self):
        return len(self.nodes)

    def replay(self, leaf_values: dict | None = None) -> dict:
        """Recompute every node from leaf values; returns {id(node): value}."""
        vals = {}
        leaf_values = leaf_values or {}
        for n in self.nodes:
            if n.prim is None:
                vals[id(n)] = leaf_values.get(id(n), n.value)
                continue
            args = tuple(vals[id(o)] if type(o) is Var else o for o in n.operands)
            vals[id(n)] = n.prim.fwd(*args, **n.attrs) if n.attrs else n.prim.fwd(*args)
        return vals

    def first_nonfinite(self) -> Var | None:
        for n in self.nodes:
            if not np.all(np.isfinite(n.value)):
                return n
        return None


def _toposort(outputs, floor: int = -1) -> list:
    """Nodes reachable from ``outputs``, operands first.

    Nodes created before ``floor`` are not expanded (their ancestors are
    left out).
    """
    order = []
    seen = set()
    stack = [(o, False) for o in reversed(outputs)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node.seq < floor:
            continue
        for o in node.operands:
            if type(o) is Var and id(o) not in seen:
                stack.append((o, False))
    return order


def gradients(output, wrt: Sequence, seed=None, create_graph: bool = False,
              check_finite: bool = True):
    """Reverse-mode gradient of ``output`` (contracted with ``seed``) w.r.t. ``wrt``.

    Returns one entry per element of ``wrt`` (zeros where unconnected).
    With ``create_graph`` the results are ``Var`` nodes that can be
    differentiated again.
    """
    wrt = list(wrt)
    if type(output) is not Var:
        return [np.zeros(shape_of(w)) for w in wrt]
    g0 = np.ones(output.value.shape) if seed is None else seed
    # nothing created before the oldest target can depend on a target, so
    # older parts of the graph (earlier unrolled steps, say) are skipped
    floor = min((w.seq for w in wrt if type(w) is Var), default=output.seq)
    nodes = _toposort([output], floor)
    targets = {id(w) for w in wrt}
    live = set()
    for n in nodes:
        if id(n) in targets:
            live.add(id(n))
            continue
        for o in n.operands:
            if type(o) is Var and id(o) in live:
                live.add(id(n))
                break
    grads = {id(output): g0}
    for n in reversed(nodes):
        g = grads.pop(id(n), None) if id(n) not in targets else grads.get(id(n))
        if g is None or n.prim is None or id(n) not in live:
            continue
        ops = n.operands
        need = tuple(type(o) is Var and id(o) in live for o in ops)
        if not any(need):
            continue
        ins = ops if create_graph else tuple(_raw(o) for o in ops)
        out = n if create_graph else n.value
        if n.attrs:
            pgs = n.prim.vjp(g, ins, out, need, **n.attrs)
        else:
            pgs = n.prim.vjp(g, ins, out, need)
        for o, nd, pg in zip(ops, need, pgs):
            if not nd or pg is None:
                continue
            k = id(o)
            prev = grads.get(k)
            grads[k] = pg if prev is None else add(prev, pg)
    result = []
    for w in wrt:
        g = grads.get(id(w))
        result.append(np.zeros(shape_of(w)) if g is None else g)
    if check_finite:
        bad = any(not np.all(np.isfinite(value_of(r))) for r in result)
        if bad or not np.all(np.isfinite(output.value)):
            culprit = Tape(output).first_nonfinite()
            name = culprit.prim.name if culprit is not None and culprit.prim else "backward"
            raise NumericOverflowError(name)
    return result


# ---------------------------------------------------------------------------
# function-level API


class DifferentiableFunction:
    """R^n -> R^m map written with the generic primitives above."""

    def __init__(self, fn: Callable, arity_in: int, arity_out: int, name: str = "f"):
        if arity_in < 1 or arity_out < 1:
            raise ValueError("arities must be positive")
        self.fn = fn
        self.arity_in = arity_in
        self.arity_out = arity_out
        self.name = name

    def __call__(self, x):
        return self.fn(x)

    def evaluate(self, at) -> np.ndarray:
        return np.asarray(value_of(self.fn(self._point(at))), dtype=np.float64).reshape(-1)

    def _point(self, at) -> np.ndarray:
        at = np.asarray(at, dtype=np.float64).reshape(-1)
        if at.shape != (self.arity_in,):
            raise ValueError(f"{self.name}: expected {self.arity_in} inputs, got {at.shape}")
        return at

    def __repr__(self):
        return f"DifferentiableFunction({self.name}: R^{self.arity_in} -> R^{self.arity_out})"


def jacobian(f: DifferentiableFunction, at) -> np.ndarray:
    """Jacobian (arity_out x arity_in) by one reverse sweep per output."""
    x = variable(f._point(at))
    y = f.fn(x)
    if type(y) is not Var:
        return np.zeros((f.arity_out, f.arity_in))
    if not np.all(np.isfinite(y.value)):
        culprit = Tape(y).first_nonfinite()
        raise NumericOverflowError(culprit.prim.name if culprit and culprit.prim else "input")
    yflat = reshape(y, (f.arity_out,))
    rows = []
    for k in range(f.arity_out):
        seed = np.zeros(f.arity_out)
        seed[k] = 1.0
        rows.append(gradients(yflat, [x], seed=seed)[0])
    return np.stack(rows)


def grad(f: DifferentiableFunction, at) -> np.ndarray:
    """Gradient of a scalar-valued function."""
    if f.arity_out != 1:
        raise ValueError("grad needs a scalar-valued function")
    return jacobian(f, at)[0]


def input_derivative(f: DifferentiableFunction, at, axis: int, order: int = 1) -> np.ndarray:
    """Exact first or second partial derivative along ``axis`` via duals."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    x = f._point(at)
    if not 0 <= axis < f.arity_in:
        raise ValueError("axis out of range")
    e = np.zeros_like(x)
    e[axis] = 1.0
    inner = new_tag()
    if order == 1:
        y = f.fn(Dual(x, e, inner))
        out = tangent(y, inner)
    else:
        outer = new_tag()
        xd = Dual(Dual(x, e, inner), Dual(e, None, inner), outer)
        y = f.fn(xd)
        out = tangent(tangent(y, outer), inner)
    out = np.asarray(value_of(out), dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError("dual", f"axis {axis}, order {order}")
    return out

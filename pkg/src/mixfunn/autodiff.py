"""Exact derivatives for physics-informed losses.

Two layers cooperate here:

* ``Tape``/``Node``: a small reverse-mode engine over numpy arrays.  Every
  primitive appends a record to the tape in execution order, so the tape is
  topologically sorted by construction and ``Tape.backward`` is a single
  reversed sweep.
* ``Jet``: a value bundled with its first and second derivatives with
  respect to chosen network inputs.  Jets are propagated forward through
  the network, and each jet component is itself a tape node, so a loss built
  from ``u_xx`` can still be differentiated with respect to parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from . import functions as fn


class Node:
    """One tape record: a value plus how to pull gradients back to parents."""

    __slots__ = ("value", "parents", "vjp", "fwd", "op", "tape", "index", "requires_grad")

    def __init__(self, tape, value, op, parents=(), vjp=None, fwd=None, requires_grad=False):
        self.tape = tape
        self.value = value
        self.op = op
        self.parents = parents
        self.vjp = vjp
        self.fwd = fwd
        self.requires_grad = requires_grad
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


class Tape:
    """Ordered record of primitive operations."""

    def __init__(self):
        self.nodes: list[Node] = []

    def variable(self, value, name="param") -> Node:
        return Node(self, np.array(value, dtype=float), name, requires_grad=True)

    def constant(self, value) -> Node:
        return Node(self, np.asarray(value, dtype=float), "const")

    def backward(self, out: Node, wrt: Iterable[Node], check: bool = False) -> list[np.ndarray]:
        """Reverse accumulation of d(out)/d(node) for each node in ``wrt``.

        ``out`` must be a scalar.  Non-finite gradients raise
        ``FloatingPointError`` naming the offending primitive (found by a
        second, checked sweep so the common path stays cheap).
        """
        if np.size(out.value) != 1:
            raise ValueError("backward needs a scalar output")
        wrt = list(wrt)
        grads: dict[int, np.ndarray] = {out.index: np.ones_like(out.value)}
        for node in reversed(self.nodes[: out.index + 1]):
            g = grads.pop(node.index, None) if not node.requires_grad else grads.get(node.index)
            if g is None or node.vjp is None:
                continue
            if check and not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient at tape node {node.index} ({node.op})")
            pvals = [p.value for p in node.parents]
            for p, gp in zip(node.parents, node.vjp(g, pvals, node.value)):
                if gp is None or not _needs_grad(p):
                    continue
                if p.index in grads:
                    grads[p.index] = grads[p.index] + gp
                else:
                    grads[p.index] = gp
        result = []
        for w in wrt:
            g = grads.get(w.index)
            g = np.zeros_like(w.value) if g is None else g
            if not np.all(np.isfinite(g)):
                if not check:
                    # second sweep with per-node checks to name the primitive
                    return self.backward(out, wrt, check=True)
                raise FloatingPointError(f"non-finite gradient at tape node {w.index} ({w.op})")
            result.append(g)
        return result

    def replay(self, leaf_values: dict[int, np.ndarray] | None = None) -> list[np.ndarray]:
        """Recompute every recorded value from the leaves.

        ``leaf_values`` optionally substitutes new values for variable leaves,
        keyed by node index.  Returns the recomputed values in tape order.
        """
        leaf_values = leaf_values or {}
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.fwd is None:
                values.append(np.asarray(leaf_values.get(node.index, node.value), dtype=float))
            else:
                values.append(node.fwd(*[values[p.index] for p in node.parents]))
        return values


def _needs_grad(node: Node) -> bool:
    return node.requires_grad or node.vjp is not None


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    raise TypeError("at least one operand must be a tape node")


def _lift(tape: Tape, x) -> Node:
    return x if isinstance(x, Node) else tape.constant(x)


def _unbroadcast(g, shape):
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _record(op, parents, fwd, vjp):
    tape = parents[0].tape
    value = fwd(*[p.value for p in parents])
    if not any(_needs_grad(p) for p in parents):
        return Node(tape, value, op, parents, None, fwd)
    return Node(tape, value, op, parents, vjp, fwd)


def add(a, b) -> Node:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    return _record(
        "add", (a, b), np.add,
        lambda g, pv, v: (_unbroadcast(g, np.shape(pv[0])), _unbroadcast(g, np.shape(pv[1]))),
    )


def sub(a, b) -> Node:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    return _record(
        "sub", (a, b), np.subtract,
        lambda g, pv, v: (_unbroadcast(g, np.shape(pv[0])), _unbroadcast(-g, np.shape(pv[1]))),
    )


def mul(a, b) -> Node:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    na, nb = _needs_grad(a), _needs_grad(b)
    return _record(
        "mul", (a, b), np.multiply,
        lambda g, pv, v: (
            _unbroadcast(g * pv[1], np.shape(pv[0])) if na else None,
            _unbroadcast(g * pv[0], np.shape(pv[1])) if nb else None,
        ),
    )


def div(a, b) -> Node:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    return _record(
        "div", (a, b), np.divide,
        lambda g, pv, v: (
            _unbroadcast(g / pv[1], np.shape(pv[0])),
            _unbroadcast(-g * v / pv[1], np.shape(pv[1])),
        ),
    )


def neg(a: Node) -> Node:
    return _record("neg", (a,), np.negative, lambda g, pv, v: (-g,))


def square(a: Node) -> Node:
    return _record("square", (a,), np.square, lambda g, pv, v: (2.0 * g * pv[0],))


def exp(a: Node) -> Node:
    return _record("exp", (a,), np.exp, lambda g, pv, v: (g * v,))


def matmul(a, b) -> Node:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    na, nb = _needs_grad(a), _needs_grad(b)

    def vjp(g, pv, v):
        x, w = pv
        if x.ndim == 1 and w.ndim == 1:
            return g * w, g * x
        if w.ndim == 1:
            return np.multiply.outer(g, w), np.tensordot(x, g, axes=(list(range(x.ndim - 1)), list(range(g.ndim))))
        if x.ndim == 1:
            return w @ g, np.outer(x, g)
        gx = g @ np.swapaxes(w, -1, -2) if na else None
        gw = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1]) if nb else None
        return gx, gw

    return _record("matmul", (a, b), np.matmul, vjp)


def sum_(a: Node, axis=None) -> Node:
    def vjp(g, pv, v):
        shape = np.shape(pv[0])
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _record("sum", (a,), lambda x: np.sum(x, axis=axis), vjp)


def mean(a: Node, axis=None) -> Node:
    n = np.size(a.value) if axis is None else np.shape(a.value)[axis]
    return mul(sum_(a, axis), 1.0 / n)


def reshape(a: Node, shape) -> Node:
    return _record(
        "reshape", (a,), lambda x: np.reshape(x, shape),
        lambda g, pv, v: (np.reshape(g, np.shape(pv[0])),),
    )


def _has_repeats(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    arrays = [np.asarray(p) for p in parts if not isinstance(p, (slice, int, type(None), type(Ellipsis)))]
    return any(a.size != np.unique(a).size for a in arrays) or len(arrays) > 1


def getitem(a: Node, idx) -> Node:
    scatter_add = _has_repeats(idx)

    def vjp(g, pv, v):
        out = np.zeros_like(pv[0])
        if scatter_add:
            np.add.at(out, idx, g)
        else:
            out[idx] = g
        return (out,)

    return _record("getitem", (a,), lambda x: x[idx], vjp)


def take_last(a: Node, idx) -> Node:
    """``a[..., idx]`` for an integer index array that may repeat entries."""
    idx = np.asarray(idx, dtype=int)
    n = np.shape(a.value)[-1]
    onehot = np.zeros((idx.size, n))
    onehot[np.arange(idx.size), idx] = 1.0
    return _record("take", (a,), lambda x: x[..., idx], lambda g, pv, v: (g @ onehot,))


def concat(xs: list, axis=-1) -> Node:
    t = _tape_of(*xs)
    xs = [_lift(t, x) for x in xs]
    sizes = [np.shape(x.value)[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g, pv, v):
        return tuple(np.split(g, splits, axis=axis))

    return _record("concat", tuple(xs), lambda *vs: np.concatenate(vs, axis=axis), vjp)


def stop_gradient(a: Node) -> Node:
    return a.tape.constant(a.value)


def function_tower(x: Node, kinds, order: int, k: float = fn.DEFAULT_SAFELOG_K) -> list[Node]:
    """Apply per-column functions to ``x`` and return nodes for f, f', ..., f^(order).

    ``kinds`` is either a single kind or one kind per last-axis column.  Each
    returned node differentiates through the next derivative in the tower,
    so ``order`` may be at most 2.
    """
    if order > 2:
        raise ValueError("input-derivative order above 2 is not supported")
    ncol = np.shape(x.value)[-1] if np.ndim(x.value) else 1
    if isinstance(kinds, (list, tuple)):
        if len(kinds) != ncol:
            raise ValueError("one function kind per column required")
        groups: dict = {}
        for j, kd in enumerate(kinds):
            groups.setdefault(kd, []).append(j)
        groups = {kd: np.array(ix) for kd, ix in groups.items()}
    else:
        groups = None

    def towers(xv, n):
        if groups is None:
            return fn.tower(kinds, xv, n, k)
        out = [np.empty_like(xv) for _ in range(n + 1)]
        for kd, ix in groups.items():
            for o, t in zip(out, fn.tower(kd, xv[..., ix], n, k)):
                o[..., ix] = t
        return out

    # one tower evaluation serves every forward value and every pullback
    tw = towers(x.value, order + 1)
    nodes = []
    for d in range(order + 1):
        vjp = (lambda g, pv, v, nxt=tw[d + 1]: (g * nxt,)) if _needs_grad(x) else None
        nodes.append(Node(x.tape, tw[d], f"f^({d})", (x,), vjp,
                          lambda xv, d=d: towers(xv, d)[d]))
    return nodes


# --------------------------------------------------------------------------
# Jets


Pair = tuple[int, int]


def _pkey(i: int, j: int) -> Pair:
    return (i, j) if i <= j else (j, i)


class Jet:
    """Value with first and second input-derivatives, all as tape nodes.

    Missing entries in ``d1``/``d2`` are identically zero.  ``pairs`` is the
    set of second-derivative index pairs being tracked (empty for order 1).
    """

    __slots__ = ("value", "d1", "d2", "pairs")

    def __init__(self, value, d1=None, d2=None, pairs=frozenset()):
        self.value = value
        self.d1 = dict(d1 or {})
        self.d2 = dict(d2 or {})
        self.pairs = frozenset(pairs)

    @property
    def tape(self) -> Tape:
        return self.value.tape

    def dx(self, i: int) -> Node:
        """First derivative in input ``i`` (a zero constant when untracked)."""
        n = self.d1.get(i)
        return n if n is not None else self.tape.constant(np.zeros_like(self.value.value))

    def dxx(self, i: int, j: int) -> Node:
        n = self.d2.get(_pkey(i, j))
        return n if n is not None else self.tape.constant(np.zeros_like(self.value.value))

    def numeric(self) -> "JetValue":
        zero = np.zeros_like(self.value.value)
        d1 = {i: n.value for i, n in self.d1.items()}
        d2 = {p: self.d2[p].value if p in self.d2 else zero for p in self.pairs}
        return JetValue(self.value.value, d1, d2)

    # arithmetic -------------------------------------------------------------

    def _other(self, other) -> "Jet":
        if isinstance(other, Jet):
            return other
        return Jet(_lift(self.tape, other), pairs=self.pairs)

    def __add__(self, other):
        o = self._other(other)
        return _lin(self, o, add)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._other(other)
        return _lin(self, o, sub)

    def __rsub__(self, other):
        return self._other(other) - self

    def __neg__(self):
        return Jet(neg(self.value), {i: neg(v) for i, v in self.d1.items()},
                   {p: neg(v) for p, v in self.d2.items()}, self.pairs)

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return self.scale(other)
        return jet_mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def scale(self, c) -> "Jet":
        """Multiply by something constant in the inputs (array or parameter node)."""
        c = _lift(self.tape, c)
        return Jet(mul(self.value, c), {i: mul(v, c) for i, v in self.d1.items()},
                   {p: mul(v, c) for p, v in self.d2.items()}, self.pairs)

    def __matmul__(self, w):
        w = _lift(self.tape, w)
        return Jet(matmul(self.value, w), {i: matmul(v, w) for i, v in self.d1.items()},
                   {p: matmul(v, w) for p, v in self.d2.items()}, self.pairs)

    def __getitem__(self, idx):
        return self.map(lambda n: getitem(n, idx))

    def map(self, f: Callable[[Node], Node]) -> "Jet":
        """Apply a linear, input-independent map to every component."""
        return Jet(f(self.value), {i: f(v) for i, v in self.d1.items()},
                   {p: f(v) for p, v in self.d2.items()}, self.pairs)

    def add_bias(self, b) -> "Jet":
        return Jet(add(self.value, b), self.d1, self.d2, self.pairs)

    def sum(self, axis=None) -> "Jet":
        return self.map(lambda n: sum_(n, axis))

    def reshape(self, *shape) -> "Jet":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return self.map(lambda n: reshape(n, shape))


def _lin(a: Jet, b: Jet, op) -> Jet:
    d1 = dict(a.d1)
    for i, v in b.d1.items():
        d1[i] = op(d1[i], v) if i in d1 else (v if op is add else neg(v))
    d2 = dict(a.d2)
    for p, v in b.d2.items():
        d2[p] = op(d2[p], v) if p in d2 else (v if op is add else neg(v))
    return Jet(op(a.value, b.value), d1, d2, a.pairs | b.pairs)


def jet_mul(a: Jet, b: Jet) -> Jet:
    pairs = a.pairs | b.pairs
    value = mul(a.value, b.value)
    d1 = {}
    for i in set(a.d1) | set(b.d1):
        terms = []
        if i in a.d1:
            terms.append(mul(a.d1[i], b.value))
        if i in b.d1:
            terms.append(mul(a.value, b.d1[i]))
        d1[i] = terms[0] if len(terms) == 1 else add(*terms)
    d2 = {}
    for p in pairs:
        i, j = p
        terms = []
        if p in a.d2:
            terms.append(mul(a.d2[p], b.value))
        if p in b.d2:
            terms.append(mul(a.value, b.d2[p]))
        if i in a.d1 and j in b.d1:
            terms.append(mul(a.d1[i], b.d1[j]))
        if j in a.d1 and i in b.d1:
            terms.append(mul(a.d1[j], b.d1[i]))
        if terms:
            acc = terms[0]
            for t in terms[1:]:
                acc = add(acc, t)
            d2[p] = acc
    return Jet(value, d1, d2, pairs)


def jet_apply(x: Jet, kinds, k: float = fn.DEFAULT_SAFELOG_K) -> Jet:
    """Chain rule for elementwise functions up to second order."""
    order = 2 if x.pairs else (1 if x.d1 else 0)
    f = function_tower(x.value, kinds, order, k)
    d1 = {i: mul(f[1], v) for i, v in x.d1.items()}
    d2 = {}
    for p in x.pairs:
        i, j = p
        terms = []
        if i in x.d1 and j in x.d1:
            terms.append(mul(f[2], mul(x.d1[i], x.d1[j])))
        if p in x.d2:
            terms.append(mul(f[1], x.d2[p]))
        if terms:
            d2[p] = terms[0] if len(terms) == 1 else add(terms[0], terms[1])
    return Jet(f[0], d1, d2, x.pairs)


def seed_inputs(tape: Tape, X, wrt: Iterable[int], order: int, pairs=None) -> Jet:
    """Jet of the raw input matrix ``X`` (batch x arity) as independent variables."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    wrt = sorted(set(wrt))
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    for i in wrt:
        if not 0 <= i < X.shape[1]:
            raise ValueError(f"input index {i} out of range for arity {X.shape[1]}")
    if order == 0:
        wrt = []
    d1 = {}
    for i in wrt:
        e = np.zeros_like(X)
        e[:, i] = 1.0
        d1[i] = tape.constant(e)
    if order == 2:
        allp = {_pkey(i, j) for i in wrt for j in wrt}
        pairs = allp if pairs is None else {_pkey(*p) for p in pairs}
        if not pairs <= allp:
            raise ValueError("requested second-derivative pairs outside wrt")
    else:
        pairs = set()
    return Jet(tape.constant(X), d1, {}, pairs)


@dataclass
class JetValue:
    """Numeric snapshot of a jet: value, d1[i], d2[(i, j)] with i <= j."""

    value: np.ndarray
    d1: dict
    d2: dict

    def second(self, i: int, j: int):
        return self.d2[_pkey(i, j)]


@dataclass
class ParamGradient:
    """Gradient restricted to live (unmasked) parameters, in canonical order."""

    live: np.ndarray
    mask: np.ndarray

    def dense(self) -> np.ndarray:
        out = np.zeros(self.mask.shape, dtype=float)
        out[self.mask.astype(bool)] = self.live
        return out

    def __len__(self):
        return len(self.live)


def eval_jet(model, point, wrt=(0,), order: int = 2, pairs=None) -> JetValue:
    """Output of ``model`` at a single point with exact input-derivatives."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    point = np.atleast_1d(np.asarray(point, dtype=float))
    tape = Tape()
    jet = model.jet(tape, point[None, :], wrt, order, pairs)
    nv = jet.numeric()
    return JetValue(
        float(nv.value[0]),
        {i: float(v[0]) for i, v in nv.d1.items()},
        {p: float(v[0]) for p, v in nv.d2.items()},
    )


def grad_params(loss: Node, theta: Node, mask=None) -> ParamGradient:
    """d(loss)/d(theta) restricted to unmasked entries."""
    if not np.isfinite(loss.value).all():
        raise FloatingPointError(f"loss is not finite ({loss.value})")
    (g,) = loss.tape.backward(loss, [theta])
    mask = np.ones_like(g) if mask is None else np.asarray(mask, dtype=float)
    return ParamGradient(g[mask.astype(bool)].copy(), mask)


def check_gradients(f: Callable[[np.ndarray], float], x0, h: float = 1e-5,
                    grad: Callable[[np.ndarray], np.ndarray] | None = None,
                    kinks: Iterable[float] = ()) -> float:
    """Max relative error of an analytic gradient against central differences.

    ``f`` takes a parameter vector.  When ``grad`` is omitted, ``f`` is
    re-run on a tape and differentiated by ``Tape.backward``; in that case
    ``f`` must accept a ``Node`` and return a scalar ``Node``.  ``kinks`` are
    coordinate values that must be avoided by at least ``10*h``.
    """
    x0 = np.asarray(x0, dtype=float)
    for c in np.atleast_1d(x0):
        for kk in kinks:
            if abs(c - kk) < 10 * h:
                raise ValueError(f"x0 coordinate {c} within 10h of kink at {kk}")
    if grad is None:
        tape = Tape()
        xn = tape.variable(x0)
        out = f(xn)
        (analytic,) = tape.backward(out, [xn])

        def value(x):
            t = Tape()
            return float(f(t.variable(x)).value)
    else:
        analytic = np.asarray(grad(x0), dtype=float)

        def value(x):
            return float(f(x))

    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    for i in range(x0.size):
        xp = x0.copy().reshape(-1)
        xm = xp.copy()
        xp[i] += h
        xm[i] -= h
        fp, fm = value(xp.reshape(x0.shape)), value(xm.reshape(x0.shape))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError("non-finite function value in finite-difference stencil")
        flat[i] = (fp - fm) / (2 * h)
    analytic = np.asarray(analytic).reshape(-1)
    return float(np.max(np.abs(analytic - flat) / np.maximum(1.0, np.abs(analytic))))

"""Symbolic form of a mixed-function network.

Trees are built from five node types (constant, variable, sum, product,
function application), simplified by constant folding and zero
elimination only, evaluated with numpy and rendered as infix text.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .functions import DEFAULT_SAFELOG_K, FunctionKind, apply_function
from .network import Model, eval_temperature, softmax_weights, tril_pairs


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str
    index: int


@dataclass(frozen=True)
class Add:
    terms: tuple


@dataclass(frozen=True)
class Mul:
    factors: tuple


@dataclass(frozen=True)
class Apply:
    kind: FunctionKind
    arg: object
    k: float = DEFAULT_SAFELOG_K


def _is_const(e) -> bool:
    return isinstance(e, Const)


def simplify(e):
    """Fold constant subtrees, flatten sums/products and drop zero terms."""
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Apply):
        arg = simplify(e.arg)
        if e.kind is FunctionKind.IDENTITY:
            return arg
        if _is_const(arg):
            return Const(float(apply_function(e.kind, arg.value, e.k)))
        return Apply(e.kind, arg, e.k)
    if isinstance(e, Mul):
        coef = 1.0
        rest = []
        for f in e.factors:
            f = simplify(f)
            if _is_const(f):
                coef *= f.value
            elif isinstance(f, Mul):
                if _is_const(f.factors[0]):
                    coef *= f.factors[0].value
                    rest.extend(f.factors[1:])
                else:
                    rest.extend(f.factors)
            else:
                rest.append(f)
        if coef == 0.0 or not rest:
            return Const(coef if rest == [] else 0.0)
        if coef == 1.0:
            return rest[0] if len(rest) == 1 else Mul(tuple(rest))
        return Mul((Const(coef),) + tuple(rest))
    if isinstance(e, Add):
        const = 0.0
        rest = []
        for t in e.terms:
            t = simplify(t)
            if _is_const(t):
                const += t.value
            elif isinstance(t, Add):
                for u in t.terms:
                    if _is_const(u):
                        const += u.value
                    else:
                        rest.append(u)
            else:
                rest.append(t)
        if const != 0.0 or not rest:
            rest.append(Const(const))
        return rest[0] if len(rest) == 1 else Add(tuple(rest))
    raise TypeError(f"not an expression node: {e!r}")


def evaluate(e, X) -> np.ndarray:
    """Vectorised evaluation at the rows of ``X`` (batch x arity)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if isinstance(e, Const):
        return np.full(n, e.value)
    if isinstance(e, Var):
        return X[:, e.index].copy()
    if isinstance(e, Add):
        out = evaluate(e.terms[0], X)
        for t in e.terms[1:]:
            out = out + evaluate(t, X)
        return out
    if isinstance(e, Mul):
        out = evaluate(e.factors[0], X)
        for f in e.factors[1:]:
            out = out * evaluate(f, X)
        return out
    if isinstance(e, Apply):
        return np.asarray(apply_function(e.kind, evaluate(e.arg, X), e.k), dtype=float)
    raise TypeError(f"not an expression node: {e!r}")


# --------------------------------------------------------------------------
# rendering


def format_number(v: float, digits: int) -> str:
    s = f"{v:.{digits}f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _render(e, d: int) -> str:
    if isinstance(e, Const):
        return format_number(e.value, d)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Apply):
        a = _render(e.arg, d)
        kind = e.kind
        if kind is FunctionKind.SIN:
            return f"sin({a})"
        if kind is FunctionKind.COS:
            return f"cos({a})"
        if kind is FunctionKind.EXP_ABS:
            return f"exp(|{a}|)"
        if kind is FunctionKind.EXP_NEG_ABS:
            return f"exp(-|{a}|)"
        if kind is FunctionKind.SQRT:
            return f"sqrt(|{a}|)"
        if kind is FunctionKind.SAFE_LOG:
            return f"log({format_number(e.k, max(d, 2))} + relu({a}))"
        return a
    if isinstance(e, Mul):
        parts = []
        for i, f in enumerate(e.factors):
            s = _render(f, d)
            if isinstance(f, Add):
                s = f"({s})"
            if i == 0 and _is_const(f):
                if s == "1":
                    continue
                if s == "-1":
                    parts.append("-")
                    continue
            parts.append(s)
        out = "·".join(p for p in parts if p != "-")
        return ("-" + out) if parts and parts[0] == "-" else out
    if isinstance(e, Add):
        out = ""
        for i, t in enumerate(e.terms):
            s = _render(t, d)
            if i == 0:
                out = s
            elif s.startswith("-"):
                out += " - " + s[1:]
            else:
                out += " + " + s
        return out
    raise TypeError(f"not an expression node: {e!r}")


@dataclass(frozen=True)
class ExpressionTree:
    root: object
    variables: tuple

    def __call__(self, X) -> np.ndarray:
        return evaluate(self.root, X)

    def render(self, digits: int = 3) -> str:
        return render(self, digits)

    @property
    def is_constant(self) -> bool:
        return _is_const(self.root)

    def count_constants(self) -> int:
        def walk(e):
            if isinstance(e, Const):
                return 1
            if isinstance(e, Var):
                return 0
            if isinstance(e, Apply):
                return walk(e.arg)
            kids = e.terms if isinstance(e, Add) else e.factors
            return sum(walk(c) for c in kids)

        return walk(self.root)


def render(expr: ExpressionTree, digits: int = 3) -> str:
    """Infix text with constants rounded to ``digits`` decimals (display only)."""
    if digits < 1:
        raise ValueError("digits must be >= 1")
    return _render(expr.root, digits)


# --------------------------------------------------------------------------
# extraction


def _affine(bias: float, lin, quad, feats) -> object:
    terms = [Const(float(bias))]
    for w, f in zip(lin, feats):
        if w != 0.0:
            terms.append(Mul((Const(float(w)), f)))
    if quad is not None:
        for w, (i, j) in zip(quad, tril_pairs(len(feats))):
            if w != 0.0:
                terms.append(Mul((Const(float(w)), feats[j], feats[i])))
    return Add(tuple(terms))


def extract_expression(model: Model, names=None) -> ExpressionTree:
    """Compose the surviving terms of a mixed-function model into a simplified tree.

    Masked parameters are read as exact zeros, so masked terms vanish.  In
    softmax mode the mixing coefficients are the normalised weights at the
    model's evaluation temperature.
    """
    spec = model.spec
    if not spec.is_mixed:
        raise ValueError(f"expression extraction needs a mixed-function model, not {spec.variant!r}")
    if names is None:
        names = model.meta.get("inputs") or (("t",) if spec.n_inputs == 1 else
                                              tuple(f"x{i}" for i in range(spec.n_inputs)))
    names = tuple(names)
    if len(names) != spec.n_inputs:
        raise ValueError("one name per input required")
    v = model.params * model.mask
    Q = len(spec.functions)
    feats = [Var(nm, i) for i, nm in enumerate(names)]
    T = eval_temperature(model)
    for li, width in enumerate(spec.layers):
        b = model.view("preact_bias", li, v)
        W = model.view("preact_lin", li, v)
        U = model.view("preact_quad", li, v) if model.has_segment("preact_quad", li) else None
        wl = model.view("mix_lin", li, v)
        wq = model.view("mix_quad", li, v) if model.has_segment("mix_quad", li) else None
        outs = []
        for u in range(width):
            lin, quad = wl[u].copy(), (None if wq is None else wq[u].copy())
            if spec.normalization == "softmax":
                lin, quad = _softmax_coeffs(model, li, u, T)
            cols = range(u * Q, (u + 1) * Q)
            fs = [Apply(kind, _affine(b[c], W[:, c], None if U is None else U[:, c], feats), spec.safelog_k)
                  for kind, c in zip(spec.functions, cols)]
            ob = model.view("out_bias", li, v)[u] if spec.output_bias else 0.0
            outs.append(simplify(_affine(ob, lin, quad, fs)))
        feats = outs
    return ExpressionTree(simplify(feats[0]), names)


def _softmax_coeffs(model: Model, li: int, u: int, T: float):
    lin = model.view("mix_lin", li)[u]
    ml = model.view("mix_lin", li, model.mask)[u]
    has_q = model.has_segment("mix_quad", li)
    alpha = np.concatenate([lin, model.view("mix_quad", li)[u]]) if has_q else lin
    m = np.concatenate([ml, model.view("mix_quad", li, model.mask)[u]]) if has_q else ml
    p = np.zeros_like(alpha)
    if m.any():
        p[m > 0] = softmax_weights(alpha[m > 0], T)
    return p[: lin.size], (p[lin.size:] if has_q else None)


def verify_expression(expr: ExpressionTree, model: Model, n: int = 1000, seed: int = 0,
                      domain=None) -> float:
    """Max |expr(x) - model(x)| over ``n`` uniform points of ``domain``.

    ``domain`` defaults to ``model.meta['domain']`` and then to the unit box.
    """
    if domain is None:
        domain = model.meta.get("domain") or [(0.0, 1.0)] * model.n_inputs
    dom = np.asarray(domain, dtype=float).reshape(-1, 2)
    rng = np.random.default_rng(seed)
    X = dom[:, 0] + (dom[:, 1] - dom[:, 0]) * rng.random((n, dom.shape[0]))
    return float(np.max(np.abs(expr(X) - model.forward(X))))

"""Residual, initial/boundary-condition and data losses for a problem."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .network import TrainContext


@dataclass(frozen=True)
class Condition:
    """Initial/boundary condition: model value (or d/d input ``derivative``) at ``point``."""

    point: tuple
    target: float
    derivative: int | None = None


@dataclass
class ProblemDef:
    """A differential problem in physics-informed form.

    ``residual(u, X)`` receives the output jet over a batch ``X`` and returns
    the pointwise residual node.  ``wrt``/``order``/``pairs`` say which
    input-derivatives the residual needs.  An axis whose domain has
    ``lo == hi`` is pinned: it is held constant rather than sampled.
    """

    name: str
    inputs: tuple
    residual: Callable
    domain: tuple
    icbc: list = field(default_factory=list)
    data: list = field(default_factory=list)
    wrt: tuple = (0,)
    order: int = 2
    pairs: tuple | None = None
    weights: dict = field(default_factory=lambda: {"res": 1.0, "icbc": 1.0, "data": 1.0, "anchor": 1.0})
    anchor: Callable | None = None
    reference: Callable | None = None
    test_domain: tuple | None = None
    sampler: Callable | None = None
    params: object = None

    def __post_init__(self):
        self.domain = tuple((float(lo), float(hi)) for lo, hi in self.domain)
        if len(self.domain) != len(self.inputs):
            raise ValueError("domain needs one interval per input")
        if self.order > 2:
            raise ValueError("residual operators may use derivatives up to order 2")
        for c in self.icbc:
            if len(c.point) != len(self.inputs):
                raise ValueError(f"condition point {c.point} has wrong arity")
            if c.derivative is not None and not 0 <= c.derivative < len(self.inputs):
                raise ValueError(f"derivative axis {c.derivative} outside arity {len(self.inputs)}")
            for (lo, hi), v in zip(self.domain, c.point):
                if not lo - 1e-12 <= v <= hi + 1e-12:
                    raise ValueError(f"condition point {c.point} outside the domain")
        w = {"res": 1.0, "icbc": 1.0, "data": 1.0, "anchor": 1.0}
        w.update(self.weights)
        self.weights = w

    @property
    def arity(self) -> int:
        return len(self.inputs)


@dataclass
class CollocationBatch:
    points: np.ndarray
    seed: int | None = None
    domain_id: str = ""

    def __len__(self):
        return len(self.points)


def sample_collocation(domain, n: int, seed=0, domain_id: str = "") -> CollocationBatch:
    """``n`` i.i.d. uniform points in an axis-aligned box; pinned axes stay fixed."""
    if n < 1:
        raise ValueError("need at least one collocation point")
    dom = np.asarray(domain, dtype=float).reshape(-1, 2)
    lo, hi = dom[:, 0], dom[:, 1]
    if np.any(hi < lo):
        raise ValueError(f"empty domain interval in {domain}")
    if np.all(hi == lo):
        raise ValueError("degenerate box: no axis with positive extent to sample")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pts = lo + (hi - lo) * rng.random((n, dom.shape[0]))
    return CollocationBatch(pts, None if isinstance(seed, np.random.Generator) else seed, domain_id)


def sample_problem(prob: ProblemDef, n: int, rng) -> CollocationBatch:
    if prob.sampler is not None:
        return CollocationBatch(np.asarray(prob.sampler(n, rng), dtype=float), None, prob.name)
    return sample_collocation(prob.domain, n, rng, prob.name)


@dataclass
class LossContext:
    """Shared tape, parameter node and training knobs for one loss evaluation."""

    tape: ad.Tape
    theta: ad.Node | None
    train: TrainContext | None = None

    @classmethod
    def fresh(cls, model, train: TrainContext | None = None) -> "LossContext":
        tape = ad.Tape()
        params = getattr(model, "params", np.zeros(0))
        return cls(tape, tape.variable(params), train)


def _ctx(model, lc):
    return LossContext.fresh(model) if lc is None else lc


def _points(batch) -> np.ndarray:
    return np.atleast_2d(np.asarray(getattr(batch, "points", batch), dtype=float))


def residual_values(model, prob: ProblemDef, points, lc: LossContext | None = None) -> ad.Node:
    lc = _ctx(model, lc)
    X = _points(points)
    u = model.jet(lc.tape, X, prob.wrt, prob.order, prob.pairs, theta=lc.theta, ctx=lc.train)
    r = prob.residual(u, X)
    if not isinstance(r, ad.Node):
        r = lc.tape.constant(np.broadcast_to(np.asarray(r, dtype=float), (X.shape[0],)))
    bad = ~np.isfinite(r.value)
    if bad.any():
        raise FloatingPointError(f"non-finite residual at point {X[np.argmax(bad)].tolist()}")
    return r


def residual_loss(model, prob: ProblemDef, batch, lc: LossContext | None = None) -> ad.Node:
    """Mean squared residual over the batch."""
    X = _points(batch)
    if X.shape[0] == 0:
        raise ValueError("empty collocation batch")
    r = residual_values(model, prob, X, lc)
    return ad.mean(ad.square(r))


def icbc_loss(model, prob: ProblemDef, lc: LossContext | None = None) -> ad.Node:
    """Sum over conditions of squared mismatch (value or first derivative)."""
    if not prob.icbc:
        raise ValueError("problem has no initial/boundary conditions")
    lc = _ctx(model, lc)
    total = None
    groups: dict = {}
    for c in prob.icbc:
        if c.derivative is not None and not 0 <= c.derivative < prob.arity:
            raise ValueError(f"derivative axis {c.derivative} outside arity {prob.arity}")
        groups.setdefault(c.derivative, []).append(c)
    for deriv, conds in sorted(groups.items(), key=lambda kv: -1 if kv[0] is None else kv[0]):
        X = np.array([c.point for c in conds], dtype=float)
        tgt = np.array([c.target for c in conds], dtype=float)
        if deriv is None:
            q = model.jet(lc.tape, X, (), 0, theta=lc.theta, ctx=lc.train).value
        else:
            q = model.jet(lc.tape, X, (deriv,), 1, theta=lc.theta, ctx=lc.train).dx(deriv)
        term = ad.sum_(ad.square(q - tgt))
        total = term if total is None else total + term
    return total


def data_loss(model, prob: ProblemDef, lc: LossContext | None = None) -> ad.Node:
    """Mean squared error over supplied (point, value) pairs; 0 when there are none."""
    lc = _ctx(model, lc)
    if not prob.data:
        return lc.tape.constant(0.0)
    X = np.array([p for p, _ in prob.data], dtype=float).reshape(len(prob.data), -1)
    y = np.array([v for _, v in prob.data], dtype=float)
    u = model.jet(lc.tape, X, (), 0, theta=lc.theta, ctx=lc.train).value
    return ad.mean(ad.square(u - y))


def anchor_loss(model, prob: ProblemDef, lc: LossContext | None = None) -> ad.Node:
    lc = _ctx(model, lc)
    if prob.anchor is None:
        return lc.tape.constant(0.0)
    return prob.anchor(model, lc)


def loss_terms(model, prob: ProblemDef, batch, lc: LossContext | None = None) -> dict:
    """Unweighted loss components as tape nodes."""
    lc = _ctx(model, lc)
    terms = {"res": residual_loss(model, prob, batch, lc)}
    terms["icbc"] = icbc_loss(model, prob, lc) if prob.icbc else lc.tape.constant(0.0)
    terms["data"] = data_loss(model, prob, lc)
    terms["anchor"] = anchor_loss(model, prob, lc)
    return terms


def combine(terms: dict, weights: dict) -> ad.Node:
    total = None
    for key, node in terms.items():
        w = weights.get(key, 1.0)
        if w == 0:
            continue
        part = node * w
        total = part if total is None else total + part
    if total is None:
        total = next(iter(terms.values())) * 0.0
    return total


def total_loss(model, prob: ProblemDef, batch, lc: LossContext | None = None) -> ad.Node:
    """lambda_res*residual + lambda_icbc*icbc + lambda_data*data (+ lambda_anchor*anchor)."""
    lc = _ctx(model, lc)
    return combine(loss_terms(model, prob, batch, lc), prob.weights)


def residual_error(model, prob: ProblemDef, points) -> float:
    """Residual loss plus IC/BC loss (and anchor, if any) at fixed points, no dropout."""
    lc = LossContext(ad.Tape(), None)
    terms = loss_terms(model, prob, points, lc)
    return float(terms["res"].value + terms["icbc"].value + terms["anchor"].value)


class FunctionModel:
    """A parameter-free model built from jet arithmetic, for tests and oracles.

    ``fn`` receives a list of per-input jets (each shaped (batch,)) and
    returns the output jet.
    """

    def __init__(self, fn: Callable, n_inputs: int = 1):
        self.fn = fn
        self.n_inputs = n_inputs
        self.params = np.zeros(0)
        self.mask = np.zeros(0)

    def jet(self, tape, X, wrt=(), order=0, pairs=None, theta=None, ctx=None) -> ad.Jet:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        z = ad.seed_inputs(tape, X, wrt, order, pairs)
        cols = [z[:, i] for i in range(X.shape[1])]
        out = self.fn(cols)
        if not isinstance(out, ad.Jet):
            out = ad.Jet(tape.constant(np.broadcast_to(np.asarray(out, dtype=float), (X.shape[0],)).copy()),
                         pairs=z.pairs)
        return out

    def forward(self, X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 0 or (X.ndim == 1 and X.size == self.n_inputs)
        out = self.jet(ad.Tape(), X.reshape(-1, self.n_inputs)).value.value
        return float(out[0]) if single else out

    __call__ = forward


# jet-level elementary functions, for writing stubs
def jsin(x: ad.Jet) -> ad.Jet:
    return ad.jet_apply(x, "sin")


def jcos(x: ad.Jet) -> ad.Jet:
    return ad.jet_apply(x, "cos")


def jexp_neg_abs(x: ad.Jet) -> ad.Jet:
    return ad.jet_apply(x, "exp_neg_abs")


def jexp(x: ad.Jet) -> ad.Jet:
    return ad.jet_apply(x, "exp")

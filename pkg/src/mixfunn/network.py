"""Second-order neurons, mixed-function neurons and the four model variants.

A mixed layer maps ``n_in`` features to ``n_out`` units.  Every unit owns
one dedicated pre-activation per library function (first- or second-order
in the layer inputs), applies the function, and combines the ``Q`` function
outputs with its mixing weights.  With ``mix_order=1`` the combination is
the plain weighted sum; with ``mix_order=2`` it is a second-order neuron
over the function outputs, so pairwise products such as
``sin(.) * exp(-|.|)`` are one weight each.

Flat parameter layout (canonical order) is described by ``Model.segments``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .functions import DEFAULT_FUNCTIONS, DEFAULT_SAFELOG_K, FunctionKind, apply_function

VARIANTS = ("mixfunn", "mix2funn", "mlp", "hybrid")


def tril_pairs(n: int) -> list[tuple[int, int]]:
    """Index pairs of vec(tril(x x^T)), row-major: (0,0), (1,0), (1,1), (2,0), ..."""
    return [(i, j) for i in range(n) for j in range(i + 1)]


def n_pairs(n: int) -> int:
    return n * (n + 1) // 2


# --------------------------------------------------------------------------
# Single-neuron reference implementations


@dataclass
class SecondOrderNeuron:
    b: float
    W: np.ndarray
    U: np.ndarray | None = None  # length n_pairs(N), tril order; None = first-order

    def __post_init__(self):
        self.W = np.atleast_1d(np.asarray(self.W, dtype=float))
        if self.U is not None:
            self.U = np.atleast_1d(np.asarray(self.U, dtype=float))
            if self.U.size != n_pairs(self.W.size):
                raise ValueError(
                    f"U needs {n_pairs(self.W.size)} entries for {self.W.size} inputs, got {self.U.size}"
                )


def second_order_forward(neuron: SecondOrderNeuron, x) -> float:
    """b + sum_i w_i x_i + sum_{i<=j} u_ij x_i x_j."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != neuron.W.size:
        raise ValueError(f"expected {neuron.W.size} inputs, got {x.size}")
    s = neuron.b + float(neuron.W @ x)
    if neuron.U is not None:
        prods = np.array([x[i] * x[j] for i, j in tril_pairs(x.size)])
        s += float(neuron.U @ prods)
    return s


def fold_full_matrix(U_full) -> np.ndarray:
    """Reduce a full N x N quadratic weight matrix to tril order.

    ``u_ii = U'_ii`` and ``u_ij = U'_ij + U'_ji`` for ``i != j``, so the
    reduced neuron reproduces ``x^T U' x`` exactly.
    """
    U_full = np.asarray(U_full, dtype=float)
    return np.array([U_full[i, j] if i == j else U_full[i, j] + U_full[j, i]
                     for i, j in tril_pairs(U_full.shape[0])])


def softmax_weights(alpha, T: float = 1.0) -> np.ndarray:
    """exp(alpha/T) / sum exp(alpha/T), computed with max subtraction."""
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    z = np.asarray(alpha, dtype=float) / T
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass
class MixedFunctionNeuron:
    functions: tuple
    mix_weights: np.ndarray
    preacts: list  # one SecondOrderNeuron per function
    normalization: str = "raw"
    pair_weights: np.ndarray | None = None  # second-order mixing, tril order over functions
    safelog_k: float = DEFAULT_SAFELOG_K

    def __post_init__(self):
        self.functions = tuple(FunctionKind.parse(f) for f in self.functions)
        self.mix_weights = np.atleast_1d(np.asarray(self.mix_weights, dtype=float))
        if not (len(self.functions) == self.mix_weights.size == len(self.preacts)):
            raise ValueError("functions, mix weights and pre-activations must have equal length")


def mixed_forward(neuron: MixedFunctionNeuron, inputs, T: float = 1.0) -> float:
    """Output of one mixed-function neuron at one input vector."""
    f = np.empty(len(neuron.functions))
    for i, (kind, pre) in enumerate(zip(neuron.functions, neuron.preacts)):
        s = second_order_forward(pre, inputs)
        if not np.isfinite(s):
            raise FloatingPointError(f"non-finite pre-activation for function {i} ({kind.value})")
        f[i] = apply_function(kind, s, neuron.safelog_k)
    w = neuron.mix_weights
    pw = neuron.pair_weights
    if neuron.normalization == "softmax":
        full = softmax_weights(w if pw is None else np.concatenate([w, pw]), T)
        w, pw = full[: w.size], (None if pw is None else full[w.size:])
    out = float(w @ f)
    if pw is not None:
        out += float(pw @ np.array([f[i] * f[j] for i, j in tril_pairs(f.size)]))
    return out


# --------------------------------------------------------------------------
# Model


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description.

    ``layers`` are mixed-layer widths (last one is the scalar output) for the
    mixed-function variants.  ``hidden`` are tanh-layer widths for the MLP
    and hybrid variants; the hybrid's first hidden layer has a second-order
    pre-activation.
    """

    variant: str
    n_inputs: int
    layers: tuple = (1,)
    functions: tuple = DEFAULT_FUNCTIONS
    preact_order: int = 1
    mix_order: int = 2
    normalization: str = "raw"
    output_bias: bool = False
    hidden: tuple = (128, 128, 128, 128, 128)
    safelog_k: float = DEFAULT_SAFELOG_K

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.n_inputs < 1:
            raise ValueError("n_inputs must be >= 1")
        object.__setattr__(self, "functions", tuple(FunctionKind.parse(f) for f in self.functions))
        object.__setattr__(self, "layers", tuple(int(w) for w in self.layers))
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        if self.is_mixed:
            if not self.layers or self.layers[-1] != 1 or min(self.layers) < 1:
                raise ValueError("mixed layers must be positive and end with width 1")
            if not self.functions:
                raise ValueError("at least one function required")
            if self.preact_order not in (1, 2) or self.mix_order not in (1, 2):
                raise ValueError("preact_order and mix_order must be 1 or 2")
            if self.normalization not in ("raw", "softmax"):
                raise ValueError("normalization must be 'raw' or 'softmax'")
        else:
            if not self.hidden or min(self.hidden) < 1:
                raise ValueError("hidden widths must be positive")

    @property
    def is_mixed(self) -> bool:
        return self.variant in ("mixfunn", "mix2funn")

    def to_dict(self) -> dict:
        d = {
            "variant": self.variant,
            "n_inputs": self.n_inputs,
            "layers": list(self.layers),
            "functions": [f.value for f in self.functions],
            "preact_order": self.preact_order,
            "mix_order": self.mix_order,
            "normalization": self.normalization,
            "output_bias": self.output_bias,
            "hidden": list(self.hidden),
            "safelog_k": self.safelog_k,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        for key in ("layers", "functions", "hidden"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def make_spec(variant: str, n_inputs: int, **kw) -> ModelSpec:
    """Spec with variant-appropriate defaults (MixFunn mixes linearly)."""
    if variant == "mixfunn":
        kw.setdefault("preact_order", 1)
        kw.setdefault("mix_order", 1)
    return ModelSpec(variant=variant, n_inputs=n_inputs, **kw)


@dataclass(frozen=True)
class Segment:
    name: str
    layer: int
    role: str  # "bias" | "preact" | "mix" | "weight"
    shape: tuple
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.size)


def _layout(spec: ModelSpec) -> list[Segment]:
    segs: list[Segment] = []
    off = 0

    def push(name, layer, role, shape):
        nonlocal off
        s = Segment(name, layer, role, tuple(shape), off)
        segs.append(s)
        off += s.size

    if spec.is_mixed:
        Q = len(spec.functions)
        n_in = spec.n_inputs
        for li, width in enumerate(spec.layers):
            cols = width * Q
            push("preact_bias", li, "bias", (cols,))
            push("preact_lin", li, "preact", (n_in, cols))
            if spec.preact_order == 2:
                push("preact_quad", li, "preact", (n_pairs(n_in), cols))
            push("mix_lin", li, "mix", (width, Q))
            if spec.mix_order == 2:
                push("mix_quad", li, "mix", (width, n_pairs(Q)))
            if spec.output_bias:
                push("out_bias", li, "bias", (width,))
            n_in = width
    else:
        n_in = spec.n_inputs
        for li, width in enumerate(spec.hidden):
            push("W", li, "weight", (n_in, width))
            if li == 0 and spec.variant == "hybrid":
                push("U", li, "weight", (n_pairs(n_in), width))
            push("b", li, "bias", (width,))
            n_in = width
        li = len(spec.hidden)
        push("W", li, "weight", (n_in, 1))
        push("b", li, "bias", (1,))
    return segs


def dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multipliers: 0 with probability ``p``, else ``1/(1-p)``."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0:
        return np.ones(shape)
    return (rng.random(shape) >= p) / (1.0 - p)


@dataclass
class TrainContext:
    """Training-time knobs consumed by the forward pass."""

    temperature: float = 1.0
    dropout: float = 0.0
    rng: np.random.Generator | None = None


@dataclass
class Model:
    spec: ModelSpec
    params: np.ndarray
    mask: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float)
        self.mask = np.asarray(self.mask, dtype=float)
        self.segments = _layout(self.spec)
        n = sum(s.size for s in self.segments)
        if self.params.shape != (n,) or self.mask.shape != (n,):
            raise ValueError(f"parameter vector must have length {n}")

    # bookkeeping -------------------------------------------------------------

    @property
    def n_inputs(self) -> int:
        return self.spec.n_inputs

    def count_params(self) -> int:
        return int(self.params.size)

    def count_live(self) -> int:
        return int(self.mask.sum())

    def segment(self, name: str, layer: int) -> Segment:
        for s in self.segments:
            if s.name == name and s.layer == layer:
                return s
        raise KeyError((name, layer))

    def has_segment(self, name: str, layer: int) -> bool:
        return any(s.name == name and s.layer == layer for s in self.segments)

    def view(self, name: str, layer: int, values=None) -> np.ndarray:
        s = self.segment(name, layer)
        v = self.params if values is None else values
        return v[s.slice].reshape(s.shape)

    def mix_indices(self) -> np.ndarray:
        """Flat indices of all mixing weights, in canonical order."""
        idx = [np.arange(s.offset, s.offset + s.size) for s in self.segments if s.role == "mix"]
        return np.concatenate(idx) if idx else np.zeros(0, dtype=int)

    def count_mix(self) -> int:
        return int(self.mix_indices().size)

    def effective_params(self) -> np.ndarray:
        return effective_mask(self)

    def count_effective_params(self) -> int:
        return int(self.effective_params().sum())

    def with_params(self, params, mask=None, **meta) -> "Model":
        m = Model(self.spec, np.array(params, dtype=float),
                  self.mask.copy() if mask is None else np.array(mask, dtype=float),
                  {**self.meta, **meta})
        return m

    def copy(self) -> "Model":
        return Model(self.spec, self.params.copy(), self.mask.copy(), copy.deepcopy(self.meta))

    # evaluation --------------------------------------------------------------

    def jet(self, tape: ad.Tape, X, wrt=(), order: int = 0, pairs=None,
            theta: ad.Node | None = None, ctx: TrainContext | None = None) -> ad.Jet:
        """Network output over a batch ``X`` as a jet of the ``wrt`` inputs."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_inputs:
            raise ValueError(f"expected {self.n_inputs} inputs per point, got {X.shape[1]}")
        if theta is None:
            theta = tape.constant(self.params)
        if not np.all(self.mask == 1.0):
            theta = theta * self.mask
        z = ad.seed_inputs(tape, X, wrt, order, pairs)
        if self.spec.is_mixed:
            out = _mixed_net(self, theta, z, ctx)
        else:
            out = _mlp_net(self, theta, z)
        return out.reshape(X.shape[0])

    def forward(self, X) -> np.ndarray:
        """Plain evaluation honouring the mask; ``X`` is (batch, arity) or one point."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 0 or (X.ndim == 1 and X.size == self.n_inputs)
        Xb = X.reshape(-1, self.n_inputs)
        out = self.jet(ad.Tape(), Xb).value.value
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite model output")
        return float(out[0]) if single else out

    def __call__(self, X):
        return self.forward(X)

    # neuron views ------------------------------------------------------------

    def neuron(self, layer: int, unit: int, values=None) -> MixedFunctionNeuron:
        """The ``unit``-th mixed neuron of ``layer`` with masked parameters applied."""
        if not self.spec.is_mixed:
            raise ValueError("only mixed-function variants have mixed neurons")
        v = self.params * self.mask if values is None else values
        Q = len(self.spec.functions)
        cols = slice(unit * Q, (unit + 1) * Q)
        b = self.view("preact_bias", layer, v)[cols]
        W = self.view("preact_lin", layer, v)[:, cols]
        U = self.view("preact_quad", layer, v)[:, cols] if self.has_segment("preact_quad", layer) else None
        preacts = [SecondOrderNeuron(b[i], W[:, i], None if U is None else U[:, i]) for i in range(Q)]
        pw = self.view("mix_quad", layer, v)[unit] if self.has_segment("mix_quad", layer) else None
        return MixedFunctionNeuron(self.spec.functions, self.view("mix_lin", layer, v)[unit], preacts,
                                   self.spec.normalization, pw, self.spec.safelog_k)


def _seg_node(model: Model, theta: ad.Node, name: str, layer: int) -> ad.Node:
    s = model.segment(name, layer)
    return theta[s.slice].reshape(s.shape)


def _second_order_features(z: ad.Jet):
    n = np.shape(z.value.value)[-1]
    pr = tril_pairs(n)
    I = np.array([i for i, _ in pr])
    J = np.array([j for _, j in pr])
    return ad.jet_mul(z.map(lambda n: ad.take_last(n, I)), z.map(lambda n: ad.take_last(n, J)))


def _mixed_net(model: Model, theta: ad.Node, z: ad.Jet, ctx: TrainContext | None) -> ad.Jet:
    spec = model.spec
    Q = len(spec.functions)
    B = np.shape(z.value.value)[0]
    for li, width in enumerate(spec.layers):
        s = (z @ _seg_node(model, theta, "preact_lin", li)).add_bias(_seg_node(model, theta, "preact_bias", li))
        if spec.preact_order == 2:
            s = s + _second_order_features(z) @ _seg_node(model, theta, "preact_quad", li)
        f = ad.jet_apply(s, list(spec.functions) * width, spec.safelog_k)
        if ctx is not None and ctx.dropout > 0:
            f = f.scale(dropout_mask((B, width * Q), ctx.dropout, ctx.rng))
        f3 = f.reshape(B, width, Q)
        w = _seg_node(model, theta, "mix_lin", li)
        wq = _seg_node(model, theta, "mix_quad", li) if spec.mix_order == 2 else None
        if spec.normalization == "softmax":
            w, wq = _softmax_mix(model, theta, li, w, wq, eval_temperature(model) if ctx is None else ctx.temperature)
        a = f3.scale(w).sum(axis=2)
        if wq is not None:
            pr = tril_pairs(Q)
            I = np.array([i for i, _ in pr])
            J = np.array([j for _, j in pr])
            prod = ad.jet_mul(f3.map(lambda n: ad.take_last(n, I)), f3.map(lambda n: ad.take_last(n, J)))
            a = a + prod.scale(wq).sum(axis=2)
        if spec.output_bias:
            a = a.add_bias(_seg_node(model, theta, "out_bias", li))
        z = a
    return z


def eval_temperature(model: "Model") -> float:
    """Softmax temperature used outside training (the one the model was last trained at)."""
    return float(model.meta.get("temperature", 1.0))


def _softmax_mix(model, theta, li, w, wq, T):
    """Softmax over each unit's full set of mixing weights; masked ones get weight 0."""
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    parts = [w] if wq is None else [w, wq]
    masks = [model.view("mix_lin", li, model.mask)]
    if wq is not None:
        masks.append(model.view("mix_quad", li, model.mask))
    alpha = ad.concat(parts, axis=1) if len(parts) > 1 else w
    m = np.concatenate(masks, axis=1)
    scaled = alpha * (1.0 / T)
    sv = np.where(m > 0, scaled.value, -np.inf)
    shift = np.max(sv, axis=1, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    e = ad.exp(scaled - shift) * m
    denom = ad.sum_(e, axis=1).reshape(-1, 1)
    denom = denom + (np.sum(m, axis=1, keepdims=True) == 0)  # fully masked unit -> all weights 0
    p = e / denom
    nq = w.shape[1]
    return p[:, :nq], (None if wq is None else p[:, nq:])


def _mlp_net(model: Model, theta: ad.Node, z: ad.Jet) -> ad.Jet:
    spec = model.spec
    for li in range(len(spec.hidden)):
        s = z @ _seg_node(model, theta, "W", li)
        if li == 0 and spec.variant == "hybrid":
            s = s + _second_order_features(z) @ _seg_node(model, theta, "U", li)
        s = s.add_bias(_seg_node(model, theta, "b", li))
        z = ad.jet_apply(s, "tanh")
    li = len(spec.hidden)
    return (z @ _seg_node(model, theta, "W", li)).add_bias(_seg_node(model, theta, "b", li))


def build_model(spec: ModelSpec, seed: int = 0, **meta) -> Model:
    """Deterministic initialisation.

    Mixing weights ~ U[-1, 1]; pre-activation and dense weights
    ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)]; biases 0.
    """
    segs = _layout(spec)
    n = sum(s.size for s in segs)
    rng = np.random.default_rng(seed)
    params = np.zeros(n)
    for s in segs:
        if s.role == "mix":
            params[s.slice] = rng.uniform(-1.0, 1.0, s.size)
        elif s.role in ("preact", "weight"):
            fan_in = s.shape[0] if s.name in ("preact_lin", "W") else _fan_in_of(segs, s)
            lim = 1.0 / np.sqrt(fan_in)
            params[s.slice] = rng.uniform(-lim, lim, s.size)
    return Model(spec, params, np.ones(n), {"seed": int(seed), **meta})


def _fan_in_of(segs, s: Segment) -> int:
    # quadratic blocks share the fan-in of the linear block in the same layer
    for o in segs:
        if o.layer == s.layer and o.name in ("preact_lin", "W"):
            return o.shape[0]
    return 1


def forward(model: Model, X):
    return model.forward(X)


# --------------------------------------------------------------------------
# Reachability


def effective_mask(model: Model) -> np.ndarray:
    """1 for unmasked parameters that can still influence the output.

    For mixed variants the analysis is structural: a function column is
    active when one of its unit's unmasked mixing weights touches it, a
    unit is live when it has an unmasked mixing weight or output bias, and a
    pre-activation weight counts only if its column is active and the
    features it multiplies are live.  Dense variants: every unmasked entry.
    """
    live = model.mask.copy()
    if not model.spec.is_mixed:
        return live
    spec = model.spec
    Q = len(spec.functions)
    eff = np.zeros_like(live)
    mk = model.mask

    # forward liveness of each layer's units
    unit_live = []
    for li, width in enumerate(spec.layers):
        ml = model.view("mix_lin", li, mk) > 0
        anyw = ml.any(axis=1)
        if spec.mix_order == 2:
            anyw |= (model.view("mix_quad", li, mk) > 0).any(axis=1)
        if spec.output_bias:
            anyw |= model.view("out_bias", li, mk) > 0
        unit_live.append(anyw)

    needed = np.ones(spec.layers[-1], dtype=bool)
    pr = tril_pairs(Q)
    for li in reversed(range(len(spec.layers))):
        width = spec.layers[li]
        n_in = spec.n_inputs if li == 0 else spec.layers[li - 1]
        in_live = np.ones(n_in, dtype=bool) if li == 0 else unit_live[li - 1]
        next_needed = np.zeros(n_in, dtype=bool)
        ml = model.view("mix_lin", li, mk) > 0
        mq = model.view("mix_quad", li, mk) > 0 if spec.mix_order == 2 else None
        eff_ml = model.view("mix_lin", li, eff)
        eff_mq = model.view("mix_quad", li, eff) if spec.mix_order == 2 else None
        active = np.zeros((width, Q), dtype=bool)
        for u in range(width):
            if not needed[u]:
                continue
            eff_ml[u] = ml[u]
            active[u] |= ml[u]
            if mq is not None:
                eff_mq[u] = mq[u]
                for p, (i, j) in enumerate(pr):
                    if mq[u, p]:
                        active[u, i] = active[u, j] = True
            if spec.output_bias:
                model.view("out_bias", li, eff)[u] = model.view("out_bias", li, mk)[u]
        cols = active.reshape(-1)
        bsel = model.view("preact_bias", li, eff)
        bsel[cols] = model.view("preact_bias", li, mk)[cols]
        wl = model.view("preact_lin", li, eff)
        wl_m = model.view("preact_lin", li, mk)
        for f in range(n_in):
            if in_live[f]:
                wl[f, cols] = wl_m[f, cols]
                if np.any(wl_m[f, cols] > 0):
                    next_needed[f] = True
        if spec.preact_order == 2:
            wq = model.view("preact_quad", li, eff)
            wq_m = model.view("preact_quad", li, mk)
            for p, (i, j) in enumerate(tril_pairs(n_in)):
                if in_live[i] and in_live[j]:
                    wq[p, cols] = wq_m[p, cols]
                    if np.any(wq_m[p, cols] > 0):
                        next_needed[i] = next_needed[j] = True
        needed = next_needed
    return eff

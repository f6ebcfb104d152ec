"""The nonlinear function library used by mixed-function neurons.

Each function is described by its derivative tower: ``tower(kind, x, n)``
returns ``[f(x), f'(x), ..., f^(n)(x)]``.  Second input-derivatives of the
network need ``f''`` and differentiating *those* with respect to parameters
needs ``f'''``, so every kind supplies derivatives up to order 3.

Kink convention: ``d|x|/dx = 0`` and ``dReLU/dx = 0`` at ``x = 0``; second
derivatives of ``|x|`` and ``ReLU`` are zero everywhere.
"""

from __future__ import annotations

import enum

import numpy as np

DEFAULT_SAFELOG_K = 0.01

# Floor on |x| inside the derivatives of sqrt|x|; keeps f', f'', f''' finite.
SQRT_DERIV_FLOOR = 1e-12


class FunctionKind(enum.Enum):
    SIN = "sin"
    COS = "cos"
    EXP_ABS = "exp_abs"
    EXP_NEG_ABS = "exp_neg_abs"
    SQRT = "sqrt"
    SAFE_LOG = "safe_log"
    IDENTITY = "identity"

    @classmethod
    def parse(cls, name: str | FunctionKind) -> FunctionKind:
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower()
        for kind in cls:
            if kind.value == key or kind.name.lower() == key:
                return kind
        raise ValueError(f"unknown function kind {name!r}")


DEFAULT_FUNCTIONS: tuple[FunctionKind, ...] = (
    FunctionKind.SIN,
    FunctionKind.COS,
    FunctionKind.EXP_ABS,
    FunctionKind.EXP_NEG_ABS,
    FunctionKind.SQRT,
    FunctionKind.SAFE_LOG,
    FunctionKind.IDENTITY,
)


def _sin(x, n, k):
    c = [np.sin(x), np.cos(x), -np.sin(x), -np.cos(x)]
    return c[: n + 1]


def _cos(x, n, k):
    c = [np.cos(x), -np.sin(x), -np.cos(x), np.sin(x)]
    return c[: n + 1]


def _exp_abs(x, n, k):
    e = np.exp(np.abs(x))
    s = np.sign(x)
    return [e, s * e, s * s * e, s * s * s * e][: n + 1]


def _exp_neg_abs(x, n, k):
    e = np.exp(-np.abs(x))
    s = np.sign(x)
    return [e, -s * e, s * s * e, -s * s * s * e][: n + 1]


def _sqrt_abs(x, n, k):
    a = np.abs(x)
    out = [np.sqrt(a)]
    if n == 0:
        return out
    s = np.sign(x)
    af = np.maximum(a, SQRT_DERIV_FLOOR)
    r = np.sqrt(af)
    out.append(s * 0.5 / r)
    out.append(-(s * s) * 0.25 / (af * r))
    out.append((s * s * s) * 0.375 / (af * af * r))
    return out[: n + 1]


def _safe_log(x, n, k):
    pos = x > 0
    z = k + np.where(pos, x, 0.0)
    step = pos.astype(float)
    return [np.log(z), step / z, -step / z**2, 2.0 * step / z**3][: n + 1]


def _identity(x, n, k):
    one = np.ones_like(x)
    zero = np.zeros_like(x)
    return [np.array(x, dtype=float, copy=True), one, zero, zero][: n + 1]


def _tanh(x, n, k):
    t = np.tanh(x)
    q = 1.0 - t * t
    return [t, q, -2.0 * t * q, (6.0 * t * t - 2.0) * q][: n + 1]


def _exp(x, n, k):
    e = np.exp(x)
    return [e] * (n + 1)


_TOWERS = {
    FunctionKind.SIN: _sin,
    FunctionKind.COS: _cos,
    FunctionKind.EXP_ABS: _exp_abs,
    FunctionKind.EXP_NEG_ABS: _exp_neg_abs,
    FunctionKind.SQRT: _sqrt_abs,
    FunctionKind.SAFE_LOG: _safe_log,
    FunctionKind.IDENTITY: _identity,
    "tanh": _tanh,
    "exp": _exp,
}


def tower(kind, x, n: int = 0, k: float = DEFAULT_SAFELOG_K) -> list[np.ndarray]:
    """Return ``[f, f', ..., f^(n)]`` of ``kind`` at ``x`` (``n <= 3``)."""
    if not 0 <= n <= 3:
        raise ValueError("derivative order must be in 0..3")
    if not (isinstance(kind, str) and kind in _TOWERS):
        kind = FunctionKind.parse(kind)
    x = np.asarray(x, dtype=float)
    return _TOWERS[kind](x, n, k)


def apply_function(kind, x, k: float = DEFAULT_SAFELOG_K):
    """Evaluate a library function.

    ``SQRT`` is ``sqrt(|x|)`` and ``SAFE_LOG`` is ``log(k + ReLU(x))`` so that
    every kind is defined on the whole real line.
    """
    out = tower(kind, x, 0, k)[0]
    return float(out) if np.ndim(out) == 0 else out

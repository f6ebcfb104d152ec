"""Benchmark problems and their reference solutions.

* damped / forced harmonic oscillator (closed form, cross-checked by RK4)
* 1-D viscous Burgers (method of lines: central differences + RK4)
* infinite square well as an eigenvalue problem in (x, sqrt(E))

Burgers constants (domain, initial profile, boundary values and the
diffusion coefficient) are inferred defaults, not reported values; all are
overridable through ``BurgersParams``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import autodiff as ad
from .physics import Condition, LossContext, ProblemDef

# --------------------------------------------------------------------------
# Harmonic oscillator


@dataclass(frozen=True)
class OscillatorParams:
    m: float = 1.0
    gamma: float = 0.1
    k: float = 1.0
    F0: float = 0.0
    omega: float = 0.0
    x0: float = 1.0
    v0: float = 0.0
    t_train: tuple = (0.0, 20.0)
    t_test: tuple = (20.0, 50.0)

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("mass must be positive")


FORCED_DEFAULT = OscillatorParams(F0=1.0, omega=0.9)


def _oscillator_problem(p: OscillatorParams, name: str) -> ProblemDef:
    def residual(u: ad.Jet, X):
        r = u.dxx(0, 0) * p.m + u.dx(0) * p.gamma + u.value * p.k
        if p.F0 != 0.0:
            r = r - p.F0 * np.sin(p.omega * X[:, 0])
        return r

    return ProblemDef(
        name=name,
        inputs=("t",),
        residual=residual,
        domain=(p.t_train,),
        icbc=[Condition((0.0,), p.x0), Condition((0.0,), p.v0, derivative=0)],
        wrt=(0,),
        order=2,
        reference=lambda X: oscillator_reference(p, np.asarray(X, dtype=float).reshape(-1)),
        test_domain=(p.t_test,),
        params=p,
    )


def damped_oscillator(params: OscillatorParams = OscillatorParams()) -> ProblemDef:
    """m x'' + gamma x' + k x = 0 with x(0)=x0, x'(0)=v0."""
    if params.F0 != 0.0:
        raise ValueError("damped_oscillator requires F0 == 0; use forced_oscillator")
    return _oscillator_problem(params, "damped_oscillator")


def forced_oscillator(params: OscillatorParams = FORCED_DEFAULT) -> ProblemDef:
    """m x'' + gamma x' + k x = F0 sin(omega t)."""
    if params.F0 == 0.0:
        raise ValueError("forced_oscillator requires F0 != 0")
    return _oscillator_problem(params, "forced_oscillator")


def steady_state_coeffs(p: OscillatorParams) -> tuple[float, float]:
    """(A, B) of the particular solution A sin(wt) + B cos(wt)."""
    a = p.k - p.m * p.omega**2
    b = p.gamma * p.omega
    M = np.array([[a, -b], [b, a]])
    A, B = np.linalg.solve(M, np.array([p.F0, 0.0]))
    return float(A), float(B)


def steady_state_amplitude(p: OscillatorParams) -> float:
    return p.F0 / np.hypot(p.k - p.m * p.omega**2, p.gamma * p.omega)


def oscillator_reference(p: OscillatorParams, t):
    """Exact solution of the (optionally forced) underdamped oscillator."""
    if p.gamma**2 >= 4 * p.m * p.k:
        raise ValueError("only underdamped oscillators (gamma^2 < 4mk) are supported")
    t = np.asarray(t, dtype=float)
    A = B = 0.0
    if p.F0 != 0.0:
        A, B = steady_state_coeffs(p)
    x0 = p.x0 - B
    v0 = p.v0 - A * p.omega
    mu = p.gamma / (2 * p.m)
    wd = np.sqrt(p.k / p.m - mu**2)
    x = np.exp(-mu * t) * (x0 * np.cos(wd * t) + (v0 + mu * x0) / wd * np.sin(wd * t))
    if p.F0 != 0.0:
        x = x + A * np.sin(p.omega * t) + B * np.cos(p.omega * t)
    return x


def rk4(f, y0, t0: float, t1: float, dt: float):
    """Classic fourth-order Runge-Kutta; returns (times, states)."""
    n = int(round((t1 - t0) / dt))
    ts = t0 + dt * np.arange(n + 1)
    y = np.array(y0, dtype=float)
    out = np.empty((n + 1,) + y.shape)
    out[0] = y
    for i in range(n):
        t = ts[i]
        k1 = f(t, y)
        k2 = f(t + dt / 2, y + dt / 2 * k1)
        k3 = f(t + dt / 2, y + dt / 2 * k2)
        k4 = f(t + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i + 1] = y
    return ts, out


def oscillator_rk4(p: OscillatorParams, t_end: float, dt: float = 1e-3):
    def f(t, y):
        force = p.F0 * np.sin(p.omega * t)
        return np.array([y[1], (force - p.gamma * y[1] - p.k * y[0]) / p.m])

    ts, ys = rk4(f, [p.x0, p.v0], 0.0, t_end, dt)
    return ts, ys[:, 0]


# --------------------------------------------------------------------------
# Burgers


def _minus_sin_pi(x):
    return -np.sin(np.pi * x)


@dataclass(frozen=True)
class BurgersParams:
    k: float = 0.01 / np.pi
    x_domain: tuple = (-1.0, 1.0)
    t_train: tuple = (0.0, 1.0)
    t_test: tuple = (1.0, 2.0)
    ic: object = field(default=_minus_sin_pi, compare=False)
    bc: tuple = (0.0, 0.0)
    n_ic: int = 64
    n_bc: int = 32
    nx: int = 1024
    dt: float | None = None

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("diffusion coefficient must be >= 0")


def burgers(params: BurgersParams = BurgersParams(), reference: "BurgersSolution | None" = None) -> ProblemDef:
    """u_t + u u_x - k u_xx = 0 on inputs (x, t)."""
    p = params
    x0, x1 = p.x_domain
    t0, t1 = p.t_train

    def residual(u: ad.Jet, X):
        return u.dx(1) + u.value * u.dx(0) - u.dxx(0, 0) * p.k

    xs = np.linspace(x0, x1, p.n_ic)
    ts = np.linspace(t0, t1, p.n_bc + 1)[1:]
    icbc = [Condition((float(x), t0), float(p.ic(x))) for x in xs]
    icbc += [Condition((x0, float(t)), p.bc[0]) for t in ts]
    icbc += [Condition((x1, float(t)), p.bc[1]) for t in ts]
    prob = ProblemDef(
        name="burgers",
        inputs=("x", "t"),
        residual=residual,
        domain=(p.x_domain, p.t_train),
        icbc=icbc,
        wrt=(0, 1),
        order=2,
        pairs=((0, 0),),
        test_domain=(p.x_domain, p.t_test),
        params=p,
    )
    if reference is not None:
        prob.reference = reference
    return prob


def burgers_stable_dt(dx: float, umax: float, k: float) -> float:
    """Largest admissible RK4 step for the central-difference semi-discretisation.

    Advective part: dt * umax / dx <= 1.  Diffusive part: dt * k / dx^2 <= 0.5.
    """
    bounds = []
    if umax > 0:
        bounds.append(dx / umax)
    if k > 0:
        bounds.append(0.5 * dx * dx / k)
    return min(bounds) if bounds else np.inf


@dataclass
class BurgersSolution:
    """Finite-difference field u(x, t) on a grid, linearly interpolated between nodes."""

    x: np.ndarray
    t: np.ndarray
    u: np.ndarray  # shape (len(t), len(x))

    def __post_init__(self):
        self._interp = RegularGridInterpolator((self.t, self.x), self.u, method="linear")

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self._interp(np.column_stack([X[:, 1], X[:, 0]]))

    def grid_residual(self, k: float) -> np.ndarray:
        """u_t + u u_x - k u_xx on interior nodes with the solver's 3-point stencils.

        u_t is a centred difference between saved frames, so what remains is
        the time-sampling error of the stored field.
        """
        if len(self.t) < 3 or len(self.x) < 3:
            raise ValueError("need at least 3 frames and 3 nodes")
        dx = self.x[1] - self.x[0]
        v = self.u
        ut = (v[2:] - v[:-2]) / (self.t[2:] - self.t[:-2])[:, None]
        vm = v[1:-1]
        ux = (vm[:, 2:] - vm[:, :-2]) / (2 * dx)
        uxx = (vm[:, 2:] - 2 * vm[:, 1:-1] + vm[:, :-2]) / (dx * dx)
        return ut[:, 1:-1] + vm[:, 1:-1] * ux - k * uxx

    def to_rows(self, every_x: int = 1, every_t: int = 1):
        for j in range(0, len(self.t), every_t):
            for i in range(0, len(self.x), every_x):
                yield self.x[i], self.t[j], self.u[j, i]


def burgers_reference(params: BurgersParams = BurgersParams(), t_end: float | None = None,
                      nx: int | None = None, dt: float | None = None,
                      save_every: float = 0.01) -> BurgersSolution:
    """Method-of-lines reference: 2nd-order central differences in x, RK4 in t."""
    p = params
    nx = p.nx if nx is None else nx
    if nx < 2:
        raise ValueError("nx must be >= 2")
    t_end = max(p.t_train[1], p.t_test[1]) if t_end is None else t_end
    x = np.linspace(p.x_domain[0], p.x_domain[1], nx + 1)
    dx = x[1] - x[0]
    u = p.ic(x).astype(float)
    u[0], u[-1] = p.bc
    umax = max(float(np.max(np.abs(u))), abs(p.bc[0]), abs(p.bc[1]))
    bound = burgers_stable_dt(dx, umax, p.k)
    dt = dt if dt is not None else p.dt
    if dt is None:
        dt = 0.9 * bound
    elif dt > bound:
        raise ValueError(f"time step {dt} exceeds the stability bound {bound:.3e}")
    n_steps = int(np.ceil(t_end / dt - 1e-9))
    dt = t_end / n_steps
    stride = max(1, int(round(save_every / dt)))

    def rhs(v):
        out = np.zeros_like(v)
        ux = (v[2:] - v[:-2]) / (2 * dx)
        uxx = (v[2:] - 2 * v[1:-1] + v[:-2]) / (dx * dx)
        out[1:-1] = -v[1:-1] * ux + p.k * uxx
        return out

    times = [0.0]
    frames = [u.copy()]
    for n in range(1, n_steps + 1):
        with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
            k1 = rhs(u)
            k2 = rhs(u + 0.5 * dt * k1)
            k3 = rhs(u + 0.5 * dt * k2)
            k4 = rhs(u + dt * k3)
            u = u + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(u)):
            peclet = umax * dx / p.k if p.k > 0 else np.inf
            raise FloatingPointError(
                f"Burgers reference diverged at t={n * dt:.4g} (nx={nx}, cell Peclet {peclet:.3g}); refine the grid"
            )
        if n % stride == 0 or n == n_steps:
            times.append(n * dt)
            frames.append(u.copy())
    return BurgersSolution(x, np.array(times), np.array(frames))


# --------------------------------------------------------------------------
# Infinite square well


@dataclass(frozen=True)
class WellParams:
    half_width: float = 1.0
    sqrt_e_grid: tuple = tuple(np.linspace(1.0, 7.0, 60))
    train_states: tuple = (2, 3)
    n_norm: int = 64
    anchor: str = "norm"  # "norm" (integral penalty) or "center"

    def __post_init__(self):
        g = np.asarray(self.sqrt_e_grid, dtype=float)
        if g.size and (np.any(g <= 0) or np.any(np.diff(g) <= 0)):
            raise ValueError("sqrt(E) grid must be positive and strictly increasing")


def well_eigenvalues(n):
    """sqrt(E_n) = n pi / 2 for -psi'' = E psi on [-1, 1] with psi(+-1) = 0."""
    n = np.asarray(n)
    if np.any(n < 1):
        raise ValueError("quantum number must be >= 1")
    out = n * np.pi / 2
    return float(out) if out.ndim == 0 else out


def well_eigenfunction(n: int, x):
    """Normalised eigenfunction sin(n pi (x + 1) / 2)."""
    return np.sin(n * np.pi * (np.asarray(x, dtype=float) + 1.0) / 2.0)


def quantum_well(params: WellParams = WellParams(), sqrt_e: float | None = None) -> ProblemDef:
    """-psi'' - E psi = 0 on inputs (x, sqrt(E)), psi(+-1) = 0.

    With ``sqrt_e`` given the energy axis is pinned (eigenvalue scan);
    otherwise collocation draws sqrt(E) from the training eigenstates.
    A normalisation penalty (integral of psi^2 minus 1, squared) guards
    against the trivial solution psi = 0.
    """
    L = params.half_width
    levels = (np.array([sqrt_e], dtype=float) if sqrt_e is not None
              else np.array([well_eigenvalues(n) for n in params.train_states], dtype=float))
    e_lo, e_hi = float(levels.min()), float(levels.max())

    def residual(u: ad.Jet, X):
        return -u.dxx(0, 0) - u.value * (X[:, 1] ** 2)

    def sampler(n, rng):
        x = rng.uniform(-L, L, n)
        e = levels[rng.integers(0, len(levels), n)] if len(levels) > 1 else np.full(n, levels[0])
        return np.column_stack([x, e])

    icbc = [Condition((s * L, float(e)), 0.0) for e in levels for s in (-1.0, 1.0)]
    xq = np.linspace(-L, L, params.n_norm)
    wq = np.full(params.n_norm, xq[1] - xq[0])
    wq[0] = wq[-1] = 0.5 * (xq[1] - xq[0])

    def anchor(model, lc: LossContext):
        total = None
        for e in levels:
            X = np.column_stack([xq, np.full_like(xq, e)])
            psi = model.jet(lc.tape, X, (), 0, theta=lc.theta, ctx=lc.train).value
            if params.anchor == "center":
                term = ad.square(1.0 - ad.square(psi[params.n_norm // 2]))
            else:
                term = ad.square(ad.sum_(ad.square(psi) * wq) - 1.0)
            total = term if total is None else total + term
        return total

    return ProblemDef(
        name="quantum_well",
        inputs=("x", "sqrt_e"),
        residual=residual,
        domain=((-L, L), (e_lo, e_hi)),
        icbc=icbc,
        wrt=(0,),
        order=2,
        pairs=((0, 0),),
        anchor=anchor,
        sampler=sampler,
        params=params,
    )

"""Experiment orchestration: seeded runs, sweeps, scans and CSV artifacts.

Every CSV carries a header and a ``config_hash`` column and contains no
wall-clock data, so rerunning an identical configuration reproduces the
files byte for byte.  Timings go to ``timing.log`` beside them.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import physics, problems
from .checkpoint import save_checkpoint
from .network import Model, build_model, make_spec
from .train import TrainConfig, default_train_config, train

PROBLEMS = ("damped_oscillator", "forced_oscillator", "burgers", "quantum_well")
SWEEP_AXES = ("none", "t_max", "params", "prune", "sqrt_e")


@dataclass
class ExperimentConfig:
    """Everything that determines an experiment's numbers.

    ``model`` holds ModelSpec keyword overrides, ``train`` TrainConfig
    overrides (the seed is set per run), ``problem_overrides`` the
    problem-parameter overrides.  ``out_dir`` is excluded from the hash.
    """

    problem: str = "damped_oscillator"
    problem_overrides: dict = field(default_factory=dict)
    variant: str = "mix2funn"
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    train_domain: list | None = None
    test_domain: list | None = None
    n_test: int = 512
    sweep: dict = field(default_factory=lambda: {"axis": "none"})
    history_every: int = 10
    out_dir: str = "runs/experiment"

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}; expected one of {PROBLEMS}")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        self.seeds = [int(s) for s in self.seeds]
        if self.sweep.get("axis", "none") not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.sweep.get('axis')!r}")
        if self.train_domain is not None and self.test_domain is not None:
            tr = np.asarray(self.train_domain, dtype=float).reshape(-1, 2)
            te = np.asarray(self.test_domain, dtype=float).reshape(-1, 2)
            if tr.shape != te.shape:
                raise ValueError("train and test domains need the same arity")
            # the domains may overlap on pinned or spatial axes but not in every axis' interior
            inside = np.all((te[:, 0] < tr[:, 1]) & (tr[:, 0] < te[:, 1]) & (te[:, 1] > te[:, 0]))
            if inside and not np.array_equal(tr, te):
                raise ValueError("test domain must be disjoint from or adjacent to the train domain")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**copy.deepcopy(d))

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def with_updates(self, **kw) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(copy.deepcopy(kw))
        return ExperimentConfig.from_dict(d)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def apply_override(d: dict, key: str, raw: str) -> dict:
    """Set a dotted ``key`` from ``raw`` (parsed as JSON when possible)."""
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.split(".")
    cur = d
    for p in parts[:-1]:
        if cur.get(p) is None:
            cur[p] = {}
        cur = cur[p]
        if not isinstance(cur, dict):
            raise ValueError(f"cannot override {key}: {p} is not a section")
    cur[parts[-1]] = value
    return d


# --------------------------------------------------------------------------
# problem / model construction

_BURGERS_CACHE: dict = {}


def _burgers_solution(params: problems.BurgersParams) -> problems.BurgersSolution:
    key = (params.k, params.x_domain, params.t_train, params.t_test, params.bc, params.nx, params.dt,
           params.ic.__name__)
    if key not in _BURGERS_CACHE:
        _BURGERS_CACHE[key] = problems.burgers_reference(params)
    return _BURGERS_CACHE[key]


def build_problem(cfg: ExperimentConfig) -> physics.ProblemDef:
    """ProblemDef with domains from the config (falling back to the problem's own)."""
    ov = dict(cfg.problem_overrides)
    if cfg.problem in ("damped_oscillator", "forced_oscillator"):
        if cfg.train_domain is not None:
            ov["t_train"] = tuple(np.asarray(cfg.train_domain, dtype=float).reshape(-1))
        if cfg.test_domain is not None:
            ov["t_test"] = tuple(np.asarray(cfg.test_domain, dtype=float).reshape(-1))
        for key in ("t_train", "t_test"):
            if key in ov:
                ov[key] = tuple(float(v) for v in ov[key])
        if cfg.problem == "damped_oscillator":
            return problems.damped_oscillator(problems.OscillatorParams(**ov))
        base = asdict(problems.FORCED_DEFAULT)
        base.update(ov)
        return problems.forced_oscillator(problems.OscillatorParams(**base))
    if cfg.problem == "burgers":
        if cfg.train_domain is not None:
            tr = np.asarray(cfg.train_domain, dtype=float).reshape(2, 2)
            ov["x_domain"], ov["t_train"] = tuple(tr[0]), tuple(tr[1])
        if cfg.test_domain is not None:
            te = np.asarray(cfg.test_domain, dtype=float).reshape(2, 2)
            ov["t_test"] = tuple(te[1])
        for key in ("x_domain", "t_train", "t_test", "bc"):
            if key in ov:
                ov[key] = tuple(float(v) for v in ov[key])
        p = problems.BurgersParams(**ov)
        return problems.burgers(p, reference=_burgers_solution(p))
    for key in ("sqrt_e_grid", "train_states"):
        if key in ov:
            ov[key] = tuple(ov[key])
    sqrt_e = ov.pop("sqrt_e", None)
    return problems.quantum_well(problems.WellParams(**ov), sqrt_e=sqrt_e)


DEFAULT_MODELS = {
    # one mixed unit per problem: 49 / 56 / 56 parameters
    "damped_oscillator": {"mix2funn": {}, "mixfunn": {}, "mlp": {}, "hybrid": {"hidden": [4, 8]}},
    "forced_oscillator": {"mix2funn": {}, "mixfunn": {}, "mlp": {}, "hybrid": {"hidden": [4, 8]}},
    "burgers": {"mix2funn": {}, "mixfunn": {}, "mlp": {"hidden": [16, 16]}, "hybrid": {"hidden": [4, 8]}},
    "quantum_well": {"mix2funn": {}, "mixfunn": {}, "mlp": {"hidden": [32, 32]}, "hybrid": {"hidden": [4, 8]}},
}


def build_experiment_model(cfg: ExperimentConfig, prob: physics.ProblemDef, seed: int) -> Model:
    kw = dict(DEFAULT_MODELS[cfg.problem].get(cfg.variant, {}))
    kw.update(cfg.model)
    spec = make_spec(cfg.variant, prob.arity, **kw)
    return build_model(spec, seed, inputs=list(prob.inputs), domain=[list(d) for d in prob.domain],
                       problem=cfg.problem)


# Experiments train without dropout unless ``train.dropout`` is set: dropout on the
# function outputs leaves the dropout-free network far from the fitted one.
EXPERIMENT_TRAIN_DEFAULTS = {"dropout": 0.0}


def train_config_for(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    return default_train_config(cfg.variant, **{**EXPERIMENT_TRAIN_DEFAULTS, **cfg.train, "seed": seed})


# --------------------------------------------------------------------------
# metrics


def uniform_grid(domain, n: int) -> np.ndarray:
    """Tensor grid with ceil(n**(1/d)) points per sampled axis; pinned axes stay fixed."""
    dom = np.asarray(domain, dtype=float).reshape(-1, 2)
    free = dom[:, 1] > dom[:, 0]
    d = max(1, int(free.sum()))
    per = n if d == 1 else int(math.ceil(n ** (1.0 / d) - 1e-9))
    axes = [np.linspace(lo, hi, per) if lo < hi else np.array([lo]) for lo, hi in dom]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.reshape(-1) for m in mesh])


def reference_values(prob: physics.ProblemDef, X) -> np.ndarray:
    X = np.atleast_2d(X)
    if prob.name == "quantum_well":
        out = np.zeros(X.shape[0])
        for n in prob.params.train_states:
            e = problems.well_eigenvalues(n)
            sel = np.isclose(X[:, 1], e)
            out[sel] = problems.well_eigenfunction(n, X[sel, 0])
        return out
    if prob.reference is None:
        raise ValueError(f"problem {prob.name} has no reference solution")
    return np.asarray(prob.reference(X), dtype=float).reshape(-1)


def mse_vs_reference(model, prob: physics.ProblemDef, X) -> float:
    """Mean squared error against the oracle; eigenfunctions are compared up to sign."""
    X = np.atleast_2d(X)
    u = np.asarray(model.forward(X), dtype=float).reshape(-1)
    ref = reference_values(prob, X)
    if prob.name == "quantum_well":
        return float(min(np.mean((u - ref) ** 2), np.mean((u + ref) ** 2)))
    return float(np.mean((u - ref) ** 2))


def _well_eval_domain(prob):
    states = prob.params.train_states
    return [[(-prob.params.half_width, prob.params.half_width), (problems.well_eigenvalues(n),) * 2]
            for n in states]


def evaluation_grids(prob: physics.ProblemDef, n: int) -> tuple[np.ndarray, np.ndarray | None]:
    """(train grid, test grid or None)."""
    if prob.name == "quantum_well":
        grid = np.vstack([uniform_grid(d, n) for d in _well_eval_domain(prob)])
        return grid, None
    test = uniform_grid(prob.test_domain, n) if prob.test_domain is not None else None
    return uniform_grid(prob.domain, n), test


def residual_points(prob: physics.ProblemDef, n: int) -> np.ndarray:
    if prob.name == "quantum_well":
        return evaluation_grids(prob, n)[0]
    return uniform_grid(prob.domain, n)


@dataclass
class MetricsRow:
    run_id: str
    seed: int
    variant: str
    params: int
    train_error: float
    test_error: float
    residual_error: float
    best_epoch: int
    wall_time: float = 0.0
    failed: bool = False

    def __post_init__(self):
        if not self.failed:
            for name in ("train_error", "test_error", "residual_error"):
                v = getattr(self, name)
                if not (np.isnan(v) or v >= 0):
                    raise ValueError(f"{name} must be nonnegative")


METRIC_FIELDS = ("run_id", "seed", "variant", "params", "train_error", "test_error", "residual_error",
                 "best_epoch", "failed")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def summary_rows(rows: list[MetricsRow]) -> list[dict]:
    ok = [r for r in rows if not r.failed]
    out = []
    for label, fnc in (("mean", np.mean), ("std", np.std)):
        d = {"run_id": label, "seed": "", "variant": rows[0].variant if rows else "",
             "params": rows[0].params if rows else "", "best_epoch": "", "failed": len(rows) - len(ok)}
        for k in ("train_error", "test_error", "residual_error"):
            vals = [getattr(r, k) for r in ok]
            d[k] = float(fnc(vals)) if vals else float("nan")
        out.append(d)
    return out


def write_metrics_csv(rows: list[MetricsRow], path, config_hash: str, summary: bool = True):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS + ("config_hash",))
        for r in rows:
            w.writerow([_fmt(getattr(r, k)) for k in METRIC_FIELDS] + [config_hash])
        if summary and rows:
            for d in summary_rows(rows):
                w.writerow([_fmt(d[k]) for k in METRIC_FIELDS] + [config_hash])


def write_rows_csv(path, header, rows, config_hash: str):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(tuple(header) + ("config_hash",))
        for r in rows:
            w.writerow([_fmt(v) for v in r] + [config_hash])


def select_best(rows) -> int:
    """Index of the run with the lowest residual error; test error is never consulted."""
    best, best_val = -1, np.inf
    for i, r in enumerate(rows):
        v = r["residual_error"] if isinstance(r, dict) else r.residual_error
        failed = r.get("failed", False) if isinstance(r, dict) else r.failed
        if failed or not np.isfinite(v):
            continue
        if v < best_val:
            best, best_val = i, v
    if best < 0:
        raise ValueError("no successful run to select")
    return best


# --------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentResult:
    rows: list
    models: list
    histories: list
    best: int
    config_hash: str
    out_dir: Path

    @property
    def best_row(self) -> MetricsRow:
        return self.rows[self.best]

    @property
    def best_model(self) -> Model:
        return self.models[self.best]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows if not r.failed], dtype=float)


class _TimingLog:
    def __init__(self, out: Path):
        self.path = out / "timing.log"

    def write(self, line: str):
        with open(self.path, "a") as fh:
            fh.write(line + "\n")


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Train one model per seed, score against the oracle and write artifacts.

    Files (in ``cfg.out_dir``): ``metrics.csv`` (one row per seed plus
    mean/std rows), ``history_seed<S>.csv``, ``checkpoint_seed<S>.json``,
    ``solution_seed<S>.csv``, ``best.json``, ``config.json`` and the
    wall-clock ``timing.log``.
    """
    prob = build_problem(cfg)
    h = cfg.hash()
    out = Path(cfg.out_dir)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        (out / "timing.log").write_text("")
        with open(out / "config.json", "w") as fh:
            json.dump({**cfg.to_dict(), "config_hash": h}, fh, indent=1, sort_keys=True)
            fh.write("\n")
    log = _TimingLog(out) if write else None
    train_grid, test_grid = evaluation_grids(prob, cfg.n_test)
    res_pts = residual_points(prob, cfg.n_test)
    rows, models, hists = [], [], []
    for seed in cfg.seeds:
        model = build_experiment_model(cfg, prob, seed)
        tcfg = train_config_for(cfg, seed)
        t0 = time.perf_counter()
        trained, hist = train(model, prob, tcfg)
        wall = time.perf_counter() - t0
        run_id = f"seed{seed}"
        try:
            tr = mse_vs_reference(trained, prob, train_grid)
            te = mse_vs_reference(trained, prob, test_grid) if test_grid is not None else float("nan")
            re = physics.residual_error(trained, prob, res_pts)
            failed = hist.failed or not all(np.isfinite([tr, re]))
        except FloatingPointError:
            tr = te = re = float("nan")
            failed = True
        row = MetricsRow(run_id, seed, cfg.variant, trained.count_params(), tr, te, re,
                         hist.best_epoch, wall, failed)
        rows.append(row)
        models.append(trained)
        hists.append(hist)
        if write:
            hist.write_csv(out / f"history_seed{seed}.csv", h, every=cfg.history_every)
            save_checkpoint(trained, out / f"checkpoint_seed{seed}.json")
            _write_solution(trained, prob, train_grid, test_grid, out / f"solution_seed{seed}.csv", h)
            log.write(f"{run_id} wall_time={wall:.3f}s epochs={len(hist)}"
                      + (f" failed: {hist.failure}" if failed else ""))
    try:
        best = select_best(rows)
    except ValueError:
        best = -1
    if write:
        write_metrics_csv(rows, out / "metrics.csv", h)
        with open(out / "best.json", "w") as fh:
            json.dump({"best_run": rows[best].run_id if best >= 0 else None,
                       "selected_by": "residual_error", "config_hash": h}, fh, indent=1)
            fh.write("\n")
    return ExperimentResult(rows, models, hists, best, h, out)


def _write_solution(model, prob, train_grid, test_grid, path, h):
    grids = [("train", train_grid)] + ([("test", test_grid)] if test_grid is not None else [])
    header = list(prob.inputs) + ["split", "model", "reference"]
    rows = []
    for split, X in grids:
        try:
            u = np.asarray(model.forward(X)).reshape(-1)
        except FloatingPointError:
            u = np.full(X.shape[0], np.nan)
        ref = reference_values(prob, X)
        for x, a, b in zip(X, u, ref):
            rows.append([*map(float, x), split, float(a), float(b)])
    write_rows_csv(path, header, rows, h)


def data_size_sweep(cfg: ExperimentConfig, t_max=(10, 20, 40, 60, 80), test_domain=(80.0, 150.0)) -> list:
    """One experiment per T_max on [0, T_max], all scored on the same test grid.

    Returns rows (T_max, mean, min, max test error) and writes
    ``data_size.csv`` with the test-grid hash as an extra column.
    """
    if cfg.problem not in ("damped_oscillator", "forced_oscillator"):
        raise ValueError("the data-size sweep is defined for oscillator problems")
    base = Path(cfg.out_dir)
    out_rows = []
    grid_hash = hashlib.sha256(uniform_grid([test_domain], cfg.n_test).tobytes()).hexdigest()[:12]
    for T in t_max:
        sub = cfg.with_updates(train_domain=[0.0, float(T)], test_domain=list(map(float, test_domain)),
                               out_dir=str(base / f"tmax_{T:g}"))
        res = run_experiment(sub)
        te = res.column("test_error")
        out_rows.append([float(T), float(te.mean()), float(te.min()), float(te.max()), grid_hash])
    base.mkdir(parents=True, exist_ok=True)
    write_rows_csv(base / "data_size.csv", ["t_max", "test_mean", "test_min", "test_max", "test_grid_hash"],
                   out_rows, cfg.hash())
    return out_rows


def param_count_sweep(cfg: ExperimentConfig, sizes: dict) -> list:
    """``sizes`` maps variant -> list of ModelSpec overrides, one per model size."""
    if cfg.problem != "burgers":
        raise ValueError("the parameter-count sweep is defined for the Burgers problem")
    bad = set(sizes) - {"mlp", "mix2funn", "hybrid"}
    if bad:
        raise ValueError(f"unsupported variants in sweep: {sorted(bad)}")
    base = Path(cfg.out_dir)
    rows = []
    for variant, specs in sizes.items():
        for i, mkw in enumerate(specs):
            sub = cfg.with_updates(variant=variant, model=dict(mkw), out_dir=str(base / f"{variant}_{i}"))
            res = run_experiment(sub)
            tr, te = res.column("train_error"), res.column("test_error")
            rows.append([variant, res.rows[0].params, tr.mean(), tr.min(), tr.max(), te.mean(), te.min(), te.max()])
    base.mkdir(parents=True, exist_ok=True)
    write_rows_csv(base / "param_sweep.csv",
                   ["variant", "params", "train_mean", "train_min", "train_max", "test_mean", "test_min", "test_max"],
                   rows, cfg.hash())
    return rows


# --------------------------------------------------------------------------
# eigenvalue search


def refine_minimum(x, y, i: int) -> float:
    """Sub-grid location of the minimum at index ``i``.

    Near an eigenvalue the lowest loss grows quadratically with the
    detuning, so ``sqrt(loss)`` is V-shaped; the V through the three
    points around ``i`` gives the estimate.  Falls back to ``x[i]`` at the
    grid ends or on a flat triple.
    """
    if i <= 0 or i >= len(x) - 1:
        return float(x[i])
    r = np.sqrt(np.maximum(np.asarray(y[i - 1: i + 2], dtype=float), 0.0))
    h = float(x[i + 1] - x[i])
    slope = max(r[0] - r[1], r[2] - r[1]) / h
    if slope <= 0:
        return float(x[i])
    shift = (r[0] - r[2]) / (2 * slope)
    return float(x[i] + np.clip(shift, -h / 2, h / 2))


def find_minima(x, y, min_depth: float = 0.5) -> list[tuple[int, float]]:
    """Local minima of ``log10(y)`` whose depth below both surrounding maxima
    is at least ``min_depth`` decades, with refined locations."""
    from scipy.signal import find_peaks

    ly = np.log10(np.maximum(np.asarray(y, dtype=float), 1e-300))
    idx, _ = find_peaks(-ly, prominence=min_depth)
    return [(int(i), refine_minimum(x, y, int(i))) for i in idx]


def energy_scan(cfg: ExperimentConfig, grid=None, min_depth: float = 0.5) -> tuple[list, list]:
    """Train a fresh model at each candidate sqrt(E) (held fixed) and record its lowest loss.

    Writes ``energy_scan.csv`` (sorted by sqrt(E)) and ``energy_minima.csv``.
    Returns (rows, minima) where minima are (grid index, refined sqrt(E)).
    """
    if cfg.problem != "quantum_well":
        raise ValueError("the energy scan is defined for the quantum well")
    if grid is None:
        grid = cfg.sweep.get("values") or problems.WellParams().sqrt_e_grid
    grid = np.sort(np.asarray(grid, dtype=float))
    seed = cfg.seeds[0]
    rows = []
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = _TimingLog(out)
    (out / "timing.log").write_text("")
    train_kw = {"epochs": 2000, **cfg.train}
    for e in grid:
        sub = cfg.with_updates(problem_overrides={**cfg.problem_overrides, "sqrt_e": float(e)},
                               train=train_kw)
        prob = build_problem(sub)
        model = build_experiment_model(sub, prob, seed)
        t0 = time.perf_counter()
        _, hist = train(model, prob, train_config_for(sub, seed))
        log.write(f"sqrt_e={e!r} wall_time={time.perf_counter() - t0:.3f}s")
        rows.append([float(e), float(hist.best_loss), int(hist.failed)])
    h = cfg.hash()
    write_rows_csv(out / "energy_scan.csv", ["sqrt_e", "lowest_loss", "failed"], rows, h)
    losses = np.array([r[1] for r in rows])
    minima = find_minima(grid, losses, min_depth)
    write_rows_csv(out / "energy_minima.csv", ["grid_index", "sqrt_e_grid", "sqrt_e_refined"],
                   [[i, float(grid[i]), x] for i, x in minima], h)
    return rows, minima


def loss_vs_energy(model, grid, prob: physics.ProblemDef | None = None, n_x: int = 512,
                   path=None, config_hash: str = "") -> list:
    """Residual + boundary loss of one trained (x, sqrt(E)) model across a sqrt(E) grid."""
    prob = problems.quantum_well() if prob is None else prob
    L = prob.params.half_width
    rows = []
    for e in np.asarray(grid, dtype=float):
        pinned = problems.quantum_well(prob.params, sqrt_e=float(e))
        X = np.column_stack([np.linspace(-L, L, n_x), np.full(n_x, e)])
        lc = physics.LossContext(ad.Tape(), None)
        res = float(physics.residual_loss(model, pinned, X, lc).value)
        bc = float(physics.icbc_loss(model, pinned, lc).value)
        rows.append([float(e), res, bc, res + bc])
    if path is not None:
        write_rows_csv(path, ["sqrt_e", "residual", "boundary", "loss"], rows, config_hash)
    return rows


def cumulative_error(model, oracle, grid, path=None, config_hash: str = "") -> list:
    """CE(t_j) = sum_{i<=j} (u(t_i) - u_true(t_i))^2 on a uniform 1-D grid."""
    t = np.asarray(grid, dtype=float).reshape(-1)
    if t.size > 2 and not np.allclose(np.diff(t), t[1] - t[0], rtol=1e-9, atol=1e-12):
        raise ValueError("cumulative error needs a uniform grid")
    u = np.asarray(model(t[:, None]) if isinstance(model, Model) else model(t), dtype=float).reshape(-1)
    ce = np.cumsum((u - np.asarray(oracle(t), dtype=float).reshape(-1)) ** 2)
    rows = [[float(a), float(b)] for a, b in zip(t, ce)]
    if path is not None:
        write_rows_csv(path, ["t", "cumulative_error"], rows, config_hash)
    return rows

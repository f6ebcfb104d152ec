"""Adam training loop with dropout, temperature annealing and best-so-far snapshots."""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import physics
from .network import Model, TrainContext, dropout_mask


@dataclass(frozen=True)
class TemperatureSchedule:
    """``constant`` keeps T = T0; ``exponential`` is T(e) = max(T_min, T0 * gamma**e).

    When ``gamma`` is None it is chosen so that T reaches ``T_min`` after
    ``reach_fraction * epochs`` epochs.
    """

    T0: float = 1.0
    T_min: float = 0.1
    mode: str = "exponential"
    gamma: float | None = None
    epochs: int = 10_000
    reach_fraction: float = 0.8

    def __post_init__(self):
        if not self.T_min > 0:
            raise ValueError(f"T_min must be positive, got {self.T_min}")
        if not self.T0 >= self.T_min:
            raise ValueError("T0 must be >= T_min")
        if self.mode not in ("constant", "exponential"):
            raise ValueError(f"unknown temperature mode {self.mode!r}")

    def decay(self) -> float:
        if self.gamma is not None:
            return self.gamma
        n = max(1.0, self.reach_fraction * self.epochs)
        return (self.T_min / self.T0) ** (1.0 / n)


def anneal_temperature(epoch: int, schedule: TemperatureSchedule) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if schedule.mode == "constant":
        return schedule.T0
    return max(schedule.T_min, schedule.T0 * schedule.decay() ** epoch)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10_000
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.9
    eps: float = 1e-8
    dropout: float = 0.1
    T0: float = 1.0
    T_min: float = 0.1
    temperature_mode: str = "exponential"
    seed: int = 0
    n_collocation: int | None = None  # None: 512 for one input, 2048 otherwise
    resample: bool = True
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout probability must be in [0, 1)")

    @property
    def schedule(self) -> TemperatureSchedule:
        return TemperatureSchedule(self.T0, self.T_min, self.temperature_mode, epochs=self.epochs)

    def collocation_count(self, arity: int) -> int:
        if self.n_collocation is not None:
            return self.n_collocation
        return 512 if arity == 1 else 2048

    def to_dict(self) -> dict:
        return asdict(self)


def default_train_config(variant: str, **kw) -> TrainConfig:
    """lr 0.1 and dropout 0.1 for mixed-function models; lr 0.01, no dropout for dense ones."""
    if variant in ("mlp", "hybrid"):
        kw.setdefault("lr", 0.01)
        kw.setdefault("dropout", 0.0)
    return TrainConfig(**kw)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grads, state: AdamState, lr: float = 0.1, beta1: float = 0.9,
              beta2: float = 0.9, eps: float = 1e-8, mask=None) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; entries with mask 0 are left untouched."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError("params, grads and optimizer state must share a shape")
    if not np.all(np.isfinite(grads)):
        bad = int(np.argmax(~np.isfinite(grads)))
        raise FloatingPointError(f"non-finite gradient at parameter {bad}; step rejected")
    live = np.ones(params.shape, dtype=bool) if mask is None else np.asarray(mask) > 0
    g = np.where(live, grads, 0.0)
    t = state.t + 1
    m = np.where(live, beta1 * state.m + (1 - beta1) * g, state.m)
    v = np.where(live, beta2 * state.v + (1 - beta2) * g * g, state.v)
    mhat = m / (1 - beta1**t)
    vhat = v / (1 - beta2**t)
    new = np.where(live, params - lr * mhat / (np.sqrt(vhat) + eps), params)
    return new, AdamState(m, v, t)


def apply_dropout(a, p: float, rng: np.random.Generator | None = None, training: bool = True):
    """Inverted dropout: zero each entry with probability ``p``, rescale survivors by 1/(1-p)."""
    a = np.asarray(a, dtype=float)
    if not training or p == 0:
        return a.copy()
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    return a * dropout_mask(a.shape, p, rng)


@dataclass
class EpochRecord:
    epoch: int
    res: float
    icbc: float
    data: float
    anchor: float
    total: float
    temperature: float
    wall_time: float


HISTORY_FIELDS = ("epoch", "res", "icbc", "data", "anchor", "total", "temperature")


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_params: np.ndarray | None = None
    best_epoch: int = -1
    best_loss: float = np.inf
    final_params: np.ndarray | None = None
    failed: bool = False
    failure: str = ""

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def same_trajectory(self, other: "TrainHistory") -> bool:
        """Equality of everything except wall-clock times."""
        a = [[getattr(r, f) for f in HISTORY_FIELDS] for r in self.records]
        b = [[getattr(r, f) for f in HISTORY_FIELDS] for r in other.records]
        return a == b and self.best_epoch == other.best_epoch

    def write_csv(self, path, config_hash: str = "", every: int = 1):
        """Per-epoch losses; wall times are deliberately left out so reruns are byte-identical."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_FIELDS + ("config_hash",))
            for r in self.records[::max(1, every)]:
                w.writerow([r.epoch] + [repr(float(getattr(r, f))) for f in HISTORY_FIELDS[1:]] + [config_hash])


def _rng_streams(seed: int):
    coll, drop = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(coll), np.random.default_rng(drop)


def train(model: Model, prob: physics.ProblemDef, cfg: TrainConfig,
          callback=None) -> tuple[Model, TrainHistory]:
    """Minimise the total loss with Adam.

    Collocation points are resampled every epoch (or drawn once when
    ``cfg.resample`` is False).  Dropout is applied to the function outputs
    of mixed neurons; the temperature only matters in softmax mode.

    The returned model carries the best-so-far parameters (lowest total
    training loss); the history keeps the final ones as well.  A non-finite
    loss or gradient stops training and sets ``history.failed``.
    ``callback(epoch, theta, history)`` runs after each epoch.
    """
    hist = TrainHistory()
    theta = model.params.copy()
    hist.best_params = theta.copy()
    hist.final_params = theta.copy()
    if cfg.epochs == 0:
        return model.copy(), hist
    if prob.arity != model.n_inputs:
        raise ValueError(f"problem has {prob.arity} inputs but model expects {model.n_inputs}")
    coll_rng, drop_rng = _rng_streams(cfg.seed)
    n = cfg.collocation_count(prob.arity)
    sched = cfg.schedule
    mask = model.mask
    state = AdamState.zeros(theta.size)
    batch = None
    t_start = time.perf_counter()
    for epoch in range(cfg.epochs):
        T = anneal_temperature(epoch, sched)
        if batch is None or cfg.resample:
            batch = physics.sample_problem(prob, n, coll_rng)
        tape = ad.Tape()
        th = tape.variable(theta)
        lc = physics.LossContext(tape, th, TrainContext(T, cfg.dropout, drop_rng))
        try:
            with np.errstate(over="ignore", invalid="ignore"):  # non-finite values are reported below
                terms = physics.loss_terms(model, prob, batch, lc)
                total = physics.combine(terms, prob.weights)
                if not np.isfinite(total.value):
                    raise FloatingPointError(f"non-finite loss at epoch {epoch}")
                (g,) = tape.backward(total, [th])
            rec = EpochRecord(epoch, *(float(terms[k].value) for k in ("res", "icbc", "data", "anchor")),
                              float(total.value), T, time.perf_counter() - t_start)
            hist.records.append(rec)
            if rec.total < hist.best_loss:
                hist.best_loss, hist.best_epoch, hist.best_params = rec.total, epoch, theta.copy()
            theta, state = adam_step(theta, g, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, mask)
        except FloatingPointError as exc:
            hist.failed = True
            hist.failure = str(exc)
            break
        if callback is not None:
            callback(epoch, theta, hist)
    hist.final_params = theta.copy()
    meta = {"best_epoch": hist.best_epoch, "train_seed": cfg.seed}
    if model.spec.is_mixed and model.spec.normalization == "softmax" and hist.records:
        meta["temperature"] = hist.records[max(hist.best_epoch, 0)].temperature
    best = model.with_params(hist.best_params, **meta)
    return best, hist

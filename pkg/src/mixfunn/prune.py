"""Global magnitude pruning of mixing weights, with optional fine-tuning."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import physics
from .network import Model, effective_mask, eval_temperature, softmax_weights
from .train import TrainConfig, train


@dataclass
class PruneReport:
    ratio: float
    removed: int
    mask: np.ndarray
    params_before: int
    params_after: int
    effective: int
    mix_kept: int
    residual_error: float | None = None
    fine_tuned: bool = False
    model: Model | None = None

    def row(self) -> dict:
        return {
            "ratio": self.ratio,
            "removed": self.removed,
            "mix_kept": self.mix_kept,
            "params_before": self.params_before,
            "params_after": self.params_after,
            "effective": self.effective,
            "residual_error": "" if self.residual_error is None else self.residual_error,
            "fine_tuned": int(self.fine_tuned),
        }


def mixing_magnitudes(model: Model) -> np.ndarray:
    """Importance of each mixing weight as it enters the forward pass.

    Raw mixing: |w|.  Softmax mixing: the normalised coefficient at the
    model's evaluation temperature.  Masked weights score 0.
    """
    idx = model.mix_indices()
    live = model.mask[idx] > 0
    if model.spec.normalization != "softmax":
        return np.where(live, np.abs(model.params[idx]), 0.0)
    out = np.zeros(idx.size)
    T = eval_temperature(model)
    pos = 0
    for li, width in enumerate(model.spec.layers):
        segs = [s for s in model.segments if s.layer == li and s.role == "mix"]
        blocks = [model.view(s.name, li) for s in segs]
        masks = [model.view(s.name, li, model.mask) for s in segs]
        local = [np.zeros_like(b) for b in blocks]
        for u in range(width):
            a = np.concatenate([b[u] for b in blocks])
            m = np.concatenate([mk[u] for mk in masks]) > 0
            p = np.zeros_like(a)
            if m.any():
                p[m] = softmax_weights(a[m], T)
            off = 0
            for loc in local:
                loc[u] = p[off: off + loc.shape[1]]
                off += loc.shape[1]
        for loc in local:
            out[pos: pos + loc.size] = loc.reshape(-1)
            pos += loc.size
    return out


def magnitude_prune(model: Model, ratio: float) -> PruneReport:
    """Mask the floor(ratio * K) smallest mixing weights (K = all mixing weights).

    Already-masked weights count as magnitude 0, so repeated calls with a
    growing ratio implement an iterative schedule.  Ties go to the lower
    canonical index.  Pre-activation parameters that can no longer reach the
    output are masked too.
    """
    if not 0 <= ratio <= 1:
        raise ValueError(f"ratio must be in [0, 1], got {ratio}")
    idx = model.mix_indices()
    if idx.size == 0:
        raise ValueError("model has no mixing weights to prune")
    K = idx.size
    n_remove = int(np.floor(ratio * K + 1e-9))
    mag = mixing_magnitudes(model)
    order = np.lexsort((np.arange(K), mag))  # magnitude first, then index
    mask = model.mask.copy()
    mask[idx[order[:n_remove]]] = 0.0
    pruned = model.with_params(model.params, mask)
    reach = effective_mask(pruned)
    non_mix = np.ones(mask.size, dtype=bool)
    non_mix[idx] = False
    mask[non_mix] = np.minimum(mask[non_mix], reach[non_mix])
    pruned = model.with_params(model.params, mask)
    return PruneReport(
        ratio=float(ratio),
        removed=n_remove,
        mask=mask,
        params_before=model.count_live(),
        params_after=pruned.count_live(),
        effective=pruned.count_effective_params(),
        mix_kept=int(pruned.mask[idx].sum()),
        model=pruned,
    )


def _residual_points(prob: physics.ProblemDef, n: int = 512) -> np.ndarray:
    from .harness import uniform_grid

    return uniform_grid(prob.domain, n)


def prune_sweep(model: Model, ratios, fine_tune_cfg: TrainConfig | None = None,
                prob: physics.ProblemDef | None = None, eval_points=None) -> list[PruneReport]:
    """Independent prune (and optional fine-tune) of a clone per ratio.

    The residual error (residual + IC/BC, no dropout) is measured on
    ``eval_points`` (default: a uniform grid over the training domain).
    """
    if fine_tune_cfg is not None and prob is None:
        raise ValueError("fine-tuning needs a problem definition")
    pts = None
    if prob is not None:
        pts = _residual_points(prob) if eval_points is None else eval_points
    reports = []
    for r in ratios:
        rep = magnitude_prune(model.copy(), r)
        if fine_tune_cfg is not None and fine_tune_cfg.epochs > 0:
            tuned, hist = train(rep.model, prob, fine_tune_cfg)
            if hist.failed:
                raise FloatingPointError(f"fine-tuning at ratio {r} failed: {hist.failure}")
            rep.model = tuned
            rep.fine_tuned = True
            rep.effective = tuned.count_effective_params()
        if pts is not None:
            rep.residual_error = physics.residual_error(rep.model, prob, pts)
        reports.append(rep)
    return reports


def iterative_prune(model: Model, ratios, fine_tune_cfg: TrainConfig,
                    prob: physics.ProblemDef, eval_points=None) -> list[PruneReport]:
    """Prune to each ratio in turn, fine-tuning the survivor before the next step."""
    pts = _residual_points(prob) if eval_points is None else eval_points
    reports = []
    cur = model
    for r in ratios:
        rep = magnitude_prune(cur, r)
        tuned, hist = train(rep.model, prob, fine_tune_cfg)
        if hist.failed:
            raise FloatingPointError(f"fine-tuning at ratio {r} failed: {hist.failure}")
        rep.model, rep.fine_tuned = tuned, True
        rep.effective = tuned.count_effective_params()
        rep.residual_error = physics.residual_error(tuned, prob, pts)
        reports.append(rep)
        cur = tuned
    return reports


PRUNE_FIELDS = ("ratio", "removed", "mix_kept", "params_before", "params_after", "effective",
                "residual_error", "fine_tuned")


def write_prune_csv(reports, path, config_hash: str = ""):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PRUNE_FIELDS + ("config_hash",))
        for rep in reports:
            row = rep.row()
            w.writerow([repr(row[k]) if isinstance(row[k], float) else row[k] for k in PRUNE_FIELDS] + [config_hash])

"""Command-line entry point: ``python -m mixfunn <subcommand> [options]``.

Subcommands: train, sweep-data-size, sweep-params, sweep-prune, scan-energy,
loss-vs-energy, extract, eval, oracle-export.  Failures exit with status 1
and append a JSON line to ``<out>/errors.jsonl`` (and stderr).
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness, problems
from .checkpoint import load_checkpoint
from .expression import extract_expression, render, verify_expression
from .prune import prune_sweep, write_prune_csv

COMMANDS = ("train", "sweep-data-size", "sweep-params", "sweep-prune", "scan-energy",
            "loss-vs-energy", "extract", "eval", "oracle-export")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mixfunn", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="single seed (replaces the seed list)")
        p.add_argument("--seeds", help="comma-separated seed list")
        p.add_argument("--out", help="output directory")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted config key, value parsed as JSON when possible (repeatable)")
        if name in ("extract", "eval", "loss-vs-energy", "sweep-prune"):
            p.add_argument("--checkpoint", help="model checkpoint (JSON)")
        if name == "extract":
            p.add_argument("--digits", type=int, default=3)
        if name == "sweep-prune":
            p.add_argument("--ratios", default="0,0.2,0.4,0.6,0.8,0.9714285714285714",
                           help="comma-separated pruning ratios")
            p.add_argument("--fine-tune-epochs", type=int, default=1000)
    return ap


def resolve_config(args) -> harness.ExperimentConfig:
    d = harness.ExperimentConfig().to_dict()
    if args.config:
        with open(args.config) as fh:
            d.update(json.load(fh))
    for item in args.override:
        if "=" not in item:
            raise ValueError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        harness.apply_override(d, key.strip(), raw.strip())
    if args.seeds:
        d["seeds"] = [int(s) for s in args.seeds.split(",") if s.strip()]
    if args.seed is not None:
        d["seeds"] = [args.seed]
    if args.out:
        d["out_dir"] = args.out
    return harness.ExperimentConfig.from_dict(d)


def _emit(obj):
    print(json.dumps(obj, sort_keys=True))


def _cmd_train(cfg, args):
    res = harness.run_experiment(cfg)
    _emit({"command": "train", "out": str(res.out_dir), "config_hash": res.config_hash,
           "best_run": res.best_row.run_id if res.best >= 0 else None,
           "rows": [{"seed": r.seed, "train_error": r.train_error, "test_error": r.test_error,
                     "residual_error": r.residual_error, "failed": r.failed} for r in res.rows]})


def _cmd_data_size(cfg, args):
    t_max = cfg.sweep.get("values") or [10, 20, 40, 60, 80]
    test = cfg.test_domain or [80.0, 150.0]
    rows = harness.data_size_sweep(cfg, tuple(t_max), tuple(np.asarray(test, dtype=float).reshape(-1)))
    _emit({"command": "sweep-data-size", "rows": [r[:4] for r in rows]})


def _cmd_params(cfg, args):
    sizes = cfg.sweep.get("sizes") or {
        "mlp": [{"hidden": [16, 16]}],
        "mix2funn": [{}],
        "hybrid": [{"hidden": [4, 8]}],
    }
    rows = harness.param_count_sweep(cfg, sizes)
    _emit({"command": "sweep-params", "rows": rows})


def _model_for(cfg, args):
    if getattr(args, "checkpoint", None):
        return load_checkpoint(args.checkpoint)
    res = harness.run_experiment(cfg)
    if res.best < 0:
        raise RuntimeError("every training run failed")
    return res.best_model


def _cmd_prune(cfg, args):
    model = _model_for(cfg, args)
    prob = harness.build_problem(cfg)
    ratios = [float(r) for r in args.ratios.split(",")]
    ft = replace(harness.train_config_for(cfg, cfg.seeds[0]), epochs=args.fine_tune_epochs)
    reports = prune_sweep(model, ratios, ft if args.fine_tune_epochs > 0 else None, prob,
                          harness.residual_points(prob, cfg.n_test))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_prune_csv(reports, out / "prune_sweep.csv", cfg.hash())
    lines = []
    for rep in reports:
        expr = extract_expression(rep.model)
        lines.append(f"ratio={rep.ratio!r} mix_kept={rep.mix_kept} effective={rep.effective}: {render(expr, 3)}")
    (out / "prune_expressions.txt").write_text("\n".join(lines) + "\n")
    _emit({"command": "sweep-prune", "rows": [r.row() for r in reports]})


def _cmd_scan(cfg, args):
    rows, minima = harness.energy_scan(cfg)
    _emit({"command": "scan-energy", "n": len(rows), "minima": [m[1] for m in minima]})


def _cmd_loss_vs_energy(cfg, args):
    model = _model_for(cfg, args)
    grid = cfg.sweep.get("values") or problems.WellParams().sqrt_e_grid
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = harness.loss_vs_energy(model, grid, harness.build_problem(cfg), path=out / "loss_vs_energy.csv",
                                  config_hash=cfg.hash())
    _emit({"command": "loss-vs-energy", "n": len(rows)})


def _cmd_extract(cfg, args):
    model = _model_for(cfg, args)
    expr = extract_expression(model)
    dev = verify_expression(expr, model, 1000, 0)
    dom = np.asarray(model.meta.get("domain") or [(0.0, 1.0)] * model.n_inputs, dtype=float).reshape(-1, 2)
    X = dom[:, 0] + (dom[:, 1] - dom[:, 0]) * np.random.default_rng(0).random((1000, dom.shape[0]))
    scale = float(np.max(np.abs(model.forward(X))))
    text = render(expr, args.digits)
    if args.checkpoint:
        Path(args.checkpoint).with_suffix(".expr.txt").write_text(text + "\n")
    print(text)
    _emit({"command": "extract", "expression": text, "max_deviation": dev, "output_scale": scale})


def _cmd_eval(cfg, args):
    model = _model_for(cfg, args)
    prob = harness.build_problem(cfg)
    tr, te = harness.evaluation_grids(prob, cfg.n_test)
    out = {"command": "eval", "train_error": harness.mse_vs_reference(model, prob, tr),
           "residual_error": harness.physics.residual_error(model, prob, harness.residual_points(prob, cfg.n_test))}
    if te is not None:
        out["test_error"] = harness.mse_vs_reference(model, prob, te)
    _emit(out)


def _cmd_oracle(cfg, args):
    prob = harness.build_problem(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.hash()
    if cfg.problem == "burgers":
        sol = prob.reference
        harness.write_rows_csv(out / "oracle_burgers.csv", ["x", "t", "u"], list(sol.to_rows(every_x=8)), h)
    elif cfg.problem == "quantum_well":
        x = np.linspace(-1.0, 1.0, cfg.n_test)
        rows = [[float(xi)] + [float(problems.well_eigenfunction(n, xi)) for n in (1, 2, 3, 4)] for xi in x]
        harness.write_rows_csv(out / "oracle_well.csv", ["x", "psi1", "psi2", "psi3", "psi4"], rows, h)
    else:
        lo = prob.domain[0][0]
        hi = max(prob.domain[0][1], prob.test_domain[0][1])
        t = np.linspace(lo, hi, cfg.n_test)
        harness.write_rows_csv(out / f"oracle_{cfg.problem}.csv", ["t", "x"],
                               [[float(a), float(b)] for a, b in zip(t, prob.reference(t[:, None]))], h)
    _emit({"command": "oracle-export", "out": str(out)})


HANDLERS = {
    "train": _cmd_train,
    "sweep-data-size": _cmd_data_size,
    "sweep-params": _cmd_params,
    "sweep-prune": _cmd_prune,
    "scan-energy": _cmd_scan,
    "loss-vs-energy": _cmd_loss_vs_energy,
    "extract": _cmd_extract,
    "eval": _cmd_eval,
    "oracle-export": _cmd_oracle,
}


def _log_error(out_dir, command, exc):
    rec = {"command": command, "error": type(exc).__name__, "message": str(exc),
           "trace": traceback.format_exception_only(type(exc), exc)[-1].strip()}
    line = json.dumps(rec, sort_keys=True)
    print(line, file=sys.stderr)
    try:
        p = Path(out_dir)
        p.mkdir(parents=True, exist_ok=True)
        with open(p / "errors.jsonl", "a") as fh:
            fh.write(line + "\n")
    except OSError:
        pass


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    out_dir = args.out or "."
    try:
        cfg = resolve_config(args)
        out_dir = cfg.out_dir
        HANDLERS[args.command](cfg, args)
    except Exception as exc:  # every failure becomes one JSON line and exit status 1
        _log_error(out_dir, args.command, exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

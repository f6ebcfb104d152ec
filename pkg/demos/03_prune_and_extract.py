"""Prune a trained Mix2Funn down to a single mixing weight and read off the formula.

Magnitude pruning keeps the largest mixing weights; after a short fine-tune
with the mask frozen, the network collapses to a closed-form expression that
reproduces the masked model to rounding error.
"""

from dataclasses import replace

from mixfunn import harness
from mixfunn.expression import extract_expression, render, verify_expression
from mixfunn.harness import ExperimentConfig, run_experiment
from mixfunn.prune import magnitude_prune
from mixfunn.train import train

cfg = ExperimentConfig(problem="damped_oscillator", seeds=[0], train={"epochs": 2000},
                       out_dir="/tmp/mixfunn_demo_prune")
model = run_experiment(cfg).best_model
prob = harness.build_problem(cfg)

for ratio in (0.0, 0.8, 34 / 35):
    rep = magnitude_prune(model, ratio)
    tuned, _ = train(rep.model, prob, replace(harness.train_config_for(cfg, 0), epochs=1000))
    expr = extract_expression(tuned)
    dev = verify_expression(expr, tuned, 1000, 0, [(0.0, 20.0)])
    print(f"ratio {ratio:.3f}: mixing weights kept {rep.mix_kept:2d}, effective params "
          f"{tuned.count_effective_params():2d}, max deviation {dev:.1e}")
    if rep.mix_kept <= 2:
        print("   u(t) =", render(expr, 3))

"""Mixed-function physics-informed networks with second-order neurons.

Quick tour::

    from mixfunn import damped_oscillator, make_spec, build_model, TrainConfig, train
    prob = damped_oscillator()
    model = build_model(make_spec("mix2funn", 1), seed=0)
    trained, history = train(model, prob, TrainConfig(epochs=2000, dropout=0.0))
"""

from .autodiff import JetValue, ParamGradient, Tape, check_gradients, eval_jet, grad_params
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .expression import ExpressionTree, extract_expression, render, verify_expression
from .functions import DEFAULT_FUNCTIONS, FunctionKind, apply_function
from .harness import (ExperimentConfig, MetricsRow, cumulative_error, data_size_sweep, energy_scan,
                      loss_vs_energy, param_count_sweep, run_experiment, select_best)
from .network import (MixedFunctionNeuron, Model, ModelSpec, SecondOrderNeuron, build_model, effective_mask,
                      forward, make_spec, mixed_forward, second_order_forward, softmax_weights)
from .physics import (CollocationBatch, Condition, ProblemDef, data_loss, icbc_loss, residual_loss,
                      sample_collocation, total_loss)
from .problems import (BurgersParams, OscillatorParams, WellParams, burgers, burgers_reference,
                       damped_oscillator, forced_oscillator, oscillator_reference, quantum_well,
                       well_eigenvalues)
from .prune import PruneReport, magnitude_prune, prune_sweep
from .train import TrainConfig, TrainHistory, adam_step, anneal_temperature, apply_dropout, train

__version__ = "0.1.0"

__all__ = [
    "BurgersParams",
    "CheckpointError",
    "CollocationBatch",
    "Condition",
    "DEFAULT_FUNCTIONS",
    "ExperimentConfig",
    "ExpressionTree",
    "FunctionKind",
    "JetValue",
    "MetricsRow",
    "MixedFunctionNeuron",
    "Model",
    "ModelSpec",
    "OscillatorParams",
    "ParamGradient",
    "ProblemDef",
    "PruneReport",
    "SecondOrderNeuron",
    "Tape",
    "TrainConfig",
    "TrainHistory",
    "WellParams",
    "adam_step",
    "anneal_temperature",
    "apply_dropout",
    "apply_function",
    "build_model",
    "burgers",
    "burgers_reference",
    "check_gradients",
    "cumulative_error",
    "damped_oscillator",
    "data_loss",
    "data_size_sweep",
    "effective_mask",
    "energy_scan",
    "eval_jet",
    "extract_expression",
    "forced_oscillator",
    "forward",
    "grad_params",
    "icbc_loss",
    "load_checkpoint",
    "loss_vs_energy",
    "magnitude_prune",
    "make_spec",
    "mixed_forward",
    "oscillator_reference",
    "param_count_sweep",
    "prune_sweep",
    "quantum_well",
    "render",
    "residual_loss",
    "run_experiment",
    "sample_collocation",
    "save_checkpoint",
    "second_order_forward",
    "select_best",
    "softmax_weights",
    "total_loss",
    "train",
    "verify_expression",
    "well_eigenvalues",
]

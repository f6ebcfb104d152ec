"""Train Mix2Funn and an MLP on the damped oscillator and compare extrapolation.

Both models see only the ODE and the initial conditions on t in [0, 20]; the
test window [20, 50] is never used for training.  Pass a number of epochs as
the first argument (default 2000; the acceptance run uses 10000).
"""

import sys
import tempfile

from mixfunn.harness import ExperimentConfig, run_experiment

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
out = tempfile.mkdtemp(prefix="mixfunn_demo_")
for variant in ("mix2funn", "mlp"):
    cfg = ExperimentConfig(problem="damped_oscillator", variant=variant, seeds=[0],
                           train={"epochs": epochs}, out_dir=f"{out}/{variant}")
    res = run_experiment(cfg)
    r = res.best_row
    print(f"{variant:9s} params={r.params:6d}  train MSE {r.train_error:.3e}  test MSE {r.test_error:.3e}"
          f"  residual {r.residual_error:.3e}")
print(f"metrics, histories, checkpoints and solution CSVs in {out}")

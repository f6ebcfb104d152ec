"""Find infinite-well eigenvalues by scanning the energy.

At each candidate sqrt(E) a fresh model is trained on the Schrodinger residual
with the boundary and normalisation penalties, and the lowest loss is compared
with the exact levels n*pi/2 on [-1, 1].  Expect a clear dip only at the
ground state: for higher candidates training tends to settle on psi = 0,
whose loss is the normalisation penalty (see "Known limitations" in the
README).  This demo uses a coarse grid and few epochs; the acceptance run
uses 60 points x 2000 epochs.
"""

import numpy as np

from mixfunn import harness
from mixfunn.harness import ExperimentConfig
from mixfunn.problems import well_eigenvalues

cfg = ExperimentConfig(problem="quantum_well", seeds=[0], train={"epochs": 500},
                       out_dir="/tmp/mixfunn_demo_scan")
rows, minima = harness.energy_scan(cfg, np.linspace(1.0, 7.0, 25))
for sqrt_e, loss, *_ in rows:
    print(f"sqrt(E)={sqrt_e:5.2f}  lowest loss {loss:.3e}")
print("minima:", [f"{x:.3f}" for _, x in minima])
print("exact: ", [f"{x:.3f}" for x in well_eigenvalues([1, 2, 3, 4])])

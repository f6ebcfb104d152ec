"""The finite-difference Burgers oracle and its grid convergence.

Central differences in x with RK4 in time.  Halving dx should cut the error
against a fine reference by about 4; coarse grids with a large cell Peclet
number are rejected instead of silently returning NaNs.
"""

import numpy as np

from mixfunn.problems import BurgersParams, burgers_reference

bp = BurgersParams()
ref = burgers_reference(bp, 0.2, nx=2048)
prev = None
for nx in (64, 128, 256):
    s = burgers_reference(bp, 0.2, nx=nx)
    err = float(np.max(np.abs(s.u[-1] - ref.u[-1][:: 2048 // nx])))
    print(f"nx={nx:4d}  max error at t=0.2 {err:.3e}" + (f"  ratio {prev / err:.2f}" if prev else ""))
    prev = err

sol = burgers_reference(bp, bp.t_train[1])
print(f"discrete residual MS on the default grid: {np.mean(sol.grid_residual(bp.k) ** 2):.2e}")
try:
    burgers_reference(bp, bp.t_train[1], nx=128)
except FloatingPointError as exc:
    print("coarse grid:", exc)

"""Input jets and parameter gradients on a small Mix2Funn model.

The model is a scalar function u(t).  eval_jet returns u, du/dt and d2u/dt2
exactly (no finite differences); the tape then differentiates a physics loss
built from those jets with respect to every parameter.
"""

import numpy as np

from mixfunn import autodiff as ad
from mixfunn.network import build_model, make_spec
from mixfunn.physics import LossContext, total_loss
from mixfunn.problems import OscillatorParams, damped_oscillator

model = build_model(make_spec("mix2funn", 1), seed=0)
print(f"Mix2Funn with {model.count_params()} parameters")

# Jets at a few times, checked against a central difference of the forward pass.
for t in (0.5, 1.5, 2.5):
    jv = ad.eval_jet(model, [t], order=2)
    h = 1e-4
    f = [float(model.forward(np.array([[t + k * h]]))[0]) for k in (-1, 0, 1)]
    print(f"t={t}: u={float(jv.value):+.6f}  du/dt={jv.d1[0]:+.6f} (fd {(f[2] - f[0]) / (2 * h):+.6f})"
          f"  d2u/dt2={jv.second(0, 0):+.6f} (fd {(f[2] - 2 * f[1] + f[0]) / h**2:+.6f})")

# Gradient of the damped-oscillator loss (ODE residual + initial conditions).
# Untrained exp|.| units grow fast over [0, 20], so the initial loss is huge.
prob = damped_oscillator(OscillatorParams())
X = np.linspace(0.1, 20.0, 64)[:, None]
tape = ad.Tape()
theta = tape.variable(model.params)
loss = total_loss(model, prob, X, LossContext(tape, theta))
(grad,) = tape.backward(loss, [theta])
print(f"loss {float(loss.value):.4e}, gradient norm {np.linalg.norm(grad):.4e}")

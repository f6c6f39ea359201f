"""Polynomial tracking laws on the damped pendulum, and where they break.

The linear law (quadratic cost) and the cubic law (quartic cost) are exact
to their orders, which shows up as tracking error shrinking like the square
and fourth power of the reference amplitude.  At amplitude 1 the
discretized plant needs velocities where its map is strongly expansive, and
both truncated laws lose the orbit.

Run with ``python3 demos/pendulum_polynomial_laws.py``.
"""

import numpy as np

from mprlab.model import SystemModel
from mprlab.scenarios import scenario_pendulum
from mprlab.sim import rollout_polynomial, steady_state_metrics
from mprlab.terminal import dp_residual_ratios, synthesize_terminal

m = SystemModel.from_scenario(scenario_pendulum())
laws = {"linear": synthesize_terminal(m, 2), "cubic": synthesize_terminal(m, 4)}

# Certification: residual / eps^(d+1) along random rays for shrinking eps.
for name, law in laws.items():
    ratios = dp_residual_ratios(m, law)
    print(f"{name:6s} DP residual ratios:", np.array2string(np.asarray(ratios), precision=3))

print("\nsteady-state average |y| (rows 48..95) against reference amplitude")
for amp in (0.05, 0.1, 0.2, 0.3, 0.5, 1.0):
    row = []
    for name, law in laws.items():
        tr = rollout_polynomial(m, law, (0.0, 0.0), (amp, 0.0), 96)
        if tr.diverged:
            row.append(f"{name}: diverged at step {tr.diverged_at}")
        else:
            row.append(f"{name}: {steady_state_metrics(tr).steady_state_avg_error:.3e}")
    print(f"  amplitude {amp:4.2f}  " + "  ".join(row))

print("\nlarge initial offsets at amplitude 1")
for x0 in ((1.5, 0.0), (2.0, 0.0)):
    for name, law in laws.items():
        tr = rollout_polynomial(m, law, x0, (1.0, 0.0), 96)
        status = f"diverged at step {tr.diverged_at}" if tr.diverged else "tracks"
        print(f"  x0 = {x0}: {name} {status}")

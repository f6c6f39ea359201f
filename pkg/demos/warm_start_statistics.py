"""How good is the shifted warm start on the pendulum?

For each step of a closed-loop MPR run this compares solver iterations from
three starts: the start ``mpr_run`` actually uses (the best of the shifted
sequence and the cold candidates), the plain shifted sequence with
kappa^T appended, and a cold start.  Far from the manifold the appended
terminal-feedback control is poor, so the plain shift often costs more
iterations than a cold start.

Run with ``python3 demos/warm_start_statistics.py``.  Takes about a minute.
"""

import numpy as np

from mprlab.model import SystemModel
from mprlab.mpr import MprConfig, mpr_run, shift_warm_start, solve_finite_horizon
from mprlab.scenarios import scenario_pendulum
from mprlab.terminal import synthesize_terminal

m = SystemModel.from_scenario(scenario_pendulum())
law = synthesize_terminal(m, 4)
steps = 96

for box in (None, (-2.0, 2.0)):
    cfg = MprConfig(4, law, u_box=box)
    run = mpr_run(m, cfg, (2.0, 0.0), (1.0, 0.0), steps)
    tr = run.trajectory
    used = np.array([d.iterations for d in run.diagnostics])
    cold = np.array([solve_finite_horizon(m, cfg, tr.x[t], tr.w[t]).iterations for t in range(steps)])
    shifted = np.zeros(steps, dtype=int)
    for t in range(1, steps):
        prev = solve_finite_horizon(m, cfg, tr.x[t - 1], tr.w[t - 1])
        warm = shift_warm_start(prev, law, m, u_box=box)
        shifted[t] = solve_finite_horizon(m, cfg, tr.x[t], tr.w[t], warm=warm).iterations
    label = "unconstrained" if box is None else f"|u| <= {box[1]:g}"
    print(label)
    print(f"  run start <= cold:     {np.mean(used <= cold):.1%} of steps")
    print(f"  plain shift <= cold:   {np.mean(shifted[1:] <= cold[1:]):.1%} of steps")
    print(f"  total iterations: run {used.sum()}, plain shift {shifted.sum()}, cold {cold.sum()}")

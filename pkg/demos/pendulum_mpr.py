"""Receding-horizon regulation of the pendulum from a large offset.

Starting at x0 = (2, 0), where both polynomial laws diverge, MPR with a
four-step horizon and the quartic terminal cost tracks the reference.  With
the control limited to |u| <= 2 it still settles into a bounded error; an
exact tracker would need controls up to about 5.8, so some error remains.

Run with ``python3 demos/pendulum_mpr.py``.  Takes about ten seconds.
"""

import time

import numpy as np

from mprlab.model import SystemModel
from mprlab.mpr import MprConfig, mpr_run
from mprlab.scenarios import scenario_pendulum
from mprlab.sim import steady_state_metrics
from mprlab.terminal import synthesize_terminal

m = SystemModel.from_scenario(scenario_pendulum())
law = synthesize_terminal(m, 4)

for box in (None, (-2.0, 2.0)):
    t0 = time.perf_counter()
    run = mpr_run(m, MprConfig(4, law, u_box=box), (2.0, 0.0), (1.0, 0.0), 96)
    elapsed = time.perf_counter() - t0
    tr = run.trajectory
    met = steady_state_metrics(tr)
    label = "unconstrained" if box is None else f"|u| <= {box[1]:g}"
    print(f"{label}: {elapsed:.1f} s, avg |y| = {met.steady_state_avg_error:.3g}, max |u| = {met.max_abs_u:.3g}")
    print("  |y| every 8 steps:", np.array2string(np.abs(tr.y[::8]), precision=3))
    iters = [d.iterations for d in run.diagnostics]
    print(f"  solver iterations per step: median {int(np.median(iters))}, max {max(iters)}")

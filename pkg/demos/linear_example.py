"""Linear worked example: regulator equations, Riccati solve and MPR.

The plant is a chain of integrators with a second input path, and the
exosystem is a rotation.  Everything here is exact, so the finite-horizon
controller reproduces the infinite-horizon feedback for every horizon.

Run with ``python3 demos/linear_example.py``.
"""

import numpy as np

from mprlab.model import SystemModel, linearize, structure_report
from mprlab.mpr import MprConfig, mpr_run
from mprlab.regulation import solve_francis_linear
from mprlab.scenarios import scenario_linear_example
from mprlab.sim import rollout_polynomial
from mprlab.terminal import synthesize_terminal

np.set_printoptions(precision=4, suppress=True)

m = SystemModel.from_scenario(scenario_linear_example())
print(structure_report(m).summary())

# The tracking manifold x = T w and its feedforward u = L w.
T, L = solve_francis_linear(linearize(m))
print("T =\n", T)
print("L =", L)

# The terminal cost and feedback are quadratic/linear and exact here.
law = synthesize_terminal(m, 2)
print("P =\n", law.P)
print("K =", np.ravel(law.K))
print("pi(x, w) =\n" + law.piT.to_debug(law.names()))
print("kappa(x, w) =\n" + law.kappaT.to_debug(law.names()))

# MPR with any horizon gives the same closed loop as the explicit feedback.
x0, w0 = (0.5, -0.3, 0.2), (1.0, 0.0)
ref = rollout_polynomial(m, law, x0, w0, 20)
for horizon in (1, 2, 4):
    run = mpr_run(m, MprConfig(horizon, law), x0, w0, 20)
    gap = np.max(np.abs(run.trajectory.u - ref.u))
    print(f"T = {horizon}: max |u_mpr - u_feedback| = {gap:.2e}, final |y| = {abs(run.trajectory.y[-1]):.2e}")

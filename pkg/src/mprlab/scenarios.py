"""The two worked examples as built-in scenarios."""

from __future__ import annotations

from .dsl import ScenarioSpec, parse_scenario

__all__ = ["LINEAR_EXAMPLE", "PENDULUM", "scenario_linear_example", "scenario_pendulum", "builtin"]

LINEAR_EXAMPLE = """\
# Triple-integrator-like plant tracking a rotation exosystem.
[dims]
n = 3
k = 2

[plant]
f1 = x2
f2 = x3 + u
f3 = 0.5*u
h = x1 - w1

[exo]
a1 = -w2
a2 = w1

[init]
x0 = 0, 0, 0
w0 = 1, 0

[mpr]
horizon = 4
degree = 2
umax = none
"""

PENDULUM = """\
# Asymmetrically damped pendulum, Lie-discretized, tracking a period-8 signal.
[dims]
n = 2
k = 2

[plant]
continuous = true
ts = pi/6
G = 0, 1
f1 = x2
f2 = -sin(x1) - (x2 + x2^2 + x2^3) + u
h = x1 - w1

[exo]
a1 = cos(pi/4)*w1 - sin(pi/4)*w2
a2 = sin(pi/4)*w1 + cos(pi/4)*w2

[init]
x0 = 0, 0
w0 = 1, 0

[mpr]
horizon = 4
degree = 4
umax = none
"""


def scenario_linear_example() -> ScenarioSpec:
    return parse_scenario(LINEAR_EXAMPLE, name="linear")


def scenario_pendulum() -> ScenarioSpec:
    return parse_scenario(PENDULUM, name="pendulum")


def builtin(name: str) -> ScenarioSpec:
    """Look up a built-in scenario by name (``linear`` or ``pendulum``)."""
    table = {"linear": scenario_linear_example, "pendulum": scenario_pendulum}
    if name not in table:
        raise KeyError(f"unknown built-in scenario {name!r}; choose from {sorted(table)}")
    return table[name]()

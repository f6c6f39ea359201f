"""Closed-loop rollouts of polynomial controllers and tracking metrics."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import MetricError
from .model import SystemModel
from .scenarios import scenario_linear_example, scenario_pendulum
from .terminal import TerminalLaw

__all__ = [
    "DIVERGENCE_BOUND",
    "STEADY_WINDOW",
    "Trajectory",
    "TrackingMetrics",
    "rollout_polynomial",
    "steady_state_metrics",
    "scenario_linear_example",
    "scenario_pendulum",
]

DIVERGENCE_BOUND = 1e3
# second half of a 96-step run; the exosystem period 8 divides its length
STEADY_WINDOW = (48, 96)


@dataclass(frozen=True)
class Trajectory:
    """Closed-loop record; row ``t`` holds ``x(t), w(t), u(t), y(t)``.

    ``y`` is recomputed from ``h`` on construction.  After a divergence the
    record stops at the first divergent step (that row is kept, with ``u`` and
    ``y`` set to nan).
    """

    x: np.ndarray
    w: np.ndarray
    u: np.ndarray
    y: np.ndarray
    diverged: bool = False
    diverged_at: int | None = None

    @classmethod
    def build(cls, m: SystemModel, x, w, u, diverged=False, diverged_at=None) -> Trajectory:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        w = np.atleast_2d(np.asarray(w, dtype=float))
        u = np.asarray(u, dtype=float).reshape(-1)
        if not (x.shape[0] == w.shape[0] == u.shape[0]):
            raise ValueError("x, w and u must have the same number of rows")
        with np.errstate(all="ignore"):
            y = m.output_batch(x, u, w) if len(u) else np.zeros(0)
        return cls(x, w, u, np.asarray(y, dtype=float), diverged, diverged_at)

    def __len__(self) -> int:
        return self.u.shape[0]

    @property
    def t(self) -> np.ndarray:
        return np.arange(len(self))

    def header(self) -> list[str]:
        n, k = self.x.shape[1], self.w.shape[1]
        return ["t"] + [f"x{i}" for i in range(1, n + 1)] + [f"w{j}" for j in range(1, k + 1)] + ["u", "y"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.header()) + "\n")
        for t in range(len(self)):
            vals = [*self.x[t], *self.w[t], self.u[t], self.y[t]]
            buf.write(str(t) + "," + ",".join(f"{v:.17g}" for v in vals) + "\n")
        return buf.getvalue()


@dataclass(frozen=True)
class TrackingMetrics:
    steady_state_avg_error: float
    max_abs_u: float
    settle_step: int | None
    window: tuple[int, int]

    def key_values(self) -> list[tuple[str, str]]:
        return [
            ("steady_state_avg_error", f"{self.steady_state_avg_error:.17g}"),
            ("max_abs_u", f"{self.max_abs_u:.17g}"),
            ("settle_step", "none" if self.settle_step is None else str(self.settle_step)),
            ("window", f"{self.window[0]}..{self.window[1]}"),
        ]

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.key_values())


def rollout_polynomial(
    m: SystemModel, law: TerminalLaw, x0, w0, steps: int, bound: float = DIVERGENCE_BOUND
) -> Trajectory:
    """Apply ``u = kappa^T(x, w)`` for ``steps`` steps with the true dynamics."""
    x = np.asarray(x0, dtype=float).copy()
    w = np.asarray(w0, dtype=float).copy()
    xs, ws, us = [], [], []
    for t in range(steps):
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > bound:
            xs.append(x)
            ws.append(w)
            us.append(np.nan)
            return Trajectory.build(m, xs, ws, us, True, t)
        u = float(law.feedback(x, w))
        xs.append(x)
        ws.append(w)
        us.append(u)
        with np.errstate(all="ignore"):
            try:
                x = m.step(x, u, w)
            except ArithmeticError:
                x = np.full_like(x, np.inf)
        w = m.exo(w)
    return Trajectory.build(m, xs, ws, us)


def steady_state_metrics(tr: Trajectory, window: tuple[int, int] = STEADY_WINDOW) -> TrackingMetrics:
    """Mean ``|y|`` over rows ``window[0] <= t < window[1]``, max ``|u|``, settle step."""
    lo, hi = window
    if not 0 <= lo < hi:
        raise MetricError(f"bad window {window}")
    if hi > len(tr):
        raise MetricError(f"window {window} exceeds the trajectory length {len(tr)}")
    if tr.diverged and tr.diverged_at is not None and tr.diverged_at < hi:
        raise MetricError(f"trajectory diverged at step {tr.diverged_at}, inside the window")
    ay = np.abs(tr.y)
    avg = float(np.mean(ay[lo:hi]))
    max_u = float(np.max(np.abs(tr.u))) if len(tr) else 0.0
    # first t after which |y| stays below 10x the window average
    above = np.nonzero(ay[:hi] >= 10.0 * avg)[0]
    if avg == 0.0:
        settle = 0 if not np.any(ay[:hi] > 0) else None
    else:
        settle = int(above[-1] + 1) if above.size else 0
    return TrackingMetrics(avg, max_u, settle, (lo, hi))

"""Receding-horizon regulation: finite-horizon single shooting with a terminal law.

At each time the controls ``u(t..t+T-1)`` minimize

    J = sum_s l(x(s), u(s), w(s)) + pi^T(x(t+T), w(t+T)) + mu * max(0, pi^T - c*)^2

with states obtained by rolling out the plant.  The gradient comes from one
backward adjoint pass; a projected limited-memory quasi-Newton method with an
Armijo backtracking search handles the control box.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DivergedRolloutError
from .model import SystemModel
from .sim import DIVERGENCE_BOUND, Trajectory
from .terminal import TerminalLaw

__all__ = [
    "MprConfig",
    "HorizonSolution",
    "StepDiagnostics",
    "MprRun",
    "shooting_objective",
    "solve_finite_horizon",
    "shift_warm_start",
    "terminal_rollout",
    "greedy_rollout",
    "mpr_run",
]


@dataclass(frozen=True)
class MprConfig:
    """Settings for the finite-horizon problem.

    Parameters
    ----------
    horizon : int
        Number of controls ``T``.
    terminal : TerminalLaw
        Terminal cost and feedback.
    u_box : (float, float), optional
        Control bounds.
    terminal_level : float, optional
        ``c*``; when set the end state is pushed into ``{pi^T <= c*}`` by a
        quadratic penalty.
    tol : float
        Projected-gradient norm at which the solver stops.
    max_iter : int
        Iteration cap per solve.  Cold solves far from the tracking manifold
        can need a few hundred iterations (long curved valleys).
    penalty, penalty_growth, penalty_escalations
        Initial penalty weight and its escalation schedule.
    memory : int
        Number of secant pairs kept by the quasi-Newton update.
    """

    horizon: int
    terminal: TerminalLaw
    u_box: tuple[float, float] | None = None
    terminal_level: float | None = None
    tol: float = 1e-8
    max_iter: int = 500
    penalty: float = 10.0
    penalty_growth: float = 10.0
    penalty_escalations: int = 3
    memory: int = 8

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.u_box is not None:
            lo, hi = self.u_box
            if not lo < hi:
                raise ValueError("u_box needs u_min < u_max")

    def clip(self, u):
        if self.u_box is None:
            return np.asarray(u, dtype=float)
        return np.clip(u, self.u_box[0], self.u_box[1])


@dataclass(frozen=True)
class HorizonSolution:
    controls: np.ndarray
    states: np.ndarray  # x(t+1..t+T)
    exo: np.ndarray  # w(t..t+T)
    cost: float  # running plus terminal, without penalty
    objective: float
    terminal_value: float
    terminal_ok: bool
    iterations: int
    grad_norm: float
    history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def first(self) -> float:
        return float(self.controls[0])


def _exo_sequence(m: SystemModel, w_t, T: int) -> np.ndarray:
    ws = [np.asarray(w_t, dtype=float)]
    for _ in range(T):
        ws.append(m.exo(ws[-1]))
    return np.array(ws)


def shooting_objective(
    m: SystemModel,
    cfg: MprConfig,
    x_t,
    ws: np.ndarray,
    u: np.ndarray,
    mu: float = 0.0,
    gradient: bool = True,
):
    """Objective ``J(u)`` and, optionally, its adjoint gradient.

    Returns ``(J, grad, info)``; ``info`` holds the states, the cost without
    penalty and the terminal value.  A rollout that overflows gives
    ``(inf, None, None)``.
    """
    law = cfg.terminal
    T = len(u)
    xs = [np.asarray(x_t, dtype=float)]
    cost = 0.0
    try:
        with np.errstate(all="ignore"):
            for s in range(T):
                x_next, l = m.stage_value(xs[-1], u[s], ws[s])
                cost += l
                xs.append(x_next)
            piT, dpi = law.cost_and_gradient(xs[T], ws[T])
    except (ArithmeticError, ValueError):
        return np.inf, None, None
    cost += piT
    excess = 0.0 if cfg.terminal_level is None else max(0.0, piT - cfg.terminal_level)
    J = cost + mu * excess**2
    if not np.isfinite(J):
        return np.inf, None, None
    xs = np.array(xs)
    info = {"states": xs, "cost": cost, "terminal_value": piT}
    if not gradient:
        return J, None, info
    lam = dpi * (1.0 + 2.0 * mu * excess)
    g = np.empty(T)
    with np.errstate(all="ignore"):
        for s in range(T - 1, -1, -1):
            fx, fu, lx, lu = m.stage_derivatives(xs[s], u[s], ws[s])
            g[s] = lu + fu @ lam
            lam = lx + fx.T @ lam
    if not np.all(np.isfinite(g)):
        return np.inf, None, None
    return J, g, info


def _projected_gradient(cfg: MprConfig, u, g) -> np.ndarray:
    if cfg.u_box is None:
        return g
    return u - cfg.clip(u - g)


def _two_loop(g, S, Y):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        alphas.append((rho, a))
        q -= a * y
    if S:
        q *= (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
    for (s, y), (rho, a) in zip(zip(S, Y), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def _minimize(fg: Callable, u0: np.ndarray, cfg: MprConfig):
    """Projected L-BFGS with Armijo backtracking.  Returns ``(u, J, g, iters, history)``.

    Besides the gradient test and the iteration cap the loop stops when the
    line search can no longer produce a step that changes ``u`` or lowers
    ``J`` in floating point (the attainable accuracy has been reached).
    """
    u = cfg.clip(u0)
    J, g, _ = fg(u, True)
    if not np.isfinite(J):
        raise DivergedRolloutError("the initial control sequence gives a non-finite objective")
    history = [J]
    S: list[np.ndarray] = []
    Y: list[np.ndarray] = []
    it = 0
    stalls = 0
    for it in range(1, cfg.max_iter + 1):
        pg = _projected_gradient(cfg, u, g)
        if np.linalg.norm(pg) <= cfg.tol:
            it -= 1
            break
        # variables held at a bound by the gradient stay fixed this iteration
        free = np.ones_like(u, dtype=bool)
        if cfg.u_box is not None:
            lo, hi = cfg.u_box
            free = ~(((u <= lo) & (g > 0)) | ((u >= hi) & (g < 0)))
        accepted = False
        for use_memory in (True, False):
            if use_memory and S:
                d = -_two_loop(np.where(free, g, 0.0), S, Y)
            else:
                d = -np.where(free, g, 0.0) / max(1.0, np.linalg.norm(g))
            d = np.where(free, d, 0.0)
            if d @ g >= 0:
                continue
            step = 1.0
            floor = 1e-13 * (1.0 + np.linalg.norm(u))
            for _ in range(60):
                trial = cfg.clip(u + step * d)
                if np.linalg.norm(trial - u) <= floor:
                    break
                J_t = fg(trial, False)[0]
                if np.isfinite(J_t) and J_t <= J + 1e-4 * (g @ (trial - u)):
                    g_t = fg(trial, True)[1]
                    accepted = g_t is not None
                    break
                step *= 0.5
            if accepted:
                break
            S.clear()
            Y.clear()
        if not accepted:
            break
        s_vec, y_vec = trial - u, g_t - g
        if s_vec @ y_vec > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            S.append(s_vec)
            Y.append(y_vec)
            if len(S) > cfg.memory:
                S.pop(0)
                Y.pop(0)
        stalls = stalls + 1 if J_t >= J else 0
        u, J, g = trial, J_t, g_t
        history.append(J)
        if stalls >= 3:
            break
    return u, J, g, it, history


def terminal_rollout(m: SystemModel, cfg: MprConfig, x_t, ws: np.ndarray) -> np.ndarray:
    """Controls from applying ``kappa^T`` along the predicted trajectory (clamped)."""
    law = cfg.terminal
    x = np.asarray(x_t, dtype=float)
    out = []
    with np.errstate(all="ignore"):
        for s in range(cfg.horizon):
            u = float(cfg.clip(law.feedback(x, ws[s])))
            if not np.isfinite(u):
                u = 0.0
            out.append(u)
            try:
                x = m.step(x, u, ws[s])
            except ArithmeticError:
                x = np.zeros_like(x)
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_BOUND:
                x = np.zeros_like(x)
    return np.array(out)


def greedy_rollout(m: SystemModel, cfg: MprConfig, x_t, ws: np.ndarray, span: float = 50.0, grid: int = 401) -> np.ndarray:
    """Controls minimizing the stage cost ``l(x(s), u, w(s))`` one step at a time.

    Each stage scans a grid over the control box (or ``[-span, span]``) and
    refines the best cell by golden-section search.  Because ``l`` contains
    ``h^(r)``, this steers ``y(s + r)`` towards zero and keeps the rollout
    near the tracking manifold when the terminal feedback overshoots.
    """
    lo, hi = cfg.u_box if cfg.u_box is not None else (-span, span)
    cand = np.linspace(lo, hi, grid)
    step = cand[1] - cand[0]
    g = (np.sqrt(5.0) - 1.0) / 2.0
    x = np.asarray(x_t, dtype=float)
    out = []
    with np.errstate(all="ignore"):
        for s in range(cfg.horizon):
            X = np.broadcast_to(x, (grid, x.size))
            W = np.broadcast_to(ws[s], (grid, ws.shape[1]))
            vals = np.where(np.isfinite(v := m.running_cost_batch(X, cand, W)), v, np.inf)
            u = float(cand[int(np.argmin(vals))])
            a, b = max(lo, u - step), min(hi, u + step)
            for _ in range(40):
                c, d = b - g * (b - a), a + g * (b - a)
                if m.running_cost_value(x, c, ws[s]) < m.running_cost_value(x, d, ws[s]):
                    b = d
                else:
                    a = c
            u = 0.5 * (a + b)
            out.append(u)
            try:
                x = m.step(x, u, ws[s])
            except ArithmeticError:
                break
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_BOUND:
                break
    out += [0.0] * (cfg.horizon - len(out))
    return cfg.clip(np.array(out))


def solve_finite_horizon(
    m: SystemModel,
    cfg: MprConfig,
    x_t,
    w_t,
    warm: Sequence[float] | None = None,
    exo: np.ndarray | None = None,
    compare_cold: bool = False,
) -> HorizonSolution:
    """Solve the ``T``-step problem from ``(x_t, w_t)``.

    ``exo`` optionally supplies ``w(t..t+T)``; by default it is generated by
    iterating the exosystem.  Without ``warm`` the start is whichever of the
    terminal feedback rollout, the greedy stage-cost rollout and zeros has the
    lowest objective.  With ``compare_cold`` the warm start competes with
    those candidates instead of being used unconditionally.
    """
    T = cfg.horizon
    x_t = np.asarray(x_t, dtype=float)
    if not (np.all(np.isfinite(x_t)) and np.all(np.isfinite(w_t))):
        raise ValueError("x_t and w_t must be finite")
    ws = _exo_sequence(m, w_t, T) if exo is None else np.asarray(exo, dtype=float)
    if ws.shape[0] != T + 1:
        raise ValueError(f"exo sequence must have {T + 1} rows")
    starts = []
    if warm is not None:
        u0 = np.asarray(warm, dtype=float)
        if u0.shape != (T,):
            raise ValueError(f"warm start must have length {T}")
        starts.append(u0)
    if warm is None or compare_cold:
        # far from the manifold kappa^T can overshoot, and on a strongly
        # nonlinear plant so can u = 0; start from the best finite candidate
        starts += [terminal_rollout(m, cfg, x_t, ws), greedy_rollout(m, cfg, x_t, ws), cfg.clip(np.zeros(T))]
    if len(starts) > 1:
        values = [shooting_objective(m, cfg, x_t, ws, c, gradient=False)[0] for c in starts]
        u0 = starts[int(np.argmin(values))]
    else:
        u0 = starts[0]

    mu = cfg.penalty if cfg.terminal_level is not None else 0.0
    iters = 0
    history: list[float] = []
    for attempt in range(cfg.penalty_escalations + 1):
        def fg(u, grad, mu=mu):
            return shooting_objective(m, cfg, x_t, ws, u, mu, gradient=grad)

        u, J, g, it, hist = _minimize(fg, u0, cfg)
        iters += it
        history = hist
        _, _, info = fg(u, False)
        ok = cfg.terminal_level is None or info["terminal_value"] <= cfg.terminal_level * (1 + 1e-9)
        if ok or attempt == cfg.penalty_escalations:
            break
        mu *= cfg.penalty_growth
        u0 = u
    u = cfg.clip(u)
    return HorizonSolution(
        controls=u,
        states=info["states"][1:],
        exo=ws,
        cost=float(info["cost"]),
        objective=float(J),
        terminal_value=float(info["terminal_value"]),
        terminal_ok=bool(ok),
        iterations=iters,
        grad_norm=float(np.linalg.norm(_projected_gradient(cfg, u, g))),
        history=tuple(history),
    )


def shift_warm_start(
    prev: HorizonSolution,
    law: TerminalLaw,
    m: SystemModel,
    w_next=None,
    u_box: tuple[float, float] | None = None,
) -> np.ndarray:
    """Drop the first control and append ``kappa^T(x*(t+T), w(t+T))``, clamped to ``u_box``.

    ``w_next`` is ``w(t+1)``; when omitted the exosystem values stored in
    ``prev`` are used.
    """
    T = len(prev.controls)
    if w_next is None:
        w_end = prev.exo[T]
    else:
        w_end = np.asarray(w_next, dtype=float)
        for _ in range(T - 1):
            w_end = m.exo(w_end)
    u_new = float(law.feedback(prev.states[-1], w_end))
    if not np.isfinite(u_new):
        u_new = 0.0
    if u_box is not None:
        u_new = float(np.clip(u_new, u_box[0], u_box[1]))
    return np.concatenate([prev.controls[1:], [u_new]])


@dataclass(frozen=True)
class StepDiagnostics:
    step: int
    iterations: int
    grad_norm: float
    objective: float
    terminal_value: float


@dataclass(frozen=True)
class MprRun:
    """Closed-loop MPR record."""

    trajectory: Trajectory
    diagnostics: tuple[StepDiagnostics, ...]
    diverged: bool = False
    diverged_at: int | None = None

    def diagnostics_csv(self) -> str:
        buf = io.StringIO()
        buf.write("step,iterations,grad_norm,objective,terminal_value\n")
        for d in self.diagnostics:
            buf.write(
                f"{d.step},{d.iterations},{d.grad_norm:.17g},{d.objective:.17g},{d.terminal_value:.17g}\n"
            )
        return buf.getvalue()


def mpr_run(
    m: SystemModel,
    cfg: MprConfig,
    x0,
    w0,
    steps: int,
    exo_source: Callable[[int], np.ndarray] | None = None,
) -> MprRun:
    """Receding-horizon loop for ``steps`` steps.

    ``exo_source(t)``, when given, returns ``w(t)`` (the horizon reads
    ``w(t..t+T)`` from it); otherwise the exosystem is iterated.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    law = cfg.terminal
    x = np.asarray(x0, dtype=float).copy()
    w = np.asarray(w0, dtype=float).copy()
    xs, ws, us, diags = [], [], [], []
    warm = None
    for t in range(steps):
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_BOUND:
            return _finish(m, xs, ws, us, diags, x, w, t)
        exo = None
        if exo_source is not None:
            exo = np.array([exo_source(t + s) for s in range(cfg.horizon + 1)])
            w = exo[0]
        sol = None
        for start in (warm, None):
            try:
                sol = solve_finite_horizon(m, cfg, x, w, warm=start, exo=exo, compare_cold=True)
                break
            except DivergedRolloutError:
                continue
        if sol is None:
            return _finish(m, xs, ws, us, diags, x, w, t)
        u = sol.first
        xs.append(x)
        ws.append(w)
        us.append(u)
        diags.append(StepDiagnostics(t, sol.iterations, sol.grad_norm, sol.objective, sol.terminal_value))
        with np.errstate(all="ignore"):
            try:
                x = m.step(x, u, w)
            except ArithmeticError:
                x = np.full_like(x, np.inf)
        w_next = m.exo(w) if exo_source is None else np.asarray(exo_source(t + 1), dtype=float)
        warm = shift_warm_start(sol, law, m, u_box=cfg.u_box)
        w = w_next
    return MprRun(Trajectory.build(m, xs, ws, us), tuple(diags))


def _finish(m, xs, ws, us, diags, x, w, t) -> MprRun:
    xs, ws, us = xs + [x], ws + [w], us + [np.nan]
    return MprRun(Trajectory.build(m, xs, ws, us, True, t), tuple(diags), True, t)

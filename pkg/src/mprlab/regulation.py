"""Francis equations and their higher-degree (FBI) corrections.

The tracking manifold ``x = theta(w)`` and feedforward ``u = alpha(w)``
satisfy

    f(theta(w), alpha(w), w) = theta(a(w)),     h(theta(w), alpha(w), w) = 0.

Degree one gives the Francis (Sylvester-type) equations for ``T, L``.  Each
further degree ``d`` is a square linear system on the coefficients of the
degree-``d`` monomials in ``w``: the unknown ``theta^[d]`` enters through
``F``, ``H`` and through ``theta^[d](A w)``; everything else is already known
from lower degrees.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ResonanceError
from .model import LinearData, SystemModel, linearize
from .poly import PolyVector, TruncatedPoly, monomials, variables

__all__ = [
    "FbiSolution",
    "solve_francis_linear",
    "solve_fbi_homogeneous",
    "solve_fbi",
    "fbi_graded_residuals",
    "fbi_residual_order",
    "francis_residual",
]

NEAR_RESONANCE_COND = 1e8


@dataclass(frozen=True)
class FbiSolution:
    """Series solution ``theta(w) = T w + ...``, ``alpha(w) = L w + ...`` to degree ``degree``.

    ``theta`` and ``alpha`` live in ``w`` space (arity ``k``) at cap ``cap``.
    """

    T: np.ndarray
    L: np.ndarray
    theta: PolyVector
    alpha: TruncatedPoly
    degree: int
    cap: int
    conditions: tuple[float, ...] = field(default=())

    @property
    def theta_hi(self) -> PolyVector:
        return PolyVector(p - p.grade(1) for p in self.theta)

    @property
    def alpha_hi(self) -> TruncatedPoly:
        return self.alpha - self.alpha.grade(1)

    def truncated(self, degree: int) -> FbiSolution:
        """The same solution cut back to ``degree``."""
        degree = min(degree, self.degree)
        return FbiSolution(
            self.T,
            self.L,
            self.theta.truncate(degree),
            self.alpha.truncate(degree),
            degree,
            self.cap,
            self.conditions[:degree],
        )

    def with_cap(self, cap: int) -> FbiSolution:
        return FbiSolution(
            self.T, self.L, self.theta.with_cap(cap), self.alpha.with_cap(cap),
            min(self.degree, cap), cap, self.conditions,
        )

    def to_debug(self) -> str:
        k = self.theta.arity
        names = [f"w{j}" for j in range(1, k + 1)]
        blocks = [f"# FBI series solution, degree {self.degree}"]
        for i, p in enumerate(self.theta, start=1):
            blocks.append(f"[theta {i}]\n{p.to_debug(names)}")
        blocks.append(f"[alpha]\n{self.alpha.to_debug(names)}")
        return "\n".join(blocks) + "\n"


def _solve_graded(M: np.ndarray, rhs: np.ndarray, what: str) -> tuple[np.ndarray, float]:
    """Dense LU solve with resonance detection; returns (solution, condition number)."""
    cond = float(np.linalg.cond(M)) if M.size else 1.0
    if not np.isfinite(cond) or cond > 1e14:
        raise ResonanceError(f"{what}: graded system is singular (cond = {cond:.3g})")
    if cond > NEAR_RESONANCE_COND:
        warnings.warn(f"{what}: near resonance, condition number {cond:.3g}", stacklevel=3)
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise ResonanceError(f"{what}: graded system is singular") from exc
    return sol, cond


def francis_residual(ld: LinearData, T: np.ndarray, L: np.ndarray) -> float:
    """``||F T + G L - T A + B|| + ||H T + J L + D||`` (Frobenius)."""
    T = np.asarray(T, dtype=float)
    L = np.asarray(L, dtype=float).reshape(-1)
    top = ld.F @ T + np.outer(ld.G, L) - T @ ld.A + ld.B
    bottom = ld.H @ T + ld.J * L + ld.D
    return float(np.linalg.norm(top) + np.linalg.norm(bottom))


def solve_francis_linear(ld: LinearData) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``[F G; H J][T; L] - [T; 0] A = -[B; D]`` for ``T`` (n x k) and ``L`` (k,).

    The matrix equation is vectorized column-major:
    ``vec(F T - T A) = (I_k (x) F - A' (x) I_n) vec(T)``.
    """
    F, G, H, A = ld.F, ld.G, ld.H, ld.A
    n, k = F.shape[0], A.shape[0]
    Ik, In = np.eye(k), np.eye(n)
    top = np.hstack([np.kron(Ik, F) - np.kron(A.T, In), np.kron(Ik, G.reshape(n, 1))])
    bottom = np.hstack([np.kron(Ik, H.reshape(1, n)), ld.J * Ik])
    M = np.vstack([top, bottom])
    rhs = -np.concatenate([ld.B.flatten(order="F"), ld.D])
    sol, _ = _solve_graded(M, rhs, "Francis equations")
    T = sol[: n * k].reshape((n, k), order="F")
    L = sol[n * k :]
    res = francis_residual(ld, T, L)
    if res > 1e-10 * max(1.0, np.linalg.norm(M)):
        raise ResonanceError(f"Francis solution residual {res:.3g} too large")
    return T, L


def _linear_solution(m: SystemModel, cap: int) -> FbiSolution:
    ld = linearize(m)
    T, L = solve_francis_linear(ld)
    k = m.dims.k
    theta = PolyVector(TruncatedPoly.linear(k, cap, row) for row in T)
    alpha = TruncatedPoly.linear(k, cap, L)
    return FbiSolution(T, L, theta, alpha, 1, cap)


def _fbi_defect(m: SystemModel, theta: PolyVector, alpha: TruncatedPoly) -> tuple[PolyVector, TruncatedPoly]:
    """Series of ``f(theta, alpha, w) - theta(a(w))`` and ``h(theta, alpha, w)``."""
    cap = theta.cap
    tay = m.taylor(cap)
    inner = list(theta) + [alpha] + list(variables(m.dims.k, cap))
    f_on = tay.f.compose(inner)
    theta_a = theta.compose(tay.a)
    return f_on - theta_a, tay.h.compose(inner)


def solve_fbi_homogeneous(
    m: SystemModel, sol: FbiSolution, d: int
) -> tuple[PolyVector, TruncatedPoly, float]:
    """Degree-``d`` corrections ``(theta^[d], alpha^[d])`` given ``sol`` through ``d-1``.

    Returns the homogeneous pair and the condition number of the graded
    system.  Raises :class:`ResonanceError` when the system is singular.
    """
    if d < 2:
        raise ValueError("homogeneous corrections start at degree 2")
    if sol.degree != d - 1:
        raise ValueError(f"partial solution must be complete through degree {d - 1}")
    if d > sol.cap:
        raise ValueError(f"degree {d} exceeds the series cap {sol.cap}")
    ld = linearize(m)
    n, k, cap = m.dims.n, m.dims.k, sol.cap
    mons = monomials(k, d)
    N = len(mons)

    # theta^[d](A w) as a linear map on degree-d coefficient vectors
    Aw = PolyVector(TruncatedPoly.linear(k, cap, row) for row in ld.A)
    C = np.empty((N, N))
    for j, mono in enumerate(mons):
        C[:, j] = TruncatedPoly(k, cap, {mono: 1.0}).compose(Aw).grade_coefficients(d)

    IN = np.eye(N)
    top = np.hstack([np.kron(ld.F, IN) - np.kron(np.eye(n), C), np.kron(ld.G.reshape(n, 1), IN)])
    bottom = np.hstack([np.kron(ld.H.reshape(1, n), IN), ld.J * IN])
    M = np.vstack([top, bottom])

    rf, rh = _fbi_defect(m, sol.theta, sol.alpha)
    rhs = -np.concatenate([p.grade_coefficients(d) for p in rf] + [rh.grade_coefficients(d)])
    x, cond = _solve_graded(M, rhs, f"FBI equations at degree {d}")
    theta_d = PolyVector(
        TruncatedPoly.from_grade(k, cap, d, x[i * N : (i + 1) * N]) for i in range(n)
    )
    alpha_d = TruncatedPoly.from_grade(k, cap, d, x[n * N :])
    return theta_d, alpha_d, cond


def solve_fbi(m: SystemModel, degree: int, cap: int | None = None) -> FbiSolution:
    """Series solution of the FBI equations through ``degree``."""
    cap = degree if cap is None else cap
    if degree < 1 or cap < degree:
        raise ValueError("need 1 <= degree <= cap")
    sol = _linear_solution(m, cap)
    conds = [1.0]
    for d in range(2, degree + 1):
        theta_d, alpha_d, cond = solve_fbi_homogeneous(m, sol, d)
        conds.append(cond)
        sol = FbiSolution(
            sol.T, sol.L, sol.theta + theta_d, sol.alpha + alpha_d, d, cap, tuple(conds)
        )
    return sol


def fbi_graded_residuals(m: SystemModel, sol: FbiSolution) -> list[float]:
    """Largest coefficient of the FBI defect at each degree ``1..sol.degree``."""
    rf, rh = _fbi_defect(m, sol.theta, sol.alpha)
    out = []
    for d in range(1, sol.degree + 1):
        out.append(max(rf.grade(d).max_abs_coefficient(), rh.grade(d).max_abs_coefficient()))
    return out


def fbi_residual_order(
    m: SystemModel,
    sol: FbiSolution,
    samples: int = 16,
    eps: tuple[float, ...] = (1e-1, 1e-2),
    seed: int = 0,
) -> float:
    """Max over directions and ``eps`` of ``||FBI residual(eps w)|| / eps^(D+1)``.

    The residual uses the true ``f``, ``h``, ``a`` and the series ``theta``,
    ``alpha``; a bounded ratio certifies vanishing to order ``D + 1``.
    """
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(samples, m.dims.k))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    worst = 0.0
    for e in eps:
        for wd in dirs:
            w = e * wd
            x = sol.theta(w)
            u = float(sol.alpha(w))
            r1 = m.step(x, u, w) - sol.theta(m.exo(w))
            r2 = m.output(x, u, w)
            worst = max(worst, float(np.hypot(np.linalg.norm(r1), r2)) / e ** (sol.degree + 1))
    return worst

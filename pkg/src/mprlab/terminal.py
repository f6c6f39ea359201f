"""Terminal cost and feedback for the finite-horizon regulation problem.

In transverse coordinates ``z = x - theta(w)``, ``v = u - alpha(w)`` the
infinite-horizon cost ``rho(z, w)`` and feedback ``beta(z, w)`` satisfy

    rho(z, w)  = min_v  rho(fbar(z, v, w), a(w)) + lbar(z, v, w)
    beta(z, w) = argmin_v (same)

The quadratic/linear parts come from a discrete Riccati equation.  Higher
degrees are solved grade by grade (Al'brekht's method): the degree ``d+1``
part of ``rho`` solves a discrete Lyapunov-type equation driven by
``(F + G K) z`` and ``A w``, and the degree ``d`` part of ``beta`` then
follows linearly from stationarity in ``v``.  The results are mapped back to
``(x, w)`` to give ``pi^T`` and ``kappa^T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dsl import compile_exprs, expr_jet, poly_to_expr
from .errors import ResonanceError, SynthesisError
from .model import LinearData, SystemModel, eig_small, linearize, require_structure
from .poly import PolyVector, TruncatedPoly, monomials, variables
from .regulation import FbiSolution, solve_fbi

__all__ = [
    "QuadCost",
    "RiccatiSolution",
    "TerminalLaw",
    "TransverseSeries",
    "transverse_quadratic_cost",
    "solve_dare",
    "transverse_series",
    "albrekht_correct",
    "assemble_terminal",
    "synthesize_terminal",
    "estimate_lyapunov_region",
    "dp_residual_ratios",
    "dp_residual_order",
]


@dataclass(frozen=True)
class QuadCost:
    """``z'Qz + 2 z'S v + R v^2``."""

    Q: np.ndarray
    S: np.ndarray
    R: float

    def joint(self) -> np.ndarray:
        n = self.Q.shape[0]
        M = np.zeros((n + 1, n + 1))
        M[:n, :n] = self.Q
        M[:n, n] = M[n, :n] = self.S
        M[n, n] = self.R
        return M


@dataclass(frozen=True)
class RiccatiSolution:
    P: np.ndarray
    K: np.ndarray
    closed_loop: np.ndarray
    residual: float
    iterations: int

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(self.closed_loop))) if self.closed_loop.size else 0.0


def transverse_quadratic_cost(ld: LinearData, r: int) -> QuadCost:
    """Quadratic part of ``|y(t)|^2 + |y(t+r)|^2`` in ``(z, v)``."""
    if abs(ld.J) > 1e-12:
        raise SynthesisError("the transverse quadratic cost needs J = 0 (relative degree r > 0)")
    HFr = ld.H @ np.linalg.matrix_power(ld.F, r)
    g = float(ld.H @ np.linalg.matrix_power(ld.F, r - 1) @ ld.G)
    Q = np.outer(ld.H, ld.H) + np.outer(HFr, HFr)
    return QuadCost(Q=Q, S=HFr * g, R=g * g)


def _riccati_map(P, F, G, Q, S, R):
    """One value-iteration step; returns ``(P_next, K)``.

    Written in closed-loop form, ``(F+GK)'P(F+GK) + [I; K]'W[I; K]``, which
    keeps round-off from growing along unstable open-loop modes.
    """
    K = -(G @ P @ F + S) / (R + G @ P @ G)
    Acl = F + np.outer(G, K)
    return Acl.T @ P @ Acl + Q + np.outer(S, K) + np.outer(K, S) + R * np.outer(K, K), K


def _dare_iterate(F, G, Q, S, R, Ft, Qt, tol, max_iter):
    """Structured doubling on the cross-term-free problem, value iteration as fallback."""
    n = F.shape[0]
    Ak, Gk, Hk = Ft, np.outer(G, G) / R, Qt
    I = np.eye(n)
    it = 0
    P = None
    for it in range(1, max_iter + 1):
        W = I + Gk @ Hk
        try:
            WA = np.linalg.solve(W, Ak)
            WG = np.linalg.solve(W, Gk)
        except np.linalg.LinAlgError:
            break
        H_next = Hk + Ak.T @ Hk @ WA
        G_next = Gk + Ak @ WG @ Ak.T
        A_next = Ak @ WA
        done = np.linalg.norm(H_next - Hk) <= tol * max(1.0, np.linalg.norm(H_next))
        Ak, Gk, Hk = A_next, G_next, H_next
        if not np.all(np.isfinite(Hk)):
            break
        if done:
            P = Hk
            break
    if P is None:
        # slow but dependable fallback
        P = np.array(Q, dtype=float)
        for it in range(1, 100_000):
            P_next, _ = _riccati_map(P, F, G, Q, S, R)
            if not np.all(np.isfinite(P_next)):
                raise SynthesisError("Riccati iteration diverged (is (F, G) stabilizable?)")
            if np.linalg.norm(P_next - P) <= tol * max(1.0, np.linalg.norm(P_next)):
                P = P_next
                break
            P = P_next
    return P, it


def solve_dare(ld: LinearData, qc: QuadCost, tol: float = 1e-12, max_iter: int = 200) -> RiccatiSolution:
    """Discrete Riccati equation with cross term, by doubling then value iteration.

    The cross term is removed first (``F~ = F - G S'/R``, ``Q~ = Q - S S'/R``),
    the structured doubling iteration squares the horizon each sweep, and a
    few plain Riccati-map sweeps polish the fixed point.
    """
    F, G, Q, S, R = ld.F, ld.G, qc.Q, qc.S, float(qc.R)
    if R <= 0:
        raise SynthesisError("R must be positive")
    Ft = F - np.outer(G, S) / R
    Qt = Q - np.outer(S, S) / R
    # an unstabilizable problem drives P towards overflow; the checks below
    # turn that into a SynthesisError
    with np.errstate(all="ignore"):
        P, it = _dare_iterate(F, G, Q, S, R, Ft, Qt, tol, max_iter)
        P = 0.5 * (P + P.T)
        for _ in range(5):
            P_next, _ = _riccati_map(P, F, G, Q, S, R)
            P_next = 0.5 * (P_next + P_next.T)
            if np.linalg.norm(P_next - P) <= tol * max(1.0, np.linalg.norm(P)):
                P = P_next
                break
            P = P_next
        gpg = R + G @ P @ G
        K = -(G @ P @ F + S) / gpg + 0.0  # no negative zeros in reports
        residual = float(np.linalg.norm(P - (F.T @ P @ F - gpg * np.outer(K, K) + Q)))
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(K))):
        raise SynthesisError("Riccati iteration diverged (is (F, G) stabilizable?)")
    closed = eig_small(F + np.outer(G, K))
    if not residual <= 1e-9 * max(1.0, np.linalg.norm(P)):
        raise SynthesisError(f"Riccati residual {residual:.3g} too large (is (F, G) stabilizable?)")
    if closed.size and np.max(np.abs(closed)) >= 1.0:
        raise SynthesisError(
            "closed loop F + G K is not stable: check the stabilizable and "
            "linearly_minimum_phase flags"
        )
    return RiccatiSolution(P=P, K=K, closed_loop=closed, residual=residual, iterations=it)


# -- transverse series --------------------------------------------------------


@dataclass(frozen=True)
class TransverseSeries:
    """Transverse dynamics and cost as series in ``(z, v, w)``, plus ``a`` in ``(z, w)``.

    ``fbar`` and ``lbar`` have their pure-``w`` parts removed; those are the
    truncation residue of the FBI series (order ``degree + 1``) and would
    otherwise spoil ``fbar(0, 0, w) = 0``.
    """

    fbar: PolyVector
    lbar: TruncatedPoly
    a_zvw: PolyVector
    a_zw: PolyVector
    n: int
    k: int
    cap: int
    pure_w_residue: float


def _drop_pure_w(p: TruncatedPoly, n_front: int) -> TruncatedPoly:
    terms = {e: c for e, c in p.terms.items() if any(e[:n_front])}
    return TruncatedPoly(p.arity, p.cap, terms)


def transverse_series(m: SystemModel, fbi: FbiSolution, cap: int) -> TransverseSeries:
    n, k = m.dims.n, m.dims.k
    if fbi.degree < cap - 1:
        raise ValueError(f"cost degree {cap} needs the FBI series through degree {cap - 1}")
    tay = m.taylor(cap)
    theta, alpha = fbi.theta.with_cap(cap), fbi.alpha.with_cap(cap)
    Z = variables(n + 1 + k, cap)
    W = [Z[n + 1 + j] for j in range(k)]
    theta_e = theta.compose(W)
    alpha_e = alpha.compose(W)
    inner = [Z[i] + theta_e[i] for i in range(n)] + [Z[n] + alpha_e] + W
    theta_a = theta.compose(tay.a).compose(W)
    fbar_full = tay.f.compose(inner) - theta_a
    lbar_full = expr_jet(m.running_cost, cap, m.dims).compose(inner)
    fbar = fbar_full.map(lambda p: _drop_pure_w(p, n + 1))
    lbar = _drop_pure_w(lbar_full, n + 1)
    residue = max((fbar_full - fbar).max_abs_coefficient(), (lbar_full - lbar).max_abs_coefficient())
    a_zvw = tay.a.compose(W)
    Zw = variables(n + k, cap)
    a_zw = tay.a.compose([Zw[n + j] for j in range(k)])
    return TransverseSeries(fbar, lbar, a_zvw, a_zw, n, k, cap, residue)


def _quadratic(P: np.ndarray, arity: int, cap: int) -> TruncatedPoly:
    n = P.shape[0]
    z = variables(arity, cap)
    out = TruncatedPoly.zero(arity, cap)
    for i in range(n):
        for j in range(n):
            if P[i, j] != 0.0:
                out = out + z[i] * z[j] * float(P[i, j])
    return out


def _linear_z(K: np.ndarray, arity: int, cap: int) -> TruncatedPoly:
    c = np.zeros(arity)
    c[: K.size] = K
    return TruncatedPoly.linear(arity, cap, c)


def albrekht_correct(
    m: SystemModel,
    fbi: FbiSolution,
    ric: RiccatiSolution,
    d: int,
    lower: list[tuple[TruncatedPoly, TruncatedPoly]] | None = None,
    series: TransverseSeries | None = None,
) -> tuple[TruncatedPoly, TruncatedPoly]:
    """Degree ``d + 1`` cost and degree ``d`` feedback corrections ``(rho, beta)``.

    ``lower`` holds the corrections already found for degrees ``2..d-1`` (as
    returned by earlier calls).  Both results live in ``(z, w)`` space.
    """
    lower = list(lower or [])
    if d < 2 or len(lower) != d - 2:
        raise ValueError(f"degree {d} needs corrections for degrees 2..{d - 1}")
    n, k = m.dims.n, m.dims.k
    cap = d + 1 if series is None else series.cap
    if series is None:
        series = transverse_series(m, fbi, cap)
    if cap < d + 1:
        raise ValueError("series cap too small for this degree")
    ld = linearize(m)
    P, K = ric.P, ric.K

    rho = _quadratic(P, n + k, cap)
    beta = _linear_z(K, n + k, cap)
    for r_j, b_j in lower:
        rho = rho + r_j.with_cap(cap)
        beta = beta + b_j.with_cap(cap)

    Zw = variables(n + k, cap)
    at_beta = list(Zw[:n]) + [beta] + list(Zw[n:])

    # rho^[d+1](z, w) - rho^[d+1]((F+GK) z, A w) = grade_{d+1} of the known part
    S_low = rho.compose(list(series.fbar) + list(series.a_zvw)) + series.lbar
    rhs_poly = S_low.compose(at_beta).grade(d + 1)

    Fc = ld.F + np.outer(ld.G, K)
    lin = [TruncatedPoly.linear(n + k, cap, np.concatenate([row, np.zeros(k)])) for row in Fc]
    lin += [TruncatedPoly.linear(n + k, cap, np.concatenate([np.zeros(n), row])) for row in ld.A]
    mons = monomials(n + k, d + 1)
    keep = [i for i, e in enumerate(mons) if any(e[:n])]
    N = len(keep)
    M = np.empty((N, N))
    for col, i in enumerate(keep):
        mono = TruncatedPoly(n + k, cap, {mons[i]: 1.0})
        image = mono - mono.compose(lin)
        M[:, col] = image.grade_coefficients(d + 1)[keep]
    rhs = rhs_poly.grade_coefficients(d + 1)[keep]
    if N:
        cond = float(np.linalg.cond(M))
        if not np.isfinite(cond) or cond > 1e14:
            raise ResonanceError(f"graded cost equation at degree {d + 1} is singular")
        sol = np.linalg.solve(M, rhs)
    else:
        sol = np.zeros(0)
    coeffs = np.zeros(len(mons))
    coeffs[keep] = sol
    rho_new = TruncatedPoly.from_grade(n + k, cap, d + 1, coeffs)

    # stationarity in v at degree d fixes beta^[d]
    rho = rho + rho_new
    S_full = rho.compose(list(series.fbar) + list(series.a_zvw)) + series.lbar
    dS = S_full.partial(n).compose(at_beta).grade(d)
    qc = transverse_quadratic_cost(ld, m.relative_degree)
    beta_new = dS * (-1.0 / (2.0 * (qc.R + ld.G @ P @ ld.G)))
    return rho_new, beta_new


@dataclass(frozen=True)
class TerminalLaw:
    """Terminal cost ``pi^T(x, w)`` and feedback ``kappa^T(x, w)``.

    Both are polynomials in ``(x, w)`` (arity ``n + k``, cap ``cost_degree``);
    ``kappa^T`` has degree ``cost_degree - 1``.
    """

    piT: TruncatedPoly
    kappaT: TruncatedPoly
    cost_degree: int
    n: int
    k: int
    P: np.ndarray
    K: np.ndarray
    T: np.ndarray
    L: np.ndarray
    theta: PolyVector
    alpha: TruncatedPoly
    closed_loop: np.ndarray
    level: float | None = None
    rho: TruncatedPoly | None = None
    beta: TruncatedPoly | None = None
    _fns: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self._fns is None:
            slots = [("x", i) for i in range(1, self.n + 1)] + [("w", j) for j in range(1, self.k + 1)]
            pi = poly_to_expr(self.piT, slots)
            grad = [poly_to_expr(self.piT.partial(i), slots) for i in range(self.n)]
            kappa = poly_to_expr(self.kappaT, slots)
            fns = (
                compile_exprs([pi] + grad),
                compile_exprs([pi], backend="numpy"),
                compile_exprs([kappa]),
                compile_exprs([kappa], backend="numpy"),
                compile_exprs(grad, backend="numpy"),
            )
            object.__setattr__(self, "_fns", fns)

    def with_level(self, level: float | None) -> TerminalLaw:
        return replace(self, level=level)

    @property
    def feedback_degree(self) -> int:
        return self.cost_degree - 1

    def _call(self, scalar_fn, batch_fn, x, w, index=0):
        x, w = np.asarray(x, dtype=float), np.asarray(w, dtype=float)
        if x.ndim == 1:
            return scalar_fn(x, 0.0, w)[index]
        out = batch_fn(x.T, 0.0, w.T)[index]
        return np.broadcast_to(out, x.shape[:1]).astype(float)

    def cost(self, x, w) -> float | np.ndarray:
        """``pi^T(x, w)``; rows of ``x`` and ``w`` are evaluated together when 2-D."""
        return self._call(self._fns[0], self._fns[1], x, w)

    def feedback(self, x, w) -> float | np.ndarray:
        return self._call(self._fns[2], self._fns[3], x, w)

    def cost_and_gradient(self, x, w) -> tuple[float, np.ndarray]:
        """``pi^T`` and ``d pi^T / dx`` at a single point."""
        vals = self._fns[0](x, 0.0, w)
        return vals[0], np.array(vals[1:], dtype=float)

    def cost_gradient(self, x, w) -> np.ndarray:
        """``d pi^T / dx`` at ``(x, w)`` (rows when 2-D)."""
        x, w = np.asarray(x, dtype=float), np.asarray(w, dtype=float)
        if x.ndim == 1:
            return self.cost_and_gradient(x, w)[1]
        out = self._fns[4](x.T, 0.0, w.T)
        return np.stack([np.broadcast_to(v, x.shape[:1]) for v in out], axis=-1)

    def names(self) -> list[str]:
        return [f"x{i}" for i in range(1, self.n + 1)] + [f"w{j}" for j in range(1, self.k + 1)]

    def summary(self) -> str:
        def mat(M):
            return "[" + "; ".join(" ".join(f"{v:.12g}" for v in np.atleast_1d(row)) for row in np.atleast_2d(M)) + "]"

        lines = [
            f"cost_degree = {self.cost_degree}",
            f"feedback_degree = {self.feedback_degree}",
            f"level = {'unset' if self.level is None else f'{self.level:.12g}'}",
            f"T = {mat(self.T)}",
            f"L = {mat(self.L)}",
            f"P = {mat(self.P)}",
            f"K = {mat(self.K)}",
            "closed_loop = ["
            + ", ".join(
                f"{z.real:.10g}{z.imag:+.10g}j" if abs(z.imag) > 1e-12 else f"{z.real:.10g}"
                for z in self.closed_loop
            )
            + "]",
        ]
        return "\n".join(lines)

    def to_text(self) -> str:
        names = self.names()
        return (
            self.summary()
            + "\n\n[piT]\n"
            + self.piT.to_debug(names)
            + "\n\n[kappaT]\n"
            + self.kappaT.to_debug(names)
            + "\n"
        )


def assemble_terminal(
    fbi: FbiSolution,
    ric: RiccatiSolution,
    corrections: list[tuple[TruncatedPoly, TruncatedPoly]] | None = None,
) -> TerminalLaw:
    """Map ``rho``, ``beta`` back to ``(x, w)``: ``pi^T = rho(x - theta(w), w)``.

    The cost degree is ``2 + len(corrections)``; ``theta`` and ``alpha`` are
    used through the feedback degree, so an empty list reproduces the
    quadratic/linear law ``(x - Tw)'P(x - Tw)``, ``Lw + K(x - Tw)``.
    """
    corrections = list(corrections or [])
    cd = 2 + len(corrections)
    fd = cd - 1
    if fbi.degree < fd:
        raise ValueError(f"cost degree {cd} needs the FBI series through degree {fd}")
    n, k = fbi.T.shape
    ar = n + k
    rho = _quadratic(ric.P, ar, cd)
    beta = _linear_z(ric.K, ar, cd)
    for r_j, b_j in corrections:
        rho = rho + r_j.with_cap(cd)
        beta = beta + b_j.with_cap(cd)

    theta = fbi.theta.with_cap(cd).truncate(fd)
    alpha = fbi.alpha.with_cap(cd).truncate(fd)
    X = variables(ar, cd)
    W = [X[n + j] for j in range(k)]
    theta_xw = theta.compose(W)
    zsub = [X[i] - theta_xw[i] for i in range(n)] + W
    piT = rho.compose(zsub).truncate(cd)
    kappaT = (alpha.compose(W) + beta.compose(zsub)).truncate(fd)
    return TerminalLaw(
        piT=piT,
        kappaT=kappaT,
        cost_degree=cd,
        n=n,
        k=k,
        P=ric.P,
        K=ric.K,
        T=fbi.T,
        L=fbi.L,
        theta=theta,
        alpha=alpha,
        closed_loop=ric.closed_loop,
        rho=rho,
        beta=beta,
    )


def synthesize_terminal(m: SystemModel, cost_degree: int = 2, check: bool = True) -> TerminalLaw:
    """Full off-line pipeline: FBI series, Riccati, Al'brekht corrections, assembly."""
    if cost_degree < 2:
        raise ValueError("cost degree must be at least 2")
    if check:
        require_structure(m)
    fd = cost_degree - 1
    fbi = solve_fbi(m, fd, cap=cost_degree)
    ld = linearize(m)
    ric = solve_dare(ld, transverse_quadratic_cost(ld, m.relative_degree))
    corrections: list[tuple[TruncatedPoly, TruncatedPoly]] = []
    if cost_degree > 2:
        series = transverse_series(m, fbi, cost_degree)
        for d in range(2, fd + 1):
            corrections.append(albrekht_correct(m, fbi, ric, d, corrections, series))
    return assemble_terminal(fbi, ric, corrections)


# -- certification --------------------------------------------------------------


def _decrease(m: SystemModel, law: TerminalLaw, X, W, mode: str, u_span: float):
    pi_now = law.cost(X, W)
    Wn = m.exo_batch(W)
    if mode == "feedback":
        U = law.feedback(X, W)
        pi_next = law.cost(m.step_batch(X, U, W), Wn)
    elif mode == "clf":
        # vectorized golden-section search for min_u pi^T(f(x, u, w), a(w))
        c = law.feedback(X, W)
        lo, hi = c - u_span, c + u_span
        g = (np.sqrt(5.0) - 1.0) / 2.0
        a_, b_ = hi - g * (hi - lo), lo + g * (hi - lo)

        def val(U):
            return law.cost(m.step_batch(X, U, W), Wn)

        fa, fb = val(a_), val(b_)
        for _ in range(60):
            left = fa < fb
            # keep [lo, b] where a is better, [a, hi] otherwise
            hi = np.where(left, b_, hi)
            lo = np.where(left, lo, a_)
            a_ = hi - g * (hi - lo)
            b_ = lo + g * (hi - lo)
            fa, fb = val(a_), val(b_)
        pi_next = np.minimum(fa, fb)
    else:
        raise ValueError("mode must be 'feedback' or 'clf'")
    return pi_now, pi_next


def estimate_lyapunov_region(
    m: SystemModel,
    law: TerminalLaw,
    mode: str = "feedback",
    w_bound: float = 1.0,
    samples: int = 2000,
    z_box: float = 2.0,
    seed: int = 0,
    grid: int = 60,
    u_span: float = 10.0,
    tol: float = 1e-12,
    decades: float = 4.0,
) -> tuple[float, dict]:
    """Largest level ``c`` (on a geometric grid) where ``pi^T`` decreases.

    Points ``(x, w)`` with ``x = theta(w) + z`` and ``w`` uniform with
    ``|w|_inf <= w_bound`` are rejection-sampled until ``samples`` of them
    satisfy ``pi^T <= c_max`` (the median of ``pi^T`` over the unshrunk
    box).  ``z`` is uniform in the box of half-width
    ``z_box`` shrunk by a log-uniform factor spanning ``decades`` powers of
    ten, so that small levels are populated as densely as large ones.
    ``c`` is accepted if every sample in ``{pi^T <= c}`` satisfies the
    decrease condition (``feedback``: under ``kappa^T``; ``clf``: for the
    best control).  Returns ``(c_star, diagnostics)``; ``c_star = 0`` means
    no grid level passed.
    """
    rng = np.random.default_rng(seed)
    n, k = law.n, law.k
    pool_x, pool_w = [], []
    have = 0
    c_max = None
    for _ in range(200):
        W = rng.uniform(-w_bound, w_bound, size=(4 * samples, k))
        shrink = 10.0 ** (-decades * rng.uniform(size=(4 * samples, 1)))
        Z = rng.uniform(-z_box, z_box, size=(4 * samples, n)) * shrink
        X = law.theta(W) + Z
        pis = law.cost(X, W)
        if c_max is None:
            # top of the level grid: median pi^T over the unshrunk box
            c_max = float(np.quantile(law.cost(X - Z + Z / shrink, W), 0.5))
        sel = pis <= c_max
        pool_x.append(X[sel])
        pool_w.append(W[sel])
        have += int(sel.sum())
        if have >= samples:
            break
    X = np.concatenate(pool_x)[:samples]
    W = np.concatenate(pool_w)[:samples]
    with np.errstate(all="ignore"):
        pi_now, pi_next = _decrease(m, law, X, W, mode, u_span)
    ok = np.isfinite(pi_next) & (pi_next - pi_now <= tol * np.maximum(1.0, np.abs(pi_now)))
    levels = c_max * 0.5 ** np.arange(grid)[::-1]
    bad = pi_now[~ok]
    first_bad = float(bad.min()) if bad.size else np.inf
    passing = levels[levels < first_bad]
    c_star = float(passing.max()) if passing.size else 0.0
    diag = {
        "samples": int(X.shape[0]),
        "violations": int((~ok).sum()),
        "smallest_violating_level": first_bad,
        "c_max": c_max,
        "mode": mode,
        "w_bound": w_bound,
    }
    return c_star, diag


def dp_residual_ratios(
    m: SystemModel,
    law: TerminalLaw,
    eps: tuple[float, ...] = (1e-1, 3e-2, 1e-2),
    samples: int = 2048,
    seed: int = 0,
) -> np.ndarray:
    """Max ``|e| / eps^(cost_degree+1)`` over random rays, one value per ``eps``.

    The rays are unit directions in joint ``(z, w)`` space; many of them are
    needed for the sampled max to approximate the sup over the sphere, which
    is what makes the ratios comparable across ``eps``.

    ``e = pi^T(f(x, kappa^T, w), a(w)) + l(x, kappa^T, w) - pi^T(x, w)`` is
    evaluated with the true dynamics at ``w = eps w_hat``,
    ``x = theta(w) + eps z_hat``.
    """
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(samples, law.n + law.k))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    out = []
    for e in eps:
        Wv = e * dirs[:, law.n :]
        X = law.theta(Wv) + e * dirs[:, : law.n]
        U = law.feedback(X, Wv)
        Xn = m.step_batch(X, U, Wv)
        Wn = m.exo_batch(Wv)
        err = law.cost(Xn, Wn) + m.running_cost_batch(X, U, Wv) - law.cost(X, Wv)
        out.append(float(np.max(np.abs(err))) / e ** (law.cost_degree + 1))
    return np.array(out)


def dp_residual_order(m: SystemModel, law: TerminalLaw, **kwargs) -> float:
    """Largest DP-residual ratio over the ``eps`` ladder (bounded means order holds)."""
    return float(np.max(dp_residual_ratios(m, law, **kwargs)))

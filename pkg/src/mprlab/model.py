"""Plant/exosystem model, linearization and structural checks.

A :class:`SystemModel` bundles the discrete-time plant ``x+ = f(x, u, w)``,
the scalar output ``y = h(x, u, w)`` and the exosystem ``w+ = a(w)``, all as
expression trees.  From these it derives compiled numeric functions, cached
Taylor jets at the origin, the output chain ``h^(j)``, the relative degree
and the running cost ``l = (h^(0))^2 + (h^(r))^2``.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dsl import (
    Dims,
    Expr,
    ScenarioSpec,
    compile_exprs,
    expr_diff,
    expr_eval,
    expr_jets,
    substitute,
    to_string,
)
from .dsl.expr import Const, Pow, add
from .errors import (
    InconsistentRelativeDegreeError,
    NumericError,
    StructureError,
    UndefinedRelativeDegreeError,
)
from .poly import PolyVector, TruncatedPoly, variables

__all__ = [
    "SystemModel",
    "TaylorData",
    "LinearData",
    "OutputChain",
    "StructureReport",
    "build_output_chain",
    "linearize",
    "eig_small",
    "plant_zeros",
    "structure_report",
    "build_running_cost",
]

ORIGIN_TOL = 1e-10


@dataclass(frozen=True)
class TaylorData:
    """Jets at the origin: ``f`` and ``h`` in ``(x, u, w)``, ``a`` in ``w`` only."""

    f: PolyVector
    h: TruncatedPoly
    a: PolyVector
    cap: int


@dataclass(frozen=True)
class LinearData:
    F: np.ndarray
    G: np.ndarray
    B: np.ndarray
    H: np.ndarray
    J: float
    D: np.ndarray
    A: np.ndarray


@dataclass(frozen=True)
class OutputChain:
    """``h^(0) .. h^(r)`` and the relative degree ``r``."""

    exprs: tuple[Expr, ...]
    relative_degree: int
    certificate_box: float = 0.5
    certificate_samples: int = 100

    def __getitem__(self, j: int) -> Expr:
        return self.exprs[j]


class SystemModel:
    """Discrete-time SISO plant driven by an exosystem.

    Parameters
    ----------
    f : sequence of Expr
        ``n`` plant update expressions in ``x``, ``u``, ``w``.
    h : Expr
        Output expression.
    a : sequence of Expr
        ``k`` exosystem update expressions in ``w``.
    name : str
        Label used in reports.
    """

    def __init__(self, f, h: Expr, a, name: str = "model", relative_degree_box: float = 0.5):
        self.f = tuple(f)
        self.h = h
        self.a = tuple(a)
        self.dims = Dims(len(self.f), len(self.a))
        self.name = name
        self.relative_degree_box = relative_degree_box
        n, k = self.dims.n, self.dims.k

        self._f_fn = compile_exprs(self.f)
        self._h_fn = compile_exprs([self.h])
        self._a_fn = compile_exprs(self.a)
        jac = [expr_diff(fi, "x", j) for fi in self.f for j in range(1, n + 1)]
        jac += [expr_diff(fi, "u") for fi in self.f]
        self._fjac_fn = compile_exprs(jac)
        self._f_np = compile_exprs(self.f, backend="numpy")
        self._h_np = compile_exprs([self.h], backend="numpy")
        self._a_np = compile_exprs(self.a, backend="numpy")

        x0, w0 = np.zeros(n), np.zeros(k)
        if (
            np.max(np.abs(self.step(x0, 0.0, w0)), initial=0.0) > ORIGIN_TOL
            or abs(self.output(x0, 0.0, w0)) > ORIGIN_TOL
            or np.max(np.abs(self.exo(w0)), initial=0.0) > ORIGIN_TOL
        ):
            raise StructureError("the origin must be an equilibrium with zero output")
        self._taylor: dict[int, TaylorData] = {}

    @classmethod
    def from_scenario(cls, spec: ScenarioSpec) -> SystemModel:
        return cls(spec.discrete_plant(), spec.output_h, spec.exo_a, name=spec.name)

    # -- numerics ---------------------------------------------------------

    def step(self, x, u, w) -> np.ndarray:
        return np.array(self._f_fn(x, u, w), dtype=float)

    def output(self, x, u, w) -> float:
        return float(self._h_fn(x, u, w)[0])

    def exo(self, w) -> np.ndarray:
        return np.array(self._a_fn((), 0.0, w), dtype=float)

    def step_jacobians(self, x, u, w) -> tuple[np.ndarray, np.ndarray]:
        """``(df/dx, df/du)`` at a point; shapes ``(n, n)`` and ``(n,)``."""
        n = self.dims.n
        vals = self._fjac_fn(x, u, w)
        fx = np.array(vals[: n * n], dtype=float).reshape(n, n)
        fu = np.array(vals[n * n :], dtype=float)
        return fx, fu

    def step_batch(self, X, U, W) -> np.ndarray:
        """Vectorized plant update; ``X`` is ``(N, n)``, ``U`` ``(N,)``, ``W`` ``(N, k)``."""
        X, W = np.asarray(X, dtype=float), np.asarray(W, dtype=float)
        U = np.broadcast_to(np.asarray(U, dtype=float), X.shape[:1])
        out = self._f_np(X.T, U, W.T)
        return np.stack([np.broadcast_to(v, X.shape[:1]) for v in out], axis=-1)

    def output_batch(self, X, U, W) -> np.ndarray:
        X, W = np.asarray(X, dtype=float), np.asarray(W, dtype=float)
        U = np.broadcast_to(np.asarray(U, dtype=float), X.shape[:1])
        return np.broadcast_to(self._h_np(X.T, U, W.T)[0], X.shape[:1]).astype(float)

    def exo_batch(self, W) -> np.ndarray:
        W = np.asarray(W, dtype=float)
        out = self._a_np((), 0.0, W.T)
        return np.stack([np.broadcast_to(v, W.shape[:1]) for v in out], axis=-1)

    # -- series -----------------------------------------------------------

    def taylor(self, cap: int) -> TaylorData:
        """Jets of ``f``, ``h``, ``a`` at the origin, truncated at ``cap`` (cached)."""
        if cap not in self._taylor:
            jets = expr_jets(list(self.f) + [self.h] + list(self.a), cap, self.dims)
            n, k = self.dims.n, self.dims.k
            # exosystem jets move from (x, u, w) space to w space
            wz = variables(k, cap)
            lift = [TruncatedPoly.zero(k, cap)] * (n + 1) + list(wz)
            a = PolyVector(p.compose(lift) for p in jets[n + 1 :])
            self._taylor[cap] = TaylorData(PolyVector(jets[:n]), jets[n], a, cap)
        return self._taylor[cap]

    @functools.cached_property
    def chain(self) -> OutputChain:
        return build_output_chain(self, max_r=self.dims.n + 1, box=self.relative_degree_box)

    @property
    def relative_degree(self) -> int:
        return self.chain.relative_degree

    @functools.cached_property
    def running_cost(self) -> Expr:
        return build_running_cost(self.chain)

    @functools.cached_property
    def running_cost_functions(self):
        """Compiled ``(l, dl/dx_1..dl/dx_n, dl/du)`` as one scalar function."""
        l = self.running_cost
        grads = [expr_diff(l, "x", j) for j in range(1, self.dims.n + 1)]
        grads.append(expr_diff(l, "u"))
        return compile_exprs([l] + grads), compile_exprs([l], backend="numpy")

    @functools.cached_property
    def _stage_fns(self):
        n = self.dims.n
        l = self.running_cost
        jac = [expr_diff(fi, "x", j) for fi in self.f for j in range(1, n + 1)]
        jac += [expr_diff(fi, "u") for fi in self.f]
        jac += [expr_diff(l, "x", j) for j in range(1, n + 1)] + [expr_diff(l, "u")]
        return compile_exprs(list(self.f) + [l]), compile_exprs(jac)

    def stage_value(self, x, u, w) -> tuple[np.ndarray, float]:
        """``(f(x, u, w), l(x, u, w))`` in one call."""
        vals = self._stage_fns[0](x, u, w)
        return np.array(vals[:-1], dtype=float), float(vals[-1])

    def stage_derivatives(self, x, u, w) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
        """``(df/dx, df/du, dl/dx, dl/du)`` in one call."""
        n = self.dims.n
        vals = self._stage_fns[1](x, u, w)
        fx = np.array(vals[: n * n], dtype=float).reshape(n, n)
        fu = np.array(vals[n * n : n * n + n], dtype=float)
        lx = np.array(vals[n * n + n : n * n + 2 * n], dtype=float)
        return fx, fu, lx, float(vals[-1])

    def running_cost_value(self, x, u, w) -> float:
        return float(self.running_cost_functions[0](x, u, w)[0])

    def running_cost_gradient(self, x, u, w) -> tuple[float, np.ndarray, float]:
        """``(l, dl/dx, dl/du)`` at a point."""
        vals = self.running_cost_functions[0](x, u, w)
        return float(vals[0]), np.array(vals[1:-1], dtype=float), float(vals[-1])

    def running_cost_batch(self, X, U, W) -> np.ndarray:
        X, W = np.asarray(X, dtype=float), np.asarray(W, dtype=float)
        U = np.broadcast_to(np.asarray(U, dtype=float), X.shape[:1])
        return np.broadcast_to(self.running_cost_functions[1](X.T, U, W.T)[0], X.shape[:1])

    def __repr__(self):
        return f"SystemModel({self.name!r}, n={self.dims.n}, k={self.dims.k})"


def build_output_chain(
    m: SystemModel,
    max_r: int,
    threshold: float = 1e-9,
    box: float = 0.5,
    samples: int = 100,
    seed: int = 0,
) -> OutputChain:
    """Substitute ``(f, u, a)`` into ``h`` until the control shows up.

    The first ``j`` with ``|dh^(j)/du(0)| > threshold`` is the relative degree.
    Lower chain members must be free of ``u`` at the origin and at ``samples``
    random points of the box ``|.|_inf <= box``; otherwise the relative degree
    is not well defined there.
    """
    if max_r < 1:
        raise ValueError("max_r must be at least 1")
    n, k = m.dims.n, m.dims.k
    mapping = {("x", i + 1): fi for i, fi in enumerate(m.f)}
    mapping.update({("w", j + 1): aj for j, aj in enumerate(m.a)})
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-box, box, size=(samples, n + 1 + k))

    chain = [m.h]
    for j in range(max_r + 1):
        hj = chain[-1]
        du = expr_diff(hj, "u")
        at_origin = expr_eval(du, np.zeros(n), 0.0, np.zeros(k))
        if abs(at_origin) > threshold:
            return OutputChain(tuple(chain), j, box, samples)
        if isinstance(du, Const):
            vals = np.full(samples, du.value)
        else:
            fn = compile_exprs([du], backend="numpy")
            vals = np.broadcast_to(fn(pts[:, :n].T, pts[:, n], pts[:, n + 1 :].T)[0], (samples,))
        if np.max(np.abs(vals)) > threshold:
            raise UndefinedRelativeDegreeError(
                f"h^({j}) depends on u away from the origin but not at it; "
                "relative degree is not well defined"
            )
        if j == max_r:
            break
        chain.append(substitute(hj, mapping))
    raise UndefinedRelativeDegreeError(f"no u-dependence found up to h^({max_r})")


def linearize(m: SystemModel) -> LinearData:
    tay = m.taylor(1)
    n, k = m.dims.n, m.dims.k
    Jf = tay.f.linear_part()
    Jh = tay.h.linear_coefficients()
    return LinearData(
        F=Jf[:, :n],
        G=Jf[:, n],
        B=Jf[:, n + 1 :],
        H=Jh[:n],
        J=float(Jh[n]),
        D=Jh[n + 1 :],
        A=tay.a.linear_part(),
    )


def eig_small(M) -> np.ndarray:
    """Eigenvalues of a small dense real matrix, residual-checked.

    Uses LAPACK's Hessenberg/shifted-QR driver; every returned ``lam`` is
    checked against ``|det(M - lam I)| <= 1e-8 * max(1, ||M||_F)^n``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    n = M.shape[0]
    if n == 0:
        return np.zeros(0, dtype=complex)
    if n > 16:
        raise ValueError("eig_small is meant for matrices of size <= 16")
    try:
        lam = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigenvalue iteration failed: {exc}") from exc
    scale = max(1.0, np.linalg.norm(M)) ** n
    for value in lam:
        r = abs(np.linalg.det(M - value * np.eye(n)))
        if r > 1e-8 * scale:
            raise NumericError(f"eigenvalue {value} has determinant residual {r:.3g}")
    order = np.lexsort((np.imag(lam), np.real(lam)))
    return lam[order].astype(complex)


def plant_zeros(ld: LinearData, r: int) -> np.ndarray:
    """Zeros of the linear plant from ``Fbar = F - G (H F^r) / (H F^(r-1) G)``.

    ``Fbar`` places ``r`` eigenvalues at the origin; those are dropped and the
    remaining ``n - r`` are the zeros.
    """
    F, G, H = ld.F, ld.G, ld.H
    n = F.shape[0]
    gain = float(H @ np.linalg.matrix_power(F, r - 1) @ G)
    if abs(gain) <= 1e-9:
        raise InconsistentRelativeDegreeError(
            f"H F^{r - 1} G = {gain:.3g} vanishes; relative degree {r} is inconsistent"
        )
    Fbar = F - np.outer(G, H @ np.linalg.matrix_power(F, r)) / gain
    lam = eig_small(Fbar)
    keep = np.argsort(np.abs(lam), kind="stable")[r:]
    zeros = lam[np.sort(keep)]
    assert zeros.size == n - r
    return zeros


@dataclass(frozen=True)
class StructureReport:
    relative_degree: int
    plant_poles: np.ndarray
    plant_zeros: np.ndarray
    exo_poles: np.ndarray
    stabilizable: bool
    linearly_minimum_phase: bool
    exo_neutral: bool
    hyperbolic_zero_dynamics: bool
    certificate_box: float = 0.5
    certificate_samples: int = 100
    name: str = ""
    notes: tuple[str, ...] = field(default=())

    @property
    def ok(self) -> bool:
        return self.stabilizable and self.linearly_minimum_phase and self.exo_neutral

    def key_values(self) -> list[tuple[str, str]]:
        def cplx(values):
            return "[" + ", ".join(_fmt_complex(v) for v in values) + "]"

        return [
            ("model", self.name),
            ("relative_degree", str(self.relative_degree)),
            ("plant_poles", cplx(self.plant_poles)),
            ("plant_zeros", cplx(self.plant_zeros)),
            ("exo_poles", cplx(self.exo_poles)),
            ("stabilizable", str(self.stabilizable).lower()),
            ("linearly_minimum_phase", str(self.linearly_minimum_phase).lower()),
            ("exo_neutral", str(self.exo_neutral).lower()),
            ("hyperbolic_zero_dynamics", str(self.hyperbolic_zero_dynamics).lower()),
            ("certificate_box", f"{self.certificate_box:g}"),
            ("certificate_samples", str(self.certificate_samples)),
        ]

    def to_text(self) -> str:
        """Machine-readable ``key = value`` lines."""
        return "".join(f"{k} = {v}\n" for k, v in self.key_values())

    def summary(self) -> str:
        kv = dict(self.key_values())
        verdict = "all structural hypotheses hold" if self.ok else "structural hypotheses FAIL"
        lines = [
            f"Structure of {self.name or 'model'}: {verdict}",
            f"  relative degree      {kv['relative_degree']}",
            f"  plant poles          {kv['plant_poles']}",
            f"  plant zeros          {kv['plant_zeros']}",
            f"  exosystem poles      {kv['exo_poles']}",
            f"  stabilizable         {kv['stabilizable']}",
            f"  linearly min. phase  {kv['linearly_minimum_phase']}",
            f"  exosystem neutral    {kv['exo_neutral']}",
        ]
        lines += [f"  note: {n}" for n in self.notes]
        return "\n".join(lines)


def _fmt_complex(z: complex) -> str:
    re_, im = float(np.real(z)), float(np.imag(z))
    re_ = 0.0 if abs(re_) < 1e-12 else re_
    im = 0.0 if abs(im) < 1e-12 else im
    if im == 0.0:
        return f"{re_:.10g}"
    return f"{re_:.10g}{im:+.10g}j"


def _stabilizable(F: np.ndarray, G: np.ndarray, tol: float = 1e-9) -> bool:
    n = F.shape[0]
    for lam in eig_small(F):
        if abs(lam) >= 1.0 - 1e-12:
            M = np.hstack([F - lam * np.eye(n), G.reshape(n, 1)])
            if np.linalg.matrix_rank(M, tol=tol) < n:
                return False
    return True


def structure_report(m: SystemModel) -> StructureReport:
    """Relative degree, poles, zeros and the three hypothesis flags."""
    ld = linearize(m)
    chain = m.chain
    r = chain.relative_degree
    zeros = plant_zeros(ld, r) if r >= 1 else eig_small(ld.F)
    exo = eig_small(ld.A)
    notes = []
    exo_neutral = bool(np.all(np.abs(np.abs(exo) - 1.0) <= 1e-6))
    min_phase = bool(np.all(np.abs(zeros) < 1.0 - 1e-6))
    hyperbolic = bool(np.all(np.abs(np.abs(zeros) - 1.0) > 1e-6))
    if hyperbolic and not min_phase:
        notes.append("zero dynamics hyperbolic but not stable: FBI solvable, MPR not supported")
    return StructureReport(
        relative_degree=r,
        plant_poles=eig_small(ld.F),
        plant_zeros=zeros,
        exo_poles=exo,
        stabilizable=_stabilizable(ld.F, ld.G),
        linearly_minimum_phase=min_phase,
        exo_neutral=exo_neutral,
        hyperbolic_zero_dynamics=hyperbolic,
        certificate_box=chain.certificate_box,
        certificate_samples=chain.certificate_samples,
        name=m.name,
        notes=tuple(notes),
    )


def require_structure(m: SystemModel) -> StructureReport:
    """Raise :class:`StructureError` unless every synthesis hypothesis holds."""
    rep = structure_report(m)
    if rep.hyperbolic_zero_dynamics and not rep.linearly_minimum_phase:
        warnings.warn(rep.notes[0], stacklevel=2)
    failed = [
        name
        for name, ok in (
            ("stabilizable", rep.stabilizable),
            ("linearly_minimum_phase", rep.linearly_minimum_phase),
            ("exo_neutral", rep.exo_neutral),
        )
        if not ok
    ]
    if failed:
        raise StructureError(f"{m.name}: structural check failed: {', '.join(failed)}")
    return rep


def build_running_cost(chain: OutputChain) -> Expr:
    """``l = (h^(0))^2 + (h^(r))^2`` as an expression in ``(x, u, w)``."""
    r = chain.relative_degree
    if r < 1:
        raise StructureError("running cost needs relative degree r >= 1")
    return add(Pow(chain[0], 2), Pow(chain[r], 2))


def describe_chain(chain: OutputChain) -> str:
    return "\n".join(f"h^({j}) = {to_string(e)}" for j, e in enumerate(chain.exprs))


"""Truncated multivariate polynomials.

Every series object in the package (Taylor jets of the plant, FBI
corrections, terminal costs and feedbacks) is a :class:`TruncatedPoly`: a
real polynomial in a fixed number of variables whose terms above a degree
cap are discarded after every operation.

Coefficients are held in a dense vector indexed by the graded-lexicographic
monomial basis of ``(arity, cap)``.  The basis tables (exponents, product
index triples, derivative maps) are built once per ``(arity, cap)`` and
shared.  The public view is the sparse one: :attr:`TruncatedPoly.terms` maps
exponent tuples to nonzero coefficients, and coefficients below
:data:`PRUNE_TOL` in magnitude are set to exactly zero after every operation
so that equality of canonical forms is meaningful.

Graded-lex order sorts by total degree, then lexicographically descending on
the exponent tuple, so for two variables the basis is
``1, z1, z2, z1^2, z1 z2, z2^2, ...``.
"""

from __future__ import annotations

import functools
import re
from collections.abc import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "PRUNE_TOL",
    "StructuralError",
    "TruncatedPoly",
    "PolyVector",
    "monomials",
    "poly_add",
    "poly_mul",
    "poly_compose",
    "poly_partial",
    "poly_grade",
    "poly_eval",
    "poly_embed",
    "variables",
]

PRUNE_TOL = 1e-14


class StructuralError(ValueError):
    """Raised when polynomial operands disagree in arity, cap or length."""


def _monomials_of_degree(arity: int, degree: int):
    if arity == 1:
        yield (degree,)
        return
    for first in range(degree, -1, -1):
        for rest in _monomials_of_degree(arity - 1, degree - first):
            yield (first,) + rest


def monomials(arity: int, degree: int) -> list[tuple[int, ...]]:
    """Exponent tuples of the given total degree, in graded-lex order."""
    return list(_monomials_of_degree(arity, degree))


class _Basis:
    """Index tables for the monomial basis of ``(arity, cap)``."""

    def __init__(self, arity: int, cap: int):
        self.arity = arity
        self.cap = cap
        exps = []
        self.grade_start = []
        for d in range(cap + 1):
            self.grade_start.append(len(exps))
            exps.extend(monomials(arity, d))
        self.grade_start.append(len(exps))
        self.size = len(exps)
        self.exps = np.array(exps, dtype=np.int64).reshape(self.size, arity)
        self.index = {e: i for i, e in enumerate(exps)}
        self.degrees = self.exps.sum(axis=1)

        # value(m) = value(parent) * z[var], used for evaluation and composition
        self.parent = np.zeros(self.size, dtype=np.int64)
        self.pvar = np.zeros(self.size, dtype=np.int64)
        for i in range(1, self.size):
            e = exps[i]
            v = max(j for j in range(arity) if e[j] > 0)
            p = list(e)
            p[v] -= 1
            self.parent[i] = self.index[tuple(p)]
            self.pvar[i] = v

        ii, jj, kk = [], [], []
        for i, ei in enumerate(exps):
            di = self.degrees[i]
            for j in range(self.grade_start[cap - di + 1]):
                ej = exps[j]
                ii.append(i)
                jj.append(j)
                kk.append(self.index[tuple(a + b for a, b in zip(ei, ej))])
        self.mul_i = np.array(ii, dtype=np.int64)
        self.mul_j = np.array(jj, dtype=np.int64)
        self.mul_k = np.array(kk, dtype=np.int64)

        self.partials = []
        for v in range(arity):
            src, dst, fac = [], [], []
            for i, e in enumerate(exps):
                if e[v] > 0:
                    p = list(e)
                    p[v] -= 1
                    src.append(i)
                    dst.append(self.index[tuple(p)])
                    fac.append(float(e[v]))
            self.partials.append(
                (np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), np.array(fac))
            )

    def grade_slice(self, d: int) -> slice:
        return slice(self.grade_start[d], self.grade_start[d + 1])

    def monomial_values(self, points: np.ndarray) -> np.ndarray:
        """Values of every basis monomial; ``points`` has shape (..., arity)."""
        points = np.asarray(points, dtype=float)
        out = np.empty(points.shape[:-1] + (self.size,))
        out[..., 0] = 1.0
        for d in range(1, self.cap + 1):
            s = self.grade_slice(d)
            out[..., s] = out[..., self.parent[s]] * points[..., self.pvar[s]]
        return out


@functools.lru_cache(maxsize=None)
def _basis(arity: int, cap: int) -> _Basis:
    return _Basis(arity, cap)


def _prune(c: np.ndarray) -> np.ndarray:
    c[np.abs(c) < PRUNE_TOL] = 0.0
    c.setflags(write=False)
    return c


class TruncatedPoly:
    """Polynomial in ``arity`` variables with all terms above ``cap`` dropped.

    Values are immutable.  Arithmetic operators (``+ - * **``, unary ``-``)
    and calling with a point (evaluation) are supported; scalars are promoted
    to constant polynomials.
    """

    __slots__ = ("arity", "cap", "_c")

    def __init__(self, arity: int, cap: int, terms: Mapping[Sequence[int], float] | None = None):
        if arity < 1:
            raise StructuralError(f"arity must be positive, got {arity}")
        if cap < 0:
            raise StructuralError(f"degree cap must be non-negative, got {cap}")
        self.arity = int(arity)
        self.cap = int(cap)
        basis = _basis(self.arity, self.cap)
        c = np.zeros(basis.size)
        for exps, coef in (terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != self.arity or min(exps) < 0:
                raise StructuralError(f"bad exponent tuple {exps} for arity {self.arity}")
            if sum(exps) <= self.cap:
                c[basis.index[exps]] += float(coef)
        self._c = _prune(c)

    @classmethod
    def _from_array(cls, arity: int, cap: int, coeffs: np.ndarray) -> TruncatedPoly:
        obj = cls.__new__(cls)
        obj.arity = arity
        obj.cap = cap
        obj._c = _prune(np.array(coeffs, dtype=float))
        return obj

    @classmethod
    def from_coefficients(cls, arity: int, cap: int, coeffs: Sequence[float]) -> TruncatedPoly:
        """Build from a dense coefficient vector in graded-lex basis order."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (_basis(arity, cap).size,):
            raise StructuralError("coefficient vector does not match the basis size")
        return cls._from_array(arity, cap, coeffs)

    @classmethod
    def zero(cls, arity: int, cap: int) -> TruncatedPoly:
        return cls._from_array(arity, cap, np.zeros(_basis(arity, cap).size))

    @classmethod
    def constant(cls, arity: int, cap: int, value: float) -> TruncatedPoly:
        c = np.zeros(_basis(arity, cap).size)
        c[0] = value
        return cls._from_array(arity, cap, c)

    @classmethod
    def variable(cls, arity: int, cap: int, index: int) -> TruncatedPoly:
        if not 0 <= index < arity:
            raise StructuralError(f"variable index {index} out of range for arity {arity}")
        e = [0] * arity
        e[index] = 1
        return cls(arity, cap, {tuple(e): 1.0})

    @classmethod
    def linear(cls, arity: int, cap: int, coeffs: Sequence[float]) -> TruncatedPoly:
        """The linear form ``sum(coeffs[i] * z_i)``."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (arity,):
            raise StructuralError("linear coefficient vector must have length arity")
        c = np.zeros(_basis(arity, cap).size)
        if cap >= 1:
            c[1 : 1 + arity] = coeffs
        return cls._from_array(arity, cap, c)

    @property
    def coefficients(self) -> np.ndarray:
        """Dense read-only coefficient vector in graded-lex basis order."""
        return self._c

    @property
    def basis(self) -> list[tuple[int, ...]]:
        return [tuple(int(v) for v in e) for e in _basis(self.arity, self.cap).exps]

    @property
    def terms(self) -> dict[tuple[int, ...], float]:
        exps = _basis(self.arity, self.cap).exps
        nz = np.flatnonzero(self._c)
        return {tuple(int(v) for v in exps[i]): float(self._c[i]) for i in nz}

    @property
    def degree(self) -> int:
        """Total degree of the highest nonzero term (-1 for the zero polynomial)."""
        nz = np.flatnonzero(self._c)
        if nz.size == 0:
            return -1
        return int(_basis(self.arity, self.cap).degrees[nz[-1]])

    def is_zero(self) -> bool:
        return not self._c.any()

    def coefficient(self, exps: Sequence[int]) -> float:
        exps = tuple(exps)
        if sum(exps) > self.cap:
            return 0.0
        return float(self._c[_basis(self.arity, self.cap).index[exps]])

    def grade_coefficients(self, d: int) -> np.ndarray:
        """Coefficients of the degree-``d`` monomials, ordered as ``monomials(arity, d)``."""
        if not 0 <= d <= self.cap:
            return np.zeros(len(monomials(self.arity, d)))
        return np.array(self._c[_basis(self.arity, self.cap).grade_slice(d)])

    @classmethod
    def from_grade(cls, arity: int, cap: int, d: int, coeffs: Sequence[float]) -> TruncatedPoly:
        """Homogeneous polynomial of degree ``d`` from its graded coefficient vector."""
        b = _basis(arity, cap)
        c = np.zeros(b.size)
        c[b.grade_slice(d)] = coeffs
        return cls._from_array(arity, cap, c)

    def linear_coefficients(self) -> np.ndarray:
        """Coefficients of ``z_1 .. z_arity`` (the gradient at the origin)."""
        if self.cap < 1:
            return np.zeros(self.arity)
        return np.array(self._c[1 : 1 + self.arity])

    def max_abs_coefficient(self) -> float:
        return float(np.max(np.abs(self._c))) if self._c.size else 0.0

    # -- arithmetic -------------------------------------------------------

    def _coerce(self, other) -> TruncatedPoly:
        if isinstance(other, TruncatedPoly):
            if other.arity != self.arity or other.cap != self.cap:
                raise StructuralError(
                    f"operand mismatch: (arity {self.arity}, cap {self.cap}) vs "
                    f"(arity {other.arity}, cap {other.cap})"
                )
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return TruncatedPoly.constant(self.arity, self.cap, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return TruncatedPoly._from_array(self.arity, self.cap, self._c + other._c)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return TruncatedPoly._from_array(self.arity, self.cap, self._c - other._c)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return other - self

    def __neg__(self):
        return TruncatedPoly._from_array(self.arity, self.cap, -self._c)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return TruncatedPoly._from_array(self.arity, self.cap, self._c * float(other))
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        b = _basis(self.arity, self.cap)
        prod = np.bincount(
            b.mul_k, weights=self._c[b.mul_i] * other._c[b.mul_j], minlength=b.size
        )
        return TruncatedPoly._from_array(self.arity, self.cap, prod)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self * (1.0 / float(other))
        return NotImplemented

    def __pow__(self, k: int):
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise StructuralError("only non-negative integer powers are supported")
        result = TruncatedPoly.constant(self.arity, self.cap, 1.0)
        base = self
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    def __eq__(self, other):
        if not isinstance(other, TruncatedPoly):
            return NotImplemented
        return (
            self.arity == other.arity
            and self.cap == other.cap
            and np.array_equal(self._c, other._c)
        )

    def __hash__(self):
        return hash((self.arity, self.cap, self._c.tobytes()))

    def allclose(self, other: TruncatedPoly, atol: float = 1e-12) -> bool:
        """Coefficient-wise comparison within ``atol``."""
        other = self._coerce(other)
        return bool(np.all(np.abs(self._c - other._c) <= atol))

    # -- structure --------------------------------------------------------

    def grade(self, d: int) -> TruncatedPoly:
        c = np.zeros_like(self._c)
        if 0 <= d <= self.cap:
            s = _basis(self.arity, self.cap).grade_slice(d)
            c[s] = self._c[s]
        return TruncatedPoly._from_array(self.arity, self.cap, c)

    def truncate(self, degree: int) -> TruncatedPoly:
        """Drop terms of total degree above ``degree`` (cap unchanged)."""
        c = np.array(self._c)
        if degree < self.cap:
            c[_basis(self.arity, self.cap).grade_start[max(degree, -1) + 1] :] = 0.0
        return TruncatedPoly._from_array(self.arity, self.cap, c)

    def with_cap(self, cap: int) -> TruncatedPoly:
        """Same polynomial re-expressed at another cap (truncating if lower)."""
        if cap == self.cap:
            return self
        n = _basis(self.arity, cap).size
        c = np.zeros(n)
        m = min(n, self._c.size)
        c[:m] = self._c[:m]
        return TruncatedPoly._from_array(self.arity, cap, c)

    def partial(self, var_index: int) -> TruncatedPoly:
        if not 0 <= var_index < self.arity:
            raise StructuralError(f"variable index {var_index} out of range for arity {self.arity}")
        src, dst, fac = _basis(self.arity, self.cap).partials[var_index]
        c = np.zeros_like(self._c)
        np.add.at(c, dst, self._c[src] * fac)
        return TruncatedPoly._from_array(self.arity, self.cap, c)

    def gradient(self) -> PolyVector:
        return PolyVector([self.partial(i) for i in range(self.arity)])

    def __call__(self, point) -> float | np.ndarray:
        return poly_eval(self, point)

    def compose(self, inner: PolyVector | Sequence[TruncatedPoly]) -> TruncatedPoly:
        return poly_compose(self, inner)

    # -- display ----------------------------------------------------------

    def to_debug(self, names: Sequence[str] | None = None) -> str:
        """One ``coef * z1^a z2^b`` line per nonzero term, graded-lex order."""
        names = list(names) if names is not None else [f"z{i + 1}" for i in range(self.arity)]
        if len(names) != self.arity:
            raise StructuralError("one name per variable is required")
        lines = []
        for exps, coef in self.terms.items():
            factors = []
            for name, e in zip(names, exps):
                if e == 1:
                    factors.append(name)
                elif e > 1:
                    factors.append(f"{name}^{e}")
            lines.append(f"{coef:.17g} * {' '.join(factors) if factors else '1'}")
        return "\n".join(lines) if lines else "0"

    @classmethod
    def from_debug(
        cls, text: str, arity: int, cap: int, names: Sequence[str] | None = None
    ) -> TruncatedPoly:
        """Inverse of :meth:`to_debug`."""
        names = list(names) if names is not None else [f"z{i + 1}" for i in range(arity)]
        lookup = {n: i for i, n in enumerate(names)}
        terms: dict[tuple[int, ...], float] = {}
        for line in text.strip().splitlines():
            line = line.strip()
            if not line or line == "0":
                continue
            coef_txt, _, mono = line.partition("*")
            exps = [0] * arity
            for factor in mono.split():
                if factor == "1":
                    continue
                m = re.fullmatch(r"(\w+)(?:\^(\d+))?", factor)
                if m is None or m.group(1) not in lookup:
                    raise StructuralError(f"cannot parse monomial factor {factor!r}")
                exps[lookup[m.group(1)]] += int(m.group(2) or 1)
            terms[tuple(exps)] = terms.get(tuple(exps), 0.0) + float(coef_txt)
        return cls(arity, cap, terms)

    def __repr__(self):
        body = self.to_debug().replace("\n", " + ")
        return f"TruncatedPoly(arity={self.arity}, cap={self.cap}: {body})"


class PolyVector:
    """Ordered tuple of polynomials sharing arity and cap (a vector field)."""

    __slots__ = ("entries",)

    def __init__(self, entries: Iterable[TruncatedPoly]):
        entries = tuple(entries)
        if not entries:
            raise StructuralError("a PolyVector needs at least one entry")
        a, c = entries[0].arity, entries[0].cap
        for p in entries:
            if not isinstance(p, TruncatedPoly):
                raise StructuralError("PolyVector entries must be TruncatedPoly")
            if p.arity != a or p.cap != c:
                raise StructuralError("PolyVector entries must share arity and cap")
        self.entries = entries

    @property
    def arity(self) -> int:
        return self.entries[0].arity

    @property
    def cap(self) -> int:
        return self.entries[0].cap

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return PolyVector(self.entries[i])
        return self.entries[i]

    def __eq__(self, other):
        if not isinstance(other, PolyVector):
            return NotImplemented
        return self.entries == other.entries

    def __add__(self, other: PolyVector) -> PolyVector:
        if len(other) != len(self):
            raise StructuralError("PolyVector length mismatch")
        return PolyVector(a + b for a, b in zip(self, other))

    def __sub__(self, other: PolyVector) -> PolyVector:
        if len(other) != len(self):
            raise StructuralError("PolyVector length mismatch")
        return PolyVector(a - b for a, b in zip(self, other))

    def __neg__(self):
        return PolyVector(-p for p in self)

    def map(self, fn) -> PolyVector:
        return PolyVector(fn(p) for p in self)

    def grade(self, d: int) -> PolyVector:
        return self.map(lambda p: p.grade(d))

    def truncate(self, degree: int) -> PolyVector:
        return self.map(lambda p: p.truncate(degree))

    def with_cap(self, cap: int) -> PolyVector:
        return self.map(lambda p: p.with_cap(cap))

    def compose(self, inner: PolyVector | Sequence[TruncatedPoly]) -> PolyVector:
        return PolyVector(poly_compose(p, inner) for p in self)

    def __call__(self, point) -> np.ndarray:
        pts = np.asarray(point, dtype=float)
        vals = _basis(self.arity, self.cap).monomial_values(pts)
        return np.stack([vals @ p.coefficients for p in self], axis=-1)

    def linear_part(self) -> np.ndarray:
        """Jacobian at the origin, shape (len, arity)."""
        return np.array([p.linear_coefficients() for p in self])

    def matmul(self, M) -> PolyVector:
        """The vector field ``M @ self`` for a constant matrix ``M``."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape[1] != len(self):
            raise StructuralError("matrix width does not match PolyVector length")
        C = np.stack([p.coefficients for p in self])
        return PolyVector(
            TruncatedPoly._from_array(self.arity, self.cap, row) for row in M @ C
        )

    def dot(self, other: PolyVector) -> TruncatedPoly:
        if len(other) != len(self):
            raise StructuralError("PolyVector length mismatch")
        out = TruncatedPoly.zero(self.arity, self.cap)
        for a, b in zip(self, other):
            out = out + a * b
        return out

    def max_abs_coefficient(self) -> float:
        return max(p.max_abs_coefficient() for p in self)

    def to_debug(self, names: Sequence[str] | None = None, label: str = "entry") -> str:
        blocks = []
        for i, p in enumerate(self):
            blocks.append(f"[{label} {i + 1}]\n{p.to_debug(names)}")
        return "\n".join(blocks)

    def __repr__(self):
        return f"PolyVector({list(self.entries)!r})"


def _check_pair(a: TruncatedPoly, b: TruncatedPoly) -> None:
    if a.arity != b.arity or a.cap != b.cap:
        raise StructuralError(
            f"operand mismatch: (arity {a.arity}, cap {a.cap}) vs (arity {b.arity}, cap {b.cap})"
        )


def poly_add(a: TruncatedPoly, b: TruncatedPoly) -> TruncatedPoly:
    _check_pair(a, b)
    return a + b


def poly_mul(a: TruncatedPoly, b: TruncatedPoly) -> TruncatedPoly:
    _check_pair(a, b)
    return a * b


def poly_compose(outer: TruncatedPoly, inner: PolyVector | Sequence[TruncatedPoly]) -> TruncatedPoly:
    """Substitute ``inner[i]`` for variable ``i`` of ``outer``.

    The inner polynomials may live in a different number of variables than
    ``outer``; the result lives in theirs.  All caps must agree.
    """
    if not isinstance(inner, PolyVector):
        inner = PolyVector(inner)
    if len(inner) != outer.arity:
        raise StructuralError(
            f"composition needs {outer.arity} inner polynomials, got {len(inner)}"
        )
    if inner.cap != outer.cap:
        raise StructuralError(f"cap mismatch in composition: {outer.cap} vs {inner.cap}")
    ob = _basis(outer.arity, outer.cap)
    arity, cap = inner.arity, inner.cap
    ib = _basis(arity, cap)
    nz = np.flatnonzero(outer.coefficients)
    result = np.zeros(ib.size)
    if nz.size == 0:
        return TruncatedPoly._from_array(arity, cap, result)

    inner_c = [p.coefficients for p in inner]
    # The low-degree part of the inner map bounds which outer terms can survive.
    low = []
    for c in inner_c:
        nzi = np.flatnonzero(c)
        low.append(int(ib.degrees[nzi[0]]) if nzi.size else cap + 1)

    cache: dict[int, np.ndarray | None] = {0: None}

    def value(i: int):
        if i in cache:
            return cache[i]
        parent = value(int(ob.parent[i]))
        c = inner_c[ob.pvar[i]]
        if parent is None:
            v = np.array(c)
        else:
            v = np.bincount(ib.mul_k, weights=parent[ib.mul_i] * c[ib.mul_j], minlength=ib.size)
        cache[i] = v
        return v

    for i in nz:
        coef = outer.coefficients[i]
        if i == 0:
            result[0] += coef
            continue
        if int(np.dot(ob.exps[i], low)) > cap:
            continue
        result += coef * value(int(i))
    return TruncatedPoly._from_array(arity, cap, result)


def poly_partial(p: TruncatedPoly, var_index: int) -> TruncatedPoly:
    return p.partial(var_index)


def poly_grade(p: TruncatedPoly, d: int) -> TruncatedPoly:
    return p.grade(d)


def poly_eval(p: TruncatedPoly, point) -> float | np.ndarray:
    """Evaluate at one point (shape ``(arity,)``) or a batch (``(..., arity)``)."""
    pts = np.asarray(point, dtype=float)
    if pts.shape[-1:] != (p.arity,):
        raise StructuralError(f"point must have trailing dimension {p.arity}")
    vals = _basis(p.arity, p.cap).monomial_values(pts)
    out = vals @ p.coefficients
    return float(out) if out.ndim == 0 else out


def variables(arity: int, cap: int) -> PolyVector:
    """The coordinate functions ``z_1 .. z_arity``."""
    return PolyVector(TruncatedPoly.variable(arity, cap, i) for i in range(arity))


def poly_embed(p: TruncatedPoly, arity: int, positions: Sequence[int]) -> TruncatedPoly:
    """Re-index ``p`` into a larger variable space.

    Variable ``i`` of ``p`` becomes variable ``positions[i]`` of the result.
    """
    if len(positions) != p.arity:
        raise StructuralError("one target position per variable is required")
    z = variables(arity, p.cap)
    return poly_compose(p, [z[j] for j in positions])


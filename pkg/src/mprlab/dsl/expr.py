"""Expression trees over plant state ``x``, control ``u`` and exosystem ``w``.

Nodes are immutable and may be shared, so a tree is really a DAG; every
traversal here (evaluation, differentiation, substitution, jets, code
generation) memoizes on node identity so shared subexpressions are visited
once.  The symbolic constructors :func:`add`, :func:`mul`, ... fold constants
and drop additive zeros and multiplicative ones; the parser builds nodes
without any folding so that printing a parsed formula gives it back.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from ..poly import PolyVector, TruncatedPoly

__all__ = [
    "Dims",
    "Expr",
    "Const",
    "Var",
    "Unary",
    "Binary",
    "Pow",
    "EvaluationError",
    "SingularJetError",
    "const",
    "var",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "sin",
    "cos",
    "exp",
    "expr_eval",
    "expr_diff",
    "expr_jacobian",
    "expr_jet",
    "expr_jets",
    "substitute",
    "depends_on",
    "to_string",
    "compile_exprs",
    "poly_to_expr",
    "node_count",
]


class EvaluationError(ArithmeticError):
    """Numeric evaluation failed (division by zero, overflow)."""


class SingularJetError(ArithmeticError):
    """A Taylor jet was requested for an expression singular at the origin."""


@dataclass(frozen=True)
class Dims:
    """Dimensions of a SISO plant/exosystem pair: ``n`` states, ``k`` exo states."""

    n: int
    k: int

    m = 1
    p = 1

    @property
    def arity(self) -> int:
        """Number of variables of the combined ``(x, u, w)`` space."""
        return self.n + 1 + self.k

    def position(self, cls: str, index: int) -> int:
        """Zero-based position of a variable in the combined ``(x, u, w)`` space."""
        if cls == "x":
            return index - 1
        if cls == "u":
            return self.n
        return self.n + index

    def names(self) -> list[str]:
        return [f"x{i}" for i in range(1, self.n + 1)] + ["u"] + [f"w{j}" for j in range(1, self.k + 1)]


_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}
_BIN_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/"}
UNARY_FUNCS = ("sin", "cos", "exp")


class Expr:
    """Base class of expression nodes.

    Structural hashes are computed once at construction from the children's
    hashes, so equality checks and hashing stay cheap on large shared DAGs.
    """

    __slots__ = ("_hash",)

    def children(self) -> tuple[Expr, ...]:
        return ()

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expr) or self._hash != other._hash:
            return False
        return _struct_equal(self, other, set())

    def __repr__(self):
        return f"Expr({to_string(self)!r})"

    def __str__(self):
        return to_string(self)

    # Operators build folded (simplified) nodes.
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return power(self, k)


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value: float):
        self.value = float(value)
        self._hash = hash(("const", self.value))


class Var(Expr):
    __slots__ = ("cls", "index")

    def __init__(self, cls: str, index: int = 1):
        if cls not in ("x", "u", "w"):
            raise ValueError(f"unknown variable class {cls!r}")
        if index < 1:
            raise ValueError("variable indices start at 1")
        self.cls = cls
        self.index = int(index)
        self._hash = hash(("var", cls, self.index))


class Unary(Expr):
    __slots__ = ("op", "arg")

    def __init__(self, op: str, arg: Expr):
        if op not in ("neg",) + UNARY_FUNCS:
            raise ValueError(f"unknown unary op {op!r}")
        self.op = op
        self.arg = arg
        self._hash = hash((op, arg._hash))

    def children(self):
        return (self.arg,)


class Binary(Expr):
    __slots__ = ("op", "left", "right")

    def __init__(self, op: str, left: Expr, right: Expr):
        if op not in _BIN_SYMBOL:
            raise ValueError(f"unknown binary op {op!r}")
        self.op = op
        self.left = left
        self.right = right
        self._hash = hash((op, left._hash, right._hash))

    def children(self):
        return (self.left, self.right)


class Pow(Expr):
    __slots__ = ("base", "exponent")

    def __init__(self, base: Expr, exponent: int):
        if int(exponent) != exponent or exponent < 0:
            raise ValueError("exponents must be non-negative integers")
        self.base = base
        self.exponent = int(exponent)
        self._hash = hash(("pow", base._hash, self.exponent))

    def children(self):
        return (self.base,)


def _struct_equal(a: Expr, b: Expr, seen: set) -> bool:
    key = (id(a), id(b))
    if a is b or key in seen:
        return True
    if type(a) is not type(b) or a._hash != b._hash:
        return False
    if isinstance(a, Const):
        ok = a.value == b.value
    elif isinstance(a, Var):
        ok = (a.cls, a.index) == (b.cls, b.index)
    elif isinstance(a, Pow):
        ok = a.exponent == b.exponent and _struct_equal(a.base, b.base, seen)
    else:
        ok = a.op == b.op and all(
            _struct_equal(x, y, seen) for x, y in zip(a.children(), b.children())
        )
    if ok:
        seen.add(key)
    return ok


def _lift(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, float, np.floating, np.integer)):
        return Const(float(v))
    raise TypeError(f"cannot use {type(v).__name__} in an expression")


def _is_const(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


# -- folding constructors -------------------------------------------------


def const(value: float) -> Const:
    return Const(value)


def var(cls: str, index: int = 1) -> Var:
    return Var(cls, index)


def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if isinstance(b, Unary) and b.op == "neg":
        return sub(a, b.arg)
    return Binary("add", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return Binary("sub", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return Const(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a, -1.0):
        return neg(b)
    if _is_const(b, -1.0):
        return neg(a)
    return Binary("mul", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        raise EvaluationError("division by the constant zero")
    if _is_const(a) and _is_const(b):
        return Const(a.value / b.value)
    if _is_const(a, 0.0):
        return Const(0.0)
    if _is_const(b, 1.0):
        return a
    return Binary("div", a, b)


def neg(a: Expr) -> Expr:
    if _is_const(a):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def power(a: Expr, k: int) -> Expr:
    if k == 0:
        return Const(1.0)
    if k == 1:
        return a
    if _is_const(a):
        return Const(a.value**k)
    return Pow(a, k)


def sin(a: Expr) -> Expr:
    return Const(math.sin(a.value)) if _is_const(a) else Unary("sin", a)


def cos(a: Expr) -> Expr:
    return Const(math.cos(a.value)) if _is_const(a) else Unary("cos", a)


def exp(a: Expr) -> Expr:
    return Const(math.exp(a.value)) if _is_const(a) else Unary("exp", a)


_FOLD_UNARY = {"neg": neg, "sin": sin, "cos": cos, "exp": exp}
_FOLD_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


# -- traversal helpers ------------------------------------------------------


def _postorder(roots: Sequence[Expr]) -> list[Expr]:
    """Unique nodes of the DAG, children before parents."""
    order: list[Expr] = []
    seen: set[int] = set()
    for root in roots:
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                order.append(node)
            else:
                stack.append((node, True))
                for c in reversed(node.children()):
                    if id(c) not in seen:
                        stack.append((c, False))
    return order


def node_count(*roots: Expr) -> int:
    """Number of distinct nodes (by identity) reachable from ``roots``."""
    return len(_postorder(roots))


def _rebuild(node: Expr, new_children: list[Expr]) -> Expr:
    if isinstance(node, Unary):
        return _FOLD_UNARY[node.op](new_children[0])
    if isinstance(node, Binary):
        return _FOLD_BINARY[node.op](new_children[0], new_children[1])
    if isinstance(node, Pow):
        return power(new_children[0], node.exponent)
    return node


# -- numeric evaluation ---------------------------------------------------


def expr_eval(e: Expr, x: Sequence[float] = (), u: float = 0.0, w: Sequence[float] = ()) -> float:
    """Evaluate ``e`` at a point; variables index into ``x`` and ``w`` (1-based)."""
    vals: dict[int, float] = {}
    try:
        for node in _postorder([e]):
            if isinstance(node, Const):
                v = node.value
            elif isinstance(node, Var):
                if node.cls == "u":
                    v = float(u)
                else:
                    vec = x if node.cls == "x" else w
                    if node.index > len(vec):
                        raise EvaluationError(f"{node.cls}{node.index} not supplied")
                    v = float(vec[node.index - 1])
            elif isinstance(node, Unary):
                a = vals[id(node.arg)]
                v = -a if node.op == "neg" else getattr(math, node.op)(a)
            elif isinstance(node, Pow):
                v = vals[id(node.base)] ** node.exponent
            else:
                a, b = vals[id(node.left)], vals[id(node.right)]
                if node.op == "add":
                    v = a + b
                elif node.op == "sub":
                    v = a - b
                elif node.op == "mul":
                    v = a * b
                else:
                    v = a / b
            vals[id(node)] = v
    except ZeroDivisionError as exc:
        raise EvaluationError("division by zero") from exc
    except OverflowError as exc:
        raise EvaluationError("numeric overflow") from exc
    return vals[id(e)]


# -- symbolic differentiation ---------------------------------------------


def expr_diff(e: Expr, cls: str, index: int = 1, _memo: dict | None = None) -> Expr:
    """Symbolic partial derivative with respect to variable ``(cls, index)``."""
    memo = {} if _memo is None else _memo
    for node in _postorder([e]):
        if id(node) in memo:
            continue
        if isinstance(node, Const):
            d = Const(0.0)
        elif isinstance(node, Var):
            d = Const(1.0 if (node.cls == cls and (cls == "u" or node.index == index)) else 0.0)
        elif isinstance(node, Unary):
            da = memo[id(node.arg)][1]
            if node.op == "neg":
                d = neg(da)
            elif node.op == "sin":
                d = mul(cos(node.arg), da)
            elif node.op == "cos":
                d = neg(mul(sin(node.arg), da))
            else:
                d = mul(node, da)
        elif isinstance(node, Pow):
            db = memo[id(node.base)][1]
            d = mul(mul(Const(node.exponent), power(node.base, node.exponent - 1)), db)
        else:
            da = memo[id(node.left)][1]
            db = memo[id(node.right)][1]
            if node.op == "add":
                d = add(da, db)
            elif node.op == "sub":
                d = sub(da, db)
            elif node.op == "mul":
                d = add(mul(da, node.right), mul(node.left, db))
            else:
                d = div(sub(mul(da, node.right), mul(node.left, db)), power(node.right, 2))
        # keep the node alive so its id cannot be recycled while memoized
        memo[id(node)] = (node, d)
    return memo[id(e)][1]


def expr_jacobian(f: Sequence[Expr], cls: str, size: int) -> list[list[Expr]]:
    """Matrix of partials ``d f_i / d cls_j`` for ``j = 1..size``."""
    out = []
    for fi in f:
        out.append([expr_diff(fi, cls, j) for j in range(1, size + 1)])
    return out


def depends_on(e: Expr, cls: str, index: int | None = None) -> bool:
    """Whether ``e`` structurally references the given variable (or class)."""
    for node in _postorder([e]):
        if isinstance(node, Var) and node.cls == cls and (index is None or node.index == index):
            return True
    return False


def substitute(e: Expr, mapping: Mapping[tuple[str, int], Expr], _memo: dict | None = None) -> Expr:
    """Replace variables by expressions; keys are ``(cls, index)`` with u as ``("u", 1)``."""
    memo = {} if _memo is None else _memo
    for node in _postorder([e]):
        if id(node) in memo:
            continue
        if isinstance(node, Var):
            new = mapping.get((node.cls, node.index), node)
        elif isinstance(node, Const):
            new = node
        else:
            new = _rebuild(node, [memo[id(c)][1] for c in node.children()])
        memo[id(node)] = (node, new)
    return memo[id(e)][1]


# -- Taylor jets ------------------------------------------------------------


def _series_compose(coeffs: Sequence[float], g: TruncatedPoly) -> TruncatedPoly:
    """``sum(coeffs[k] * g**k)`` for ``g`` without constant term, by Horner."""
    out = TruncatedPoly.constant(g.arity, g.cap, coeffs[-1])
    for c in reversed(coeffs[:-1]):
        out = out * g + c
    return out


def _jet_unary(op: str, a: TruncatedPoly) -> TruncatedPoly:
    cap = a.cap
    c0 = a.coefficient((0,) * a.arity)
    g = a - c0
    fact = [1.0 / math.factorial(k) for k in range(cap + 1)]
    if op == "exp":
        return _series_compose(fact, g) * math.exp(c0)
    # sin(c0 + g) = sin c0 cos g + cos c0 sin g
    cos_g = [(-1) ** (k // 2) * fact[k] if k % 2 == 0 else 0.0 for k in range(cap + 1)]
    sin_g = [(-1) ** (k // 2) * fact[k] if k % 2 == 1 else 0.0 for k in range(cap + 1)]
    cg = _series_compose(cos_g, g)
    sg = _series_compose(sin_g, g)
    if op == "sin":
        return cg * math.sin(c0) + sg * math.cos(c0)
    return cg * math.cos(c0) - sg * math.sin(c0)


def _jet_reciprocal(b: TruncatedPoly) -> TruncatedPoly:
    b0 = b.coefficient((0,) * b.arity)
    if abs(b0) < 1e-300:
        raise SingularJetError("denominator vanishes at the origin")
    g = (b - b0) * (-1.0 / b0)
    return _series_compose([1.0] * (b.cap + 1), g) * (1.0 / b0)


def expr_jets(exprs: Sequence[Expr], degree_cap: int, dims: Dims) -> list[TruncatedPoly]:
    """Taylor polynomials at the origin of several expressions (shared DAG walk).

    The jets live in the combined ``(x, u, w)`` space of ``dims`` (arity
    ``n + 1 + k``).
    """
    arity = dims.arity
    vals: dict[int, TruncatedPoly] = {}
    keep = []
    for node in _postorder(list(exprs)):
        if isinstance(node, Const):
            p = TruncatedPoly.constant(arity, degree_cap, node.value)
        elif isinstance(node, Var):
            limit = dims.n if node.cls == "x" else dims.k if node.cls == "w" else 1
            if node.index > limit:
                raise ValueError(f"variable {node.cls}{node.index} outside declared dimensions")
            p = TruncatedPoly.variable(arity, degree_cap, dims.position(node.cls, node.index))
        elif isinstance(node, Unary):
            a = vals[id(node.arg)]
            p = -a if node.op == "neg" else _jet_unary(node.op, a)
        elif isinstance(node, Pow):
            p = vals[id(node.base)] ** node.exponent
        else:
            a, b = vals[id(node.left)], vals[id(node.right)]
            if node.op == "add":
                p = a + b
            elif node.op == "sub":
                p = a - b
            elif node.op == "mul":
                p = a * b
            else:
                p = a * _jet_reciprocal(b)
        vals[id(node)] = p
        keep.append(node)
    return [vals[id(e)] for e in exprs]


def expr_jet(e: Expr, degree_cap: int, dims: Dims) -> TruncatedPoly:
    """Taylor polynomial of ``e`` at the origin, truncated at ``degree_cap``."""
    return expr_jets([e], degree_cap, dims)[0]


def jets_vector(exprs: Sequence[Expr], degree_cap: int, dims: Dims) -> PolyVector:
    return PolyVector(expr_jets(exprs, degree_cap, dims))


# -- printing ---------------------------------------------------------------


def _fmt_const(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return f"{v:.17g}"


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return _PREC["neg"]
    if isinstance(e, Pow):
        return _PREC["pow"]
    if isinstance(e, Const) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return _PREC["neg"]
    return 5


def to_string(e: Expr) -> str:
    """Infix rendering with the minimal parentheses the parser needs."""
    out: dict[int, str] = {}
    for node in _postorder([e]):
        if isinstance(node, Const):
            s = _fmt_const(node.value)
        elif isinstance(node, Var):
            s = "u" if node.cls == "u" else f"{node.cls}{node.index}"
        elif isinstance(node, Unary):
            a = out[id(node.arg)]
            if node.op == "neg":
                s = "-" + (f"({a})" if _prec(node.arg) <= 3 else a)
            else:
                s = f"{node.op}({a})"
        elif isinstance(node, Pow):
            b = out[id(node.base)]
            s = (f"({b})" if _prec(node.base) < 5 else b) + f"^{node.exponent}"
        else:
            p = _PREC[node.op]
            a, b = out[id(node.left)], out[id(node.right)]
            if _prec(node.left) < p:
                a = f"({a})"
            if _prec(node.right) <= p:
                b = f"({b})"
            s = f"{a} {_BIN_SYMBOL[node.op]} {b}"
        out[id(node)] = s
    return out[id(e)]


# -- code generation --------------------------------------------------------

_NUMPY_NS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_MATH_NS = {"sin": math.sin, "cos": math.cos, "exp": math.exp}


def compile_exprs(
    exprs: Sequence[Expr], backend: str = "math"
) -> Callable[[Sequence[float], float, Sequence[float]], tuple]:
    """Generate a Python function ``fn(x, u, w) -> tuple`` evaluating ``exprs``.

    Structurally identical subexpressions are computed once.  With the
    ``"numpy"`` backend the inputs may be arrays (``x[i]`` is then a vector of
    sample values) and everything broadcasts.
    """
    lines = []
    names: dict[int, str] = {}
    by_key: dict[tuple, str] = {}
    counter = 0
    for node in _postorder(list(exprs)):
        if isinstance(node, Const):
            names[id(node)] = repr(node.value)
            continue
        if isinstance(node, Var):
            names[id(node)] = "u" if node.cls == "u" else f"{node.cls}[{node.index - 1}]"
            continue
        if isinstance(node, Unary):
            a = names[id(node.arg)]
            key = (node.op, a)
            code = f"-{a}" if node.op == "neg" else f"{node.op}({a})"
        elif isinstance(node, Pow):
            a = names[id(node.base)]
            key = ("pow", a, node.exponent)
            code = f"{a} ** {node.exponent}"
        else:
            a, b = names[id(node.left)], names[id(node.right)]
            key = (node.op, a, b)
            code = f"{a} {_BIN_SYMBOL[node.op]} {b}"
        if key in by_key:
            names[id(node)] = by_key[key]
            continue
        name = f"t{counter}"
        counter += 1
        lines.append(f"    {name} = {code}")
        names[id(node)] = name
        by_key[key] = name
    ret = ", ".join(names[id(e)] for e in exprs)
    src = "def _compiled(x, u, w):\n" + "\n".join(lines) + f"\n    return ({ret},)\n"
    namespace = dict(_NUMPY_NS if backend == "numpy" else _MATH_NS)
    exec(compile(src, "<mprlab-expr>", "exec"), namespace)
    fn = namespace["_compiled"]
    fn.source = src
    return fn


def poly_to_expr(p: TruncatedPoly, slots: Sequence[tuple[str, int]]) -> Expr:
    """Expression for a polynomial whose variable ``i`` is the symbol ``slots[i]``.

    ``slots`` entries are ``(cls, index)`` pairs such as ``("x", 1)``.
    """
    if len(slots) != p.arity:
        raise ValueError("need one slot per polynomial variable")
    acc: Expr = Const(0.0)
    for exps, c in sorted(p.terms.items(), key=lambda kv: (sum(kv[0]), kv[0])):
        term: Expr = Const(float(c))
        for (cls, idx), e in zip(slots, exps):
            if e:
                v = Var(cls, idx)
                term = mul(term, v if e == 1 else Pow(v, e))
        acc = add(acc, term)
    return acc

"""Scenario descriptions: plant, output, exosystem, initial state, MPR settings.

A scenario file is line-oriented text with ``[section]`` headers, ``key =
value`` entries and ``#`` comments::

    [dims]
    n = 2
    k = 2

    [plant]
    continuous = true        # f is a vector field, discretized by Lie series
    ts = pi/6
    G = 0, 1                 # optional; defaults to df/du at the origin
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

Numeric entries may be constant formulas (``pi/6``, ``cos(pi/4)``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .expr import _postorder, Const, Dims, Expr, Var, add, expr_diff, expr_eval, mul, substitute, to_string
from .parser import ParseError, parse_expr

__all__ = [
    "ScenarioError",
    "ScenarioSpec",
    "lie_derivative",
    "lie_discretize",
    "parse_scenario",
    "load_scenario",
    "scenario_to_text",
]


class ScenarioError(ValueError):
    """Malformed scenario file or inconsistent scenario fields."""


def lie_derivative(g: Sequence[Expr], f: Sequence[Expr], n: int) -> list[Expr]:
    """``L_f(g) = (dg/dx) f`` built symbolically."""
    out = []
    for gi in g:
        acc: Expr = Const(0.0)
        for j in range(1, n + 1):
            acc = add(acc, mul(expr_diff(gi, "x", j), f[j - 1]))
        out.append(acc)
    return out


def lie_discretize(f_ct: Sequence[Expr], t_s: float, n: int | None = None) -> list[Expr]:
    """Third-degree Lie series step of the unforced field ``x' = f(x)``.

    Returns ``x + f t_s + L_f(f) t_s^2/2 + L_f^2(f) t_s^3/6`` as expressions.
    Any control symbol in ``f_ct`` is set to zero first.
    """
    if t_s <= 0:
        raise ValueError("time step must be positive")
    n = len(f_ct) if n is None else n
    f0 = [substitute(fi, {("u", 1): Const(0.0)}) for fi in f_ct]
    l1 = lie_derivative(f0, f0, n)
    l2 = lie_derivative(l1, f0, n)
    out = []
    for i in range(n):
        e = add(Var("x", i + 1), mul(Const(t_s), f0[i]))
        e = add(e, mul(Const(t_s**2 / 2.0), l1[i]))
        e = add(e, mul(Const(t_s**3 / 6.0), l2[i]))
        out.append(e)
    return out


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything needed to build a model and run the regulation pipeline."""

    dims: Dims
    plant_f: tuple[Expr, ...]
    output_h: Expr
    exo_a: tuple[Expr, ...]
    x0: tuple[float, ...]
    w0: tuple[float, ...]
    continuous: bool = False
    ts: float | None = None
    G: tuple[float, ...] | None = None
    horizon: int = 4
    degree: int = 2
    umax: float | None = None
    name: str = "scenario"
    sources: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.plant_f) != self.dims.n:
            raise ScenarioError(f"expected {self.dims.n} plant equations, got {len(self.plant_f)}")
        if len(self.exo_a) != self.dims.k:
            raise ScenarioError(f"expected {self.dims.k} exosystem equations, got {len(self.exo_a)}")
        if len(self.x0) != self.dims.n or len(self.w0) != self.dims.k:
            raise ScenarioError("initial state lengths do not match dims")
        if self.continuous and (self.ts is None or self.ts <= 0):
            raise ScenarioError("continuous plants need a positive time step ts")
        if self.G is not None and len(self.G) != self.dims.n:
            raise ScenarioError("G must have n entries")

    def input_column(self) -> tuple[float, ...]:
        """The constant input column added after discretization."""
        if self.G is not None:
            return self.G
        zeros = [0.0] * self.dims.n
        return tuple(
            expr_eval(expr_diff(fi, "u"), zeros, 0.0, [0.0] * self.dims.k) for fi in self.plant_f
        )

    def discrete_plant(self) -> tuple[Expr, ...]:
        """The map ``x+ = f(x, u, w)`` (Lie-discretized when continuous)."""
        if not self.continuous:
            return self.plant_f
        F = lie_discretize(self.plant_f, self.ts, self.dims.n)
        G = self.input_column()
        return tuple(add(Fi, mul(Const(gi), Var("u"))) for Fi, gi in zip(F, G))


_SECTION = re.compile(r"\[\s*(\w+)\s*\]")


def _number(text: str, where: str) -> float:
    try:
        e = parse_expr(text, Dims(0, 0))
        return float(expr_eval(e))
    except (ParseError, ArithmeticError) as exc:
        raise ScenarioError(f"{where}: cannot read a number from {text!r} ({exc})") from exc


def _vector(text: str, where: str) -> tuple[float, ...]:
    return tuple(_number(t, where) for t in text.split(",") if t.strip())


def parse_scenario(text: str, name: str = "scenario") -> ScenarioSpec:
    """Parse the scenario text format described in the module docstring."""
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.fullmatch(line)
        if m:
            current = m.group(1).lower()
            sections.setdefault(current, {})
            continue
        if current is None:
            raise ScenarioError(f"line {lineno}: entry outside of a [section]")
        key, sep, value = line.partition("=")
        if not sep:
            raise ScenarioError(f"line {lineno}: expected key = value")
        sections[current][key.strip()] = (value.strip(), lineno)

    def get(sec, key, default=None):
        return sections.get(sec, {}).get(key, (default, None))

    for required in ("dims", "plant", "exo", "init"):
        if required not in sections:
            raise ScenarioError(f"missing [{required}] section")
    n = int(_number(get("dims", "n")[0] or "", "[dims] n"))
    k = int(_number(get("dims", "k")[0] or "", "[dims] k"))
    for key in ("m", "p"):
        v = get("dims", key)[0]
        if v is not None and int(_number(v, f"[dims] {key}")) != 1:
            raise ScenarioError(f"only single-input single-output plants are supported ({key}={v})")
    dims = Dims(n, k)

    def formula(sec: str, key: str) -> Expr:
        src, lineno = get(sec, key)
        if src is None:
            raise ScenarioError(f"[{sec}] is missing {key}")
        try:
            return parse_expr(src, dims)
        except ParseError as exc:
            raise ScenarioError(f"line {lineno}: {exc}") from exc

    plant_f = tuple(formula("plant", f"f{i}") for i in range(1, n + 1))
    output_h = formula("plant", "h")
    exo_a = tuple(formula("exo", f"a{j}") for j in range(1, k + 1))
    for j, a in enumerate(exo_a, start=1):
        if any(isinstance(v, Var) and v.cls != "w" for v in _vars(a)):
            raise ScenarioError(f"exosystem equation a{j} may only depend on w")

    continuous = (get("plant", "continuous")[0] or "false").lower() in ("1", "true", "yes")
    ts_txt = get("plant", "ts")[0]
    G_txt = get("plant", "G")[0]
    umax_txt = get("mpr", "umax")[0]
    spec = ScenarioSpec(
        dims=dims,
        plant_f=plant_f,
        output_h=output_h,
        exo_a=exo_a,
        x0=_vector(get("init", "x0")[0] or "", "[init] x0"),
        w0=_vector(get("init", "w0")[0] or "", "[init] w0"),
        continuous=continuous,
        ts=_number(ts_txt, "[plant] ts") if ts_txt is not None else None,
        G=_vector(G_txt, "[plant] G") if G_txt is not None else None,
        horizon=int(_number(get("mpr", "horizon", "4")[0], "[mpr] horizon")),
        degree=int(_number(get("mpr", "degree", "2")[0], "[mpr] degree")),
        umax=None if umax_txt in (None, "none", "inf") else _number(umax_txt, "[mpr] umax"),
        name=name,
        sources={sec: {k: v for k, (v, _) in entries.items()} for sec, entries in sections.items()},
    )
    return spec


def _vars(e: Expr):
    return [node for node in _postorder([e]) if isinstance(node, Var)]


def load_scenario(path: str | Path) -> ScenarioSpec:
    path = Path(path)
    return parse_scenario(path.read_text(), name=path.stem)


def scenario_to_text(spec: ScenarioSpec) -> str:
    """Render a scenario back into the file format."""

    def vec(v):
        return ", ".join(f"{x:.17g}" for x in v)

    lines = ["[dims]", f"n = {spec.dims.n}", f"k = {spec.dims.k}", "", "[plant]"]
    if spec.continuous:
        lines += ["continuous = true", f"ts = {spec.ts:.17g}"]
    if spec.G is not None:
        lines.append(f"G = {vec(spec.G)}")
    lines += [f"f{i} = {to_string(f)}" for i, f in enumerate(spec.plant_f, start=1)]
    lines += [f"h = {to_string(spec.output_h)}", "", "[exo]"]
    lines += [f"a{j} = {to_string(a)}" for j, a in enumerate(spec.exo_a, start=1)]
    lines += ["", "[init]", f"x0 = {vec(spec.x0)}", f"w0 = {vec(spec.w0)}", "", "[mpr]"]
    lines += [
        f"horizon = {spec.horizon}",
        f"degree = {spec.degree}",
        f"umax = {'none' if spec.umax is None else f'{spec.umax:.17g}'}",
    ]
    return "\n".join(lines) + "\n"

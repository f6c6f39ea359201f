"""Formula language for plants and exosystems: parsing, evaluation, jets."""

from .expr import (
    Binary,
    Const,
    Dims,
    EvaluationError,
    Expr,
    Pow,
    SingularJetError,
    Unary,
    Var,
    compile_exprs,
    depends_on,
    expr_diff,
    expr_eval,
    expr_jacobian,
    expr_jet,
    expr_jets,
    jets_vector,
    poly_to_expr,
    substitute,
    to_string,
)
from .parser import ParseError, parse_expr
from .scenario import (
    ScenarioError,
    ScenarioSpec,
    lie_derivative,
    lie_discretize,
    load_scenario,
    parse_scenario,
    scenario_to_text,
)

__all__ = [
    "Binary",
    "Const",
    "Dims",
    "EvaluationError",
    "Expr",
    "ParseError",
    "Pow",
    "ScenarioError",
    "ScenarioSpec",
    "SingularJetError",
    "Unary",
    "Var",
    "compile_exprs",
    "depends_on",
    "expr_diff",
    "expr_eval",
    "expr_jacobian",
    "expr_jet",
    "expr_jets",
    "jets_vector",
    "lie_derivative",
    "lie_discretize",
    "load_scenario",
    "parse_expr",
    "parse_scenario",
    "poly_to_expr",
    "scenario_to_text",
    "substitute",
    "to_string",
]

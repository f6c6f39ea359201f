import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mprlab.dsl import Dims, expr_eval, parse_expr
from mprlab.errors import ResonanceError
from mprlab.model import SystemModel, linearize
from mprlab.regulation import (
    fbi_graded_residuals,
    fbi_residual_order,
    francis_residual,
    solve_fbi,
    solve_fbi_homogeneous,
    solve_francis_linear,
)
from mprlab.scenarios import scenario_linear_example, scenario_pendulum


@pytest.fixture(scope="module")
def lin():
    return SystemModel.from_scenario(scenario_linear_example())


@pytest.fixture(scope="module")
def pend():
    return SystemModel.from_scenario(scenario_pendulum())


class TestFrancis:
    def test_linear_example(self, lin):
        T, L = solve_francis_linear(linearize(lin))
        np.testing.assert_allclose(T, [[1, 0], [0, -1], [-0.2, -0.4]], atol=1e-14)
        np.testing.assert_allclose(L, [-0.8, 0.4], atol=1e-14)

    def test_homogeneous(self, lin):
        ld = linearize(lin)
        T, L = solve_francis_linear(dataclasses.replace(ld, B=0 * ld.B, D=0 * ld.D))
        assert not np.any(T) and not np.any(L)

    def test_pendulum_residual(self, pend):
        ld = linearize(pend)
        T, L = solve_francis_linear(ld)
        assert francis_residual(ld, T, L) <= 1e-10

    def test_resonance(self):
        # plant zero at 1 coincides with a constant exosystem
        d = Dims(2, 1)
        m = SystemModel([parse_expr("x2", d), parse_expr("u", d)], parse_expr("x2 - x1 - w1", d), [parse_expr("w1", d)])
        with pytest.raises(ResonanceError):
            solve_francis_linear(linearize(m))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-5, 5, allow_nan=False).filter(lambda s: abs(s) > 1e-3))
    def test_linear_in_b_and_d(self, s):
        ld = linearize(SystemModel.from_scenario(scenario_linear_example()))
        T, L = solve_francis_linear(ld)
        Ts, Ls = solve_francis_linear(dataclasses.replace(ld, B=s * ld.B, D=s * ld.D))
        np.testing.assert_allclose(Ts, s * T, atol=1e-12)
        np.testing.assert_allclose(Ls, s * L, atol=1e-12)


class TestFbi:
    def test_linear_corrections_vanish(self, lin):
        sol = solve_fbi(lin, 1, cap=2)
        th, al, _ = solve_fbi_homogeneous(lin, sol, 2)
        assert all(p.is_zero() for p in th) and al.is_zero()

    def test_linear_residual_vanishes(self, lin):
        # zero up to round-off, amplified by 1/eps^2
        assert fbi_residual_order(lin, solve_fbi(lin, 1)) <= 1e-12

    @pytest.mark.parametrize("degree", [2, 3, 4])
    def test_pendulum_graded_residuals(self, pend, degree):
        sol = solve_fbi(pend, degree)
        res = fbi_graded_residuals(pend, sol)
        assert len(res) == degree and max(res) <= 1e-9
        assert sol.theta.arity == 2 and all(abs(p.coefficient((0, 0))) == 0 for p in sol.theta)

    def test_pendulum_second_degree_nonzero(self, pend):
        sol = solve_fbi(pend, 1, cap=2)
        th, al, cond = solve_fbi_homogeneous(pend, sol, 2)
        assert max(p.max_abs_coefficient() for p in th) + al.max_abs_coefficient() > 1e-3
        assert np.isfinite(cond)

    def test_residual_ratio_bounded(self, pend):
        # the ratio at eps is ~ constant once the series is accurate
        sol = solve_fbi(pend, 3)
        big = fbi_residual_order(pend, sol, eps=(1e-1,))
        small = fbi_residual_order(pend, sol, eps=(1e-2,))
        assert small <= 1.5 * big
        # a lower-degree series is certified at its own, lower order
        low = solve_fbi(pend, 2)
        assert fbi_residual_order(pend, low, eps=(1e-2,)) < 10 * fbi_residual_order(pend, low, eps=(1e-1,))

    def test_preconditions(self, pend):
        sol = solve_fbi(pend, 2, cap=3)
        with pytest.raises(ValueError):
            solve_fbi_homogeneous(pend, sol, 2)
        with pytest.raises(ValueError):
            solve_fbi_homogeneous(pend, sol, 4)
        with pytest.raises(ValueError):
            solve_fbi(pend, 3, cap=2)

    def test_output_chain_vanishes_on_manifold(self, pend):
        D = 3
        sol = solve_fbi(pend, D)
        rng = np.random.default_rng(0)
        dirs = rng.normal(size=(8, 2))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        for eps in (1e-1, 1e-2):
            for wd in dirs:
                w = eps * wd
                x, u = sol.theta(w), float(sol.alpha(w))
                for j in range(pend.relative_degree + 1):
                    val = expr_eval(pend.chain[j], x, u, w)
                    assert abs(val) <= 50 * eps ** (D + 1)

    def test_debug_text(self, pend):
        text = solve_fbi(pend, 2).to_debug()
        assert "theta" in text.lower() and "alpha" in text.lower()

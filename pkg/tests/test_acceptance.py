"""End-to-end acceptance gate: one test per criterion, each timed."""

import io
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import test_dsl
import test_poly
from mprlab.cli import run_cli
from mprlab.model import SystemModel, linearize, structure_report
from mprlab.mpr import MprConfig, mpr_run, shooting_objective, solve_finite_horizon
from mprlab.poly import TruncatedPoly
from mprlab.regulation import fbi_graded_residuals, solve_fbi, solve_francis_linear
from mprlab.scenarios import scenario_linear_example, scenario_pendulum
from mprlab.sim import STEADY_WINDOW, rollout_polynomial, steady_state_metrics
from mprlab.terminal import dp_residual_ratios, synthesize_terminal

REFERENCE_CUBIC = 0.0108
REFERENCE_LINEAR = 0.0499


@pytest.fixture(scope="module")
def lin():
    return SystemModel.from_scenario(scenario_linear_example())


@pytest.fixture(scope="module")
def pend():
    return SystemModel.from_scenario(scenario_pendulum())


def test_criterion_1_linear_exactness(lin, record_criterion):
    t0 = time.perf_counter()
    ld = linearize(lin)
    T, L = solve_francis_linear(ld)
    errs = {
        "T": np.max(np.abs(T - np.array([[1, 0], [0, -1], [-0.2, -0.4]]))),
        "L": np.max(np.abs(L - np.array([-0.8, 0.4]))),
    }
    law = synthesize_terminal(lin, 2)
    P, K = law.P, law.K
    errs["P"] = np.max(np.abs(P - np.diag([1.0, 1.0, 0.0])))
    errs["K"] = np.max(np.abs(np.ravel(K) - np.array([0.0, 0.0, -1.0])))
    # reference pi = (x1 - w1)^2 + (x2 + w2)^2 and kappa = -x3 - w1 in (x1, x2, x3, w1, w2)
    e = lambda *ix: tuple(ix)  # noqa: E731
    pi_ref = TruncatedPoly(5, law.piT.cap, {
        e(2, 0, 0, 0, 0): 1.0, e(1, 0, 0, 1, 0): -2.0, e(0, 0, 0, 2, 0): 1.0,
        e(0, 2, 0, 0, 0): 1.0, e(0, 1, 0, 0, 1): 2.0, e(0, 0, 0, 0, 2): 1.0,
    })
    kappa_ref = TruncatedPoly(5, law.kappaT.cap, {e(0, 0, 1, 0, 0): -1.0, e(0, 0, 0, 1, 0): -1.0})
    errs["pi"] = (law.piT - pi_ref).max_abs_coefficient()
    errs["kappa"] = (law.kappaT - kappa_ref).max_abs_coefficient()
    dt = time.perf_counter() - t0
    ok = errs["T"] <= 1e-9 and errs["L"] <= 1e-9 and all(errs[k] <= 1e-8 for k in ("P", "K", "pi", "kappa"))
    ok = ok and dt < 1.0
    detail = ", ".join(f"{k} err {v:.1e}" for k, v in errs.items()) + f"; {dt:.2f} s"
    record_criterion(1, ok, detail)
    assert ok, detail


def test_criterion_2_structure(lin, pend, record_criterion):
    t0 = time.perf_counter()
    a = structure_report(lin)
    b = structure_report(pend)
    A = linearize(pend).A
    checks = {
        "linear r": a.relative_degree == 2,
        "linear poles": np.allclose(a.plant_poles, 0.0, atol=1e-12),
        "linear zero": a.plant_zeros.size == 1 and abs(a.plant_zeros[0] + 0.5) <= 1e-12,
        "linear exo": np.allclose(sorted(a.exo_poles, key=np.imag), [-1j, 1j], atol=1e-12),
        "pendulum r": b.relative_degree == 2,
        "pendulum zeros": b.plant_zeros.size == 0,
        "pendulum exo": np.allclose(
            sorted(b.exo_poles, key=np.imag), np.exp(np.array([-1j, 1j]) * np.pi / 4), atol=1e-12
        ),
        "A^8 = I": np.max(np.abs(np.linalg.matrix_power(A, 8) - np.eye(2))) <= 1e-12,
    }
    dt = time.perf_counter() - t0
    bad = [k for k, v in checks.items() if not v]
    ok = not bad and dt < 1.0
    detail = ("all structure checks hold" if not bad else "failed: " + ", ".join(bad)) + f"; {dt:.2f} s"
    record_criterion(2, ok, detail)
    assert ok, detail


def test_criterion_3_mpr_equals_feedback(lin, record_criterion):
    law = synthesize_terminal(lin, 2)
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    worst = 0.0
    for T in (1, 2, 4):
        cfg = MprConfig(T, law)
        for _ in range(20):
            x, w = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 2)
            sol = solve_finite_horizon(lin, cfg, x, w)
            worst = max(worst, abs(sol.first - (-x[2] - w[0])))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-5 and dt < 5.0
    detail = f"max |u0 - kappa| = {worst:.1e} over 60 problems; {dt:.2f} s"
    record_criterion(3, ok, detail)
    assert ok, detail


def _avg_error(m, law, x0):
    tr = rollout_polynomial(m, law, x0, (1.0, 0.0), STEADY_WINDOW[1])
    if tr.diverged:
        return None, tr.diverged_at
    return steady_state_metrics(tr).steady_state_avg_error, None


def test_criterion_4_controller_comparison(pend, record_criterion):
    t0 = time.perf_counter()
    cubic, cubic_div = _avg_error(pend, synthesize_terminal(pend, 4), (0.0, 0.0))
    linear, linear_div = _avg_error(pend, synthesize_terminal(pend, 2), (0.0, 0.0))
    dt = time.perf_counter() - t0

    def show(v, at):
        return f"diverged at step {at}" if v is None else f"{v:.4g}"

    ok = (
        cubic is not None
        and linear is not None
        and cubic < linear
        and abs(cubic - REFERENCE_CUBIC) <= 0.5 * REFERENCE_CUBIC
        and abs(linear - REFERENCE_LINEAR) <= 0.5 * REFERENCE_LINEAR
        and dt < 10.0
    )
    detail = f"cubic {show(cubic, cubic_div)}, linear {show(linear, linear_div)}; {dt:.2f} s"
    record_criterion(4, ok, detail)
    assert ok, detail


def test_criterion_5_stability_boundary(pend, record_criterion):
    t0 = time.perf_counter()
    laws = {"cubic": synthesize_terminal(pend, 4), "linear": synthesize_terminal(pend, 2)}
    c15, _ = _avg_error(pend, laws["cubic"], (1.5, 0.0))
    l15, _ = _avg_error(pend, laws["linear"], (1.5, 0.0))
    c20, _ = _avg_error(pend, laws["cubic"], (2.0, 0.0))
    l20, _ = _avg_error(pend, laws["linear"], (2.0, 0.0))
    run = mpr_run(pend, MprConfig(4, laws["cubic"]), (2.0, 0.0), (1.0, 0.0), STEADY_WINDOW[1])
    mpr_ok = not run.diverged and steady_state_metrics(run.trajectory).steady_state_avg_error < 0.05
    dt = time.perf_counter() - t0
    parts = {
        "cubic tracks from 1.5": c15 is not None and c15 < 0.05,
        "linear diverges from 1.5": l15 is None,
        "cubic diverges from 2": c20 is None,
        "linear diverges from 2": l20 is None,
        "MPR tracks from 2": mpr_ok,
    }
    ok = all(parts.values()) and dt < 10.0
    detail = ", ".join(f"{k}: {'yes' if v else 'no'}" for k, v in parts.items()) + f"; {dt:.2f} s"
    record_criterion(5, ok, detail)
    assert ok, detail


def test_criterion_6_constrained_mpr(pend, record_criterion):
    law = synthesize_terminal(pend, 4)
    t0 = time.perf_counter()
    free = mpr_run(pend, MprConfig(4, law), (2.0, 0.0), (1.0, 0.0), STEADY_WINDOW[1])
    boxed = mpr_run(pend, MprConfig(4, law, u_box=(-2.0, 2.0)), (2.0, 0.0), (1.0, 0.0), STEADY_WINDOW[1])
    dt = time.perf_counter() - t0
    in_box = not boxed.diverged and bool(np.all(np.abs(boxed.trajectory.u) <= 2.0))
    e_free = steady_state_metrics(free.trajectory).steady_state_avg_error
    e_box = steady_state_metrics(boxed.trajectory).steady_state_avg_error if not boxed.diverged else np.inf
    ok = in_box and e_box <= 2.0 * e_free and dt < 20.0
    detail = (
        f"|u| <= 2 {'holds' if in_box else 'violated'}, avg error boxed {e_box:.3g} "
        f"vs unconstrained {e_free:.3g}; {dt:.2f} s"
    )
    record_criterion(6, ok, detail)
    assert ok, detail


# property tests from the unit suites, rerun with 1000 cases each
PROPERTY_TESTS = [
    (test_poly.test_add_commutative_associative, (test_poly.poly_triples(),)),
    (test_poly.test_mul_commutative_associative_distributive, (test_poly.poly_triples(),)),
    (test_poly.test_leibniz, (test_poly.polys(), test_poly.polys(), st.integers(0, 1))),
    (
        test_poly.test_composition_matches_evaluation,
        tuple(test_poly.polys(arity=2, cap=4, max_degree=2) for _ in range(3)) + (test_poly.points,),
    ),
    (test_dsl.test_jet_matches_eval_for_polynomials, (test_dsl.poly_sources(), st.lists(test_dsl.unit, min_size=5, max_size=5))),
    (test_dsl.test_jet_gradient_matches_finite_differences, (test_dsl.smooth_sources(),)),
]


def _timed(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def test_criterion_7_property_suites(pend, record_criterion):
    times, failures = {}, []

    def fbi():
        res = fbi_graded_residuals(pend, solve_fbi(pend, 3))
        if max(res) > 1e-9:
            failures.append(f"FBI residual {max(res):.1e}")

    times["FBI"] = _timed(fbi)

    def dp():
        for cd in (2, 4):
            law = synthesize_terminal(pend, cd)
            r = np.asarray(dp_residual_ratios(pend, law))
            if not (np.all(np.isfinite(r)) and np.all(r < 10) and np.all(np.diff(r) <= 1e-12 + 1e-9 * r[:-1])):
                failures.append(f"dp ratios degree {cd}: {np.array2string(r, precision=3)}")

    times["dp residual"] = _timed(dp)

    def adjoint():
        law = synthesize_terminal(pend, 4)
        rng = np.random.default_rng(1)
        done, worst, h = 0, 0.0, 1e-5
        while done < 50:
            T = int(rng.integers(1, 6))
            cfg = MprConfig(T, law, terminal_level=1e-3 if done % 2 else None)
            mu = 10.0 if done % 2 else 0.0
            x = rng.uniform(-1, 1, 2)
            ang = rng.uniform(0, 2 * np.pi)
            ws = [np.array([np.cos(ang), np.sin(ang)])]
            for _ in range(T):
                ws.append(pend.exo(ws[-1]))
            ws = np.array(ws)
            u = rng.uniform(-1, 1, T)
            J, g, _ = shooting_objective(pend, cfg, x, ws, u, mu)
            if not np.isfinite(J) or J > 1e6:
                continue
            done += 1
            fd = np.empty(T)
            for s in range(T):
                e = np.zeros(T)
                e[s] = h
                fd[s] = (
                    shooting_objective(pend, cfg, x, ws, u + e, mu, gradient=False)[0]
                    - shooting_objective(pend, cfg, x, ws, u - e, mu, gradient=False)[0]
                ) / (2 * h)
            worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-8))
        if worst > 1e-5:
            failures.append(f"adjoint relative error {worst:.1e}")

    times["adjoint"] = _timed(adjoint)

    for fn, strategies in PROPERTY_TESTS:
        test = settings(max_examples=1000, deadline=None, database=None)(given(*strategies)(fn.hypothesis.inner_test))

        def run(test=test, name=fn.__name__):
            try:
                test()
            except Exception as exc:  # noqa: BLE001
                failures.append(f"{name}: {type(exc).__name__}")

        times[fn.__name__] = _timed(run)

    slow = [k for k, v in times.items() if v >= 30.0]
    ok = not failures and not slow
    detail = f"{len(times)} suites, slowest {max(times.values()):.1f} s"
    if failures or slow:
        detail += "; " + "; ".join(failures + [f"{k} too slow" for k in slow])
    record_criterion(7, ok, detail)
    assert ok, detail


def test_criterion_8_demo_determinism(tmp_path, record_criterion):
    t0 = time.perf_counter()
    for tag in ("a", "b"):
        code = run_cli(["demo", "pendulum", "--seed", "0", "--out", str(tmp_path / tag)], io.StringIO(), io.StringIO())
        assert code == 0
    files_a = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    files_b = sorted(p.name for p in (tmp_path / "b").glob("*.csv"))
    same = files_a == files_b and len(files_a) > 0 and all(
        (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in files_a
    )
    dt = time.perf_counter() - t0
    detail = f"{len(files_a)} CSV files {'identical' if same else 'differ'}; {dt:.1f} s"
    record_criterion(8, same, detail)
    assert same, detail

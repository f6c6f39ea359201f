"""Command-line front end: ``mprlab {check,synth,simulate,mpr,demo}``.

Exit codes: 0 success, 1 structural hypothesis fails, 2 synthesis or solver
error, 64 usage error (bad flags, unknown scenario, unreadable file).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .dsl import ScenarioError, ScenarioSpec, load_scenario
from .errors import MetricError, MprlabError, SolverError, StructureError, SynthesisError
from .model import SystemModel, require_structure, structure_report
from .mpr import MprConfig, mpr_run
from .scenarios import builtin
from .sim import STEADY_WINDOW, Trajectory, rollout_polynomial, steady_state_metrics
from .terminal import TerminalLaw, dp_residual_ratios, estimate_lyapunov_region, synthesize_terminal

__all__ = ["run_cli", "main", "EXIT_OK", "EXIT_STRUCTURE", "EXIT_SYNTHESIS", "EXIT_USAGE"]

EXIT_OK = 0
EXIT_STRUCTURE = 1
EXIT_SYNTHESIS = 2
EXIT_USAGE = 64

CONTROLLER_DEGREES = {"linear": 2, "cubic": 4}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _vec(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _default_seed() -> int:
    env = os.environ.get("MPRLAB_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError as exc:
        raise UsageError(f"MPRLAB_SEED must be an integer, got {env!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mprlab", description="Model predictive regulation toolkit.")
    p.add_argument("--version", action="version", version=f"mprlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, outputs=True):
        sp.add_argument("scenario", help="built-in name (linear, pendulum) or scenario file path")
        sp.add_argument("--seed", type=int, default=None, help="random seed (default: $MPRLAB_SEED or 0)")
        sp.add_argument("--x0", type=_vec, default=None, help="initial plant state, e.g. 2,0")
        sp.add_argument("--w0", type=_vec, default=None, help="initial exosystem state")
        if outputs:
            sp.add_argument("--out", type=Path, default=Path("mprlab-out"), help="output directory")

    sp = sub.add_parser("check", help="print the structure report")
    common(sp, outputs=False)

    sp = sub.add_parser("synth", help="synthesize the terminal cost and feedback")
    common(sp)
    sp.add_argument("--degree", type=int, default=None, help="degree of the terminal cost")
    sp.add_argument("--no-check", action="store_true", help="skip the structure check before synthesis")

    sp = sub.add_parser("simulate", help="closed-loop run of a polynomial controller")
    common(sp)
    sp.add_argument("--controller", choices=sorted(CONTROLLER_DEGREES), default="cubic")
    sp.add_argument("--degree", type=int, default=None, help="terminal-cost degree (overrides --controller)")
    sp.add_argument("--steps", type=int, default=96)

    sp = sub.add_parser("mpr", help="receding-horizon run")
    common(sp)
    sp.add_argument("--horizon", type=int, default=None)
    sp.add_argument("--terminal-degree", type=int, default=None)
    sp.add_argument("--umax", type=float, default=None, help="impose |u| <= umax")
    sp.add_argument("--level", type=float, default=None, help="terminal level c* (default: none)")
    sp.add_argument("--steps", type=int, default=96)

    sp = sub.add_parser("demo", help="reproduce a worked example end to end")
    sp.add_argument("name", choices=["linear", "pendulum"])
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", type=Path, default=Path("mprlab-out"))
    return p


def _scenario(args) -> ScenarioSpec:
    try:
        spec = builtin(args.scenario)
    except KeyError:
        path = Path(args.scenario)
        if not path.is_file():
            raise UsageError(f"{args.scenario!r} is neither a built-in scenario nor a file")
        try:
            spec = load_scenario(path)
        except OSError as exc:
            raise UsageError(f"cannot read {path}: {exc}") from exc
    changes = {}
    if getattr(args, "x0", None) is not None:
        changes["x0"] = args.x0
    if getattr(args, "w0", None) is not None:
        changes["w0"] = args.w0
    if changes:
        try:
            spec = replace(spec, **changes)
        except ScenarioError as exc:
            raise UsageError(str(exc)) from exc
    return spec


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _kv(pairs) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs)


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _law_summary(m: SystemModel, law: TerminalLaw, seed: int) -> str:
    ratios = dp_residual_ratios(m, law, seed=seed)
    return (
        law.to_text()
        + "\n[checks]\n"
        + _kv([("dp_residual_ratios", ", ".join(f"{r:.6g}" for r in ratios)), ("seed", seed)])
    )


def _metrics_text(tr: Trajectory) -> str:
    pairs = [("steps", len(tr)), ("diverged", str(tr.diverged).lower())]
    if tr.diverged:
        pairs.append(("diverged_at", tr.diverged_at))
    try:
        return _kv(pairs) + steady_state_metrics(tr).to_text()
    except MetricError:
        finite_u = tr.u[np.isfinite(tr.u)]
        pairs.append(("max_abs_u", _fmt(float(np.max(np.abs(finite_u))) if finite_u.size else 0.0)))
        return _kv(pairs)


def cmd_check(args, out) -> int:
    m = SystemModel.from_scenario(_scenario(args))
    report = structure_report(m)
    out.write(report.to_text())
    out.write(report.summary() + "\n")
    return EXIT_OK if report.ok else EXIT_STRUCTURE


def cmd_synth(args, out) -> int:
    spec = _scenario(args)
    m = SystemModel.from_scenario(spec)
    degree = args.degree or max(spec.degree, 2)
    law = synthesize_terminal(m, degree, check=not args.no_check)
    text = _law_summary(m, law, args.seed)
    _write(args.out / f"{spec.name}-law-{degree}.txt", text)
    out.write(law.summary() + "\n")
    return EXIT_OK


def cmd_simulate(args, out) -> int:
    spec = _scenario(args)
    m = SystemModel.from_scenario(spec)
    require_structure(m)
    degree = args.degree or CONTROLLER_DEGREES[args.controller]
    law = synthesize_terminal(m, degree, check=False)
    tr = rollout_polynomial(m, law, spec.x0, spec.w0, args.steps)
    stem = f"{spec.name}-simulate-{degree}"
    _write(args.out / f"{stem}.csv", tr.to_csv())
    metrics = _metrics_text(tr)
    _write(args.out / f"{stem}-metrics.txt", metrics)
    out.write(metrics)
    return EXIT_OK


def cmd_mpr(args, out) -> int:
    spec = _scenario(args)
    m = SystemModel.from_scenario(spec)
    require_structure(m)
    horizon = args.horizon or spec.horizon
    degree = args.terminal_degree or max(spec.degree, 2)
    umax = args.umax if args.umax is not None else spec.umax
    if umax is not None and umax <= 0:
        raise UsageError("--umax must be positive")
    law = synthesize_terminal(m, degree, check=False)
    cfg = MprConfig(
        horizon, law, u_box=None if umax is None else (-umax, umax), terminal_level=args.level
    )
    run = mpr_run(m, cfg, spec.x0, spec.w0, args.steps)
    stem = f"{spec.name}-mpr-T{horizon}-d{degree}" + ("" if umax is None else f"-umax{umax:g}")
    _write(args.out / f"{stem}.csv", run.trajectory.to_csv())
    _write(args.out / f"{stem}-diagnostics.csv", run.diagnostics_csv())
    metrics = _metrics_text(run.trajectory)
    _write(args.out / f"{stem}-metrics.txt", metrics)
    out.write(metrics)
    return EXIT_OK


def _matrix(M) -> str:
    M = np.atleast_2d(M)
    return "\n".join("  " + "  ".join(f"{v:10.6f}" for v in row) for row in M)


def demo_linear(outdir: Path, seed: int, out) -> None:
    spec = builtin("linear")
    m = SystemModel.from_scenario(spec)
    report = require_structure(m)
    out.write(report.to_text() + "\n")
    law = synthesize_terminal(m, 2, check=False)
    for name, M in (("T", law.T), ("L", law.L), ("P", law.P), ("K", law.K)):
        out.write(f"{name} =\n{_matrix(M)}\n")
    names = law.names()
    out.write("pi(x, w) =\n" + law.piT.to_debug(names) + "\n")
    out.write("kappa(x, w) =\n" + law.kappaT.to_debug(names) + "\n")
    _write(outdir / "linear-law.txt", _law_summary(m, law, seed))
    tr = rollout_polynomial(m, law, spec.x0, spec.w0, 24)
    _write(outdir / "linear-simulate.csv", tr.to_csv())
    run = mpr_run(m, MprConfig(spec.horizon, law), spec.x0, spec.w0, 24)
    _write(outdir / "linear-mpr.csv", run.trajectory.to_csv())
    gap = float(np.max(np.abs(run.trajectory.u - tr.u)))
    out.write(f"max |u_mpr - u_feedback| over 24 steps = {gap:.3g}\n")


def demo_pendulum(outdir: Path, seed: int, out) -> None:
    spec = builtin("pendulum")
    m = SystemModel.from_scenario(spec)
    report = require_structure(m)
    out.write(report.to_text() + "\n")
    laws = {name: synthesize_terminal(m, d, check=False) for name, d in CONTROLLER_DEGREES.items()}
    for name, law in laws.items():
        _write(outdir / f"pendulum-law-{name}.txt", _law_summary(m, law, seed))
    lines = []
    for x0 in ((0.0, 0.0), (1.5, 0.0), (2.0, 0.0)):
        for name, law in laws.items():
            tr = rollout_polynomial(m, law, x0, spec.w0, 96)
            tag = f"x0={x0[0]:g},{x0[1]:g}"
            _write(outdir / f"pendulum-{name}-{tag}.csv", tr.to_csv())
            if tr.diverged:
                lines.append(f"{name:6s} {tag}: diverged at step {tr.diverged_at}")
            else:
                met = steady_state_metrics(tr)
                lines.append(f"{name:6s} {tag}: steady-state avg |y| = {met.steady_state_avg_error:.4g}")
    law4 = laws["cubic"]
    c_star, _ = estimate_lyapunov_region(m, law4, seed=seed)
    lines.append(f"terminal level estimate c* = {c_star:.4g} (|w| <= 1)")
    for umax in (None, 2.0):
        cfg = MprConfig(spec.horizon, law4, u_box=None if umax is None else (-umax, umax))
        run = mpr_run(m, cfg, (2.0, 0.0), spec.w0, 96)
        tag = "mpr" if umax is None else f"mpr-umax{umax:g}"
        _write(outdir / f"pendulum-{tag}.csv", run.trajectory.to_csv())
        _write(outdir / f"pendulum-{tag}-diagnostics.csv", run.diagnostics_csv())
        if run.diverged:
            lines.append(f"{tag}: diverged at step {run.diverged_at}")
        else:
            met = steady_state_metrics(run.trajectory)
            lines.append(
                f"{tag}: steady-state avg |y| = {met.steady_state_avg_error:.4g}, "
                f"max |u| = {met.max_abs_u:.4g}"
            )
    text = "\n".join(lines) + "\n"
    _write(outdir / "pendulum-summary.txt", text)
    out.write(text)


def cmd_demo(args, out) -> int:
    outdir = args.out
    if args.name == "linear":
        demo_linear(outdir, args.seed, out)
    else:
        demo_pendulum(outdir, args.seed, out)
    return EXIT_OK


COMMANDS = {
    "check": cmd_check,
    "synth": cmd_synth,
    "simulate": cmd_simulate,
    "mpr": cmd_mpr,
    "demo": cmd_demo,
}


def run_cli(argv=None, out=None, err=None) -> int:
    """Run the command line and return the exit code (never calls ``sys.exit``)."""
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    try:
        args = build_parser().parse_args(argv)
        if args.seed is None:
            args.seed = _default_seed()
        for name in ("steps", "horizon", "degree", "terminal_degree"):
            value = getattr(args, name, None)
            if value is not None and value < 1:
                raise UsageError(f"--{name.replace('_', '-')} must be positive")
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        err.write(f"mprlab: usage error: {exc}\n")
        return EXIT_USAGE
    except StructureError as exc:
        err.write(f"mprlab: error: {type(exc).__module__}.{type(exc).__name__}: {exc}\n")
        return EXIT_STRUCTURE
    except (SynthesisError, SolverError, MetricError) as exc:
        err.write(f"mprlab: error: {type(exc).__module__}.{type(exc).__name__}: {exc}\n")
        return EXIT_SYNTHESIS
    except (ScenarioError, ValueError) as exc:
        err.write(f"mprlab: usage error: {type(exc).__module__}.{type(exc).__name__}: {exc}\n")
        return EXIT_USAGE
    except MprlabError as exc:
        err.write(f"mprlab: error: {type(exc).__module__}.{type(exc).__name__}: {exc}\n")
        return EXIT_SYNTHESIS


def main() -> None:
    sys.exit(run_cli())

import io
import subprocess
import sys

import pytest

from mprlab.cli import EXIT_OK, EXIT_STRUCTURE, EXIT_SYNTHESIS, EXIT_USAGE, run_cli
from mprlab.scenarios import LINEAR_EXAMPLE

NON_MINIMUM_PHASE = """\
[dims]
n = 2
k = 1
[plant]
f1 = x2
f2 = u
h = x2 - 2*x1 - w1
[exo]
a1 = w1
[init]
x0 = 0, 0
w0 = 1
"""

# plant zero at 1 coincides with the constant exosystem
RESONANT = NON_MINIMUM_PHASE.replace("2*x1", "x1")


def cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run_cli(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


def test_check_builtin():
    code, out, _ = cli("check", "linear")
    assert code == EXIT_OK
    assert "relative_degree = 2" in out


def test_check_structure_failure(tmp_path):
    path = tmp_path / "nmp.scn"
    path.write_text(NON_MINIMUM_PHASE)
    code, out, _ = cli("check", str(path))
    assert code == EXIT_STRUCTURE
    assert "linearly_minimum_phase = false" in out


def test_synthesis_failure(tmp_path):
    path = tmp_path / "res.scn"
    path.write_text(RESONANT)
    code, _, err = cli("synth", str(path), "--out", str(tmp_path))
    assert code == EXIT_STRUCTURE
    code, _, err = cli("synth", str(path), "--no-check", "--out", str(tmp_path))
    assert code == EXIT_SYNTHESIS
    assert "mprlab.errors.ResonanceError" in err


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["bogus"],
        ["check", "no-such-scenario"],
        ["simulate", "linear", "--steps", "0"],
        ["simulate", "linear", "--controller", "quintic"],
        ["mpr", "linear", "--umax", "-1"],
        ["check", "linear", "--x0", "1,2"],
    ],
)
def test_usage_errors(argv):
    code, _, err = cli(*argv)
    assert code == EXIT_USAGE
    assert err.startswith("mprlab: usage error")


def test_bad_seed_env(monkeypatch):
    monkeypatch.setenv("MPRLAB_SEED", "abc")
    assert cli("check", "linear")[0] == EXIT_USAGE


def test_user_file_matches_builtin(tmp_path):
    path = tmp_path / "linear.scn"
    path.write_text(LINEAR_EXAMPLE)
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert cli("simulate", "linear", "--steps", "20", "--out", str(a))[0] == EXIT_OK
    assert cli("simulate", str(path), "--steps", "20", "--out", str(b))[0] == EXIT_OK
    (fa,) = a.glob("*.csv")
    (fb,) = b.glob("*.csv")
    assert fa.read_bytes() == fb.read_bytes()


def test_synth_writes_law_and_seed(tmp_path, monkeypatch):
    monkeypatch.setenv("MPRLAB_SEED", "7")
    code, _, _ = cli("synth", "linear", "--out", str(tmp_path))
    assert code == EXIT_OK
    text = (tmp_path / "linear-law-2.txt").read_text()
    assert "seed = 7" in text and "dp_residual_ratios" in text
    code, _, _ = cli("synth", "linear", "--seed", "3", "--out", str(tmp_path))
    assert "seed = 3" in (tmp_path / "linear-law-2.txt").read_text()


def test_simulate_metrics(tmp_path):
    code, out, _ = cli("simulate", "linear", "--steps", "96", "--out", str(tmp_path))
    assert code == EXIT_OK
    kv = dict(line.split(" = ") for line in out.splitlines())
    assert kv["diverged"] == "false" and float(kv["steady_state_avg_error"]) < 1e-10
    assert (tmp_path / "linear-simulate-4.csv").read_text().startswith("t,x1,x2,x3,w1,w2,u,y\n")


def test_simulate_divergence_is_data(tmp_path):
    code, out, _ = cli("simulate", "pendulum", "--controller", "linear", "--x0", "2,0", "--out", str(tmp_path))
    assert code == EXIT_OK
    assert "diverged = true" in out


def test_mpr_constrained_deterministic(tmp_path):
    args = ["mpr", "pendulum", "--horizon", "4", "--terminal-degree", "4", "--umax", "2", "--steps", "24", "--x0", "2,0"]
    assert cli(*args, "--out", str(tmp_path / "a"))[0] == EXIT_OK
    assert cli(*args, "--out", str(tmp_path / "b"))[0] == EXIT_OK
    name = "pendulum-mpr-T4-d4-umax2.csv"
    first = (tmp_path / "a" / name).read_bytes()
    assert first == (tmp_path / "b" / name).read_bytes()
    _, out, _ = cli(*args, "--out", str(tmp_path / "a"))
    kv = dict(line.split(" = ") for line in out.splitlines())
    assert float(kv["max_abs_u"]) <= 2.0
    assert (tmp_path / "a" / "pendulum-mpr-T4-d4-umax2-diagnostics.csv").exists()


def test_demo_linear(tmp_path):
    code, out, _ = cli("demo", "linear", "--out", str(tmp_path))
    assert code == EXIT_OK
    assert "T =" in out and "K =" in out
    assert "-0.200000" in out  # third row of T
    assert (tmp_path / "linear-mpr.csv").exists()


def test_python_dash_m(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "mprlab", "check", "pendulum"], capture_output=True, text=True, timeout=120
    )
    assert proc.returncode == 0
    assert "relative_degree = 2" in proc.stdout

from __future__ import annotations

import subprocess
import sys

import pytest

from cartan_forge.cli import main

D4 = "f4 = 1\n"


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def files(write_file):
    return {
        "d4": write_file("d4.op", D4),
        "half": write_file("half.op", "f4 = 1/2\n"),
        "d4p1": write_file("d4p1.op", "f4 = 1\nf0 = 1\n"),
        "d16": write_file("d16.op", "f4 = 16\n"),
        "phi2": write_file("phi2.map", "xi = x\nphi = 2\n"),
        "id": write_file("id.map", "xi = x\nphi = 1\n"),
        "xi2": write_file("xi2.map", "xi = 2*x\nphi = 1\n"),
    }


# --- derive ----------------------------------------------------------------


def test_derive_direct(capsys, files):
    code, out, _ = run(capsys, "derive", "--mode", "direct", "--op", files["d4"])
    assert code == 0
    assert "dtheta1 = 1/4 theta1^theta2" in out
    assert "dtheta6 = 0" in out


def test_derive_gauge(capsys, files):
    code, out, _ = run(capsys, "derive", "--mode", "gauge", "--op", files["d4"])
    assert code == 0
    assert "dtheta1 = 0" in out


def test_derive_kv(capsys, files):
    code, out, _ = run(capsys, "derive", "--mode", "direct", "--op", files["d4"], "--format", "kv")
    assert code == 0
    lines = out.splitlines()
    assert "direct.dtheta.1.coeff.1_2 = 1/4" in lines
    assert "direct.dtheta.6 = 0" in lines
    assert "direct.invariant.I = -s" in lines


def test_derive_generic_fallback(capsys, write_file):
    path = write_file("lin.op", "f4 = 1 + x\n")
    code, out, _ = run(capsys, "derive", "--mode", "gauge", "--op", path, "--format", "kv")
    assert code == 0
    assert "gauge.generic = true" in out.splitlines()


def test_derive_missing_file(capsys, tmp_path):
    code, _, err = run(capsys, "derive", "--mode", "direct", "--op", str(tmp_path / "nope.op"))
    assert code == 2
    assert "cannot read" in err


@pytest.mark.parametrize(
    "text, where",
    [
        ("f4 = 1 +\n", "line 1, column 8"),
        ("f4 = 1\nf9 = 2\n", "line 2, column 1"),
        ("f3 = 2\n", "missing f4"),
        ("f4 = x - 3\n", "f4 must be positive"),
    ],
)
def test_operator_file_errors_exit_2(capsys, write_file, text, where):
    code, _, err = run(capsys, "derive", "--mode", "direct", "--op", write_file("bad.op", text))
    assert code == 2
    assert where in err


def test_map_file_error_exit_2(capsys, files, write_file):
    bad = write_file("bad.map", "xi = x\nphi = 0\n")
    code, _, err = run(capsys, "check-equiv", "--mode", "direct", "--op", files["d4"], "--op2", files["d4"], "--map", bad)
    assert code == 2
    assert "line 2" in err and "phi must be nonzero" in err


def test_mode_is_required(capsys, files):
    code, _, _ = run(capsys, "derive", "--op", files["d4"])
    assert code == 2


# --- invariants ----------------------------------------------------------------


def test_invariants_worked_example(capsys, files):
    code, out, _ = run(capsys, "invariants", "--mode", "direct", "--op", files["d4"],
                       "--point", "1,1,0,0,0,2", "--format", "kv")
    assert code == 0
    assert "direct.invariant.I.value = -2" in out.splitlines()


def test_invariants_gauge_scaling(capsys, write_file):
    op = write_file("c.op", "f4 = 1\nf3 = 2\nf1 = -1\nf0 = 3\n")
    values = []
    for point in ("1.5,0.7,0.3,-0.2,0.9,1.1", "1.5,1.4,0.6,-0.4,1.8,2.2"):
        code, out, _ = run(capsys, "invariants", "--mode", "gauge", "--op", op, "--point", point, "--format", "kv")
        assert code == 0
        values.append([ln for ln in out.splitlines() if ".value" in ln])
    assert values[0] == values[1]


@pytest.mark.parametrize("point", ["1,0,0,0,0,2", "1,-1,0,0,0,2"])
def test_invariants_rejects_nonpositive_u(capsys, files, point):
    code, _, _ = run(capsys, "invariants", "--mode", "gauge", "--op", files["d4"], "--point", point)
    assert code == 2


def test_invariants_rejects_nonpositive_f4(capsys, write_file):
    op = write_file("neg.op", "f4 = x - 3\n")
    code, _, err = run(capsys, "invariants", "--mode", "direct", "--op", op, "--point", "1,1,0,0,0,0")
    assert code == 2
    assert "f4 must be positive" in err


def test_invariants_bad_point(capsys, files):
    code, _, _ = run(capsys, "invariants", "--mode", "direct", "--op", files["d4"], "--point", "1,2,3")
    assert code == 2


# --- check-equiv golden cases ---------------------------------------------


def test_check_equiv_constant_phi(capsys, files):
    code, out, _ = run(capsys, "check-equiv", "--mode", "direct", "--op", files["d4"], "--op2", files["half"],
                       "--map", files["phi2"])
    assert code == 0
    assert "result: equivalent" in out


@pytest.mark.parametrize("mode", ["direct", "gauge"])
def test_check_equiv_negative(capsys, files, mode):
    code, out, _ = run(capsys, "check-equiv", "--mode", mode, "--op", files["d4"], "--op2", files["d4p1"],
                       "--map", files["id"], "--format", "kv")
    assert code == 1
    assert f"{mode}.check.equivalent = false" in out.splitlines()


def test_check_equiv_scaling(capsys, files):
    code, out, _ = run(capsys, "check-equiv", "--mode", "direct", "--op", files["d4"], "--op2", files["d16"],
                       "--map", files["xi2"])
    assert code == 0


def test_check_equiv_orientation_reversing_map_is_an_input_error(capsys, files, write_file):
    flip = write_file("flip.map", "xi = -x\nphi = 1\n")
    code, _, err = run(capsys, "check-equiv", "--mode", "direct", "--op", files["d4"], "--op2", files["d4"],
                       "--map", flip)
    assert code == 2
    assert "xi'" in err


def test_check_equiv_is_deterministic(capsys, files):
    argv = ("check-equiv", "--mode", "gauge", "--op", files["d4"], "--op2", files["d4"], "--map", files["phi2"],
            "--format", "kv", "--seed", "7", "--samples", "5")
    first = run(capsys, *argv)
    assert first == run(capsys, *argv)


# --- verify-paper --------------------------------------------------------------


@pytest.mark.parametrize("mode", ["direct", "gauge"])
def test_verify_reference_rows_exit_zero(capsys, mode):
    code, out, _ = run(capsys, "verify-paper", "--mode", mode, "--format", "kv")
    assert code == 0
    assert f"{mode}.ok = true" in out.splitlines()
    assert f"{mode}.unexpected = 0" in out.splitlines()


def test_module_entry_point(files):
    proc = subprocess.run([sys.executable, "-m", "cartan_forge", "derive", "--mode", "gauge", "--op", files["d4"]],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert "dtheta1 = 0" in proc.stdout

"""Acceptance criteria 1-10, one PASS/FAIL line each.

Lines are printed as each test runs and collected into the pytest terminal
summary.  ``python tests/test_acceptance.py`` runs this file alone.
"""
from __future__ import annotations

import random
import subprocess
import sys
import time

from cartan_forge.checks import (
    bianchi_residues,
    generic_result,
    homogeneous,
    suite_antisymmetry,
    suite_coframe_equivariance,
    suite_dd_zero,
    suite_invariance_theorem,
    suite_leibniz,
    suite_operator_identity,
    suite_parameter_elimination,
    suite_rigidity,
    suite_round_trip,
    suite_stage_targets,
)
from cartan_forge.cli import main
from cartan_forge.compare import compare_with_paper, published_replay
from cartan_forge.jet_ops import Mode, OperatorSpec
from cartan_forge.pipeline import base_coframe

from conftest import ACCEPTANCE_LINES


def report(n: int, ok: bool, detail: str, seconds: float) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({seconds:.1f} s) {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def rng(name: str) -> random.Random:
    return random.Random(f"acceptance:{name}")


def test_1_engine_soundness():
    t0 = time.perf_counter()
    suites = [suite_dd_zero(rng("dd")), suite_leibniz(rng("leibniz")), suite_antisymmetry(rng("anti"))]
    dt = time.perf_counter() - t0
    ok = all(s.ok for s in suites) and suites[0].total == 112 and dt < 10
    report(1, ok, "; ".join(f"{s.name} {s.passed}/{s.total}" for s in suites), dt)


def test_2_torsion_reproduction():
    t0 = time.perf_counter()
    counts = []
    ok = True
    for mode in Mode:
        rows = [r for r in compare_with_paper(mode=mode).rows if r.kind == "torsion"]
        good = [r for r in rows if r.verdict != "mismatch" and r.expect == "equal"]
        counts.append(f"{mode} {len(good)}/{len(rows)}")
        ok = ok and len(rows) == 5 and len(good) == 5
    dt = time.perf_counter() - t0
    report(2, ok and dt < 10, "fully-free torsion " + ", ".join(counts), dt)


def test_3_normalization_schedule():
    t0 = time.perf_counter()
    targets = suite_stage_targets(rng("targets"))
    elim = suite_parameter_elimination(rng("elim"))
    dt = time.perf_counter() - t0
    ok = targets.ok and elim.ok
    report(3, ok, f"stage targets {targets.passed}/{targets.total}; empty residual and no parameters "
                  f"{elim.passed}/{elim.total}", dt)


def test_4_final_structure_equations():
    t0 = time.perf_counter()
    rigid = suite_rigidity(rng("rigidity"))
    details, ok = [f"constants across 5 operators {rigid.passed}/{rigid.total}"], rigid.ok
    for mode in Mode:
        rep = compare_with_paper(mode=mode)
        sparsity = [r for r in rep.rows if r.kind == "sparsity"]
        worst = max((r.deviation for r in rep.rows if r.expect == "equal" and r.deviation is not None), default=0.0)
        ok = ok and rep.ok and all(r.as_expected for r in sparsity) and worst <= 1e-10
        details.append(f"{mode} rows {len(rep.rows) - len(rep.unexpected)}/{len(rep.rows)} as expected "
                       f"(equal-row deviation {worst:.1e})")
    dt = time.perf_counter() - t0
    report(4, ok and dt < 60, "; ".join(details), dt)


def test_5_invariance_theorem():
    generic_result(Mode.DIRECT), generic_result(Mode.GAUGE)
    t0 = time.perf_counter()
    suites = []
    for mode in Mode:
        suites.append(suite_invariance_theorem(rng(f"theorem:{mode}"), mode, n=20))
        suites.append(suite_operator_identity(rng(f"operator:{mode}"), mode, n=50))
    dt = time.perf_counter() - t0
    ok = all(s.ok for s in suites) and dt < 30
    worst = max(s.max_deviation for s in suites)
    report(5, ok, "; ".join(f"{s.name} {s.passed}/{s.total}" for s in suites) + f" (max deviation {worst:.1e})", dt)


def test_6_coframe_equivariance():
    t0 = time.perf_counter()
    suites = [suite_coframe_equivariance(rng(f"equivariance:{mode}"), mode, n=10) for mode in Mode]
    theta6 = all(generic_result(m).coframe[5] == base_coframe(OperatorSpec.generic(), m)[5] for m in Mode)
    dt = time.perf_counter() - t0
    ok = all(s.ok for s in suites) and theta6
    report(6, ok, "; ".join(f"{s.name} {s.passed}/{s.total}" for s in suites)
           + f"; theta6 = omega6 exactly: {theta6}", dt)


def test_7_bianchi_closure():
    t0 = time.perf_counter()
    closed = {mode: sum(three.is_zero for three in bianchi_residues(mode)) for mode in Mode}
    dt = time.perf_counter() - t0
    report(7, all(v == 6 for v in closed.values()), ", ".join(f"{m} {v}/6 rows close" for m, v in closed.items()), dt)


def test_8_gauge_homogeneity():
    # The invariant gauge schedule yields three invariants; the reference
    # schedule's four expressions are checked too (see the notes in README).
    t0 = time.perf_counter()
    derived = generic_result(Mode.GAUGE).invariants.values
    reference = published_replay(OperatorSpec.generic()).invariants.values
    d_ok = {n: homogeneous(e) for n, e in derived.items()}
    r_ok = {n: homogeneous(e) for n, e in reference.items()}
    dt = time.perf_counter() - t0
    ok = all(d_ok.values()) and all(r_ok.values()) and len(r_ok) == 4
    report(8, ok, f"derived invariants {sum(d_ok.values())}/{len(d_ok)} ({', '.join(d_ok)}); "
                  f"reference-schedule expressions {sum(r_ok.values())}/{len(r_ok)}", dt)


def _cli_code(argv) -> int:
    return main(list(argv))


def test_9_parser(tmp_path, capsys):
    t0 = time.perf_counter()
    rt = suite_round_trip(rng("round_trip"), n=200)
    cases = {"f4 = 1 +\n": "line 1", "f4 = 1\nf7 = x\n": "line 2", "f2 = x\n": "missing f4"}
    spans_ok = 0
    for i, (text, where) in enumerate(cases.items()):
        path = tmp_path / f"bad{i}.op"
        path.write_text(text)
        code = _cli_code(["derive", "--mode", "direct", "--op", str(path)])
        err = capsys.readouterr().err
        spans_ok += code == 2 and where in err
    bad_map = tmp_path / "bad.map"
    bad_map.write_text("xi = x\nphi = 0\n")
    good = tmp_path / "d4.op"
    good.write_text("f4 = 1\n")
    code = _cli_code(["check-equiv", "--mode", "direct", "--op", str(good), "--op2", str(good), "--map", str(bad_map)])
    spans_ok += code == 2 and "line 2" in capsys.readouterr().err
    dt = time.perf_counter() - t0
    report(9, rt.ok and rt.total == 200 and spans_ok == 4,
           f"round trip {rt.passed}/{rt.total}; file errors exiting 2 with spans {spans_ok}/4", dt)


def _selftest_run():
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "cartan_forge", "selftest", "--format", "kv", "--seed", "0"],
                          capture_output=True, check=False)
    return proc.returncode, proc.stdout, time.perf_counter() - t0


def test_10_end_to_end_cli(tmp_path, capsys):
    t0 = time.perf_counter()
    files = {
        "d4": "f4 = 1\n", "half": "f4 = 1/2\n", "d4p1": "f4 = 1\nf0 = 1\n", "d16": "f4 = 16\n",
        "phi2": "xi = x\nphi = 2\n", "id": "xi = x\nphi = 1\n", "xi2": "xi = 2*x\nphi = 1\n",
    }
    path = {}
    for name, text in files.items():
        path[name] = tmp_path / name
        path[name].write_text(text)
    golden = [
        (("direct", "d4", "half", "phi2"), 0),
        (("direct", "d4", "d4p1", "id"), 1),
        (("gauge", "d4", "d4p1", "id"), 1),
        (("direct", "d4", "d16", "xi2"), 0),
    ]
    golden_ok = 0
    for (mode, a, b, T), want in golden:
        code = _cli_code(["check-equiv", "--mode", mode, "--op", str(path[a]), "--op2", str(path[b]),
                          "--map", str(path[T])])
        capsys.readouterr()
        golden_ok += code == want
    code1, out1, dt1 = _selftest_run()
    code2, out2, dt2 = _selftest_run()
    same = out1 == out2
    dt = time.perf_counter() - t0
    ok = golden_ok == len(golden) and code1 == 0 and code2 == 0 and same and max(dt1, dt2) < 120
    report(10, ok, f"check-equiv golden cases {golden_ok}/{len(golden)}; selftest exit {code1}/{code2}, "
                   f"byte-identical {same}, wall-clock {dt1:.1f} s and {dt2:.1f} s", dt)


if __name__ == "__main__":
    import pytest

    sys.exit(pytest.main([__file__, "-q", "-s"]))

"""Comparison of derived formulas against transcribed reference formulas.

Reference formulas live in ``data/reference_<mode>.ini``.  Each section is a
row naming the derived quantity it is compared with and the verdict it is
expected to receive (``equal``, ``typo`` or ``departure``).  A row whose verdict differs from
its annotation is an unexpected mismatch.
"""
from __future__ import annotations

import configparser
import random
from dataclasses import dataclass
from importlib import resources
from typing import Dict, List, Optional, Tuple

from .expr_core import (
    Expr,
    SingularEvaluationError,
    Verdict,
    equal,
    random_env,
    relative_deviation,
)
from .expr_parser import format_expr, parse_expr, symbol_atom
from .jet_ops import Mode, OperatorSpec
from .pipeline import (
    PUBLISHED_GAUGE_SCHEDULE,
    PUBLISHED_GAUGE_SLOTS,
    PipelineResult,
    base_coframe,
    run_pipeline,
)

DEVIATION_POINTS = 100
EXPECTATIONS = ("equal", "typo", "departure")
RUNS = ("derived", "published")


@dataclass(frozen=True)
class ReferenceRow:
    key: str
    kind: str
    fields: Dict[str, str]
    reference: str
    expect: str
    note: str = ""
    run: str = "derived"


@dataclass
class ComparisonRow:
    key: str
    kind: str
    derived: str
    reference: str
    verdict: str
    deviation: Optional[float]
    expect: str
    note: str
    corrected_ok: Optional[bool] = None
    run: str = "derived"

    @property
    def matches(self) -> bool:
        return self.verdict != "mismatch"

    @property
    def as_expected(self) -> bool:
        if self.corrected_ok is False:
            return False
        return self.matches == (self.expect == "equal")


@dataclass
class PaperComparisonReport:
    mode: Mode
    rows: List[ComparisonRow]

    @property
    def unexpected(self) -> List[ComparisonRow]:
        return [r for r in self.rows if not r.as_expected]

    @property
    def ok(self) -> bool:
        return not self.unexpected


def load_reference(mode: Mode, text: Optional[str] = None) -> List[ReferenceRow]:
    if text is None:
        text = resources.files("cartan_forge").joinpath("data", f"reference_{mode.value}.ini").read_text()
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(text)
    rows = []
    for key in cp.sections():
        sec = dict(cp[key])
        expect = sec.pop("expect", "equal")
        if expect not in EXPECTATIONS:
            raise ValueError(f"{key}: expect must be one of {EXPECTATIONS}")
        run = sec.pop("run", "derived")
        if run not in RUNS:
            raise ValueError(f"{key}: run must be one of {RUNS}")
        rows.append(ReferenceRow(key, sec.pop("kind"), sec, sec.pop("reference"), expect, sec.pop("note", ""), run))
    return rows


def _slot(text: str) -> Tuple[int, int, int]:
    i, j, k = (int(v) for v in text.split(","))
    return i, j, k


def _pairs(text: str) -> frozenset:
    out = set()
    for item in text.split():
        j, k = (int(v) for v in item.split(","))
        out.add((j, k))
    return frozenset(out)


def _stage_eqs(result: PipelineResult, name: str, when: str):
    for rec in result.stages:
        if rec.stage.name == name:
            return rec.after if when == "after" else rec.before
    raise KeyError(f"no stage {name!r}")


def derived_value(row: ReferenceRow, result: PipelineResult, base=None) -> Expr:
    f = row.fields
    kind = row.kind
    if kind == "torsion":
        return result.initial[_slot(f["slot"])]
    if kind == "stage":
        return _stage_eqs(result, f["stage"], f.get("when", "after"))[_slot(f["slot"])]
    if kind == "final":
        return result.equations[_slot(f["slot"])]
    if kind == "binding":
        return result.group.bindings[int(f["param"])]
    if kind == "invariant":
        return result.invariants[f["name"]]
    if kind == "omega6":
        base = base or base_coframe(result.op, result.mode)
        return base[5][symbol_atom(f["var"])]
    if kind == "coframe":
        return result.coframe[int(f["row"]) - 1][symbol_atom(f["var"])]
    raise ValueError(f"{row.key}: unknown kind {kind!r}")


def _verdict_name(v: Verdict) -> str:
    if v is Verdict.UNEQUAL:
        return "mismatch"
    if v is Verdict.PROBABILISTIC:
        return "probabilistically-equal"
    return "equal"


def _deviation(a: Expr, b: Expr, seed: int) -> float:
    rng = random.Random(seed)
    keys = a.atom_keys() | b.atom_keys()
    worst = 0.0
    for _ in range(DEVIATION_POINTS):
        env = random_env(keys, rng)
        try:
            worst = max(worst, relative_deviation(a, b, [env]))
        except SingularEvaluationError:
            continue
    return worst


def compare_row(row: ReferenceRow, result: PipelineResult, seed: int = 0, base=None) -> ComparisonRow:
    if row.kind in ("sparsity", "sparsity_stage"):
        i = int(row.fields["row"])
        if row.kind == "sparsity":
            eqs = result.equations
        else:
            eqs = _stage_eqs(result, row.fields["stage"], row.fields.get("when", "after"))
        derived = frozenset(eqs.torsion[i])
        ref = _pairs(row.reference)
        fmt = lambda s: " ".join(f"{j},{k}" for j, k in sorted(s)) or "none"
        verdict = "equal" if derived == ref else "mismatch"
        corrected = row.fields.get("corrected")
        corrected_ok = None if corrected is None else derived == _pairs(corrected)
        return ComparisonRow(row.key, row.kind, fmt(derived), fmt(ref), verdict, None,
                             row.expect, row.note, corrected_ok, row.run)
    derived = derived_value(row, result, base)
    ref = parse_expr(row.reference)
    verdict = _verdict_name(equal(derived, ref, seed=seed))
    dev = _deviation(derived, ref, seed)
    corrected = row.fields.get("corrected")
    corrected_ok = None if corrected is None else bool(equal(derived, parse_expr(corrected), seed=seed))
    return ComparisonRow(
        row.key, row.kind, format_expr(derived), format_expr(ref), verdict, dev, row.expect, row.note,
        corrected_ok, row.run,
    )


def published_replay(op: OperatorSpec) -> PipelineResult:
    """The gauge pipeline run with the reference schedule, absorbable slot included."""
    return run_pipeline(op, Mode.GAUGE, PUBLISHED_GAUGE_SCHEDULE, PUBLISHED_GAUGE_SLOTS, check_absorption=False)


def compare_with_paper(op: Optional[OperatorSpec] = None, mode: Mode = Mode.DIRECT, seed: int = 0,
                       result: Optional[PipelineResult] = None) -> PaperComparisonReport:
    op = op or OperatorSpec.generic()
    result = result or run_pipeline(op, mode)
    base = base_coframe(op, mode)
    replay = None
    rows = []
    for ref in load_reference(mode):
        target = result
        if ref.run == "published":
            if mode is not Mode.GAUGE:
                raise ValueError(f"{ref.key}: only gauge rows can use run = published")
            replay = replay or published_replay(op)
            target = replay
        rows.append(compare_row(ref, target, seed, base))
    return PaperComparisonReport(mode, rows)


__all__ = [
    "ComparisonRow",
    "PaperComparisonReport",
    "ReferenceRow",
    "compare_row",
    "compare_with_paper",
    "derived_value",
    "load_reference",
]

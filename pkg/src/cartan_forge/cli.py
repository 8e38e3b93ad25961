"""``cartan-forge`` command-line entry point.

Exit status: 0 success, 1 verification failure, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import sys
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .checks import check_equivalence, generic_result, operator_env, run_selftest
from .compare import compare_with_paper
from .expr_core import X, Expr, ExprError, UnsupportedRadicalError, eval_numeric
from .expr_parser import ParseError, format_expr, parse_operator_file, parse_transformation
from .jet_ops import DomainError, JetPoint, Mode, OperatorSpec
from .pipeline import NormalizationError, PipelineResult, run_pipeline

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

FORMATS_HELP = """\
input files:
  operator file        one 'key = expr' per line; keys f0..f4 (f4 required) and
                       optional 'name'; expressions in x; '#' starts a comment
  transformation file  'xi = expr' and 'phi = expr', both in x
expressions use + - * / ^, parentheses, rational constants and the symbol x.
"""


class InputError(Exception):
    """An input problem reported with exit status 2."""


# --------------------------------------------------------------------------
# Argument handling
# --------------------------------------------------------------------------


def _point(text: str) -> JetPoint:
    parts = text.split(",")
    if len(parts) != 6:
        raise argparse.ArgumentTypeError("expected six values x,u,p,q,r,s")
    try:
        return JetPoint.from_seq([float(p) for p in parts])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _interval(text: str) -> Tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("expected a:b") from None
    if not a < b:
        raise argparse.ArgumentTypeError("interval needs a < b")
    return a, b


def _positive(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected an integer") from None
    if n <= 0:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("text", "kv"), default="text", help="output format")
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")

    def moded(required: bool = True):
        p = argparse.ArgumentParser(add_help=False)
        p.add_argument("--mode", choices=[m.value for m in Mode], required=required)
        return p

    parser = argparse.ArgumentParser(
        prog="cartan-forge",
        description="Cartan equivalence for fourth-order linear operators.",
        epilog=FORMATS_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("derive", parents=[common, moded()], help="final structure equations and invariants")
    p.add_argument("--op", required=True, help="operator file")

    p = sub.add_parser("invariants", parents=[common, moded()], help="evaluate the invariants at a jet point")
    p.add_argument("--op", required=True, help="operator file")
    p.add_argument("--point", type=_point, required=True, help="x,u,p,q,r,s")

    p = sub.add_parser("check-equiv", parents=[common, moded()], help="check that a map carries one operator to another")
    p.add_argument("--op", required=True, help="source operator file")
    p.add_argument("--op2", required=True, help="target operator file (in the target variable)")
    p.add_argument("--map", required=True, help="transformation file")
    p.add_argument("--samples", type=_positive, default=20, help="probes per check (default 20)")
    p.add_argument("--interval", type=_interval, default=(1.0, 2.0), help="source interval a:b (default 1:2)")

    sub.add_parser("verify-paper", parents=[common, moded()], help="compare derived results with the reference rows")
    sub.add_parser("selftest", parents=[common], help="run every property suite")
    return parser


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _load(path: str, parse: Callable):
    text = _read(path)
    try:
        return parse(text)
    except ParseError as exc:
        raise InputError(f"{path}: line {exc.span.line}, column {exc.span.column}: {exc.message}") from None
    except ExprError as exc:
        raise InputError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------


def _num(v: float) -> str:
    return f"{v:.12g}"


def _dev(v: float) -> str:
    return f"{v:.3e}"


def _term(c: Expr, j: int, k: int) -> Tuple[str, str]:
    wedge = f"theta{j}^theta{k}"
    if c.is_constant():
        q = c.constant_value()
        sign = "-" if q < 0 else "+"
        mag = abs(q)
        return sign, wedge if mag == 1 else f"{mag} {wedge}"
    return "+", f"({format_expr(c)}) {wedge}"


def _equation_line(i: int, row: Dict[Tuple[int, int], Expr]) -> str:
    if not row:
        return f"dtheta{i} = 0"
    parts = []
    for n, (j, k) in enumerate(sorted(row)):
        sign, body = _term(row[(j, k)], j, k)
        if n == 0:
            parts.append(body if sign == "+" else f"-{body}")
        else:
            parts.append(f"{sign} {body}")
    return f"dtheta{i} = " + " ".join(parts)


def _result_for(op: OperatorSpec, mode: Mode) -> Tuple[PipelineResult, bool]:
    """The pipeline on ``op`` itself, or the generic result when radicals block it."""
    try:
        return run_pipeline(op, mode), False
    except UnsupportedRadicalError:
        return generic_result(mode), True


GENERIC_NOTE = "f4 has no exact fourth root; expressions are shown for the generic operator f0..f4"


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_derive(args) -> Tuple[int, List[str]]:
    mode = Mode(args.mode)
    op = _load(args.op, parse_operator_file)
    op.check_domain()
    result, generic = _result_for(op, mode)
    eqs = result.equations
    m = mode.value
    if args.format == "kv":
        out = [f"{m}.generic = {str(generic).lower()}"]
        for i in sorted(eqs.torsion):
            row = eqs.torsion[i]
            if not row:
                out.append(f"{m}.dtheta.{i} = 0")
            for (j, k) in sorted(row):
                out.append(f"{m}.dtheta.{i}.coeff.{j}_{k} = {format_expr(row[(j, k)])}")
        for name, e in result.invariants.values.items():
            out.append(f"{m}.invariant.{name} = {format_expr(e)}")
        return EXIT_OK, out
    out = [f"mode: {m}"]
    if generic:
        out.append(f"note: {GENERIC_NOTE}")
    out.append("final structure equations:")
    out += [f"  {_equation_line(i, eqs.torsion[i])}" for i in sorted(eqs.torsion)]
    out.append("invariants:")
    out += [f"  {name} = {format_expr(e)}" for name, e in result.invariants.values.items()]
    return EXIT_OK, out


def cmd_invariants(args) -> Tuple[int, List[str]]:
    mode = Mode(args.mode)
    op = _load(args.op, parse_operator_file)
    jp = args.point
    if jp.u <= 0:
        raise DomainError("the jet point needs u > 0")
    if eval_numeric(op.coeffs[4], {X: jp.x}) <= 0:
        raise DomainError(f"f4 must be positive at x = {_num(jp.x)}")
    env = operator_env(op, jp)
    generic_invs = generic_result(mode).invariants.values
    values = {name: eval_numeric(e, env) for name, e in generic_invs.items()}
    result, generic = _result_for(op, mode)
    m = mode.value
    if args.format == "kv":
        out = [f"{m}.point = " + ",".join(_num(v) for v in jp.as_tuple())]
        for name, e in result.invariants.values.items():
            out.append(f"{m}.invariant.{name}.value = {_num(values[name])}")
            out.append(f"{m}.invariant.{name}.expr = {format_expr(e)}")
        return EXIT_OK, out
    labels = ("x", "u", "p", "q", "r", "s")
    out = [f"mode: {m}", "point: " + " ".join(f"{k}={_num(v)}" for k, v in zip(labels, jp.as_tuple()))]
    if generic:
        out.append(f"note: {GENERIC_NOTE}")
    for name, e in result.invariants.values.items():
        out.append(f"{name} = {_num(values[name])}    [{format_expr(e)}]")
    return EXIT_OK, out


def cmd_check_equiv(args) -> Tuple[int, List[str]]:
    mode = Mode(args.mode)
    op_a = _load(args.op, parse_operator_file)
    op_b = _load(args.op2, parse_operator_file)
    T = _load(args.map, parse_transformation)
    rep = check_equivalence(op_a, op_b, T, mode, args.samples, args.interval, args.seed)
    code = EXIT_OK if rep.ok else EXIT_FAIL
    m = mode.value
    if args.format == "kv":
        out = [f"{m}.check.samples = {rep.samples}", f"{m}.check.operator.max_deviation = {_dev(rep.operator_deviation)}"]
        for name, dev in rep.invariant_deviation.items():
            out.append(f"{m}.check.invariant.{name}.max_deviation = {_dev(dev)}")
        out.append(f"{m}.check.equivalent = {str(rep.ok).lower()}")
        return code, out
    out = [f"mode: {m}", f"samples: {rep.samples}",
           f"operator identity: max deviation {_dev(rep.operator_deviation)}"]
    out += [f"invariant {name}: max deviation {_dev(dev)}" for name, dev in rep.invariant_deviation.items()]
    out.append("result: " + ("equivalent under the given map" if rep.ok else "NOT equivalent under the given map"))
    return code, out


def cmd_verify_paper(args) -> Tuple[int, List[str]]:
    mode = Mode(args.mode)
    report = compare_with_paper(mode=mode, seed=args.seed)
    code = EXIT_OK if report.ok else EXIT_FAIL
    m = mode.value
    out = []
    for r in report.rows:
        dev = "-" if r.deviation is None else _dev(r.deviation)
        status = "ok" if r.as_expected else "UNEXPECTED"
        if args.format == "kv":
            pre = f"{m}.row.{r.key}"
            out += [f"{pre}.verdict = {r.verdict}", f"{pre}.expect = {r.expect}", f"{pre}.run = {r.run}",
                    f"{pre}.deviation = {dev}", f"{pre}.derived = {r.derived}", f"{pre}.reference = {r.reference}",
                    f"{pre}.status = {status}"]
        else:
            out.append(f"{status:10} {r.key:40} {r.verdict:9} expect={r.expect:9} dev={dev}")
            if not r.matches:
                out.append(f"{'':10}   derived:   {r.derived}")
                out.append(f"{'':10}   reference: {r.reference}")
    n_bad = len(report.unexpected)
    if args.format == "kv":
        out += [f"{m}.rows = {len(report.rows)}", f"{m}.unexpected = {n_bad}", f"{m}.ok = {str(report.ok).lower()}"]
    else:
        out.append(f"{m}: {len(report.rows) - n_bad}/{len(report.rows)} rows as expected")
    return code, out


def cmd_selftest(args) -> Tuple[int, List[str]]:
    results = run_selftest(args.seed)
    ok = all(r.ok for r in results)
    out = []
    for r in results:
        if args.format == "kv":
            out += [f"selftest.{r.name}.passed = {r.passed}", f"selftest.{r.name}.total = {r.total}",
                    f"selftest.{r.name}.ok = {str(r.ok).lower()}"]
        else:
            out.append(r.line())
            out += [f"    {f}" for f in r.failures[:5]]
    n_ok = sum(r.ok for r in results)
    if args.format == "kv":
        out.append(f"selftest.ok = {str(ok).lower()}")
    else:
        out.append(f"selftest: {n_ok}/{len(results)} suites passed")
    return (EXIT_OK if ok else EXIT_FAIL), out


COMMANDS = {
    "derive": cmd_derive,
    "invariants": cmd_invariants,
    "check-equiv": cmd_check_equiv,
    "verify-paper": cmd_verify_paper,
    "selftest": cmd_selftest,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        code, lines = COMMANDS[args.command](args)
    except InputError as exc:
        print(f"cartan-forge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NormalizationError as exc:
        print(f"cartan-forge: engine failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (DomainError, ExprError) as exc:
        print(f"cartan-forge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print("\n".join(lines))
    return code


if __name__ == "__main__":
    sys.exit(main())

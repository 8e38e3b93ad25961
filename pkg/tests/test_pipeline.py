from __future__ import annotations

import random
from fractions import Fraction

import pytest

from cartan_forge.checks import (
    bianchi_residues,
    generic_result,
    homogeneous,
    invariance_deviation,
    random_jet_point,
    random_operator,
    random_transformation,
)
from cartan_forge.expr_core import CHART, ONE, P, S, U, X, ZERO, Expr, coeff, equal, param
from cartan_forge.exterior import Form
from cartan_forge.jet_ops import Mode, OperatorSpec
from cartan_forge.pipeline import (
    PUBLISHED_GAUGE_SCHEDULE,
    GroupElement,
    NormalizationError,
    ScheduleError,
    absorbing_params,
    base_coframe,
    lifted_coframe,
    run_pipeline,
    solve_normalization,
    structure_equations,
)

x, u, p, q, r, s = (Expr.atom(v) for v in CHART)
f = {i: Expr.atom(coeff(i)) for i in range(5)}
df = {i: Expr.atom(coeff(i, 1)) for i in range(5)}
a = {i: Expr.atom(param(i)) for i in range(1, 11)}
GENERIC = OperatorSpec.generic()


def test_base_coframe_direct():
    w = base_coframe(GENERIC, Mode.DIRECT)
    assert w[0] == Form.basis(X)
    assert w[5][(S.key,)] == f[4]
    assert w[5][(X.key,)] == df[4] * s + df[3] * r + df[2] * q + df[1] * p + df[0] * u


def test_base_coframe_gauge_du_slot():
    w = base_coframe(GENERIC, Mode.GAUGE)
    assert w[5][(U.key,)] == -(f[4] * s + f[3] * r + f[2] * q + f[1] * p) / (u * u)


def test_lifted_coframe_shape():
    base = base_coframe(GENERIC, Mode.DIRECT)
    assert lifted_coframe(base, GroupElement.identity()) == base
    th = lifted_coframe(base, GroupElement())
    assert th[2] == base[1].scale(a[2]) + base[2].scale(a[3])
    assert th[4] == base[1].scale(a[7]) + base[2].scale(a[8]) + base[3].scale(a[9]) + base[4].scale(a[10])


@pytest.mark.parametrize("mode", list(Mode))
def test_fully_free_torsion(mode):
    eqs = generic_result(mode).initial
    assert eqs.torsion[6] == {}
    assert eqs[(2, 1, 3)] == ONE / (a[1] * a[3] * u)
    t516 = a[10] / (a[1] * f[4])
    assert eqs[(5, 1, 6)] == (t516 if mode is Mode.DIRECT else t516 * u)


def test_solve_normalization_examples():
    a1 = (f[4] * u) ** Fraction(-1, 4)
    t = ONE / (a1 * a[3] * u)
    assert solve_normalization(t, param(3), 1) == (f[4] * u) ** Fraction(1, 4) / u
    t = -(a[2] + a[3] * p) / (a1 * a[3] * u)
    assert solve_normalization(t, param(2), 0) == -a[3] * p
    sf = f[4] ** Fraction(1, 2)
    t = -(a[4] * sf * u + f[4] * q) / (sf * u)
    assert solve_normalization(t, param(4), 0) == -sf * q / u


def test_solve_normalization_rejects_unreachable():
    with pytest.raises(NormalizationError):
        solve_normalization(a[1] ** -2, param(1), 0)


def test_group_element_guards():
    with pytest.raises(NormalizationError):
        GroupElement({1: ZERO})
    with pytest.raises(NormalizationError):
        GroupElement({2: a[3]})


def test_direct_final_equations():
    eqs = generic_result(Mode.DIRECT).equations
    assert eqs.torsion[1] == {(1, 2): Expr.const(Fraction(1, 4))}
    assert eqs[(5, 2, 5)] == Expr.const(Fraction(3, 4))
    assert eqs[(5, 3, 4)] == Expr.const(3)
    assert eqs.torsion[6] == {}


def test_gauge_final_equations():
    eqs = generic_result(Mode.GAUGE).equations
    assert eqs.torsion[1] == {}
    assert eqs.torsion[3] == {(1, 4): ONE}
    assert eqs[(4, 1, 3)] == ZERO


def test_direct_I_for_constant_coefficients():
    op = OperatorSpec((3, -2, 5, 7, 1))
    got = run_pipeline(op, Mode.DIRECT).invariants["I"]
    assert got == -(s + 7 * r + 5 * q - 2 * p + 3 * u)


def test_gauge_I2_numerator():
    I2 = generic_result(Mode.GAUGE).invariants["I2"]
    expected = -(8 * f[4] * p + (2 * f[3] - 3 * df[4]) * u) / (2 * f[4] ** Fraction(3, 4) * u)
    assert equal(I2, expected)


def test_gauge_invariants_homogeneous():
    for e in generic_result(Mode.GAUGE).invariants.values.values():
        assert homogeneous(e)


@pytest.mark.parametrize("mode", list(Mode))
def test_no_group_parameters_survive(mode):
    r = generic_result(mode)
    assert not r.equations.has_residual
    for e in r.invariants.values.values():
        assert not any(at.kind == "param" for at in e.atoms())


@pytest.mark.parametrize("mode", list(Mode))
def test_bianchi_closure(mode):
    assert all(three.is_zero for three in bianchi_residues(mode))


@pytest.mark.parametrize("mode", list(Mode))
def test_invariants_are_invariant(mode):
    rng = random.Random(21)
    for _ in range(3):
        devs = invariance_deviation(mode, random_operator(rng), random_transformation(rng), random_jet_point(rng))
        assert max(devs.values()) < 1e-8


def test_absorbable_slot_is_rejected():
    with pytest.raises(ScheduleError, match="absorbable"):
        run_pipeline(GENERIC, Mode.GAUGE, PUBLISHED_GAUGE_SCHEDULE)


def test_published_slot_is_absorbable():
    replay = run_pipeline(GENERIC, Mode.GAUGE, PUBLISHED_GAUGE_SCHEDULE, check_absorption=False)
    eqs = replay.stages[-1].before
    assert param(7) in absorbing_params(eqs, (5, 2, 3)) or param(8) in absorbing_params(eqs, (5, 2, 3))


def test_concrete_operator_keeps_constant_slots():
    op = OperatorSpec((1, 0, x, 0, x * x))
    direct = run_pipeline(op, Mode.DIRECT)
    assert direct.equations.torsion[1] == {(1, 2): Expr.const(Fraction(1, 4))}


def test_structure_equations_of_base_coframe():
    eqs = structure_equations(base_coframe(GENERIC, Mode.DIRECT))
    assert eqs[(2, 1, 2)] == -p / u
    assert eqs[(2, 1, 3)] == ONE / u

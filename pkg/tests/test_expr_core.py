from __future__ import annotations

import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cartan_forge.checks import EXPR_ATOMS, random_expr, random_tree
from cartan_forge.expr_core import (
    CHART,
    ONE,
    P,
    S,
    U,
    X,
    ZERO,
    CyclicBindingError,
    Expr,
    ExprError,
    MissingBindingError,
    SingularEvaluationError,
    UnsupportedRadicalError,
    Verdict,
    atom_from_key,
    canonicalize,
    cancel_factor,
    coeff,
    diff,
    equal,
    eval_numeric,
    param,
    substitute,
    total_derivative,
)

a = {i: Expr.atom(param(i)) for i in range(1, 11)}
f = {i: Expr.atom(coeff(i)) for i in range(5)}
x, u, p, q, r, s = (Expr.atom(v) for v in CHART)

trees = st.integers(min_value=0, max_value=2**32 - 1).map(lambda n: random_tree(random.Random(n), EXPR_ATOMS))
exprs = st.integers(min_value=0, max_value=2**32 - 1).map(lambda n: random_expr(random.Random(n)))


# --- atoms ---------------------------------------------------------------


def test_atom_order_follows_chart_then_params_then_coefficients():
    ordered = list(CHART) + [param(i) for i in range(1, 11)] + [coeff(0), coeff(0, 1), coeff(4), coeff(4, 1)]
    assert sorted(ordered) == ordered
    assert all(atom_from_key(at.key) == at for at in ordered)


def test_coefficient_atoms_depend_on_x_only():
    assert diff(f[4], U).is_zero
    assert diff(f[4], S).is_zero
    assert diff(f[4], X) == Expr.atom(coeff(4, 1))


# --- canonicalize ----------------------------------------------------------


def test_radical_product_on_positive_branch():
    t = ("pow", ("mul", coeff(4), U), Fraction(1, 4))
    got = canonicalize(("mul", t, t))
    assert got == f[4] ** Fraction(1, 2) * u ** Fraction(1, 2)


def test_commutativity_cancels():
    assert canonicalize(("sub", ("mul", U, P), ("mul", P, U))) == ZERO


def test_quotient_from_tree():
    tree = ("div", ("add", param(2), ("mul", param(3), P)), ("mul", ("mul", param(1), param(3)), U))
    e = canonicalize(tree)
    assert e == (a[2] + a[3] * p) / (a[1] * a[3] * u)
    # A monomial denominator folds into Laurent terms.
    assert e.is_polynomial
    assert e == p / (a[1] * u) + a[2] / (a[1] * a[3] * u)


def test_fractional_power_of_sum_is_rejected():
    with pytest.raises(UnsupportedRadicalError):
        (u + p) ** Fraction(1, 2)


def test_non_perfect_constant_root_is_rejected():
    with pytest.raises(UnsupportedRadicalError):
        Expr.const(2) ** Fraction(1, 4)


def test_division_by_zero():
    with pytest.raises(ZeroDivisionError):
        u / ZERO


@given(trees)
def test_canonicalize_idempotent(tree):
    e = canonicalize(tree)
    assert canonicalize(e) == e


@given(exprs, exprs, exprs)
def test_ring_laws(e1, e2, e3):
    assert e1 + e2 == e2 + e1
    assert e1 * e2 == e2 * e1
    assert equal(e1 * (e2 + e3), e1 * e2 + e1 * e3)
    assert e1 - e1 == ZERO


# --- diff ----------------------------------------------------------------


def test_diff_product_rule_in_x():
    assert diff(f[4] * s, X) == Expr.atom(coeff(4, 1)) * s


def test_diff_power_rule():
    assert diff(u ** Fraction(1, 4), U) == Fraction(1, 4) * u ** Fraction(-3, 4)


def test_diff_of_invariant_function_in_s():
    I = f[4] * s + f[3] * r + f[2] * q + f[1] * p + f[0] * u
    assert diff(I, S) == f[4]


def test_diff_by_coefficient_atom_is_an_error():
    with pytest.raises(ExprError):
        diff(u, coeff(4))


@given(exprs)
def test_mixed_partials_commute(e):
    assert equal(diff(diff(e, U), P), diff(diff(e, P), U))


def test_total_derivative_refuses_s():
    assert total_derivative(u) == p
    with pytest.raises(ExprError):
        total_derivative(s)


# --- substitute ------------------------------------------------------------


def test_substitute_normalizes_t213():
    t = ONE / (a[1] * a[3] * u)
    fu = f[4] * u
    got = substitute(t, {param(1): (f[4] * u) ** Fraction(-1, 4), param(3): fu ** Fraction(1, 4) / u})
    assert got == ONE


def test_substitute_to_zero():
    assert substitute(a[2] + a[3] * p, {param(2): -a[3] * p}) == ZERO


def test_substitute_sets_t415_to_one():
    t = a[6] / (a[1] * a[10])
    b = {
        param(6): f[4] ** Fraction(1, 2) * u ** Fraction(-1, 2),
        param(1): (f[4] * u) ** Fraction(-1, 4),
        param(10): f[4] ** Fraction(3, 4) * u ** Fraction(-1, 4),
    }
    assert substitute(t, b) == ONE


def test_substitute_rejects_cyclic_binding():
    with pytest.raises(CyclicBindingError):
        substitute(x, {X: x + 1})


# --- numeric evaluation ----------------------------------------------------


def test_eval_normalized_a1():
    a1 = (f[4] * u) ** Fraction(-1, 4)
    assert eval_numeric(a1, {coeff(4): 16.0, U: 1.0}) == pytest.approx(0.5)


def test_eval_zero():
    assert eval_numeric(ZERO, {}) == 0.0


def test_eval_missing_binding():
    with pytest.raises(MissingBindingError):
        eval_numeric(u + p, {U: 1.0})


def test_eval_singular_denominator():
    with pytest.raises(SingularEvaluationError):
        eval_numeric(ONE / (u - p), {U: 1.0, P: 1.0})


def test_high_precision_evaluation_survives_cancellation():
    # (x - 10^10)^2 expanded: its terms are ~1e20 but the value is 1/4.
    e = (x - 10**10) ** 2
    assert e.n_terms() == 3
    assert eval_numeric(e, {X: 1e10 + 0.5}, digits=40) == 0.25


def test_cancel_factor_strips_common_polynomial():
    g = 2 * x + 1
    e = (u * g ** 3) / (p * g ** 2)
    assert cancel_factor(e, g) == (u * g) / p


# --- equality ----------------------------------------------------------------


def test_equal_tiers():
    assert equal(u ** Fraction(1, 2) * u ** Fraction(1, 2), u) is Verdict.SYNTACTIC
    lhs = Expr.from_terms(dict(((u * u).num_terms()).items()), dict(u.num_terms()))
    assert bool(equal(lhs, u))
    assert equal(u, p) is Verdict.UNEQUAL


def test_omega6_dx_coefficient():
    I = f[4] * s + f[3] * r + f[2] * q + f[1] * p + f[0] * u
    expected = sum(
        (Expr.atom(coeff(i, 1)) * j for i, j in zip(range(5), (u, p, q, r, s))), ZERO
    )
    assert equal(diff(I, X), expected)

"""Differential forms on the chart (x, u, p, q, r, s, a1, ..., a10).

A k-form is stored as a map from strictly increasing tuples of covector keys
to Expr coefficients.  Covector keys are the atom keys of the chart variables
(0..5) and group parameters (6..15), so the basis order is
dx < du < dp < dq < dr < ds < da1 < ... < da10.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .expr_core import (
    CHART,
    ONE,
    PARAMS,
    ZERO,
    Atom,
    Expr,
    ExprError,
    as_expr,
    atom_from_key,
    diff,
    eval_numeric,
    substitute,
)

MAX_DEGREE = 2
CHART_KEYS = tuple(a.key for a in CHART)
ALL_KEYS = CHART_KEYS + tuple(a.key for a in PARAMS)
N = len(CHART)


class FormError(ExprError):
    pass


class DegenerateCoframeError(FormError):
    def __init__(self, msg: str = "degenerate coframe"):
        super().__init__(msg)


def _sort_sign(keys: Sequence[int]) -> Tuple[Optional[Tuple[int, ...]], int]:
    """Sorted key tuple and permutation sign, or (None, 0) on a repeat."""
    keys = list(keys)
    if len(set(keys)) != len(keys):
        return None, 0
    sign = 1
    for i in range(len(keys)):
        for j in range(len(keys) - 1 - i):
            if keys[j] > keys[j + 1]:
                keys[j], keys[j + 1] = keys[j + 1], keys[j]
                sign = -sign
    return tuple(keys), sign


class Form:
    """An exterior differential form with Expr coefficients."""

    __slots__ = ("degree", "coeffs")

    def __init__(self, degree: int, coeffs: Mapping[Tuple[int, ...], Expr] = ()):
        if not 0 <= degree <= 3:
            raise FormError(f"unsupported form degree {degree}")
        clean = {}
        for k, c in dict(coeffs).items():
            c = as_expr(c)
            if c.is_zero:
                continue
            if len(k) != degree or list(k) != sorted(set(k)):
                raise FormError(f"basis key {k} is not strictly increasing of length {degree}")
            clean[tuple(k)] = c
        self.degree = degree
        self.coeffs: Dict[Tuple[int, ...], Expr] = clean

    @classmethod
    def scalar(cls, e) -> "Form":
        return cls(0, {(): as_expr(e)})

    @classmethod
    def basis(cls, a: Atom) -> "Form":
        """The 1-form d(a)."""
        return cls(1, {(a.key,): ONE})

    @classmethod
    def one_form(cls, components: Mapping[Atom, Expr]) -> "Form":
        return cls(1, {(a.key,): as_expr(c) for a, c in components.items()})

    def __getitem__(self, key) -> Expr:
        if isinstance(key, Atom):
            key = (key.key,)
        elif isinstance(key, tuple) and key and isinstance(key[0], Atom):
            key = tuple(a.key for a in key)
        return self.coeffs.get(tuple(key), ZERO)

    def component(self, *atoms: Atom) -> Expr:
        """Coefficient on d(atoms[0]) ^ ... taken with the stored sign."""
        keys, sign = _sort_sign([a.key for a in atoms])
        if keys is None:
            return ZERO
        c = self.coeffs.get(keys, ZERO)
        return c if sign > 0 else -c

    @property
    def is_zero(self) -> bool:
        return not self.coeffs

    def __eq__(self, other) -> bool:
        if not isinstance(other, Form):
            return NotImplemented
        return self.degree == other.degree and self.coeffs == other.coeffs

    def __hash__(self):
        return hash((self.degree, tuple(sorted(self.coeffs.items()))))

    def _combine(self, other: "Form", sign: int) -> "Form":
        if other.degree != self.degree and not (self.is_zero or other.is_zero):
            raise FormError("cannot add forms of different degree")
        degree = self.degree if not self.is_zero else other.degree
        out = dict(self.coeffs)
        for k, c in other.coeffs.items():
            out[k] = out.get(k, ZERO) + (c if sign > 0 else -c)
        return Form(degree, out)

    def __add__(self, other: "Form") -> "Form":
        return self._combine(other, 1)

    def __sub__(self, other: "Form") -> "Form":
        return self._combine(other, -1)

    def __neg__(self) -> "Form":
        return Form(self.degree, {k: -c for k, c in self.coeffs.items()})

    def scale(self, g) -> "Form":
        g = as_expr(g)
        return Form(self.degree, {k: g * c for k, c in self.coeffs.items()})

    def __mul__(self, g) -> "Form":
        if isinstance(g, Form):
            return wedge(self, g)
        return self.scale(g)

    __rmul__ = scale

    def map_coeffs(self, fn) -> "Form":
        return Form(self.degree, {k: fn(c) for k, c in self.coeffs.items()})

    def param_keys(self) -> frozenset:
        return frozenset(k for key in self.coeffs for k in key if k not in CHART_KEYS)

    def __repr__(self) -> str:
        if self.is_zero:
            return f"Form({self.degree}, 0)"
        parts = []
        for k, c in sorted(self.coeffs.items()):
            basis = "^".join("d" + atom_from_key(i).name for i in k) or "1"
            parts.append(f"({c})*{basis}")
        return " + ".join(parts)


def wedge(a: Form, b: Form) -> Form:
    """Graded-antisymmetric exterior product (total degree at most 2)."""
    if a.degree + b.degree > MAX_DEGREE:
        raise FormError(f"degree overflow: {a.degree} + {b.degree} > {MAX_DEGREE}")
    return _wedge(a, b)


def _wedge(a: Form, b: Form) -> Form:
    out: Dict[Tuple[int, ...], Expr] = {}
    for ka, ca in a.coeffs.items():
        for kb, cb in b.coeffs.items():
            keys, sign = _sort_sign(ka + kb)
            if keys is None:
                continue
            term = ca * cb
            out[keys] = out.get(keys, ZERO) + (term if sign > 0 else -term)
    return Form(a.degree + b.degree, out)


def _partials(c: Expr) -> List[Tuple[int, Expr]]:
    out = []
    for a in CHART + PARAMS:
        if c.depends_on(a):
            dc = diff(c, a)
            if not dc.is_zero:
                out.append((a.key, dc))
    return out


def d(f: Form) -> Form:
    """Exterior derivative over all sixteen chart variables.

    Degree-2 input (giving a 3-form) is only used by the closure checks.
    """
    if f.degree > MAX_DEGREE:
        raise FormError("exterior derivative of a form of degree > 2")
    out: Dict[Tuple[int, ...], Expr] = {}
    for key, c in f.coeffs.items():
        for v, dc in _partials(c):
            keys, sign = _sort_sign((v,) + key)
            if keys is None:
                continue
            out[keys] = out.get(keys, ZERO) + (dc if sign > 0 else -dc)
    return Form(f.degree + 1, out)


def substitute_in_form(f: Form, bindings: Mapping[Atom, Expr]) -> Form:
    """Substitute atoms in coefficients; a bound parameter's d(a_i) becomes d(binding)."""
    if not bindings:
        return f
    bound = {a.key: as_expr(b) for a, b in bindings.items()}
    differentials = {k: d(Form.scalar(b)) for k, b in bound.items() if k not in CHART_KEYS}
    out = Form(f.degree)
    for key, c in f.coeffs.items():
        c2 = substitute(c, bindings)
        if c2.is_zero:
            continue
        piece = Form.scalar(c2)
        for k in key:
            factor = differentials.get(k)
            if factor is None:
                factor = Form(1, {(k,): ONE})
            piece = _wedge(piece, factor)
        out = out + piece
    return out


# --------------------------------------------------------------------------
# Coframes
# --------------------------------------------------------------------------


def _pivot_rank(e: Expr) -> Tuple[int, int]:
    return (0 if e.is_polynomial else 1, e.n_terms())


def invert_matrix(m: Sequence[Sequence[Expr]]) -> Tuple[List[List[Expr]], Expr]:
    """Gauss-Jordan inverse and determinant over Expr."""
    n = len(m)
    a = [list(row) + [ONE if i == j else ZERO for j in range(n)] for i, row in enumerate(m)]
    det = ONE
    for col in range(n):
        candidates = [r for r in range(col, n) if not a[r][col].is_zero]
        if not candidates:
            raise DegenerateCoframeError()
        # Coframes are lower triangular; keep the diagonal pivot when it is a
        # monomial so denominators stay monomial.
        if a[col][col].is_monomial:
            piv = col
        else:
            piv = min(candidates, key=lambda r: _pivot_rank(a[r][col]))
        if piv != col:
            a[col], a[piv] = a[piv], a[col]
            det = -det
        p = a[col][col]
        det = det * p
        inv_p = ONE / p
        a[col] = [inv_p * v if not v.is_zero else v for v in a[col]]
        for r in range(n):
            if r == col or a[r][col].is_zero:
                continue
            factor = a[r][col]
            a[r] = [
                v - factor * w if not w.is_zero else v for v, w in zip(a[r], a[col])
            ]
    return [row[n:] for row in a], det


@dataclass
class Coframe:
    """Six 1-forms on the jet chart, with cached coefficient matrix and inverse.

    ``matrix[i][v]`` is the dv-component of form i; ``inverse[v][j]`` expresses
    dv = sum_j inverse[v][j] * theta^j.
    """

    forms: List[Form]
    matrix: List[List[Expr]] = field(init=False, repr=False)
    inverse: List[List[Expr]] = field(init=False, repr=False)
    determinant: Expr = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.forms) != N:
            raise FormError("a coframe has six 1-forms")
        for f in self.forms:
            if f.degree != 1:
                raise FormError("coframe elements must be 1-forms")
            if f.param_keys():
                raise FormError("coframe elements may only involve chart differentials")
        self.matrix = [[f.coeffs.get((k,), ZERO) for k in CHART_KEYS] for f in self.forms]
        self.inverse, self.determinant = invert_matrix(self.matrix)
        if self.determinant.is_zero:
            raise DegenerateCoframeError()

    def __len__(self) -> int:
        return N

    def __getitem__(self, i: int) -> Form:
        return self.forms[i]


@dataclass
class CoframeExpansion:
    """A form written in a coframe basis.

    ``theta`` maps j (1-based) or (j, k) with j < k to the coefficient of
    theta^j or theta^j ^ theta^k.  ``mixed`` maps (parameter, j) to the
    coefficient of d(parameter) ^ theta^j (or just the parameter for a 1-form).
    """

    degree: int
    theta: Dict[object, Expr]
    mixed: Dict[object, Expr]


def to_coframe_basis(f: Form, cf: Coframe, free_params: Iterable[Atom] = ()) -> CoframeExpansion:
    """Express a 1- or 2-form in the coframe (plus d(free parameter) terms)."""
    free = {a.key: a for a in free_params}
    inv = cf.inverse
    if f.degree == 1:
        theta: Dict[object, Expr] = {}
        mixed: Dict[object, Expr] = {}
        for (k,), c in f.coeffs.items():
            if k in CHART_KEYS:
                for j in range(N):
                    m = inv[k][j]
                    if not m.is_zero:
                        theta[j + 1] = theta.get(j + 1, ZERO) + c * m
            elif k in free:
                mixed[free[k]] = c
            else:
                raise FormError(f"d{atom_from_key(k).name} is not a free parameter differential")
        return CoframeExpansion(1, _prune(theta), _prune(mixed))
    if f.degree != 2:
        raise FormError("only 1- and 2-forms can be expanded in a coframe")
    # Chart part: T = inv^T W inv with W antisymmetric.
    w = [[ZERO] * N for _ in range(N)]
    mixed = {}
    for (k1, k2), c in f.coeffs.items():
        c1, c2 = k1 in CHART_KEYS, k2 in CHART_KEYS
        if c1 and c2:
            w[k1][k2] = c
            w[k2][k1] = -c
        elif c1 and not c2:
            if k2 not in free:
                raise FormError(f"d{atom_from_key(k2).name} is not a free parameter differential")
            # dv ^ da = -da ^ dv
            for j in range(N):
                m = inv[k1][j]
                if not m.is_zero:
                    key = (free[k2], j + 1)
                    mixed[key] = mixed.get(key, ZERO) - c * m
        else:
            raise FormError("unexpected d(parameter) ^ d(parameter) term")
    y = [[ZERO] * N for _ in range(N)]
    for v in range(N):
        for wv in range(N):
            c = w[v][wv]
            if c.is_zero:
                continue
            for k in range(N):
                m = inv[wv][k]
                if not m.is_zero:
                    y[v][k] = y[v][k] + c * m
    theta = {}
    for j in range(N):
        for k in range(j + 1, N):
            acc = ZERO
            for v in range(N):
                m = inv[v][j]
                if not m.is_zero and not y[v][k].is_zero:
                    acc = acc + m * y[v][k]
            if not acc.is_zero:
                theta[(j + 1, k + 1)] = acc
    return CoframeExpansion(2, theta, _prune(mixed))


def _prune(m: Dict) -> Dict:
    return {k: v for k, v in m.items() if not v.is_zero}


def from_coframe_basis(expansion: CoframeExpansion, cf: Coframe) -> Form:
    """Inverse of :func:`to_coframe_basis` (chart part plus mixed terms)."""
    if expansion.degree == 1:
        out = Form(1)
        for j, c in expansion.theta.items():
            out = out + cf[j - 1].scale(c)
        for a, c in expansion.mixed.items():
            out = out + Form.basis(a).scale(c)
        return out
    out = Form(2)
    for (j, k), c in expansion.theta.items():
        out = out + _wedge(cf[j - 1], cf[k - 1]).scale(c)
    for (a, j), c in expansion.mixed.items():
        out = out + _wedge(Form.basis(a), cf[j - 1]).scale(c)
    return out


# --------------------------------------------------------------------------
# Numeric evaluation
# --------------------------------------------------------------------------

TangentVector = Mapping[Atom, float]


def eval_form(f: Form, point: Mapping, vectors: Sequence[TangentVector]) -> float:
    """Multilinear, antisymmetric evaluation on ``f.degree`` tangent vectors."""
    if len(vectors) != f.degree:
        raise FormError(f"a {f.degree}-form needs {f.degree} vectors")
    vecs = [{(a.key if isinstance(a, Atom) else a): float(v) for a, v in vec.items()} for vec in vectors]
    total = 0.0
    for key, c in f.coeffs.items():
        if f.degree == 0:
            w = 1.0
        elif f.degree == 1:
            w = vecs[0].get(key[0], 0.0)
        elif f.degree == 2:
            a, b = key
            w = vecs[0].get(a, 0.0) * vecs[1].get(b, 0.0) - vecs[0].get(b, 0.0) * vecs[1].get(a, 0.0)
        else:
            raise FormError("numeric evaluation is limited to degree <= 2")
        if w:
            total += eval_numeric(c, point) * w
    return total

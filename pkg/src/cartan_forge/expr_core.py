"""Exact symbolic expressions over the rationals.

An :class:`Expr` is a quotient of two canonical sums of terms.  A term is a
rational coefficient times a product of atoms raised to rational powers whose
denominators divide 4.  Exponents are stored internally in quarter units, so
``u^(3/4)`` is the pair ``(key(u), 3)``.

All radicals live on the positive branch: every atom is taken to be positive
when a fractional power of it is formed, which makes ``(f4*u)^(1/4)`` equal to
``f4^(1/4)*u^(1/4)``.  The working domain (``u > 0``, ``f4 > 0``) guarantees
this for the atoms that actually carry radicals.
"""
from __future__ import annotations

import decimal
import enum
import heapq
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Dict, Iterable, Mapping, Tuple, Union

MAX_TERMS = 20_000

CHART_NAMES = ("x", "u", "p", "q", "r", "s")
N_PARAMS = 10
N_COEFFS = 5
_COEFF_BASE = 16
_COEFF_STRIDE = 1000


class ExprError(ValueError):
    """Base class for expression-level failures."""


class ZeroDivisorError(ExprError, ZeroDivisionError):
    def __init__(self, msg: str = "zero divisor"):
        super().__init__(msg)


class UnsupportedRadicalError(ExprError):
    def __init__(self, msg: str = "unsupported radical"):
        super().__init__(msg)


class ExpressionTooLargeError(ExprError):
    pass


class CyclicBindingError(ExprError):
    pass


class SingularEvaluationError(ExprError, ArithmeticError):
    def __init__(self, msg: str = "singular evaluation"):
        super().__init__(msg)


class MissingBindingError(ExprError, KeyError):
    def __str__(self) -> str:
        return self.args[0] if self.args else "missing binding"


# --------------------------------------------------------------------------
# Atoms
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Atom:
    """A symbol: chart variable, group parameter, or coefficient derivative.

    ``kind`` is one of ``"var"``, ``"param"``, ``"coeff"``.  For variables
    ``index`` runs over 0..5 (x, u, p, q, r, s); for parameters 1..10; for
    coefficient functions ``index`` is i in f_i and ``order`` the derivative
    order.
    """

    kind: str
    index: int
    order: int = 0

    @property
    def key(self) -> int:
        if self.kind == "var":
            return self.index
        if self.kind == "param":
            return 5 + self.index
        return _COEFF_BASE + self.index * _COEFF_STRIDE + self.order

    @property
    def name(self) -> str:
        if self.kind == "var":
            return CHART_NAMES[self.index]
        if self.kind == "param":
            return f"a{self.index}"
        return f"f{self.index}" + "'" * self.order

    def derivative(self) -> "Atom":
        if self.kind != "coeff":
            raise ExprError(f"{self.name} has no x-derivative atom")
        return Atom("coeff", self.index, self.order + 1)

    def __lt__(self, other: "Atom") -> bool:
        return self.key < other.key

    def __repr__(self) -> str:
        return self.name


@lru_cache(maxsize=None)
def atom_from_key(key: int) -> Atom:
    if key < 6:
        return Atom("var", key)
    if key < _COEFF_BASE:
        return Atom("param", key - 5)
    i, k = divmod(key - _COEFF_BASE, _COEFF_STRIDE)
    return Atom("coeff", i, k)


def var(name: str) -> Atom:
    return Atom("var", CHART_NAMES.index(name))


def param(i: int) -> Atom:
    if not 1 <= i <= N_PARAMS:
        raise ValueError(f"group parameter index out of range: {i}")
    return Atom("param", i)


def coeff(i: int, order: int = 0) -> Atom:
    if not 0 <= i < N_COEFFS or order < 0:
        raise ValueError(f"bad coefficient atom f{i} order {order}")
    return Atom("coeff", i, order)


X, U, P, Q, R, S = (Atom("var", i) for i in range(6))
CHART = (X, U, P, Q, R, S)
PARAMS = tuple(Atom("param", i) for i in range(1, N_PARAMS + 1))

_X_KEY = 0


def _is_coeff_key(key: int) -> bool:
    return key >= _COEFF_BASE


# --------------------------------------------------------------------------
# Monomials and sums (internal representation)
# --------------------------------------------------------------------------
# A monomial is a tuple of (atom key, exponent in quarters) sorted by key.
# A sum is a dict monomial -> Fraction with no zero entries.

Mono = Tuple[Tuple[int, int], ...]
Terms = Dict[Mono, Fraction]

_ONE_MONO: Mono = ()


@lru_cache(maxsize=1 << 18)
def _mono_mul(a: Mono, b: Mono) -> Mono:
    if not a:
        return b
    if not b:
        return a
    out = []
    i = j = 0
    la, lb = len(a), len(b)
    while i < la and j < lb:
        ka, ea = a[i]
        kb, eb = b[j]
        if ka < kb:
            out.append(a[i])
            i += 1
        elif kb < ka:
            out.append(b[j])
            j += 1
        else:
            e = ea + eb
            if e:
                out.append((ka, e))
            i += 1
            j += 1
    out.extend(a[i:])
    out.extend(b[j:])
    return tuple(out)


def _mono_inv(m: Mono) -> Mono:
    return tuple((k, -e) for k, e in m)


def _mono_scale(m: Mono, num: int, den: int) -> Mono:
    """Raise a monomial to the power num/den (exponents stay in quarters)."""
    out = []
    for k, e in m:
        v = e * num
        if v % den:
            raise UnsupportedRadicalError()
        out.append((k, v // den))
    return tuple(out)


def _mono_degree(m: Mono) -> int:
    return sum(e for _, e in m)


def _term_sort_key(m: Mono):
    # Higher total degree first, then by atom keys; deterministic and
    # gives the conventional "x^2 + 1" reading order.
    return (-_mono_degree(m), tuple((k, -e) for k, e in m))


def _add_into(acc: Terms, terms: Mapping[Mono, Fraction], scale: Fraction = Fraction(1)) -> None:
    for m, c in terms.items():
        v = acc.get(m)
        if v is None:
            acc[m] = c * scale
        else:
            v = v + c * scale
            if v:
                acc[m] = v
            else:
                del acc[m]


def _mul_terms(a: Mapping[Mono, Fraction], b: Mapping[Mono, Fraction]) -> Terms:
    if len(a) > len(b):
        a, b = b, a
    acc: Terms = {}
    for m1, c1 in a.items():
        for m2, c2 in b.items():
            m = _mono_mul(m1, m2)
            c = c1 * c2
            v = acc.get(m)
            if v is None:
                acc[m] = c
            else:
                v += c
                if v:
                    acc[m] = v
                else:
                    del acc[m]
    if len(acc) > MAX_TERMS:
        raise ExpressionTooLargeError(
            f"canonical sum has {len(acc)} terms (limit {MAX_TERMS})"
        )
    return acc


def _shift_terms(terms: Mapping[Mono, Fraction], mono: Mono, scale: Fraction) -> Terms:
    return {_mono_mul(m, mono): c * scale for m, c in terms.items()}


def _exact_root(q: Fraction, n: int) -> Fraction:
    """Exact positive n-th root of q (n in 1, 2, 4), else UnsupportedRadicalError."""
    if n == 1:
        return q
    if q <= 0:
        raise UnsupportedRadicalError("unsupported radical: non-positive radicand")

    def iroot(v: int) -> int:
        r = v
        for _ in range({2: 1, 4: 2}[n]):
            s = math.isqrt(r)
            if s * s != r:
                raise UnsupportedRadicalError(
                    f"unsupported radical: {q} has no exact rational root of order {n}"
                )
            r = s
        return r

    return Fraction(iroot(q.numerator), iroot(q.denominator))


_ONE_TERMS = ((_ONE_MONO, Fraction(1)),)


def _frac(c) -> Fraction:
    return c if type(c) is Fraction else Fraction(c)


# --------------------------------------------------------------------------
# Expr
# --------------------------------------------------------------------------

Number = Union[int, Fraction]


class Expr:
    """Canonical quotient ``num/den`` of two sums of monomial terms.

    Instances are immutable.  A denominator that is a single term is always
    folded into the numerator, so the common case (monomial denominators)
    is a plain Laurent polynomial with ``den == 1``.
    """

    __slots__ = ("num", "den", "_hash")

    def __init__(self, num, den=_ONE_TERMS):
        # Trusted constructor: callers pass already-canonical sorted tuples.
        self.num = num
        self.den = den
        self._hash = None

    # -- construction ------------------------------------------------------

    @staticmethod
    def from_terms(num: Mapping[Mono, Fraction], den: Mapping[Mono, Fraction] | None = None) -> "Expr":
        num = {m: _frac(c) for m, c in num.items() if c}
        if den is None:
            return Expr(_sorted_terms(num)) if num else ZERO
        den = {m: _frac(c) for m, c in den.items() if c}
        if not den:
            raise ZeroDivisorError()
        if not num:
            return ZERO
        if len(den) == 1:
            (dm, dc), = den.items()
            return Expr(_sorted_terms(_shift_terms(num, _mono_inv(dm), 1 / dc)))
        # Remove the monomial content of the denominator.
        keys = set()
        for m in den:
            keys.update(k for k, _ in m)
        content = []
        for k in sorted(keys):
            low = min(dict(m).get(k, 0) for m in den)
            if low:
                content.append((k, low))
        if content:
            inv = _mono_inv(tuple(content))
            den = _shift_terms(den, inv, Fraction(1))
            num = _shift_terms(num, inv, Fraction(1))
        # Rational content: integer coefficients, gcd 1, leading term positive.
        lcm = 1
        for c in den.values():
            lcm = lcm * c.denominator // math.gcd(lcm, c.denominator)
        g = 0
        for c in den.values():
            g = math.gcd(g, (c * lcm).numerator)
        lead = min(den, key=_term_sort_key)
        scale = Fraction(lcm, g)
        if den[lead] < 0:
            scale = -scale
        den = {m: c * scale for m, c in den.items()}
        num = {m: c * scale for m, c in num.items()}
        # num a scalar multiple of den collapses to a constant.
        if len(num) == len(den) and num.keys() == den.keys():
            ratios = {num[m] / den[m] for m in den}
            if len(ratios) == 1:
                return Expr.const(ratios.pop())
        return Expr(_sorted_terms(num), _sorted_terms(den))

    @staticmethod
    def const(value: Number) -> "Expr":
        value = Fraction(value)
        if not value:
            return ZERO
        return Expr(((_ONE_MONO, value),))

    @staticmethod
    def atom(a: Atom, exponent: Number = 1) -> "Expr":
        e = Fraction(exponent) * 4
        if e.denominator != 1:
            raise UnsupportedRadicalError()
        if not e:
            return ONE
        return Expr(((((a.key, int(e)),), Fraction(1)),))

    # -- inspection --------------------------------------------------------

    @property
    def is_zero(self) -> bool:
        return not self.num

    @property
    def is_polynomial(self) -> bool:
        """True when the denominator is 1 (Laurent monomials allowed)."""
        return self.den is _ONE_TERMS or self.den == _ONE_TERMS

    @property
    def is_monomial(self) -> bool:
        return self.is_polynomial and len(self.num) == 1

    def is_constant(self) -> bool:
        return self.is_zero or (self.is_polynomial and len(self.num) == 1 and self.num[0][0] == ())

    def constant_value(self) -> Fraction:
        if self.is_zero:
            return Fraction(0)
        if not self.is_constant():
            raise ExprError("expression is not a rational constant")
        return self.num[0][1]

    def atoms(self) -> frozenset:
        keys = set()
        for part in (self.num, self.den):
            for m, _ in part:
                keys.update(k for k, _ in m)
        return frozenset(atom_from_key(k) for k in keys)

    def atom_keys(self) -> frozenset:
        keys = set()
        for part in (self.num, self.den):
            for m, _ in part:
                keys.update(k for k, _ in m)
        return frozenset(keys)

    def depends_on(self, a: Atom) -> bool:
        k = a.key
        keys = self.atom_keys()
        if k in keys:
            return True
        return k == _X_KEY and any(_is_coeff_key(j) for j in keys)

    def n_terms(self) -> int:
        return len(self.num) + (0 if self.is_polynomial else len(self.den))

    def num_terms(self) -> Terms:
        return dict(self.num)

    def den_terms(self) -> Terms:
        return dict(self.den)

    def numerator(self) -> "Expr":
        return Expr(self.num) if self.num else ZERO

    def denominator(self) -> "Expr":
        return Expr(self.den)

    # -- equality / hashing (syntactic) -----------------------------------

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, Fraction)):
            other = Expr.const(other)
        if not isinstance(other, Expr):
            return NotImplemented
        return self.num == other.num and self.den == other.den

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self.num, self.den))
        return self._hash

    def __bool__(self) -> bool:
        return bool(self.num)

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other) -> "Expr":
        other = as_expr(other)
        if not other.num:
            return self
        if not self.num:
            return other
        if self.den == other.den:
            acc = dict(self.num)
            _add_into(acc, dict(other.num))
            if self.is_polynomial:
                return Expr.from_terms(acc)
            return Expr.from_terms(acc, dict(self.den))
        n = _mul_terms(dict(self.num), dict(other.den))
        _add_into(n, _mul_terms(dict(other.num), dict(self.den)))
        return Expr.from_terms(n, _mul_terms(dict(self.den), dict(other.den)))

    __radd__ = __add__

    def __neg__(self) -> "Expr":
        if not self.num:
            return self
        return Expr(tuple((m, -c) for m, c in self.num), self.den)

    def __sub__(self, other) -> "Expr":
        return self + (-as_expr(other))

    def __rsub__(self, other) -> "Expr":
        return as_expr(other) + (-self)

    def __mul__(self, other) -> "Expr":
        other = as_expr(other)
        if not self.num or not other.num:
            return ZERO
        if self.is_polynomial and other.is_polynomial:
            if len(other.num) == 1:
                (m, c), = other.num
                return Expr(_sorted_terms(_shift_terms(dict(self.num), m, c)))
            if len(self.num) == 1:
                (m, c), = self.num
                return Expr(_sorted_terms(_shift_terms(dict(other.num), m, c)))
            return Expr.from_terms(_mul_terms(dict(self.num), dict(other.num)))
        return Expr.from_terms(
            _mul_terms(dict(self.num), dict(other.num)),
            _mul_terms(dict(self.den), dict(other.den)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Expr":
        other = as_expr(other)
        if not other.num:
            raise ZeroDivisorError()
        if not self.num:
            return ZERO
        return Expr.from_terms(
            _mul_terms(dict(self.num), dict(other.den)),
            _mul_terms(dict(self.den), dict(other.num)),
        )

    def __rtruediv__(self, other) -> "Expr":
        return as_expr(other) / self

    def __pow__(self, exponent) -> "Expr":
        k = Fraction(exponent)
        if k.denominator == 1:
            n = k.numerator
            if n == 0:
                return ONE
            if n < 0:
                return ONE / (self ** (-n))
            result = ONE
            base = self
            while n:
                if n & 1:
                    result = result * base
                n >>= 1
                if n:
                    base = base * base
            return result
        if 4 % k.denominator:
            raise UnsupportedRadicalError(
                f"unsupported radical: exponent {k} has denominator not dividing 4"
            )
        if not self.num:
            if k > 0:
                return ZERO
            raise ZeroDivisorError()
        if not self.is_monomial:
            raise UnsupportedRadicalError(
                "unsupported radical: fractional power of a non-monomial expression"
            )
        (m, c), = self.num
        root = _exact_root(c, k.denominator) ** k.numerator
        mono = _mono_scale(m, k.numerator, k.denominator)
        return Expr(((mono, root),))

    # -- printing ----------------------------------------------------------

    def __str__(self) -> str:
        from .expr_parser import format_expr

        return format_expr(self)

    def __repr__(self) -> str:
        return f"Expr({self})"


def _sorted_terms(terms: Mapping[Mono, Fraction]) -> Tuple[Tuple[Mono, Fraction], ...]:
    if len(terms) > MAX_TERMS:
        raise ExpressionTooLargeError(
            f"canonical sum has {len(terms)} terms (limit {MAX_TERMS})"
        )
    return tuple(sorted(terms.items(), key=lambda t: _term_sort_key(t[0])))


ZERO = Expr(())
ONE = Expr(_ONE_TERMS)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, Atom):
        return Expr.atom(value)
    if isinstance(value, (int, Fraction)):
        return Expr.const(value)
    raise TypeError(f"cannot convert {type(value).__name__} to Expr")


# --------------------------------------------------------------------------
# Expression trees
# --------------------------------------------------------------------------
# A tree is an Atom, int, Fraction, Expr, or a tuple (op, *children) with op
# in {"add", "sub", "mul", "div", "neg", "pow"}; "pow" takes a rational
# exponent as its second child.

_BINARY = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
}


def canonicalize(tree) -> Expr:
    """Canonical form of an expression tree (or re-canonicalize an Expr)."""
    if isinstance(tree, Expr):
        num = dict(tree.num)
        if tree.is_polynomial:
            return Expr.from_terms(num)
        return Expr.from_terms(num, dict(tree.den))
    if isinstance(tree, (Atom, int, Fraction)):
        return as_expr(tree)
    if isinstance(tree, tuple) and tree:
        op = tree[0]
        if op in _BINARY:
            return _BINARY[op](canonicalize(tree[1]), canonicalize(tree[2]))
        if op == "neg":
            return -canonicalize(tree[1])
        if op == "pow":
            exponent = tree[2]
            if not isinstance(exponent, (int, Fraction)):
                exponent = canonicalize(exponent).constant_value()
            return canonicalize(tree[1]) ** exponent
    raise ExprError(f"malformed expression tree: {tree!r}")


# --------------------------------------------------------------------------
# Calculus and substitution
# --------------------------------------------------------------------------


def _diff_terms(terms: Mapping[Mono, Fraction], key: int) -> Terms:
    acc: Terms = {}
    for m, c in terms.items():
        for pos, (k, e) in enumerate(m):
            if k == key:
                nm = m[:pos] + (((k, e - 4),) if e != 4 else ()) + m[pos + 1:]
                _add_into(acc, {nm: c * Fraction(e, 4)})
            elif key == _X_KEY and _is_coeff_key(k):
                rest = m[:pos] + (((k, e - 4),) if e != 4 else ()) + m[pos + 1:]
                nm = _mono_mul(rest, ((k + 1, 4),))
                _add_into(acc, {nm: c * Fraction(e, 4)})
    return acc


def diff(e: Expr, v: Atom) -> Expr:
    """Partial derivative; d/dx maps f_i^(k) to f_i^(k+1)."""
    if v.kind == "coeff":
        raise ExprError("differentiation is only defined w.r.t. chart variables and parameters")
    key = v.key
    dn = _diff_terms(dict(e.num), key)
    if e.is_polynomial:
        return Expr.from_terms(dn)
    dd = _diff_terms(dict(e.den), key)
    if not dd:
        return Expr.from_terms(dn, dict(e.den))
    n = _mul_terms(dn, dict(e.den))
    _add_into(n, _mul_terms(dict(e.num), dd), Fraction(-1))
    return Expr.from_terms(n, _mul_terms(dict(e.den), dict(e.den)))


def substitute(e: Expr, bindings: Mapping[Atom, Expr]) -> Expr:
    """Simultaneous substitution of atoms by expressions."""
    if not bindings:
        return e
    bound = {a.key: as_expr(b) for a, b in bindings.items()}
    for b in bound.values():
        if b.atom_keys() & bound.keys():
            raise CyclicBindingError("cyclic binding: a bound value mentions a substituted atom")
    keys = e.atom_keys()
    if not keys & bound.keys():
        return e
    cache: dict = {}

    def power(k: int, q: int) -> Expr:
        got = cache.get((k, q))
        if got is None:
            got = bound[k] ** Fraction(q, 4)
            cache[(k, q)] = got
        return got

    def subs_sum(terms) -> Expr:
        free_acc: Terms = {}
        mixed: Dict[Mono, Terms] = {}
        for m, c in terms:
            free = tuple(t for t in m if t[0] not in bound)
            hit = tuple(t for t in m if t[0] in bound)
            if not hit:
                _add_into(free_acc, {m: c})
            else:
                mixed.setdefault(hit, {})
                _add_into(mixed[hit], {free: c})
        out = Expr.from_terms(free_acc)
        for hit, rest in mixed.items():
            factor = ONE
            for k, q in hit:
                factor = factor * power(k, q)
            out = out + factor * Expr.from_terms(rest)
        return out

    num = subs_sum(e.num)
    if e.is_polynomial:
        return num
    return num / subs_sum(e.den)


def _exact_quotient(terms: Terms, g: Terms) -> Terms | None:
    """terms / g when g divides terms exactly as polynomials, else None.

    Both sides are shifted by their monomial content first, so Laurent
    exponents are handled; lex order on the union of keys drives the division.
    """
    keys = sorted({k for m in list(terms) + list(g) for k, _ in m})

    def content(ts):
        return tuple((k, lo) for k in keys if (lo := min(dict(m).get(k, 0) for m in ts)))

    tc, gc = content(terms), content(g)
    rem = _shift_terms(terms, _mono_inv(tc), Fraction(1))
    g = _shift_terms(g, _mono_inv(gc), Fraction(1))

    vecs: Dict[Mono, Tuple[int, ...]] = {}

    def vec(m):
        v = vecs.get(m)
        if v is None:
            dm = dict(m)
            v = vecs[m] = tuple(dm.get(k, 0) for k in keys)
        return v

    lead = max(g, key=vec)
    lead_v, lead_c = vec(lead), g[lead]
    # Max-heap of remainder monomials by lex order; stale entries are skipped.
    heap = [(tuple(-e for e in vec(m)), m) for m in rem]
    heapq.heapify(heap)
    quot: Terms = {}
    while heap:
        _, top = heapq.heappop(heap)
        if top not in rem:
            continue
        diffv = [a - b for a, b in zip(vec(top), lead_v)]
        if min(diffv) < 0:
            return None
        m = tuple((k, e) for k, e in zip(keys, diffv) if e)
        c = rem[top] / lead_c
        _add_into(quot, {m: c})
        for gm, gc_ in g.items():
            t = _mono_mul(gm, m)
            was = t in rem
            _add_into(rem, {t: gc_ * c}, Fraction(-1))
            if t in rem and not was:
                heapq.heappush(heap, (tuple(-e for e in vec(t)), t))
    if rem:
        return None
    return _shift_terms(quot, _mono_mul(tc, _mono_inv(gc)), Fraction(1))


def cancel_factor(e: Expr, g: Expr) -> Expr:
    """Divide numerator and denominator of ``e`` by the highest power of the polynomial ``g`` both allow."""
    if e.is_polynomial or not g.is_polynomial or g.n_terms() < 2:
        return e
    num, den, gt = dict(e.num), dict(e.den), dict(g.num)
    # The denominator is small: peel g off it to bound the power, then try
    # that power on the numerator in one division.
    k, rest = 0, den
    while (q := _exact_quotient(rest, gt)) is not None:
        k, rest = k + 1, q
    while k:
        gk = _power_terms(gt, k)
        qn = _exact_quotient(num, gk)
        if qn is not None:
            return Expr.from_terms(qn, _exact_quotient(den, gk))
        k -= 1
    return e


def _power_terms(t: Terms, k: int) -> Terms:
    out: Terms = {_ONE_MONO: Fraction(1)}
    for _ in range(k):
        out = _mul_terms(out, t)
    return out


def total_derivative(e: Expr) -> Expr:
    """D = d/dx + p d/du + q d/dp + r d/dq + s d/dr on the 4-jet.

    Expressions containing s cannot be differentiated on J^4.
    """
    if diff(e, S):
        raise ExprError("total derivative of an expression involving s leaves the 4-jet")
    out = diff(e, X)
    for lower, upper in ((U, P), (P, Q), (Q, R), (R, S)):
        d = diff(e, lower)
        if d:
            out = out + Expr.atom(upper) * d
    return out


# --------------------------------------------------------------------------
# Numeric evaluation and equality
# --------------------------------------------------------------------------

SINGULAR_TOL = 1e-12


def _env_by_key(env: Mapping, conv=float) -> Dict[int, float]:
    out = {}
    for a, v in env.items():
        out[a.key if isinstance(a, Atom) else int(a)] = conv(v)
    return out


def _to_decimal(v) -> decimal.Decimal:
    if isinstance(v, Fraction):
        return decimal.Decimal(v.numerator) / decimal.Decimal(v.denominator)
    return decimal.Decimal(v)


def _eval_sum(terms, env: Mapping[int, float], conv=float) -> Tuple[float, float]:
    total = conv(0)
    scale = conv(0)
    for m, c in terms:
        t = conv(c)
        for k, e in m:
            try:
                v = env[k]
            except KeyError:
                raise MissingBindingError(f"missing binding for {atom_from_key(k).name}") from None
            if e % 4 == 0:
                n = e // 4
                if n < 0 and abs(v) < SINGULAR_TOL:
                    raise SingularEvaluationError()
                t *= v ** n
            else:
                if v <= 0:
                    raise SingularEvaluationError(
                        f"singular evaluation: fractional power of non-positive {atom_from_key(k).name}"
                    )
                t *= v ** (conv(e) / 4)
        total += t
        scale += abs(t)
    return total, scale


def _eval_with_scale(e: Expr, env: Mapping[int, float], conv=float) -> Tuple[float, float]:
    n, ns = _eval_sum(e.num, env, conv)
    if e.is_polynomial:
        return n, ns
    d, _ = _eval_sum(e.den, env, conv)
    if abs(d) < SINGULAR_TOL:
        raise SingularEvaluationError()
    return n / d, ns / abs(d)


def eval_numeric(e: Expr, env: Mapping, digits: int | None = None) -> float:
    """Evaluate in IEEE doubles; radicals take the positive real root.

    With ``digits`` the sums are carried in decimal arithmetic at that
    precision and rounded to a double at the end.  Expanded polynomials in
    x cancel badly in doubles where the map's derivative is small.
    """
    if digits is None:
        return _eval_with_scale(e, _env_by_key(env))[0]
    with decimal.localcontext() as ctx:
        ctx.prec = digits
        return float(_eval_with_scale(e, _env_by_key(env, _to_decimal), _to_decimal)[0])


class Verdict(enum.Enum):
    SYNTACTIC = "syntactically equal"
    CROSS_MULTIPLIED = "equal after cross-multiplication"
    PROBABILISTIC = "probabilistically equal"
    UNEQUAL = "not equal"

    def __bool__(self) -> bool:
        return self is not Verdict.UNEQUAL


EQUAL_TRIALS = 50
EQUAL_RTOL = 1e-10


def random_env(keys: Iterable[int], rng: random.Random, low: float = 0.5, high: float = 2.0) -> Dict[int, float]:
    return {k: rng.uniform(low, high) for k in sorted(keys)}


def equal(e1: Expr, e2: Expr, *, seed: int = 0, trials: int = EQUAL_TRIALS,
          rtol: float = EQUAL_RTOL) -> Verdict:
    """Three-tier equality: syntactic, cross-multiplied, then probabilistic."""
    e1, e2 = as_expr(e1), as_expr(e2)
    if e1 == e2:
        return Verdict.SYNTACTIC
    diff_num = _mul_terms(dict(e1.num), dict(e2.den))
    _add_into(diff_num, _mul_terms(dict(e2.num), dict(e1.den)), Fraction(-1))
    if not diff_num:
        return Verdict.CROSS_MULTIPLIED
    rng = random.Random(seed)
    keys = e1.atom_keys() | e2.atom_keys()
    for _ in range(trials):
        env = random_env(keys, rng)
        try:
            a, sa = _eval_with_scale(e1, env)
            b, sb = _eval_with_scale(e2, env)
        except SingularEvaluationError:
            continue
        if abs(a - b) > rtol * max(sa, sb, abs(a), abs(b), 1e-300):
            return Verdict.UNEQUAL
    return Verdict.PROBABILISTIC


def relative_deviation(e1: Expr, e2: Expr, envs: Iterable[Mapping]) -> float:
    """Largest |e1 - e2| / max(|e1|, |e2|, term scale) over the given points."""
    worst = 0.0
    for env in envs:
        k = _env_by_key(env)
        a, sa = _eval_with_scale(e1, k)
        b, sb = _eval_with_scale(e2, k)
        worst = max(worst, abs(a - b) / max(sa, sb, abs(a), abs(b), 1e-300))
    return worst

"""Fourth-order operators, fiber-preserving maps and their jet prolongation."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

from .expr_core import (
    CHART,
    ONE,
    PARAMS,
    P,
    Q,
    R,
    S,
    U,
    X,
    ZERO,
    Atom,
    Expr,
    ExprError,
    as_expr,
    cancel_factor,
    coeff,
    diff,
    eval_numeric,
    substitute,
    total_derivative,
)

ORDER = 4
DEFAULT_INTERVAL = (1.0, 2.0)
GRID_POINTS = 101
# Decimal digits for expressions built from a map: expanded powers of xi' cancel in doubles.
MAP_DIGITS = 40


class Mode(enum.Enum):
    DIRECT = "direct"
    GAUGE = "gauge"

    def __str__(self) -> str:
        return self.value


class DomainError(ExprError):
    pass


def _grid(interval: Tuple[float, float], n: int = GRID_POINTS) -> List[float]:
    a, b = interval
    return [a + (b - a) * i / (n - 1) for i in range(n)]


def _x_only(e: Expr, what: str) -> None:
    extra = {a for a in e.atoms() if a != X}
    if extra:
        names = ", ".join(sorted(a.name for a in extra))
        raise DomainError(f"{what} may only depend on x (found {names})")


@dataclass(frozen=True)
class OperatorSpec:
    """Coefficients f0..f4 of D[u] = sum f_i(x) D^i u."""

    coeffs: Tuple[Expr, ...]
    name: Optional[str] = None

    def __post_init__(self):
        coeffs = tuple(as_expr(c) for c in self.coeffs)
        if len(coeffs) != ORDER + 1:
            raise ValueError("an operator needs exactly five coefficients")
        if coeffs[ORDER].is_zero:
            raise DomainError("f4 must be nonzero")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def generic(cls) -> "OperatorSpec":
        """The operator with free coefficient atoms f0..f4."""
        return cls(tuple(Expr.atom(coeff(i)) for i in range(ORDER + 1)), name="generic")

    @property
    def is_generic(self) -> bool:
        return any(a.kind == "coeff" for c in self.coeffs for a in c.atoms())

    def __getitem__(self, i: int) -> Expr:
        return self.coeffs[i]

    def derivatives(self, max_order: int) -> List[List[Expr]]:
        """``out[i][k]`` is the k-th x-derivative of f_i."""
        out = []
        for c in self.coeffs:
            row = [c]
            for _ in range(max_order):
                row.append(diff(row[-1], X))
            out.append(row)
        return out

    def coefficient_env(self, x0: float, max_order: int = ORDER) -> Dict[Atom, float]:
        """Numeric values of every f_i^(k) atom at x0 (concrete operators only)."""
        env = {}
        for i, row in enumerate(self.derivatives(max_order)):
            for k, e in enumerate(row):
                env[coeff(i, k)] = eval_numeric(e, {X: x0})
        return env

    def check_domain(self, interval: Tuple[float, float] = DEFAULT_INTERVAL) -> None:
        for c in self.coeffs:
            _x_only(c, "operator coefficients")
        for x0 in _grid(interval):
            if eval_numeric(self.coeffs[ORDER], {X: x0}) <= 0:
                raise DomainError(f"f4 must be positive on the interval (fails at x = {x0:g})")


@dataclass(frozen=True)
class Transformation:
    """x_bar = xi(x), u_bar = phi(x) u."""

    xi: Expr
    phi: Expr

    def __post_init__(self):
        xi, phi = as_expr(self.xi), as_expr(self.phi)
        _x_only(xi, "xi")
        _x_only(phi, "phi")
        if phi.is_zero:
            raise DomainError("phi must be nonzero")
        if diff(xi, X).is_zero:
            raise DomainError("xi must have nonzero derivative")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "phi", phi)

    @classmethod
    def identity(cls) -> "Transformation":
        return cls(Expr.atom(X), ONE)

    @cached_property
    def xi_derivatives(self) -> Tuple[Expr, ...]:
        out = [self.xi]
        for _ in range(ORDER):
            out.append(diff(out[-1], X))
        return tuple(out)

    @cached_property
    def phi_derivatives(self) -> Tuple[Expr, ...]:
        out = [self.phi]
        for _ in range(ORDER):
            out.append(diff(out[-1], X))
        return tuple(out)

    @property
    def is_affine(self) -> bool:
        return self.xi_derivatives[2].is_zero

    @cached_property
    def prolongation(self) -> Tuple[Expr, ...]:
        """Barred jet coordinates (x, u, p, q, r, s) as Exprs on J^4."""
        inv = ONE / self.xi_derivatives[1]
        coords = [self.xi, self.phi * Expr.atom(U)]
        for _ in range(ORDER):
            coords.append(self.tidy(inv * total_derivative(coords[-1])))
        return tuple(coords)

    @cached_property
    def jacobian(self) -> Tuple[Tuple[Expr, ...], ...]:
        """d(barred coordinate i)/d(coordinate j)."""
        return tuple(tuple(diff(c, v) for v in CHART) for c in self.prolongation)

    def tidy(self, e: Expr) -> Expr:
        """Cancel the factors xi' and phi that quotients built from this map carry."""
        return cancel_factor(cancel_factor(e, self.xi_derivatives[1]), self.phi)

    def compose(self, first: "Transformation") -> "Transformation":
        """The map ``self`` applied after ``first``."""
        # Rename x through a spare atom: substitution must not be cyclic.
        spare = PARAMS[-1]
        at = lambda e: substitute(substitute(e, {X: Expr.atom(spare)}), {spare: first.xi})
        return Transformation(at(self.xi), at(self.phi) * first.phi)

    def check_domain(self, interval: Tuple[float, float] = DEFAULT_INTERVAL) -> None:
        for x0 in _grid(interval):
            if abs(eval_numeric(self.phi, {X: x0})) < 1e-12:
                raise DomainError(f"phi vanishes on the interval (x = {x0:g})")
            if abs(eval_numeric(self.xi_derivatives[1], {X: x0})) < 1e-12:
                raise DomainError(f"xi' vanishes on the interval (x = {x0:g})")


@dataclass(frozen=True)
class JetPoint:
    x: float
    u: float
    p: float
    q: float
    r: float
    s: float

    def env(self) -> Dict[Atom, float]:
        return dict(zip(CHART, self.as_tuple()))

    def as_tuple(self) -> Tuple[float, ...]:
        return (self.x, self.u, self.p, self.q, self.r, self.s)

    @classmethod
    def from_seq(cls, values: Sequence[float]) -> "JetPoint":
        if len(values) != 6:
            raise ValueError("a jet point has six coordinates x,u,p,q,r,s")
        return cls(*(float(v) for v in values))


def prolong(T: Transformation, jp: JetPoint) -> JetPoint:
    env = jp.env()
    return JetPoint(*(eval_numeric(c, env, MAP_DIGITS) for c in T.prolongation))


# --------------------------------------------------------------------------
# Operator transformation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ComposedOperator:
    """A transformed operator carried in the source variable x.

    ``coeffs[i]`` is the coefficient of the i-th x_bar-derivative, written as
    a function of the *source* point x; the target point is x_bar = xi(x).
    """

    coeffs: Tuple[Expr, ...]
    transformation: Transformation
    _derivs: Dict[int, List[List[Expr]]] = field(default_factory=dict, compare=False, repr=False)

    def coefficient_exprs(self, max_order: int) -> List[List[Expr]]:
        """``out[i][k]``: k-th x_bar-derivative of f_bar_i, as a function of x."""
        if max_order in self._derivs:
            return self._derivs[max_order]
        inv = ONE / self.transformation.xi_derivatives[1]
        out = []
        for c in self.coeffs:
            row = [c]
            for _ in range(max_order):
                row.append(self.transformation.tidy(inv * diff(row[-1], X)))
            out.append(row)
        self._derivs[max_order] = out
        return out

    def coefficient_env(self, x_source: float, max_order: int = ORDER) -> Dict[Atom, float]:
        """Values of f_bar_i^(k) at x_bar = xi(x_source)."""
        exprs = self.coefficient_exprs(max_order)
        env = {}
        for i, row in enumerate(exprs):
            for k, e in enumerate(row):
                env[coeff(i, k)] = eval_numeric(e, {X: x_source}, MAP_DIGITS)
        return env

    def as_target_operator(self) -> OperatorSpec:
        """Coefficients as functions of x_bar; only for affine xi."""
        T = self.transformation
        if not T.is_affine:
            raise ExprError("inverse not available; use composed representation")
        slope = T.xi_derivatives[1]
        shift = T.xi - slope * Expr.atom(X)
        x_of_xbar = (Expr.atom(X) - shift) / slope
        return OperatorSpec(tuple(substitute(c, {X: x_of_xbar}) for c in self.coeffs))

    def apply_at_source(self, u_poly: Expr, x_source: float) -> float:
        """D_bar[u_bar](xi(x_source)) for u_bar a function given in x."""
        inv = ONE / self.transformation.xi_derivatives[1]
        total = 0.0
        d = u_poly
        for i in range(ORDER + 1):
            if i:
                d = self.transformation.tidy(inv * diff(d, X))
            at = {X: x_source}
            total += eval_numeric(self.coeffs[i], at, MAP_DIGITS) * eval_numeric(d, at, MAP_DIGITS)
        return total


def transform_operator(op: OperatorSpec, T: Transformation, mode: Mode) -> ComposedOperator:
    """Coefficients f_bar with D_bar[u_bar] = D[u] (direct) or phi*D[u] (gauge)."""
    # D_bar^i u_bar = sum_k c[i][k] u^(k); solve f_bar * C = target row.
    # The barred jets u_bar..s_bar are the prolongation's coordinates 1..5.
    c_rows = [[diff(cur, a) for a in (U, P, Q, R, S)] for cur in T.prolongation[1:]]
    target = list(op.coeffs)
    if mode is Mode.GAUGE:
        target = [T.phi * f for f in target]
    f_bar: List[Expr] = [ZERO] * (ORDER + 1)
    for i in range(ORDER, -1, -1):
        acc = target[i]
        for j in range(i + 1, ORDER + 1):
            acc = acc - f_bar[j] * c_rows[j][i]
        f_bar[i] = T.tidy(acc / c_rows[i][i])
    return ComposedOperator(tuple(f_bar), T)


def apply_operator(op: OperatorSpec, u_poly: Expr, x0: float) -> float:
    """sum f_i(x0) u^(i)(x0) with exact derivatives of the polynomial u."""
    total = 0.0
    d = u_poly
    for i in range(ORDER + 1):
        if i:
            d = diff(d, X)
        total += eval_numeric(op.coeffs[i], {X: x0}) * eval_numeric(d, {X: x0})
    return total


def invariant_function(op: OperatorSpec, mode: Mode) -> Expr:
    """D[u] on J^4 (direct) or D[u]/u (gauge) as a symbolic expression."""
    jets = [Expr.atom(a) for a in (U, P, Q, R, S)]
    value = ZERO
    for f, j in zip(op.coeffs, jets):
        value = value + f * j
    if mode is Mode.GAUGE:
        value = value / Expr.atom(U)
    return value


def invariant_I(op: OperatorSpec, jp: JetPoint, mode: Mode) -> float:
    f = [eval_numeric(c, {X: jp.x}) for c in op.coeffs]
    return _invariant_from_values(f, jp, mode)


def _invariant_from_values(f: Sequence[float], jp: JetPoint, mode: Mode) -> float:
    top = f[4] * jp.s + f[3] * jp.r + f[2] * jp.q + f[1] * jp.p
    if mode is Mode.DIRECT:
        return top + f[0] * jp.u
    if jp.u == 0:
        raise DomainError("u must be nonzero for the gauge invariant")
    return top / jp.u + f[0]


def transformed_invariant_I(cop: ComposedOperator, jp: JetPoint, mode: Mode) -> float:
    """I of the transformed operator at prolong(T, jp), i.e. at x_bar = xi(jp.x)."""
    env = cop.coefficient_env(jp.x, 0)
    f = [env[coeff(i)] for i in range(ORDER + 1)]
    return _invariant_from_values(f, prolong(cop.transformation, jp), mode)

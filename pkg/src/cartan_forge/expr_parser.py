"""Text grammar for expressions, operator files and transformation files.

Expression grammar (EBNF, see FORMATS.md for the file formats)::

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = ("-" | "+") unary | power ;
    power   = primary [ "^" unary ] ;          (* right associative *)
    primary = number | ident | "(" expr ")" ;
    number  = digit { digit } [ "." digit { digit } ] ;
    ident   = letter { letter | digit | "_" } { "'" } ;

Exponents must reduce to rational constants.  Decimal literals are read
exactly (``0.75`` is ``3/4``).
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Tuple

from .expr_core import (
    CHART_NAMES,
    N_COEFFS,
    N_PARAMS,
    Atom,
    Expr,
    ExprError,
    atom_from_key,
    coeff,
    param,
    var,
)

__all__ = [
    "SourceSpan",
    "ParseError",
    "parse_expr",
    "format_expr",
    "parse_operator_file",
    "parse_transformation",
    "ALL_SYMBOLS",
    "JET_SYMBOLS",
]


@dataclass(frozen=True)
class SourceSpan:
    begin: int
    end: int
    line: int
    column: int

    def __str__(self) -> str:
        return f"line {self.line}, column {self.column}"


class ParseError(ExprError):
    def __init__(self, message: str, span: SourceSpan):
        super().__init__(f"{message} at {span}")
        self.message = message
        self.span = span


def _span(text: str, begin: int, end: int, base: int = 0) -> SourceSpan:
    begin_abs = base + begin
    line = text.count("\n", 0, begin_abs) + 1
    col = begin_abs - (text.rfind("\n", 0, begin_abs) + 1) + 1
    return SourceSpan(begin_abs, base + end, line, col)


# --------------------------------------------------------------------------
# Symbol tables
# --------------------------------------------------------------------------

MAX_PRIMES = 8


def symbol_atom(name: str) -> Optional[Atom]:
    """Atom named by ``name`` (``x``, ``a3``, ``f4''``), or None."""
    if name in CHART_NAMES:
        return var(name)
    m = re.fullmatch(r"a(\d+)", name)
    if m and 1 <= int(m.group(1)) <= N_PARAMS and not m.group(1).startswith("0"):
        return param(int(m.group(1)))
    m = re.fullmatch(r"f(\d)('*)", name)
    if m and int(m.group(1)) < N_COEFFS:
        return coeff(int(m.group(1)), len(m.group(2)))
    return None


COEFF_SYMBOLS = frozenset(
    f"f{i}" + "'" * k for i in range(N_COEFFS) for k in range(MAX_PRIMES + 1)
)
JET_SYMBOLS = frozenset(CHART_NAMES)
ALL_SYMBOLS = JET_SYMBOLS | frozenset(f"a{i}" for i in range(1, N_PARAMS + 1)) | COEFF_SYMBOLS


# --------------------------------------------------------------------------
# Tokenizer and parser
# --------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d+)?)|(?P<ident>[A-Za-z][A-Za-z0-9_]*'*)|(?P<op>[-+*/^()]))"
)


@dataclass
class _Tok:
    kind: str
    text: str
    begin: int
    end: int


def _tokenize(text: str, base: int, full: str) -> List[_Tok]:
    toks = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ParseError(
                f"unexpected character {text[bad]!r}", _span(full, bad, bad + 1, base)
            )
        kind = m.lastgroup
        toks.append(_Tok(kind, m.group(kind), m.start(kind), m.end(kind)))
        pos = m.end()
    toks.append(_Tok("eof", "", len(text), len(text)))
    return toks


class _Parser:
    def __init__(self, text: str, allowed: Iterable[str], base: int = 0, full: Optional[str] = None):
        self.text = text
        self.full = text if full is None else full
        self.base = base
        self.allowed = frozenset(allowed)
        self.toks = _tokenize(text, base, self.full)
        self.i = 0

    def span(self, begin: int, end: int) -> SourceSpan:
        return _span(self.full, begin, max(end, begin), self.base)

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, message: str, tok: _Tok):
        end = tok.end if tok.kind != "eof" else tok.begin
        begin = tok.begin if tok.kind != "eof" else max(tok.begin - 1, 0)
        raise ParseError(message, self.span(begin, max(end, begin + 1) if self.text else begin))

    def guard(self, fn, begin: int, end: int):
        try:
            return fn()
        except ParseError:
            raise
        except ExprError as exc:
            raise ParseError(str(exc), self.span(begin, end)) from None

    def parse(self) -> Expr:
        if self.peek().kind == "eof":
            self.error("empty expression", self.peek())
        value, _, _ = self.expr()
        tok = self.peek()
        if tok.kind != "eof":
            self.error(f"unexpected {tok.text!r}", tok)
        return value

    def expr(self):
        left, b, e = self.term()
        while self.peek().text in ("+", "-") and self.peek().kind == "op":
            op = self.take().text
            right, _, e = self.term()
            if op == "+":
                left = self.guard(lambda: left + right, b, e)
            else:
                left = self.guard(lambda: left - right, b, e)
        return left, b, e

    def term(self):
        left, b, e = self.unary()
        while self.peek().text in ("*", "/") and self.peek().kind == "op":
            op = self.take().text
            right, _, e = self.unary()
            if op == "*":
                left = self.guard(lambda: left * right, b, e)
            else:
                left = self.guard(lambda: left / right, b, e)
        return left, b, e

    def unary(self):
        tok = self.peek()
        if tok.kind == "op" and tok.text in ("-", "+"):
            self.take()
            value, _, e = self.unary()
            return (-value if tok.text == "-" else value), tok.begin, e
        return self.power()

    def power(self):
        base, b, e = self.primary()
        if self.peek().kind == "op" and self.peek().text == "^":
            self.take()
            exponent, eb, e = self.unary()
            if not exponent.is_constant():
                raise ParseError("exponent must be a rational constant", self.span(eb, e))
            k = exponent.constant_value()
            base = self.guard(lambda: base ** k, b, e)
        return base, b, e

    def primary(self):
        tok = self.take()
        if tok.kind == "num":
            return Expr.const(Fraction(tok.text)), tok.begin, tok.end
        if tok.kind == "ident":
            atom = symbol_atom(tok.text) if tok.text in self.allowed else None
            if atom is None:
                raise ParseError(f"unknown symbol {tok.text!r}", self.span(tok.begin, tok.end))
            return Expr.atom(atom), tok.begin, tok.end
        if tok.kind == "op" and tok.text == "(":
            value, _, _ = self.expr()
            close = self.take()
            if close.kind != "op" or close.text != ")":
                self.i -= 1
                self.error("expected ')'", close)
            return value, tok.begin, close.end
        self.i -= 1
        if tok.kind == "eof":
            self.error("unexpected end of input", tok)
        self.error(f"unexpected {tok.text!r}", tok)


def parse_expr(text: str, allowed_vars: Iterable[str] = ALL_SYMBOLS) -> Expr:
    """Parse ``text`` into a canonical Expr; symbols outside ``allowed_vars`` are errors."""
    return _Parser(text, allowed_vars).parse()


# --------------------------------------------------------------------------
# Pretty printer
# --------------------------------------------------------------------------


def _fmt_exponent(q: Fraction) -> str:
    if q.denominator == 1 and q > 0:
        return str(q.numerator)
    return f"({q})"


def _fmt_mono(m) -> str:
    parts = []
    for k, e in m:
        name = atom_from_key(k).name
        q = Fraction(e, 4)
        parts.append(name if q == 1 else f"{name}^{_fmt_exponent(q)}")
    return "*".join(parts)


def _fmt_sum(terms) -> str:
    out = []
    for i, (m, c) in enumerate(terms):
        neg = c < 0
        a = -c if neg else c
        if not m:
            body = str(a)
        elif a == 1:
            body = _fmt_mono(m)
        else:
            body = f"{a}*{_fmt_mono(m)}"
        if i == 0:
            out.append(f"-{body}" if neg else body)
        else:
            out.append(f" - {body}" if neg else f" + {body}")
    return "".join(out)


def format_expr(e: Expr) -> str:
    """Deterministic text form; ``parse_expr(format_expr(e)) == e``."""
    if e.is_zero:
        return "0"
    num = _fmt_sum(e.num)
    if e.is_polynomial:
        return num
    if len(e.num) > 1:
        num = f"({num})"
    return f"{num}/({_fmt_sum(e.den)})"


# --------------------------------------------------------------------------
# Key = value files
# --------------------------------------------------------------------------

_LINE = re.compile(r"^\s*([A-Za-z][A-Za-z0-9_]*)\s*=\s*(.*?)\s*$")


def _key_value_lines(text: str) -> Iterable[Tuple[str, str, int, int, int]]:
    """Yield (key, value, value offset, key offset, key end) for each non-blank line."""
    offset = 0
    for raw in text.splitlines(keepends=True):
        line = raw.rstrip("\r\n")
        code = line.split("#", 1)[0]
        if code.strip():
            m = _LINE.match(code)
            if not m:
                lead = len(code) - len(code.lstrip())
                raise ParseError(
                    "expected 'key = expression'",
                    _span(text, lead, len(code.rstrip()), offset),
                )
            yield m.group(1), m.group(2), offset + m.start(2), offset + m.start(1), offset + m.end(1)
        offset += len(raw)


def _parse_entries(text: str, keys: Iterable[str], free_keys: Iterable[str] = ()) -> Dict[str, Tuple[object, SourceSpan]]:
    keys = set(keys)
    free_keys = set(free_keys)
    seen: Dict[str, Tuple[object, SourceSpan]] = {}
    for key, value, voff, kb, ke in _key_value_lines(text):
        kspan = _span(text, kb, ke)
        if key not in keys and key not in free_keys:
            raise ParseError(f"unknown key {key!r}", kspan)
        if key in seen:
            raise ParseError(f"duplicate key {key!r}", kspan)
        if key in free_keys:
            seen[key] = (value, kspan)
            continue
        if not value:
            raise ParseError(f"empty expression for {key!r}", kspan)
        expr = _Parser(value, {"x"}, base=voff, full=text).parse()
        seen[key] = (expr, _span(text, voff, voff + len(value)))
    return seen



def parse_operator_file(text: str):
    """Parse ``f0 .. f4 = <expr in x>`` lines (plus optional ``name``)."""
    from .jet_ops import OperatorSpec

    entries = _parse_entries(text, [f"f{i}" for i in range(N_COEFFS)], free_keys=["name"])
    if "f4" not in entries:
        raise ParseError("missing f4", _span(text, len(text), len(text)))
    f4, span = entries["f4"]
    if f4.is_zero:
        raise ParseError("f4 must be nonzero", span)
    coeffs = tuple(entries.get(f"f{i}", (Expr.const(0), None))[0] for i in range(N_COEFFS))
    name = entries["name"][0] if "name" in entries else None
    return OperatorSpec(coeffs, name=name)


def parse_transformation(text: str):
    """Parse ``xi = <expr in x>`` and ``phi = <expr in x>``."""
    from .jet_ops import Transformation

    entries = _parse_entries(text, ["xi", "phi"])
    for key in ("xi", "phi"):
        if key not in entries:
            raise ParseError(f"missing {key}", _span(text, len(text), len(text)))
    phi, span = entries["phi"]
    if phi.is_zero:
        raise ParseError("phi must be nonzero", span)
    xi, span = entries["xi"]
    if not xi.depends_on(var("x")):
        raise ParseError("xi must have nonzero derivative", span)
    return Transformation(xi, phi)

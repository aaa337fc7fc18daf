"""Exact polynomial expressions over jet-space variables.

The expression kernel keeps every value in a fully expanded normal form: a
sum of monomials, each monomial a rational coefficient times a sorted
product of powers of atoms.  An atom is either a named ``Symbol`` (an
independent variable, a dependent variable, a derivative coordinate, or a
free parameter) or an opaque ``FnAtom`` application such as ``sin(psi)`` or
an undetermined tangent-field component ``xi_x(x, y, z, B1, ...)``.
Opaque applications are never rewritten; their partial derivatives are
fresh atoms carrying a derivative multi-index.  Structural equality of
normal forms therefore decides equality for all expression classes handled
here (polynomials in jet coordinates with atomic unknowns).

Text input and output use a small declaration grammar::

    indep x, y, z;
    dep B1, B2, B3, P;
    param c;
    eq diff(B1,x) + diff(B2,y) + diff(B3,z) = 0;

``diff(B1, x, y)`` denotes the derivative coordinate of ``B1`` with respect
to ``x`` and ``y`` (order of the differentiation variables is irrelevant).
The pretty-printer emits the same grammar, so parsing its output returns a
structurally equal expression.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Iterator, Mapping

import numpy as np

__all__ = [
    "ExprError",
    "ParseError",
    "CollectError",
    "EvalError",
    "Symbol",
    "FnAtom",
    "Expr",
    "Context",
    "ProgramFile",
    "collect",
    "quotient",
    "parse_program",
    "compile_numeric",
    "NUMERIC_FUNCTIONS",
]


class ExprError(Exception):
    """Base class for expression-kernel failures."""


class ParseError(ExprError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


class CollectError(ExprError):
    """Raised when an expression is not polynomial in the requested basis."""


class EvalError(ExprError):
    """Raised when numeric evaluation hits an unbound name or opaque atom."""


_KIND_RANK = {"independent": 0, "dependent": 1, "jet": 2, "parameter": 3}


@dataclass(frozen=True)
class Symbol:
    """A named coordinate of the jet space.

    ``kind`` is one of ``independent``, ``dependent``, ``jet`` or
    ``parameter``.  Jet symbols carry the parent dependent name in ``base``
    and the canonical (sorted) tuple of differentiation variables in
    ``wrt``.
    """

    name: str
    kind: str
    base: str = ""
    wrt: tuple[str, ...] = ()
    sort_key: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in _KIND_RANK:
            raise ValueError(f"unknown symbol kind {self.kind!r}")
        if self.kind == "jet" and (not self.base or not self.wrt):
            raise ValueError("jet symbol requires base and wrt")
        key = (0, _KIND_RANK[self.kind], self.base or self.name, self.wrt, self.name)
        object.__setattr__(self, "sort_key", key)

    @property
    def is_jet(self) -> bool:
        return self.kind == "jet"

    @property
    def order(self) -> int:
        return len(self.wrt)

    def __repr__(self):
        return self.name


@dataclass(frozen=True)
class FnAtom:
    """An opaque function application, optionally derivative-tagged.

    ``dtag[k]`` counts differentiations with respect to the k-th argument
    slot.  A tagged atom is never evaluated symbolically; it only compares
    and prints.
    """

    head: str
    args: tuple
    dtag: tuple[int, ...] = ()
    sort_key: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        dtag = self.dtag or (0,) * len(self.args)
        if len(dtag) != len(self.args):
            raise ValueError("derivative tag length must match argument count")
        object.__setattr__(self, "dtag", tuple(dtag))
        key = (1, self.head, self.dtag, tuple(a.sort_key for a in self.args))
        object.__setattr__(self, "sort_key", key)

    def bump(self, slot: int) -> "FnAtom":
        tag = list(self.dtag)
        tag[slot] += 1
        return FnAtom(self.head, self.args, tuple(tag))

    def __repr__(self):
        inner = ",".join(repr(a) for a in self.args)
        tag = "" if not any(self.dtag) else f"@{self.dtag}"
        return f"{self.head}({inner}){tag}"


Atom = Symbol | FnAtom

# A monomial is a tuple of (atom, positive exponent) pairs sorted by the
# atom sort key; the empty tuple is the constant monomial.
Monomial = tuple


def _mono_key(mono: Monomial) -> tuple:
    return tuple((a.sort_key, k) for a, k in mono)


def _mono_mul(a: Monomial, b: Monomial) -> Monomial:
    if not a:
        return b
    if not b:
        return a
    powers: dict = {}
    for atom, k in a:
        powers[atom] = powers.get(atom, 0) + k
    for atom, k in b:
        powers[atom] = powers.get(atom, 0) + k
    return tuple(sorted(powers.items(), key=lambda it: it[0].sort_key))


class Expr:
    """Immutable expression in expanded normal form."""

    __slots__ = ("_terms", "_key", "_hash")

    def __init__(self, terms: Mapping[Monomial, Fraction]):
        clean = {m: c for m, c in terms.items() if c}
        self._terms = clean
        self._key = tuple(sorted((_mono_key(m), m, c) for m, c in clean.items()))
        self._hash = hash(tuple((k, c) for k, _m, c in self._key))

    # -- construction -----------------------------------------------------
    @staticmethod
    def number(value) -> "Expr":
        q = value if isinstance(value, Fraction) else Fraction(value)
        return Expr({(): q}) if q else ZERO

    @staticmethod
    def from_atom(atom: Atom, exp: int = 1) -> "Expr":
        if exp == 0:
            return ONE
        if exp < 0:
            raise ValueError("atoms carry positive exponents only")
        return Expr({((atom, exp),): Fraction(1)})

    # -- basic queries ------------------------------------------------------
    @property
    def sort_key(self) -> tuple:
        return self._key

    @property
    def is_zero(self) -> bool:
        return not self._terms

    def terms(self) -> Iterator[tuple[Monomial, Fraction]]:
        for _k, m, c in self._key:
            yield m, c

    def constant_value(self) -> Fraction | None:
        """The rational value if the expression is constant, else None."""
        if not self._terms:
            return Fraction(0)
        if len(self._terms) == 1 and () in self._terms:
            return self._terms[()]
        return None

    def atoms(self) -> Iterator[Atom]:
        """Top-level atoms of every monomial (no recursion into arguments)."""
        seen = set()
        for m in self._terms:
            for a, _k in m:
                if a not in seen:
                    seen.add(a)
                    yield a

    def symbols(self, recurse: bool = True) -> set[Symbol]:
        """All symbols, by default including those inside opaque arguments."""
        out: set[Symbol] = set()
        for a in self.atoms():
            if isinstance(a, Symbol):
                out.add(a)
            elif recurse:
                for arg in a.args:
                    out |= arg.symbols(recurse=True)
        return out

    def mentions(self, sym: Symbol, recurse: bool = True) -> bool:
        for m in self._terms:
            for a, _k in m:
                if a == sym:
                    return True
                if recurse and isinstance(a, FnAtom):
                    if any(arg.mentions(sym, True) for arg in a.args):
                        return True
        return False

    def degree_in(self, atom: Atom) -> int:
        deg = 0
        for m in self._terms:
            for a, k in m:
                if a == atom:
                    deg = max(deg, k)
        return deg

    def coefficients_in(self, atom: Atom) -> dict[int, "Expr"]:
        """Split as a polynomial in one atom: power -> coefficient."""
        buckets: dict[int, dict] = {}
        for m, c in self._terms.items():
            power = 0
            rest = []
            for a, k in m:
                if a == atom:
                    power = k
                else:
                    rest.append((a, k))
            buckets.setdefault(power, {})[tuple(rest)] = (
                buckets.get(power, {}).get(tuple(rest), Fraction(0)) + c
            )
        return {p: Expr(t) for p, t in buckets.items()}

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other) -> "Expr":
        other = _as_expr(other)
        if self.is_zero:
            return other
        if other.is_zero:
            return self
        terms = dict(self._terms)
        for m, c in other._terms.items():
            acc = terms.get(m)
            terms[m] = c if acc is None else acc + c
        return Expr(terms)

    __radd__ = __add__

    def __neg__(self) -> "Expr":
        return Expr({m: -c for m, c in self._terms.items()})

    def __sub__(self, other) -> "Expr":
        return self + (-_as_expr(other))

    def __rsub__(self, other) -> "Expr":
        return _as_expr(other) + (-self)

    def __mul__(self, other) -> "Expr":
        other = _as_expr(other)
        if self.is_zero or other.is_zero:
            return ZERO
        out: dict = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = _mono_mul(m1, m2)
                c = c1 * c2
                acc = out.get(m)
                out[m] = c if acc is None else acc + c
        return Expr(out)

    __rmul__ = __mul__

    def __pow__(self, n: int) -> "Expr":
        if not isinstance(n, int):
            raise TypeError("exponents must be integers")
        if n < 0:
            q = self.constant_value()
            if q is None:
                raise ValueError("negative powers require a constant base")
            if q == 0:
                raise ZeroDivisionError("0 to a negative power")
            return Expr.number(q**n)
        result = ONE
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base if n > 1 else base
            n >>= 1
        return result

    def __truediv__(self, other) -> "Expr":
        other = _as_expr(other)
        q = other.constant_value()
        if q is None:
            raise ValueError("division by a non-constant; use quotient()")
        if q == 0:
            raise ZeroDivisionError("division by zero")
        return self * Expr.number(Fraction(1) / q)

    def __eq__(self, other):
        if not isinstance(other, Expr):
            return NotImplemented
        return self._hash == other._hash and self._terms == other._terms

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return pretty(self)

    # -- rewriting ----------------------------------------------------------
    def substitute_atoms(self, resolver: Callable[[Atom], "Expr | None"]) -> "Expr":
        """Replace atoms via ``resolver`` (None keeps the atom).

        The resolver is applied recursively to opaque-function arguments, so
        a symbol replacement also reaches inside ``sin(...)`` atoms.
        """
        out = ZERO
        for m, c in self._terms.items():
            term = Expr.number(c)
            for a, k in m:
                if isinstance(a, FnAtom):
                    new_args = tuple(arg.substitute_atoms(resolver) for arg in a.args)
                    if new_args != a.args:
                        a = FnAtom(a.head, new_args, a.dtag)
                rep = resolver(a)
                factor = Expr.from_atom(a) if rep is None else rep
                term = term * factor**k
            out = out + term
        return out

    def pdiff(self, sym: Symbol) -> "Expr":
        """Partial derivative treating every other atom as constant.

        Derivatives of opaque applications follow the chain rule through
        their arguments, producing derivative-tagged atoms.
        """
        return self._derive(lambda atom: _atom_pdiff(atom, sym))

    def _derive(self, atom_rule: Callable[[Atom], "Expr"]) -> "Expr":
        out = ZERO
        for m, c in self._terms.items():
            for i, (a, k) in enumerate(m):
                da = atom_rule(a)
                if da.is_zero:
                    continue
                rest = list(m[:i] + m[i + 1 :])
                if k > 1:
                    rest.append((a, k - 1))
                rest.sort(key=lambda it: it[0].sort_key)
                out = out + Expr({tuple(rest): c * k}) * da
        return out

    # -- numeric evaluation ---------------------------------------------------
    def evaluate(self, env: Mapping[str, object], funcs: Mapping[str, Callable] | None = None):
        """Evaluate numerically; values may be scalars or numpy arrays.

        Out-of-domain inputs yield inf/nan rather than warnings; callers
        that need totality check finiteness themselves.
        """
        table = NUMERIC_FUNCTIONS if funcs is None else funcs
        total = 0.0
        with np.errstate(all="ignore"):
            for m, c in self._terms.items():
                term = float(c)
                for a, k in m:
                    term = term * _atom_value(a, env, table) ** k
                total = total + term
        return total


ZERO = Expr({})
ONE = Expr({(): Fraction(1)})


def _as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, Fraction)):
        return Expr.number(value)
    raise TypeError(f"cannot coerce {type(value).__name__} to Expr")


def _atom_pdiff(atom: Atom, sym: Symbol) -> Expr:
    if isinstance(atom, Symbol):
        return ONE if atom == sym else ZERO
    out = ZERO
    for slot, arg in enumerate(atom.args):
        darg = arg.pdiff(sym)
        if not darg.is_zero:
            out = out + Expr.from_atom(atom.bump(slot)) * darg
    return out


def _atom_value(atom: Atom, env, table):
    if isinstance(atom, Symbol):
        try:
            return env[atom.name]
        except KeyError:
            raise EvalError(f"no value bound for {atom.name!r}") from None
    if any(atom.dtag):
        raise EvalError(f"cannot evaluate derivative-tagged atom {atom!r}")
    try:
        fn = table[atom.head]
    except KeyError:
        raise EvalError(f"no numeric rule for function {atom.head!r}") from None
    return fn(*[a.evaluate(env, table) for a in atom.args])


NUMERIC_FUNCTIONS: dict[str, Callable] = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "tanh": np.tanh,
    "inv": lambda x: 1.0 / x,
}


def quotient(num: Expr, den: Expr) -> Expr:
    """num / den; a non-constant denominator becomes an ``inv`` atom."""
    q = den.constant_value()
    if q is not None:
        if q == 0:
            raise ZeroDivisionError("division by zero")
        return num * Expr.number(Fraction(1) / q)
    return num * Expr.from_atom(FnAtom("inv", (den,)))


def collect(e: Expr, basis: Iterable[Symbol]) -> dict[Expr, Expr]:
    """Split ``e`` as a polynomial over monomials in the basis symbols.

    Returns a map from basis monomial (an Expr with unit coefficient; the
    constant ``1`` keys the basis-free part) to its coefficient.  Summing
    ``monomial * coefficient`` over the result reproduces ``e`` exactly.
    Raises CollectError if a basis symbol is buried inside an opaque
    application, since the split would then not be polynomial.
    """
    basis_set = set(basis)
    buckets: dict[Monomial, dict] = {}
    for m, c in e._terms.items():
        in_basis = []
        rest = []
        for a, k in m:
            if isinstance(a, Symbol) and a in basis_set:
                in_basis.append((a, k))
            else:
                if isinstance(a, FnAtom):
                    for arg in a.args:
                        hidden = arg.symbols() & basis_set
                        if hidden:
                            name = sorted(hidden, key=lambda s: s.name)[0].name
                            raise CollectError(
                                f"{a.head}(...) applies an opaque function to "
                                f"basis symbol {name!r}; not polynomial in the basis"
                            )
                rest.append((a, k))
        key = tuple(in_basis)
        bucket = buckets.setdefault(key, {})
        rk = tuple(rest)
        bucket[rk] = bucket.get(rk, Fraction(0)) + c
    return {Expr({m: Fraction(1)}): Expr(t) for m, t in buckets.items() if any(t.values())}


# ---------------------------------------------------------------------------
# Declaration context
# ---------------------------------------------------------------------------


class Context:
    """Variable declarations shared by a family of expressions.

    Holds independent variables, dependent variables, free parameters and
    (optionally) named opaque unknown functions with a fixed argument list.
    Contexts are immutable; ``extended`` returns an enlarged copy.
    """

    def __init__(
        self,
        independents: Iterable[str] = (),
        dependents: Iterable[str] = (),
        parameters: Iterable[str] = (),
        unknowns: Mapping[str, tuple[str, ...]] | None = None,
    ):
        self.independents = tuple(Symbol(n, "independent") for n in independents)
        self.dependents = tuple(Symbol(n, "dependent") for n in dependents)
        self.parameters = tuple(Symbol(n, "parameter") for n in parameters)
        self._by_name: dict[str, Symbol] = {}
        for s in (*self.independents, *self.dependents, *self.parameters):
            if s.name in self._by_name:
                raise ValueError(f"duplicate declaration of {s.name!r}")
            self._by_name[s.name] = s
        self._indep_rank = {s.name: i for i, s in enumerate(self.independents)}
        self.unknowns: dict[str, tuple[Symbol, ...]] = {}
        for head, argnames in (unknowns or {}).items():
            if head in self._by_name:
                raise ValueError(f"unknown function {head!r} collides with a variable")
            self.unknowns[head] = tuple(self._resolve(n) for n in argnames)

    def _resolve(self, name: str) -> Symbol:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"undeclared identifier {name!r}") from None

    def symbol(self, name: str) -> Symbol:
        return self._resolve(name)

    def var(self, name: str) -> Expr:
        return Expr.from_atom(self._resolve(name))

    def extended(
        self,
        parameters: Iterable[str] = (),
        unknowns: Mapping[str, tuple[str, ...]] | None = None,
    ) -> "Context":
        unk = {h: tuple(a.name for a in args) for h, args in self.unknowns.items()}
        for h, argnames in (unknowns or {}).items():
            unk[h] = tuple(argnames)
        return Context(
            (s.name for s in self.independents),
            (s.name for s in self.dependents),
            [*(s.name for s in self.parameters), *parameters],
            unk,
        )

    # -- jet coordinates -----------------------------------------------------
    def jet(self, dep: Symbol | str, wrt: Iterable[Symbol | str]) -> Symbol:
        """The derivative coordinate of ``dep`` with canonical multi-index."""
        if isinstance(dep, str):
            dep = self._resolve(dep)
        if dep.kind == "jet":
            base = dep.base
            names = list(dep.wrt)
        elif dep.kind == "dependent":
            base = dep.name
            names = []
        else:
            raise ValueError(f"cannot differentiate {dep.name!r}: not a dependent variable")
        for w in wrt:
            wname = w if isinstance(w, str) else w.name
            if self._by_name.get(wname, None) not in self.independents:
                raise ValueError(
                    f"cannot differentiate with respect to {wname!r}: not an independent variable"
                )
            names.append(wname)
        names.sort(key=lambda n: self._indep_rank[n])
        return Symbol("_".join([base, *names]), "jet", base=base, wrt=tuple(names))

    def unknown_atom(self, head: str, dtag: Iterable[int] | None = None) -> FnAtom:
        args = tuple(Expr.from_atom(s) for s in self.unknowns[head])
        tag = tuple(dtag) if dtag is not None else (0,) * len(args)
        return FnAtom(head, args, tag)

    def unknown_pdiff(self, head: str, wrt: Iterable[Symbol]) -> FnAtom:
        """Derivative-tagged atom for an unknown function."""
        slots = {s: i for i, s in enumerate(self.unknowns[head])}
        tag = [0] * len(slots)
        for s in wrt:
            tag[slots[s]] += 1
        return FnAtom(head, tuple(Expr.from_atom(s) for s in self.unknowns[head]), tuple(tag))

    # -- total derivative ------------------------------------------------------
    def total_derivative(self, e: Expr, x: Symbol | str) -> Expr:
        """Total derivative D_x: promotes dependents and jets, chains through
        opaque arguments, annihilates other independents and parameters."""
        if isinstance(x, str):
            x = self._resolve(x)
        if x not in self.independents:
            raise ValueError(f"total derivative is taken along an independent variable, got {x.name!r}")

        def rule(atom: Atom) -> Expr:
            if isinstance(atom, Symbol):
                if atom.kind == "independent":
                    return ONE if atom == x else ZERO
                if atom.kind in ("dependent", "jet"):
                    return Expr.from_atom(self.jet(atom, (x,)))
                return ZERO
            out = ZERO
            for slot, arg in enumerate(atom.args):
                darg = self.total_derivative(arg, x)
                if not darg.is_zero:
                    out = out + Expr.from_atom(atom.bump(slot)) * darg
            return out

        return e._derive(rule)

    # -- parsing ----------------------------------------------------------------
    def parse(self, text: str) -> Expr:
        return _Parser(_tokenize(text), self).parse_single_expression()


# ---------------------------------------------------------------------------
# Tokenizer / parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>\#[^\n]*)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),;=:])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    type: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        value = m.group()
        if kind not in ("ws", "comment"):
            tokens.append(_Token(kind, value, line, col))
        newlines = value.count("\n")
        if newlines:
            line += newlines
            col = len(value) - value.rfind("\n")
        else:
            col += len(value)
        pos = m.end()
    tokens.append(_Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token], ctx: Context):
        self.tokens = tokens
        self.pos = 0
        self.ctx = ctx

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.next()
        if tok.text != text:
            raise ParseError(f"expected {text!r}, found {tok.text or 'end of input'!r}", tok.line, tok.col)
        return tok

    def fail(self, message: str) -> "ParseError":
        tok = self.peek()
        return ParseError(message, tok.line, tok.col)

    # expression grammar: sum of products of signed powers
    def parse_single_expression(self) -> Expr:
        e = self.expression()
        tok = self.peek()
        if tok.type != "eof":
            raise ParseError(f"trailing input starting at {tok.text!r}", tok.line, tok.col)
        return e

    def expression(self) -> Expr:
        e = self.term()
        while self.peek().text in ("+", "-"):
            op = self.next().text
            rhs = self.term()
            e = e + rhs if op == "+" else e - rhs
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek().text in ("*", "/"):
            op = self.next().text
            rhs = self.factor()
            e = e * rhs if op == "*" else quotient(e, rhs)
        return e

    def factor(self) -> Expr:
        sign = 1
        while self.peek().text in ("+", "-"):
            if self.next().text == "-":
                sign = -sign
        e = self.power()
        return e if sign == 1 else -e

    def power(self) -> Expr:
        base = self.primary()
        if self.peek().text != "^":
            return base
        self.next()
        neg = False
        while self.peek().text in ("+", "-"):
            neg ^= self.next().text == "-"
        tok = self.next()
        if tok.type != "number" or not re.fullmatch(r"\d+", tok.text):
            raise ParseError("exponent must be an integer literal", tok.line, tok.col)
        n = int(tok.text)
        if neg:
            q = base.constant_value()
            if q is not None:
                if q == 0:
                    raise ParseError("zero to a negative power", tok.line, tok.col)
                return Expr.number(q ** (-n))
            return Expr.from_atom(FnAtom("inv", (base**n,)))
        return base**n

    def primary(self) -> Expr:
        tok = self.next()
        if tok.type == "number":
            return Expr.number(Fraction(tok.text))
        if tok.text == "(":
            e = self.expression()
            self.expect(")")
            return e
        if tok.type != "ident":
            raise ParseError(f"expected a value, found {tok.text or 'end of input'!r}", tok.line, tok.col)
        name = tok.text
        if self.peek().text == "(":
            return self.application(name, tok)
        return self.name_reference(name, tok)

    def name_reference(self, name: str, tok: _Token) -> Expr:
        if name in self.ctx.unknowns:
            return Expr.from_atom(self.ctx.unknown_atom(name))
        try:
            return self.ctx.var(name)
        except KeyError:
            raise ParseError(f"undeclared identifier {name!r}", tok.line, tok.col) from None

    def application(self, name: str, tok: _Token) -> Expr:
        self.expect("(")
        if name == "diff":
            return self.diff_application(tok)
        args = [self.expression()]
        while self.peek().text == ",":
            self.next()
            args.append(self.expression())
        self.expect(")")
        if name in self.ctx.unknowns:
            declared = self.ctx.unknowns[name]
            if tuple(args) != tuple(Expr.from_atom(s) for s in declared):
                raise ParseError(
                    f"unknown function {name!r} must be applied to its declared arguments",
                    tok.line,
                    tok.col,
                )
            return Expr.from_atom(self.ctx.unknown_atom(name))
        if name in NUMERIC_FUNCTIONS:
            if len(args) != 1:
                raise ParseError(f"{name} takes one argument", tok.line, tok.col)
            return Expr.from_atom(FnAtom(name, tuple(args)))
        raise ParseError(f"undeclared function {name!r}", tok.line, tok.col)

    def diff_application(self, tok: _Token) -> Expr:
        first = self.next()
        if first.type != "ident":
            raise ParseError("diff() expects a dependent variable or unknown function first", first.line, first.col)
        wrt: list[Symbol] = []
        while self.peek().text == ",":
            self.next()
            vtok = self.next()
            if vtok.type != "ident":
                raise ParseError("diff() differentiation variables must be identifiers", vtok.line, vtok.col)
            try:
                wrt.append(self.ctx.symbol(vtok.text))
            except KeyError:
                raise ParseError(f"undeclared identifier {vtok.text!r}", vtok.line, vtok.col) from None
        self.expect(")")
        if not wrt:
            raise ParseError("diff() needs at least one differentiation variable", tok.line, tok.col)
        if first.text in self.ctx.unknowns:
            declared = set(self.ctx.unknowns[first.text])
            for s in wrt:
                if s not in declared:
                    raise ParseError(
                        f"{first.text!r} does not depend on {s.name!r}", tok.line, tok.col
                    )
            return Expr.from_atom(self.ctx.unknown_pdiff(first.text, wrt))
        try:
            dep = self.ctx.symbol(first.text)
        except KeyError:
            raise ParseError(f"undeclared identifier {first.text!r}", first.line, first.col) from None
        if dep.kind != "dependent":
            raise ParseError(
                f"cannot differentiate {first.text!r}: not a dependent variable", first.line, first.col
            )
        for s in wrt:
            if s.kind != "independent":
                raise ParseError(
                    f"cannot differentiate with respect to {s.name!r}: not an independent variable",
                    first.line,
                    first.col,
                )
        return Expr.from_atom(self.ctx.jet(dep, wrt))


# ---------------------------------------------------------------------------
# Program files: declarations + equations
# ---------------------------------------------------------------------------


@dataclass
class ProgramFile:
    context: Context
    equations: list[Expr]
    solve_for: list[Symbol]
    target_count: int | None = None


def parse_program(text: str) -> ProgramFile:
    """Parse a declaration file: indep/dep/param/unknown statements, an
    optional ``solve_for:`` header, an optional ``target_count:`` line and
    ``eq lhs = rhs;`` statements."""
    tokens = _tokenize(text)
    # first pass: pull declarations so the context exists before expressions
    indep: list[str] = []
    dep: list[str] = []
    par: list[str] = []
    unknowns: dict[str, tuple[str, ...]] = {}
    statements: list[list[_Token]] = []
    current: list[_Token] = []
    for tok in tokens:
        if tok.type == "eof":
            break
        if tok.text == ";":
            if current:
                statements.append(current)
                current = []
        else:
            current.append(tok)
    if current:
        raise ParseError("missing ';' at end of statement", current[-1].line, current[-1].col)

    deferred: list[list[_Token]] = []
    for stmt in statements:
        head = stmt[0]
        if head.type == "ident" and head.text in ("indep", "dep", "param"):
            names = [t.text for t in stmt[1:] if t.type == "ident"]
            bad = [t for t in stmt[1:] if t.type != "ident" and t.text != ","]
            if bad or not names:
                raise ParseError(f"malformed {head.text} declaration", head.line, head.col)
            {"indep": indep, "dep": dep, "param": par}[head.text].extend(names)
        elif head.type == "ident" and head.text == "unknown":
            # unknown name(arg, arg, ...)
            if len(stmt) < 4 or stmt[1].type != "ident" or stmt[2].text != "(":
                raise ParseError("malformed unknown declaration", head.line, head.col)
            args = [t.text for t in stmt[3:-1] if t.type == "ident"]
            if stmt[-1].text != ")":
                raise ParseError("malformed unknown declaration", head.line, head.col)
            unknowns[stmt[1].text] = tuple(args)
        else:
            deferred.append(stmt)

    ctx = Context(indep, dep, par, unknowns)
    equations: list[Expr] = []
    solve_for: list[Symbol] = []
    target_count: int | None = None
    for stmt in deferred:
        head = stmt[0]
        if head.type == "ident" and head.text == "eq":
            body = stmt[1:]
            eq_idx = [i for i, t in enumerate(body) if t.text == "="]
            if len(eq_idx) != 1:
                raise ParseError("eq statement needs exactly one '='", head.line, head.col)
            lhs = _parse_token_slice(body[: eq_idx[0]], ctx)
            rhs = _parse_token_slice(body[eq_idx[0] + 1 :], ctx)
            equations.append(lhs - rhs)
        elif head.type == "ident" and head.text == "solve_for":
            if len(stmt) < 3 or stmt[1].text != ":":
                raise ParseError("solve_for must be followed by ':'", head.line, head.col)
            body = stmt[2:]
            for piece in _split_on_commas(body):
                e = _parse_token_slice(piece, ctx)
                jet = _single_jet(e)
                if jet is None:
                    raise ParseError("solve_for entries must be single derivative coordinates", head.line, head.col)
                solve_for.append(jet)
        elif head.type == "ident" and head.text == "target_count":
            if len(stmt) != 3 or stmt[1].text != ":" or stmt[2].type != "number":
                raise ParseError("target_count must be 'target_count: <integer>'", head.line, head.col)
            target_count = int(stmt[2].text)
        else:
            raise ParseError(f"unrecognized statement starting with {head.text!r}", head.line, head.col)
    return ProgramFile(ctx, equations, solve_for, target_count)


def _split_on_commas(body: list[_Token]) -> list[list[_Token]]:
    pieces: list[list[_Token]] = [[]]
    depth = 0
    for t in body:
        if t.text == "(":
            depth += 1
        elif t.text == ")":
            depth -= 1
        if t.text == "," and depth == 0:
            pieces.append([])
        else:
            pieces[-1].append(t)
    return [p for p in pieces if p]


def _parse_token_slice(body: list[_Token], ctx: Context) -> Expr:
    if not body:
        raise ParseError("empty expression", 0, 0)
    toks = list(body) + [_Token("eof", "", body[-1].line, body[-1].col)]
    return _Parser(toks, ctx).parse_single_expression()


def _single_jet(e: Expr) -> Symbol | None:
    terms = list(e.terms())
    if len(terms) != 1:
        return None
    mono, c = terms[0]
    if c != 1 or len(mono) != 1:
        return None
    atom, k = mono[0]
    if k == 1 and isinstance(atom, Symbol) and atom.is_jet:
        return atom
    return None


# ---------------------------------------------------------------------------
# Pretty printing (inverse of the expression grammar)
# ---------------------------------------------------------------------------


def _atom_text(atom: Atom) -> str:
    if isinstance(atom, Symbol):
        if atom.is_jet:
            return f"diff({atom.base},{','.join(atom.wrt)})"
        return atom.name
    if any(atom.dtag):
        names = []
        for slot, count in enumerate(atom.dtag):
            arg = atom.args[slot]
            sym = _single_symbol(arg)
            names.extend([sym.name if sym else pretty(arg)] * count)
        return f"diff({atom.head},{','.join(names)})"
    if all(_single_symbol(a) is not None for a in atom.args) and atom.head not in NUMERIC_FUNCTIONS:
        # unknown-function reference prints bare; arguments are implied
        return atom.head
    inner = ",".join(pretty(a) for a in atom.args)
    return f"{atom.head}({inner})"


def _single_symbol(e: Expr) -> Symbol | None:
    terms = list(e.terms())
    if len(terms) != 1:
        return None
    mono, c = terms[0]
    if c != 1 or len(mono) != 1:
        return None
    atom, k = mono[0]
    return atom if k == 1 and isinstance(atom, Symbol) else None


def pretty(e: Expr) -> str:
    """Render in the expression grammar; parsing the result (in a context
    declaring the same names) returns a structurally equal expression."""
    if e.is_zero:
        return "0"
    parts: list[str] = []
    for mono, c in e.terms():
        factors = [f"{_atom_text(a)}^{k}" if k > 1 else _atom_text(a) for a, k in mono]
        mag = abs(c)
        if not factors:
            body = str(mag)
        elif mag == 1:
            body = "*".join(factors)
        else:
            body = "*".join([str(mag), *factors])
        if not parts:
            parts.append(body if c > 0 else f"-{body}")
        else:
            parts.append(f" + {body}" if c > 0 else f" - {body}")
    return "".join(parts)


# ---------------------------------------------------------------------------
# Numeric helper for profile / transform expressions
# ---------------------------------------------------------------------------


def compile_numeric(text: str, variables: Iterable[str], parameters: Mapping[str, float] | None = None):
    """Compile an expression over the given variable names into a vectorized
    callable of keyword or positional arrays.

    Used for constitutive profiles (``J``, ``dN``, ``tau``) and transform
    magnitude expressions, keeping the command-line surface free of
    arbitrary code execution.
    """
    names = list(variables)
    params = dict(parameters or {})
    ctx = Context(independents=names, parameters=params.keys())
    e = ctx.parse(text)

    def fn(*args, **kwargs):
        env = dict(params)
        env.update(zip(names, args))
        env.update(kwargs)
        missing = [n for n in names if n not in env]
        if missing:
            raise EvalError(f"missing values for {missing}")
        return e.evaluate(env)

    fn.expression = e
    fn.text = text
    return fn

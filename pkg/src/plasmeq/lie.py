"""Point-symmetry analysis of first-order PDE systems.

Given a system declared in the expression grammar together with a choice of
leading derivative coordinates (one per equation), this module

1. forms the tangent-field ansatz ``xi_x(x, u), ..., eta_u(x, u), ...`` as
   opaque unknowns,
2. prolongs it to first-order derivative coordinates,
3. applies the prolonged field to every equation and restricts the result
   to the solution manifold by eliminating the leading coordinates,
4. splits on monomials in the surviving derivative coordinates, producing
   an overdetermined linear system on the unknowns, and
5. checks concrete generator candidates against that system exactly.

Everything is exact rational arithmetic; a residual is a symmetry witness
iff it is the structural zero.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction

from .expr import (
    Context,
    Expr,
    FnAtom,
    ParseError,
    ProgramFile,
    Symbol,
    ZERO,
    collect,
    parse_program,
    pretty,
)

__all__ = [
    "LieError",
    "PdeSystem",
    "VectorFieldAnsatz",
    "DeterminingSystem",
    "CandidateGenerator",
    "build_ansatz",
    "prolong_coefficients",
    "build_determining_system",
    "verify_generator",
    "parse_generator",
]


class LieError(Exception):
    pass


@dataclass(frozen=True)
class PdeSystem:
    """A first-order PDE system with a designated solved form.

    ``solved`` maps each leading derivative coordinate to an exact pair
    (numerator, denominator); the pairs are fully reduced, i.e. free of all
    leading coordinates.  Non-constant denominators are genericity
    assumptions carried in ``assumptions``.
    """

    context: Context
    equations: tuple[Expr, ...]
    leading: tuple[Symbol, ...]
    solved: dict[Symbol, tuple[Expr, Expr]] = field(repr=False)
    assumptions: tuple[str, ...] = ()
    target_count: int | None = None

    @staticmethod
    def from_text(text: str) -> "PdeSystem":
        return PdeSystem.from_program(parse_program(text))

    @staticmethod
    def from_program(prog: ProgramFile) -> "PdeSystem":
        ctx, eqs, leading = prog.context, prog.equations, prog.solve_for
        if not eqs:
            raise LieError("system declares no equations")
        if len(leading) != len(eqs):
            raise LieError(
                f"solve_for lists {len(leading)} coordinates for {len(eqs)} equations"
            )
        if len(set(leading)) != len(leading):
            raise LieError("leading derivative coordinates must be pairwise distinct")
        for e in eqs:
            _check_first_order_polynomial(e)
        solved = _triangular_solved_form(ctx, eqs, leading)
        assumptions = []
        for _jet, (_num, den) in solved.items():
            if den.constant_value() is None:
                note = f"{pretty(den)} != 0"
                if note not in assumptions:
                    assumptions.append(note)
        system = PdeSystem(ctx, tuple(eqs), tuple(leading), solved, tuple(assumptions), prog.target_count)
        for e in eqs:
            residual, _ = reduce_on_manifold(e, solved)
            if not residual.is_zero:
                raise LieError(
                    "solved form is inconsistent: substituting it into an equation "
                    f"leaves {pretty(residual)}"
                )
        return system

    def jets(self) -> list[Symbol]:
        ctx = self.context
        return [ctx.jet(u, (x,)) for u in ctx.dependents for x in ctx.independents]

    def surviving_jets(self) -> list[Symbol]:
        lead = set(self.leading)
        return [j for j in self.jets() if j not in lead]


def _check_first_order_polynomial(e: Expr) -> None:
    for a in e.atoms():
        if isinstance(a, Symbol):
            if a.is_jet and a.order > 1:
                raise LieError(f"equation contains a higher-order coordinate {a.name}")
        elif isinstance(a, FnAtom):
            for arg in a.args:
                if any(s.is_jet for s in arg.symbols()):
                    raise LieError(
                        f"equation applies {a.head}(...) to a derivative coordinate; "
                        "not polynomial in the jet coordinates"
                    )


def _triangular_solved_form(
    ctx: Context, eqs: list[Expr], leading: list[Symbol]
) -> dict[Symbol, tuple[Expr, Expr]]:
    solved: dict[Symbol, tuple[Expr, Expr]] = {}
    for e, jet in zip(eqs, leading):
        parts = e.coefficients_in(jet)
        deg = max(parts) if parts else 0
        if deg != 1:
            raise LieError(
                f"equation is not linear in its leading coordinate {jet.name} (degree {deg})"
            )
        num = -parts.get(0, ZERO)
        den = parts[1]
        lead = None
        for _m, c in den.terms():
            lead = c
        if lead is not None and lead < 0:
            num, den = -num, -den
        solved[jet] = (num, den)

    # Eliminate leading coordinates from the solved pairs themselves.
    for _round in range(len(solved) + 1):
        dirty = False
        for jet, (num, den) in list(solved.items()):
            for other, (onum, oden) in solved.items():
                if other == jet:
                    continue
                if num.mentions(other) or den.mentions(other):
                    num, den = _substitute_fraction_pair(num, den, other, onum, oden)
                    dirty = True
            solved[jet] = (num, den)
        if not dirty:
            return solved
    raise LieError("solved form is circular; cannot reduce to triangular form")


def _substitute_fraction(e: Expr, jet: Symbol, num: Expr, den: Expr) -> tuple[Expr, int]:
    """Replace ``jet`` by num/den in a polynomial, clearing the denominator.

    Returns the cleared polynomial together with the power of ``den`` the
    whole expression was multiplied by.
    """
    parts = e.coefficients_in(jet)
    deg = max(parts) if parts else 0
    if deg == 0:
        return e, 0
    out = ZERO
    for k, coeff in parts.items():
        out = out + coeff * num**k * den ** (deg - k)
    return out, deg


def _substitute_fraction_pair(
    num: Expr, den: Expr, jet: Symbol, jnum: Expr, jden: Expr
) -> tuple[Expr, Expr]:
    new_num, p_num = _substitute_fraction(num, jet, jnum, jden)
    new_den, p_den = _substitute_fraction(den, jet, jnum, jden)
    # rescale so both sides carry the same cleared power of jden
    if p_num < p_den:
        new_num = new_num * jden ** (p_den - p_num)
    elif p_den < p_num:
        new_den = new_den * jden ** (p_num - p_den)
    return new_num, new_den


def reduce_on_manifold(
    e: Expr, solved: dict[Symbol, tuple[Expr, Expr]]
) -> tuple[Expr, list[str]]:
    """Eliminate the leading coordinates from ``e``.

    Each elimination multiplies the expression by the corresponding solved
    denominator to keep it polynomial; this is sound for expressions equated
    to zero under the recorded genericity assumptions, which are returned.
    """
    used: list[str] = []
    progress = True
    while progress:
        progress = False
        for jet, (num, den) in solved.items():
            if e.mentions(jet, recurse=False):
                e, power = _substitute_fraction(e, jet, num, den)
                if power and den.constant_value() is None:
                    note = f"{pretty(den)} != 0"
                    if note not in used:
                        used.append(note)
                progress = True
    return e, used


# ---------------------------------------------------------------------------
# Ansatz and prolongation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VectorFieldAnsatz:
    """Opaque tangent-field components and their first prolongation."""

    context: Context  # extended with the unknown heads
    xi: dict[Symbol, Expr] = field(repr=False)
    eta: dict[Symbol, Expr] = field(repr=False)
    prolonged: dict[Symbol, Expr] = field(repr=False)


def build_ansatz(system: PdeSystem) -> VectorFieldAnsatz:
    ctx = system.context
    argnames = tuple(s.name for s in (*ctx.independents, *ctx.dependents))
    unknowns = {f"xi_{x.name}": argnames for x in ctx.independents}
    unknowns.update({f"eta_{u.name}": argnames for u in ctx.dependents})
    ctx_u = ctx.extended(unknowns=unknowns)
    xi = {x: Expr.from_atom(ctx_u.unknown_atom(f"xi_{x.name}")) for x in ctx.independents}
    eta = {u: Expr.from_atom(ctx_u.unknown_atom(f"eta_{u.name}")) for u in ctx.dependents}
    prolonged = {}
    for u in ctx.dependents:
        coeffs = prolong_coefficients(ctx_u, [xi[x] for x in ctx.independents], eta[u], u)
        prolonged.update(coeffs)
    return VectorFieldAnsatz(ctx_u, xi, eta, prolonged)


def prolong_coefficients(
    ctx: Context, xi: list[Expr], eta: Expr, dep: Symbol | str
) -> dict[Symbol, Expr]:
    """First-prolongation coefficients for one dependent variable:
    the coefficient on d/d(u_i) is D_i(eta) - sum_j u_j * D_i(xi_j)."""
    if isinstance(dep, str):
        dep = ctx.symbol(dep)
    out: dict[Symbol, Expr] = {}
    for x in ctx.independents:
        value = ctx.total_derivative(eta, x)
        for xj, xi_j in zip(ctx.independents, xi):
            value = value - Expr.from_atom(ctx.jet(dep, (xj,))) * ctx.total_derivative(xi_j, x)
        out[ctx.jet(dep, (x,))] = value
    return out


# ---------------------------------------------------------------------------
# Determining system
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeterminingSystem:
    """Overdetermined linear system on the tangent-field unknowns.

    ``provenance[k]`` records which source equation and which derivative
    monomial produced ``equations[k]``.  The equation list drops exact
    structural duplicates only; ``stats`` additionally reports the raw
    pre-deduplication count and the count after merging equations that
    agree up to a rational factor.
    """

    context: Context
    equations: tuple[Expr, ...]
    provenance: tuple[tuple[int, Expr], ...]
    assumptions: tuple[str, ...]
    stats: dict = field(default_factory=dict, repr=False)

    @property
    def count(self) -> int:
        return len(self.equations)


def _scalar_normalize(e: Expr) -> Expr:
    """Divide by the coefficient of the canonically largest monomial so that
    rational multiples of the same equation coincide structurally."""
    lead = None
    for m, c in e.terms():
        lead = c
    if lead is None or lead == 1:
        return e
    return e * Expr.number(Fraction(1) / lead)


def build_determining_system(system: PdeSystem) -> DeterminingSystem:
    ansatz = build_ansatz(system)
    ctx = system.context
    jets = system.jets()

    produced: list[tuple[Expr, int, Expr]] = []
    assumptions = list(system.assumptions)
    for e_idx, eqn in enumerate(system.equations):
        applied = ZERO
        for x in ctx.independents:
            applied = applied + ansatz.xi[x] * eqn.pdiff(x)
        for u in ctx.dependents:
            applied = applied + ansatz.eta[u] * eqn.pdiff(u)
        for jet in jets:
            d = eqn.pdiff(jet)
            if not d.is_zero:
                applied = applied + ansatz.prolonged[jet] * d
        reduced, used = reduce_on_manifold(applied, system.solved)
        for note in used:
            if note not in assumptions:
                assumptions.append(note)
        for monomial, coefficient in collect(reduced, system.surviving_jets()).items():
            produced.append((coefficient, e_idx, monomial))

    # The count convention: drop zeros (collect already did) and exact
    # structural duplicates.  Equations that agree only up to a rational
    # factor are kept; their number is still reported in ``stats`` under
    # ``count_up_to_scale``.
    raw_count = len(produced)
    exact_seen: set[Expr] = set()
    final: list[Expr] = []
    provenance: list[tuple[int, Expr]] = []
    scaled_seen: set[Expr] = set()
    for coefficient, e_idx, monomial in produced:
        if coefficient in exact_seen:
            continue
        exact_seen.add(coefficient)
        final.append(coefficient)
        provenance.append((e_idx, monomial))
        scaled_seen.add(_scalar_normalize(coefficient))

    det = DeterminingSystem(
        ansatz.context,
        tuple(final),
        tuple(provenance),
        tuple(assumptions),
        {"raw": raw_count, "count": len(final), "count_up_to_scale": len(scaled_seen)},
    )
    _check_determining_invariants(det, system)
    return det


def _check_determining_invariants(det: DeterminingSystem, system: PdeSystem) -> None:
    for eqn in det.equations:
        if eqn.is_zero:
            raise LieError("determining system contains an identically zero equation")
        for mono, _c in eqn.terms():
            unknown_degree = 0
            for a, k in mono:
                if isinstance(a, Symbol) and a.is_jet:
                    raise LieError(
                        f"determining equation still contains derivative coordinate {a.name}"
                    )
                if isinstance(a, FnAtom):
                    unknown_degree += k
            if unknown_degree != 1:
                raise LieError(
                    "determining equation is not linear-homogeneous in the tangent unknowns: "
                    f"{pretty(eqn)}"
                )


# ---------------------------------------------------------------------------
# Candidate generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CandidateGenerator:
    """Concrete tangent-field components over (x, u) and free parameters."""

    context: Context
    xi: dict[Symbol, Expr] = field(repr=False)
    eta: dict[Symbol, Expr] = field(repr=False)
    label: str = ""

    def __post_init__(self):
        for comp in (*self.xi.values(), *self.eta.values()):
            for a in comp.atoms():
                if isinstance(a, Symbol) and a.is_jet:
                    raise LieError("generator components must not contain derivative coordinates")
                if isinstance(a, FnAtom) and a.head.startswith(("xi_", "eta_")):
                    raise LieError("generator components must be fully concrete")

    def component(self, sym: Symbol) -> Expr:
        if sym.kind == "independent":
            return self.xi.get(sym, ZERO)
        return self.eta.get(sym, ZERO)

    def __add__(self, other: "CandidateGenerator") -> "CandidateGenerator":
        mine = {p.name for p in self.context.parameters}
        extra = [p.name for p in other.context.parameters if p.name not in mine]
        ctx = self.context.extended(parameters=extra) if extra else self.context
        xi = {x: self.xi.get(x, ZERO) + other.xi.get(x, ZERO) for x in {*self.xi, *other.xi}}
        eta = {u: self.eta.get(u, ZERO) + other.eta.get(u, ZERO) for u in {*self.eta, *other.eta}}
        return CandidateGenerator(ctx, xi, eta, f"{self.label}+{other.label}")


def verify_generator(
    system: PdeSystem, det: DeterminingSystem, cand: CandidateGenerator
) -> list[Expr]:
    """Substitute a candidate (with its exact partial derivatives) into every
    determining equation.  The candidate generates a point symmetry iff all
    returned residuals are structurally zero."""
    ctx = system.context
    args = (*ctx.independents, *ctx.dependents)
    components: dict[str, Expr] = {}
    for x in ctx.independents:
        components[f"xi_{x.name}"] = cand.component(x)
    for u in ctx.dependents:
        components[f"eta_{u.name}"] = cand.component(u)

    known = set(ctx._by_name) | {p.name for p in cand.context.parameters}
    for comp in components.values():
        for s in comp.symbols():
            if s.name not in known:
                raise LieError(f"generator component references undeclared symbol {s.name!r}")

    cache: dict[tuple[str, tuple[int, ...]], Expr] = {}

    def resolve(atom):
        if not isinstance(atom, FnAtom) or atom.head not in components:
            return None
        key = (atom.head, atom.dtag)
        if key not in cache:
            value = components[atom.head]
            for slot, count in enumerate(atom.dtag):
                for _ in range(count):
                    value = value.pdiff(args[slot])
            cache[key] = value
        return cache[key]

    return [eqn.substitute_atoms(resolve) for eqn in det.equations]


# ---------------------------------------------------------------------------
# Generator files
# ---------------------------------------------------------------------------

_GEN_LINE = re.compile(r"^(xi|eta)\s*\(\s*([A-Za-z_][A-Za-z_0-9]*)\s*\)\s*=\s*(.+)$")


def parse_generator(base: Context, text: str, label: str = "") -> CandidateGenerator:
    """Parse generator component assignments.

    Grammar: ``param a, b;`` lines plus ``xi(<independent>) = <expr>;`` and
    ``eta(<dependent>) = <expr>;`` assignments.  Components not assigned are
    zero.
    """
    statements = []
    for raw in text.split(";"):
        stripped = "\n".join(line.split("#", 1)[0] for line in raw.splitlines()).strip()
        if stripped:
            statements.append(stripped)
    params: list[str] = []
    assigns: list[tuple[str, str, str]] = []
    for stmt in statements:
        if stmt.startswith("param"):
            names = [n.strip() for n in stmt[len("param") :].split(",") if n.strip()]
            if not all(re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", n) for n in names):
                raise ParseError(f"malformed param statement {stmt!r}", 0, 0)
            params.extend(names)
        else:
            m = _GEN_LINE.match(stmt.replace("\n", " "))
            if m is None:
                raise ParseError(f"unrecognized generator statement {stmt!r}", 0, 0)
            assigns.append(m.groups())
    ctx = base.extended(parameters=params) if params else base
    xi: dict[Symbol, Expr] = {}
    eta: dict[Symbol, Expr] = {}
    for kind, name, body in assigns:
        sym = ctx.symbol(name)
        value = ctx.parse(body)
        if kind == "xi":
            if sym.kind != "independent":
                raise LieError(f"xi({name}) requires an independent variable")
            xi[sym] = value
        else:
            if sym.kind != "dependent":
                raise LieError(f"eta({name}) requires a dependent variable")
            eta[sym] = value
    return CandidateGenerator(ctx, xi, eta, label)

"""Exact equilibria and their transformations.

Provides the localized spherical-vortex equilibrium (an isotropic state
with the field confined to a ball and a pressure well), the field-line
transform family taking isotropic states to anisotropic ones, the finite
point transformations (translations, rotations, scalings), pressure-
anisotropy stability checks, and finite-difference residual evaluation of
the governing systems on sampled states.

All states are nodewise total: outside the plasma (where B vanishes) the
anisotropy factor is set to zero and transforms pass values through
unchanged.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from . import fields as fd
from .expr import compile_numeric
from .fields import Grid3, ScalarGrid, VectorGrid

__all__ = [
    "CGLState",
    "StateEvaluators",
    "VortexParams",
    "TransformSpec",
    "StabilityReport",
    "find_lambda",
    "vortex_params",
    "vortex_state",
    "apply_infinite_transform",
    "translate_state",
    "rotate_state",
    "scale_state",
    "anisotropy_scale_state",
    "stability_report",
    "residual_fields",
    "residual_norms",
    "tau_consistency_error",
    "write_state_csv",
    "read_state_csv",
    "write_state_vtk",
]

EPS_B_RELATIVE = 1e-12

STATE_COLUMNS = ("B1", "B2", "B3", "p_perp", "p_par", "tau", "psi")


@dataclass(frozen=True)
class StateEvaluators:
    """Pointwise analytic evaluators backing a sampled state, when known."""

    B: Callable
    p_perp: Callable
    p_par: Callable
    tau: Callable
    psi: Callable


@dataclass(frozen=True)
class CGLState:
    """Sampled anisotropic equilibrium state on one shared grid."""

    B: VectorGrid
    p_perp: ScalarGrid
    p_par: ScalarGrid
    tau: ScalarGrid
    psi: ScalarGrid
    meta: dict = field(default_factory=dict)
    evaluators: StateEvaluators | None = None

    def __post_init__(self):
        grids = {g.grid for g in (self.p_perp, self.p_par, self.tau, self.psi)}
        grids.add(self.B.grid)
        if len(grids) != 1:
            raise ValueError("all state fields must share one grid")

    @property
    def grid(self) -> Grid3:
        return self.B.grid

    def b_squared(self) -> np.ndarray:
        return np.einsum("cijk,cijk->ijk", self.B.values, self.B.values)

    def eps_b(self) -> float:
        return EPS_B_RELATIVE * float(np.max(self.b_squared()))

    def plasma_mask(self) -> np.ndarray:
        return self.b_squared() > self.eps_b()

    def coarsen(self) -> "CGLState":
        return CGLState(
            self.B.coarsen(),
            self.p_perp.coarsen(),
            self.p_par.coarsen(),
            self.tau.coarsen(),
            self.psi.coarsen(),
            dict(self.meta, coarsened=True),
            self.evaluators,
        )


def tau_consistency_error(state: CGLState) -> float:
    """Worst scaled violation of tau = (p_par - p_perp)/B^2 over the plasma."""
    b2 = state.b_squared()
    mask = b2 > state.eps_b()
    if not mask.any():
        return 0.0
    lhs = state.p_par.values - state.p_perp.values
    rhs = state.tau.values * b2
    scale = max(1.0, float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))))
    return float(np.max(np.abs(lhs - rhs)[mask])) / scale


# ---------------------------------------------------------------------------
# Spherical vortex equilibrium
# ---------------------------------------------------------------------------


def _mode_equation(lam: float, R: float) -> float:
    return (3.0 - 4.0 * R * R * lam * lam) * math.sin(2.0 * R * lam) - 6.0 * R * lam * math.cos(
        2.0 * R * lam
    )


def find_lambda(R: float, n: int) -> float:
    """The n-th positive mode number: (3 - 4R^2 l^2) sin(2Rl) = 6Rl cos(2Rl).

    Roots are bracketed on an expanding scan and polished to |g| < 1e-10.
    """
    if R <= 0:
        raise ValueError("sphere radius must be positive")
    if n < 1:
        raise ValueError("mode index starts at 1")
    step = math.pi / (40.0 * R)
    lo = step * 0.5  # skip the trivial root at zero
    roots: list[float] = []
    g_lo = _mode_equation(lo, R)
    for chunk in range(200):
        hi_limit = lo + 10.0 * math.pi / R
        x = lo
        while x < hi_limit:
            x_next = x + step
            g_hi = _mode_equation(x_next, R)
            if g_lo == 0.0:
                roots.append(x)
            elif g_lo * g_hi < 0.0:
                roots.append(brentq(_mode_equation, x, x_next, args=(R,), xtol=1e-15, rtol=8.9e-16))
            if len(roots) >= n:
                root = roots[n - 1]
                if abs(_mode_equation(root, R)) >= 1e-10:
                    raise ArithmeticError(
                        f"mode equation residual {abs(_mode_equation(root, R)):.3e} at root {root!r}"
                    )
                return float(root)
            x, g_lo = x_next, g_hi
        lo = hi_limit
    raise LookupError(f"mode index {n} not found within the scan window")


@dataclass(frozen=True)
class VortexParams:
    """Parameters of the spherical-vortex equilibrium.

    ``gamma_b`` is the derived field constant B0*V0(2 l R)/(1 - V0(2 l R)).
    """

    R: float
    B0: float
    P0: float
    n: int
    lam: float
    gamma_b: float

    def __post_init__(self):
        if abs(_mode_equation(self.lam, self.R)) >= 1e-10:
            raise ValueError("lam does not satisfy the mode equation")
        if abs(1.0 - _v0(np.array(2.0 * self.lam * self.R))) < 1e-14:
            raise ValueError("degenerate mode: V0(2 lam R) = 1")


def vortex_params(R: float = 1.0, n: int = 3, B0: float = 1.0, P0: float = 1.0) -> VortexParams:
    lam = find_lambda(R, n)
    v0r = float(_v0(np.array(2.0 * lam * R)))
    gamma_b = B0 * v0r / (1.0 - v0r)
    return VortexParams(R, B0, P0, n, lam, gamma_b)


def _v0(x: np.ndarray) -> np.ndarray:
    """3 (sin x / x^3 - cos x / x^2), with a series branch near zero."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-2
    xs = np.where(small, 1.0, x)
    direct = 3.0 * (np.sin(xs) / xs**3 - np.cos(xs) / xs**2)
    x2 = x * x
    series = 1.0 - x2 / 10.0 + x2 * x2 / 280.0 - x2 * x2 * x2 / 15120.0
    return np.where(small, series, direct)


def _v0_prime_over_x(x: np.ndarray) -> np.ndarray:
    """V0'(x)/x = 3 ((x^2 - 3) sin x + 3 x cos x) / x^5; finite at zero."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-2
    xs = np.where(small, 1.0, x)
    direct = 3.0 * ((xs * xs - 3.0) * np.sin(xs) + 3.0 * xs * np.cos(xs)) / xs**5
    x2 = x * x
    series = -0.2 + x2 / 70.0 - x2 * x2 / 2520.0
    return np.where(small, series, direct)


def _vortex_evaluators(params: VortexParams, pressure_profile: str) -> tuple[Callable, Callable]:
    if pressure_profile not in ("balanced", "unscaled"):
        raise ValueError("pressure_profile must be 'balanced' or 'unscaled'")
    R, B0, P0, lam, gamma_b = params.R, params.B0, params.P0, params.lam, params.gamma_b
    v0r = float(_v0(np.array(2.0 * lam * R)))
    amp = B0 / (1.0 - v0r)

    def radial_profiles(X, Y, Z):
        rho2 = X * X + Y * Y + Z * Z
        rho = np.sqrt(rho2)
        arg = 2.0 * lam * rho
        V = amp * _v0(arg) - gamma_b
        # Q = V'(rho)/rho, regular on the axis and at the center
        Q = 4.0 * lam * lam * amp * _v0_prime_over_x(arg)
        inside = rho <= R
        return V, Q, inside

    def b_eval(X, Y, Z):
        V, Q, inside = radial_profiles(X, Y, Z)
        bx = -0.5 * Q * Z * X - lam * V * Y
        by = -0.5 * Q * Z * Y + lam * V * X
        bz = V + 0.5 * Q * (X * X + Y * Y)
        zero = np.zeros_like(bz)
        return np.stack(
            [np.where(inside, bx, zero), np.where(inside, by, zero), np.where(inside, bz, zero)]
        )

    def p_eval(X, Y, Z):
        V, _Q, inside = radial_profiles(X, Y, Z)
        s2 = X * X + Y * Y
        if pressure_profile == "balanced":
            p = P0 + gamma_b * lam * lam * V * s2
        else:
            # the historical printed profile; fails the momentum residual
            # check and is kept only so that failure stays observable
            p = P0 - gamma_b * V * s2
        return np.where(inside, p, P0)

    return b_eval, p_eval


def vortex_state(params: VortexParams, grid: Grid3, pressure_profile: str = "balanced") -> CGLState:
    """Sample the spherical vortex as an isotropic state (tau = 0).

    The field-line label is the pressure normalized by its largest sampled
    magnitude; any smooth function of the pressure would serve equally,
    since the pressure is constant on field lines.
    """
    b_eval, p_eval = _vortex_evaluators(params, pressure_profile)
    B = fd.sample_vector(b_eval, grid)
    P = fd.sample_scalar(p_eval, grid)
    p_max = float(np.max(np.abs(P.values)))
    if p_max == 0.0:
        raise ValueError("degenerate state: pressure vanishes on the whole grid")
    psi = ScalarGrid(grid, P.values / p_max)
    zero = ScalarGrid(grid, np.zeros(grid.counts))

    def psi_eval(X, Y, Z):
        return p_eval(X, Y, Z) / p_max

    def tau_eval(X, Y, Z):
        return np.zeros(np.broadcast(X, Y, Z).shape)

    evaluators = StateEvaluators(b_eval, p_eval, p_eval, tau_eval, psi_eval)
    meta = {
        "family": "spherical-vortex",
        "R": params.R,
        "B0": params.B0,
        "P0": params.P0,
        "n": params.n,
        "lam": params.lam,
        "gamma_b": params.gamma_b,
        "pressure_profile": pressure_profile,
        "psi_normalization": p_max,
    }
    return CGLState(B, P, P, zero, psi, meta, evaluators)


# ---------------------------------------------------------------------------
# The field-line transform family
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransformSpec:
    """Magnitude function M of the field-line label, |M| bounded away from 0.

    ``text`` is an expression in ``psi`` evaluated numerically, e.g.
    ``1 + psi*sin(psi)``.  Each admissible M factors uniquely as
    ``sign * exp(log-magnitude)``; composition multiplies signs and adds
    log-magnitudes, which is the (abelian) group law of the family.
    """

    text: str
    m_min: float = 1e-8

    def __call__(self, psi_values: np.ndarray) -> np.ndarray:
        fn = compile_numeric(self.text, ["psi"])
        values = np.asarray(fn(psi_values), dtype=float)
        return np.broadcast_to(values, np.shape(psi_values)).copy()

    def factor(self, psi_values: np.ndarray) -> tuple[int, np.ndarray]:
        """Split into (sign, log-magnitude) on the given label values."""
        m = self(psi_values)
        if float(np.min(np.abs(m))) < self.m_min:
            raise ValueError(f"|M| falls below {self.m_min}; no admissible factorization")
        signs = np.sign(m)
        if signs.size and (signs != signs.reshape(-1)[0]).any():
            raise ValueError("M changes sign on the supplied label values")
        alpha = int(signs.reshape(-1)[0]) if signs.size else 1
        return alpha, np.log(np.abs(m))


def apply_infinite_transform(state: CGLState, spec: TransformSpec) -> CGLState:
    """Rescale B by M(psi) along field lines, adjusting the anisotropy and
    the perpendicular pressure so the anisotropic balance is preserved.

    Nodes outside the plasma (B below the field-null threshold) pass
    through unchanged.  The combination p_perp + tau*B^2/2 is a nodewise
    algebraic invariant of this map.
    """
    inside = state.plasma_mask()
    m = spec(state.psi.values)
    attained = m[inside]
    if attained.size and float(np.min(np.abs(attained))) < spec.m_min:
        raise ValueError(
            f"|M| falls to {float(np.min(np.abs(attained))):.3e} on the attained label range; "
            f"the transform requires |M| >= {spec.m_min}"
        )
    if np.any(state.tau.values[inside] >= 1.0):
        note = "input state has tau >= 1 somewhere"
    else:
        note = None

    b2 = state.b_squared()
    # nodes where M is exactly one stay bit-identical (the identity element)
    active = inside & (m != 1.0)
    m_safe = np.where(active, m, 1.0)
    b_new = np.where(active[None, :, :, :], m_safe[None, :, :, :] * state.B.values, state.B.values)
    b2_new = m_safe**2 * b2
    tau_new = np.where(active, 1.0 - (1.0 - state.tau.values) / m_safe**2, state.tau.values)
    pperp_new = np.where(active, state.p_perp.values + 0.5 * (b2 - b2_new), state.p_perp.values)
    ppar_new = np.where(active, pperp_new + tau_new * b2_new, state.p_par.values)

    grid = state.grid
    meta = dict(state.meta)
    meta.setdefault("transforms", [])
    meta["transforms"] = [*meta["transforms"], f"M = {spec.text}"]
    if note:
        meta["warnings"] = [*meta.get("warnings", []), note]

    evaluators = None
    if state.evaluators is not None:
        ev = state.evaluators
        eps_b = state.eps_b()
        m_fn = compile_numeric(spec.text, ["psi"])

        def b_eval(X, Y, Z):
            b = np.asarray(ev.B(X, Y, Z), dtype=float)
            b2l = np.einsum("c...,c...->...", b, b)
            ml = np.where(b2l > eps_b, np.asarray(m_fn(ev.psi(X, Y, Z)), dtype=float), 1.0)
            return ml[None, ...] * b

        def tau_eval(X, Y, Z):
            b = np.asarray(ev.B(X, Y, Z), dtype=float)
            b2l = np.einsum("c...,c...->...", b, b)
            ml = np.where(b2l > eps_b, np.asarray(m_fn(ev.psi(X, Y, Z)), dtype=float), 1.0)
            return 1.0 - (1.0 - np.asarray(ev.tau(X, Y, Z), dtype=float)) / ml**2

        def pperp_eval(X, Y, Z):
            b = np.asarray(ev.B(X, Y, Z), dtype=float)
            b2l = np.einsum("c...,c...->...", b, b)
            ml = np.where(b2l > eps_b, np.asarray(m_fn(ev.psi(X, Y, Z)), dtype=float), 1.0)
            return np.asarray(ev.p_perp(X, Y, Z), dtype=float) + 0.5 * b2l * (1.0 - ml**2)

        def ppar_eval(X, Y, Z):
            return pperp_eval(X, Y, Z) + tau_eval(X, Y, Z) * np.einsum(
                "c...,c...->...", b_eval(X, Y, Z), b_eval(X, Y, Z)
            )

        evaluators = StateEvaluators(b_eval, pperp_eval, ppar_eval, tau_eval, ev.psi)

    return CGLState(
        VectorGrid(grid, b_new),
        ScalarGrid(grid, pperp_new),
        ScalarGrid(grid, ppar_new),
        ScalarGrid(grid, tau_new),
        state.psi,
        meta,
        evaluators,
    )


# ---------------------------------------------------------------------------
# Finite point transformations
# ---------------------------------------------------------------------------


def _resample(state: CGLState, pullback: Callable, push_vec, push_scalar) -> CGLState:
    """Rebuild the state on its own grid from mapped source coordinates.

    ``pullback`` maps target coordinates to source coordinates; ``push_vec``
    and ``push_scalar`` adjust field values.  Uses the analytic evaluators
    when available, otherwise trilinear interpolation (flagged lossy).
    """
    grid = state.grid
    X, Y, Z = grid.meshgrid()
    Xs, Ys, Zs = pullback(X, Y, Z)
    meta = dict(state.meta)

    if state.evaluators is not None:
        ev = state.evaluators
        b = push_vec(np.asarray(ev.B(Xs, Ys, Zs), dtype=float))
        pperp = push_scalar(np.asarray(ev.p_perp(Xs, Ys, Zs), dtype=float), "p_perp")
        tau = push_scalar(np.asarray(ev.tau(Xs, Ys, Zs), dtype=float), "tau")
        psi = push_scalar(np.asarray(ev.psi(Xs, Ys, Zs), dtype=float), "psi")
    else:
        from scipy.interpolate import RegularGridInterpolator

        meta["resampling"] = "trilinear (lossy)"
        axes = grid.axes()
        pts = np.stack([Xs, Ys, Zs], axis=-1)

        def interp(values):
            f = RegularGridInterpolator(axes, values, bounds_error=False, fill_value=None)
            return f(pts)

        b = push_vec(np.stack([interp(state.B.values[c]) for c in range(3)]))
        pperp = push_scalar(interp(state.p_perp.values), "p_perp")
        tau = push_scalar(interp(state.tau.values), "tau")
        psi = push_scalar(interp(state.psi.values), "psi")

    b2 = np.einsum("cijk,cijk->ijk", b, b)
    ppar = pperp + tau * b2
    return CGLState(
        VectorGrid(grid, b),
        ScalarGrid(grid, pperp),
        ScalarGrid(grid, ppar),
        ScalarGrid(grid, tau),
        ScalarGrid(grid, psi),
        meta,
        None,
    )


def translate_state(state: CGLState, K: tuple[float, float, float] = (0.0, 0.0, 0.0), k4: float = 0.0, eps: float = 1.0) -> CGLState:
    """x' = x + K*eps with the perpendicular pressure shifted by k4*eps."""
    dx, dy, dz = (k * eps for k in K)
    shift = k4 * eps

    def pullback(X, Y, Z):
        return X - dx, Y - dy, Z - dz

    def push_scalar(v, name):
        return v + shift if name == "p_perp" else v

    out = _resample(state, pullback, lambda b: b, push_scalar)
    out.meta["transforms"] = [*state.meta.get("transforms", []), f"translate K={K} k4={k4} eps={eps}"]
    return out


def _euler_zxz(phi: float, theta: float, psi_angle: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    m1 = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    c, s = math.cos(theta), math.sin(theta)
    m2 = np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])
    c, s = math.cos(psi_angle), math.sin(psi_angle)
    m3 = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    return m1 @ m2 @ m3


def rotate_state(state: CGLState, phi: float, theta: float, psi_angle: float) -> CGLState:
    """Simultaneous z-x-z rotation of coordinates and field components."""
    rot = _euler_zxz(phi, theta, psi_angle)
    inv = rot.T

    def pullback(X, Y, Z):
        return (
            inv[0, 0] * X + inv[0, 1] * Y + inv[0, 2] * Z,
            inv[1, 0] * X + inv[1, 1] * Y + inv[1, 2] * Z,
            inv[2, 0] * X + inv[2, 1] * Y + inv[2, 2] * Z,
        )

    def push_vec(b):
        return np.einsum("rc,c...->r...", rot, b)

    out = _resample(state, pullback, push_vec, lambda v, name: v)
    out.meta["transforms"] = [*state.meta.get("transforms", []), f"rotate euler=({phi},{theta},{psi_angle})"]
    return out


def scale_state(state: CGLState, t: float, s: float, pressure_factor: str = "as-printed") -> CGLState:
    """x' = t x, B' = s B, with the perpendicular pressure multiplied by
    2s (``as-printed``) or s^2 (``generator``, the factor that exponentiates
    the field-scaling generator and preserves the force balance)."""
    if t == 0:
        raise ValueError("coordinate scale t must be nonzero")
    factors = {"as-printed": 2.0 * s, "generator": s * s}
    try:
        pf = factors[pressure_factor]
    except KeyError:
        raise ValueError("pressure_factor must be 'as-printed' or 'generator'") from None

    def pullback(X, Y, Z):
        return X / t, Y / t, Z / t

    def push_scalar(v, name):
        return pf * v if name == "p_perp" else v

    out = _resample(state, pullback, lambda b: s * b, push_scalar)
    out.meta["transforms"] = [*state.meta.get("transforms", []), f"scale t={t} s={s} ({pressure_factor})"]
    return out


def anisotropy_scale_state(state: CGLState, C: float) -> CGLState:
    """Rescale (p_perp + B^2/2) and (1 - tau) by C > 0, holding B and x."""
    if C <= 0:
        raise ValueError("the rescaling constant must be positive to preserve tau < 1")
    b2 = state.b_squared()
    pperp = C * (state.p_perp.values + 0.5 * b2) - 0.5 * b2
    tau = 1.0 - C * (1.0 - state.tau.values)
    ppar = pperp + tau * b2
    grid = state.grid
    meta = dict(state.meta)
    meta["transforms"] = [*state.meta.get("transforms", []), f"anisotropy_scale C={C}"]
    return CGLState(
        state.B,
        ScalarGrid(grid, pperp),
        ScalarGrid(grid, ppar),
        ScalarGrid(grid, tau),
        state.psi,
        meta,
        None,
    )


# ---------------------------------------------------------------------------
# Stability criteria
# ---------------------------------------------------------------------------

FLAG_STABLE = 0
FLAG_UNSTABLE = 1
FLAG_NOT_APPLICABLE = 2
FLAG_INDETERMINATE = 3


@dataclass(frozen=True)
class StabilityReport:
    fire_hose: np.ndarray
    mirror: np.ndarray
    counts: dict
    margins: dict

    def summary(self) -> dict:
        return {"counts": self.counts, "margins": self.margins}


def stability_report(state: CGLState) -> StabilityReport:
    """Pointwise pressure-anisotropy instability flags.

    Fire-hose: unstable iff p_par - p_perp > B^2 (tau > 1).
    Mirror: unstable iff p_perp (p_perp / (6 p_par) - 1) > B^2 / 2; nodes
    with p_par = 0 are flagged indeterminate.  Nodes at field nulls are
    not applicable.  Margins are the largest values of (criterion left
    side minus right side) over applicable nodes.
    """
    b2 = state.b_squared()
    applicable = b2 > state.eps_b()
    pperp = state.p_perp.values
    ppar = state.p_par.values

    fire = np.full(state.grid.counts, FLAG_NOT_APPLICABLE, dtype=np.int8)
    fire_lhs = ppar - pperp - b2
    fire[applicable & (fire_lhs > 0)] = FLAG_UNSTABLE
    fire[applicable & (fire_lhs <= 0)] = FLAG_STABLE

    mirror = np.full(state.grid.counts, FLAG_NOT_APPLICABLE, dtype=np.int8)
    zero_par = applicable & (ppar == 0)
    ok = applicable & ~zero_par
    with np.errstate(divide="ignore", invalid="ignore"):
        mirror_lhs = pperp * (pperp / (6.0 * ppar) - 1.0) - 0.5 * b2
    mirror[ok & (mirror_lhs > 0)] = FLAG_UNSTABLE
    mirror[ok & (mirror_lhs <= 0)] = FLAG_STABLE
    mirror[zero_par] = FLAG_INDETERMINATE

    def margin(lhs, mask):
        return float(np.max(lhs[mask])) if mask.any() else float("nan")

    counts = {
        "applicable": int(applicable.sum()),
        "fire_hose_unstable": int((fire == FLAG_UNSTABLE).sum()),
        "mirror_unstable": int((mirror == FLAG_UNSTABLE).sum()),
        "indeterminate": int((mirror == FLAG_INDETERMINATE).sum()),
        "not_applicable": int((~applicable).sum()),
    }
    margins = {
        "fire_hose": margin(fire_lhs, applicable),
        "mirror": margin(mirror_lhs, ok),
    }
    return StabilityReport(fire, mirror, counts, margins)


# ---------------------------------------------------------------------------
# Residuals of the governing systems
# ---------------------------------------------------------------------------

RESIDUAL_SYSTEMS = ("mhd", "cgl", "alt")


def residual_fields(state: CGLState, system: str) -> dict[str, ScalarGrid | VectorGrid]:
    """Assemble each governing equation's left-minus-right side on the
    interior grid with central differences.

    ``mhd``: curl(B) x B - grad(p_perp); div(B).
    ``cgl``: the anisotropic balance, div(B), and B . grad tau.
    ``alt``: the recast balance for the scaled field sqrt(1-tau) B with the
    combined pressure p_perp + tau B^2/2, plus its line-constancy.
    """
    if system not in RESIDUAL_SYSTEMS:
        raise ValueError(f"unknown system {system!r}; choose from {RESIDUAL_SYSTEMS}")
    grid = state.grid
    B = state.B
    b2 = state.b_squared()
    divb = fd.divergence(B)

    if system == "mhd":
        momentum = fd.cross(fd.curl(B), B.interior())
        gp = fd.gradient(state.p_perp)
        mom = VectorGrid(momentum.grid, momentum.values - gp.values)
        return {"momentum": mom, "div_b": divb}

    tau = state.tau
    if system == "cgl":
        jxb = fd.cross(fd.curl(B), B.interior())
        gp = fd.gradient(state.p_perp)
        gb2h = fd.gradient(ScalarGrid(grid, 0.5 * b2))
        line = fd.directional(B, tau)
        ti = tau.interior().values
        bi = B.interior().values
        mom = (1.0 - ti)[None] * jxb.values - gp.values - ti[None] * gb2h.values - bi * line.values[None]
        return {
            "momentum": VectorGrid(jxb.grid, mom),
            "div_b": divb,
            "tau_advection": line,
        }

    # alternative representation: requires tau < 1 where evaluated
    if float(np.max(tau.values)) >= 1.0:
        raise ValueError("the recast system needs tau < 1 everywhere on the grid")
    scaled = VectorGrid(grid, np.sqrt(1.0 - tau.values)[None] * B.values)
    combined = ScalarGrid(grid, state.p_perp.values + 0.5 * tau.values * b2)
    momentum = fd.cross(fd.curl(scaled), scaled.interior())
    gc = fd.gradient(combined)
    mom = VectorGrid(momentum.grid, momentum.values - gc.values)
    return {
        "momentum": mom,
        "div_b": divb,
        "tau_advection": fd.directional(B, tau),
        "label_advection": fd.directional(B, combined),
    }


def residual_norms(
    state: CGLState, system: str, mask_radius: float | None = None
) -> dict[str, dict[str, float]]:
    """Linf and L2 norms of every residual, optionally restricted to the
    ball of the given radius (for states smooth only inside a sphere)."""
    out = {}
    for name, res in residual_fields(state, system).items():
        mask = fd.sphere_mask(res.grid, mask_radius) if mask_radius is not None else None
        out[name] = {
            "linf": fd.norm(res, "linf", mask),
            "l2": fd.norm(res, "l2", mask),
        }
    return out


# ---------------------------------------------------------------------------
# State I/O
# ---------------------------------------------------------------------------


def write_state_csv(state: CGLState, path) -> None:
    fd.write_csv(
        path,
        state.grid,
        {
            "B1": state.B.values[0],
            "B2": state.B.values[1],
            "B3": state.B.values[2],
            "p_perp": state.p_perp.values,
            "p_par": state.p_par.values,
            "tau": state.tau.values,
            "psi": state.psi.values,
        },
    )


def read_state_csv(path) -> CGLState:
    grid, cols = fd.read_csv(path)
    missing = [c for c in STATE_COLUMNS if c not in cols]
    if missing:
        raise ValueError(f"{path}: missing state columns {missing}")
    B = VectorGrid(grid, np.stack([cols["B1"], cols["B2"], cols["B3"]]))
    state = CGLState(
        B,
        ScalarGrid(grid, cols["p_perp"]),
        ScalarGrid(grid, cols["p_par"]),
        ScalarGrid(grid, cols["tau"]),
        ScalarGrid(grid, cols["psi"]),
        {"source": str(path)},
        None,
    )
    mismatch = tau_consistency_error(state)
    if mismatch > 1e-6:
        warnings.warn(
            f"{path}: tau column disagrees with (p_par - p_perp)/B^2 "
            f"(scaled mismatch {mismatch:.2e})",
            RuntimeWarning,
            stacklevel=2,
        )
    return state


def write_state_vtk(state: CGLState, path, title: str = "plasma equilibrium state") -> None:
    fd.write_vtk(
        path,
        state.grid,
        scalars={
            "p_perp": state.p_perp.values,
            "p_par": state.p_par.values,
            "tau": state.tau.values,
            "psi": state.psi.values,
        },
        vectors={"B": state.B.values},
        title=title,
    )

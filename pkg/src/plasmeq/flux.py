"""Finite-difference solvers for axially and helically symmetric flux
functions, and the mapping from flux solutions to anisotropic states.

The axisymmetric operator is ``psi_rr - psi_r/r + psi_zz``; the helical
operator is ``psi_uu/r^2 + (1/r) d_r(r/(r^2+gamma^2) psi_r)``.  Constitutive
terms (J J', the helical 2 gamma J/(r^2+gamma^2)^2 term, and the pressure
profile derivative) are frozen at the previous iterate and relaxed: damped
Picard iteration around one factorized sparse linear operator.  Dirichlet
data is imposed exactly and never touched by the iteration.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.integrate import quad
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.sparse.linalg import splu

from .equilibria import CGLState, StateEvaluators
from .expr import compile_numeric
from .fields import Grid3, sample_scalar, sample_vector

__all__ = [
    "FluxProblem",
    "FluxSolution",
    "SolverDiverged",
    "solve_flux",
    "flux_to_cgl",
    "default_cartesian_box",
    "parse_problem_file",
    "write_solution",
    "load_solution",
]

GEOMETRIES = ("axisymmetric", "helical")


class SolverDiverged(RuntimeError):
    pass


def _as_profile(spec, variables: tuple[str, ...]):
    """Normalize a profile given as an expression string, a number, or a
    callable into a vectorized callable (plus its text form if known)."""
    if spec is None:
        return None, None
    if callable(spec):
        return spec, getattr(spec, "text", None)
    if isinstance(spec, (int, float)):
        value = float(spec)
        return (lambda *args: np.full_like(np.asarray(args[0], dtype=float), value)), repr(spec)
    fn = compile_numeric(str(spec), variables)
    return fn, str(spec)


@dataclass
class FluxProblem:
    """Elliptic problem for the flux function on [r0, r1] x [zu0, zu1].

    ``J``/``dJ`` are the poloidal-current profile and its derivative;
    ``dN`` is the pressure-profile derivative (axisymmetric) and ``dL`` its
    helical counterpart.  ``boundary`` supplies Dirichlet data as a function
    of (r, zu); ``source`` is an optional extra term S(r, zu) added to the
    equation (used by manufactured-solution tests).  Profile consistency
    (dJ against J) is probed numerically, not enforced.
    """

    geometry: str
    r_range: tuple[float, float]
    zu_range: tuple[float, float]
    boundary: object
    J: object = 0.0
    dJ: object = 0.0
    dN: object = 0.0
    gamma: float = 0.0
    source: object = None
    texts: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"geometry must be one of {GEOMETRIES}")
        r0, r1 = self.r_range
        if not (0.0 < r0 < r1):
            raise ValueError("radial domain requires 0 < r0 < r1 (the axis is excluded)")
        a, b = self.zu_range
        if not a < b:
            raise ValueError("empty zu range")
        if self.geometry == "helical" and self.gamma == 0.0:
            raise ValueError("helical geometry needs a nonzero pitch length gamma")
        self.J, jt = _as_profile(self.J, ("psi",))
        self.dJ, djt = _as_profile(self.dJ, ("psi",))
        self.dN, dnt = _as_profile(self.dN, ("psi",))
        self.boundary, bt = _as_profile(self.boundary, ("r", "zu"))
        self.source, st = _as_profile(self.source, ("r", "zu"))
        for key, text in (("J", jt), ("dJ", djt), ("dN", dnt), ("boundary", bt), ("source", st)):
            if text is not None:
                self.texts.setdefault(key, text)

    # the helical pressure profile derivative is traditionally written L';
    # it rides in the same slot as dN
    @property
    def dL(self):
        return self.dN


@dataclass(frozen=True)
class FluxSolution:
    problem: FluxProblem
    r: np.ndarray
    zu: np.ndarray
    psi: np.ndarray
    iterations: int
    final_update: float
    converged: bool

    def spline(self) -> RectBivariateSpline:
        return RectBivariateSpline(self.r, self.zu, self.psi, kx=3, ky=3)

    def attained_range(self) -> tuple[float, float]:
        return float(self.psi.min()), float(self.psi.max())


def _assemble_operator(problem: FluxProblem, r: np.ndarray, zu: np.ndarray):
    """Sparse interior operator and the boundary contribution closure."""
    nr, nzu = len(r), len(zu)
    hr = r[1] - r[0]
    hz = zu[1] - zu[0]
    ni, nj = nr - 2, nzu - 2

    def k_of(i, j):  # interior index
        return (i - 1) * nj + (j - 1)

    rows, cols, vals = [], [], []
    # coefficient stencils per interior column i (independent of j)
    if problem.geometry == "axisymmetric":
        ri = r[1:-1]
        c_e = 1.0 / hr**2 - 1.0 / (2.0 * hr * ri)  # east: +r neighbor
        c_w = 1.0 / hr**2 + 1.0 / (2.0 * hr * ri)
        c_n = np.full(ni, 1.0 / hz**2)
        c_center = -2.0 / hr**2 - 2.0 / hz**2 * np.ones(ni)
    else:
        g2 = problem.gamma**2

        def c(rv):
            return rv / (rv * rv + g2)

        ri = r[1:-1]
        c_half_e = c(ri + 0.5 * hr)
        c_half_w = c(ri - 0.5 * hr)
        c_e = c_half_e / (ri * hr**2)
        c_w = c_half_w / (ri * hr**2)
        c_n = 1.0 / (hz**2 * ri**2)
        c_center = -(c_half_e + c_half_w) / (ri * hr**2) - 2.0 / (hz**2 * ri**2)

    for i in range(1, nr - 1):
        a_e, a_w = c_e[i - 1], c_w[i - 1]
        a_n = c_n[i - 1]
        a_c = c_center[i - 1]
        for j in range(1, nzu - 1):
            k = k_of(i, j)
            rows.append(k), cols.append(k), vals.append(a_c)
            if i + 1 <= nr - 2:
                rows.append(k), cols.append(k_of(i + 1, j)), vals.append(a_e)
            if i - 1 >= 1:
                rows.append(k), cols.append(k_of(i - 1, j)), vals.append(a_w)
            if j + 1 <= nzu - 2:
                rows.append(k), cols.append(k_of(i, j + 1)), vals.append(a_n)
            if j - 1 >= 1:
                rows.append(k), cols.append(k_of(i, j - 1)), vals.append(a_n)
    matrix = sparse.csc_matrix((vals, (rows, cols)), shape=(ni * nj, ni * nj))

    def boundary_term(psi_grid: np.ndarray) -> np.ndarray:
        """Contribution of fixed Dirichlet values to each interior equation."""
        out = np.zeros(ni * nj)
        for j in range(1, nzu - 1):
            out[k_of(1, j)] += c_w[0] * psi_grid[0, j]
            out[k_of(nr - 2, j)] += c_e[ni - 1] * psi_grid[nr - 1, j]
        for i in range(1, nr - 1):
            out[k_of(i, 1)] += c_n[i - 1] * psi_grid[i, 0]
            out[k_of(i, nzu - 2)] += c_n[i - 1] * psi_grid[i, nzu - 1]
        return out

    return matrix, boundary_term


def _nonlinear_term(problem: FluxProblem, R: np.ndarray, psi: np.ndarray, S: np.ndarray | None):
    g = np.zeros_like(psi)
    jj = problem.J(psi) * problem.dJ(psi)
    if problem.geometry == "axisymmetric":
        g += jj + R**2 * problem.dN(psi)
    else:
        denom = R**2 + problem.gamma**2
        g += jj / denom + 2.0 * problem.gamma * problem.J(psi) / denom**2 + problem.dL(psi)
    if S is not None:
        g += S
    return g


def solve_flux(
    problem: FluxProblem,
    shape: tuple[int, int] = (33, 33),
    tol_outer: float = 1e-10,
    max_iter: int = 500,
    omega: float = 0.8,
) -> FluxSolution:
    """Damped Picard iteration around one factorized linear operator."""
    nr, nzu = shape
    if nr < 9 or nzu < 9:
        raise ValueError("resolution must be at least 9 x 9")
    if not 0.0 < omega <= 1.0:
        raise ValueError("relaxation weight must lie in (0, 1]")
    r = np.linspace(*problem.r_range, nr)
    zu = np.linspace(*problem.zu_range, nzu)
    R, ZU = np.meshgrid(r, zu, indexing="ij")

    psi = np.zeros((nr, nzu))
    psi[0, :] = problem.boundary(R[0, :], ZU[0, :])
    psi[-1, :] = problem.boundary(R[-1, :], ZU[-1, :])
    psi[:, 0] = problem.boundary(R[:, 0], ZU[:, 0])
    psi[:, -1] = problem.boundary(R[:, -1], ZU[:, -1])
    if not np.isfinite(psi).all():
        raise ValueError("boundary data is not finite")

    matrix, boundary_term = _assemble_operator(problem, r, zu)
    lu = splu(matrix)
    bterm = boundary_term(psi)
    S = problem.source(R[1:-1, 1:-1], ZU[1:-1, 1:-1]) if problem.source is not None else None

    updates: list[float] = []
    final_update = math.inf
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        g = _nonlinear_term(problem, R[1:-1, 1:-1], psi[1:-1, 1:-1], S)
        if not np.isfinite(g).all():
            raise ArithmeticError("constitutive profile evaluated to a non-finite value")
        rhs = -g.reshape(-1) - bterm
        tilde = lu.solve(rhs).reshape(nr - 2, nzu - 2)
        new_interior = (1.0 - omega) * psi[1:-1, 1:-1] + omega * tilde
        final_update = float(np.max(np.abs(new_interior - psi[1:-1, 1:-1])))
        psi[1:-1, 1:-1] = new_interior
        updates.append(final_update)
        if final_update < tol_outer:
            converged = True
            break
        if len(updates) > 20 and updates[-1] > 10.0 * updates[-21]:
            raise SolverDiverged(
                f"update norm grew from {updates[-21]:.3e} to {updates[-1]:.3e} over 20 iterations"
            )
    if not converged:
        warnings.warn(
            f"flux solve stopped at the iteration cap ({max_iter}) with update {final_update:.3e}",
            RuntimeWarning,
            stacklevel=2,
        )

    solution = FluxSolution(problem, r, zu, psi, iterations, final_update, converged)
    _warn_on_inconsistent_profiles(problem, solution)
    return solution


def _warn_on_inconsistent_profiles(problem: FluxProblem, sol: FluxSolution) -> None:
    """Probe dJ against a numeric derivative of J at five attained values."""
    lo, hi = sol.attained_range()
    if hi - lo <= 0:
        return
    samples = np.linspace(lo, hi, 5)
    step = (hi - lo) * 1e-6
    numeric = (problem.J(samples + step) - problem.J(samples - step)) / (2.0 * step)
    stated = problem.dJ(samples)
    scale = max(1.0, float(np.max(np.abs(numeric))), float(np.max(np.abs(stated))))
    worst = float(np.max(np.abs(numeric - stated))) / scale
    if worst > 1e-4:
        warnings.warn(
            f"profile dJ deviates from the numeric derivative of J "
            f"(relative mismatch {worst:.2e} on the attained range)",
            RuntimeWarning,
            stacklevel=3,
        )


# ---------------------------------------------------------------------------
# Mapping a flux solution to an anisotropic state
# ---------------------------------------------------------------------------


def default_cartesian_box(problem: FluxProblem, counts: int | tuple[int, int, int] = 33) -> Grid3:
    """A Cartesian box strictly inside the revolved (or helically extended)
    domain, so every node maps to valid (r, zu) coordinates."""
    r0, r1 = problem.r_range
    a, b = problem.zu_range
    m = 0.1 * (r1 - r0)
    y_max = m
    x_lo = r0 + m
    x_hi = math.sqrt((r1 - m) ** 2 - y_max**2)
    if x_hi <= x_lo:
        raise ValueError("radial domain too thin for the default box; pass an explicit grid")
    mz = 0.1 * (b - a)
    z_lo, z_hi = a + mz, b - mz
    if problem.geometry == "helical":
        phi_max = math.atan2(y_max, x_lo)
        pad = abs(problem.gamma) * phi_max
        z_lo, z_hi = z_lo + pad, z_hi - pad
        if z_lo >= z_hi:
            raise ValueError("zu range too thin for the helical default box; pass an explicit grid")
    if isinstance(counts, int):
        counts = (counts, counts, counts)
    nx, ny, nz = counts
    return Grid3(
        (x_lo, -y_max, z_lo),
        ((x_hi - x_lo) / (nx - 1), 2 * y_max / (ny - 1), (z_hi - z_lo) / (nz - 1)),
        counts,
    )


def _pressure_antiderivative(problem: FluxProblem, sol: FluxSolution, n_ref: float, psi_ref: float | None):
    lo, hi = sol.attained_range()
    pad = 0.02 * max(hi - lo, 1e-12)
    lo, hi = lo - pad, hi + pad
    if psi_ref is None:
        psi_ref = lo
    checkpoints = np.linspace(lo, hi, 257)
    values = np.empty_like(checkpoints)
    integrand = lambda p: float(problem.dN(np.asarray(p, dtype=float)))
    for idx, p in enumerate(checkpoints):
        values[idx] = n_ref + quad(integrand, psi_ref, p, limit=200)[0]
    return CubicSpline(checkpoints, values)


def flux_to_cgl(
    sol: FluxSolution,
    tau,
    grid: Grid3 | None = None,
    n_ref: float = 0.0,
    psi_ref: float | None = None,
) -> CGLState:
    """Build a 3D anisotropic state from a flux solution.

    ``tau`` (an expression in psi, a number, or a callable) must stay below
    one on the attained flux range.  The field follows the symmetric-state
    template with the overall 1/sqrt(1-tau) factor; pressures are
    N(psi) -+ tau B^2/2 with N integrated from the stated profile
    derivative (reference value ``n_ref`` at ``psi_ref``, by default the
    smallest attained flux value).  The stored label is psi normalized by
    its largest magnitude on the 2D solution.
    """
    problem = sol.problem
    tau_fn, tau_text = _as_profile(tau, ("psi",))
    lo, hi = sol.attained_range()
    probe = tau_fn(np.linspace(lo, hi, 513))
    if float(np.max(probe)) >= 1.0:
        raise ValueError(
            f"tau reaches {float(np.max(probe)):.6g} on the attained flux range; the mapping needs tau < 1"
        )
    n_of = _pressure_antiderivative(problem, sol, n_ref, psi_ref)
    spline = sol.spline()
    psi_scale = max(abs(lo), abs(hi)) or 1.0
    gamma = problem.gamma
    helical = problem.geometry == "helical"

    def geometry_fields(X, Y, Z):
        R = np.hypot(X, Y)
        phi = np.arctan2(Y, X)
        ZU = Z - gamma * phi if helical else Z
        shape = R.shape
        rf, zf = R.reshape(-1), np.asarray(ZU).reshape(-1)
        psi = spline.ev(rf, zf).reshape(shape)
        psi_r = spline.ev(rf, zf, dx=1).reshape(shape)
        psi_zu = spline.ev(rf, zf, dy=1).reshape(shape)
        return R, phi, psi, psi_r, psi_zu

    def b_eval(X, Y, Z):
        R, phi, psi, psi_r, psi_zu = geometry_fields(X, Y, Z)
        factor = 1.0 / np.sqrt(1.0 - tau_fn(psi))
        Jv = problem.J(psi)
        if helical:
            denom = R**2 + gamma**2
            b_r = psi_zu / R
            b_z = (gamma * Jv - R * psi_r) / denom
            b_phi = (R * Jv + gamma * psi_r) / denom
        else:
            b_r = psi_zu / R
            b_phi = Jv / R
            b_z = -psi_r / R
        cos_p, sin_p = np.cos(phi), np.sin(phi)
        return factor[None, ...] * np.stack(
            [b_r * cos_p - b_phi * sin_p, b_r * sin_p + b_phi * cos_p, b_z * np.ones_like(cos_p)]
        )

    def tau_eval(X, Y, Z):
        _R, _phi, psi, _pr, _pz = geometry_fields(X, Y, Z)
        return tau_fn(psi) * np.ones_like(psi)

    def b2_eval(X, Y, Z):
        b = b_eval(X, Y, Z)
        return np.einsum("c...,c...->...", b, b)

    def pperp_eval(X, Y, Z):
        _R, _phi, psi, _pr, _pz = geometry_fields(X, Y, Z)
        return n_of(psi) - 0.5 * tau_eval(X, Y, Z) * b2_eval(X, Y, Z)

    def ppar_eval(X, Y, Z):
        _R, _phi, psi, _pr, _pz = geometry_fields(X, Y, Z)
        return n_of(psi) + 0.5 * tau_eval(X, Y, Z) * b2_eval(X, Y, Z)

    def psi_eval(X, Y, Z):
        _R, _phi, psi, _pr, _pz = geometry_fields(X, Y, Z)
        return psi / psi_scale

    if grid is None:
        grid = default_cartesian_box(problem)
    B = sample_vector(b_eval, grid)
    p_perp = sample_scalar(pperp_eval, grid)
    p_par = sample_scalar(ppar_eval, grid)
    tau_g = sample_scalar(tau_eval, grid)
    psi_g = sample_scalar(psi_eval, grid)
    meta = {
        "family": f"flux-{problem.geometry}",
        "gamma": gamma,
        "tau_profile": tau_text,
        "n_ref": n_ref,
        "psi_ref": psi_ref if psi_ref is not None else lo,
        "psi_normalization": psi_scale,
        "profiles": dict(problem.texts),
        "solution_converged": sol.converged,
    }
    evaluators = StateEvaluators(b_eval, pperp_eval, ppar_eval, tau_eval, psi_eval)
    return CGLState(B, p_perp, p_par, tau_g, psi_g, meta, evaluators)


# ---------------------------------------------------------------------------
# Problem files and solution artifacts
# ---------------------------------------------------------------------------

_NUMERIC_KEYS = {"r0", "r1", "zu0", "zu1", "gamma", "tol", "omega"}
_INT_KEYS = {"nr", "nzu", "max_iter"}
_EXPR_KEYS = {"J", "dJ", "dN", "dL", "boundary", "source"}


def parse_problem_file(text: str) -> tuple[FluxProblem, dict]:
    """Parse ``key = value`` lines; expression values stay text until use.

    Returns the problem plus solver parameters (resolution, tolerance,
    iteration cap, relaxation weight).
    """
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in entries:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = value

    def take(key, default=None):
        return entries.pop(key, default)

    geometry = take("geometry", "axisymmetric")
    try:
        numbers = {k: float(take(k)) for k in tuple(_NUMERIC_KEYS & entries.keys())}
        ints = {k: int(take(k)) for k in tuple(_INT_KEYS & entries.keys())}
    except ValueError as err:
        raise ValueError(f"bad numeric value in problem file: {err}") from None
    exprs = {k: take(k) for k in tuple(_EXPR_KEYS & entries.keys())}
    if entries:
        raise ValueError(f"unrecognized problem keys: {sorted(entries)}")
    for required in ("r0", "r1", "zu0", "zu1"):
        if required not in numbers:
            raise ValueError(f"problem file is missing {required}")
    if "boundary" not in exprs:
        raise ValueError("problem file is missing the boundary expression")
    if "dL" in exprs and "dN" in exprs:
        raise ValueError("give either dN (axisymmetric) or dL (helical), not both")
    problem = FluxProblem(
        geometry=geometry,
        r_range=(numbers["r0"], numbers["r1"]),
        zu_range=(numbers["zu0"], numbers["zu1"]),
        boundary=exprs["boundary"],
        J=exprs.get("J", 0.0),
        dJ=exprs.get("dJ", 0.0),
        dN=exprs.get("dL", exprs.get("dN", 0.0)),
        gamma=numbers.get("gamma", 0.0),
        source=exprs.get("source"),
    )
    params = {
        "shape": (ints.get("nr", 33), ints.get("nzu", 33)),
        "tol_outer": numbers.get("tol", 1e-10),
        "max_iter": ints.get("max_iter", 500),
        "omega": numbers.get("omega", 0.8),
    }
    return problem, params


def write_solution(sol: FluxSolution, directory) -> dict:
    """Write psi.csv (r, zu, psi; zu fastest) plus solution.json and return
    the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / "psi.csv"
    R, ZU = np.meshgrid(sol.r, sol.zu, indexing="ij")
    flat = np.column_stack([R.reshape(-1), ZU.reshape(-1), sol.psi.reshape(-1)])
    with open(csv_path, "w") as fh:
        fh.write("r,zu,psi\n")
        np.savetxt(fh, flat, fmt="%.17g", delimiter=",")
    problem = sol.problem
    missing = [k for k in ("J", "dJ", "dN", "boundary") if k not in problem.texts]
    if missing:
        raise ValueError(
            f"cannot serialize a problem whose profiles {missing} were supplied as callables"
        )
    manifest = {
        "geometry": problem.geometry,
        "r0": problem.r_range[0],
        "r1": problem.r_range[1],
        "zu0": problem.zu_range[0],
        "zu1": problem.zu_range[1],
        "gamma": problem.gamma,
        "profiles": problem.texts,
        "resolution": [len(sol.r), len(sol.zu)],
        "iterations": sol.iterations,
        "final_update": sol.final_update,
        "converged": sol.converged,
        "psi_csv": csv_path.name,
    }
    with open(directory / "solution.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_solution(path) -> FluxSolution:
    path = Path(path)
    with open(path) as fh:
        manifest = json.load(fh)
    problem = FluxProblem(
        geometry=manifest["geometry"],
        r_range=(manifest["r0"], manifest["r1"]),
        zu_range=(manifest["zu0"], manifest["zu1"]),
        boundary=manifest["profiles"]["boundary"],
        J=manifest["profiles"].get("J", 0.0),
        dJ=manifest["profiles"].get("dJ", 0.0),
        dN=manifest["profiles"].get("dN", 0.0),
        gamma=manifest.get("gamma", 0.0),
        source=manifest["profiles"].get("source"),
    )
    with open(path.parent / manifest["psi_csv"]) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if header != ["r", "zu", "psi"]:
        raise ValueError(f"{manifest['psi_csv']}: expected columns r,zu,psi")
    nr, nzu = manifest["resolution"]
    r = np.unique(data[:, 0])
    zu = np.unique(data[:, 1])
    if len(r) != nr or len(zu) != nzu:
        raise ValueError("solution CSV does not match the recorded resolution")
    psi = data[:, 2].reshape(nr, nzu)
    return FluxSolution(
        problem,
        r,
        zu,
        psi,
        manifest["iterations"],
        manifest["final_update"],
        manifest["converged"],
    )

"""Scattering resonances through a radial complex absorbing layer.

The truncated resonator is stretched radially beyond ``r₀`` around the
envelope center, turning the resonance near λ₀ into an eigenvalue of the
complex-symmetric pencil (K(θ), M(θ)). Each resonance is recomputed under
three layer perturbations on a shared interior mesh; a large spread flags
the value as untrusted instead of hiding it.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
from numpy.polynomial.legendre import leggauss
from scipy.optimize import newton
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigs
from scipy.stats import linregress

from resonate.errors import AssemblyError, ConfigError, FitRefused, MeshError, ResonanceNotFound, SolverError
from resonate.fem import DiscreteField, Factorization, assemble_absorbing, region_mass
from resonate.geometry import ResonatorSpec
from resonate.mesh import ABSORBER_OUTER, CAVITY, NECK, Mesh, PMLLayout, neck_transect_counts, triangulate
from resonate.spectra import cavity_mode, closed_problem, track_eigenvalue

logger = logging.getLogger(__name__)

PRECISION_FLOOR = 30.0
SPREAD_LIMIT = 0.1
EXCLUDED_FLAGS = ("precision_floor", "not_outgoing", "pml_untrusted", "not_found")
ATTENUATION = 20.7
D_EXTENSION = 1.5


@dataclass(frozen=True)
class PMLConfig:
    """Quadratic radial absorber σ(r) = σ₀((r − r₀)/d)² for r > r₀."""

    center: Tuple[float, float]
    inner: float
    thickness: float
    sigma0: float
    exponent: int = 2

    def __post_init__(self):
        if self.sigma0 < 0 or self.thickness <= 0 or self.inner <= 0:
            raise ConfigError("absorber needs r0 > 0, d > 0 and sigma0 >= 0", {"pml": [self.inner, self.thickness, self.sigma0]})

    @property
    def outer(self) -> float:
        return self.inner + self.thickness

    def sigma(self, r: np.ndarray) -> np.ndarray:
        s = np.clip((np.asarray(r) - self.inner) / self.thickness, 0.0, None)
        return self.sigma0 * s**2

    def stretched(self, r: np.ndarray) -> np.ndarray:
        """r̃ = r + i∫σ, so dr̃/dr = 1 + iσ."""
        s = np.clip((np.asarray(r) - self.inner) / self.thickness, 0.0, None)
        return np.asarray(r) + 1j * self.sigma0 * self.thickness / 3.0 * s**3

    @classmethod
    def for_wavenumber(
        cls,
        spec: ResonatorSpec,
        lam: float,
        inner: Optional[float] = None,
        thickness: Optional[float] = None,
        sigma0: Optional[float] = None,
    ) -> "PMLConfig":
        """Defaults: one wavelength of air past the envelope, one wavelength of layer."""
        k = np.sqrt(lam)
        wavelength = 2 * np.pi / k
        d = wavelength if thickness is None else thickness
        r0 = spec.envelope.radius + wavelength if inner is None else inner
        s0 = ATTENUATION / (k * d) if sigma0 is None else sigma0
        if r0 <= spec.envelope.radius:
            raise ConfigError("absorber must start outside the envelope", {"inner": r0, "envelope": spec.envelope.radius})
        return cls(tuple(spec.envelope.center), float(r0), float(d), float(s0))

    def variants(self) -> Dict[str, "PMLConfig"]:
        return {
            "sigma_half": replace(self, sigma0=0.5 * self.sigma0),
            "sigma_double": replace(self, sigma0=2.0 * self.sigma0),
            "thick": replace(self, thickness=D_EXTENSION * self.thickness),
        }


def sqrt_rho(rho: complex) -> complex:
    """Branch of √ρ with Re > 0 and Im < 0 for Im ρ < 0."""
    r = np.sqrt(complex(rho))
    return r if r.real >= 0 else -r


@dataclass(eq=False)
class ResonantState:
    rho: complex
    field: DiscreteField
    alpha: complex
    residual: float
    spread: float = float("nan")
    variants: Dict[str, complex] = field(default_factory=dict)
    flags: List[str] = field(default_factory=list)
    eps: float = float("nan")
    lam0: float = float("nan")
    pml: Optional[PMLConfig] = None

    @property
    def width(self) -> float:
        return abs(self.rho.imag)

    @property
    def sqrt_rho(self) -> complex:
        return sqrt_rho(self.rho)

    @property
    def lifetime(self) -> float:
        """1/(2|Im √ρ|), the decay time of the local energy."""
        return 1.0 / (2.0 * abs(self.sqrt_rho.imag))

    @property
    def trusted(self) -> bool:
        return not any(f in EXCLUDED_FLAGS for f in self.flags)


# --- complex eigenproblem -------------------------------------------------------------


def complex_eigs(
    K: sp.spmatrix, M: sp.spmatrix, seed: complex, count: int = 4, max_restarts: int = 3
) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvalues of the pencil (K, M) nearest ``seed`` via OP = (K − σM)⁻¹M."""
    n = K.shape[0]
    sigma = complex(seed)
    v0 = np.random.default_rng(1).standard_normal(n).astype(complex)
    ncv = min(n - 1, max(2 * count + 1, 24))
    last = None
    for attempt in range(max_restarts + 1):
        try:
            lu = Factorization((K - sigma * M).tocsc())
        except SolverError as err:
            last = err
            sigma = complex(seed) * (1 + 1e-7 * (attempt + 1))
            continue
        op = LinearOperator((n, n), matvec=lambda x: lu.solve(M @ x), dtype=complex)
        try:
            mu, vecs = eigs(op, k=count, which="LM", v0=v0, ncv=ncv)
            rho = sigma + 1.0 / mu
            order = np.argsort(np.abs(rho - seed))
            return rho[order], vecs[:, order]
        except ArpackNoConvergence as err:
            last = err
            ncv = min(n - 1, 2 * ncv)
    raise ResonanceNotFound(f"complex eigensolver failed near {seed}: {last}")


def _rayleigh(K, M, u) -> complex:
    return complex((u @ (K @ u)) / (u @ (M @ u)))


@dataclass
class TruncatedProblem:
    """Truncated Ω(ε) mesh carrying both the base and the extended absorber."""

    spec: ResonatorSpec
    mesh: Mesh
    base: Mesh
    pml: PMLConfig
    order: int = 2


def truncated_problem(
    spec: ResonatorSpec,
    lam: float,
    h: float,
    neck_layers: int = 8,
    order: int = 2,
    h_exterior: Optional[float] = None,
    grading: float = 0.3,
    inner: Optional[float] = None,
    thickness: Optional[float] = None,
    sigma0: Optional[float] = None,
) -> TruncatedProblem:
    """Mesh out to r₀ + 1.5d with a conforming circle at r₀ + d.

    The base problem is the submesh inside r₀ + d so that all layer variants
    share the interior triangulation.
    """
    pml = PMLConfig.for_wavenumber(spec, lam, inner, thickness, sigma0)
    wavelength = 2 * np.pi / np.sqrt(lam)
    h_ext = min(wavelength / 8.0, pml.thickness / 6.0) if h_exterior is None else h_exterior
    layout = PMLLayout(pml.inner, pml.thickness, D_EXTENSION)
    mesh = triangulate(
        spec, h, neck_layers, domain="truncated", h_exterior=h_ext, grading=grading,
        pml=layout, extra_circles=(pml.outer,),
    )
    cx, cy = pml.center
    centroids = mesh.centroids()
    inside = np.hypot(centroids[:, 0] - cx, centroids[:, 1] - cy) < pml.outer
    base = mesh.submesh(inside, boundary_tag=ABSORBER_OUTER)
    logger.info("truncated mesh: %d triangles (%d in the base problem)", mesh.n_triangles, base.n_triangles)
    return TruncatedProblem(spec, mesh, base, pml, order)


def _solve_state(mesh: Mesh, pml: PMLConfig, seed: complex, window: float, order: int,
                 center: Optional[float] = None, probe=(-0.1, 0.0)):
    K, M = assemble_absorbing(mesh, pml, seed, order)
    rhos, vecs = complex_eigs(K.matrix, M.matrix, seed)
    center = seed if center is None else center
    if abs(rhos[0] - center) >= window:
        raise ResonanceNotFound(
            f"no resonance within {window:.4g} of {center:.8g} (nearest {rhos[0]:.8g})",
            {"nearest": [rhos[0].real, rhos[0].imag], "center": center, "window": window},
        )
    u = vecs[:, 0]
    rho = _rayleigh(K.matrix, M.matrix, u)
    Mu = M.matrix @ u
    residual = float(np.linalg.norm(K.matrix @ u - rho * Mu) / np.linalg.norm(Mu))

    full = K.expand(u)
    closed = np.nonzero(np.isin(mesh.regions, (CAVITY, NECK)))[0]
    M_closed = region_mass(K.dofmap, closed)
    norm2 = float(np.real(np.vdot(full, M_closed @ full)))
    full = full / np.sqrt(norm2)
    square = complex(full @ (M_closed @ full))
    full = full * np.exp(-0.5j * np.angle(square))
    field_ = DiscreteField(K.dofmap, full)
    try:
        if field_.evaluate(np.array([probe]))[0].real < 0:
            field_ = field_.with_values(-full)
    except AssemblyError:
        logger.debug("probe %s outside the mesh, sign left as computed", probe)
    alpha = complex(field_.values @ (M.full @ field_.values))
    return rho, field_, alpha, residual


def find_resonance(
    problem: TruncatedProblem,
    seed: float,
    window: float,
    variants: bool = True,
    lam0: Optional[float] = None,
) -> ResonantState:
    """Resonance of the truncated resonator nearest ``seed``.

    Args:
        problem: truncated mesh and absorber.
        seed: starting point, normally λ_ε or λ₀.
        window: half the cavity spectral gap at λ₀.
        variants: recompute with σ₀×0.5, σ₀×2 and d×1.5 and record the spread.
        lam0: centre of the acceptance window; ``seed`` when omitted.

    Returns:
        ResonantState: normalized on 𝒞(ε), phase-fixed, with robustness data.
        A root with Im ρ ≥ 0 is flagged ``not_outgoing``.
    """
    center = seed if lam0 is None else lam0
    rho, field_, alpha, residual = _solve_state(problem.base, problem.pml, seed, window, problem.order, center)
    state = ResonantState(rho, field_, alpha, residual, eps=problem.spec.eps, lam0=center, pml=problem.pml)
    if rho.imag >= 0:
        state.flags.append("not_outgoing")
        logger.warning("eps=%.3f: Im rho = %.3e is not negative", state.eps, rho.imag)
    if variants:
        for name, pml in problem.pml.variants().items():
            mesh = problem.mesh if name == "thick" else problem.base
            state.variants[name] = _solve_state(mesh, pml, rho, window, problem.order, center)[0]
        state.spread = max(abs(v - rho) for v in state.variants.values()) / max(abs(rho.imag), 1e-300)
        if state.spread >= SPREAD_LIMIT:
            state.flags.append("pml_untrusted")
            logger.warning("eps=%.3f: absorber spread %.3g of |Im rho|", state.eps, state.spread)
    logger.info("eps=%.3f rho=%.12g%+.6ei alpha=%.6g%+.2ei", state.eps, rho.real, rho.imag, alpha.real, alpha.imag)
    return state


# --- one-dimensional oracle -----------------------------------------------------------


@dataclass(frozen=True)
class Barrier:
    height: float
    start: float
    stop: float


def _transfer(z: complex, barriers: Sequence[Barrier]) -> Tuple[complex, complex, float]:
    """(u(X), u'(X)) for u(0) = 0, u'(0) = 1, propagated through the barriers."""
    state = np.array([0.0, 1.0], dtype=complex)
    x = 0.0
    pieces = []
    for b in sorted(barriers, key=lambda b: b.start):
        if b.start > x:
            pieces.append((0.0, b.start - x))
        pieces.append((b.height, b.stop - b.start))
        x = b.stop
    for V, length in pieces:
        q = np.sqrt(complex(z) - V)
        c, s = np.cos(q * length), np.sin(q * length)
        sinc = s / q if q != 0 else length
        state = np.array([[c, sinc], [-q * s, c]]) @ state
    return state[0], state[1], x


def oracle_1d(barriers: Sequence[Barrier], seeds: Sequence[complex], tol: float = 1e-12) -> List[complex]:
    """Resonances of −u″ + Vu = zu on (0, ∞), u(0) = 0, outgoing past the barriers.

    Roots of F(z) = u′(X) − i√z u(X) by complex Newton (secant) from each seed.
    """
    def F(z):
        u, du, _ = _transfer(z, barriers)
        return (du - 1j * np.sqrt(complex(z)) * u) / (1.0 + abs(u))

    roots = []
    for seed in seeds:
        try:
            z = complex(newton(F, complex(seed), tol=1e-15, maxiter=200))
        except RuntimeError as err:
            raise ResonanceNotFound(f"Newton did not converge from {seed}: {err}") from err
        if abs(F(z)) > tol or not np.isfinite(z):
            raise ResonanceNotFound(f"Newton from {seed} stopped at {z} with |F| = {abs(F(z)):.2e}")
        roots.append(z)
    return roots


def absorbing_1d(
    barriers: Sequence[Barrier],
    seed: complex,
    h: float = 2e-4,
    gap: float = 0.5,
    thickness: float = 2.0,
    sigma0: float = 10.0,
) -> complex:
    """The same 1D problem with a complex layer after the barriers, P1 elements."""
    X = max(b.stop for b in barriers)
    x0 = X + gap
    breaks = sorted({0.0, *(b.start for b in barriers), *(b.stop for b in barriers), x0, x0 + thickness})
    nodes = [np.array([0.0])]
    for a, b in zip(breaks[:-1], breaks[1:]):
        n = max(1, int(np.ceil((b - a) / h)))
        nodes.append(np.linspace(a, b, n + 1)[1:])
    x = np.concatenate(nodes)
    mid = 0.5 * (x[1:] + x[:-1])
    le = np.diff(x)
    V = np.zeros_like(mid)
    for b in barriers:
        V[(mid > b.start) & (mid < b.stop)] = b.height
    s = 1.0 + 1j * sigma0 * np.clip((mid - x0) / thickness, 0.0, None) ** 2
    n = len(x)
    k_loc = (1.0 / (s * le))[:, None, None] * np.array([[1.0, -1.0], [-1.0, 1.0]])
    m_loc = (s * le / 6.0)[:, None, None] * np.array([[2.0, 1.0], [1.0, 2.0]])
    rows = np.stack([np.arange(n - 1), np.arange(n - 1), np.arange(1, n), np.arange(1, n)], axis=1)
    cols = np.stack([np.arange(n - 1), np.arange(1, n), np.arange(n - 1), np.arange(1, n)], axis=1)
    K = sp.coo_matrix(((k_loc + V[:, None, None] * m_loc).reshape(-1, 4).ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))
    M = sp.coo_matrix((m_loc.reshape(-1, 4).ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))
    free = np.arange(1, n - 1)
    K = K.tocsr()[free][:, free]
    M = M.tocsr()[free][:, free]
    rho, _ = complex_eigs(K, M, seed, count=3)
    return complex(rho[0])


ORACLE_CASES = {
    "reference": (Barrier(10.0, 1.0, 1.5),),
    "single": (Barrier(50.0, 1.0, 1.2),),
    "thin": (Barrier(30.0, 1.0, 1.1),),
    "double": (Barrier(40.0, 1.0, 1.3), Barrier(20.0, 2.0, 2.1)),
}

# barrier heights are scaled down through these factors to reach the lowest resonance
HEIGHT_SCALES = (20.0, 10.0, 5.0, 2.5, 1.5, 1.0)


def lowest_resonance(barriers: Sequence[Barrier], scales: Sequence[float] = HEIGHT_SCALES) -> complex:
    """Resonance of the inner well, followed down from strongly scaled barriers.

    Behind tall barriers the lowest resonance sits just below π² with a tiny
    width, where Newton from π² cannot miss it.
    """
    z = complex(np.pi**2 - 0.01j)
    for s in scales:
        z = oracle_1d(tuple(replace(b, height=b.height * s) for b in barriers), [z])[0]
    return z


def decoupling_limit(
    heights: Sequence[float] = (10.0, 1e2, 1e3, 1e4, 1e5), start: float = 1.0, stop: float = 1.5
) -> pd.DataFrame:
    """Lowest resonance of one barrier on [start, stop] as its height grows.

    Re ρ tends to π² (the Dirichlet eigenvalue of the inner interval) and
    Im ρ to 0. Heights are visited from the tallest down.
    """
    rows = []
    z = complex(np.pi**2 - 0.01j)
    for height in sorted(heights, reverse=True):
        z = oracle_1d((Barrier(height, start, stop),), [z])[0]
        rows.append({"height": height, "re": z.real, "im": z.imag, "shift": abs(z.real - np.pi**2)})
    return pd.DataFrame(rows).sort_values("height", ignore_index=True)


def oracle_comparison(cases: Optional[Dict[str, Sequence[Barrier]]] = None, h: float = 2e-4) -> pd.DataFrame:
    """Absorbing-layer resonances against the lowest transfer-matrix root of each case."""
    rows = []
    for name, barriers in (cases or ORACLE_CASES).items():
        exact = lowest_resonance(barriers)
        approx = absorbing_1d(barriers, exact, h=h)
        rows.append({
            "case": name, "oracle_re": exact.real, "oracle_im": exact.imag,
            "layer_re": approx.real, "layer_im": approx.imag,
            "relative_error": abs(approx - exact) / abs(exact),
        })
        logger.info("1D case %s: %.10g%+.3ei vs %.10g%+.3ei", name, exact.real, exact.imag, approx.real, approx.imag)
    return pd.DataFrame(rows)


# --- sweeps ---------------------------------------------------------------------------


@dataclass
class SweepResult:
    table: pd.DataFrame
    slope: float
    intercept: float
    stderr: float
    target: float
    neck_length: float

    @property
    def relative_error(self) -> float:
        return abs(self.slope - self.target) / abs(self.target)

    def trusted_rows(self) -> pd.DataFrame:
        return self.table[self.table["flag"] == ""]


def _row_flags(eps: float, alpha0: float, neck_length: float) -> List[str]:
    return ["precision_floor"] if 2 * alpha0 * neck_length / eps > PRECISION_FLOOR else []


def resonance_row(args) -> Dict:
    """One sweep row: λ₀, λ_ε and ρ(ε) at a single ε (process-pool entry point)."""
    spec, eps, mesh_opts, pml_opts, mode, order = args
    pml_opts = dict(pml_opts)
    variants = pml_opts.pop("variants", True)
    flags = _row_flags(eps, spec.alpha0, spec.neck_length)
    row = {"epsilon": eps, "L": spec.neck_length, "slope_target": -2 * spec.alpha0 * spec.neck_length}
    spec_eps, closed, cavity = closed_problem(spec, eps, mesh_opts["h"], mesh_opts["neck_layers"], order, mesh_opts["grading"])
    u0 = cavity_mode(cavity, mode)
    v = track_eigenvalue(u0, closed)
    row.update(lambda0=u0.eigenvalue, lambda_eps=v.eigenvalue)
    try:
        problem = truncated_problem(
            spec_eps, u0.eigenvalue, mesh_opts["h"], mesh_opts["neck_layers"], order,
            mesh_opts.get("h_exterior"), mesh_opts["grading"], **pml_opts,
        )
        state = find_resonance(problem, v.eigenvalue, 0.5 * u0.gap, variants=variants, lam0=u0.eigenvalue)
        flags += [f for f in state.flags if f not in flags]
        row.update(
            re_rho=state.rho.real, im_rho=state.rho.imag, pml_spread=state.spread,
            alpha_re=state.alpha.real, alpha_im=state.alpha.imag, lifetime=state.lifetime,
        )
    except ResonanceNotFound as err:
        logger.warning("eps=%.3f: %s", eps, err)
        flags.append("not_found")
        row.update(re_rho=np.nan, im_rho=np.nan, pml_spread=np.nan, alpha_re=np.nan, alpha_im=np.nan, lifetime=np.nan)
    im = row["im_rho"]
    row["abs_im"] = abs(im)
    row["eps_ln_im"] = eps * np.log(abs(im)) if np.isfinite(im) and im != 0 else np.nan
    row["flag"] = ";".join(flags)
    return row


def width_sweep(
    spec: ResonatorSpec,
    eps_values: Sequence[float],
    h: float,
    neck_layers: int = 8,
    order: int = 2,
    mode: int = 1,
    h_exterior: Optional[float] = None,
    grading: float = 0.3,
    pml_options: Optional[Dict] = None,
    workers: int = 1,
) -> SweepResult:
    """Resonances over an ε list and the slope of ln|Im ρ| against 1/ε.

    Rows run concurrently when ``workers > 1`` and are merged by ε. Rows
    carrying any of ``EXCLUDED_FLAGS`` stay in the table but are excluded from
    the fit.
    """
    mesh_opts = {"h": h, "neck_layers": neck_layers, "grading": grading, "h_exterior": h_exterior}
    pml_opts = dict(pml_options or {})
    jobs = [(spec, float(eps), mesh_opts, pml_opts, mode, order) for eps in sorted(set(eps_values), reverse=True)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(resonance_row, jobs))
    else:
        rows = [resonance_row(job) for job in jobs]
    table = pd.DataFrame(rows).sort_values("epsilon", ascending=False, ignore_index=True)
    columns = [
        "epsilon", "L", "lambda0", "lambda_eps", "re_rho", "im_rho", "abs_im", "eps_ln_im",
        "slope_target", "pml_spread", "alpha_re", "alpha_im", "lifetime", "flag",
    ]
    table = table[columns]
    fit_rows = table[table["flag"].apply(lambda f: not any(x in f.split(";") for x in EXCLUDED_FLAGS))]
    fit_rows = fit_rows[fit_rows["im_rho"] < 0]
    if len(fit_rows) < 3:
        raise FitRefused(
            f"only {len(fit_rows)} unflagged rows, at least 3 are needed",
            {"flags": table["flag"].tolist()},
        )
    res = linregress(1.0 / fit_rows["epsilon"], np.log(fit_rows["abs_im"]))
    target = -2 * spec.alpha0 * spec.neck_length
    logger.info("width law slope %.4f, target %.4f (%d rows)", res.slope, target, len(fit_rows))
    return SweepResult(table, float(res.slope), float(res.intercept), float(res.stderr), target, spec.neck_length)


def slope_ratio(short: SweepResult, long: SweepResult) -> float:
    """Ratio of fitted slopes; the width law predicts L_long/L_short."""
    return long.slope / short.slope


# --- neck profile ---------------------------------------------------------------------


@dataclass
class DecayProfile:
    stations: np.ndarray
    coefficients: np.ndarray
    rate: float
    target: float
    stderr: float

    @property
    def relative_error(self) -> float:
        return abs(self.rate - self.target) / abs(self.target)


def neck_decay_profile(
    field_: DiscreteField,
    spec,
    window: Tuple[float, float] = (0.25, 0.75),
    stations: int = 16,
    y_center: float = 0.0,
) -> DecayProfile:
    """Axial decay rate of the transverse ground-mode coefficient in the neck.

    c(x) = ∫ u(x, y) √(2/ε) cos(π(y − y_c)/ε) dy by 16-point Gauss–Legendre on
    each transect; ln|c| is fitted against x over ``window`` (fractions of L).
    The target is −α₀/ε.
    """
    eps, length = spec.eps, spec.neck_length
    xs = np.linspace(window[0] * length, window[1] * length, stations)
    if np.any(field_.mesh.regions == NECK):
        counts = neck_transect_counts(field_.mesh, xs)
        if counts.min() < 8:
            raise MeshError(f"neck under-resolved: {int(counts.min())} elements across a transect")
    nodes, weights = leggauss(16)
    ys = y_center + 0.5 * eps * nodes
    mode = np.sqrt(2.0 / eps) * np.cos(np.pi * (ys - y_center) / eps)
    points = np.array([(x, y) for x in xs for y in ys])
    values = field_.evaluate(points).reshape(len(xs), len(ys))
    coeff = 0.5 * eps * values @ (weights * mode)
    res = linregress(xs, np.log(np.abs(coeff)))
    return DecayProfile(xs, coeff, float(res.slope), -spec.alpha0 / eps, float(res.stderr))

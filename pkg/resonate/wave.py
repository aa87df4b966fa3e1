"""Time-domain evolution and resonant decay.

The wave equation is discretized with P1 elements, a lumped mass and the
leapfrog scheme. Outside ``r₀`` the truncated domain is damped by a sponge
term whose profile follows the absorbing layer of the resonance solver.
Initial data are spectrally localized near λ₀ with a Chebyshev filter.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.fft import dct
from scipy.linalg import cosm, eigh, expm, sinm, sqrtm
from scipy.sparse.linalg import eigsh
from scipy.stats import linregress

from resonate.errors import CFLViolation, ConfigError, FilterError, FitRefused, NumericalGuardError
from resonate.fem import DofMap, SparseOperator, assemble, lumped_mass, region_matrices
from resonate.mesh import ABSORBER, CAVITY, NECK, Mesh
from resonate.resonance import find_resonance, truncated_problem
from resonate.spectra import cavity_mode, closed_problem, track_eigenvalue

logger = logging.getLogger(__name__)

CFL_SAFETY = 0.98
ENERGY_FLOOR = 1e-20


# --- smooth profiles -----------------------------------------------------------------


def _smooth_step(t: np.ndarray) -> np.ndarray:
    """C∞ step from 0 (t ≤ 0) to 1 (t ≥ 1) built from exp(−1/t)."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class SpectralWindow:
    """ψ = 1 on [plateau_lo, plateau_hi], 0 outside (lo, hi), smooth between."""

    lo: float
    plateau_lo: float
    plateau_hi: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.plateau_lo <= self.plateau_hi < self.hi:
            raise ConfigError("window needs lo < plateau_lo <= plateau_hi < hi", {"window": [self.lo, self.plateau_lo, self.plateau_hi, self.hi]})
        if self.lo <= 0:
            raise ConfigError("window must be supported in (0, inf)", {"lo": self.lo})

    @classmethod
    def around(cls, center: float, gap: float, width: float = 0.25) -> "SpectralWindow":
        """Plateau of half-width ``width·gap`` around ``center``, support twice as wide."""
        w = width * gap
        return cls(center - 2 * w, center - w, center + w, center + 2 * w)

    def __call__(self, lam: np.ndarray) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        up = _smooth_step((lam - self.lo) / (self.plateau_lo - self.lo))
        down = _smooth_step((self.hi - lam) / (self.hi - self.plateau_hi))
        return up * down


@dataclass(frozen=True)
class Cutoff:
    """Radial χ: 1 for r ≤ inner, 0 for r ≥ outer."""

    center: Tuple[float, float]
    inner: float
    outer: float

    def __call__(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        r = np.hypot(p[:, 0] - self.center[0], p[:, 1] - self.center[1])
        return 1.0 - _smooth_step((r - self.inner) / (self.outer - self.inner))


def smooth_cutoff(spec, absorber_start: float) -> Tuple[Cutoff, Cutoff]:
    """Two nested admissible cutoffs between the envelope and the absorber."""
    rb = spec.envelope.radius
    gap = absorber_start - rb
    c = tuple(spec.envelope.center)
    return (
        Cutoff(c, rb + 0.25 * gap, rb + 0.75 * gap),
        Cutoff(c, rb + 0.1 * gap, rb + 0.5 * gap),
    )


# --- discrete system -----------------------------------------------------------------


@dataclass(eq=False)
class WaveSystem:
    """Lumped P1 system M ü + C u̇ + K u = 0 on the free dofs."""

    K: SparseOperator
    mass: np.ndarray
    damping: np.ndarray
    local_K: Optional[sp.csr_matrix] = None
    local_mass: Optional[np.ndarray] = None
    _lam_max: Optional[float] = field(default=None, repr=False)

    @property
    def dofmap(self) -> DofMap:
        return self.K.dofmap

    @property
    def closed(self) -> bool:
        return not np.any(self.damping > 0)

    def apply(self, u: np.ndarray) -> np.ndarray:
        """P u = M_L⁻¹ K u."""
        return (self.K.matrix @ u) / self.mass

    def lambda_max(self) -> float:
        if self._lam_max is None:
            d = 1.0 / np.sqrt(self.mass)
            A = sp.diags(d) @ self.K.matrix @ sp.diags(d)
            value = eigsh(A, k=1, which="LA", return_eigenvectors=False, v0=np.ones(A.shape[0]))
            self._lam_max = float(value[0])
        return self._lam_max

    def cfl_limit(self, safety: float = CFL_SAFETY) -> float:
        return safety * 2.0 / np.sqrt(self.lambda_max())

    def energy(self, u: np.ndarray, u_next: np.ndarray, dt: float, local: bool = False) -> float:
        """Staggered energy at t_{n+½}: exactly conserved without damping."""
        v = (u_next - u) / dt
        if local:
            m, K = self.local_mass, self.local_K
            return float(0.5 * v @ (m * v) + 0.25 * (u @ (K @ u) + u_next @ (K @ u_next)))
        return float(0.5 * v @ (self.mass * v) + 0.5 * u_next @ (self.K.matrix @ u))

    def restrict(self, values: np.ndarray) -> np.ndarray:
        return self.K.restrict(values)

    def expand(self, values: np.ndarray) -> np.ndarray:
        return self.K.expand(values)


def wave_system(
    mesh: Mesh,
    damping: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    local: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> WaveSystem:
    """Assemble the lumped wave system on a mesh, Dirichlet on its boundary.

    Args:
        mesh: closed or truncated mesh.
        damping: sponge coefficient γ(x), evaluated at the vertices of
            absorber triangles; zero elsewhere.
        local: cutoff χ; triangles with χ = 1 at all corners form the
            region of the local energy.
    """
    K, M = assemble(mesh, order=1, natural=())
    mass = lumped_mass(M)
    gamma = np.zeros(mesh.n_vertices)
    if damping is not None:
        absorber = np.unique(mesh.triangles[mesh.regions == ABSORBER])
        gamma[absorber] = damping(mesh.vertices[absorber])
    system = WaveSystem(K, mass, K.restrict(gamma) * mass)
    if local is not None:
        inside = np.all(local(mesh.vertices)[mesh.triangles] >= 1.0 - 1e-12, axis=1)
        Kl, Ml = region_matrices(K.dofmap, np.nonzero(inside)[0])
        f = K.free
        system.local_K = Kl[f][:, f].tocsr()
        system.local_mass = np.asarray(Ml.sum(axis=1)).ravel()[f]
    return system


# --- spectral filter ------------------------------------------------------------------


@dataclass
class FilterResult:
    values: np.ndarray
    degree: int
    tail: float
    lam_max: float


def chebyshev_coefficients(fn: Callable[[np.ndarray], np.ndarray], degree: int) -> np.ndarray:
    """Coefficients of the degree-``degree`` Chebyshev interpolant of fn on [−1, 1]."""
    j = np.arange(degree + 1)
    nodes = np.cos(np.pi * (j + 0.5) / (degree + 1))
    c = dct(fn(nodes), type=2) / (degree + 1)
    c[0] *= 0.5
    return c


def _sampling_degree(psi, lam_max: float, start_degree: int) -> int:
    """Smallest doubling of ``start_degree`` whose nodes fall at least twice in supp ψ."""
    lo, hi = getattr(psi, "lo", None), getattr(psi, "hi", None)
    degree = start_degree
    if lo is None or hi is None:
        return degree
    # widest node gap on [0, λmax] is about (λmax/2)·π/(n + 1)
    needed = np.pi * lam_max / (hi - lo)
    while degree + 1 < needed:
        degree *= 2
    return degree


def spectral_filter(
    f: np.ndarray,
    psi: Callable[[np.ndarray], np.ndarray],
    system: WaveSystem,
    tol: float = 1e-6,
    max_degree: int = 8192,
    start_degree: int = 256,
) -> FilterResult:
    """ψ(P) f by a Chebyshev expansion of ψ on [0, λ_max].

    The first degree samples the support of ψ at least twice. The degree then
    doubles until the coefficient tail falls below ``tol``; an expansion that
    is identically zero never counts as converged, and a degree above
    ``max_degree`` raises :class:`FilterError`.
    """
    lam_max = 1.01 * system.lambda_max()
    g = lambda x: psi(0.5 * lam_max * (x + 1.0))
    degree = _sampling_degree(psi, lam_max, start_degree)
    tail = float("inf")
    while True:
        if degree > max_degree:
            raise FilterError(
                f"Chebyshev filter did not converge below degree {max_degree} (tail {tail:.2e})",
                {"tail": tail, "lam_max": lam_max, "degree": degree},
            )
        c = chebyshev_coefficients(g, degree)
        scale = float(np.max(np.abs(c)))
        tail = float(np.max(np.abs(c[-max(8, degree // 8):])))
        if scale > 0 and tail <= tol * max(1.0, scale):
            break
        degree *= 2
    f = np.asarray(f, dtype=float)
    # x = 2P/λmax − 1
    A = lambda v: 2.0 * system.apply(v) / lam_max - v
    t_prev, t_cur = f, A(f)
    out = c[0] * t_prev + c[1] * t_cur
    for k in range(2, len(c)):
        t_prev, t_cur = t_cur, 2.0 * A(t_cur) - t_prev
        out += c[k] * t_cur
    logger.info("spectral filter: degree %d, tail %.2e, lambda_max %.4g", degree, tail, lam_max)
    return FilterResult(out, degree, tail, lam_max)


@dataclass
class WavePacket:
    f0: np.ndarray
    f1: np.ndarray
    psi: Optional[SpectralWindow] = None
    chi: Optional[Cutoff] = None
    degree: int = 0

    @classmethod
    def filtered(cls, system: WaveSystem, f0, f1, psi: SpectralWindow, tol: float = 1e-6,
                 max_degree: int = 8192, chi: Optional[Cutoff] = None) -> "WavePacket":
        r0 = spectral_filter(f0, psi, system, tol, max_degree)
        g1 = spectral_filter(f1, psi, system, tol, max_degree).values if np.any(f1) else np.zeros_like(r0.values)
        return cls(r0.values, g1, psi, chi, r0.degree)


# --- time stepping ---------------------------------------------------------------------


@dataclass
class Trajectory:
    times: np.ndarray
    energy: np.ndarray
    local_energy: np.ndarray
    probes: np.ndarray
    dt: float
    steps: int
    final: np.ndarray

    def table(self) -> pd.DataFrame:
        data = {"t": self.times, "energy": self.energy, "local_energy": self.local_energy}
        if self.probes.size:
            data["probe"] = self.probes
        return pd.DataFrame(data)


def leapfrog(
    K: sp.spmatrix,
    mass: np.ndarray,
    damping: np.ndarray,
    u0: np.ndarray,
    v0: np.ndarray,
    dt: float,
    steps: int,
    observe: Callable[[int, np.ndarray, np.ndarray], None],
) -> np.ndarray:
    """(M + dt C/2)u⁺ = 2Mu − (M − dt C/2)u⁻ − dt² K u; calls observe(n, u_n, u_{n+1})."""
    u_prev = u0
    u = u0 + dt * v0 - 0.5 * dt**2 * (K @ u0 + damping * v0) / mass
    plus = mass + 0.5 * dt * damping
    minus = mass - 0.5 * dt * damping
    observe(0, u_prev, u)
    for n in range(1, steps):
        u_next = (2.0 * mass * u - minus * u_prev - dt**2 * (K @ u)) / plus
        u_prev, u = u, u_next
        observe(n, u_prev, u)
    return u


def evolve(
    packet: WavePacket,
    system: WaveSystem,
    T: float,
    dt: Optional[float] = None,
    samples: int = 400,
    probe: Optional[np.ndarray] = None,
    cfl: float = CFL_SAFETY,
) -> Trajectory:
    """Evolve the packet to time ``T`` and sample energies at ``samples`` instants.

    Args:
        packet: initial displacement and velocity on the free dofs.
        system: lumped system.
        T: final time.
        dt: time step, at most the CFL limit; defaults to it.
        samples: number of recorded instants.
        probe: weights w for a recorded scalar w·u(t).

    Returns:
        Trajectory: sampled total and local energies.
    """
    limit = system.cfl_limit(cfl)
    if dt is None:
        dt = limit
    elif dt > 2.0 / np.sqrt(system.lambda_max()):
        raise CFLViolation(f"time step {dt:.4g} exceeds the stability limit {limit / cfl:.4g}", {"dt": dt, "limit": limit})
    steps = max(1, int(np.ceil(T / dt)))
    stride = max(1, steps // samples)
    record: List[Tuple[float, float, float, float]] = []
    has_local = system.local_K is not None

    def observe(n, u, u_next):
        if n % stride:
            return
        e = system.energy(u, u_next, dt)
        el = system.energy(u, u_next, dt, local=True) if has_local else e
        pv = float(probe @ u_next) if probe is not None else np.nan
        record.append(((n + 0.5) * dt, e, el, pv))

    final = leapfrog(system.K.matrix, system.mass, system.damping, packet.f0, packet.f1, dt, steps, observe)
    arr = np.array(record)
    logger.info("evolved %d steps of dt=%.4g to T=%.4g", steps, dt, steps * dt)
    return Trajectory(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3] if probe is not None else np.zeros(0), dt, steps, final)


def energy_drift(system: WaveSystem, f0: np.ndarray, f1: Optional[np.ndarray] = None,
                 steps: int = 1000, cfl: float = CFL_SAFETY) -> float:
    """Largest relative change of the total energy over ``steps`` leapfrog steps."""
    dt = system.cfl_limit(cfl)
    packet = WavePacket(f0, np.zeros_like(f0) if f1 is None else f1)
    traj = evolve(packet, system, steps * dt, dt=dt, samples=steps)
    return float(np.max(np.abs(traj.energy - traj.energy[0])) / traj.energy[0])


def dominant_period(times: np.ndarray, signal: np.ndarray) -> float:
    """Mean spacing of upward zero crossings, linearly interpolated."""
    s = np.asarray(signal)
    idx = np.nonzero((s[:-1] < 0) & (s[1:] >= 0))[0]
    if len(idx) < 2:
        raise NumericalGuardError("signal has fewer than two upward zero crossings")
    t = times[idx] - s[idx] * (times[idx + 1] - times[idx]) / (s[idx + 1] - s[idx])
    return float((t[-1] - t[0]) / (len(t) - 1))


# --- decay fit -----------------------------------------------------------------------


@dataclass
class DecayFit:
    rate: float
    amplitude: float
    residual: float
    start: float
    stop: float
    points: int
    target: float = float("nan")

    @property
    def relative_error(self) -> float:
        return abs(self.rate - self.target) / abs(self.target)


def decay_fit(
    times: np.ndarray,
    energy: np.ndarray,
    transient: float = 0.2,
    floor: float = ENERGY_FLOOR,
    target: float = float("nan"),
) -> DecayFit:
    """Fit ln E = ln A − r t after the transient and above the precision floor."""
    times, energy = np.asarray(times), np.asarray(energy)
    start = times[0] + transient * (times[-1] - times[0])
    above = energy > floor * energy[0]
    cut = np.argmin(above) if not above.all() else len(energy)
    window = (times >= start) & (np.arange(len(times)) < cut)
    if window.sum() < 5:
        raise FitRefused(
            "local energy reaches the precision floor before the fit window",
            {"start": float(start), "floor_time": float(times[min(cut, len(times) - 1)])},
        )
    res = linregress(times[window], np.log(energy[window]))
    pred = res.intercept + res.slope * times[window]
    rms = float(np.sqrt(np.mean((np.log(energy[window]) - pred) ** 2)))
    return DecayFit(-float(res.slope), float(np.exp(res.intercept)), rms, float(times[window][0]),
                    float(times[window][-1]), int(window.sum()), target)


# --- resonant projection -------------------------------------------------------------


@dataclass
class Projection:
    coefficient: complex
    field: np.ndarray


def pi_projection(f: np.ndarray, u: np.ndarray, alpha: complex, chi: np.ndarray, mass: np.ndarray,
                  normalization: str = "alpha") -> Projection:
    """Π^χ f = α⁻¹⟨f, χū⟩χu with the bilinear pairing weighted by ``mass``.

    ``normalization="w"`` uses w = α^{−1/2}u and ⟨f, χw̄⟩χw, which is the same
    operator.
    """
    if abs(alpha) < 1e-12:
        raise NumericalGuardError("alpha is too close to zero for the resonant projection", {"alpha": abs(alpha)})
    if normalization == "w":
        w = u / np.sqrt(complex(alpha))
        c = complex(np.sum(mass * f * chi * w))
        return Projection(c * np.sqrt(complex(alpha)), c * chi * w)
    c = complex(np.sum(mass * f * chi * u)) / complex(alpha)
    return Projection(c, c * chi * u)


# --- closed-domain cross checks -------------------------------------------------------


def propagator_forms(K: np.ndarray, M: np.ndarray, t: float, f0: np.ndarray, f1: np.ndarray) -> Dict[str, float]:
    """Discrepancies between equivalent forms of the closed-domain propagators.

    With S = M^{-1/2} K M^{-1/2}: cos(t√S) against Re e^{−it√S} and against
    the eigen-expansion, sin(t√S)S^{-1/2} against −Im(e^{−it√S})S^{-1/2},
    and the evolution cos(t√P)f₀ + sin(t√P)P^{-1/2}f₁ from both.
    """
    lam, phi = eigh(K, M)
    Mh = np.real(sqrtm(M))
    Mih = np.linalg.inv(Mh)
    S = Mih @ K @ Mih
    S = 0.5 * (S + S.T)
    root = np.real(sqrtm(S))
    A_op = cosm(t * root)
    E = expm(-1j * t * root)
    inv_root = np.linalg.inv(root)
    B_op = sinm(t * root) @ inv_root
    # eigen-expansion in the symmetric frame: ψ_j = M^{1/2} φ_j
    Q = Mh @ phi
    k = np.sqrt(lam)
    A_eig = (Q * np.cos(t * k)) @ Q.T
    B_eig = (Q * (np.sin(t * k) / k)) @ Q.T
    evo_eig = phi @ (np.cos(t * k) * (phi.T @ (M @ f0)) + np.sin(t * k) / k * (phi.T @ (M @ f1)))
    evo_op = Mih @ (A_op @ (Mh @ f0) + B_op @ (Mh @ f1))
    scale = max(1.0, float(np.max(np.abs(evo_op))))
    return {
        "cos_vs_exp": float(np.max(np.abs(A_op - np.real(E)))),
        "sin_vs_exp": float(np.max(np.abs(B_op + np.imag(E) @ inv_root))),
        "cos_vs_eig": float(np.max(np.abs(A_op - A_eig))),
        "sin_vs_eig": float(np.max(np.abs(B_op - B_eig))),
        "evolution": float(np.max(np.abs(evo_eig - evo_op)) / scale),
    }


# --- one-dimensional reflection test --------------------------------------------------


@dataclass
class Reflection:
    absorbed: float
    reflected: float


def reflection_1d(
    length: float = 2.0,
    thickness: float = 2.0,
    gamma0: float = 20.0,
    width: float = 0.05,
    h: float = 2e-3,
    start: float = 1.0,
) -> Reflection:
    """Right-moving Gaussian pulse on (0, length) entering a quadratic sponge.

    The reflected fraction is the largest energy found back in the undamped
    interval after the pulse has left it, relative to the initial energy.
    """
    n = int(np.ceil((length + thickness) / h))
    x = np.linspace(0.0, length + thickness, n + 1)
    h = x[1] - x[0]
    inner = x[1:-1]
    m = np.full(len(inner), h)
    K = sp.diags(
        [np.full(len(inner) - 1, -1.0 / h), np.full(len(inner), 2.0 / h), np.full(len(inner) - 1, -1.0 / h)],
        [-1, 0, 1],
        format="csr",
    )
    gamma = gamma0 * np.clip((inner - length) / thickness, 0.0, None) ** 2
    u0 = np.exp(-0.5 * ((inner - start) / width) ** 2)
    v0 = (inner - start) / width**2 * u0
    dt = CFL_SAFETY * h
    t_exit = (length - start) + 10 * width
    T = t_exit + 2 * thickness + length
    steps = int(np.ceil(T / dt))
    nodes = inner < length
    cells = x[1:] <= length
    energies = {"initial": 0.0, "returned": 0.0}

    def interior(u, u_next):
        v = (u_next - u) / dt
        pad = lambda w: np.concatenate([[0.0], w, [0.0]])
        g0, g1 = np.diff(pad(u)) / h, np.diff(pad(u_next)) / h
        return 0.5 * h * np.sum(v[nodes] ** 2) + 0.25 * h * np.sum(g0[cells] ** 2 + g1[cells] ** 2)

    def observe(step, u, u_next):
        if step == 0:
            energies["initial"] = interior(u, u_next)
        elif (step + 0.5) * dt >= t_exit:
            energies["returned"] = max(energies["returned"], interior(u, u_next))

    leapfrog(K, m, gamma * m, u0, v0, dt, steps, observe)
    reflected = energies["returned"] / energies["initial"]
    logger.info("1D sponge: reflected energy fraction %.3e", reflected)
    return Reflection(1.0 - reflected, reflected)


# --- experiment ----------------------------------------------------------------------


@dataclass
class WaveResult:
    table: pd.DataFrame
    fit: DecayFit
    nested_fit: DecayFit
    coefficient: complex
    predicted_amplitude: float
    rho: complex
    filter_degree: int

    @property
    def amplitude_error(self) -> float:
        return abs(self.fit.amplitude - self.predicted_amplitude) / self.predicted_amplitude

    def summary(self) -> Dict:
        return {
            "rate": self.fit.rate,
            "target_rate": self.fit.target,
            "rate_error": self.fit.relative_error,
            "nested_rate": self.nested_fit.rate,
            "amplitude": self.fit.amplitude,
            "predicted_amplitude": self.predicted_amplitude,
            "amplitude_error": self.amplitude_error,
            "re_rho": self.rho.real,
            "im_rho": self.rho.imag,
            "filter_degree": self.filter_degree,
        }


def wave_experiment(
    spec,
    eps: float,
    h: float,
    neck_layers: int = 8,
    mode: int = 1,
    periods: float = 40.0,
    window: float = 0.25,
    offset: float = 0.0,
    filter_tol: float = 1e-6,
    max_degree: int = 8192,
    transient: float = 0.2,
    floor: float = ENERGY_FLOOR,
    samples: int = 400,
    cfl: float = CFL_SAFETY,
) -> WaveResult:
    """Decay of resonant initial data on the truncated resonator.

    f₀ is the real part of the resonant state on 𝒞(ε), filtered by ψ
    centred at λ₀ + offset·gap; f₁ = 0. The local energy is normalized as
    2E/Re ρ so that its intercept compares with |Π^χ coefficient|².
    """

    spec_eps, closed, cavity = closed_problem(spec, eps, h, neck_layers)
    u0 = cavity_mode(cavity, mode)
    v = track_eigenvalue(u0, closed)
    problem = truncated_problem(spec_eps, u0.eigenvalue, h, neck_layers)
    state = find_resonance(problem, v.eigenvalue, 0.5 * u0.gap, variants=False, lam0=u0.eigenvalue)
    mesh = problem.base
    k = np.sqrt(u0.eigenvalue)
    chi, chi_nested = smooth_cutoff(spec_eps, problem.pml.inner)
    sponge = lambda p: k * problem.pml.sigma(np.hypot(p[:, 0] - problem.pml.center[0], p[:, 1] - problem.pml.center[1]))
    system = wave_system(mesh, damping=sponge, local=chi)
    nested = wave_system(mesh, damping=sponge, local=chi_nested)
    nested._lam_max = system.lambda_max()

    u = state.field.values[: mesh.n_vertices]
    in_closed = np.zeros(mesh.n_vertices, dtype=bool)
    in_closed[np.unique(mesh.triangles[np.isin(mesh.regions, (CAVITY, NECK))])] = True
    f0 = system.restrict(np.where(in_closed, np.real(u), 0.0))
    psi = SpectralWindow.around(u0.eigenvalue + offset * u0.gap, u0.gap, window)
    packet = WavePacket.filtered(system, f0, np.zeros_like(f0), psi, filter_tol, max_degree, chi)

    T = periods * 2 * np.pi / k
    traj = evolve(packet, system, T, samples=samples, cfl=cfl)
    traj_nested = evolve(packet, nested, T, samples=samples, cfl=cfl)
    scale = 2.0 / state.rho.real
    target = 2.0 * abs(state.sqrt_rho.imag)
    fit = decay_fit(traj.times, scale * traj.local_energy, transient, floor, target)
    nested_fit = decay_fit(traj_nested.times, scale * traj_nested.local_energy, transient, floor, target)

    chi_values = system.restrict(chi(mesh.vertices))
    proj = pi_projection(packet.f0, system.restrict(u), state.alpha, chi_values, system.mass)
    predicted = abs(proj.coefficient) ** 2
    table = pd.DataFrame(
        {
            "t": traj.times,
            "local_energy": scale * traj.local_energy,
            "projected_amplitude": predicted * np.exp(-target * traj.times),
        }
    )
    logger.info("wave eps=%.3f: rate %.4e vs %.4e, amplitude %.4f vs %.4f",
                eps, fit.rate, target, fit.amplitude, predicted)
    return WaveResult(table, fit, nested_fit, proj.coefficient, predicted, state.rho, packet.degree)

"""Cavity/neck decomposition of the closed resonator and resolvent gluing.

All operators live in the global degree-of-freedom numbering of the closed
mesh 𝒞(ε). The decoupled operator solves the cavity and neck blocks with a
Dirichlet condition on the interface b_ε; its resolvent differs from the
global one by a correction driven by the jump of normal derivatives across
b_ε.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
from numpy.polynomial.legendre import leggauss

from resonate.errors import ConfigError, ContourError, MeshError, SpectrumProximity
from resonate.fem import (
    DiscreteField,
    DofMap,
    Factorization,
    SparseOperator,
    barycentric,
    boundary_mass,
    region_matrices,
)
from resonate.mesh import CAVITY, INTERFACE, NECK, Mesh, refine
from resonate.spectra import RateFit, cavity_mode, closed_problem, dirichlet_eigs

logger = logging.getLogger(__name__)

MIN_DISTANCE = 0.5
FLUXES = ("consistent", "pointwise")


@dataclass
class Block:
    """One block of the decoupled operator: stiffness, mass and its free dofs."""

    name: str
    elements: np.ndarray
    K: sp.csr_matrix
    M: sp.csr_matrix
    free: np.ndarray

    def operators(self, dofmap: DofMap) -> Tuple[SparseOperator, SparseOperator]:
        f = self.free
        return (
            SparseOperator(self.K[f][:, f].tocsr(), self.K, f, dofmap),
            SparseOperator(self.M[f][:, f].tocsr(), self.M, f, dofmap),
        )


@dataclass(eq=False)
class DecomposedDomain:
    mesh: Mesh
    dofmap: DofMap
    cavity: Block
    neck: Block
    K: sp.csr_matrix
    M: sp.csr_matrix
    free: np.ndarray
    interface_edges: np.ndarray
    interface_dofs: np.ndarray
    _factors: Dict = field(default_factory=dict, repr=False)

    @property
    def dimension(self) -> int:
        return len(self.free)

    @property
    def block_dimensions(self) -> Tuple[int, int, int]:
        return len(self.cavity.free), len(self.neck.free), len(self.interface_dofs)

    @property
    def cavity_mesh(self) -> Mesh:
        return self.mesh.submesh([CAVITY])

    @property
    def neck_mesh(self) -> Mesh:
        return self.mesh.submesh([NECK])

    def _factor(self, key: str, A: sp.spmatrix, z: complex) -> Factorization:
        tag = (key, complex(z))
        if tag not in self._factors:
            self._factors[tag] = Factorization(A.tocsc())
        return self._factors[tag]

    def _solve_block(self, block: Block, z: complex, rhs: np.ndarray) -> np.ndarray:
        f = block.free
        A = (block.K[f][:, f] - z * block.M[f][:, f]).astype(np.result_type(z, float))
        return self._factor(block.name, A, z).solve(rhs)

    def resolvent(self, z: complex, f: np.ndarray) -> np.ndarray:
        """R_ε(z) f on 𝒞(ε); ``f`` is a full nodal vector (columns allowed)."""
        return self.solve_functional(z, self.M @ f)

    def solve_functional(self, z: complex, b: np.ndarray) -> np.ndarray:
        """(P_ε − z)⁻¹ applied to a load functional given on all dofs."""
        fr = self.free
        A = (self.K[fr][:, fr] - z * self.M[fr][:, fr]).astype(np.result_type(z, float))
        x = self._factor("global", A, z).solve(np.asarray(b)[fr])
        out = np.zeros((self.dofmap.n_dofs,) + x.shape[1:], dtype=x.dtype)
        out[fr] = x
        return out

    def decoupled_resolvent(self, z: complex, f: np.ndarray) -> np.ndarray:
        """R_D(z) f, vanishing on the interface."""
        f = np.asarray(f)
        parts = []
        for block in (self.cavity, self.neck):
            parts.append((block, self._solve_block(block, z, (block.M @ f)[block.free])))
        dtype = np.result_type(*(p.dtype for _, p in parts))
        out = np.zeros((self.dofmap.n_dofs,) + f.shape[1:], dtype=dtype)
        for block, x in parts:
            out[block.free] = x
        return out

    def interface_residual(self, z: complex, w: np.ndarray, f: np.ndarray) -> np.ndarray:
        """[(K − zM)w − Mf] on interior interface dofs, the flux functional ∫(∂_ν^𝒞 w + ∂_ν^Z w)φ_i."""
        I = self.interface_dofs
        return (self.K[I] @ w) - z * (self.M[I] @ w) - self.M[I] @ f


def _edge_index(mesh: Mesh, edges: np.ndarray) -> np.ndarray:
    uniq, _ = mesh.unique_edges()
    n = mesh.n_vertices
    keys = uniq[:, 0] * n + uniq[:, 1]
    query = np.minimum(edges[:, 0], edges[:, 1]) * n + np.maximum(edges[:, 0], edges[:, 1])
    return np.searchsorted(keys, query)


def decompose(mesh: Mesh, order: int = 2) -> DecomposedDomain:
    """Split a closed-resonator mesh into cavity and neck blocks.

    Args:
        mesh: triangulation of 𝒞(ε) with ``interface_b_eps`` edges tagged.
        order: Lagrange order.

    Returns:
        DecomposedDomain: global and block operators sharing one numbering.
    """
    interface = mesh.tagged(INTERFACE)
    if len(interface) == 0:
        raise MeshError("mesh has no interface edges")
    cav = np.nonzero(mesh.regions == CAVITY)[0]
    neck = np.nonzero(mesh.regions == NECK)[0]
    if len(cav) == 0 or len(neck) == 0 or len(cav) + len(neck) != mesh.n_triangles:
        raise MeshError("closed resonator mesh must consist of cavity and neck triangles only")
    pairs = mesh.edge_triangles()[_edge_index(mesh, interface)]
    if np.any(pairs[:, 1] < 0):
        raise MeshError("interface edge on the mesh boundary")
    sides = np.sort(mesh.regions[pairs], axis=1)
    if np.any(sides[:, 0] != CAVITY) or np.any(sides[:, 1] != NECK):
        raise MeshError("interface edge does not separate cavity from neck")

    dofmap = DofMap(mesh, order)
    wall = dofmap.boundary_dofs(natural=())
    free = np.setdiff1d(np.arange(dofmap.n_dofs), wall)
    iface = np.setdiff1d(np.unique(dofmap.edge_dofs(interface)), wall)
    blocks = []
    for name, elements in (("cavity", cav), ("neck", neck)):
        K, M = region_matrices(dofmap, elements)
        dofs = np.unique(dofmap.cells[elements])
        blocks.append(Block(name, elements, K, M, np.setdiff1d(dofs, np.union1d(wall, iface))))
    K = blocks[0].K + blocks[1].K
    M = blocks[0].M + blocks[1].M
    dd = DecomposedDomain(mesh, dofmap, blocks[0], blocks[1], K.tocsr(), M.tocsr(), free, interface, iface)
    nc, nz, ni = dd.block_dimensions
    if nc + nz + ni != dd.dimension:
        raise MeshError(f"dof accounting failed: {nc} + {nz} + {ni} != {dd.dimension}")
    logger.info("decomposed: cavity %d, neck %d, interface %d dofs", nc, nz, ni)
    return dd


# --- interface jump -------------------------------------------------------------------


@dataclass
class InterfaceJump:
    edges: np.ndarray
    lengths: np.ndarray
    values: np.ndarray
    functional: np.ndarray

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.lengths * np.abs(self.values) ** 2)))


def _trace_basis(s: np.ndarray, order: int) -> np.ndarray:
    if order == 1:
        return np.column_stack([1 - s, s])
    return np.column_stack([(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)])


def _pointwise_jump(dd: DecomposedDomain, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-edge Gauss values of −∂_n w|𝒞 + ∂_n w|Z (n out of the cavity) and their functional."""
    mesh = dd.mesh
    edges = dd.interface_edges
    pairs = mesh.edge_triangles()[_edge_index(mesh, edges)]
    cav_side = np.where(mesh.regions[pairs[:, 0]] == CAVITY, pairs[:, 0], pairs[:, 1])
    neck_side = np.where(mesh.regions[pairs[:, 0]] == CAVITY, pairs[:, 1], pairs[:, 0])
    a, b = mesh.vertices[edges[:, 0]], mesh.vertices[edges[:, 1]]
    tangent = b - a
    lengths = np.linalg.norm(tangent, axis=1)
    n = np.column_stack([tangent[:, 1], -tangent[:, 0]]) / lengths[:, None]
    centroids = mesh.centroids()
    flip = np.einsum("ed,ed->e", n, centroids[neck_side] - centroids[cav_side]) < 0
    n[flip] *= -1

    nodes, weights = leggauss(3)
    s = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights
    field_ = DiscreteField(dd.dofmap, w)
    ne, nq = len(edges), len(s)
    points = (a[:, None, :] + s[None, :, None] * tangent[:, None, :]).reshape(-1, 2)
    values = np.zeros((ne, nq), dtype=np.result_type(w.dtype, float))
    for cells, sign in ((cav_side, -1.0), (neck_side, 1.0)):
        cell = np.repeat(cells, nq)
        grad = field_.cell_gradient(cell, barycentric(mesh, cell, points)).reshape(ne, nq, 2)
        values += sign * np.einsum("eqd,ed->eq", grad, n)
    phi = _trace_basis(s, dd.dofmap.order)
    local = np.einsum("eq,q,qi->ei", values, weights, phi) * lengths[:, None]
    b_full = np.zeros(dd.dofmap.n_dofs, dtype=values.dtype)
    np.add.at(b_full, dd.dofmap.edge_dofs(edges).ravel(), local.ravel())
    return values @ weights, b_full[dd.interface_dofs]


def interface_jump(
    dd: DecomposedDomain, w: np.ndarray, z: complex = 0.0, f: Optional[np.ndarray] = None, flux: str = "consistent"
) -> InterfaceJump:
    """B_int w = −T_𝒞 ∂_ν w|𝒞 + T_Z ∂_ν w|Z on b_ε, ν the outward normal of 𝒞.

    With the consistent flux the jump is read off the residual of the
    equation −Δw − zw = f on both blocks; the pointwise flux evaluates
    elementwise gradients from either side.
    """
    if flux not in FLUXES:
        raise ConfigError(f"flux must be one of {FLUXES}", {"flux": flux})
    w = np.asarray(w)
    f = np.zeros_like(w) if f is None else np.asarray(f)
    edges = dd.interface_edges
    lengths = np.linalg.norm(dd.mesh.vertices[edges[:, 0]] - dd.mesh.vertices[edges[:, 1]], axis=1)
    if flux == "pointwise":
        values, functional = _pointwise_jump(dd, w)
        return InterfaceJump(edges, lengths, values, functional)
    functional = -dd.interface_residual(z, w, f)
    Mb, dofs, local = boundary_mass(dd.dofmap, edges)
    inner = np.isin(dofs, dd.interface_dofs)
    density = np.zeros(len(dofs), dtype=functional.dtype)
    order = np.searchsorted(dd.interface_dofs, dofs[inner])
    Mi = sp.csc_matrix(Mb[inner][:, inner])
    density[inner] = Factorization(Mi).solve(functional[order])
    ge = density[local]
    values = 0.5 * (ge[:, 0] + ge[:, 1]) if dd.dofmap.order == 1 else (ge[:, 0] + ge[:, 1] + 4 * ge[:, 2]) / 6.0
    return InterfaceJump(edges, lengths, values, functional)


# --- resolvent identity ---------------------------------------------------------------


def _check_distance(dd: DecomposedDomain, z: complex, min_distance: float) -> float:
    distances = []
    for name, (K, M) in (
        ("cavity", dd.cavity.operators(dd.dofmap)),
        ("neck", dd.neck.operators(dd.dofmap)),
        ("global", (
            SparseOperator(dd.K[dd.free][:, dd.free].tocsr(), dd.K, dd.free, dd.dofmap),
            SparseOperator(dd.M[dd.free][:, dd.free].tocsr(), dd.M, dd.free, dd.dofmap),
        )),
    ):
        pairs = dirichlet_eigs(K, M, count=min(3, K.dimension - 1), shift=float(np.real(z)), probe=None)
        d = min(abs(z - p.eigenvalue) for p in pairs)
        distances.append(d)
        if d < min_distance:
            raise SpectrumProximity(
                f"z = {z} lies within {d:.3g} of the {name} spectrum",
                {"z": [float(np.real(z)), float(np.imag(z))], "distance": d},
            )
    return min(distances)


def unit_probes(dd: DecomposedDomain, count: int, seed: int) -> np.ndarray:
    """M-normalized random nodal vectors vanishing on the wall."""
    rng = np.random.default_rng(seed)
    X = np.zeros((dd.dofmap.n_dofs, count))
    X[dd.free] = rng.standard_normal((len(dd.free), count))
    norms = np.sqrt(np.einsum("ij,ij->j", X, dd.M @ X))
    return X / norms


def _m_norm(dd: DecomposedDomain, X: np.ndarray) -> np.ndarray:
    return np.sqrt(np.abs(np.einsum("ij,ij->j", np.conj(X), dd.M @ X)))


@dataclass
class DefectReport:
    z: complex
    residuals: np.ndarray
    flux: str

    @property
    def max(self) -> float:
        return float(np.max(self.residuals)) if len(self.residuals) else 0.0


def resolvent_defect(
    dd: DecomposedDomain,
    z: complex,
    f: Optional[np.ndarray] = None,
    probes: int = 10,
    seed: int = 0,
    flux: str = "consistent",
    min_distance: float = MIN_DISTANCE,
) -> DefectReport:
    """Relative defect of R_ε(z) = R_D(z) + R_ε(z) T_𝒞* B_int R_D(z).

    Args:
        dd: decomposed domain.
        z: spectral parameter at distance ``min_distance`` or more from both spectra.
        f: right-hand sides as columns of full nodal vectors; random unit
            vectors when omitted.
        probes: number of random right-hand sides.
        seed: random seed.
        flux: ``"consistent"`` (residual-based) or ``"pointwise"``.

    Returns:
        DefectReport: ‖LHS − RHS‖_M / ‖LHS‖_M per right-hand side.
    """
    _check_distance(dd, z, min_distance)
    F = unit_probes(dd, probes, seed) if f is None else np.asarray(f).reshape(dd.dofmap.n_dofs, -1)
    lhs = dd.resolvent(z, F)
    w = dd.decoupled_resolvent(z, F)
    loads = np.zeros((dd.dofmap.n_dofs, F.shape[1]), dtype=np.result_type(w.dtype, complex))
    for j in range(F.shape[1]):
        loads[dd.interface_dofs, j] = interface_jump(dd, w[:, j], z, F[:, j], flux).functional
    rhs = w + dd.solve_functional(z, loads)
    top, bottom = _m_norm(dd, lhs - rhs), _m_norm(dd, lhs)
    residuals = np.divide(top, bottom, out=np.zeros_like(top), where=bottom > 0)
    logger.info("resolvent defect at z=%s (%s flux): max %.3e", z, flux, residuals.max(initial=0.0))
    return DefectReport(complex(z), residuals, flux)


def refinement_study(
    mesh: Mesh,
    z_values: Sequence[complex],
    order: int = 2,
    probes: int = 10,
    seed: int = 0,
    flux: str = "pointwise",
) -> pd.DataFrame:
    """Defects on ``mesh`` and on its uniform refinement for each z."""
    coarse = decompose(mesh, order)
    fine = decompose(refine(mesh, np.ones(mesh.n_triangles, dtype=bool)), order)
    rows = []
    for z in z_values:
        a = resolvent_defect(coarse, z, probes=probes, seed=seed, flux=flux).max
        b = resolvent_defect(fine, z, probes=probes, seed=seed, flux=flux).max
        rows.append({"z_re": complex(z).real, "z_im": complex(z).imag, "coarse": a, "fine": b,
                     "ratio": a / b if b > 0 else np.inf, "flux": flux})
    return pd.DataFrame(rows)


# --- operator norms -------------------------------------------------------------------


@dataclass
class NormEstimate:
    estimate: float
    mean: float
    std: float
    samples: np.ndarray
    seed: int


def _jump_map(dd: DecomposedDomain, z: complex, X: np.ndarray) -> np.ndarray:
    """Interface functional −r of B_int R_D(z) applied to the columns of X."""
    W = dd.decoupled_resolvent(z, X)
    I = dd.interface_dofs
    return -((dd.K[I] @ W) - z * (dd.M[I] @ W) - dd.M[I] @ X)


def _jump_adjoint(dd: DecomposedDomain, z: complex, Y: np.ndarray) -> np.ndarray:
    """Transpose-conjugate of ``_jump_map`` as a load on all dofs."""
    I = dd.interface_dofs
    zc = np.conj(z)
    out = dd.M[:, I] @ Y
    for block in (dd.cavity, dd.neck):
        f = block.free
        g = (dd.K[f][:, I] - zc * dd.M[f][:, I]) @ Y
        x = np.conj(dd._solve_block(block, z, np.conj(g)))
        out = out - block.M[:, f] @ x
    return out


def bint_norm_estimate(
    dd: DecomposedDomain,
    z: complex,
    probes: int = 20,
    iterations: int = 30,
    seed: int = 0,
) -> NormEstimate:
    """Power-iteration estimate of ‖B_int R_D(z)‖ from L²(𝒞(ε)) to L²(b_ε).

    All probes iterate together as the columns of one block; the estimate is
    the largest Rayleigh quotient, the spread across probes is reported.
    """
    Mb, dofs, _ = boundary_mass(dd.dofmap, dd.interface_edges)
    inner = np.isin(dofs, dd.interface_dofs)
    Mi = Factorization(sp.csc_matrix(Mb[inner][:, inner]))
    fr = dd.free
    Mfree = Factorization(dd.M[fr][:, fr].tocsc())
    X = unit_probes(dd, probes, seed).astype(complex)
    ratios = np.zeros(probes)
    for _ in range(iterations):
        R = _jump_map(dd, z, X)
        G = Mi.solve(R)
        ratios = np.sqrt(np.abs(np.einsum("ij,ij->j", np.conj(G), R)))
        B = _jump_adjoint(dd, z, G)
        Y = np.zeros_like(X)
        Y[fr] = Mfree.solve(B[fr])
        norms = _m_norm(dd, Y)
        X = Y / np.where(norms > 0, norms, 1.0)
    logger.info("|B_int R_D(%s)| ~ %.4e (std %.2e over %d probes)", z, ratios.max(), ratios.std(), probes)
    return NormEstimate(float(ratios.max()), float(ratios.mean()), float(ratios.std()), ratios, seed)


@dataclass
class ContourSweep:
    points: np.ndarray
    estimates: np.ndarray

    @property
    def ratio(self) -> float:
        return float(self.estimates.max() / self.estimates.min())


def bint_contour_sweep(
    dd: DecomposedDomain,
    contour: "Contour",
    count: int = 8,
    probes: int = 20,
    iterations: int = 30,
    seed: int = 0,
) -> ContourSweep:
    """‖B_int R_D(z)‖ at ``count`` points of γ, offset off the real axis."""
    theta = 2 * np.pi * (np.arange(count) + 0.5) / count
    zs = contour.center + contour.radius * np.exp(1j * theta)
    estimates = np.array([bint_norm_estimate(dd, z, probes, iterations, seed).estimate for z in zs])
    dd._factors.clear()
    out = ContourSweep(zs, estimates)
    logger.info("|B_int R_D| along γ: %.4e .. %.4e (ratio %.3f)", estimates.min(), estimates.max(), out.ratio)
    return out


# --- contour integral ----------------------------------------------------------------


@dataclass
class Contour:
    center: float
    radius: float
    nodes: int = 16

    def points(self) -> Tuple[np.ndarray, np.ndarray]:
        """Quadrature nodes z_k and weights w_k with (1/2πi)∮F dz ≈ Σ w_k F(z_k)."""
        if self.nodes < 16:
            raise ContourError(f"contour quadrature needs at least 16 nodes, got {self.nodes}")
        theta = 2 * np.pi * (np.arange(self.nodes) + 0.5) / self.nodes
        e = np.exp(1j * theta)
        return self.center + self.radius * e, self.radius * e / self.nodes

    def encloses(self, values: Sequence[float]) -> List[float]:
        return [v for v in values if abs(v - self.center) < self.radius]

    def shrunk(self, factor: float = 2.0) -> "Contour":
        return Contour(self.center, self.radius / factor, self.nodes)


@dataclass
class ProjectorReport:
    norm: float
    eigen_norm: float
    contour: Contour
    std: float

    @property
    def discrepancy(self) -> float:
        return abs(self.norm - self.eigen_norm)


def _enclosed(dd: DecomposedDomain, contour: Contour, K: SparseOperator, M: SparseOperator):
    count = min(4, K.dimension - 1)
    pairs = dirichlet_eigs(K, M, count=count, shift=contour.center, probe=None)
    inside = [p for p in pairs if abs(p.eigenvalue - contour.center) < contour.radius]
    edge = [p for p in pairs if abs(abs(p.eigenvalue - contour.center) - contour.radius) < 1e-6 * contour.radius]
    if edge:
        raise ContourError("an eigenvalue lies on the contour", {"eigenvalue": edge[0].eigenvalue})
    return inside


def projector_difference(
    dd: DecomposedDomain,
    contour: Contour,
    probes: int = 10,
    iterations: int = 20,
    seed: int = 0,
) -> ProjectorReport:
    """‖(1/2πi)∮(R_D − R_ε)dz‖ on L²(𝒞(ε)) and its eigenpair cross-check.

    The contour must enclose exactly one eigenvalue of the cavity block, none
    of the neck block and exactly one of the global operator.
    """
    fr = dd.free
    glob = (
        SparseOperator(dd.K[fr][:, fr].tocsr(), dd.K, fr, dd.dofmap),
        SparseOperator(dd.M[fr][:, fr].tocsr(), dd.M, fr, dd.dofmap),
    )
    cav_in = _enclosed(dd, contour, *dd.cavity.operators(dd.dofmap))
    neck_in = _enclosed(dd, contour, *dd.neck.operators(dd.dofmap))
    glob_in = _enclosed(dd, contour, *glob)
    if len(cav_in) != 1 or len(neck_in) != 0 or len(glob_in) != 1:
        raise ContourError(
            "contour must enclose exactly λ₀ and λ_ε",
            {
                "cavity": [p.eigenvalue for p in cav_in],
                "neck": [p.eigenvalue for p in neck_in],
                "global": [p.eigenvalue for p in glob_in],
            },
        )
    u0, v = cav_in[0].field.values, glob_in[0].field.values
    overlap = float(u0 @ (dd.M @ v))
    eigen_norm = float(np.sqrt(max(0.0, 1.0 - overlap**2)))

    zs, ws = contour.points()

    def apply(X):
        out = np.zeros(X.shape, dtype=complex)
        for z, wk in zip(zs, ws):
            out += wk * (dd.decoupled_resolvent(z, X) - dd.resolvent(z, X))
        return out

    X = unit_probes(dd, probes, seed).astype(complex)
    ratios = np.zeros(probes)
    for _ in range(iterations):
        Y = apply(X)
        ratios = _m_norm(dd, Y)
        Y = apply(Y)
        norms = _m_norm(dd, Y)
        X = Y / np.where(norms > 0, norms, 1.0)
    dd._factors.clear()
    logger.info("projector difference %.4e (eigenpairs: %.4e)", ratios.max(), eigen_norm)
    return ProjectorReport(float(ratios.max()), eigen_norm, contour, float(ratios.std()))


# --- sweep ---------------------------------------------------------------------------


@dataclass
class GluingSweep:
    table: pd.DataFrame
    fits: Dict[str, RateFit]


def gluing_row(spec, eps: float, h: float, neck_layers: int = 8, order: int = 2, mode: int = 1,
               probes: int = 20, iterations: int = 30, samples: int = 10, far_shift: float = -10.0,
               nodes: int = 16, seed: int = 0, flux: str = "pointwise") -> Dict:
    spec_eps, closed, cavity = closed_problem(spec, eps, h, neck_layers, order)
    u0 = cavity_mode(cavity, mode)
    dd = decompose(closed.mesh, order)
    z_near = u0.eigenvalue + 0.5j * u0.gap
    defects = [resolvent_defect(dd, z, probes=samples, seed=seed, flux=flux).max for z in (z_near, far_shift)]
    norm = bint_norm_estimate(dd, z_near, probes, iterations, seed)
    gamma = Contour(u0.eigenvalue, 0.5 * u0.gap, nodes)
    along = bint_contour_sweep(dd, gamma, probes=probes, iterations=iterations, seed=seed)
    proj = projector_difference(dd, gamma, seed=seed)
    small = projector_difference(dd, gamma.shrunk(2.0), seed=seed)
    return {
        "epsilon": eps,
        "lambda0": u0.eigenvalue,
        "bint_norm": norm.estimate,
        "bint_norm_std": norm.std,
        "bint_contour_ratio": along.ratio,
        "projector_diff_norm": proj.norm,
        "projector_eigen_norm": proj.eigen_norm,
        "projector_shrunk_norm": small.norm,
        "projector_shrink_change": abs(small.norm - proj.norm) / proj.norm if proj.norm > 0 else 0.0,
        "defect_residual": max(defects),
        "defect_flux": flux,
        "seed": seed,
    }


def gluing_sweep(spec, eps_values: Sequence[float], h: float, **options) -> GluingSweep:
    """Per-ε interface norms, projector differences and defects with fitted exponents."""
    rows = [gluing_row(spec, float(eps), h, **options) for eps in sorted(eps_values, reverse=True)]
    table = pd.DataFrame(rows)
    log_eps = np.log(table["epsilon"].to_numpy())
    fits = {}
    for key in ("bint_norm", "projector_diff_norm"):
        if len(table) >= 3:
            fits[key] = RateFit.fit(log_eps, np.log(table[key].to_numpy()))
    return GluingSweep(table, fits)

"""Lagrange P1/P2 discretization of the Dirichlet Laplacian.

Assembly is vectorized over elements with a degree-4 Dunavant rule, which
integrates the P2 mass matrix exactly. Operators keep both the full matrix
(all degrees of freedom) and the free block obtained by eliminating the
Dirichlet degrees of freedom.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from matplotlib.tri import Triangulation
from scipy.sparse.linalg import splu

from resonate.errors import AssemblyError, SolverError
from resonate.mesh import ABSORBER, SYMMETRY_PLANE, TAGS, Mesh

if TYPE_CHECKING:
    from resonate.resonance import PMLConfig

logger = logging.getLogger(__name__)

# Dunavant degree 4, barycentric points and weights summing to 1
_A, _B = 0.445948490915965, 0.091576213509771
_WA, _WB = 0.223381589678011, 0.109951743655322
QUAD_POINTS = np.array(
    [
        [_A, _A, 1 - 2 * _A],
        [_A, 1 - 2 * _A, _A],
        [1 - 2 * _A, _A, _A],
        [_B, _B, 1 - 2 * _B],
        [_B, 1 - 2 * _B, _B],
        [1 - 2 * _B, _B, _B],
    ]
)
QUAD_WEIGHTS = np.array([_WA, _WA, _WA, _WB, _WB, _WB])

# local P2 edge dofs 3, 4, 5 sit on edges (0,1), (1,2), (2,0)
_P2_EDGES = ((0, 1), (1, 2), (2, 0))

RESIDUAL_TOL_REAL = 1e-10
RESIDUAL_TOL_COMPLEX = 1e-8
PIVOT_TOL = 1e-14


def shape_values(bary: np.ndarray, order: int) -> np.ndarray:
    """Basis values at barycentric points, shape (npoints, nloc)."""
    L = np.atleast_2d(bary)
    if order == 1:
        return L.copy()
    vertex = L * (2 * L - 1)
    edge = np.stack([4 * L[:, i] * L[:, j] for i, j in _P2_EDGES], axis=1)
    return np.hstack([vertex, edge])


def barycentric_gradients(mesh: Mesh) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of the barycentric coordinates (nt, 3, 2) and signed areas."""
    p = mesh.vertices[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    area2 = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    if np.any(np.abs(area2) <= 1e-300) or np.any(~np.isfinite(area2)):
        bad = int(np.argmin(np.abs(area2)))
        raise AssemblyError(f"degenerate element {bad} (zero area)", {"element": bad})
    grads = np.empty(p.shape)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        grads[:, i, 0] = (y[:, j] - y[:, k]) / area2
        grads[:, i, 1] = (x[:, k] - x[:, j]) / area2
    return grads, 0.5 * area2


def shape_gradients(bary: np.ndarray, dL: np.ndarray, order: int) -> np.ndarray:
    """Basis gradients, shape (nt, npoints, nloc, 2)."""
    L = np.atleast_2d(bary)
    if order == 1:
        return np.broadcast_to(dL[:, None, :, :], (dL.shape[0], len(L), 3, 2))
    vertex = (4 * L - 1)[None, :, :, None] * dL[:, None, :, :]
    edge = [
        4 * (L[None, :, j, None] * dL[:, None, i, :] + L[None, :, i, None] * dL[:, None, j, :])
        for i, j in _P2_EDGES
    ]
    return np.concatenate([vertex, np.stack(edge, axis=2)], axis=2)


def barycentric(mesh: Mesh, cells: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of each point with respect to its given cell."""
    points = np.atleast_2d(points)
    corners = mesh.vertices[mesh.triangles[np.asarray(cells)]]
    T = np.stack([corners[:, 0] - corners[:, 2], corners[:, 1] - corners[:, 2]], axis=-1)
    lam = np.linalg.solve(T, (points - corners[:, 2])[..., None])[..., 0]
    return np.column_stack([lam, 1.0 - lam.sum(axis=1)])


@dataclass(eq=False)
class DofMap:
    """Degree-of-freedom numbering: vertices first, then edge midpoints for P2."""

    mesh: Mesh
    order: int
    cells: np.ndarray = field(init=False)
    coordinates: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.order not in (1, 2):
            raise AssemblyError(f"polynomial order must be 1 or 2, got {self.order}")
        mesh = self.mesh
        if self.order == 1:
            self.cells = mesh.triangles.copy()
            self.coordinates = mesh.vertices.copy()
            return
        edges, tri_edges = mesh.unique_edges()
        nv = mesh.n_vertices
        # unique_edges lists, per triangle, the edge opposite vertex k
        self.cells = np.hstack([mesh.triangles, nv + tri_edges[:, [2, 0, 1]]])
        self.coordinates = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])])

    @property
    def n_dofs(self) -> int:
        return len(self.coordinates)

    def edge_dofs(self, edges: np.ndarray) -> np.ndarray:
        """Dofs along mesh edges: (m, 2) for P1, (m, 3) ordered (a, b, midpoint) for P2."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if self.order == 1:
            return edges
        uniq, _ = self.mesh.unique_edges()
        n = self.mesh.n_vertices
        keys = uniq[:, 0] * n + uniq[:, 1]
        lo, hi = np.minimum(edges[:, 0], edges[:, 1]), np.maximum(edges[:, 0], edges[:, 1])
        pos = np.searchsorted(keys, lo * n + hi)
        if np.any(pos >= len(keys)) or np.any(keys[np.minimum(pos, len(keys) - 1)] != lo * n + hi):
            raise AssemblyError("edge is not part of the mesh")
        return np.column_stack([edges, n + pos])

    def boundary_dofs(self, natural: Iterable[int] = (SYMMETRY_PLANE,)) -> np.ndarray:
        """Dirichlet dofs: the mesh boundary minus edges carrying a natural tag."""
        bnd = self.mesh.boundary_edges()
        natural = tuple(natural)
        if natural and len(self.mesh.edges):
            n = self.mesh.n_vertices
            nat = self.mesh.edges[np.isin(self.mesh.edge_tags, natural)]
            nat_keys = np.minimum(nat[:, 0], nat[:, 1]) * n + np.maximum(nat[:, 0], nat[:, 1])
            keys = bnd[:, 0] * n + bnd[:, 1]
            bnd = bnd[~np.isin(keys, nat_keys)]
        if len(bnd) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.unique(self.edge_dofs(bnd))


@dataclass
class SparseOperator:
    """Assembled operator with its Dirichlet-eliminated free block."""

    matrix: sp.csr_matrix
    full: sp.csr_matrix
    free: np.ndarray
    dofmap: DofMap
    symmetric: bool = True

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.matrix.data)

    def expand(self, values: np.ndarray) -> np.ndarray:
        """Free-dof vector(s) to full length with exact zeros on Dirichlet dofs."""
        values = np.asarray(values)
        shape = (self.dofmap.n_dofs,) + values.shape[1:]
        out = np.zeros(shape, dtype=values.dtype)
        out[self.free] = values
        return out

    def restrict(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[self.free]


def _symmetrize(A: sp.spmatrix) -> sp.csr_matrix:
    A = sp.csr_matrix(0.5 * (A + A.T))
    A.eliminate_zeros()
    A.sort_indices()
    return A


def _free_block(A: sp.csr_matrix, free: np.ndarray) -> sp.csr_matrix:
    B = A[free][:, free].tocsr()
    B.eliminate_zeros()
    B.sort_indices()
    return B


def _element_matrices(
    mesh: Mesh,
    dofmap: DofMap,
    elements: np.ndarray,
    stiffness_coefficient: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    mass_coefficient: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    dL, area = barycentric_gradients(mesh)
    dL, area = dL[elements], np.abs(area[elements])
    phi = shape_values(QUAD_POINTS, dofmap.order)
    grads = shape_gradients(QUAD_POINTS, dL, dofmap.order)
    weights = area[:, None] * QUAD_WEIGHTS[None, :]
    corners = mesh.vertices[mesh.triangles[elements]]
    qpts = np.einsum("qk,tkd->tqd", QUAD_POINTS, corners)
    if stiffness_coefficient is None:
        Ke = np.einsum("tq,tqid,tqjd->tij", weights, grads, grads)
    else:
        A = stiffness_coefficient(qpts.reshape(-1, 2)).reshape(qpts.shape[0], qpts.shape[1], 2, 2)
        Ke = np.einsum("tq,tqid,tqde,tqje->tij", weights, grads, A, grads)
    if mass_coefficient is None:
        Me = np.einsum("tq,qi,qj->tij", weights, phi, phi)
    else:
        c = mass_coefficient(qpts.reshape(-1, 2)).reshape(qpts.shape[0], qpts.shape[1])
        Me = np.einsum("tq,tq,qi,qj->tij", weights, c, phi, phi)
    return Ke, Me


def _scatter(dofmap: DofMap, elements: np.ndarray, local: np.ndarray) -> sp.csr_matrix:
    cells = dofmap.cells[elements]
    nloc = cells.shape[1]
    rows = np.repeat(cells, nloc, axis=1).ravel()
    cols = np.tile(cells, (1, nloc)).ravel()
    n = dofmap.n_dofs
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _operators(K: sp.csr_matrix, M: sp.csr_matrix, dofmap: DofMap, natural) -> Tuple[SparseOperator, SparseOperator]:
    fixed = dofmap.boundary_dofs(natural)
    free = np.setdiff1d(np.arange(dofmap.n_dofs), fixed)
    if len(free) == 0:
        raise AssemblyError("no free degrees of freedom")
    return (
        SparseOperator(_free_block(K, free), K, free, dofmap),
        SparseOperator(_free_block(M, free), M, free, dofmap),
    )


def assemble(
    mesh: Mesh, order: int = 1, natural: Sequence[int] = (SYMMETRY_PLANE,)
) -> Tuple[SparseOperator, SparseOperator]:
    """Stiffness and mass for the Dirichlet Laplacian on ``mesh``.

    Args:
        mesh: conforming triangulation.
        order: 1 or 2.
        natural: edge tags on which the Neumann condition is kept instead of
            Dirichlet.

    Returns:
        tuple: (K, M) as SparseOperator.
    """
    dofmap = DofMap(mesh, order)
    elements = np.arange(mesh.n_triangles)
    Ke, Me = _element_matrices(mesh, dofmap, elements)
    K = _symmetrize(_scatter(dofmap, elements, Ke))
    M = _symmetrize(_scatter(dofmap, elements, Me))
    logger.debug("assembled P%d system: %d dofs", order, dofmap.n_dofs)
    return _operators(K, M, dofmap, natural)


def pml_coefficients(pml: "PMLConfig") -> Tuple[Callable, Callable]:
    """Coefficient corrections (A − I, J − 1) of the radial complex stretching."""
    cx, cy = pml.center

    def frame(points):
        dx, dy = points[:, 0] - cx, points[:, 1] - cy
        r = np.hypot(dx, dy)
        return r, dx / r, dy / r

    def stiffness(points):
        r, c, s = frame(points)
        d_r = 1.0 + 1j * pml.sigma(r)
        d_t = pml.stretched(r) / r
        a_rr = d_t / d_r - 1.0
        a_tt = d_r / d_t - 1.0
        out = np.empty((len(points), 2, 2), dtype=complex)
        out[:, 0, 0] = a_rr * c * c + a_tt * s * s
        out[:, 1, 1] = a_rr * s * s + a_tt * c * c
        out[:, 0, 1] = out[:, 1, 0] = (a_rr - a_tt) * c * s
        return out

    def mass(points):
        r, _, _ = frame(points)
        return (1.0 + 1j * pml.sigma(r)) * (pml.stretched(r) / r) - 1.0

    return stiffness, mass


def assemble_absorbing(
    mesh: Mesh, pml: "PMLConfig", z_ref: Optional[complex] = None, order: int = 1
) -> Tuple[SparseOperator, SparseOperator]:
    """Complex-symmetric K(θ), M(θ) with the stretching confined to the absorber.

    The real operators are assembled everywhere and a correction is added
    on absorber triangles only, so a vanishing strength reproduces the real
    assembly exactly. ``z_ref`` is logged with the optical thickness the
    layer provides at that spectral parameter.
    """
    absorber = np.nonzero(mesh.regions == ABSORBER)[0]
    if len(absorber) == 0:
        raise AssemblyError("mesh has no absorber region")
    h_abs = float(mesh.edge_lengths()[absorber].max())
    if pml.thickness < 4 * h_abs:
        raise AssemblyError(
            f"absorber thickness {pml.thickness:.4g} is thinner than 4 elements (h = {h_abs:.4g})",
            {"thickness": pml.thickness, "h": h_abs},
        )
    dofmap = DofMap(mesh, order)
    everywhere = np.arange(mesh.n_triangles)
    Ke, Me = _element_matrices(mesh, dofmap, everywhere)
    stiffness, mass = pml_coefficients(pml)
    dKe, dMe = _element_matrices(mesh, dofmap, absorber, stiffness, mass)
    K = _symmetrize(_symmetrize(_scatter(dofmap, everywhere, Ke)).astype(complex) + _scatter(dofmap, absorber, dKe))
    M = _symmetrize(_symmetrize(_scatter(dofmap, everywhere, Me)).astype(complex) + _scatter(dofmap, absorber, dMe))
    if z_ref is not None:
        k = np.sqrt(complex(z_ref)).real
        logger.debug("absorber optical thickness k*sigma0*d/3 = %.3g", k * pml.sigma0 * pml.thickness / 3.0)
    return _operators(K, M, dofmap, ())


# --- linear algebra ------------------------------------------------------------------


class Factorization:
    """Sparse LU with COLAMD ordering, checked for tiny pivots."""

    def __init__(self, A, check_pivots: bool = True):
        A = A.matrix if isinstance(A, SparseOperator) else A
        self.A = sp.csc_matrix(A)
        if self.A.shape[0] != self.A.shape[1]:
            raise SolverError(f"matrix is not square: {self.A.shape}")
        self.complex = np.iscomplexobj(self.A.data)
        try:
            self.lu = splu(self.A, permc_spec="COLAMD")
        except RuntimeError as err:
            raise SolverError(f"factorization failed: {err}", pivot=0.0) from err
        if check_pivots:
            diag = np.abs(self.lu.U.diagonal())
            scale = float(diag.max()) if diag.size else 0.0
            smallest = float(diag.min()) if diag.size else 0.0
            if scale == 0.0 or smallest <= PIVOT_TOL * scale:
                raise SolverError(
                    f"near-singular pivot {smallest:.3e} (largest {scale:.3e})",
                    pivot=smallest,
                )

    @property
    def shape(self):
        return self.A.shape

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b)
        if self.complex or np.iscomplexobj(b):
            rhs = b.astype(complex)
            if not self.complex:
                return self.lu.solve(rhs.real.copy()) + 1j * self.lu.solve(rhs.imag.copy())
            return self.lu.solve(rhs)
        return self.lu.solve(b.astype(float))


def solve_linear(A, b: np.ndarray, factorization: Optional[Factorization] = None) -> np.ndarray:
    """Direct solve with a relative-residual guard and one refinement step.

    Args:
        A: SparseOperator, sparse or dense square matrix.
        b: right-hand side.
        factorization: reuse an existing LU of ``A``.

    Returns:
        np.ndarray: the solution.
    """
    lu = factorization or Factorization(A)
    b = np.asarray(b)
    x = lu.solve(b)
    tol = RESIDUAL_TOL_COMPLEX if (lu.complex or np.iscomplexobj(b)) else RESIDUAL_TOL_REAL
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x
    r = b - lu.A @ x
    if np.linalg.norm(r) > tol * bnorm:
        x = x + lu.solve(r)
        r = b - lu.A @ x
    rel = float(np.linalg.norm(r) / bnorm)
    if rel > tol:
        diag = np.abs(lu.lu.U.diagonal())
        raise SolverError(f"relative residual {rel:.3e} above {tol:.0e}", pivot=float(diag.min()), details={"residual": rel})
    return x


def lumped_mass(M: SparseOperator) -> np.ndarray:
    """Row-sum lumped mass on the free dofs; requires positive row sums (P1)."""
    d = np.asarray(M.full.sum(axis=1)).ravel()[M.free]
    if np.any(d <= 0):
        raise AssemblyError("mass lumping produced non-positive entries; use P1")
    return d


def export_matrix(A, path) -> Path:
    """Coordinate text export, one ``row col real imag`` line per stored entry."""
    A = A.matrix if isinstance(A, SparseOperator) else A
    coo = sp.coo_matrix(A)
    data = coo.data.astype(complex)
    lines = [f"% {A.shape[0]} {A.shape[1]} {coo.nnz}"]
    lines += [
        f"{i} {j} {v.real!r} {v.imag!r}"
        for i, j, v in zip(coo.row.tolist(), coo.col.tolist(), data.tolist())
    ]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


# --- fields ------------------------------------------------------------------------


@dataclass(eq=False)
class DiscreteField:
    """Nodal coefficients of a P1/P2 function on a mesh (all dofs)."""

    dofmap: DofMap
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if len(self.values) != self.dofmap.n_dofs:
            raise AssemblyError(
                f"field has {len(self.values)} coefficients, the P{self.dofmap.order} space has {self.dofmap.n_dofs}"
            )

    @property
    def mesh(self) -> Mesh:
        return self.dofmap.mesh

    @property
    def order(self) -> int:
        return self.dofmap.order

    @classmethod
    def interpolate(cls, dofmap: DofMap, fn: Callable[[np.ndarray], np.ndarray]) -> "DiscreteField":
        return cls(dofmap, fn(dofmap.coordinates))

    def with_values(self, values: np.ndarray) -> "DiscreteField":
        return DiscreteField(self.dofmap, values)

    def norm(self, M: SparseOperator) -> float:
        u = self.values
        return float(np.sqrt(np.real(np.vdot(u, M.full @ u))))

    def _locate(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if "trifinder" not in self.mesh._cache:
            tri = Triangulation(self.mesh.vertices[:, 0], self.mesh.vertices[:, 1], self.mesh.triangles)
            self.mesh._cache["trifinder"] = tri.get_trifinder()
        points = np.atleast_2d(points)
        cell = np.asarray(self.mesh._cache["trifinder"](points[:, 0], points[:, 1]))
        if np.any(cell < 0):
            raise AssemblyError(f"{int(np.sum(cell < 0))} evaluation points lie outside the mesh")
        return cell, barycentric(self.mesh, cell, points)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        cell, bary = self._locate(points)
        phi = shape_values(bary, self.order)
        return np.einsum("pi,pi->p", phi, self.values[self.dofmap.cells[cell]])

    def gradient(self, points: np.ndarray) -> np.ndarray:
        cell, bary = self._locate(points)
        return self.cell_gradient(cell, bary)

    def cell_gradient(self, cell: np.ndarray, bary: np.ndarray) -> np.ndarray:
        """Gradient inside the given cells at per-point barycentric coordinates."""
        cell, bary = np.asarray(cell), np.atleast_2d(bary)
        dL, _ = barycentric_gradients(self.mesh)
        dLc = dL[cell]
        if self.order == 1:
            g = dLc
        else:
            vertex = (4 * bary - 1)[:, :, None] * dLc
            edge = np.stack(
                [4 * (bary[:, j, None] * dLc[:, i] + bary[:, i, None] * dLc[:, j]) for i, j in _P2_EDGES], axis=1
            )
            g = np.concatenate([vertex, edge], axis=1)
        return np.einsum("pi,pid->pd", self.values[self.dofmap.cells[cell]], g)

    def vertex_gradients(self, elements: Optional[np.ndarray] = None) -> np.ndarray:
        """Elementwise gradients at the three corners, shape (nt, 3, 2)."""
        elements = np.arange(self.mesh.n_triangles) if elements is None else np.asarray(elements)
        dL, _ = barycentric_gradients(self.mesh)
        g = shape_gradients(np.eye(3), dL[elements], self.order)
        return np.einsum("ti,tkid->tkd", self.values[self.dofmap.cells[elements]], g)

    def vertex_values(self) -> np.ndarray:
        return self.values[: self.mesh.n_vertices]


# --- boundary flux -------------------------------------------------------------------


@dataclass
class FluxResult:
    """Outward normal derivative on tagged edges recovered from the residual."""

    edges: np.ndarray
    lengths: np.ndarray
    values: np.ndarray
    density: Dict[int, complex]
    total: complex

    @property
    def total_outflow(self) -> complex:
        """∫(−Δu) over the region, i.e. −∮∂_ν u."""
        return -self.total


def boundary_mass(dofmap: DofMap, edges: np.ndarray) -> Tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
    """1D mass matrix of the trace space on ``edges`` over its local dof list."""
    edofs = dofmap.edge_dofs(edges)
    dofs, local = np.unique(edofs, return_inverse=True)
    local = local.reshape(edofs.shape)
    coords = dofmap.mesh.vertices
    lengths = np.linalg.norm(coords[edges[:, 0]] - coords[edges[:, 1]], axis=1)
    if dofmap.order == 1:
        ref = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    else:
        ref = np.array([[4.0, -1.0, 2.0], [-1.0, 4.0, 2.0], [2.0, 2.0, 16.0]]) / 30.0
    nloc = ref.shape[0]
    vals = lengths[:, None, None] * ref[None]
    rows = np.repeat(local, nloc, axis=1).ravel()
    cols = np.tile(local, (1, nloc)).ravel()
    Mb = sp.coo_matrix((vals.ravel(), (rows, cols)), shape=(len(dofs), len(dofs))).tocsr()
    return Mb, dofs, local


def normal_flux(
    field: DiscreteField,
    tag: Union[int, str],
    K: SparseOperator,
    M: SparseOperator,
    shift: complex = 0.0,
    load: Optional[np.ndarray] = None,
    select: Optional[np.ndarray] = None,
) -> FluxResult:
    """Variationally consistent ∂_ν u on edges carrying ``tag``.

    The residual functional r = K u − shift·M u − M f, restricted to the trace
    dofs of the tagged edges, equals ∫ ∂_ν u φ_i; the density g solves the
    boundary mass system M_b g = r. Summing r gives the discrete divergence
    theorem exactly.

    Args:
        field: discrete solution on the mesh of K and M.
        tag: edge tag name or code.
        K, M: operators whose ``full`` matrices act on ``field``.
        shift: spectral parameter (λ for an eigenfunction).
        load: nodal load f (full length), optional.
        select: boolean mask over the tagged edges to keep.

    Returns:
        FluxResult: per-edge mean flux density and the total ∮ ∂_ν u.
    """
    code = TAGS.index(tag) if isinstance(tag, str) else tag
    edges = field.mesh.edges[field.mesh.edge_tags == code]
    if select is not None:
        edges = edges[np.asarray(select)]
    if len(edges) == 0:
        raise AssemblyError(f"no edges tagged {TAGS[code]!r} adjacent to the field's region")
    u = field.values
    r = K.full @ u - shift * (M.full @ u)
    if load is not None:
        r = r - M.full @ np.asarray(load)
    Mb, dofs, local = boundary_mass(field.dofmap, edges)
    g = splu(sp.csc_matrix(Mb.astype(np.result_type(Mb.dtype, r.dtype)))).solve(r[dofs])
    lengths = np.linalg.norm(field.mesh.vertices[edges[:, 0]] - field.mesh.vertices[edges[:, 1]], axis=1)
    ge = g[local]
    if field.order == 1:
        values = 0.5 * (ge[:, 0] + ge[:, 1])
    else:
        values = (ge[:, 0] + ge[:, 1] + 4.0 * ge[:, 2]) / 6.0
    total = r[dofs].sum()
    return FluxResult(edges, lengths, values, dict(zip(dofs.tolist(), g.tolist())), total)


def region_matrices(dofmap: DofMap, elements: np.ndarray) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
    """Full-size stiffness and mass matrices integrating over the given elements only."""
    elements = np.asarray(elements)
    Ke, Me = _element_matrices(dofmap.mesh, dofmap, elements)
    return _symmetrize(_scatter(dofmap, elements, Ke)), _symmetrize(_scatter(dofmap, elements, Me))


def region_mass(dofmap: DofMap, elements: np.ndarray) -> sp.csr_matrix:
    return region_matrices(dofmap, elements)[1]

"""Interior Dirichlet eigenpairs, eigenvalue tracking and comparisons.

Eigenpairs come from ARPACK in shift-invert mode with a sparse LU of
K − σM as the inverse operator. Every returned pair is M-normalized,
sign-fixed and checked against the residual bound; clusters are flagged
rather than separated.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh
from scipy.spatial import cKDTree
from scipy.stats import linregress

from resonate.errors import AssemblyError, EigenSolverError, FitRefused, SolverError, TrackingError
from resonate.fem import DiscreteField, DofMap, Factorization, SparseOperator, assemble
from resonate.geometry import CavitySpec, DumbbellSpec
from resonate.mesh import CAVITY, SYMMETRY_PLANE, Mesh, triangulate

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8
CLUSTER_RTOL = 1e-6
ANCHOR_PROBE = (-0.1, 0.0)


@dataclass(eq=False)
class EigenPair:
    eigenvalue: float
    field: DiscreteField
    residual: float
    cluster: bool = False
    gap: float = float("nan")
    index: Optional[int] = None


@dataclass(frozen=True)
class ComparisonReport:
    eps: float
    sup_full: float
    sup_compact: float
    grad_sup_full: float
    grad_sup_compact: float
    l2_extension: float
    eigenvalue_gap: float
    margin: float

    def to_dict(self) -> Dict[str, float]:
        return dict(self.__dict__)


@dataclass
class RateFit:
    slope: float
    intercept: float
    stderr: float
    rvalue: float
    points: int

    @classmethod
    def fit(cls, x: Sequence[float], y: Sequence[float]) -> "RateFit":
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        if len(x) < 3:
            raise FitRefused(f"rate fit needs at least 3 points, got {len(x)}")
        res = linregress(x, y)
        return cls(float(res.slope), float(res.intercept), float(res.stderr), float(res.rvalue), len(x))


@dataclass
class Discretization:
    """Mesh with its assembled operators."""

    mesh: Mesh
    K: SparseOperator
    M: SparseOperator

    @property
    def dofmap(self) -> DofMap:
        return self.K.dofmap

    @classmethod
    def build(cls, mesh: Mesh, order: int = 2, natural=(SYMMETRY_PLANE,)) -> "Discretization":
        K, M = assemble(mesh, order, natural)
        return cls(mesh, K, M)


# --- eigensolver ---------------------------------------------------------------------


def _residual(K: SparseOperator, M: SparseOperator, lam: float, x: np.ndarray) -> float:
    Mx = M.matrix @ x
    return float(np.linalg.norm(K.matrix @ x - lam * Mx) / np.linalg.norm(Mx))


def fix_sign(field: DiscreteField, probe: Optional[Sequence[float]] = ANCHOR_PROBE) -> DiscreteField:
    """Make the field positive at ``probe``, or at its largest entry when the
    probe is outside the mesh or on a near-zero value."""
    u = field.values
    reference = None
    if probe is not None:
        try:
            value = float(np.real(field.evaluate(np.array([probe]))[0]))
        except AssemblyError:
            value = 0.0
        if abs(value) > 1e-6 * np.max(np.abs(u)):
            reference = value
    if reference is None:
        reference = float(np.real(u[np.argmax(np.abs(u))]))
    return field if reference > 0 else field.with_values(-u)


def dirichlet_eigs(
    K: SparseOperator,
    M: SparseOperator,
    count: int = 6,
    shift: float = 0.0,
    probe: Optional[Sequence[float]] = ANCHOR_PROBE,
    max_restarts: int = 3,
) -> List[EigenPair]:
    """The ``count`` eigenpairs of K x = λ M x nearest ``shift``, ascending.

    Args:
        K, M: free blocks from :func:`resonate.fem.assemble`.
        count: number of pairs.
        shift: target point; retried with a perturbation when singular.
        probe: point at which fields are made positive.
        max_restarts: retries on factorization failure or non-convergence.

    Returns:
        list: EigenPair objects with residual and cluster flags set.
    """
    n = K.dimension
    if not 0 < count < n:
        raise EigenSolverError(f"cannot compute {count} eigenpairs of a {n}-dimensional problem")
    A, B = K.matrix, M.matrix
    v0 = np.random.default_rng(0).standard_normal(n)
    sigma = float(shift)
    ncv = min(n - 1, max(2 * count + 1, 20))
    last_error: Optional[Exception] = None
    for attempt in range(max_restarts + 1):
        try:
            lu = Factorization((A - sigma * B).tocsc())
        except SolverError as err:
            last_error = err
            sigma = shift + 1e-6 * (1.0 + abs(shift)) * (attempt + 1)
            logger.warning("shift %.8g is singular, retrying at %.8g", shift, sigma)
            continue
        op = LinearOperator((n, n), matvec=lu.solve, dtype=float)
        try:
            values, vectors = eigsh(A, k=count, M=B, sigma=sigma, which="LM", OPinv=op, v0=v0, ncv=ncv)
            break
        except ArpackNoConvergence as err:
            last_error = err
            ncv = min(n - 1, 2 * ncv)
            logger.warning("ARPACK did not converge at shift %.6g, restarting with ncv=%d", sigma, ncv)
    else:
        raise EigenSolverError(f"eigensolver failed after {max_restarts} restarts: {last_error}")

    order = np.argsort(values)
    values, vectors = values[order], vectors[:, order]
    pairs = []
    for j, (lam, x) in enumerate(zip(values, vectors.T)):
        x = x / np.sqrt(x @ (B @ x))
        res = _residual(K, M, lam, x)
        for _ in range(3):
            if res <= RESIDUAL_TOL:
                break
            polish = Factorization((A - (lam + 1e-9 * max(1.0, abs(lam))) * B).tocsc(), check_pivots=False)
            y = polish.solve(B @ x)
            x = y / np.sqrt(y @ (B @ y))
            lam = float(x @ (A @ x))
            res = _residual(K, M, lam, x)
        if res > RESIDUAL_TOL:
            raise EigenSolverError(f"eigenpair {j} residual {res:.2e} above {RESIDUAL_TOL:.0e}", {"eigenvalue": float(lam)})
        field = fix_sign(DiscreteField(K.dofmap, K.expand(x)), probe)
        pairs.append(EigenPair(float(lam), field, res))
    lams = np.array([p.eigenvalue for p in pairs])
    for j, p in enumerate(pairs):
        others = np.delete(lams, j)
        if len(others):
            p.gap = float(np.min(np.abs(others - p.eigenvalue)))
            p.cluster = bool(p.gap < CLUSTER_RTOL * abs(p.eigenvalue))
    logger.debug("eigenvalues near %.6g: %s", shift, np.array2string(lams, precision=8))
    return pairs


def gram_matrix(pairs: Sequence[EigenPair], M: SparseOperator) -> np.ndarray:
    X = np.column_stack([M.restrict(p.field.values) for p in pairs])
    return X.T @ (M.matrix @ X)


def cavity_mode(disc: Discretization, mode: int = 1, probe=ANCHOR_PROBE) -> EigenPair:
    """The ``mode``-th (1-based) eigenpair with its distance to the rest of the spectrum."""
    pairs = dirichlet_eigs(disc.K, disc.M, count=mode + 1, shift=0.0, probe=probe)
    pair = pairs[mode - 1]
    lams = np.array([p.eigenvalue for p in pairs])
    pair.gap = float(np.min(np.abs(np.delete(lams, mode - 1) - pair.eigenvalue)))
    pair.index = mode
    return pair


def track_eigenvalue(
    reference: EigenPair,
    closed: Discretization,
    window: Optional[float] = None,
    probe=ANCHOR_PROBE,
) -> EigenPair:
    """The unique eigenpair of the closed resonator within ``window`` of λ₀.

    The window defaults to half the spectral gap of the cavity at λ₀; zero or
    several candidates raise :class:`TrackingError`.
    """
    if reference.cluster:
        raise TrackingError("reference eigenvalue is part of a cluster", {"eigenvalue": reference.eigenvalue})
    window = 0.5 * reference.gap if window is None else window
    if not np.isfinite(window) or window <= 0:
        raise TrackingError("tracking window is undefined; compute the reference with cavity_mode")
    lam0 = reference.eigenvalue
    pairs = dirichlet_eigs(closed.K, closed.M, count=4, shift=lam0, probe=probe)
    inside = [p for p in pairs if abs(p.eigenvalue - lam0) < window]
    if len(inside) != 1:
        raise TrackingError(
            f"{len(inside)} eigenvalues within {window:.4g} of {lam0:.8g}",
            {"candidates": [p.eigenvalue for p in inside], "window": window},
        )
    pair = inside[0]
    pair.gap = reference.gap
    pair.index = reference.index
    return pair


# --- nested-mesh transfer ------------------------------------------------------------


def restrict_to_submesh(values: np.ndarray, parent: DofMap, child: DofMap) -> np.ndarray:
    """Values of a parent-mesh field at the dofs of a submesh."""
    sub = child.mesh
    if sub.parent_nodes is None:
        raise TrackingError("meshes are not nested: submesh has no parent map")
    out = np.empty(child.n_dofs, dtype=np.asarray(values).dtype)
    out[: sub.n_vertices] = values[sub.parent_nodes]
    if child.order == 2:
        edges, _ = sub.unique_edges()
        out[sub.n_vertices :] = values[parent.edge_dofs(sub.parent_nodes[edges])[:, 2]]
    return out


def extend_from_submesh(values: np.ndarray, child: DofMap, parent: DofMap) -> np.ndarray:
    """Zero extension of a submesh field to the parent dofs."""
    sub = child.mesh
    out = np.zeros(parent.n_dofs, dtype=np.asarray(values).dtype)
    out[sub.parent_nodes] = values[: sub.n_vertices]
    if child.order == 2:
        edges, _ = sub.unique_edges()
        out[parent.edge_dofs(sub.parent_nodes[edges])[:, 2]] = values[sub.n_vertices :]
    return out


def boundary_distance(cavity: CavitySpec, points: np.ndarray, samples: int = 8192) -> np.ndarray:
    tree = cKDTree(cavity.sample(samples))
    return tree.query(points)[0]


def compare_fields(
    u0: EigenPair,
    v: EigenPair,
    closed: Discretization,
    cavity: CavitySpec,
    margin: float = 0.1,
    eps: float = float("nan"),
) -> ComparisonReport:
    """Differences between u₀ on 𝒞 and v_ε on 𝒞(ε) over nested meshes.

    ``u0`` must live on the cavity submesh of ``closed.mesh``. Sup norms are
    taken over all cavity dofs and over the compact part at distance
    ``margin`` from ∂𝒞; gradient sups use element corner values.
    """
    child = u0.field.dofmap
    if child.mesh.parent_nodes is None:
        raise TrackingError("u0 is not defined on a submesh of the closed resonator mesh")
    v_on_cavity = restrict_to_submesh(v.field.values, closed.dofmap, child)
    diff = u0.field.values - v_on_cavity
    dist = boundary_distance(cavity, child.coordinates)
    inner = dist >= margin
    sup_full = float(np.max(np.abs(diff)))
    sup_compact = float(np.max(np.abs(diff[inner]))) if inner.any() else float("nan")

    g_diff = u0.field.vertex_gradients() - DiscreteField(child, v_on_cavity).vertex_gradients()
    g_norm = np.linalg.norm(g_diff, axis=2)
    tri_dist = dist[child.mesh.triangles].min(axis=1)
    grad_full = float(g_norm.max())
    grad_compact = float(g_norm[tri_dist >= margin].max()) if np.any(tri_dist >= margin) else float("nan")

    extended = extend_from_submesh(u0.field.values, child, closed.dofmap)
    e = extended - v.field.values
    l2 = float(np.sqrt(e @ (closed.M.full @ e)))
    return ComparisonReport(
        eps=float(eps),
        sup_full=sup_full,
        sup_compact=sup_compact,
        grad_sup_full=grad_full,
        grad_sup_compact=grad_compact,
        l2_extension=l2,
        eigenvalue_gap=abs(u0.eigenvalue - v.eigenvalue),
        margin=margin,
    )


def closed_problem(spec, eps: float, h: float, neck_layers: int = 8, order: int = 2, grading: float = 0.3):
    """Closed resonator 𝒞(ε) and its cavity submesh, discretized on nested meshes."""
    spec_eps = spec.with_eps(eps)
    mesh = triangulate(spec_eps, h, neck_layers, domain="closed", grading=grading)
    closed = Discretization.build(mesh, order)
    cavity = Discretization.build(mesh.submesh([CAVITY]), order)
    return spec_eps, closed, cavity


def comparison_sweep(
    spec,
    eps_values: Sequence[float],
    h: float,
    mode: int = 1,
    neck_layers: int = 8,
    order: int = 2,
    margin: float = 0.1,
) -> Tuple[pd.DataFrame, Dict[str, RateFit]]:
    """Per-ε comparison rows and fitted rates β̂ of each norm against ε."""
    rows = []
    for eps in sorted(eps_values, reverse=True):
        spec_eps, closed, cavity = closed_problem(spec, eps, h, neck_layers, order)
        u0 = cavity_mode(cavity, mode)
        v = track_eigenvalue(u0, closed)
        report = compare_fields(u0, v, closed, spec_eps.cavity, margin, eps)
        rows.append({**report.to_dict(), "lambda0": u0.eigenvalue, "lambda_eps": v.eigenvalue})
        logger.info("eps=%.3f lambda_eps=%.10g sup=%.3e", eps, v.eigenvalue, report.sup_compact)
    table = pd.DataFrame(rows)
    log_eps = np.log(table["eps"].to_numpy())
    fits = {
        key: RateFit.fit(log_eps, np.log(table[key].to_numpy()))
        for key in ("sup_compact", "grad_sup_compact", "l2_extension", "eigenvalue_gap")
    }
    return table, fits


# --- dumbbell splitting ------------------------------------------------------------


@dataclass
class SplittingResult:
    table: pd.DataFrame
    fit: RateFit
    target: float
    mode: int

    @property
    def relative_error(self) -> float:
        return abs(self.fit.slope - self.target) / abs(self.target)


def _nearest(pairs: Sequence[EigenPair], target: float, window: float) -> EigenPair:
    inside = [p for p in pairs if abs(p.eigenvalue - target) < window]
    if len(inside) != 1:
        raise TrackingError(
            f"{len(inside)} eigenvalues within {window:.4g} of {target:.8g}",
            {"candidates": [p.eigenvalue for p in inside]},
        )
    return inside[0]


def splitting(
    dumbbell: DumbbellSpec,
    eps_values: Sequence[float],
    h: float,
    neck_layers: int = 8,
    order: int = 2,
    mode: int = 1,
) -> SplittingResult:
    """Even/odd eigenvalue pair of the symmetric dumbbell near a cavity eigenvalue.

    The half dumbbell is solved twice: with the natural condition on the
    symmetry plane (even branch E₁) and with Dirichlet there (odd branch
    E₂). ln(E₂ − E₁) is fitted against 1/ε; the target slope is −α₀L.
    """
    cavity_disc = Discretization.build(triangulate(dumbbell.cavity, h), order)
    reference = cavity_mode(cavity_disc, mode, probe=None)
    window = 0.5 * reference.gap
    rows = []
    for eps in sorted(eps_values, reverse=True):
        spec = dumbbell.with_eps(eps)
        half = triangulate(spec, h, neck_layers, half=True)
        even = Discretization.build(half, order, natural=(SYMMETRY_PLANE,))
        odd = Discretization.build(half, order, natural=())
        e1 = _nearest(dirichlet_eigs(even.K, even.M, 3, reference.eigenvalue, probe=None), reference.eigenvalue, window)
        e2 = _nearest(dirichlet_eigs(odd.K, odd.M, 3, reference.eigenvalue, probe=None), reference.eigenvalue, window)
        split = e2.eigenvalue - e1.eigenvalue
        rows.append({"eps": eps, "E1": e1.eigenvalue, "E2": e2.eigenvalue, "split": split, "inv_eps": 1.0 / eps})
        logger.info("dumbbell eps=%.3f E1=%.10g E2=%.10g split=%.3e", eps, e1.eigenvalue, e2.eigenvalue, split)
    table = pd.DataFrame(rows)
    if np.any(table["split"] <= 0):
        raise FitRefused("non-positive splitting; the pair is not resolved", {"splits": table["split"].tolist()})
    table["ln_split"] = np.log(table["split"])
    fit = RateFit.fit(table["inv_eps"], table["ln_split"])
    target = -dumbbell.alpha0 * dumbbell.neck_length
    logger.info("splitting slope %.4f, target %.4f", fit.slope, target)
    return SplittingResult(table, fit, target, mode)

"""Nodal domains of discrete eigenfunctions.

Elements are labelled by the sign of the field at their centroid; elements
whose corner values disagree in sign, or whose centroid value is within
``tau`` of zero, form the band that stands in for the nodal set. Nodal
domains are the edge-connected components of equally signed elements.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.special import jn_zeros

from resonate.errors import HypothesisError, UnstableNodalCount
from resonate.fem import DiscreteField, normal_flux, shape_values
from resonate.mesh import CAVITY, DIRICHLET_WALL, INTERFACE, NECK, Mesh
from resonate.spectra import Discretization, EigenPair

logger = logging.getLogger(__name__)

J01 = float(jn_zeros(0, 1)[0])
TAU = 1e-3
ABSORB_FRACTION = 1e-3


def faber_krahn_floor(lam: float) -> float:
    """Smallest area a nodal domain of an eigenfunction with eigenvalue λ can have."""
    return np.pi * J01**2 / lam


@dataclass(eq=False)
class NodalDecomposition:
    labels: np.ndarray
    components: np.ndarray
    volumes: np.ndarray
    signs: np.ndarray
    band_volume: float
    total_volume: float
    tau: float
    stable: bool = True
    counts: Dict[float, int] = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.volumes)

    @property
    def min_volume(self) -> float:
        return float(self.volumes.min()) if len(self.volumes) else 0.0

    def to_dict(self) -> Dict:
        return {
            "count": self.count,
            "volumes": self.volumes.tolist(),
            "signs": self.signs.tolist(),
            "band_volume": self.band_volume,
            "tau": self.tau,
            "stable": self.stable,
        }


def element_values(field_: DiscreteField, elements: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Centroid values and corner values (nt, 3) of a real field."""
    cells = field_.dofmap.cells if elements is None else field_.dofmap.cells[elements]
    u = np.real(field_.values)[cells]
    centre = u @ shape_values(np.full((1, 3), 1.0 / 3.0), field_.order)[0]
    return centre, u[:, :3]


def _label(field_: DiscreteField, tau: float, elements: np.ndarray) -> np.ndarray:
    centre, corners = element_values(field_, elements)
    scale = np.max(np.abs(np.real(field_.values)))
    cut = tau * scale
    sign = np.sign(centre)
    sign[np.abs(centre) <= cut] = 0
    disagree = np.any(corners * sign[:, None] < -cut, axis=1)
    sign[disagree] = 0
    return sign.astype(np.int8)


def _components(mesh: Mesh, elements: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Edge-connected components of equally labelled, non-band elements."""
    local = -np.ones(mesh.n_triangles, dtype=np.int64)
    local[elements] = np.arange(len(elements))
    pairs = mesh.edge_triangles()
    pairs = pairs[(pairs[:, 1] >= 0)]
    a, b = local[pairs[:, 0]], local[pairs[:, 1]]
    keep = (a >= 0) & (b >= 0)
    a, b = a[keep], b[keep]
    keep = (labels[a] == labels[b]) & (labels[a] != 0)
    n = len(elements)
    graph = sp.coo_matrix((np.ones(keep.sum()), (a[keep], b[keep])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    comp = comp.astype(np.int64)
    comp[labels == 0] = -1
    return comp


def _decompose(field_: DiscreteField, tau: float, elements: np.ndarray) -> NodalDecomposition:
    mesh = field_.mesh
    areas = mesh.areas()[elements]
    labels = _label(field_, tau, elements)
    comp = _components(mesh, elements, labels)
    ids = np.unique(comp[comp >= 0])
    remap = -np.ones(comp.max() + 1 if len(comp) and comp.max() >= 0 else 1, dtype=np.int64)
    remap[ids] = np.arange(len(ids))
    comp = np.where(comp >= 0, remap[np.maximum(comp, 0)], -1)
    volumes = np.bincount(comp[comp >= 0], weights=areas[comp >= 0], minlength=len(ids))
    total = float(areas.sum())
    # isolated specks next to the band are discretization noise, not domains
    tiny = np.nonzero(volumes < ABSORB_FRACTION * total)[0]
    if len(tiny):
        absorbed = np.isin(comp, tiny)
        labels = labels.copy()
        labels[absorbed] = 0
        comp[absorbed] = -1
        kept = np.setdiff1d(np.arange(len(ids)), tiny)
        remap = -np.ones(len(ids), dtype=np.int64)
        remap[kept] = np.arange(len(kept))
        comp = np.where(comp >= 0, remap[np.maximum(comp, 0)], -1)
        volumes = volumes[kept]
    signs = np.zeros(len(volumes), dtype=np.int8)
    signs[comp[comp >= 0]] = labels[comp >= 0]
    band = float(areas[comp < 0].sum())
    return NodalDecomposition(labels, comp, volumes, signs, band, total, tau)


def nodal_domains(
    field_: DiscreteField,
    tau: float = TAU,
    elements: Optional[np.ndarray] = None,
) -> NodalDecomposition:
    """Nodal domains of ``field_`` over ``elements`` (all by default).

    The count is accepted when it agrees between ``tau`` and ``tau/2``;
    otherwise the ``tau/2`` and ``tau/4`` counts must agree and the result is
    flagged unstable. Disagreement at both levels raises
    :class:`UnstableNodalCount`.

    Args:
        field_: real discrete field.
        tau: band threshold relative to sup|field|.
        elements: restrict to these triangles.

    Returns:
        NodalDecomposition: labels, component ids and volumes.
    """
    elements = np.arange(field_.mesh.n_triangles) if elements is None else np.asarray(elements)
    levels = [tau, tau / 2, tau / 4]
    results = [_decompose(field_, t, elements) for t in levels]
    counts = {t: r.count for t, r in zip(levels, results)}
    if results[0].count == results[1].count:
        result = results[0]
    elif results[1].count == results[2].count:
        result = results[1]
        result.stable = False
        logger.warning("nodal count changed between tau=%.1e and tau/2, using tau/2", tau)
    else:
        raise UnstableNodalCount(
            "nodal domain count depends on the band threshold",
            {"counts": {f"{t:.2e}": c for t, c in counts.items()}},
        )
    result.counts = counts
    return result


# --- checks --------------------------------------------------------------------------


def courant_check(pairs: Sequence[EigenPair], tau: float = TAU, cluster_rtol: float = 1e-3) -> pd.DataFrame:
    """count(k-th eigenfunction) ≤ k for each simple eigenpair.

    Pairs must be sorted ascending and carry 1-based ``index``; a pair within
    ``cluster_rtol`` of a neighbour is reported as skipped.
    """
    lams = np.array([p.eigenvalue for p in pairs])
    rows = []
    for j, pair in enumerate(pairs):
        k = pair.index if pair.index is not None else j + 1
        others = np.delete(lams, j)
        clustered = pair.cluster or (len(others) and np.min(np.abs(others - pair.eigenvalue)) < cluster_rtol * pair.eigenvalue)
        if clustered:
            rows.append({"index": k, "eigenvalue": pair.eigenvalue, "count": -1, "passed": True, "skipped": True})
            continue
        decomp = nodal_domains(pair.field, tau)
        rows.append(
            {"index": k, "eigenvalue": pair.eigenvalue, "count": decomp.count,
             "passed": decomp.count <= k, "skipped": False}
        )
    return pd.DataFrame(rows)


@dataclass
class FloorReport:
    floor: float
    min_volume: float
    band_volume: float
    passed: bool
    slack: float


def volume_floor_check(decomp: NodalDecomposition, lam: float) -> FloorReport:
    """Every nodal domain has area at least π j₀,₁²/λ, up to the band area."""
    floor = faber_krahn_floor(lam)
    slack = decomp.min_volume - (floor - decomp.band_volume)
    return FloorReport(floor, decomp.min_volume, decomp.band_volume, bool(slack >= 0), float(slack))


@dataclass
class PositivityReport:
    eps: float
    delta: float
    clearance: float
    minimum: float
    maximum: float
    hopf_flux: float
    passed: bool

    @property
    def hopf(self) -> bool:
        return self.hopf_flux < 0

    def to_dict(self) -> Dict:
        return {**self.__dict__, "hopf": self.hopf}


def anchor_clearance(u0: DiscreteField, tau: float = TAU, anchor=(0.0, 0.0)) -> float:
    """Distance from the anchor to the band of ``u0`` (infinite without band)."""
    decomp = nodal_domains(u0, tau)
    band = np.nonzero(decomp.components < 0)[0]
    if len(band) == 0:
        return float("inf")
    corners = u0.mesh.vertices[np.unique(u0.mesh.triangles[band])]
    return float(np.min(np.hypot(corners[:, 0] - anchor[0], corners[:, 1] - anchor[1])))


def _local_size(mesh: Mesh, radius: float, anchor=(0.0, 0.0)) -> float:
    c = mesh.centroids()
    near = np.hypot(c[:, 0] - anchor[0], c[:, 1] - anchor[1]) <= radius
    lengths = mesh.edge_lengths()
    return float(lengths[near].max() if near.any() else lengths.max())


def hopf_flux(u0: EigenPair, cavity: Discretization, radius: float, anchor=(0.0, 0.0)) -> float:
    """Mean outward normal derivative of u₀ on the cavity boundary near the anchor."""
    mesh = cavity.mesh
    total, length = 0.0, 0.0
    for tag in (INTERFACE, DIRICHLET_WALL):
        edges = mesh.tagged(tag)
        if len(edges) == 0:
            continue
        mid = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
        near = np.hypot(mid[:, 0] - anchor[0], mid[:, 1] - anchor[1]) <= radius
        if not near.any():
            continue
        flux = normal_flux(u0.field, tag, cavity.K, cavity.M, shift=u0.eigenvalue, select=near)
        total += float(np.real(np.sum(flux.values * flux.lengths)))
        length += float(flux.lengths.sum())
    return total / length if length else float("nan")


def neck_positivity(
    v: EigenPair,
    u0: EigenPair,
    cavity: Discretization,
    spec,
    delta: Optional[float] = None,
    tau: float = TAU,
) -> PositivityReport:
    """Strict sign of v_ε on 𝒯(ε) ∪ (𝒞(ε) ∩ {|x| ≤ δ}).

    The anchor must clear the nodal band of u₀ by more than δ; otherwise the
    hypothesis, not the conclusion, fails and :class:`HypothesisError` is
    raised. δ defaults to min(3ε, half the clearance).
    """
    clearance = anchor_clearance(u0.field, tau)
    h_anchor = _local_size(cavity.mesh, 3 * spec.eps)
    if clearance <= 2 * h_anchor:
        raise HypothesisError(
            f"anchor lies on the nodal set of u0 (clearance {clearance:.3g})",
            {"clearance": clearance, "mode": u0.index},
        )
    delta = min(3 * spec.eps, 0.5 * clearance) if delta is None else delta
    if delta >= clearance:
        raise HypothesisError(
            f"delta {delta:.3g} reaches the nodal set of u0 at distance {clearance:.3g}",
            {"clearance": clearance, "delta": delta},
        )
    mesh = v.field.mesh
    dofmap = v.field.dofmap
    c = mesh.centroids()
    region = (mesh.regions == NECK) | ((mesh.regions == CAVITY) & (np.hypot(c[:, 0], c[:, 1]) <= delta))
    dofs = np.unique(dofmap.cells[region])
    wall = dofmap.boundary_dofs(natural=())
    dofs = np.setdiff1d(dofs, wall)
    values = np.real(v.field.values[dofs])
    vmin, vmax = float(values.min()), float(values.max())
    flux = hopf_flux(u0, cavity, max(spec.eps, 2 * h_anchor))
    passed = bool(vmin > 0 or vmax < 0)
    logger.info("eps=%.3f delta=%.3f: v in [%.3e, %.3e], hopf flux %.3e", spec.eps, delta, vmin, vmax, flux)
    return PositivityReport(spec.eps, delta, clearance, vmin, vmax, flux, passed)


def count_monotonicity(
    reference: NodalDecomposition, family: Sequence[Tuple[float, NodalDecomposition, float]]
) -> Tuple[pd.DataFrame, Optional[float]]:
    """count(v_ε) ≤ count(u₀) along a family of (ε, decomposition, neck area).

    Returns the rows and the largest ε below which every row satisfies the
    bound (None if the smallest ε already violates it).
    """
    rows = [
        {"epsilon": eps, "count": d.count, "reference": reference.count,
         "neck_volume": neck_area, "passed": d.count <= reference.count}
        for eps, d, neck_area in sorted(family, key=lambda r: r[0], reverse=True)
    ]
    table = pd.DataFrame(rows)
    threshold = None
    for row in reversed(rows):
        if not row["passed"]:
            break
        threshold = row["epsilon"]
    return table, threshold


def nodal_report(decomp: NodalDecomposition, lam: float, index: Optional[int] = None,
                 positivity: Optional[PositivityReport] = None) -> Dict:
    """JSON-ready summary of one field."""
    floor = volume_floor_check(decomp, lam)
    verdicts = {"floor": floor.passed}
    if index is not None:
        verdicts["courant"] = decomp.count <= index
    if positivity is not None:
        verdicts["positivity"] = positivity.passed
    return {**decomp.to_dict(), "eigenvalue": lam, "floor": floor.floor, "verdicts": verdicts}

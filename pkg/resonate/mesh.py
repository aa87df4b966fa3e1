"""Conforming graded triangulations with tagged boundaries.

Meshes are produced by Delaunay refinement on top of
``scipy.spatial.Delaunay``: boundary pieces are curves discretized by a
size field, encroached boundary segments are split at their parameter
midpoint (so every boundary vertex lies on the exact curve), and skinny or
oversized triangles get their circumcenter inserted until every triangle
has a circumradius-to-shortest-edge ratio of at most √2 (minimum angle
above 20.7°). The neck is seeded with an equilateral lattice whose rows
guarantee ``neck_layers`` elements across the width.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path as FilePath
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from matplotlib.path import Path
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Delaunay, cKDTree

from resonate.errors import GradingError, MeshError
from resonate.geometry import CavitySpec, DumbbellSpec, RectangleSpec, ResonatorSpec

logger = logging.getLogger(__name__)

REGIONS = ("cavity", "neck", "exterior", "absorber")
CAVITY, NECK, EXTERIOR, ABSORBER = range(4)
TAGS = ("dirichlet_wall", "absorber_outer", "interface_b_eps", "symmetry_plane")
DIRICHLET_WALL, ABSORBER_OUTER, INTERFACE, SYMMETRY_PLANE = range(4)
INTERNAL = -1

MIN_ANGLE_DEG = 20.0
_RATIO_BOUND = np.sqrt(2.0)


@dataclass(frozen=True)
class MeshQuality:
    min_angle: float
    max_aspect: float
    h_max: Dict[str, float]
    element_count: int


@dataclass
class Mesh:
    """Triangulation with region codes per triangle and tags per boundary edge.

    ``parent_nodes``/``parent_triangles`` map a submesh back to the mesh it
    was cut from.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    regions: np.ndarray
    edges: np.ndarray
    edge_tags: np.ndarray
    parent_nodes: Optional[np.ndarray] = None
    parent_triangles: Optional[np.ndarray] = None
    _cache: Dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def unique_edges(self) -> Tuple[np.ndarray, np.ndarray]:
        """Sorted unique edges and, per triangle, the index of the edge opposite each vertex."""
        if "edges" not in self._cache:
            t = self.triangles
            local = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1).reshape(-1, 2)
            local = np.sort(local, axis=1)
            uniq, inverse = np.unique(local, axis=0, return_inverse=True)
            self._cache["edges"] = (uniq, inverse.reshape(-1, 3))
        return self._cache["edges"]

    def edge_triangles(self) -> np.ndarray:
        """For each unique edge the two adjacent triangles (−1 on the boundary)."""
        if "edge_tri" not in self._cache:
            uniq, tri_edges = self.unique_edges()
            out = np.full((len(uniq), 2), -1, dtype=np.int64)
            flat = tri_edges.ravel()
            owner = np.repeat(np.arange(self.n_triangles), 3)
            order = np.argsort(flat, kind="stable")
            flat, owner = flat[order], owner[order]
            first = np.ones(len(flat), dtype=bool)
            first[1:] = flat[1:] != flat[:-1]
            out[flat[first], 0] = owner[first]
            out[flat[~first], 1] = owner[~first]
            self._cache["edge_tri"] = out
        return self._cache["edge_tri"]

    def boundary_edges(self) -> np.ndarray:
        uniq, _ = self.unique_edges()
        return uniq[self.edge_triangles()[:, 1] < 0]

    def tagged(self, tag: Union[int, str]) -> np.ndarray:
        code = TAGS.index(tag) if isinstance(tag, str) else tag
        return self.edges[self.edge_tags == code]

    def region_mask(self, regions: Iterable[Union[int, str]]) -> np.ndarray:
        codes = [REGIONS.index(r) if isinstance(r, str) else r for r in regions]
        return np.isin(self.regions, codes)

    def area(self, regions: Optional[Iterable] = None) -> float:
        a = self.areas()
        if regions is not None:
            a = a[self.region_mask(regions)]
        return float(a.sum())

    def submesh(self, selection, boundary_tag: int = DIRICHLET_WALL) -> "Mesh":
        """Triangles selected by region names/codes or a boolean mask.

        Tagged edges that remain on the new boundary keep their tag; edges that
        became boundary edges by the cut get ``boundary_tag``.
        """
        mask = selection if isinstance(selection, np.ndarray) and selection.dtype == bool else self.region_mask(selection)
        tri_ids = np.nonzero(mask)[0]
        tris = self.triangles[tri_ids]
        nodes, local = np.unique(tris, return_inverse=True)
        sub = Mesh(
            self.vertices[nodes].copy(),
            local.reshape(-1, 3).astype(np.int64),
            self.regions[tri_ids].copy(),
            np.zeros((0, 2), dtype=np.int64),
            np.zeros(0, dtype=np.int64),
            parent_nodes=nodes,
            parent_triangles=tri_ids,
        )
        renumber = -np.ones(self.n_vertices, dtype=np.int64)
        renumber[nodes] = np.arange(len(nodes))
        bnd = sub.boundary_edges()
        old_keys = {tuple(sorted(e)): tag for e, tag in zip(renumber[self.edges], self.edge_tags)}
        tags = np.array([old_keys.get(tuple(e), boundary_tag) for e in bnd], dtype=np.int64)
        interior = sub.unique_edges()[0][sub.edge_triangles()[:, 1] >= 0]
        keep_interior = [
            (tuple(e), old_keys[tuple(e)]) for e in interior if old_keys.get(tuple(e), INTERNAL) == INTERFACE
        ]
        edges = np.vstack([bnd] + [np.array([k for k, _ in keep_interior], dtype=np.int64).reshape(-1, 2)])
        tags = np.concatenate([tags, np.array([t for _, t in keep_interior], dtype=np.int64)])
        sub.edges, sub.edge_tags = edges, tags
        return sub

    def angles(self) -> np.ndarray:
        return _corner_angles(self.vertices[self.triangles])

    def edge_lengths(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return np.stack([np.linalg.norm(p[:, (k + 1) % 3] - p[:, (k + 2) % 3], axis=1) for k in range(3)], axis=1)

    def quality(self) -> MeshQuality:
        lengths = self.edge_lengths()
        angles = self.angles()
        aspect = _circumradius(self.vertices[self.triangles]) / lengths.min(axis=1)
        h_max = {
            name: float(lengths[self.regions == code].max())
            for code, name in enumerate(REGIONS)
            if np.any(self.regions == code)
        }
        return MeshQuality(float(angles.min()), float(aspect.max()), h_max, self.n_triangles)


def _circumradius(p: np.ndarray) -> np.ndarray:
    a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    return a * b * c / (4.0 * area)


def _circumcenters(p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    b = p[:, 1] - p[:, 0]
    c = p[:, 2] - p[:, 0]
    d = 2.0 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    bb = np.einsum("ij,ij->i", b, b)
    cc = np.einsum("ij,ij->i", c, c)
    ux = (c[:, 1] * bb - b[:, 1] * cc) / d
    uy = (b[:, 0] * cc - c[:, 0] * bb) / d
    u = np.stack([ux, uy], axis=-1)
    return p[:, 0] + u, np.hypot(ux, uy)


# --- mesher ---------------------------------------------------------------------------


@dataclass
class _Piece:
    curve: Callable[[np.ndarray], np.ndarray]
    params: List[float]
    ids: List[int]
    tag: int


@dataclass
class _Region:
    code: int
    outer: List[Tuple[int, bool]]
    holes: List[List[Tuple[int, bool]]] = field(default_factory=list)


class _Mesher:
    """Delaunay refinement over curved pieces, deterministic for fixed input."""

    def __init__(self, size: Callable[[np.ndarray], np.ndarray], max_iter: int = 400, max_points: int = 2_000_000):
        self.size = size
        self.max_iter = max_iter
        self.max_points = max_points
        self.points: List[Tuple[float, float]] = []
        self.pieces: List[_Piece] = []
        self.regions: List[_Region] = []

    def add_point(self, p) -> int:
        self.points.append((float(p[0]), float(p[1])))
        return len(self.points) - 1

    def add_points(self, pts: np.ndarray) -> None:
        for p in np.asarray(pts, dtype=float).reshape(-1, 2):
            self.add_point(p)

    def add_piece(
        self,
        curve: Callable[[np.ndarray], np.ndarray],
        t0: float,
        t1: float,
        id0: int,
        id1: int,
        tag: int,
        params: Optional[Sequence[float]] = None,
        min_segments: int = 1,
    ) -> int:
        if params is None:
            fine = np.linspace(t0, t1, 4001)
            pts = curve(fine)
            ds = np.hypot(*np.diff(pts, axis=0).T)
            mids = 0.5 * (pts[1:] + pts[:-1])
            density = ds / self.size(mids)
            cum = np.concatenate([[0.0], np.cumsum(density)])
            n = max(min_segments, int(np.ceil(cum[-1])))
            targets = np.linspace(0.0, cum[-1], n + 1)[1:-1]
            params = np.interp(targets, cum, fine)
        params = [float(t) for t in params]
        interior_ids = [self.add_point(p) for p in curve(np.array(params))] if params else []
        self.pieces.append(_Piece(curve, [t0] + params + [t1], [id0] + interior_ids + [id1], tag))
        return len(self.pieces) - 1

    def add_region(self, code: int, outer: List[Tuple[int, bool]], holes: Optional[List] = None) -> None:
        self.regions.append(_Region(code, outer, holes or []))

    # --- geometry of current discretization ---------------------------------------------

    def _loop_path(self, loop: List[Tuple[int, bool]], pts: np.ndarray) -> Path:
        ids: List[int] = []
        for index, rev in loop:
            chain = self.pieces[index].ids[::-1] if rev else self.pieces[index].ids
            ids.extend(chain[:-1])
        return Path(pts[ids])

    def _region_of(self, points: np.ndarray, pts: np.ndarray) -> np.ndarray:
        out = np.full(len(points), -1, dtype=int)
        for region in self.regions:
            inside = self._loop_path(region.outer, pts).contains_points(points)
            for hole in region.holes:
                inside &= ~self._loop_path(hole, pts).contains_points(points)
            out[(out < 0) & inside] = region.code
        return out

    def _segments(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        seg, owner, pos = [], [], []
        for k, piece in enumerate(self.pieces):
            ids = piece.ids
            for j in range(len(ids) - 1):
                seg.append((ids[j], ids[j + 1]))
                owner.append(k)
                pos.append(j)
        return np.array(seg, dtype=np.int64), np.array(owner), np.array(pos)

    def _split(self, marks: Iterable[Tuple[int, int]]) -> int:
        by_piece: Dict[int, set] = {}
        for k, j in marks:
            by_piece.setdefault(int(k), set()).add(int(j))
        count = 0
        for k in sorted(by_piece):
            piece = self.pieces[k]
            for j in sorted(by_piece[k], reverse=True):
                t = 0.5 * (piece.params[j] + piece.params[j + 1])
                new_id = self.add_point(piece.curve(np.array([t]))[0])
                piece.params.insert(j + 1, t)
                piece.ids.insert(j + 1, new_id)
                count += 1
        return count

    def _encroached_by_points(self, pts: np.ndarray, seg: np.ndarray) -> np.ndarray:
        mid = 0.5 * (pts[seg[:, 0]] + pts[seg[:, 1]])
        half = 0.5 * np.linalg.norm(pts[seg[:, 0]] - pts[seg[:, 1]], axis=1)
        tree = cKDTree(pts)
        hits = tree.query_ball_point(mid, half * (1.0 + 1e-9))
        out = np.zeros(len(seg), dtype=bool)
        for i, near in enumerate(hits):
            for q in near:
                if q != seg[i, 0] and q != seg[i, 1]:
                    out[i] = True
                    break
        return out

    def _classify(self, dt: Delaunay, pts: np.ndarray, seg: np.ndarray) -> np.ndarray:
        tri = dt.simplices
        n = len(pts)
        seg_keys = np.sort(seg, axis=1)
        seg_keys = seg_keys[:, 0] * n + seg_keys[:, 1]
        rows, cols = [], []
        for k in range(3):
            nb = dt.neighbors[:, k]
            a = tri[:, (k + 1) % 3]
            b = tri[:, (k + 2) % 3]
            keys = np.minimum(a, b) * n + np.maximum(a, b)
            link = (nb >= 0) & ~np.isin(keys, seg_keys)
            rows.append(np.nonzero(link)[0])
            cols.append(nb[link])
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(tri), len(tri)))
        ncomp, labels = connected_components(graph, directed=False)
        cent = pts[tri].mean(axis=1)
        first = np.full(ncomp, -1)
        first[labels[::-1]] = np.arange(len(tri))[::-1]
        comp_region = self._region_of(cent[first], pts)
        return comp_region[labels]

    def run(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        for iteration in range(self.max_iter):
            pts = np.array(self.points)
            if len(pts) > self.max_points:
                break
            seg, owner, pos = self._segments()
            enc = self._encroached_by_points(pts, seg)
            if enc.any():
                self._split(zip(owner[enc], pos[enc]))
                continue
            dt = Delaunay(pts)
            region = self._classify(dt, pts, seg)
            keep = region >= 0
            tri = dt.simplices[keep]
            corners = pts[tri]
            centers, radius = _circumcenters(corners)
            shortest = np.stack(
                [np.linalg.norm(corners[:, (k + 1) % 3] - corners[:, (k + 2) % 3], axis=1) for k in range(3)],
                axis=1,
            ).min(axis=1)
            target = self.size(corners.mean(axis=1)) / np.sqrt(3.0)
            bad = (radius > _RATIO_BOUND * shortest * (1.0 + 1e-9)) | (radius > target * (1.0 + 1e-6))
            if not bad.any():
                return pts, tri, region[keep], seg, np.array([self.pieces[k].tag for k in owner])
            inserted = self._refine_step(pts, seg, owner, pos, centers[bad], radius[bad])
            logger.debug("refinement pass %d: %d bad triangles, %d points inserted", iteration, int(bad.sum()), inserted)
            self._last_bad = (region[keep][bad], centers[bad])
        codes, _ = getattr(self, "_last_bad", (np.array([0]), None))
        worst = REGIONS[int(np.bincount(codes[codes >= 0]).argmax())] if np.any(codes >= 0) else "unknown"
        raise GradingError(
            f"refinement did not converge after {self.max_iter} passes ({len(self.points)} points)",
            region=worst,
        )

    def _refine_step(self, pts, seg, owner, pos, centers, radius) -> int:
        order = np.argsort(-radius, kind="stable")
        centers, radius = centers[order], radius[order]
        tree = cKDTree(centers)
        suppressed = np.zeros(len(centers), dtype=bool)
        accepted = []
        for i in range(len(centers)):
            if suppressed[i]:
                continue
            accepted.append(i)
            for j in tree.query_ball_point(centers[i], 0.5 * radius[i]):
                suppressed[j] = True
        cand = centers[accepted]

        mid = 0.5 * (pts[seg[:, 0]] + pts[seg[:, 1]])
        half = 0.5 * np.linalg.norm(pts[seg[:, 0]] - pts[seg[:, 1]], axis=1)
        seg_tree = cKDTree(mid)
        splits = set()
        free = []
        for c, near in zip(cand, seg_tree.query_ball_point(cand, half.max() * (1.0 + 1e-9))):
            hit = [s for s in near if np.hypot(*(c - mid[s])) <= half[s] * (1.0 + 1e-9)]
            if hit:
                splits.update((int(owner[s]), int(pos[s])) for s in hit)
            else:
                free.append(c)
        inserted = 0
        if free:
            free = np.array(free)
            inside = self._region_of(free, pts) >= 0
            for c in free[inside]:
                self.add_point(c)
                inserted += 1
            for c in free[~inside]:
                s = int(np.argmin(np.hypot(*(mid - c).T)))
                splits.add((int(owner[s]), int(pos[s])))
        inserted += self._split(splits)
        return inserted


def _finish(pts, tri, region, seg, tags) -> Mesh:
    used = np.unique(tri)
    renumber = -np.ones(len(pts), dtype=np.int64)
    renumber[used] = np.arange(len(used))
    tri = renumber[tri]
    vertices = pts[used]
    p = vertices[tri]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    flip = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    seg = renumber[seg]
    if np.any(seg < 0):
        raise MeshError("boundary vertex missing from the triangulation")
    tagged = tags != INTERNAL
    mesh = Mesh(vertices, tri.astype(np.int64), region.astype(np.int64), seg[tagged], tags[tagged].astype(np.int64))
    uniq, _ = mesh.unique_edges()
    n = len(vertices)
    have = set((uniq[:, 0] * n + uniq[:, 1]).tolist())
    s = np.sort(seg, axis=1)
    missing = [k for k in (s[:, 0] * n + s[:, 1]).tolist() if k not in have]
    if missing:
        raise MeshError(f"{len(missing)} boundary segments are not mesh edges")
    return mesh


def _check_quality(mesh: Mesh, min_angle: float) -> Mesh:
    angles = mesh.angles().min(axis=1)
    worst = int(np.argmin(angles))
    if angles[worst] < min_angle:
        raise GradingError(
            f"minimum angle {angles[worst]:.2f} deg below {min_angle} deg",
            region=REGIONS[int(mesh.regions[worst])],
            details={"min_angle": float(angles[worst])},
        )
    return mesh


# --- domain descriptions ------------------------------------------------------------


def _segment(p0, p1) -> Callable[[np.ndarray], np.ndarray]:
    p0, p1 = np.asarray(p0, dtype=float), np.asarray(p1, dtype=float)
    return lambda t: p0 + np.multiply.outer(np.asarray(t, dtype=float), p1 - p0)


def _circle(center, radius) -> Callable[[np.ndarray], np.ndarray]:
    cx, cy = center
    return lambda t: np.stack(
        [cx + radius * np.cos(2 * np.pi * np.asarray(t)), cy + radius * np.sin(2 * np.pi * np.asarray(t))], axis=-1
    )


def _box_distance(points: np.ndarray, x0: float, x1: float, half_width: float) -> np.ndarray:
    dx = np.maximum(np.maximum(x0 - points[:, 0], points[:, 0] - x1), 0.0)
    dy = np.maximum(np.abs(points[:, 1]) - half_width, 0.0)
    return np.hypot(dx, dy)


def lattice_spacing(eps: float, neck_layers: int) -> float:
    """Side of the equilateral neck lattice with ``neck_layers`` rows across ε."""
    return 2.0 * (eps / neck_layers) / np.sqrt(3.0)


def _neck_lattice(eps, layers, x_left, x_right, x_lo, x_hi, anchor_right: bool) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Interior lattice points and the x positions of the two wall rows.

    Rows are aligned on ``x_right`` when ``anchor_right`` (dumbbell symmetry
    plane), otherwise on ``x_left``.
    """
    dy = eps / layers
    s = lattice_spacing(eps, layers)
    rows = []
    for j in range(layers + 1):
        shift = 0.5 * s * (j % 2)
        if anchor_right:
            xs = x_right - shift - s * np.arange(int((x_right - x_left) / s) + 2)
        else:
            xs = x_left + shift + s * np.arange(int((x_right - x_left) / s) + 2)
        xs = np.sort(xs[(xs > x_lo) & (xs < x_hi)])
        rows.append(xs)
    interior = [
        np.stack([rows[j], np.full(len(rows[j]), -0.5 * eps + j * dy)], axis=-1) for j in range(1, layers)
    ]
    return np.vstack(interior) if interior else np.zeros((0, 2)), [rows[0], rows[layers]]


def _wall_params(xs: np.ndarray, x_start: float, x_end: float, gap: float) -> List[float]:
    inner = xs[(xs > min(x_start, x_end) + gap) & (xs < max(x_start, x_end) - gap)]
    t = (inner - x_start) / (x_end - x_start)
    return sorted(t.tolist())


@dataclass(frozen=True)
class PMLLayout:
    """Radii of the absorbing annulus around the envelope center."""

    inner: float
    thickness: float
    extension: float = 1.0

    @property
    def outer(self) -> float:
        return self.inner + self.thickness * self.extension


def _resonator_mesher(
    spec: ResonatorSpec,
    h: float,
    neck_layers: int,
    h_exterior: Optional[float],
    grading: float,
    layout: Optional[PMLLayout],
    extra_circles: Sequence[float],
) -> _Mesher:
    eps = spec.eps
    s = lattice_spacing(eps, neck_layers)
    c = spec.envelope.center
    rb = spec.envelope.radius
    h_ext = h if h_exterior is None else h_exterior

    def size(points):
        points = np.atleast_2d(points)
        r = np.hypot(points[:, 0] - c[0], points[:, 1] - c[1])
        bulk = np.where(r <= rb + 1e-12, h, h_ext)
        grade = s + grading * _box_distance(points, -spec.eps0, spec.neck_length, 0.5 * eps)
        return np.minimum(bulk, grade)

    m = _Mesher(size)
    k = spec.neck_corners()
    cav_up = m.add_point(k["cavity_up"])
    cav_down = m.add_point(k["cavity_down"])
    env_up = m.add_point(k["envelope_up"])
    env_down = m.add_point(k["envelope_down"])
    t_up, t_down = k["t_up"], k["t_down"]

    cav = spec.cavity.point
    interface_pts = cav(np.linspace(t_down, 1.0 + t_up, 201))
    th_up = spec.envelope.angle_of(k["envelope_up"]) / (2 * np.pi)
    th_down = spec.envelope.angle_of(k["envelope_down"]) / (2 * np.pi)
    env_curve = _circle(c, rb)
    mouth_pts = env_curve(np.linspace(th_down, th_up, 201))
    x_lo = interface_pts[:, 0].max() + 0.5 * s
    x_hi = mouth_pts[:, 0].min() - 0.5 * s
    seeds, (bottom_xs, top_xs) = _neck_lattice(eps, neck_layers, 0.0, spec.neck_length, x_lo, x_hi, anchor_right=False)
    m.add_points(seeds)

    truncated = layout is not None
    wall_tag = DIRICHLET_WALL
    p_wall = m.add_piece(cav, t_up, t_down, cav_up, cav_down, wall_tag, min_segments=8)
    p_iface = m.add_piece(cav, t_down, 1.0 + t_up, cav_down, cav_up, INTERFACE, min_segments=2)
    top_curve = _segment(k["cavity_up"], k["envelope_up"])
    bot_curve = _segment(k["cavity_down"], k["envelope_down"])
    p_top = m.add_piece(
        top_curve, 0.0, 1.0, cav_up, env_up, wall_tag,
        params=_wall_params(top_xs, k["cavity_up"][0], k["envelope_up"][0], 0.5 * s),
    )
    p_bot = m.add_piece(
        bot_curve, 0.0, 1.0, cav_down, env_down, wall_tag,
        params=_wall_params(bottom_xs, k["cavity_down"][0], k["envelope_down"][0], 0.5 * s),
    )
    p_mouth = m.add_piece(env_curve, th_down, th_up, env_down, env_up, INTERNAL if truncated else wall_tag, min_segments=2)
    m.add_region(CAVITY, [(p_wall, False), (p_iface, False)])
    m.add_region(NECK, [(p_iface, True), (p_bot, False), (p_mouth, False), (p_top, True)])
    if not truncated:
        return m

    p_env = m.add_piece(env_curve, th_up, th_down + 1.0, env_up, env_down, wall_tag, min_segments=8)
    radii = sorted({layout.inner, layout.outer, *extra_circles})
    circle_pieces = {}
    for r in radii:
        start = m.add_point(_circle(c, r)(np.array([0.0]))[0])
        tag = ABSORBER_OUTER if r == layout.outer else INTERNAL
        circle_pieces[r] = m.add_piece(_circle(c, r), 0.0, 1.0, start, start, tag, min_segments=16)
    envelope_loop = [(p_env, False), (p_mouth, False)]
    m.add_region(EXTERIOR, [(circle_pieces[layout.inner], False)], [envelope_loop])
    m.add_region(ABSORBER, [(circle_pieces[layout.outer], False)], [[(circle_pieces[layout.inner], False)]])
    return m


def _cavity_mesher(cavity: CavitySpec, h: float) -> _Mesher:
    m = _Mesher(lambda p: np.full(len(np.atleast_2d(p)), h))
    start = m.add_point(cavity.point(0.0)[0])
    piece = m.add_piece(cavity.point, 0.0, 1.0, start, start, DIRICHLET_WALL, min_segments=8)
    m.add_region(CAVITY, [(piece, False)])
    return m


def _rectangle_mesher(rect: RectangleSpec, h: float) -> _Mesher:
    m = _Mesher(lambda p: np.full(len(np.atleast_2d(p)), h))
    corners = [(0.0, 0.0), (rect.width, 0.0), (rect.width, rect.height), (0.0, rect.height)]
    ids = [m.add_point(p) for p in corners]
    pieces = []
    for i in range(4):
        a, b = corners[i], corners[(i + 1) % 4]
        pieces.append(m.add_piece(_segment(a, b), 0.0, 1.0, ids[i], ids[(i + 1) % 4], DIRICHLET_WALL))
    m.add_region(CAVITY, [(p, False) for p in pieces])
    return m


def _half_dumbbell_mesher(spec: DumbbellSpec, h: float, neck_layers: int, grading: float) -> _Mesher:
    eps = spec.eps
    s = lattice_spacing(eps, neck_layers)
    shift = spec.left_anchor

    def size(points):
        points = np.atleast_2d(points)
        grade = s + grading * _box_distance(points, shift[0] - spec.eps0, 0.0, 0.5 * eps)
        return np.minimum(h, grade)

    cav = lambda t: spec.cavity.point(t) + shift
    t_up = spec.cavity.crossing(0.5 * eps, +1)
    t_down = spec.cavity.crossing(-0.5 * eps, -1)
    m = _Mesher(size)
    cav_up = m.add_point(cav(t_up)[0])
    cav_down = m.add_point(cav(t_down)[0])
    plane_up = m.add_point((0.0, 0.5 * eps))
    plane_down = m.add_point((0.0, -0.5 * eps))
    interface_pts = cav(np.linspace(t_down, 1.0 + t_up, 201))
    seeds, (bottom_xs, top_xs) = _neck_lattice(
        eps, neck_layers, shift[0], 0.0, interface_pts[:, 0].max() + 0.5 * s, -1e-12, anchor_right=True
    )
    m.add_points(seeds)
    p_wall = m.add_piece(cav, t_up, t_down, cav_up, cav_down, DIRICHLET_WALL, min_segments=8)
    p_iface = m.add_piece(cav, t_down, 1.0 + t_up, cav_down, cav_up, INTERFACE, min_segments=2)
    up_x, down_x = cav(t_up)[0, 0], cav(t_down)[0, 0]
    p_top = m.add_piece(
        _segment(cav(t_up)[0], (0.0, 0.5 * eps)), 0.0, 1.0, cav_up, plane_up, DIRICHLET_WALL,
        params=_wall_params(top_xs, up_x, 0.0, 0.5 * s),
    )
    p_bot = m.add_piece(
        _segment(cav(t_down)[0], (0.0, -0.5 * eps)), 0.0, 1.0, cav_down, plane_down, DIRICHLET_WALL,
        params=_wall_params(bottom_xs, down_x, 0.0, 0.5 * s),
    )
    p_plane = m.add_piece(
        _segment((0.0, -0.5 * eps), (0.0, 0.5 * eps)), 0.0, 1.0, plane_down, plane_up, SYMMETRY_PLANE,
        params=[j / neck_layers for j in range(1, neck_layers)],
    )
    m.add_region(CAVITY, [(p_wall, False), (p_iface, False)])
    m.add_region(NECK, [(p_iface, True), (p_bot, False), (p_plane, False), (p_top, True)])
    return m


def mirror_mesh(half: Mesh) -> Mesh:
    """Full dumbbell mesh from its x ≤ 0 half; vertices on x = 0 are shared."""
    v = half.vertices
    on_plane = v[:, 0] == 0.0
    mirrored_ids = np.arange(len(v))
    off = np.nonzero(~on_plane)[0]
    mirrored_ids[off] = len(v) + np.arange(len(off))
    mirror_vertices = v[off].copy()
    mirror_vertices[:, 0] = -mirror_vertices[:, 0]
    vertices = np.vstack([v, mirror_vertices])
    tri_m = mirrored_ids[half.triangles][:, [0, 2, 1]]
    keep = half.edge_tags != SYMMETRY_PLANE
    edges = np.vstack([half.edges[keep], mirrored_ids[half.edges[keep]]])
    tags = np.concatenate([half.edge_tags[keep], half.edge_tags[keep]])
    return Mesh(
        vertices,
        np.vstack([half.triangles, tri_m]),
        np.concatenate([half.regions, half.regions]),
        edges,
        tags,
    )


def triangulate(
    spec,
    h: float,
    neck_layers: int = 8,
    *,
    domain: str = "closed",
    h_exterior: Optional[float] = None,
    grading: float = 0.3,
    pml: Optional[PMLLayout] = None,
    extra_circles: Sequence[float] = (),
    half: bool = False,
    min_angle: float = MIN_ANGLE_DEG,
) -> Mesh:
    """Triangulate a resonator, cavity, rectangle or dumbbell.

    Args:
        spec: ResonatorSpec, CavitySpec, RectangleSpec or DumbbellSpec.
        h: bulk target edge length.
        neck_layers: element layers across the neck width (at least 8).
        domain: for resonators, ``"closed"`` meshes 𝒞(ε), ``"cavity"`` meshes
            𝒞 alone, ``"truncated"`` meshes Ω(ε) out to the absorber.
        h_exterior: edge length outside the envelope (truncated domain).
        grading: growth rate of the size field away from the neck.
        pml: absorbing annulus radii, required for ``"truncated"``.
        extra_circles: additional conforming circles (radii) in the exterior.
        half: for dumbbells, return only the x ≤ 0 half with the
            ``symmetry_plane`` tag.
        min_angle: quality bound in degrees.

    Returns:
        Mesh: the conforming triangulation.
    """
    if not h > 0:
        raise MeshError(f"target size must be positive, got {h}")
    if isinstance(spec, (ResonatorSpec, DumbbellSpec)) and neck_layers < 8:
        raise MeshError(f"neck_layers must be at least 8, got {neck_layers}")
    if isinstance(spec, ResonatorSpec):
        if domain == "cavity":
            mesher = _cavity_mesher(spec.cavity, h)
        elif domain in ("closed", "truncated"):
            if domain == "truncated" and pml is None:
                raise MeshError("truncated domain needs an absorber layout")
            mesher = _resonator_mesher(
                spec, h, neck_layers, h_exterior, grading, pml if domain == "truncated" else None, extra_circles
            )
        else:
            raise MeshError(f"unknown domain {domain!r}")
    elif isinstance(spec, CavitySpec):
        mesher = _cavity_mesher(spec, h)
    elif isinstance(spec, RectangleSpec):
        mesher = _rectangle_mesher(spec, h)
    elif isinstance(spec, DumbbellSpec):
        half_mesh = _check_quality(_finish(*_half_dumbbell_mesher(spec, h, neck_layers, grading).run()), min_angle)
        logger.info("dumbbell half mesh: %d vertices, %d triangles", half_mesh.n_vertices, half_mesh.n_triangles)
        return half_mesh if half else mirror_mesh(half_mesh)
    else:
        raise MeshError(f"cannot triangulate {type(spec).__name__}")
    mesh = _check_quality(_finish(*mesher.run()), min_angle)
    logger.info("mesh: %d vertices, %d triangles", mesh.n_vertices, mesh.n_triangles)
    return mesh


# --- refinement -----------------------------------------------------------------------


def _corner_angles(p: np.ndarray) -> np.ndarray:
    """Interior angles in degrees of triangles given as (n, 3, 2) corner arrays."""
    out = np.empty(p.shape[:2])
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        out[:, k] = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    return out


def _green_split(t: np.ndarray, tri_edges: np.ndarray, marked_edge: np.ndarray, g: np.ndarray):
    """Corners (opp, nxt, prv) of triangles ``g`` around their single marked edge."""
    which = np.argmax(marked_edge[tri_edges[g]], axis=1)
    return t[g, which], t[g, (which + 1) % 3], t[g, (which + 2) % 3], tri_edges[g, which]


def _green_min_angle(mesh: Mesh, tri_edges: np.ndarray, marked_edge: np.ndarray, g: np.ndarray) -> np.ndarray:
    opp, nxt, prv, _ = _green_split(mesh.triangles, tri_edges, marked_edge, g)
    v = mesh.vertices
    mid = 0.5 * (v[nxt] + v[prv])
    left = _corner_angles(np.stack([v[opp], v[nxt], mid], axis=1)).min(axis=1)
    right = _corner_angles(np.stack([v[opp], mid, v[prv]], axis=1)).min(axis=1)
    return np.minimum(left, right)


def refine(mesh: Mesh, marker, min_angle: float = MIN_ANGLE_DEG) -> Mesh:
    """Red refinement of marked triangles with green closure.

    Red children are similar to their parent. A triangle with one hanging
    midpoint is bisected (green) only when both halves keep ``min_angle``;
    otherwise it is promoted to red and the closure continues.

    Args:
        mesh: mesh to refine.
        marker: boolean mask or index array of triangles to split into four.
        min_angle: quality floor for the result.

    Returns:
        Mesh: the refined conforming mesh (edge midpoints on chords).

    Raises:
        MeshError: if the result still has an angle below ``min_angle``.
    """
    marker = np.asarray(marker)
    red = np.zeros(mesh.n_triangles, dtype=bool)
    if marker.dtype == bool:
        red |= marker
    elif marker.size:
        red[marker.astype(np.int64)] = True
    if not red.any():
        return Mesh(mesh.vertices.copy(), mesh.triangles.copy(), mesh.regions.copy(), mesh.edges.copy(), mesh.edge_tags.copy())

    uniq, tri_edges = mesh.unique_edges()
    marked_edge = np.zeros(len(uniq), dtype=bool)
    while True:
        marked_edge[tri_edges[red].ravel()] = True
        count = marked_edge[tri_edges].sum(axis=1)
        promote = (~red) & (count >= 2)
        single = np.nonzero((~red) & (count == 1))[0]
        if len(single):
            promote[single[_green_min_angle(mesh, tri_edges, marked_edge, single) < min_angle]] = True
        if not promote.any():
            break
        red |= promote
    green = (~red) & (marked_edge[tri_edges].sum(axis=1) == 1)
    logger.debug("refine: %d red, %d green of %d triangles", int(red.sum()), int(green.sum()), mesh.n_triangles)

    n = mesh.n_vertices
    mid_id = -np.ones(len(uniq), dtype=np.int64)
    mid_id[marked_edge] = n + np.arange(int(marked_edge.sum()))
    mids = 0.5 * (mesh.vertices[uniq[marked_edge, 0]] + mesh.vertices[uniq[marked_edge, 1]])
    vertices = np.vstack([mesh.vertices, mids])

    t = mesh.triangles
    new_tris, new_regions = [], []
    keep = ~(red | green)
    new_tris.append(t[keep])
    new_regions.append(mesh.regions[keep])
    # red: opposite-edge midpoints m0 (edge 12), m1 (edge 20), m2 (edge 01)
    r = np.nonzero(red)[0]
    m0, m1, m2 = (mid_id[tri_edges[r, k]] for k in range(3))
    a, b, c = t[r, 0], t[r, 1], t[r, 2]
    for tri in ((a, m2, m1), (m2, b, m0), (m1, m0, c), (m0, m1, m2)):
        new_tris.append(np.stack(tri, axis=1))
        new_regions.append(mesh.regions[r])
    g = np.nonzero(green)[0]
    if len(g):
        opp, nxt, prv, split_edge = _green_split(t, tri_edges, marked_edge, g)
        mid = mid_id[split_edge]
        new_tris.append(np.stack([opp, nxt, mid], axis=1))
        new_tris.append(np.stack([opp, mid, prv], axis=1))
        new_regions.extend([mesh.regions[g], mesh.regions[g]])

    key = {tuple(e): i for i, e in enumerate(uniq.tolist())}
    edges, tags = [], []
    for (i, j), tag in zip(mesh.edges.tolist(), mesh.edge_tags.tolist()):
        e = key[tuple(sorted((i, j)))]
        if marked_edge[e]:
            edges.extend([(i, mid_id[e]), (mid_id[e], j)])
            tags.extend([tag, tag])
        else:
            edges.append((i, j))
            tags.append(tag)
    out = Mesh(
        vertices,
        np.vstack(new_tris).astype(np.int64),
        np.concatenate(new_regions).astype(np.int64),
        np.array(edges, dtype=np.int64).reshape(-1, 2),
        np.array(tags, dtype=np.int64),
    )
    angles = out.angles().min(axis=1)
    if angles.min() < min_angle:
        worst = int(np.argmin(angles))
        raise MeshError(
            f"refinement collapsed quality: {angles[worst]:.2f} deg",
            {"region": REGIONS[int(out.regions[worst])]},
        )
    return out


# --- diagnostics --------------------------------------------------------------------


def neck_transect_counts(mesh: Mesh, stations: Sequence[float]) -> np.ndarray:
    """Number of neck triangles crossed by each vertical line x = station."""
    tris = mesh.vertices[mesh.triangles[mesh.regions == NECK]]
    lo = tris[:, :, 0].min(axis=1)
    hi = tris[:, :, 0].max(axis=1)
    return np.array([int(np.count_nonzero((lo < x) & (hi > x))) for x in stations])


def interface_length(mesh: Mesh) -> float:
    e = mesh.tagged(INTERFACE)
    return float(np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1).sum())


# --- file format --------------------------------------------------------------------

_HEADER = "# resonate mesh v1"


def write_mesh(mesh: Mesh, path) -> FilePath:
    """Line-oriented mesh file: counts, ``x y``, ``i j k region``, ``i j tag``."""
    path = FilePath(path)
    lines = [
        _HEADER,
        f"vertices {mesh.n_vertices}",
        f"triangles {mesh.n_triangles}",
        f"edges {len(mesh.edges)}",
    ]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"{i} {j} {k} {REGIONS[r]}" for (i, j, k), r in zip(mesh.triangles.tolist(), mesh.regions.tolist())]
    lines += [f"{i} {j} {TAGS[t]}" for (i, j), t in zip(mesh.edges.tolist(), mesh.edge_tags.tolist())]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_mesh(path) -> Mesh:
    lines = FilePath(path).read_text().splitlines()
    if not lines or lines[0] != _HEADER:
        raise MeshError(f"{path}: not a resonate mesh file")
    counts = {}
    for line in lines[1:4]:
        key, value = line.split()
        counts[key] = int(value)
    pos = 4
    nv, nt, ne = counts["vertices"], counts["triangles"], counts["edges"]
    vertices = np.array([[float(v) for v in line.split()] for line in lines[pos : pos + nv]]).reshape(-1, 2)
    pos += nv
    tri_rows = [line.split() for line in lines[pos : pos + nt]]
    pos += nt
    edge_rows = [line.split() for line in lines[pos : pos + ne]]
    triangles = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in tri_rows], dtype=np.int64).reshape(-1, 3)
    regions = np.array([REGIONS.index(r[3]) for r in tri_rows], dtype=np.int64)
    edges = np.array([[int(r[0]), int(r[1])] for r in edge_rows], dtype=np.int64).reshape(-1, 2)
    tags = np.array([TAGS.index(r[2]) for r in edge_rows], dtype=np.int64)
    return Mesh(vertices, triangles, regions, edges, tags)

"""Resonator, dumbbell and reference domains.

Every domain lives in the plane with the neck anchor at the origin and the
neck running along +x. Cavity boundaries are closed parametric curves
``t -> (x, y)`` on ``t in [0, 1)`` with ``t = 0`` at the anchor, traversed
counter-clockwise. All objects are frozen dataclasses; membership
predicates are vectorized over ``(n, 2)`` point arrays.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np
from matplotlib.path import Path
from scipy.integrate import trapezoid
from scipy.optimize import brentq
from scipy.special import jn_zeros

from resonate.errors import GeometryError

logger = logging.getLogger(__name__)

TRANSVERSALITY_THRESHOLD_DEG = 10.0
_POLYGON_SAMPLES = 4096


@dataclass(frozen=True)
class CrossSection:
    """Unit cross-section D₁ of the neck, optionally scaled.

    ``dimension`` is n−1: 1 for the interval (2D resonators), 2 for the
    disc (3D resonators, geometry level only).
    """

    dimension: int = 1
    shape: str = "interval"
    scale: float = 1.0

    @classmethod
    def interval(cls) -> "CrossSection":
        return cls(dimension=1, shape="interval")

    @classmethod
    def disc(cls) -> "CrossSection":
        return cls(dimension=2, shape="disc")

    def scaled(self, s: float) -> "CrossSection":
        if s <= 0:
            raise GeometryError(f"cross-section scale must be positive, got {s}")
        return replace(self, scale=self.scale * s)

    @property
    def alpha0(self) -> float:
        return alpha0(self)

    def contains(self, y: np.ndarray) -> np.ndarray:
        """Membership of transverse coordinates in the (scaled) shape."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if self.shape == "interval":
            return np.abs(y[:, 0]) < 0.5 * self.scale
        return np.hypot(y[:, 0], y[:, 1]) < self.scale


def alpha0(cs: CrossSection) -> float:
    """Square root of the first Dirichlet eigenvalue of the cross-section.

    Args:
        cs: cross-section; the interval has unit length, the disc unit radius.

    Returns:
        float: α₀ divided by the scale factor.
    """
    if cs.shape == "interval" and cs.dimension == 1:
        base = np.pi
    elif cs.shape == "disc" and cs.dimension == 2:
        base = float(jn_zeros(0, 1)[0])
    else:
        raise GeometryError(
            f"unsupported cross-section {cs.shape!r} in dimension {cs.dimension}"
        )
    return base / cs.scale


def _smooth_polygon(vertices: np.ndarray, smoothing: float) -> Tuple[np.ndarray, np.ndarray]:
    """Fourier coefficients of a periodically smoothed polygon.

    The polygon is sampled uniformly in arclength starting at the midpoint
    of its first edge, then high modes are damped by a Gaussian factor.
    """
    closed = np.vstack([vertices, vertices[:1]])
    seg = np.diff(closed, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    if np.any(seg_len <= 0):
        raise GeometryError("polygon has repeated vertices")
    perimeter = seg_len.sum()
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = (0.5 * seg_len[0] + perimeter * np.arange(_POLYGON_SAMPLES) / _POLYGON_SAMPLES) % perimeter
    x = np.interp(s, cum, closed[:, 0])
    y = np.interp(s, cum, closed[:, 1])
    k = np.fft.fftfreq(_POLYGON_SAMPLES, d=1.0 / _POLYGON_SAMPLES)
    damp = np.exp(-0.5 * (2 * np.pi * k * smoothing / perimeter) ** 2)
    return np.fft.fft(x) * damp / _POLYGON_SAMPLES, np.fft.fft(y) * damp / _POLYGON_SAMPLES


@dataclass(frozen=True)
class CavitySpec:
    """Smooth closed cavity placed with its anchor at the origin.

    Kinds:
        disc: ``params = (radius,)``.
        ellipse: ``params = (semi_x, semi_y, rotation_deg)``; the anchor is
            the end of the local x semi-axis, rotated.
        polygon: ``params = (smoothing,)`` with ``vertices``; the anchor is the
            smoothed midpoint of the first edge.
    """

    kind: str
    params: Tuple[float, ...]
    vertices: Optional[Tuple[Tuple[float, float], ...]] = None
    _fourier: Optional[Tuple[np.ndarray, np.ndarray]] = field(
        default=None, repr=False, compare=False
    )

    @classmethod
    def disc(cls, radius: float = 1.0) -> "CavitySpec":
        if radius <= 0:
            raise GeometryError(f"disc radius must be positive, got {radius}")
        return cls("disc", (float(radius),))

    @classmethod
    def ellipse(cls, semi_x: float, semi_y: float, rotation_deg: float = 0.0) -> "CavitySpec":
        if semi_x <= 0 or semi_y <= 0:
            raise GeometryError("ellipse semi-axes must be positive")
        return cls("ellipse", (float(semi_x), float(semi_y), float(rotation_deg)))

    @classmethod
    def polygon(cls, vertices, smoothing: float = 0.05) -> "CavitySpec":
        verts = np.asarray(vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
            raise GeometryError("polygon needs at least three 2D vertices")
        area = 0.5 * np.sum(verts[:, 0] * np.roll(verts[:, 1], -1) - np.roll(verts[:, 0], -1) * verts[:, 1])
        if area <= 0:
            raise GeometryError("polygon vertices must be counter-clockwise")
        fx, fy = _smooth_polygon(verts, smoothing)
        return cls(
            "polygon",
            (float(smoothing),),
            tuple(map(tuple, verts.tolist())),
            (fx, fy),
        )

    # --- raw curve before translation -------------------------------------------------

    def _raw(self, t: np.ndarray, derivative: int = 0) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        w = 2 * np.pi
        if self.kind == "disc":
            (r,) = self.params
            c, s = np.cos(w * t), np.sin(w * t)
            if derivative == 0:
                return np.stack([r * c, r * s], axis=-1)
            f = w**derivative
            rot = [(c, s), (-s, c), (-c, -s), (s, -c)][derivative % 4]
            return np.stack([r * f * rot[0], r * f * rot[1]], axis=-1)
        if self.kind == "ellipse":
            a, b, rot_deg = self.params
            c, s = np.cos(w * t), np.sin(w * t)
            f = w**derivative
            cyc = [(c, s), (-s, c), (-c, -s), (s, -c)][derivative % 4]
            local = np.stack([a * f * cyc[0], b * f * cyc[1]], axis=-1)
            phi = np.deg2rad(rot_deg)
            rmat = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
            return local @ rmat.T
        if self.kind == "polygon":
            fx, fy = self._fourier
            k = np.fft.fftfreq(len(fx), d=1.0 / len(fx))
            phase = np.exp(1j * w * np.multiply.outer(t, k))
            factor = (1j * w * k) ** derivative
            x = (phase @ (fx * factor)).real
            y = (phase @ (fy * factor)).real
            return np.stack([x, y], axis=-1)
        raise GeometryError(f"unknown cavity kind {self.kind!r}")

    @property
    def offset(self) -> np.ndarray:
        """Translation that moves the anchor (t = 0) to the origin."""
        return -self._raw(np.array([0.0]))[0]

    def point(self, t) -> np.ndarray:
        return self._raw(np.atleast_1d(t)) + self.offset

    def tangent(self, t) -> np.ndarray:
        return self._raw(np.atleast_1d(t), derivative=1)

    def outward_normal(self, t) -> np.ndarray:
        d = self.tangent(t)
        n = np.stack([d[:, 1], -d[:, 0]], axis=-1)
        return n / np.hypot(n[:, 0], n[:, 1])[:, None]

    def sample(self, count: int = 2048) -> np.ndarray:
        return self.point(np.arange(count) / count)

    @property
    def center(self) -> np.ndarray:
        """Reference point: centroid of the boundary samples."""
        return self.sample(1024).mean(axis=0)

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float)) - self.offset
        if self.kind == "disc":
            (r,) = self.params
            return np.hypot(p[:, 0], p[:, 1]) < r
        if self.kind == "ellipse":
            a, b, rot_deg = self.params
            phi = np.deg2rad(rot_deg)
            x = np.cos(phi) * p[:, 0] + np.sin(phi) * p[:, 1]
            y = -np.sin(phi) * p[:, 0] + np.cos(phi) * p[:, 1]
            return (x / a) ** 2 + (y / b) ** 2 < 1.0
        return Path(self._raw(np.arange(_POLYGON_SAMPLES) / _POLYGON_SAMPLES)).contains_points(p)

    def area(self) -> float:
        if self.kind == "disc":
            return float(np.pi * self.params[0] ** 2)
        if self.kind == "ellipse":
            return float(np.pi * self.params[0] * self.params[1])
        pts = self.sample(_POLYGON_SAMPLES)
        return float(0.5 * np.sum(pts[:, 0] * np.roll(pts[:, 1], -1) - np.roll(pts[:, 0], -1) * pts[:, 1]))

    def crossing(self, y_level: float, direction: int) -> float:
        """Curve parameter of the first crossing of ``y = y_level`` from the anchor.

        ``direction`` is +1 to walk forward from t = 0, −1 to walk backward.
        """
        grid = np.linspace(0.0, 0.5, 2001)
        ts = grid if direction > 0 else 1.0 - grid
        ys = self.point(ts)[:, 1] - y_level
        sign_change = np.nonzero(np.sign(ys[:-1]) != np.sign(ys[1:]))[0]
        if len(sign_change) == 0:
            raise GeometryError(f"cavity boundary never reaches y = {y_level}")
        i = sign_change[0]
        lo, hi = sorted((ts[i], ts[i + 1]))
        return brentq(lambda s: self.point(s)[0, 1] - y_level, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)

    def to_dict(self) -> Dict:
        out = {"kind": self.kind, "params": list(self.params)}
        if self.vertices is not None:
            out["vertices"] = [list(v) for v in self.vertices]
        return out


@dataclass(frozen=True)
class Envelope:
    """Disc 𝐁 containing the cavity closure with M₀ = (L, 0) on its boundary."""

    center: Tuple[float, float]
    radius: float

    @classmethod
    def around(cls, cavity: CavitySpec, neck_length: float) -> "Envelope":
        c = cavity.center
        return cls((float(c[0]), float(c[1])), float(np.hypot(neck_length - c[0], c[1])))

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        return np.hypot(p[:, 0] - self.center[0], p[:, 1] - self.center[1]) < self.radius

    def point(self, angle) -> np.ndarray:
        angle = np.atleast_1d(angle)
        return np.stack(
            [self.center[0] + self.radius * np.cos(angle), self.center[1] + self.radius * np.sin(angle)],
            axis=-1,
        )

    def angle_of(self, p) -> float:
        return float(np.arctan2(p[1] - self.center[1], p[0] - self.center[0]))


@dataclass(frozen=True)
class ResonatorSpec:
    """Cavity 𝒞, straight neck 𝒯(ε) of length L and width ε, envelope 𝐁."""

    cavity: CavitySpec
    envelope: Envelope
    neck_length: float
    eps: float
    eps0: float
    cross_section: CrossSection = CrossSection()
    truncation: Optional[float] = None

    @property
    def alpha0(self) -> float:
        return alpha0(self.cross_section)

    @property
    def mouth(self) -> np.ndarray:
        """M₀ = (L, 0)."""
        return np.array([self.neck_length, 0.0])

    def with_eps(self, eps: float) -> "ResonatorSpec":
        return build_resonator(
            self.cavity, self.envelope, self.neck_length, eps, self.eps0,
            self.truncation, self.cross_section,
        )

    def in_cavity(self, points: np.ndarray) -> np.ndarray:
        return self.cavity.contains(points)

    def in_strip(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        return (
            (p[:, 0] >= -self.eps0)
            & (p[:, 0] <= self.neck_length + self.eps0)
            & (np.abs(p[:, 1]) < 0.5 * self.eps)
        )

    def in_neck(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        return self.in_strip(p) & self.envelope.contains(p) & ~self.in_cavity(p)

    def in_closed_resonator(self, points: np.ndarray) -> np.ndarray:
        """Membership in 𝒞(ε) = 𝒞 ∪ 𝒯(ε)."""
        return self.in_cavity(points) | self.in_neck(points)

    def in_exterior(self, points: np.ndarray) -> np.ndarray:
        """Membership in 𝐄 = ℝ² minus the closed envelope."""
        p = np.atleast_2d(points)
        return np.hypot(p[:, 0] - self.envelope.center[0], p[:, 1] - self.envelope.center[1]) > self.envelope.radius

    def in_domain(self, points: np.ndarray) -> np.ndarray:
        """Membership in Ω(ε) = 𝒞(ε) ∪ 𝐄."""
        return self.in_closed_resonator(points) | self.in_exterior(points)

    def classify(self, points: np.ndarray) -> np.ndarray:
        """Region codes: 0 cavity, 1 neck, 2 exterior, −1 wall (𝐁̄ minus 𝒞(ε))."""
        p = np.atleast_2d(points)
        out = np.full(len(p), -1, dtype=int)
        out[self.in_exterior(p)] = 2
        out[self.in_neck(p)] = 1
        out[self.in_cavity(p)] = 0
        return out

    def neck_corners(self) -> Dict[str, np.ndarray]:
        """Corner points where the neck walls meet ∂𝒞 and ∂𝐁, plus curve parameters."""
        h = 0.5 * self.eps
        t_up = self.cavity.crossing(h, +1)
        t_down = self.cavity.crossing(-h, -1)
        cx, cy = self.envelope.center
        r = self.envelope.radius
        x_env = lambda y: cx + np.sqrt(r**2 - (y - cy) ** 2)
        return {
            "t_up": t_up,
            "t_down": t_down,
            "cavity_up": self.cavity.point(t_up)[0],
            "cavity_down": self.cavity.point(t_down)[0],
            "envelope_up": np.array([x_env(h), h]),
            "envelope_down": np.array([x_env(-h), -h]),
        }

    def neck_area(self) -> float:
        """|𝒯(ε)| from the strip between the curved ends."""
        ys = np.linspace(-0.5 * self.eps, 0.5 * self.eps, 401)
        cx, cy = self.envelope.center
        r = self.envelope.radius
        x_right = cx + np.sqrt(r**2 - (ys - cy) ** 2)
        x_left = np.array([self.cavity.point(self.cavity.crossing(y, +1 if y >= 0 else -1))[0, 0] if abs(y) > 0 else 0.0 for y in ys])
        return float(trapezoid(x_right - x_left, ys))

    def to_dict(self) -> Dict:
        return {
            "cavity": self.cavity.to_dict(),
            "envelope": {"center": list(self.envelope.center), "radius": self.envelope.radius},
            "neck_length": self.neck_length,
            "eps": self.eps,
            "eps0": self.eps0,
            "cross_section": {"shape": self.cross_section.shape, "dimension": self.cross_section.dimension},
            "alpha0": self.alpha0,
            "truncation": self.truncation,
        }


@dataclass(frozen=True)
class DumbbellSpec:
    """Two mirror-image cavities joined by a straight tube, symmetric about x = 0.

    The left cavity is ``cavity`` translated so its anchor sits at (−L/2, 0);
    the right cavity is its mirror image x → −x.
    """

    cavity: CavitySpec
    neck_length: float
    eps: float
    eps0: float
    cross_section: CrossSection = CrossSection()

    @property
    def alpha0(self) -> float:
        return alpha0(self.cross_section)

    @property
    def left_anchor(self) -> np.ndarray:
        return np.array([-0.5 * self.neck_length, 0.0])

    @staticmethod
    def mirror(points: np.ndarray) -> np.ndarray:
        p = np.array(np.atleast_2d(points), dtype=float)
        p[:, 0] = -p[:, 0]
        return p

    def in_left(self, points: np.ndarray) -> np.ndarray:
        p = np.array(np.atleast_2d(points), dtype=float)
        p[:, 0] = p[:, 0] + 0.5 * self.neck_length
        return self.cavity.contains(p)

    def in_right(self, points: np.ndarray) -> np.ndarray:
        return self.in_left(self.mirror(points))

    def in_tube(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        strip = (np.abs(p[:, 0]) <= 0.5 * self.neck_length + self.eps0) & (np.abs(p[:, 1]) < 0.5 * self.eps)
        return strip & ~self.in_left(p) & ~self.in_right(p)

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self.in_left(points) | self.in_right(points) | self.in_tube(points)

    def with_eps(self, eps: float) -> "DumbbellSpec":
        return build_dumbbell(self.cavity, self.neck_length, eps, self.eps0)


@dataclass(frozen=True)
class RectangleSpec:
    """Axis-aligned reference rectangle [0, width] × [0, height]."""

    width: float = 1.0
    height: float = 2.0

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        return (p[:, 0] > 0) & (p[:, 0] < self.width) & (p[:, 1] > 0) & (p[:, 1] < self.height)

    def eigenvalue(self, m: int, n: int) -> float:
        return float(np.pi**2 * ((m / self.width) ** 2 + (n / self.height) ** 2))

    def to_dict(self) -> Dict:
        return {"kind": "rectangle", "width": self.width, "height": self.height}


@dataclass(frozen=True)
class TransversalityReport:
    angle_cavity_deg: float
    angle_envelope_deg: float
    threshold_deg: float
    passed: bool


def _line_angle(direction: np.ndarray, tangent: np.ndarray) -> float:
    cos = abs(float(np.dot(direction, tangent) / np.linalg.norm(tangent)))
    return float(np.degrees(np.arccos(min(1.0, cos))))


def check_transversality(spec) -> TransversalityReport:
    """Crossing angles of the neck axis with ∂𝒞 at 0 and ∂𝐁 at M₀.

    Works on anything carrying ``cavity``, ``envelope`` and ``neck_length``;
    a dumbbell has no envelope and reports 90° there.
    """
    axis = np.array([1.0, 0.0])
    angle_cav = _line_angle(axis, spec.cavity.tangent(0.0)[0])
    envelope = getattr(spec, "envelope", None)
    if envelope is None or envelope.radius == 0.0:
        angle_env = 90.0
    else:
        m0 = np.array([spec.neck_length, 0.0])
        radial = m0 - np.asarray(envelope.center)
        angle_env = _line_angle(axis, np.array([-radial[1], radial[0]]))
    passed = min(angle_cav, angle_env) >= TRANSVERSALITY_THRESHOLD_DEG
    return TransversalityReport(angle_cav, angle_env, TRANSVERSALITY_THRESHOLD_DEG, passed)


def default_collar(neck_length: float) -> float:
    return min(neck_length / 10.0, 0.05)


def _count_crossings(inside: np.ndarray) -> int:
    return int(np.count_nonzero(inside[1:] != inside[:-1]))


def build_resonator(
    cavity: CavitySpec,
    envelope: Optional[Envelope],
    neck_length: float,
    eps: float,
    eps0: Optional[float] = None,
    truncation: Optional[float] = None,
    cross_section: CrossSection = CrossSection(),
) -> ResonatorSpec:
    """Validate and assemble a resonator with its neck at the cavity anchor.

    Args:
        cavity: cavity with the anchor at the origin.
        envelope: disc 𝐁 through M₀ = (L, 0); built around the cavity if None.
        neck_length: L > 0.
        eps: neck width ε > 0.
        eps0: collar ε₀; defaults to min(L/10, 0.05).
        truncation: radius bounding the computational exterior (optional).
        cross_section: unit neck cross-section.

    Returns:
        ResonatorSpec: the validated resonator geometry.
    """
    if not neck_length > 0:
        raise GeometryError(f"neck length must be positive, got {neck_length}")
    if not eps > 0:
        raise GeometryError(f"neck width must be positive, got {eps}")
    eps0 = default_collar(neck_length) if eps0 is None else eps0
    if not eps0 > 0:
        raise GeometryError(f"collar must be positive, got {eps0}")
    if envelope is None:
        envelope = Envelope.around(cavity, neck_length)
    spec = ResonatorSpec(cavity, envelope, float(neck_length), float(eps), float(eps0), cross_section, truncation)

    report = check_transversality(spec)
    if not report.passed:
        raise GeometryError(
            f"neck axis not transversal (cavity {report.angle_cavity_deg:.2f} deg, "
            f"envelope {report.angle_envelope_deg:.2f} deg)",
            {"angle_cavity_deg": report.angle_cavity_deg, "angle_envelope_deg": report.angle_envelope_deg},
        )
    m0 = spec.mouth
    if abs(np.hypot(m0[0] - envelope.center[0], m0[1] - envelope.center[1]) - envelope.radius) > 1e-9 * envelope.radius:
        raise GeometryError("M0 = (L, 0) does not lie on the envelope boundary")
    samples = cavity.sample(2048)
    if np.any(~envelope.contains(samples)):
        raise GeometryError("cavity closure is not inside the envelope")

    xs = np.linspace(-eps0, neck_length + eps0, 20001)
    seg = np.stack([xs, np.zeros_like(xs)], axis=-1)
    if _count_crossings(cavity.contains(seg)) != 1:
        raise GeometryError("neck axis crosses the cavity boundary more than once")
    if _count_crossings(envelope.contains(seg)) != 1:
        raise GeometryError("neck axis crosses the envelope boundary more than once")
    inner = seg[(xs > 0) & (xs < neck_length)]
    if np.any(cavity.contains(inner)) or np.any(~envelope.contains(inner)):
        raise GeometryError("segment [0, L] x {0} is not inside the envelope minus the cavity")

    try:
        corners = spec.neck_corners()
    except (GeometryError, ValueError) as err:
        raise GeometryError(f"neck width {eps} too large for the anchor geometry: {err}") from err
    for key in ("cavity_up", "cavity_down"):
        x = corners[key][0]
        if not (-eps0 < x < neck_length):
            raise GeometryError(
                f"neck width {eps} too large: wall meets the cavity at x = {x:.4g}, outside the collar",
                {"corner": key},
            )
    for key in ("envelope_up", "envelope_down"):
        x = corners[key][0]
        if not (0.0 < x <= neck_length + eps0):
            raise GeometryError(f"neck width {eps} too large for the envelope", {"corner": key})
    if truncation is not None and truncation <= envelope.radius:
        raise GeometryError("truncation radius must exceed the envelope radius")
    logger.debug("built resonator L=%g eps=%g eps0=%g", neck_length, eps, eps0)
    return spec


def build_dumbbell(cavity: CavitySpec, neck_length: float, eps: float, eps0: Optional[float] = None) -> DumbbellSpec:
    if not neck_length > 0 or not eps > 0:
        raise GeometryError("dumbbell needs positive tube length and width")
    eps0 = default_collar(neck_length) if eps0 is None else eps0
    spec = DumbbellSpec(cavity, float(neck_length), float(eps), float(eps0))
    report = check_transversality(spec)
    if not report.passed:
        raise GeometryError("tube axis not transversal to the cavity boundary")
    t_up = cavity.crossing(0.5 * eps, +1)
    t_down = cavity.crossing(-0.5 * eps, -1)
    for t in (t_up, t_down):
        x = cavity.point(t)[0, 0]
        if not (-eps0 < x < 0.5 * neck_length):
            raise GeometryError(f"tube width {eps} too large for the anchor geometry")
    xs = np.linspace(-0.5 * neck_length, 0.0, 4001)
    if np.any(spec.in_left(np.stack([xs[1:], np.zeros(len(xs) - 1)], axis=-1))):
        raise GeometryError("tube axis re-enters the cavity")
    return spec


def benchmark_resonator(eps: float = 0.25, neck_length: float = 0.4, radius: float = 1.0) -> ResonatorSpec:
    """Disc cavity of radius 1 centered at (−1, 0) with envelope radius 1 + L."""
    cavity = CavitySpec.disc(radius)
    envelope = Envelope((-radius, 0.0), radius + neck_length)
    return build_resonator(cavity, envelope, neck_length, eps)


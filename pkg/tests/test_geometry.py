import numpy as np
import pytest
from scipy.special import jn_zeros

from resonate.errors import GeometryError
from resonate.geometry import (
    CavitySpec,
    CrossSection,
    DumbbellSpec,
    Envelope,
    RectangleSpec,
    alpha0,
    benchmark_resonator,
    build_dumbbell,
    build_resonator,
    check_transversality,
)


def test_alpha0_interval_is_pi():
    assert alpha0(CrossSection.interval()) == pytest.approx(np.pi)


def test_alpha0_disc_is_first_bessel_zero():
    assert CrossSection.disc().alpha0 == pytest.approx(jn_zeros(0, 1)[0])


def test_alpha0_scales_inversely():
    assert CrossSection.interval().scaled(0.5).alpha0 == pytest.approx(2 * np.pi)


def test_scaled_rejects_non_positive():
    with pytest.raises(GeometryError):
        CrossSection.interval().scaled(0.0)


def test_benchmark_mouth_lies_on_envelope():
    spec = benchmark_resonator(eps=0.25, neck_length=0.4)
    cx, cy = spec.envelope.center
    assert np.hypot(spec.mouth[0] - cx, spec.mouth[1] - cy) == pytest.approx(spec.envelope.radius)


def test_neck_walls_meet_the_disc_at_half_width():
    disc = CavitySpec.disc(1.0)
    t = disc.crossing(0.15, +1)
    assert t == pytest.approx(np.arcsin(0.15) / (2 * np.pi), abs=1e-12)
    x, y = disc.point(t)[0]
    assert y == pytest.approx(0.15, abs=1e-12)
    assert x == pytest.approx(np.sqrt(1 - 0.15**2) - 1.0, abs=1e-12)


@pytest.mark.parametrize("eps", [0.4, 0.3, 0.1])
def test_benchmark_builds_across_widths(eps):
    spec = benchmark_resonator(eps=eps, neck_length=0.4)
    assert spec.eps == eps
    assert spec.classify(np.array([[0.2, 0.0]])).tolist() == [1]


def test_classify_regions():
    spec = benchmark_resonator(eps=0.25, neck_length=0.4)
    points = np.array([[-1.0, 0.0], [0.2, 0.0], [3.0, 0.0], [0.2, 0.5]])
    assert spec.classify(points).tolist() == [0, 1, 2, -1]


def test_neck_area_close_to_rectangle():
    spec = benchmark_resonator(eps=0.1, neck_length=0.4)
    assert spec.neck_area() == pytest.approx(0.04, rel=1e-2)


def test_with_eps_keeps_the_rest():
    spec = benchmark_resonator(eps=0.3)
    narrow = spec.with_eps(0.2)
    assert narrow.eps == 0.2
    assert narrow.neck_length == spec.neck_length
    assert narrow.envelope == spec.envelope


def test_too_wide_neck_is_rejected():
    with pytest.raises(GeometryError):
        benchmark_resonator(eps=3.0)


def test_negative_length_is_rejected():
    cavity = CavitySpec.disc(1.0)
    with pytest.raises(GeometryError):
        build_resonator(cavity, Envelope((-1.0, 0.0), 1.4), -0.4, 0.2)


def test_mouth_off_envelope_is_rejected():
    cavity = CavitySpec.disc(1.0)
    with pytest.raises(GeometryError):
        build_resonator(cavity, Envelope((-1.0, 0.0), 1.6), 0.4, 0.2)


def test_disc_neck_is_perpendicular():
    report = check_transversality(benchmark_resonator())
    assert report.passed
    assert report.angle_cavity_deg == pytest.approx(90.0, abs=1e-6)
    assert report.angle_envelope_deg == pytest.approx(90.0, abs=1e-6)


def test_cavity_anchor_at_origin():
    for cavity in (CavitySpec.disc(1.0), CavitySpec.ellipse(1.0, 1.3)):
        assert np.allclose(cavity.point(0.0)[0], [0.0, 0.0], atol=1e-12)
        assert cavity.contains(np.array([[-0.5, 0.0]]))[0]
        assert not cavity.contains(np.array([[0.1, 0.0]]))[0]


def test_ellipse_area():
    assert CavitySpec.ellipse(1.0, 1.3).area() == pytest.approx(np.pi * 1.3)


def test_outward_normal_at_anchor_points_along_neck():
    normal = CavitySpec.disc(1.0).outward_normal(0.0)[0]
    assert np.allclose(normal, [1.0, 0.0], atol=1e-9)


def test_dumbbell_is_mirror_symmetric():
    spec = build_dumbbell(CavitySpec.disc(1.0), 0.4, 0.2)
    assert isinstance(spec, DumbbellSpec)
    points = np.array([[-1.2, 0.3], [0.0, 0.0], [0.0, 0.5], [1.0, -0.2]])
    assert np.array_equal(spec.contains(points), spec.contains(spec.mirror(points)))
    assert spec.in_tube(np.array([[0.0, 0.0]]))[0]
    assert not spec.contains(np.array([[0.0, 0.5]]))[0]


def test_rectangle_eigenvalues():
    rect = RectangleSpec(1.0, 2.0)
    assert rect.eigenvalue(1, 1) == pytest.approx(12.3370, abs=1e-4)
    assert rect.eigenvalue(1, 2) == pytest.approx(19.7392, abs=1e-4)
    assert rect.eigenvalue(1, 3) == pytest.approx(32.0762, abs=1e-4)


def test_to_dict_roundtrips_key_fields():
    data = benchmark_resonator(eps=0.25).to_dict()
    assert data["cavity"]["kind"] == "disc"
    assert data["envelope"]["radius"] == pytest.approx(1.4)

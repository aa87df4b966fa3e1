import numpy as np
import pytest

from resonate import nodal
from resonate.errors import HypothesisError, UnstableNodalCount
from resonate.geometry import CavitySpec, Envelope, build_resonator
from resonate.nodal import (
    J01,
    NodalDecomposition,
    count_monotonicity,
    courant_check,
    faber_krahn_floor,
    neck_positivity,
    nodal_domains,
    nodal_report,
    volume_floor_check,
)
from resonate.spectra import cavity_mode, closed_problem, dirichlet_eigs, track_eigenvalue


def _decomposition(count, volume=0.5):
    volumes = np.full(count, volume)
    return NodalDecomposition(
        labels=np.ones(count, dtype=np.int8),
        components=np.arange(count),
        volumes=volumes,
        signs=np.ones(count, dtype=np.int8),
        band_volume=0.0,
        total_volume=float(volumes.sum()),
        tau=1e-3,
    )


@pytest.fixture(scope="module")
def rectangle_pairs(rectangle_disc):
    return dirichlet_eigs(rectangle_disc.K, rectangle_disc.M, count=4, probe=None)


def test_floor_of_the_unit_disc_ground_state():
    assert faber_krahn_floor(J01**2) == pytest.approx(np.pi)


def test_rectangle_courant_bound(rectangle_pairs):
    table = courant_check(rectangle_pairs)
    assert table["passed"].all()
    assert not table["skipped"].any()
    assert table["count"].tolist() == [1, 2, 3, 2]


def test_second_mode_has_two_domains(rectangle_pairs):
    decomp = nodal_domains(rectangle_pairs[1].field)
    assert decomp.count == 2
    assert decomp.stable
    assert sorted(decomp.signs.tolist()) == [-1, 1]
    assert decomp.volumes.sum() + decomp.band_volume == pytest.approx(2.0)


def test_ground_state_passes_the_volume_floor(rectangle_pairs):
    pair = rectangle_pairs[0]
    report = volume_floor_check(nodal_domains(pair.field), pair.eigenvalue)
    assert report.passed
    assert report.floor == pytest.approx(np.pi * J01**2 / pair.eigenvalue)


def test_unstable_count_is_reported(monkeypatch, rectangle_pairs):
    counts = iter([1, 2, 3])
    monkeypatch.setattr(nodal, "_decompose", lambda field_, tau, elements: _decomposition(next(counts)))
    with pytest.raises(UnstableNodalCount) as info:
        nodal_domains(rectangle_pairs[0].field)
    assert len(info.value.details["counts"]) == 3


def test_count_settles_at_half_threshold(monkeypatch, rectangle_pairs):
    counts = iter([1, 2, 2])
    monkeypatch.setattr(nodal, "_decompose", lambda field_, tau, elements: _decomposition(next(counts)))
    decomp = nodal_domains(rectangle_pairs[0].field)
    assert decomp.count == 2
    assert not decomp.stable


def test_monotonicity_threshold():
    reference = _decomposition(1)
    family = [(0.4, _decomposition(2), 0.16), (0.3, _decomposition(1), 0.12), (0.2, _decomposition(1), 0.08)]
    table, threshold = count_monotonicity(reference, family)
    assert table["epsilon"].tolist() == [0.4, 0.3, 0.2]
    assert table["passed"].tolist() == [False, True, True]
    assert threshold == 0.3


def test_monotonicity_without_threshold():
    _, threshold = count_monotonicity(_decomposition(1), [(0.2, _decomposition(3), 0.08)])
    assert threshold is None


def test_report_carries_verdicts():
    data = nodal_report(_decomposition(2, volume=1.0), lam=20.0, index=2)
    assert data["count"] == 2
    assert data["verdicts"] == {"floor": True, "courant": True}


@pytest.mark.slow
def test_ground_state_is_positive_near_the_neck(closed_benchmark):
    spec, closed, cavity = closed_benchmark
    u0 = cavity_mode(cavity, 1)
    v = track_eigenvalue(u0, closed)
    report = neck_positivity(v, u0, cavity, spec)
    assert report.passed
    assert report.hopf


def _ellipse_problem(mode, eps=0.25):
    cavity = CavitySpec.ellipse(1.0, 1.3)
    spec = build_resonator(cavity, Envelope.around(cavity, 0.4), 0.4, eps)
    spec_eps, closed, cav = closed_problem(spec, eps, h=0.1)
    u0 = cavity_mode(cav, mode)
    return spec_eps, track_eigenvalue(u0, closed), u0, cav


@pytest.mark.slow
def test_ellipse_third_mode_is_positive_near_the_neck():
    spec, v, u0, cav = _ellipse_problem(3)
    assert neck_positivity(v, u0, cav, spec).passed


@pytest.mark.slow
def test_ellipse_second_mode_fails_the_hypothesis():
    spec, v, u0, cav = _ellipse_problem(2)
    with pytest.raises(HypothesisError):
        neck_positivity(v, u0, cav, spec)

import json
import math

import numpy as np
import pytest

from leaftransfer.foliation import (
    CATALOG_PAIRS,
    FIRST_COORDINATE,
    POLAR_MINUS,
    POLAR_PLUS,
    RADIUS,
    SINUSOID_FREQ_PHASE,
    SINUSOID_SHAPE,
    ChartError,
    CheckReport,
    Leaf,
    catalog_atlas,
    chart_apply,
    check_foliated_transition,
    check_invariance,
    invariant_count,
    leaf_of,
    orbit_foliation,
    planted_defect_pair,
    polar_atlas,
    same_leaf,
    transition,
)
from leaftransfer.groups import GroupFamily, act_on_task, random_element, solve_relating
from leaftransfer.taskspace import get_family


def test_polar_chart_apply():
    x, y = chart_apply(POLAR_PLUS, (1, 0))
    assert (x[0], y[0]) == (1.0, 0.0)
    x, y = chart_apply(POLAR_PLUS, (0, 2))
    assert x[0] == 2.0 and y[0] == pytest.approx(math.atan2(2, 0))
    with pytest.raises(ChartError):
        chart_apply(POLAR_PLUS, (-1, 0))
    x, y = chart_apply(POLAR_MINUS, (-1, 0))
    assert y[0] == pytest.approx(math.pi)


def test_polar_transition():
    x, y = transition(POLAR_PLUS, POLAR_MINUS, ([1.0], [math.pi / 2]))
    np.testing.assert_allclose([x[0], y[0]], [1.0, math.pi / 2], atol=1e-12)
    x, y = transition(POLAR_PLUS, POLAR_MINUS, ([3.0], [-math.pi / 2]))
    np.testing.assert_allclose([x[0], y[0]], [3.0, 3 * math.pi / 2], atol=1e-12)
    rng = np.random.default_rng(0)
    for _ in range(100):
        r, t = rng.uniform(0.1, 5), rng.uniform(-3, 3)
        assert transition(POLAR_PLUS, POLAR_MINUS, ([r], [t]))[0][0] == pytest.approx(r, rel=1e-12)


def test_transition_outside_overlap():
    with pytest.raises(ChartError):
        transition(POLAR_MINUS, POLAR_PLUS, ([1.0], [math.pi]))


def _all_catalog_charts():
    atlases = [orbit_foliation(g, t) for g, t in CATALOG_PAIRS] + [catalog_atlas("planted-defect")]
    return [c for a in atlases for c in a.charts]


@pytest.mark.parametrize("chart", _all_catalog_charts(), ids=lambda c: c.id)
def test_chart_round_trip(chart):
    rng = np.random.default_rng(2)
    checked = 0
    for _ in range(1000):
        p = chart.sampler(rng)
        if not chart.contains(p):
            continue
        x, y = chart_apply(chart, p)
        np.testing.assert_allclose(chart.backward(x, y), p, atol=1e-9)
        x2, y2 = chart_apply(chart, chart.backward(x, y))
        np.testing.assert_allclose(np.concatenate([x2, y2]), np.concatenate([x, y]), atol=1e-9)
        checked += 1
    assert checked > 900


def test_polar_atlas_passes_transition_check():
    report = check_foliated_transition(POLAR_PLUS, POLAR_MINUS, 200, 1e-5, 1e-6)
    assert report.passed and report.samples == 200
    assert report.max_violation <= 1e-6


def test_planted_defect_fails_with_analytic_violation():
    a, b = planted_defect_pair()
    report = check_foliated_transition(a, b, 200, 1e-5, 1e-6)
    assert not report.passed
    assert report.max_violation == pytest.approx(0.1, rel=1e-6)


def test_identity_transition_has_zero_violation():
    report = check_foliated_transition(POLAR_PLUS, POLAR_PLUS)
    assert report.passed and report.max_violation == 0.0


def test_no_overlap_is_flagged():
    from leaftransfer.foliation import Chart

    left = Chart("left", 1, 1, lambda p: p[0] < -1, lambda p: (p[:1], p[1:]),
                 lambda x, y: np.concatenate([x, y]), lambda rng: rng.uniform(-3, -2, 2))
    right = Chart("right", 1, 1, lambda p: p[0] > 1, lambda p: (p[:1], p[1:]),
                  lambda x, y: np.concatenate([x, y]), lambda rng: rng.uniform(2, 3, 2))
    report = check_foliated_transition(left, right, 10)
    assert not report.passed and report.flag == "no-overlap"


@pytest.mark.parametrize("group, task", CATALOG_PAIRS)
def test_catalog_atlases_are_foliated(group, task):
    for report in orbit_foliation(group, task).check(200, 1e-5, 1e-6):
        assert report.passed, report.to_dict()


def test_leaf_of_and_same_leaf():
    assert leaf_of(POLAR_PLUS, (0, 1)) == Leaf("polar+", (1.0,))
    assert leaf_of(POLAR_PLUS, (3, 4)).transverse == (5.0,)
    assert same_leaf(POLAR_PLUS, (1, 0), (0, 1), 1e-9)
    assert not same_leaf(POLAR_PLUS, (1, 0), (2, 0), 1e-9)
    assert same_leaf(POLAR_PLUS, (1, 0), (1 + 5e-10, 0), 1e-9)


@pytest.mark.parametrize("d, n, k", [(2, 1, 1), (4, 2, 2), (5, 0, 5)])
def test_invariant_count(d, n, k):
    assert invariant_count(d, n) == k


def test_invariant_count_rejects_n_above_d():
    with pytest.raises(ValueError):
        invariant_count(2, 3)


@pytest.mark.parametrize("group, task", CATALOG_PAIRS)
def test_dimensional_bookkeeping(group, task):
    atlas = orbit_foliation(group, task)
    d = 2 if task is None else get_family(task).coord_dim
    assert atlas.d == d
    assert atlas.n == group.param_dim
    assert atlas.m == invariant_count(d, group.param_dim)


def test_orbit_atlas_dimensions_for_sinusoid():
    assert (orbit_foliation("translation", "sinusoid").m, orbit_foliation("translation", "sinusoid").n) == (3, 1)
    assert (orbit_foliation("affine", "sinusoid").m, orbit_foliation("affine", "sinusoid").n) == (2, 2)


def test_orbit_foliation_unknown_pair():
    with pytest.raises(KeyError):
        orbit_foliation("rotation2d", "sinusoid")


def test_radius_invariant_under_rotation():
    report = check_invariance(RADIUS, GroupFamily.ROTATION2D, 1000, 1e-12)
    assert report.passed and report.max_violation < 1e-12


def test_sinusoid_shape_invariant_under_affine():
    assert check_invariance(SINUSOID_SHAPE, GroupFamily.AFFINE, 1000, 1e-9).passed
    assert check_invariance(SINUSOID_FREQ_PHASE, GroupFamily.AFFINE, 1000, 1e-9, positive_scale=True).passed


def test_literal_phase_is_not_invariant_under_negative_scale():
    assert not check_invariance(SINUSOID_FREQ_PHASE, GroupFamily.AFFINE, 200, 1e-9).passed


def test_first_coordinate_not_rotation_invariant():
    report = check_invariance(FIRST_COORDINATE, GroupFamily.ROTATION2D, 100, 1e-9)
    assert not report.passed
    from leaftransfer.groups import act_point2d, rotation

    assert FIRST_COORDINATE([1, 0])[0] == 1.0
    assert FIRST_COORDINATE(act_point2d(rotation(math.pi / 2), [1, 0]))[0] == pytest.approx(0.0, abs=1e-15)


def test_check_report_json_schema():
    report = check_foliated_transition(POLAR_PLUS, POLAR_MINUS, 20, seed=4)
    data = json.loads(report.to_json())
    assert set(data) == {"check", "pass", "max_violation", "samples", "tol", "seed"}
    assert CheckReport.from_dict(data).to_dict() == data


@pytest.mark.parametrize("group, task", CATALOG_PAIRS[1:])
def test_orbits_stay_on_leaves(group, task):
    family = get_family(task)
    atlas = orbit_foliation(group, family)
    rng = np.random.default_rng(17)
    for _ in range(100):
        f = family.random_point(rng)
        g = act_on_task(random_element(group, rng), f)
        assert atlas.same_leaf(f, g, 1e-9)


def test_rotation_orbits_stay_on_circles():
    from leaftransfer.groups import act_point2d

    atlas = polar_atlas()
    rng = np.random.default_rng(5)
    for _ in range(200):
        p = rng.normal(0, 3, 2)
        q = act_point2d(random_element(GroupFamily.ROTATION2D, rng), p)
        assert atlas.leaf_of(p) == atlas.leaf_of(q)


@pytest.mark.parametrize("group, task", CATALOG_PAIRS[1:])
def test_same_transverse_coordinates_are_related(group, task):
    family = get_family(task)
    atlas = orbit_foliation(group, family)
    chart = atlas.charts[0]
    rng = np.random.default_rng(8)
    for _ in range(50):
        x, y1 = chart_apply(chart, family.random_point(rng))
        _, y2 = chart_apply(chart, family.random_point(rng))
        p, q = chart.backward(x, y1), chart.backward(x, y2)
        if not (chart.contains(p) and chart.contains(q)):
            continue
        assert solve_relating(family.point(p), family.point(q), group) is not None

import math

import numpy as np
import pytest

from leaftransfer.groups import GroupFamily, act_on_task, solve_relating, translation
from leaftransfer.taskspace import (
    POLY3,
    SINUSOID,
    Dataset,
    DomainError,
    evaluate,
    sample_dataset,
    similar,
    sinusoid,
    task_distance,
    voronoi_assign,
)


@pytest.mark.parametrize("coords, x, expected", [
    ((1, 1, 0, 0), 0.0, 0.0),
    ((1, 1, 0, 2), 0.0, 2.0),
    ((3, 1, 0, 2), math.pi / 2, 5.0),
])
def test_evaluate_sinusoid(coords, x, expected):
    assert evaluate(SINUSOID.point(coords), x) == pytest.approx(expected, abs=1e-15)


def test_evaluate_outside_domain(sin_task):
    with pytest.raises(DomainError):
        evaluate(sin_task, -0.1)


def test_poly_evaluator():
    f = POLY3.point([1.0, -2.0, 0.5])
    x = np.linspace(-1, 1, 7)
    np.testing.assert_allclose(f(x), 1 - 2 * x + 0.5 * x ** 2)


def test_sinusoid_canonical_amplitude():
    f = sinusoid(-2.0, 1.0, 0.3, 0.0)
    assert f.coords[0] == 2.0
    x = np.linspace(0, 2 * math.pi, 50)
    np.testing.assert_allclose(f(x), -2.0 * np.sin(x + 0.3), atol=1e-12)


def test_wrong_coord_count():
    with pytest.raises(ValueError):
        SINUSOID.point([1.0, 2.0])


def test_noise_free_dataset(sin_task):
    d = sample_dataset(sin_task, 25, 0.0, 3)
    assert np.array_equal(d.targets, sin_task(d.inputs))
    lo, hi = SINUSOID.domain
    assert np.all((d.inputs >= lo) & (d.inputs <= hi))


def test_dataset_determinism(sin_task):
    d1 = sample_dataset(sin_task, 40, 0.2, 99)
    d2 = sample_dataset(sin_task, 40, 0.2, 99)
    assert d1 == d2
    assert d1.to_csv() == d2.to_csv()
    assert sample_dataset(sin_task, 40, 0.2, 100) != d1


def test_noise_mean_within_standard_error_bound(sin_task):
    d = sample_dataset(sin_task, 10_000, 0.1, 5)
    # 3 sigma / sqrt(n) = 0.003 < 0.004
    assert abs(np.mean(d.targets - sin_task(d.inputs))) <= 0.004


def test_dataset_rejects_bad_args(sin_task):
    with pytest.raises(ValueError):
        sample_dataset(sin_task, 0)
    with pytest.raises(ValueError):
        sample_dataset(sin_task, 5, -1.0)


def test_dataset_csv_round_trip(sin_task, tmp_path):
    d = sample_dataset(sin_task, 30, 0.3, 1)
    path = tmp_path / "d.csv"
    d.to_csv(path)
    text = path.read_text()
    assert text.splitlines()[0] == "x,y"
    back = Dataset.read_csv(path, 0.3, 1)
    assert np.array_equal(back.inputs, d.inputs) and np.array_equal(back.targets, d.targets)


def test_task_distance_values(sin_task):
    assert task_distance(sin_task, sin_task) == 0.0
    shifted = act_on_task(translation(2.0), sin_task)
    assert task_distance(sin_task, shifted) == pytest.approx(2.0, abs=1e-12)


def test_task_distance_family_mismatch(sin_task):
    with pytest.raises(ValueError):
        task_distance(sin_task, POLY3.point([0, 1, 0]))


def test_task_distance_pseudometric():
    rng = np.random.default_rng(21)
    for _ in range(200):
        f, g, h = (SINUSOID.random_point(rng) for _ in range(3))
        fg, gf = task_distance(f, g), task_distance(g, f)
        assert fg >= 0 and fg == gf
        assert task_distance(f, h) <= fg + task_distance(g, h) + 1e-9


def test_similar(sin_task):
    assert similar(sin_task, sin_task, 1e-12)
    assert not similar(sin_task, sinusoid(1, 1, 0, 2), 0.5)
    assert similar(sin_task, sinusoid(1, 1, 0, 0.01), 0.5)
    with pytest.raises(ValueError):
        similar(sin_task, sin_task, 0.0)


def test_voronoi_assign(sin_task):
    far = sinusoid(1, 1, 0, 10)
    assert voronoi_assign(sin_task, [sin_task, far]) == 0
    assert voronoi_assign(sinusoid(1, 1, 0, 1.9), [sin_task, far]) == 0
    # offset 1 is equidistant from offsets 0 and 2
    assert voronoi_assign(sinusoid(1, 1, 0, 1), [sin_task, sinusoid(1, 1, 0, 2)]) == 0
    with pytest.raises(ValueError):
        voronoi_assign(sin_task, [])


def test_relatedness_and_similarity_are_independent(sin_task):
    eps = 0.5

    def related(f, g):
        return solve_relating(f, g, GroupFamily.TRANSLATION) is not None

    cases = {
        (True, True): sinusoid(1, 1, 0, 0.1),
        (True, False): sinusoid(1, 1, 0, 3.0),
        (False, True): sinusoid(1.1, 1, 0, 0.0),
        (False, False): sinusoid(1, 3, 1.0, 2.0),
    }
    for (rel, sim), g in cases.items():
        assert related(sin_task, g) is rel
        assert similar(sin_task, g, eps) is sim

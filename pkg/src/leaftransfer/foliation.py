"""Charts, atlases and leaves of regular foliations, plus invariant quantities.

A foliation chart splits a point ``p`` of ``R^d`` into ``(x, y)`` with
``x in R^m`` labelling the leaf (transverse part) and ``y in R^n`` locating the
point inside the leaf. Two charts are foliation-compatible when the transverse
part of their transition does not depend on ``y``; that condition is checked
numerically with central differences.

Charts come from a fixed catalog. Singular sets (the origin of the plane, zero
amplitude under the affine group) and branch cuts are kept outside chart
regions.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from leaftransfer.groups import (
    GroupFamily,
    act_on_task,
    act_point2d,
    random_element,
)
from leaftransfer.taskspace import TaskFamily, TaskPoint, get_family, wrap_angle

# angular distance kept clear of every branch cut
CUT_MARGIN = 1e-6
MIN_RADIUS = 1e-9

Point = np.ndarray
Split = tuple[np.ndarray, np.ndarray]


class ChartError(ValueError):
    """A point lies outside the region where a chart is defined."""


def _as_point(p) -> np.ndarray:
    if isinstance(p, TaskPoint):
        return p.vector
    return np.asarray(p, dtype=float).ravel()


@dataclass(frozen=True, eq=False)
class Chart:
    id: str
    m: int
    n: int
    region: Callable[[Point], bool]
    forward: Callable[[Point], Split]
    backward: Callable[[np.ndarray, np.ndarray], Point]
    sampler: Callable[[np.random.Generator], Point] | None = None

    @property
    def d(self) -> int:
        return self.m + self.n

    def contains(self, p) -> bool:
        p = _as_point(p)
        return p.shape == (self.d,) and bool(np.all(np.isfinite(p))) and bool(self.region(p))

    def __repr__(self):
        return f"Chart({self.id!r}, m={self.m}, n={self.n})"


@dataclass(frozen=True, eq=False)
class Atlas:
    id: str
    charts: tuple[Chart, ...]

    def __post_init__(self):
        dims = {(c.m, c.n) for c in self.charts}
        if len(dims) != 1:
            raise ValueError(f"charts of atlas {self.id!r} disagree on (m, n): {dims}")

    @property
    def m(self) -> int:
        return self.charts[0].m

    @property
    def n(self) -> int:
        return self.charts[0].n

    @property
    def d(self) -> int:
        return self.m + self.n

    def chart(self, chart_id: str) -> Chart:
        for c in self.charts:
            if c.id == chart_id:
                return c
        raise KeyError(chart_id)

    def chart_for(self, *points) -> Chart:
        """First chart whose region contains every given point."""
        for c in self.charts:
            if all(c.contains(p) for p in points):
                return c
        raise ChartError(f"no chart of atlas {self.id!r} covers the given points")

    def leaf_of(self, p, tol: float = 1e-9) -> Leaf:
        return leaf_of(self.chart_for(p), p, tol)

    def same_leaf(self, p, q, tol: float = 1e-9) -> bool:
        return same_leaf(self.chart_for(p, q), p, q, tol)

    def check(self, overlap_samples: int = 200, step: float = 1e-5, tol: float = 1e-6, seed: int = 0) -> list[CheckReport]:
        """Transition reports for every ordered pair of distinct charts."""
        return [
            check_foliated_transition(a, b, overlap_samples, step, tol, seed)
            for a in self.charts
            for b in self.charts
            if a is not b
        ]


@dataclass(frozen=True, eq=False)
class Leaf:
    """Leaf label: the transverse coordinate in a chart, compared to ``tol``."""

    chart_id: str
    transverse: tuple[float, ...]
    tol: float = 1e-9

    def __eq__(self, other):
        if not isinstance(other, Leaf):
            return NotImplemented
        if self.chart_id != other.chart_id:
            return False
        gap = np.max(np.abs(np.subtract(self.transverse, other.transverse)), initial=0.0)
        return bool(gap <= self.tol)

    __hash__ = None


@dataclass
class CheckReport:
    check: str
    passed: bool
    max_violation: float
    samples: int
    tol: float
    seed: int | None = None
    flag: str | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "check": self.check,
            "pass": self.passed,
            "max_violation": self.max_violation,
            "samples": self.samples,
            "tol": self.tol,
            "seed": self.seed,
        }
        if self.flag is not None:
            out["flag"] = self.flag
        if self.details:
            out["details"] = self.details
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> CheckReport:
        return cls(
            data["check"], data["pass"], data["max_violation"], data["samples"], data["tol"],
            data.get("seed"), data.get("flag"), data.get("details", {}),
        )


# -- chart operations -------------------------------------------------------


def chart_apply(c: Chart, p) -> Split:
    p = _as_point(p)
    if not c.contains(p):
        raise ChartError(f"point {p} outside region of chart {c.id!r}")
    x, y = c.forward(p)
    return np.asarray(x, dtype=float), np.asarray(y, dtype=float)


def transition(a: Chart, b: Chart, xy: Split) -> Split:
    """Re-express chart-``a`` coordinates in chart ``b``."""
    if a is b:
        return np.asarray(xy[0], dtype=float), np.asarray(xy[1], dtype=float)
    p = a.backward(np.asarray(xy[0], dtype=float), np.asarray(xy[1], dtype=float))
    if not b.contains(p):
        raise ChartError(f"point not in the overlap of {a.id!r} and {b.id!r}")
    return chart_apply(b, p)


def _overlap_samples(a: Chart, b: Chart, count: int, step: float, rng: np.random.Generator) -> list[Split]:
    """Chart-``a`` coordinates whose ``y``-perturbations stay inside both regions."""
    if a.sampler is None:
        raise ValueError(f"chart {a.id!r} has no sampler")
    found: list[Split] = []
    for _ in range(20 * count):
        p = a.sampler(rng)
        if not (a.contains(p) and b.contains(p)):
            continue
        x, y = chart_apply(a, p)
        ok = True
        for j in range(a.n):
            for sign in (1.0, -1.0):
                yy = y.copy()
                yy[j] += sign * step
                q = a.backward(x, yy)
                if not (a.contains(q) and b.contains(q)):
                    ok = False
        if ok:
            found.append((x, y))
            if len(found) == count:
                break
    return found


def check_foliated_transition(
    a: Chart, b: Chart, overlap_samples: int = 200, step: float = 1e-5, tol: float = 1e-6, seed: int = 0
) -> CheckReport:
    """Estimate ``max |d h_m / d y|`` on the overlap of two charts."""
    name = f"foliated-transition:{a.id}->{b.id}"
    if a is b:
        return CheckReport(name, True, 0.0, overlap_samples, tol, seed)
    rng = np.random.default_rng(seed)
    points = _overlap_samples(a, b, overlap_samples, step, rng)
    if not points:
        return CheckReport(name, False, math.nan, 0, tol, seed, flag="no-overlap")

    worst = 0.0
    for x, y in points:
        for j in range(a.n):
            up, down = y.copy(), y.copy()
            up[j] += step
            down[j] -= step
            xm_up, _ = transition(a, b, (x, up))
            xm_down, _ = transition(a, b, (x, down))
            if xm_up.size:
                worst = max(worst, float(np.max(np.abs(xm_up - xm_down))) / (2 * step))
    return CheckReport(name, worst <= tol, worst, len(points), tol, seed)


def leaf_of(c: Chart, p, tol: float = 1e-9) -> Leaf:
    x, _ = chart_apply(c, p)
    return Leaf(c.id, tuple(float(v) for v in x), tol)


def same_leaf(c: Chart, p, q, tol: float = 1e-9) -> bool:
    return leaf_of(c, p, tol) == leaf_of(c, q, tol)


# -- chart catalog ----------------------------------------------------------


def rectified_chart(d: int, leaf_idx: Sequence[int], chart_id: str | None = None,
                    sampler: Callable | None = None) -> Chart:
    """Coordinate split chart on ``R^d``: ``leaf_idx`` entries form ``y``."""
    leaf_idx = list(leaf_idx)
    inv_idx = [i for i in range(d) if i not in leaf_idx]

    def forward(p):
        return p[inv_idx], p[leaf_idx]

    def backward(x, y):
        p = np.empty(d)
        p[inv_idx] = x
        p[leaf_idx] = y
        return p

    if sampler is None:
        def sampler(rng):
            return rng.uniform(-3.0, 3.0, size=d)

    return Chart(
        chart_id or f"rectified{d}:{','.join(map(str, leaf_idx))}",
        len(inv_idx), len(leaf_idx), lambda p: True, forward, backward, sampler,
    )


def _polar_sampler(rng):
    r = rng.uniform(0.1, 5.0)
    t = rng.uniform(-math.pi, math.pi)
    return np.array([r * math.cos(t), r * math.sin(t)])


def _polar_chart(chart_id: str, cut: float) -> Chart:
    """Polar chart with angle in ``(cut - 2pi, cut)`` measured around the origin."""
    lo = cut - 2 * math.pi

    def angle(p):
        return lo + np.mod(math.atan2(p[1], p[0]) - lo, 2 * math.pi)

    def region(p):
        if math.hypot(p[0], p[1]) <= MIN_RADIUS:
            return False
        t = angle(p)
        return lo + CUT_MARGIN < t < cut - CUT_MARGIN

    def forward(p):
        return np.array([math.hypot(p[0], p[1])]), np.array([angle(p)])

    def backward(x, y):
        return np.array([x[0] * math.cos(y[0]), x[0] * math.sin(y[0])])

    return Chart(chart_id, 1, 1, region, forward, backward, _polar_sampler)


POLAR_PLUS = _polar_chart("polar+", math.pi)
POLAR_MINUS = _polar_chart("polar-", 2 * math.pi)


def polar_atlas() -> Atlas:
    """Circles around the origin: radius is transverse, angle runs along the leaf."""
    return Atlas("polar", (POLAR_PLUS, POLAR_MINUS))


def _sinusoid_point_sampler(rng):
    return get_family("sinusoid").random_point(rng).vector


def _sinusoid_affine_chart(chart_id: str, branch: float) -> Chart:
    """Orbit chart for the affine group on sinusoid coordinates.

    ``A sin(w x + phi) + c`` is rewritten as ``s sin(w x + psi) + c`` with
    ``psi`` in ``[branch, branch + pi)`` and a signed amplitude ``s``. Then
    ``(w, psi)`` is transverse and ``(s, c)`` moves along the leaf.
    """

    def split(p):
        k = math.floor((p[2] - branch) / math.pi)
        psi = p[2] - k * math.pi
        sign = -1.0 if k % 2 else 1.0
        return psi, sign * p[0]

    def region(p):
        if p[0] <= MIN_RADIUS:
            return False
        psi, _ = split(p)
        return branch + CUT_MARGIN < psi < branch + math.pi - CUT_MARGIN

    def forward(p):
        psi, s = split(p)
        return np.array([p[1], psi]), np.array([s, p[3]])

    def backward(x, y):
        s, c = y
        phase = x[1] if s >= 0 else x[1] + math.pi
        return np.array([abs(s), x[0], float(wrap_angle(phase)), c])

    return Chart(chart_id, 2, 2, region, forward, backward, _sinusoid_point_sampler)


def _poly_affine_chart(d: int, pivot: int) -> Chart:
    """Orbit chart for the affine group on polynomial coefficients.

    ``y = (c0, c_pivot)``; the transverse part is the remaining non-constant
    coefficients divided by the pivot, which is unchanged by ``c -> b c + a e0``.
    """
    rest = [i for i in range(1, d) if i != pivot]
    family = get_family(f"poly{d}")

    def forward(p):
        return p[rest] / p[pivot], np.array([p[0], p[pivot]])

    def backward(x, y):
        p = np.empty(d)
        p[0], p[pivot] = y
        p[rest] = np.asarray(x) * y[1]
        return p

    def sampler(rng):
        return family.random_point(rng).vector

    return Chart(
        f"poly{d}-affine-pivot{pivot}", d - 2, 2,
        lambda p: abs(p[pivot]) > MIN_RADIUS, forward, backward, sampler,
    )


def planted_defect_pair() -> tuple[Chart, Chart]:
    """Two charts on ``R^2`` whose transition shears ``x' = x + 0.1 y``."""
    plane = rectified_chart(2, [1], "plane")
    sheared = Chart(
        "sheared", 1, 1, lambda p: True,
        lambda p: (np.array([p[0] + 0.1 * p[1]]), np.array([p[1]])),
        lambda x, y: np.array([x[0] - 0.1 * y[0], y[0]]),
        plane.sampler,
    )
    return plane, sheared


def planted_defect_atlas() -> Atlas:
    return Atlas("planted-defect", planted_defect_pair())


def orbit_foliation(family: GroupFamily, task_family: TaskFamily | str | None = None) -> Atlas:
    """Catalog atlas whose leaves are the orbits of ``family`` on ``task_family``."""
    family = GroupFamily.parse(family)
    if family is GroupFamily.ROTATION2D:
        if task_family not in (None, "plane"):
            raise KeyError("rotation foliation is only cataloged on the plane")
        return polar_atlas()
    if isinstance(task_family, str):
        task_family = get_family(task_family)
    if task_family is None:
        raise KeyError(f"{family.value} needs a task family")
    if family not in task_family.action_rules:
        raise KeyError(f"{task_family.name} has no action rule for {family.value}")

    name = task_family.name
    d = task_family.coord_dim
    if name == "sinusoid":
        if family is GroupFamily.TRANSLATION:
            chart = rectified_chart(4, [3], "sinusoid-translation", _sinusoid_point_sampler)
            return Atlas("sinusoid-translation", (chart,))
        return Atlas("sinusoid-affine", (
            _sinusoid_affine_chart("sinusoid-affine-a", 0.0),
            _sinusoid_affine_chart("sinusoid-affine-b", -math.pi / 2),
        ))
    if name.startswith("poly"):
        if family is GroupFamily.TRANSLATION:
            def sampler(rng):
                return task_family.random_point(rng).vector
            chart = rectified_chart(d, [0], f"{name}-translation", sampler)
            return Atlas(f"{name}-translation", (chart,))
        pivots = [1, 2] if d >= 3 else [1]
        return Atlas(f"{name}-affine", tuple(_poly_affine_chart(d, k) for k in pivots))
    raise KeyError(f"no cataloged foliation for ({family.value}, {name})")


CATALOG_PAIRS: tuple[tuple[GroupFamily, str | None], ...] = (
    (GroupFamily.ROTATION2D, None),
    (GroupFamily.TRANSLATION, "sinusoid"),
    (GroupFamily.AFFINE, "sinusoid"),
    (GroupFamily.TRANSLATION, "poly3"),
    (GroupFamily.AFFINE, "poly3"),
)


def catalog_atlas(name: str) -> Atlas:
    """Look up an atlas by CLI-style name, e.g. ``polar`` or ``sinusoid-affine``."""
    if name == "polar":
        return polar_atlas()
    if name == "planted-defect":
        return planted_defect_atlas()
    task, _, group = name.rpartition("-")
    if not task:
        raise KeyError(f"unknown atlas {name!r}")
    return orbit_foliation(GroupFamily.parse(group), task)


# -- invariants -------------------------------------------------------------


def invariant_count(d: int, n: int) -> int:
    """Number of independent invariants of an ``n``-dimensional free action on ``R^d``."""
    if not 0 <= n <= d:
        raise ValueError(f"need 0 <= n <= d, got d={d}, n={n}")
    return d - n


@dataclass(frozen=True, eq=False)
class InvariantQuantity:
    """A map ``q`` into ``R^k``.

    ``domain`` is the task family it reads coordinates from, or ``None`` for
    points of the plane.
    """

    name: str
    k: int
    fn: Callable[[np.ndarray], np.ndarray]
    domain: TaskFamily | None = None

    def __call__(self, p) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.fn(_as_point(p)), dtype=float))


RADIUS = InvariantQuantity("radius", 1, lambda p: math.hypot(p[0], p[1]))
FIRST_COORDINATE = InvariantQuantity("first-coordinate", 1, lambda p: p[0])


def _sinusoid_shape(p):
    return np.array([p[1], np.mod(p[2], math.pi)])


SINUSOID_SHAPE = InvariantQuantity("sinusoid-shape", 2, _sinusoid_shape, get_family("sinusoid"))
SINUSOID_FREQ_PHASE = InvariantQuantity(
    "sinusoid-freq-phase", 2, lambda p: np.array([p[1], p[2]]), get_family("sinusoid")
)

QUANTITIES = {q.name: q for q in (RADIUS, FIRST_COORDINATE, SINUSOID_SHAPE, SINUSOID_FREQ_PHASE)}


def check_invariance(
    q: InvariantQuantity,
    family: GroupFamily,
    samples: int = 1000,
    tol: float = 1e-9,
    seed: int = 0,
    positive_scale: bool = False,
) -> CheckReport:
    """Max ``|q(p) - q(g p)|`` over seeded random points and group elements.

    ``positive_scale`` restricts affine elements to ``b > 0``.
    """
    family = GroupFamily.parse(family)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        g = random_element(family, rng)
        if positive_scale and family is GroupFamily.AFFINE and g.b < 0:
            g = type(g)(family, (g.a, -g.b))
        if q.domain is None:
            p = rng.normal(0.0, 3.0, size=2)
            moved = act_point2d(g, p)
        else:
            task = q.domain.random_point(rng)
            p, moved = task, act_on_task(g, task)
        worst = max(worst, float(np.max(np.abs(q(p) - q(moved)))))
    return CheckReport(f"invariance:{q.name}:{family.value}", worst <= tol, worst, samples, tol, seed)

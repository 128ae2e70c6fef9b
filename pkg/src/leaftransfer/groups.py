"""Parameterized transformation groups and their actions on tasks.

Three one- or two-parameter families are provided:

* ``TRANSLATION``  acts on outputs by ``y -> y + a``; params ``[a]``.
* ``AFFINE``       acts on outputs by ``y -> b*y + a``; params ``[a, b]``.
* ``ROTATION2D``   acts on points of the plane; params ``[angle]``.

Parameters are always stored in the canonical order ``(a, b)``.
``compose(outer, inner)`` means "apply ``inner`` first, then ``outer``".
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from leaftransfer.taskspace import TaskPoint

AFFINE_MIN_SCALE = 1e-12


class GroupFamily(enum.Enum):
    TRANSLATION = "translation"
    AFFINE = "affine"
    ROTATION2D = "rotation2d"

    @property
    def param_dim(self) -> int:
        return 2 if self is GroupFamily.AFFINE else 1

    @property
    def acts_on_outputs(self) -> bool:
        return self is not GroupFamily.ROTATION2D

    @classmethod
    def parse(cls, name: str | GroupFamily) -> GroupFamily:
        if isinstance(name, GroupFamily):
            return name
        key = name.strip().lower().replace("-", "").replace("_", "")
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown group family {name!r}")


class GroupError(ValueError):
    """Invalid group element or an operation applied to the wrong family."""


@dataclass(frozen=True)
class GroupElement:
    family: GroupFamily
    params: tuple[float, ...]

    def __post_init__(self):
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        if len(params) != self.family.param_dim:
            raise GroupError(
                f"{self.family.value} expects {self.family.param_dim} params, got {len(params)}"
            )
        if not all(math.isfinite(p) for p in params):
            raise GroupError(f"non-finite params {params}")
        if self.family is GroupFamily.AFFINE and abs(params[1]) <= AFFINE_MIN_SCALE:
            raise GroupError(f"affine scale b={params[1]} is not invertible")

    @property
    def a(self) -> float:
        if self.family is GroupFamily.ROTATION2D:
            raise GroupError("rotation has no offset parameter")
        return self.params[0]

    @property
    def b(self) -> float:
        if self.family is GroupFamily.AFFINE:
            return self.params[1]
        if self.family is GroupFamily.TRANSLATION:
            return 1.0
        raise GroupError("rotation has no scale parameter")

    @property
    def angle(self) -> float:
        if self.family is not GroupFamily.ROTATION2D:
            raise GroupError(f"{self.family.value} has no angle")
        return self.params[0]

    def __call__(self, y):
        return act_pointwise(self, y)


def translation(a: float) -> GroupElement:
    return GroupElement(GroupFamily.TRANSLATION, (a,))


def affine(a: float, b: float) -> GroupElement:
    return GroupElement(GroupFamily.AFFINE, (a, b))


def rotation(angle: float) -> GroupElement:
    return GroupElement(GroupFamily.ROTATION2D, (angle,))


def identity(family: GroupFamily) -> GroupElement:
    if family is GroupFamily.AFFINE:
        return affine(0.0, 1.0)
    return GroupElement(family, (0.0,))


def _check_same_family(*elems: GroupElement) -> GroupFamily:
    family = elems[0].family
    for e in elems[1:]:
        if e.family is not family:
            raise GroupError(f"family mismatch: {family.value} vs {e.family.value}")
    return family


def compose(outer: GroupElement, inner: GroupElement) -> GroupElement:
    """Return the element acting as ``outer`` after ``inner``."""
    family = _check_same_family(outer, inner)
    if family is GroupFamily.AFFINE:
        # b1 * (b2 * y + a2) + a1
        return affine(outer.b * inner.a + outer.a, outer.b * inner.b)
    return GroupElement(family, (outer.params[0] + inner.params[0],))


def inverse(g: GroupElement) -> GroupElement:
    if g.family is GroupFamily.AFFINE:
        return affine(-g.a / g.b, 1.0 / g.b)
    return GroupElement(g.family, (-g.params[0],))


def act_pointwise(g: GroupElement, y):
    """Apply ``g`` to an output value (scalar or array)."""
    if g.family is GroupFamily.TRANSLATION:
        return y + g.a
    if g.family is GroupFamily.AFFINE:
        return g.b * y + g.a
    raise GroupError("rotation acts on points in the plane, use act_point2d")


def rotation_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def act_point2d(g: GroupElement, p) -> np.ndarray:
    if g.family is not GroupFamily.ROTATION2D:
        raise GroupError(f"{g.family.value} does not act on points of the plane")
    p = np.asarray(p, dtype=float)
    return p @ rotation_matrix(g.angle).T


def act_on_task(g: GroupElement, f: TaskPoint) -> TaskPoint:
    """Transform a task by acting on its coordinates.

    The task family must declare an action rule for ``g.family``; the rule is
    required to agree with :func:`act_pointwise` applied to every output.
    """
    rule = f.family.action_rules.get(g.family)
    if rule is None:
        raise GroupError(f"task family {f.family.name!r} has no action rule for {g.family.value}")
    return f.family.point(rule(g, np.asarray(f.coords, dtype=float)))


def random_element(family: GroupFamily, rng: np.random.Generator, scale: float = 5.0) -> GroupElement:
    """Draw a group element with moderately sized parameters.

    Affine scales are drawn as ``±U(0.2, scale)`` so elements stay far from the
    non-invertible set.
    """
    if family is GroupFamily.TRANSLATION:
        return translation(rng.uniform(-scale, scale))
    if family is GroupFamily.AFFINE:
        a = rng.uniform(-scale, scale)
        b = rng.uniform(0.2, scale) * rng.choice([-1.0, 1.0])
        return affine(a, b)
    return rotation(rng.uniform(-math.pi, math.pi))


# -- relatedness ------------------------------------------------------------


@dataclass(frozen=True)
class Relation:
    """Outcome of searching for the element that maps one task onto another."""

    element: GroupElement | None
    residual: float
    degenerate: bool = False

    @property
    def related(self) -> bool:
        return self.element is not None


def default_grid(f: TaskPoint, n: int = 101) -> np.ndarray:
    return f.family.grid(n)


def max_residual(g: GroupElement, f: TaskPoint, target: TaskPoint, grid) -> float:
    grid = np.asarray(grid, dtype=float)
    return float(np.max(np.abs(act_pointwise(g, f(grid)) - target(grid))))


def relates(g: GroupElement, f: TaskPoint, target: TaskPoint, grid=None, tol: float = 1e-6) -> bool:
    """True when ``g(f)`` matches ``target`` to ``tol`` everywhere on ``grid``."""
    grid = default_grid(f) if grid is None else grid
    return max_residual(g, f, target, grid) <= tol


def fit_relating(f: TaskPoint, g: TaskPoint, family: GroupFamily, grid=None, tol: float = 1e-6) -> Relation:
    """Least-squares search for the element taking ``f`` to ``g``.

    The fit is accepted when the maximum pointwise residual over the grid is at
    most ``tol``. A constant ``f`` under the affine family is reported as
    degenerate, since its scale cannot be identified.
    """
    family = GroupFamily.parse(family)
    if not family.acts_on_outputs:
        raise GroupError(f"{family.value} does not act on task outputs")
    grid = default_grid(f) if grid is None else np.asarray(grid, dtype=float)
    if len(grid) < family.param_dim + 1:
        raise ValueError(f"grid needs at least {family.param_dim + 1} points, got {len(grid)}")
    fy, gy = f(grid), g(grid)

    if family is GroupFamily.TRANSLATION:
        elem = translation(float(np.mean(gy - fy)))
    else:
        spread = np.ptp(fy)
        if spread <= 1e-12 * (1.0 + np.max(np.abs(fy))):
            return Relation(None, math.inf, degenerate=True)
        design = np.column_stack([fy, np.ones_like(fy)])
        (b, a), *_ = np.linalg.lstsq(design, gy, rcond=None)
        if abs(b) <= AFFINE_MIN_SCALE:
            return Relation(None, float(np.max(np.abs(gy - a))))
        elem = affine(float(a), float(b))

    residual = float(np.max(np.abs(act_pointwise(elem, fy) - gy)))
    if residual > tol:
        return Relation(None, residual)
    return Relation(elem, residual)


def solve_relating(f: TaskPoint, g: TaskPoint, family: GroupFamily, grid=None, tol: float = 1e-6):
    """Return the element relating ``f`` to ``g``, or ``None`` if none fits."""
    return fit_relating(f, g, family, grid, tol).element


def orbit_grid(f: TaskPoint, family: GroupFamily, param_grid: Sequence[Sequence[float]]) -> list[TaskPoint]:
    """Images of ``f`` under the elements listed in ``param_grid``."""
    family = GroupFamily.parse(family)
    return [act_on_task(GroupElement(family, tuple(p)), f) for p in param_grid]

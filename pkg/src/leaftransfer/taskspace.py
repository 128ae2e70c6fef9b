"""Closed-form task families, noisy datasets, and the similarity machinery.

A task is a point in a finite-dimensional family: a coordinate vector plus a
closed-form evaluator. Keeping tasks on coordinates makes group actions exact,
while pointwise checks on a grid serve as the verification layer.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from leaftransfer.groups import GroupElement, GroupFamily

DEFAULT_GRID_N = 201

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]
ActionRule = Callable[[GroupElement, np.ndarray], np.ndarray]


def wrap_angle(phi):
    """Map an angle into ``[-pi, pi)``."""
    return np.mod(np.asarray(phi, dtype=float) + math.pi, 2 * math.pi) - math.pi


@dataclass(frozen=True, eq=False)
class TaskFamily:
    """A manifold of tasks described by ``coord_dim`` real coordinates.

    ``bounds`` holds one ``(lo, hi)`` interval per input dimension. Most
    families have scalar inputs; the pendulum family takes ``(theta, omega)``.
    """

    name: str
    coord_dim: int
    bounds: tuple[tuple[float, float], ...]
    evaluator: Evaluator
    action_rules: Mapping[GroupFamily, ActionRule] = field(default_factory=dict)
    coord_names: tuple[str, ...] = ()
    canonicalize: Callable[[np.ndarray], np.ndarray] | None = None
    sampler: Callable[[np.random.Generator], np.ndarray] | None = None

    @property
    def input_dim(self) -> int:
        return len(self.bounds)

    @property
    def domain(self) -> tuple[float, float]:
        if self.input_dim != 1:
            raise AttributeError(f"{self.name} has a {self.input_dim}-d input box, use bounds")
        return self.bounds[0]

    def point(self, coords) -> TaskPoint:
        return TaskPoint(self, coords)

    def random_point(self, rng: np.random.Generator) -> TaskPoint:
        if self.sampler is None:
            return self.point(rng.uniform(-2.0, 2.0, size=self.coord_dim))
        return self.point(self.sampler(rng))

    def grid(self, n: int) -> np.ndarray:
        """Uniform grid over the domain; ``ceil(sqrt(n))`` per axis for 2-d boxes."""
        if self.input_dim == 1:
            lo, hi = self.bounds[0]
            return np.linspace(lo, hi, n)
        per_axis = math.ceil(n ** (1.0 / self.input_dim))
        axes = [np.linspace(lo, hi, per_axis) for lo, hi in self.bounds]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def sample_inputs(self, rng: np.random.Generator, n: int) -> np.ndarray:
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        if self.input_dim == 1:
            return rng.uniform(lo[0], hi[0], size=n)
        return rng.uniform(lo, hi, size=(n, self.input_dim))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        if self.input_dim == 1:
            lo, hi = self.bounds[0]
            return bool(np.all((x >= lo) & (x <= hi)))
        x = x.reshape(-1, self.input_dim)
        return all(np.all((x[:, i] >= lo) & (x[:, i] <= hi)) for i, (lo, hi) in enumerate(self.bounds))

    def __repr__(self):
        return f"TaskFamily({self.name!r}, d={self.coord_dim})"


@dataclass(frozen=True)
class TaskPoint:
    family: TaskFamily
    coords: tuple[float, ...]

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float).ravel()
        if coords.shape[0] != self.family.coord_dim:
            raise ValueError(
                f"{self.family.name} needs {self.family.coord_dim} coords, got {coords.shape[0]}"
            )
        if self.family.canonicalize is not None:
            coords = self.family.canonicalize(coords)
        object.__setattr__(self, "coords", tuple(float(c) for c in coords))

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.coords)

    def __call__(self, x):
        return self.family.evaluator(self.vector, np.asarray(x, dtype=float))

    def __repr__(self):
        inner = ", ".join(f"{c:.6g}" for c in self.coords)
        return f"{self.family.name}({inner})"


class DomainError(ValueError):
    pass


def evaluate(f: TaskPoint, x):
    if not f.family.contains(x):
        raise DomainError(f"input outside domain {f.family.bounds} of {f.family.name}")
    return f(x)


# -- catalog ----------------------------------------------------------------


def _sinusoid_eval(c: np.ndarray, x: np.ndarray) -> np.ndarray:
    amp, omega, phase, offset = c
    return amp * np.sin(omega * x + phase) + offset


def _sinusoid_canonical(c: np.ndarray) -> np.ndarray:
    c = np.array(c, dtype=float)
    if c[0] < 0:
        c[0] = -c[0]
        c[2] += math.pi
    c[2] = wrap_angle(c[2])
    return c


def _sinusoid_translate(g: GroupElement, c: np.ndarray) -> np.ndarray:
    out = c.copy()
    out[3] += g.a
    return out


def _sinusoid_affine(g: GroupElement, c: np.ndarray) -> np.ndarray:
    # b*(A sin(.) + c) + a; a negative b is absorbed by canonicalization into the phase
    out = c.copy()
    out[0] = g.b * c[0]
    out[3] = g.b * c[3] + g.a
    return out


def _sinusoid_sampler(rng: np.random.Generator) -> np.ndarray:
    return np.array([
        rng.uniform(0.5, 2.0),
        rng.uniform(0.5, 3.0),
        rng.uniform(-math.pi, math.pi),
        rng.uniform(-2.0, 2.0),
    ])


SINUSOID = TaskFamily(
    name="sinusoid",
    coord_dim=4,
    bounds=((0.0, 2 * math.pi),),
    evaluator=_sinusoid_eval,
    action_rules={
        GroupFamily.TRANSLATION: _sinusoid_translate,
        GroupFamily.AFFINE: _sinusoid_affine,
    },
    coord_names=("amplitude", "omega", "phase", "offset"),
    canonicalize=_sinusoid_canonical,
    sampler=_sinusoid_sampler,
)


def sinusoid(amplitude=1.0, omega=1.0, phase=0.0, offset=0.0) -> TaskPoint:
    return SINUSOID.point([amplitude, omega, phase, offset])


def _poly_eval(c: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.polynomial.polynomial.polyval(x, c)


def _poly_translate(g: GroupElement, c: np.ndarray) -> np.ndarray:
    out = c.copy()
    out[0] += g.a
    return out


def _poly_affine(g: GroupElement, c: np.ndarray) -> np.ndarray:
    out = g.b * c
    out[0] += g.a
    return out


def poly_family(degree_count: int = 3) -> TaskFamily:
    """Polynomials ``sum c_i x^i`` with ``degree_count`` coefficients on ``[-1, 1]``."""
    if degree_count < 2:
        raise ValueError("poly family needs at least 2 coefficients")

    def sampler(rng):
        c = rng.uniform(-2.0, 2.0, size=degree_count)
        # keep the linear coefficient away from 0, the affine orbit chart pivots on it
        c[1] = rng.uniform(0.5, 2.0) * rng.choice([-1.0, 1.0])
        return c

    return TaskFamily(
        name=f"poly{degree_count}",
        coord_dim=degree_count,
        bounds=((-1.0, 1.0),),
        evaluator=_poly_eval,
        action_rules={
            GroupFamily.TRANSLATION: _poly_translate,
            GroupFamily.AFFINE: _poly_affine,
        },
        coord_names=tuple(f"c{i}" for i in range(degree_count)),
        sampler=sampler,
    )


POLY3 = poly_family(3)

_REGISTRY: dict[str, TaskFamily] = {"sinusoid": SINUSOID, "poly3": POLY3}


def register_family(family: TaskFamily) -> None:
    _REGISTRY[family.name] = family


def get_family(name: str) -> TaskFamily:
    if name not in _REGISTRY and name.startswith("poly") and name[4:].isdigit():
        register_family(poly_family(int(name[4:])))
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown task family {name!r}; known: {sorted(_REGISTRY)}") from None


# -- datasets ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Samples ``(x_i, y_i)``; ``inputs`` is ``(n,)`` or ``(n, k)``."""

    inputs: np.ndarray
    targets: np.ndarray
    noise_sigma: float = 0.0
    seed: int | None = None
    columns: tuple[str, ...] = ("x", "y")

    def __post_init__(self):
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets differ in length")

    def __len__(self):
        return len(self.targets)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.inputs, other.inputs)
            and np.array_equal(self.targets, other.targets)
            and self.noise_sigma == other.noise_sigma
            and self.seed == other.seed
        )

    def rows(self) -> np.ndarray:
        x = self.inputs.reshape(len(self), -1)
        return np.column_stack([x, self.targets])

    def to_csv(self, path=None) -> str:
        text = write_csv_rows(self.columns, self.rows())
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def parse_csv(cls, text: str, noise_sigma: float = 0.0, seed: int | None = None) -> Dataset:
        reader = csv.reader(io.StringIO(text))
        header = tuple(next(reader))
        data = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
        data = data.reshape(-1, len(header))
        inputs = data[:, 0] if len(header) == 2 else data[:, :-1]
        return cls(inputs, data[:, -1], noise_sigma, seed, header)

    @classmethod
    def read_csv(cls, path, noise_sigma: float = 0.0, seed: int | None = None) -> Dataset:
        return cls.parse_csv(Path(path).read_text(encoding="utf-8"), noise_sigma, seed)


def fmt_float(v: float) -> str:
    return f"{float(v):.17g}"


def write_csv_rows(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def sample_dataset(f: TaskPoint, n: int, noise_sigma: float = 0.0, seed: int = 0) -> Dataset:
    """Draw ``n`` uniform inputs and noisy targets from one seeded stream."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    x = f.family.sample_inputs(rng, n)
    y = f(x) + rng.normal(0.0, noise_sigma, size=n)
    return Dataset(x, y, float(noise_sigma), seed)


# -- similarity -------------------------------------------------------------


def task_distance(f: TaskPoint, g: TaskPoint, grid_n: int = DEFAULT_GRID_N) -> float:
    """Root-mean-square difference of the two tasks on a uniform grid."""
    if f.family is not g.family:
        raise ValueError(f"family mismatch: {f.family.name} vs {g.family.name}")
    grid = f.family.grid(grid_n)
    return float(np.sqrt(np.mean((f(grid) - g(grid)) ** 2)))


def similar(f: TaskPoint, g: TaskPoint, epsilon: float, grid_n: int = DEFAULT_GRID_N) -> bool:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return task_distance(f, g, grid_n) < epsilon


def voronoi_assign(f: TaskPoint, references: Sequence[TaskPoint], grid_n: int = DEFAULT_GRID_N) -> int:
    """Index of the nearest reference task; ties go to the lowest index."""
    if not references:
        raise ValueError("references must be non-empty")
    distances = [task_distance(f, r, grid_n) for r in references]
    return int(np.argmin(distances))

"""Transfer experiments: leaf-constrained search versus scratch and warm starts.

Each trial draws a leaf, learns it from related source tasks with hard
parameter sharing, then fits a held-out task on the same leaf with every
enabled strategy under the same data and gradient-descent budget:

* ``Scratch``              all ``d`` coefficients from zero.
* ``LeafConstrained``      only the leaf block, invariant block learned from sources.
* ``SimilarityWarmStart``  all coefficients, started from the nearest source model.
* ``LeafOracle``           optional ablation using the true invariant block.

Losses in the report are mean squared errors against the noise-free target on
a dense grid; ``train_loss`` is the fitting objective on the target sample.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from leaftransfer.groups import (
    GroupElement,
    GroupFamily,
    identity,
    orbit_grid,
)
from leaftransfer.learning import (
    LearnerConfig,
    Method,
    ModelSpace,
    MultiTaskResult,
    check_equivariance,
    feature_space,
    fit_multitask,
    fit_on_leaf,
    fit_scratch,
    fourier_space,
    leaf_model,
    parameter_action,
)
from leaftransfer.pendulum import PendulumParams, pendulum_space, pendulum_task_point
from leaftransfer.taskspace import (
    Dataset,
    TaskPoint,
    get_family,
    sample_dataset,
    sinusoid,
    voronoi_assign,
    write_csv_rows,
)

SCRATCH = "Scratch"
LEAF = "LeafConstrained"
SIMILARITY = "SimilarityWarmStart"
ORACLE = "LeafOracle"
STRATEGIES = (SCRATCH, LEAF, SIMILARITY, ORACLE)
DEFAULT_STRATEGIES = (SCRATCH, LEAF, SIMILARITY)

PENDULUM_GRID = tuple(np.linspace(0.5, 2.5, 5))


@dataclass(frozen=True)
class ExperimentConfig:
    task_family: str = "sinusoid"
    group: GroupFamily = GroupFamily.AFFINE
    K_source: int = 5
    n_per_task: int = 20
    noise_sigma: float = 0.05
    budget_iters: int = 2000
    trials: int = 50
    seed: int = 0
    strategies: tuple[str, ...] = DEFAULT_STRATEGIES
    step: float = 0.5
    harmonics: int = 3
    test_grid_n: int = 201
    curve_points: int = 100
    target_n: int | None = None
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "group", GroupFamily.parse(self.group))
        object.__setattr__(self, "strategies", tuple(self.strategies))
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.K_source < 2:
            raise ValueError("K_source must be >= 2 for multi-task sharing")
        if self.n_per_task < 1 or self.budget_iters < 0 or self.noise_sigma < 0:
            raise ValueError("n_per_task >= 1, budget_iters >= 0 and noise_sigma >= 0 required")
        unknown = set(self.strategies) - set(STRATEGIES)
        if unknown:
            raise ValueError(f"unknown strategies {sorted(unknown)}; choose from {STRATEGIES}")
        if self.task_family == "pendulum":
            if self.K_source > 24:
                raise ValueError("pendulum preset has 25 grid tasks, K_source must be <= 24")
        elif self.group is GroupFamily.ROTATION2D:
            raise ValueError("rotation does not act on task outputs")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["group"] = self.group.value
        out["strategies"] = list(self.strategies)
        out.pop("jobs")
        return out

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


def pendulum_preset(**overrides) -> ExperimentConfig:
    """Four source pendulums from a 5x5 (mass, length) grid, one held-out target."""
    base = dict(task_family="pendulum", group=GroupFamily.TRANSLATION, K_source=4, trials=25)
    base.update(overrides)
    return ExperimentConfig(**base)


def trial_seeds(seed: int, trials: int) -> list[int]:
    """Independent per-trial seeds split deterministically from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(trials)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]


def _digest(data: Dataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(data.inputs, dtype=float).tobytes())
    h.update(np.ascontiguousarray(data.targets, dtype=float).tobytes())
    return h.hexdigest()[:16]


# -- problem setup ----------------------------------------------------------


@dataclass
class _Problem:
    space: ModelSpace
    sources: list[TaskPoint]
    target: TaskPoint
    heads: GroupFamily | None
    true_theta: np.ndarray


def _random_params(group: GroupFamily, rng: np.random.Generator) -> tuple[float, ...]:
    a = rng.uniform(-1.0, 1.0)
    if group is GroupFamily.AFFINE:
        return a, rng.uniform(0.5, 2.0) * rng.choice([-1.0, 1.0])
    return (a,)


def _exact_theta(space: ModelSpace, task: TaskPoint, grid_n: int) -> np.ndarray:
    grid = task.family.grid(max(grid_n, 4 * space.dim))
    return fit_scratch(Dataset(grid, task(grid)), space).theta


def _orbit_problem(cfg: ExperimentConfig, rng: np.random.Generator) -> _Problem:
    family = get_family(cfg.task_family)
    if family.name == "sinusoid":
        space = fourier_space(cfg.harmonics)
        anchor = sinusoid(
            rng.uniform(0.5, 2.0),
            float(rng.integers(1, cfg.harmonics + 1)),
            rng.uniform(-math.pi, math.pi),
            rng.uniform(-1.0, 1.0),
        )
    elif family.name.startswith("poly"):
        d = family.coord_dim
        space = feature_space([lambda x, i=i: x ** i for i in range(d)], [0], [f"x^{i}" for i in range(d)])
        anchor = family.random_point(rng)
    else:
        raise ValueError(f"no transfer setup for task family {family.name!r}")

    params = [_random_params(cfg.group, rng) for _ in range(cfg.K_source + 1)]
    tasks = orbit_grid(anchor, cfg.group, params)
    heads = GroupFamily.AFFINE if cfg.group is GroupFamily.AFFINE else None
    return _Problem(space, tasks[:-1], tasks[-1], heads, _exact_theta(space, anchor, cfg.test_grid_n))


def _pendulum_problem(cfg: ExperimentConfig, rng: np.random.Generator) -> _Problem:
    grid = [PendulumParams(mass=m, length=l) for m in PENDULUM_GRID for l in PENDULUM_GRID]
    order = rng.permutation(len(grid))
    target = pendulum_task_point(grid[order[0]])
    sources = [pendulum_task_point(grid[i]) for i in order[1:cfg.K_source + 1]]
    space = pendulum_space()
    return _Problem(space, sources, target, None, np.zeros(space.dim))


def _oracle_leaf(problem: _Problem) -> tuple[ModelSpace, np.ndarray]:
    space = problem.space
    if problem.heads is None:
        return space, problem.true_theta[list(space.inv_idx)]
    nc = [i for i in range(space.dim) if i != space.const_index]
    truth = MultiTaskResult(problem.true_theta[nc], [], [], 0, True, problem.heads)
    return leaf_model(space, truth)


# -- one trial --------------------------------------------------------------


def _curve_on_grid(curve: Sequence[tuple[int, float]], grid: np.ndarray) -> list[float]:
    iters = np.array([c[0] for c in curve])
    losses = np.array([c[1] for c in curve])
    pos = np.searchsorted(iters, grid, side="right") - 1
    return [float(v) for v in losses[np.clip(pos, 0, None)]]


def curve_grid(cfg: ExperimentConfig) -> np.ndarray:
    stride = max(1, cfg.budget_iters // max(cfg.curve_points, 1))
    grid = np.arange(0, cfg.budget_iters + 1, stride)
    if grid[-1] != cfg.budget_iters:
        grid = np.append(grid, cfg.budget_iters)
    return grid


def run_trial(cfg: ExperimentConfig, trial: int, seed: int) -> tuple[list[dict], dict]:
    rng = np.random.default_rng(seed)
    if cfg.task_family == "pendulum":
        problem = _pendulum_problem(cfg, rng)
    else:
        problem = _orbit_problem(cfg, rng)
    space = problem.space

    source_data = [
        sample_dataset(t, cfg.n_per_task, cfg.noise_sigma, int(rng.integers(2 ** 32))) for t in problem.sources
    ]
    target_n = cfg.target_n or cfg.n_per_task
    target_data = sample_dataset(problem.target, target_n, cfg.noise_sigma, int(rng.integers(2 ** 32)))

    exact = LearnerConfig(Method.CLOSED_FORM, max_iters=1000, tol=1e-12)
    shared = fit_multitask(source_data, space, exact, heads=problem.heads)
    gd = LearnerConfig(Method.GRADIENT_DESCENT, max_iters=cfg.budget_iters, step=cfg.step, tol=1e-10,
                       record_every=max(1, cfg.budget_iters // max(cfg.curve_points, 1)))

    test_x = problem.target.family.grid(cfg.test_grid_n)
    test_y = problem.target(test_x)
    grid = curve_grid(cfg)
    nearest = voronoi_assign(problem.target, problem.sources)

    rows = []
    for strategy in cfg.strategies:
        if strategy == SCRATCH:
            fit_space, result = space, fit_scratch(target_data, space, gd)
            n_params = space.dim
        elif strategy == SIMILARITY:
            warm = fit_scratch(source_data[nearest], space, LearnerConfig(l2=1e-12)).theta
            warm_cfg = LearnerConfig(gd.method, gd.max_iters, gd.step, gd.tol, gd.seed, gd.l2,
                                     tuple(float(v) for v in warm), gd.record_every)
            fit_space, result = space, fit_scratch(target_data, space, warm_cfg)
            n_params = space.dim
        else:
            leaf_space, frozen = leaf_model(space, shared) if strategy == LEAF else _oracle_leaf(problem)
            fit_space, result = leaf_space, fit_on_leaf(target_data, leaf_space, frozen, gd)
            n_params = len(leaf_space.leaf_idx)
        test_loss = float(np.mean((fit_space.predict(result.theta, test_x) - test_y) ** 2))
        rows.append({
            "strategy": strategy,
            "trial": trial,
            "seed": seed,
            "final_loss": test_loss,
            "train_loss": float(result.final_loss),
            "iterations_used": int(result.iterations_used),
            "iterations_to_tol": int(result.iterations_used) if result.converged else None,
            "params_optimized": int(n_params),
            "budget_iters": cfg.budget_iters,
            "data_digest": _digest(target_data),
            "curve": _curve_on_grid(result.loss_curve, grid),
        })
    info = {
        "trial": trial,
        "seed": seed,
        "target": [float(c) for c in problem.target.coords],
        "nearest_source": nearest,
        "multitask_sweeps": shared.sweeps,
        "multitask_objective": float(shared.objective[-1]),
        "shared_inv": [float(v) for v in shared.shared_inv],
    }
    return rows, info


def _trial_job(args):
    return run_trial(*args)


# -- reports ----------------------------------------------------------------


TRANSFER_COLUMNS = (
    "strategy", "trial", "seed", "final_loss", "train_loss", "iterations_to_tol",
    "iterations_used", "params_optimized", "budget_iters", "data_digest",
)


@dataclass
class TransferReport:
    config: dict = field(default_factory=dict)
    rows: list[dict] = field(default_factory=list)
    trials: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)

    kind = "transfer"
    csv_columns = TRANSFER_COLUMNS

    def to_dict(self) -> dict:
        return {"kind": self.kind, "config": self.config, "rows": self.rows,
                "trials": self.trials, "aggregates": self.aggregates}

    @classmethod
    def from_dict(cls, data: dict) -> TransferReport:
        return cls(data.get("config", {}), data.get("rows", []), data.get("trials", []), data.get("aggregates", {}))

    def csv_rows(self):
        for row in self.rows:
            yield ["" if row[c] is None else row[c] for c in self.csv_columns]

    def strategy_rows(self, strategy: str) -> list[dict]:
        return [r for r in self.rows if r["strategy"] == strategy]


def aggregate(rows: list[dict], cfg: ExperimentConfig) -> dict:
    by_strategy: dict[str, list[dict]] = {}
    for r in rows:
        by_strategy.setdefault(r["strategy"], []).append(r)
    out: dict[str, Any] = {"strategies": {}}
    for name, rs in by_strategy.items():
        curves = np.array([r["curve"] for r in rs])
        out["strategies"][name] = {
            "median_final_loss": float(np.median([r["final_loss"] for r in rs])),
            "median_train_loss": float(np.median([r["train_loss"] for r in rs])),
            "converged_fraction": float(np.mean([r["iterations_to_tol"] is not None for r in rs])),
            "params_optimized": sorted({r["params_optimized"] for r in rs}),
            "median_curve": [float(v) for v in np.median(curves, axis=0)],
        }
    out["curve_iterations"] = [int(i) for i in curve_grid(cfg)]

    trials = sorted({r["trial"] for r in rows})
    fair = True
    for t in trials:
        rs = [r for r in rows if r["trial"] == t]
        fair &= len({r["data_digest"] for r in rs}) == 1
        fair &= all(r["budget_iters"] == cfg.budget_iters and r["iterations_used"] <= cfg.budget_iters for r in rs)
    out["budget_fair"] = bool(fair)

    if SCRATCH in by_strategy and LEAF in by_strategy:
        scratch = {r["trial"]: r for r in by_strategy[SCRATCH]}
        leaf = {r["trial"]: r for r in by_strategy[LEAF]}
        score = []
        for t in trials:
            lo, so = leaf[t]["final_loss"], scratch[t]["final_loss"]
            score.append(1.0 if lo < so else 0.5 if lo == so else 0.0)
        out["win_rate_leaf_vs_scratch"] = float(np.mean(score)) if score else None
        out["leaf_params_smaller_every_trial"] = all(
            leaf[t]["params_optimized"] < scratch[t]["params_optimized"] for t in trials
        )
    return out


def run_transfer_experiment(cfg: ExperimentConfig) -> TransferReport:
    seeds = trial_seeds(cfg.seed, cfg.trials)
    jobs = [(cfg, i, s) for i, s in enumerate(seeds)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_trial_job, jobs))
    else:
        results = [_trial_job(j) for j in jobs]
    rows = [r for rs, _ in results for r in rs]
    infos = [info for _, info in results]
    return TransferReport(cfg.to_dict(), rows, infos, aggregate(rows, cfg))


# -- equivariance suite -----------------------------------------------------


@dataclass(frozen=True)
class EquivarianceConfig:
    cases: int = 100
    tol: float = 1e-9
    seed: int = 0
    n: int = 50
    harmonics: int = 3
    nonrepresentable: int = 10
    groups: tuple[str, ...] = ("translation", "affine")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["groups"] = list(self.groups)
        return out


EQUIVARIANCE_COLUMNS = ("group", "case", "seed", "params", "representable", "param_gap", "pass")


@dataclass
class EquivarianceSuiteReport:
    config: dict = field(default_factory=dict)
    rows: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)

    kind = "equivariance"
    csv_columns = EQUIVARIANCE_COLUMNS

    def to_dict(self) -> dict:
        return {"kind": self.kind, "config": self.config, "rows": self.rows, "aggregates": self.aggregates}

    @classmethod
    def from_dict(cls, data: dict) -> EquivarianceSuiteReport:
        return cls(data.get("config", {}), data.get("rows", []), data.get("aggregates", {}))

    def csv_rows(self):
        for r in self.rows:
            yield [r["group"], r["case"], r["seed"], " ".join(repr(p) for p in r["params"]),
                   r["representable"], r["param_gap"], r["pass"]]

    @property
    def passed(self) -> bool:
        return all(g["pass_rate"] == 1.0 for g in self.aggregates.get("groups", {}).values())


def _random_case(group: GroupFamily, rng: np.random.Generator, harmonics: int, representable: bool):
    omega = float(rng.integers(1, harmonics + 1)) if representable else rng.uniform(0.5, harmonics) + 0.25
    f = sinusoid(rng.uniform(0.5, 2.0), omega, rng.uniform(-math.pi, math.pi), rng.uniform(-1.0, 1.0))
    a = rng.uniform(-3.0, 3.0)
    if group is GroupFamily.AFFINE:
        elem = GroupElement(group, (a, rng.uniform(0.2, 3.0) * rng.choice([-1.0, 1.0])))
    else:
        elem = GroupElement(group, (a,))
    return f, elem


def run_equivariance_suite(cfg: EquivarianceConfig = EquivarianceConfig()) -> EquivarianceSuiteReport:
    """Sweep the closed-form learner's equivariance over seeded (task, element) cases.

    Case 0 of every group uses the identity element. Cases after ``cfg.cases``
    draw non-representable frequencies; they are reported but left out of the
    pass rate.
    """
    space = fourier_space(cfg.harmonics)
    learner = LearnerConfig(Method.CLOSED_FORM)
    rows = []
    aggregates: dict[str, Any] = {"groups": {}}
    for gi, name in enumerate(cfg.groups):
        group = GroupFamily.parse(name)
        action = parameter_action(space, group)
        seeds = trial_seeds(cfg.seed + gi, cfg.cases + cfg.nonrepresentable)
        group_rows = []
        for case, seed in enumerate(seeds):
            rng = np.random.default_rng(seed)
            representable = case < cfg.cases
            f, elem = _random_case(group, rng, cfg.harmonics, representable)
            if case == 0:
                elem = identity(group)
            rep = check_equivariance(space, action, f, elem, learner, cfg.n, cfg.tol, seed)
            group_rows.append({
                "group": group.value,
                "case": case,
                "seed": seed,
                "params": list(elem.params),
                "task": [float(c) for c in f.coords],
                "representable": rep.representable,
                "param_gap": rep.param_gap,
                "pass": rep.passed,
            })
        counted = [r for r in group_rows if r["representable"]]
        aggregates["groups"][group.value] = {
            "cases": len(counted),
            "pass_rate": float(np.mean([r["pass"] for r in counted])) if counted else None,
            "max_param_gap": max((r["param_gap"] for r in counted), default=None),
            "excluded_nonrepresentable": len(group_rows) - len(counted),
        }
        rows.extend(group_rows)
    return EquivarianceSuiteReport(cfg.to_dict(), rows, aggregates)


# -- emission ---------------------------------------------------------------


def report_from_dict(data: dict):
    kind = data.get("kind")
    if kind == "transfer":
        return TransferReport.from_dict(data)
    if kind == "equivariance":
        return EquivarianceSuiteReport.from_dict(data)
    raise ValueError(f"unknown report kind {kind!r}")


def report_json(report) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def report_csv(report) -> str:
    return write_csv_rows(report.csv_columns, report.csv_rows())


def emit_report(report, fmt: str, path) -> Path:
    """Write ``report`` as ``json``, ``csv`` or ``svg`` to ``path``."""
    path = Path(path)
    if fmt == "json":
        path.write_text(report_json(report), encoding="utf-8")
    elif fmt == "csv":
        path.write_text(report_csv(report), encoding="utf-8")
    elif fmt == "svg":
        from leaftransfer import plotting

        plotting.plot_report(report, path)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path

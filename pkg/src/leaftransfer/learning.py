"""Linear-in-parameter models, scratch / leaf-constrained / multi-task fitting.

Every model is ``m_theta(x) = sum_i theta_i * phi_i(x)`` over a fixed basis, so
each fitting path has a closed-form oracle. Parameters are split into an
invariant block (which leaf the model sits on) and a leaf block (where on the
leaf). Gradient descent exists for budgeted comparisons, and halves its step
whenever a proposed update would raise the objective.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from leaftransfer.groups import GroupElement, GroupFamily, act_on_task, compose, identity
from leaftransfer.taskspace import Dataset, TaskPoint, sample_dataset, write_csv_rows

Feature = Callable[[np.ndarray], np.ndarray]


class RankDeficientError(np.linalg.LinAlgError):
    """The normal equations of an unregularized fit are singular."""


class Method(enum.Enum):
    CLOSED_FORM = "closed_form"
    GRADIENT_DESCENT = "gradient_descent"


@dataclass(frozen=True)
class LearnerConfig:
    method: Method = Method.CLOSED_FORM
    max_iters: int = 10_000
    step: float = 0.5
    tol: float = 1e-10
    seed: int = 0
    l2: float = 0.0
    init: tuple[float, ...] | None = None
    record_every: int = 1

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.step <= 0 or self.tol <= 0:
            raise ValueError("step and tol must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")


@dataclass(frozen=True, eq=False)
class ModelSpace:
    """Basis functions with a disjoint (invariant, leaf) split of coefficient indices.

    ``const_index`` points at the constant feature; parameter actions of the
    translation and affine groups shift that coefficient.
    """

    basis: tuple[Feature, ...]
    inv_idx: tuple[int, ...]
    leaf_idx: tuple[int, ...]
    names: tuple[str, ...] = ()
    const_index: int | None = 0

    def __post_init__(self):
        d = len(self.basis)
        inv, leaf = tuple(int(i) for i in self.inv_idx), tuple(int(i) for i in self.leaf_idx)
        object.__setattr__(self, "inv_idx", inv)
        object.__setattr__(self, "leaf_idx", leaf)
        if set(inv) & set(leaf) or sorted(inv + leaf) != list(range(d)):
            raise ValueError(f"partition {inv} / {leaf} is not a disjoint cover of 0..{d - 1}")
        if not self.names:
            object.__setattr__(self, "names", tuple(f"phi{i}" for i in range(d)))

    @property
    def dim(self) -> int:
        return len(self.basis)

    def design(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        cols = [np.broadcast_to(np.asarray(phi(x), dtype=float), (n,)) for phi in self.basis]
        return np.column_stack(cols)

    def predict(self, theta, x) -> np.ndarray:
        return self.design(x) @ np.asarray(theta, dtype=float)

    def penalty_mask(self) -> np.ndarray:
        mask = np.ones(self.dim)
        if self.const_index is not None:
            mask[self.const_index] = 0.0
        return mask

    def with_partition(self, inv_idx, leaf_idx) -> ModelSpace:
        return ModelSpace(self.basis, tuple(inv_idx), tuple(leaf_idx), self.names, self.const_index)


def _const(x):
    return np.ones(x.shape[0])


def fourier_space(harmonics: int = 3, leaf_idx: Sequence[int] | None = None) -> ModelSpace:
    """``{1, sin kx, cos kx : k = 1..harmonics}``; by default only the offset is on the leaf."""
    basis: list[Feature] = [_const]
    names = ["1"]
    for k in range(1, harmonics + 1):
        basis.append(lambda x, k=k: np.sin(k * x))
        basis.append(lambda x, k=k: np.cos(k * x))
        names += [f"sin{k}x", f"cos{k}x"]
    d = len(basis)
    leaf = tuple(leaf_idx) if leaf_idx is not None else (0,)
    inv = tuple(i for i in range(d) if i not in leaf)
    return ModelSpace(tuple(basis), inv, leaf, tuple(names), 0)


def feature_space(features: Sequence[Feature], leaf_idx: Sequence[int], names: Sequence[str] = (),
                  const_index: int | None = 0) -> ModelSpace:
    leaf = tuple(leaf_idx)
    inv = tuple(i for i in range(len(features)) if i not in leaf)
    return ModelSpace(tuple(features), inv, leaf, tuple(names), const_index)


# -- objective --------------------------------------------------------------


def _targets(data: Dataset) -> np.ndarray:
    return np.asarray(data.targets, dtype=float)


def objective(theta, design: np.ndarray, y: np.ndarray, l2: float = 0.0, mask=None) -> float:
    """Mean squared error plus ``l2 * ||mask * theta||^2``."""
    theta = np.asarray(theta, dtype=float)
    r = design @ theta - y
    value = float(np.mean(r * r))
    if l2:
        value += l2 * float(np.sum((mask * theta) ** 2))
    return value


def objective_gradient(theta, design: np.ndarray, y: np.ndarray, l2: float = 0.0, mask=None) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    r = design @ theta - y
    grad = 2.0 * design.T @ r / len(y)
    if l2:
        grad = grad + 2.0 * l2 * mask * mask * theta
    return grad


def mse_loss(theta, data: Dataset, space: ModelSpace, l2: float = 0.0) -> float:
    return objective(theta, space.design(data.inputs), _targets(data), l2, space.penalty_mask())


def mse_gradient(theta, data: Dataset, space: ModelSpace, l2: float = 0.0) -> np.ndarray:
    return objective_gradient(theta, space.design(data.inputs), _targets(data), l2, space.penalty_mask())


# -- single-task fitting ----------------------------------------------------


@dataclass
class FitResult:
    theta: np.ndarray
    final_loss: float
    loss_curve: list[tuple[int, float]] = field(default_factory=list)
    iterations_used: int = 0
    converged: bool = True

    @property
    def params(self) -> list[float]:
        return [float(t) for t in self.theta]

    def to_dict(self) -> dict:
        return {
            "theta": self.params,
            "final_loss": float(self.final_loss),
            "loss_curve": [[int(i), float(v)] for i, v in self.loss_curve],
            "iterations_used": int(self.iterations_used),
            "converged": bool(self.converged),
        }

    @classmethod
    def from_dict(cls, data: dict) -> FitResult:
        return cls(
            np.asarray(data["theta"], dtype=float),
            data["final_loss"],
            [(int(i), float(v)) for i, v in data["loss_curve"]],
            data["iterations_used"],
            data["converged"],
        )

    def curve_csv(self) -> str:
        return write_csv_rows(("iter", "loss"), ((i, float(v)) for i, v in self.loss_curve))


def _restricted_lstsq(design, y, theta, free, l2, mask) -> np.ndarray:
    """Exact minimizer over ``theta[free]`` with the other entries held fixed."""
    n = len(y)
    fixed = np.setdiff1d(np.arange(design.shape[1]), free)
    rhs = y - design[:, fixed] @ theta[fixed]
    a = design[:, free] / math.sqrt(n)
    b = rhs / math.sqrt(n)
    if l2:
        pen = np.diag(math.sqrt(l2) * mask[free])
        a = np.vstack([a, pen])
        b = np.concatenate([b, np.zeros(len(free))])
    sol, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < len(free):
        raise RankDeficientError(
            f"normal matrix has rank {rank} < {len(free)} free parameters; add l2 or data"
        )
    out = theta.copy()
    out[free] = sol
    return out


def _gradient_descent(design, y, theta, free, cfg: LearnerConfig, mask) -> FitResult:
    step = cfg.step
    loss = objective(theta, design, y, cfg.l2, mask)
    curve = [(0, loss)]
    converged = False
    it = 0
    while it < cfg.max_iters:
        grad = objective_gradient(theta, design, y, cfg.l2, mask)[free]
        if np.max(np.abs(grad), initial=0.0) <= cfg.tol:
            converged = True
            break
        it += 1
        candidate = theta.copy()
        candidate[free] -= step * grad
        cand_loss = objective(candidate, design, y, cfg.l2, mask)
        if cand_loss <= loss:
            theta, loss = candidate, cand_loss
        else:
            step *= 0.5
            if step < 1e-300:
                break
        if it % cfg.record_every == 0:
            curve.append((it, loss))
    if curve[-1][0] != it:
        curve.append((it, loss))
    return FitResult(theta, loss, curve, it, converged)


def _fit(data: Dataset, space: ModelSpace, theta0: np.ndarray, free, cfg: LearnerConfig) -> FitResult:
    if len(data) < 1:
        raise ValueError("dataset is empty")
    design = space.design(data.inputs)
    y = _targets(data)
    mask = space.penalty_mask()
    free = np.asarray(free, dtype=int)
    if cfg.method is Method.CLOSED_FORM:
        theta = _restricted_lstsq(design, y, theta0, free, cfg.l2, mask) if len(free) else theta0
        loss = objective(theta, design, y, cfg.l2, mask)
        return FitResult(theta, loss, [(0, loss)], 0, True)
    return _gradient_descent(design, y, theta0, free, cfg, mask)


def _initial_theta(space: ModelSpace, cfg: LearnerConfig) -> np.ndarray:
    if cfg.init is None:
        return np.zeros(space.dim)
    theta = np.asarray(cfg.init, dtype=float).copy()
    if theta.shape != (space.dim,):
        raise ValueError(f"init has shape {theta.shape}, expected ({space.dim},)")
    return theta


def fit_scratch(data: Dataset, space: ModelSpace, cfg: LearnerConfig = LearnerConfig()) -> FitResult:
    """Fit every coefficient."""
    return _fit(data, space, _initial_theta(space, cfg), np.arange(space.dim), cfg)


def fit_on_leaf(data: Dataset, space: ModelSpace, frozen_inv, cfg: LearnerConfig = LearnerConfig()) -> FitResult:
    """Fit only the leaf block; the invariant block is copied from ``frozen_inv`` untouched."""
    frozen_inv = np.asarray(frozen_inv, dtype=float).ravel()
    if frozen_inv.shape[0] != len(space.inv_idx):
        raise ValueError(f"frozen_inv has {frozen_inv.shape[0]} entries, expected {len(space.inv_idx)}")
    theta0 = _initial_theta(space, cfg)
    theta0[list(space.inv_idx)] = frozen_inv
    return _fit(data, space, theta0, list(space.leaf_idx), cfg)


# -- multi-task fitting -----------------------------------------------------


@dataclass
class MultiTaskResult:
    """Shared invariant block, per-task leaf blocks and the per-sweep objective.

    With affine heads, ``shared_inv`` holds unit-norm coefficients of a shared
    feature ``h`` over the non-constant basis and each leaf block is ``(a, b)``
    so that task ``k`` is modelled as ``a_k + b_k * h``.
    """

    shared_inv: np.ndarray
    per_task_leaf: list[np.ndarray]
    objective: list[float]
    sweeps: int
    converged: bool
    heads: GroupFamily | None = None

    def report(self) -> dict:
        return {
            "shared_inv": [float(v) for v in self.shared_inv],
            "per_task_leaf": [[float(v) for v in leaf] for leaf in self.per_task_leaf],
            "objective": [float(v) for v in self.objective],
            "sweeps": self.sweeps,
            "converged": self.converged,
            "heads": self.heads.value if self.heads else None,
        }


def _stop(prev: float, cur: float, tol: float) -> bool:
    return cur <= 1e-30 or (prev - cur) <= tol * max(prev, 1e-300)


def _multitask_partition(datasets, space: ModelSpace, cfg: LearnerConfig) -> MultiTaskResult:
    inv, leaf = list(space.inv_idx), list(space.leaf_idx)
    mask = space.penalty_mask()
    designs = [space.design(d.inputs) for d in datasets]
    ys = [_targets(d) for d in datasets]
    k = len(datasets)

    def total(thetas):
        return sum(objective(t, a, y, cfg.l2, mask) for t, a, y in zip(thetas, designs, ys))

    # start from the average of independent fits
    thetas = [_restricted_lstsq(a, y, np.zeros(space.dim), np.arange(space.dim), cfg.l2, mask)
              for a, y in zip(designs, ys)]
    shared = np.mean([t[inv] for t in thetas], axis=0)
    for t in thetas:
        t[inv] = shared
    history = [total(thetas)]
    converged = False
    sweeps = 0
    for sweeps in range(1, max(cfg.max_iters, 1) + 1):
        thetas = [_restricted_lstsq(a, y, t, leaf, cfg.l2, mask) if leaf else t
                  for t, a, y in zip(thetas, designs, ys)]
        if inv:
            rows = [a[:, inv] / math.sqrt(len(y)) for a, y in zip(designs, ys)]
            rhs = [(y - a[:, leaf] @ t[leaf]) / math.sqrt(len(y)) for t, a, y in zip(thetas, designs, ys)]
            if cfg.l2:
                rows.append(np.diag(math.sqrt(k * cfg.l2) * mask[inv]))
                rhs.append(np.zeros(len(inv)))
            stacked = np.vstack(rows)
            sol, _, rank, _ = np.linalg.lstsq(stacked, np.concatenate(rhs), rcond=None)
            if rank < len(inv):
                raise RankDeficientError("shared block is not identifiable from the pooled data")
            for t in thetas:
                t[inv] = sol
        history.append(total(thetas))
        if _stop(history[-2], history[-1], cfg.tol):
            converged = True
            break
    return MultiTaskResult(thetas[0][inv].copy(), [t[leaf].copy() for t in thetas], history, sweeps, converged)


def _canonical_direction(u: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(u)
    if norm == 0:
        raise RankDeficientError("shared feature vanished; tasks carry no non-constant signal")
    u = u / norm
    pivot = int(np.argmax(np.abs(u)))
    return u if u[pivot] > 0 else -u


def _multitask_affine(datasets, space: ModelSpace, cfg: LearnerConfig) -> MultiTaskResult:
    if space.const_index is None:
        raise ValueError("affine heads need a constant feature")
    if cfg.l2:
        raise ValueError("affine heads do not support l2 regularization")
    nc = [i for i in range(space.dim) if i != space.const_index]
    designs = [space.design(d.inputs)[:, nc] for d in datasets]
    ys = [_targets(d) for d in datasets]

    def heads_for(u):
        out = []
        for a, y in zip(designs, ys):
            cols = np.column_stack([np.ones(len(y)), a @ u])
            sol, _, rank, _ = np.linalg.lstsq(cols, y, rcond=None)
            if rank < 2:
                raise RankDeficientError("shared feature is constant on a task's inputs")
            out.append(sol)
        return out

    def total(u, heads):
        return sum(float(np.mean((h[0] + h[1] * (a @ u) - y) ** 2)) for h, a, y in zip(heads, designs, ys))

    # initial direction: dominant singular vector of the independent fits
    full = [space.design(d.inputs) for d in datasets]
    coefs = np.array([
        _restricted_lstsq(a, y, np.zeros(space.dim), np.arange(space.dim), 0.0, space.penalty_mask())[nc]
        for a, y in zip(full, ys)
    ])
    u = _canonical_direction(np.linalg.svd(coefs, full_matrices=False)[2][0])
    heads = heads_for(u)
    history = [total(u, heads)]
    converged = False
    sweeps = 0
    for sweeps in range(1, max(cfg.max_iters, 1) + 1):
        rows = [h[1] * a / math.sqrt(len(y)) for h, a, y in zip(heads, designs, ys)]
        rhs = [(y - h[0]) / math.sqrt(len(y)) for h, y in zip(heads, ys)]
        sol, _, rank, _ = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)
        if rank < len(nc):
            raise RankDeficientError("shared feature is not identifiable from the pooled data")
        # rescaling u against the heads leaves the objective unchanged
        u = _canonical_direction(sol)
        heads = heads_for(u)
        history.append(total(u, heads))
        if _stop(history[-2], history[-1], cfg.tol):
            converged = True
            break
    return MultiTaskResult(u, [np.asarray(h) for h in heads], history, sweeps, converged, GroupFamily.AFFINE)


def fit_multitask(datasets: Sequence[Dataset], space: ModelSpace, cfg: LearnerConfig = LearnerConfig(),
                  heads: GroupFamily | None = None) -> MultiTaskResult:
    """Hard parameter sharing across tasks by alternating exact block minimizations.

    By default the invariant coefficient block is shared and each task owns its
    leaf block. ``heads=GroupFamily.AFFINE`` instead shares a single feature
    over the non-constant basis and gives every task its own offset and scale.
    ``cfg.max_iters`` caps the number of sweeps; ``cfg.tol`` is the relative
    objective change that ends them.
    """
    if len(datasets) < 2:
        raise ValueError("fit_multitask needs at least 2 datasets")
    if heads is None or GroupFamily.parse(heads) is GroupFamily.TRANSLATION:
        return _multitask_partition(datasets, space, cfg)
    if GroupFamily.parse(heads) is GroupFamily.AFFINE:
        return _multitask_affine(datasets, space, cfg)
    raise ValueError(f"unsupported heads {heads}")


def leaf_model(space: ModelSpace, result: MultiTaskResult) -> tuple[ModelSpace, np.ndarray]:
    """Model space and frozen block for fitting a new task on the learned leaf."""
    if result.heads is None:
        return space, np.asarray(result.shared_inv, dtype=float)
    nc = [i for i in range(space.dim) if i != space.const_index]
    u = np.asarray(result.shared_inv, dtype=float)
    basis = [space.basis[i] for i in nc]

    def shared_feature(x):
        x = np.asarray(x, dtype=float)
        return sum(w * np.broadcast_to(phi(x), (x.shape[0],)) for w, phi in zip(u, basis))

    derived = ModelSpace((_const, shared_feature), (), (0, 1), ("1", "h"), 0)
    return derived, np.zeros(0)


# -- equivariance -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ParameterGroupAction:
    """How a group element moves model parameters; must be a homomorphism."""

    family: GroupFamily
    rule: Callable[[GroupElement, np.ndarray], np.ndarray]

    def __call__(self, g: GroupElement, theta) -> np.ndarray:
        if g.family is not self.family:
            raise ValueError(f"action is for {self.family.value}, got {g.family.value}")
        return self.rule(g, np.asarray(theta, dtype=float))


def parameter_action(space: ModelSpace, family: GroupFamily) -> ParameterGroupAction:
    """Shift (and for affine, scale) parameters so the model output moves like the task."""
    family = GroupFamily.parse(family)
    c = space.const_index
    if c is None:
        raise ValueError("parameter actions need a constant feature")

    if family is GroupFamily.TRANSLATION:
        def rule(g, theta):
            out = theta.copy()
            out[c] += g.a
            return out
    elif family is GroupFamily.AFFINE:
        def rule(g, theta):
            out = g.b * theta
            out[c] += g.a
            return out
    else:
        raise ValueError(f"no parameter action for {family.value}")
    return ParameterGroupAction(family, rule)


@dataclass
class EquivarianceReport:
    passed: bool
    param_gap: float
    theta_f: np.ndarray
    theta_g: np.ndarray
    residual: float
    tol: float

    @property
    def representable(self) -> bool:
        return self.residual <= 1e-9

    def to_dict(self) -> dict:
        return {
            "pass": self.passed,
            "param_gap": self.param_gap,
            "theta_f": [float(v) for v in self.theta_f],
            "theta_g": [float(v) for v in self.theta_g],
            "residual": self.residual,
            "representable": self.representable,
            "tol": self.tol,
        }


def check_equivariance(space: ModelSpace, action: ParameterGroupAction, f: TaskPoint, g_elem: GroupElement,
                       cfg: LearnerConfig = LearnerConfig(), n: int = 50, tol: float = 1e-9,
                       seed: int = 0) -> EquivarianceReport:
    """Compare ``action(g, learn(f))`` with ``learn(g f)`` on a shared noise-free input sample."""
    data_f = sample_dataset(f, n, 0.0, seed)
    data_g = sample_dataset(act_on_task(g_elem, f), n, 0.0, seed)
    fit_f = fit_scratch(data_f, space, cfg)
    fit_g = fit_scratch(data_g, space, cfg)
    gap = float(np.max(np.abs(action(g_elem, fit_f.theta) - fit_g.theta)))
    residual = float(np.sqrt(np.mean((space.predict(fit_f.theta, data_f.inputs) - data_f.targets) ** 2)))
    return EquivarianceReport(gap <= tol, gap, fit_f.theta, fit_g.theta, residual, tol)


def homomorphism_gap(action: ParameterGroupAction, g1: GroupElement, g2: GroupElement, theta) -> float:
    lhs = action(compose(g1, g2), theta)
    rhs = action(g1, action(g2, theta))
    return float(np.max(np.abs(lhs - rhs)))


def identity_gap(action: ParameterGroupAction, theta) -> float:
    return float(np.max(np.abs(action(identity(action.family), theta) - np.asarray(theta, dtype=float))))

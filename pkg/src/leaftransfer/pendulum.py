"""Damped pendulum dynamics, fixed-step RK4 trajectories and the pendulum task family.

State is ``(theta, omega)``; the angular acceleration is

    omega_dot = -(g / l) sin(theta) - gamma / (m l^2) * omega

Damping keeps the mass visible in the dynamics. As a regression task the
acceleration field is linear in ``(c1, c2) = (g/l, gamma/(m l^2))``, which is the
leaf block; coefficients on the extra features ``{1, theta, theta*omega}`` are
the invariant block and are zero for every pendulum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from leaftransfer.learning import ModelSpace
from leaftransfer.taskspace import Dataset, TaskFamily, TaskPoint, register_family, write_csv_rows

DEFAULT_STATE_BOX = ((-math.pi, math.pi), (-3.0, 3.0))


class BlowUpError(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"non-finite state at step {step}")
        self.step = step


@dataclass(frozen=True)
class PendulumParams:
    mass: float = 1.0
    length: float = 1.0
    gamma: float = 0.1
    gravity: float = 9.81

    def __post_init__(self):
        if self.mass <= 0 or self.length <= 0 or self.gravity <= 0:
            raise ValueError("mass, length and gravity must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")

    @property
    def stiffness(self) -> float:
        return self.gravity / self.length

    @property
    def friction(self) -> float:
        return self.gamma / (self.mass * self.length ** 2)


def dynamics(p: PendulumParams, state) -> tuple[float, float]:
    theta, omega = state
    return omega, -p.stiffness * math.sin(theta) - p.friction * omega


def energy(p: PendulumParams, theta, omega):
    """Kinetic plus potential energy, zero potential at the pivot height."""
    return (0.5 * p.mass * p.length ** 2 * np.square(omega)
            - p.mass * p.gravity * p.length * np.cos(theta))


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    params: PendulumParams
    dt: float
    integrator: str = "RK4"

    @property
    def theta(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def omega(self) -> np.ndarray:
        return self.states[:, 1]

    def energy(self) -> np.ndarray:
        return energy(self.params, self.theta, self.omega)

    def to_csv(self) -> str:
        return write_csv_rows(("t", "theta", "omega"), np.column_stack([self.times, self.states]))


def simulate(p: PendulumParams, init, dt: float, steps: int) -> Trajectory:
    """Classical fourth-order Runge-Kutta with a fixed step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    k, c = p.stiffness, p.friction
    sin = math.sin

    theta, omega = float(init[0]), float(init[1])
    states = np.empty((steps + 1, 2))
    states[0] = theta, omega
    half = 0.5 * dt
    for i in range(1, steps + 1):
        try:
            a1 = -k * sin(theta) - c * omega
            t2, w2 = theta + half * omega, omega + half * a1
            a2 = -k * sin(t2) - c * w2
            t3, w3 = theta + half * w2, omega + half * a2
            a3 = -k * sin(t3) - c * w3
            t4, w4 = theta + dt * w3, omega + dt * a3
            a4 = -k * sin(t4) - c * w4
            theta += dt / 6.0 * (omega + 2 * w2 + 2 * w3 + w4)
            omega += dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
        except (ValueError, OverflowError):
            raise BlowUpError(i) from None
        if not (math.isfinite(theta) and math.isfinite(omega)):
            raise BlowUpError(i)
        states[i] = theta, omega
    return Trajectory(np.arange(steps + 1) * dt, states, p, dt)


def oscillation_period(traj: Trajectory) -> float:
    """Mean spacing of upward zero crossings of theta, linearly interpolated."""
    th = traj.theta
    idx = np.nonzero((th[:-1] < 0) & (th[1:] >= 0))[0]
    if len(idx) < 2:
        raise ValueError("trajectory has fewer than two upward zero crossings")
    t = traj.times
    crossings = t[idx] - th[idx] * (t[idx + 1] - t[idx]) / (th[idx + 1] - th[idx])
    return float(np.mean(np.diff(crossings)))


def _pendulum_eval(c: np.ndarray, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    return -c[0] * np.sin(x[:, 0]) - c[1] * x[:, 1]


PENDULUM = TaskFamily(
    name="pendulum",
    coord_dim=2,
    bounds=DEFAULT_STATE_BOX,
    evaluator=_pendulum_eval,
    coord_names=("g_over_l", "gamma_over_ml2"),
    sampler=lambda rng: np.array([rng.uniform(2.0, 20.0), rng.uniform(0.0, 1.0)]),
)
register_family(PENDULUM)


def pendulum_task_point(p: PendulumParams) -> TaskPoint:
    return PENDULUM.point([p.stiffness, p.friction])


def dynamics_dataset(p: PendulumParams, n: int, state_box=DEFAULT_STATE_BOX, seed: int = 0) -> Dataset:
    """Noise-free ``(theta, omega) -> omega_dot`` samples, uniform in the state box."""
    if n < 1:
        raise ValueError("n must be >= 1")
    lo = np.array([b[0] for b in state_box], dtype=float)
    hi = np.array([b[1] for b in state_box], dtype=float)
    if lo.shape != (2,) or np.any(hi < lo):
        raise ValueError(f"invalid state box {state_box}")
    rng = np.random.default_rng(seed)
    states = rng.uniform(lo, hi, size=(n, 2))
    targets = _pendulum_eval(np.array([p.stiffness, p.friction]), states)
    return Dataset(states, targets, 0.0, seed, ("theta", "omega", "omega_dot"))


def pendulum_space() -> ModelSpace:
    """Basis ``{sin theta, omega, 1, theta, theta*omega}``; the first two form the leaf block."""
    basis = (
        lambda x: np.sin(x[:, 0]),
        lambda x: x[:, 1],
        lambda x: np.ones(x.shape[0]),
        lambda x: x[:, 0],
        lambda x: x[:, 0] * x[:, 1],
    )
    return ModelSpace(basis, (2, 3, 4), (0, 1), ("sin_theta", "omega", "1", "theta", "theta_omega"), 2)


def pendulum_theta(p: PendulumParams) -> np.ndarray:
    """Exact coefficients of the acceleration field on :func:`pendulum_space`."""
    return np.array([-p.stiffness, -p.friction, 0.0, 0.0, 0.0])

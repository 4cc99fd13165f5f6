"""Discrete unicycle kinematics shared by the planner and the simulator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(theta):
    """Normalize an angle (scalar or array) to the interval (-pi, pi]."""
    return theta - TWO_PI * np.ceil((theta - np.pi) / TWO_PI)


@dataclass(frozen=True)
class RobotState:
    """Planar pose (meters, radians). Heading is wrapped to (-pi, pi]."""

    x: float
    y: float
    theta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=float)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class ControlInput:
    """Forward speed (m/s) and yaw rate (rad/s), held over one step."""

    v: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.omega], dtype=float)


@dataclass
class Trajectory:
    """State/control sequence at a fixed step dt.

    states has shape (N, 3) with columns (x, y, theta) and controls shape
    (N, 2) with columns (v, omega); row k of controls is the input applied
    at state k. Only the first N-1 controls take part in the kinematic
    chaining, the last one still enters the running cost.
    """

    states: np.ndarray
    controls: np.ndarray
    dt: float

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float)
        if self.states.ndim != 2 or self.states.shape[1] != 3:
            raise ValueError(f"states must have shape (N, 3), got {self.states.shape}")
        if self.controls.shape != (self.states.shape[0], 2):
            raise ValueError(
                f"controls must have shape ({self.states.shape[0]}, 2), "
                f"got {self.controls.shape}"
            )
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def __len__(self) -> int:
        return int(self.states.shape[0])

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :2]

    def copy(self) -> "Trajectory":
        return Trajectory(self.states.copy(), self.controls.copy(), self.dt)


def step(state: RobotState, control, dt: float) -> RobotState:
    """Advance one unicycle step with piecewise-constant controls.

    Position integrates along the current heading, then the heading is
    updated and wrapped, so a pure rotation does not translate. control can
    be a ControlInput or any (v, omega) pair.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not isinstance(control, ControlInput):
        control = ControlInput(float(control[0]), float(control[1]))
    vals = (state.x, state.y, state.theta, control.v, control.omega)
    if not all(np.isfinite(vals)):
        raise ValueError("state and control must be finite")
    return RobotState(
        x=state.x + control.v * dt * np.cos(state.theta),
        y=state.y + control.v * dt * np.sin(state.theta),
        theta=float(wrap_angle(state.theta + control.omega * dt)),
    )


def step_array(states: np.ndarray, controls: np.ndarray, dt: float) -> np.ndarray:
    """Vectorized step for (..., 3) state rows and matching (..., 2) controls."""
    theta = states[..., 2]
    v = controls[..., 0]
    out = np.empty_like(states, dtype=float)
    out[..., 0] = states[..., 0] + v * dt * np.cos(theta)
    out[..., 1] = states[..., 1] + v * dt * np.sin(theta)
    out[..., 2] = wrap_angle(theta + controls[..., 1] * dt)
    return out


def rollout(s0: RobotState, controls, dt: float) -> Trajectory:
    """Integrate a control sequence from s0.

    controls is an (N, 2) array or a sequence of ControlInput. The result
    holds N states and N controls; states[0] is s0 and the final control is
    carried along unintegrated.
    """
    ctrl = np.asarray(
        [c.as_array() if isinstance(c, ControlInput) else c for c in controls],
        dtype=float,
    )
    if ctrl.ndim != 2 or ctrl.shape[0] == 0 or ctrl.shape[1] != 2:
        raise ValueError("controls must be a non-empty sequence of (v, omega) pairs")
    n = ctrl.shape[0]
    states = np.empty((n, 3), dtype=float)
    states[0] = s0.as_array()
    states[0, 2] = wrap_angle(states[0, 2])
    for k in range(n - 1):
        states[k + 1] = step_array(states[k], ctrl[k], dt)
    return Trajectory(states=states, controls=ctrl, dt=dt)

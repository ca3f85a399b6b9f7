"""Kinematic bicycle model: exact discrete step, analytic Jacobians, rollout.

The discrete step integrates the heading along a circular arc of curvature
kappa = tan(delta) / L over the travelled distance l = v*dt + a*dt^2/2.
Below DELTA_EPS the curved update degenerates numerically, so a straight
update is used; both branches agree to well under 1e-6 at the switch.
"""

from dataclasses import dataclass, replace

import numpy as np

DELTA_EPS = 1e-6


def wrap_angle(theta):
    """Wrap an angle (or array of angles) to (-pi, pi]."""
    wrapped = np.mod(-np.asarray(theta) + np.pi, 2.0 * np.pi)
    out = -(wrapped - np.pi)
    return out if isinstance(theta, np.ndarray) else float(out)


@dataclass(frozen=True)
class VehicleState:
    px: float
    py: float
    v: float
    theta: float

    def as_array(self):
        return np.array([self.px, self.py, self.v, self.theta])

    @classmethod
    def from_array(cls, arr):
        return cls(float(arr[0]), float(arr[1]), float(arr[2]), float(arr[3]))


@dataclass(frozen=True)
class ControlInput:
    a: float
    delta: float

    def as_array(self):
        return np.array([self.a, self.delta])

    @classmethod
    def from_array(cls, arr):
        return cls(float(arr[0]), float(arr[1]))


@dataclass(frozen=True)
class VehicleParams:
    """Geometry, discretization and actuation limits.

    a_max / delta_max defaults keep the per-step turn angle kappa*l below
    0.5 rad at ordinary speeds.  v_min floors the speed (no reversing).
    """

    L: float = 2.9
    dt: float = 0.05
    a_max: float = 4.0
    delta_max: float = 0.6
    v_min: float = 0.0

    def __post_init__(self):
        if self.L <= 0 or self.dt <= 0:
            raise ValueError("L and dt must be positive")

    def with_dt(self, dt):
        return replace(self, dt=dt)


def clamp_input(u, p):
    """Clamp a control to the actuation limits. Returns (clamped, was_clamped)."""
    a = min(max(u.a, -p.a_max), p.a_max)
    d = min(max(u.delta, -p.delta_max), p.delta_max)
    clamped = (a != u.a) or (d != u.delta)
    return ControlInput(a, d), clamped


def _step_raw(x, u, p):
    """One discrete step without angle wrapping or speed flooring.

    This is the smooth map the Jacobians differentiate.
    """
    l = x.v * p.dt + 0.5 * u.a * p.dt * p.dt
    if abs(u.delta) >= DELTA_EPS:
        kappa = np.tan(u.delta) / p.L
        psi = x.theta + kappa * l
        px = x.px + (np.sin(psi) - np.sin(x.theta)) / kappa
        py = x.py + (np.cos(x.theta) - np.cos(psi)) / kappa
        theta = psi
    else:
        px = x.px + l * np.cos(x.theta)
        py = x.py + l * np.sin(x.theta)
        theta = x.theta
    v = x.v + u.a * p.dt
    return np.array([px, py, v, theta])


def step(x, u, p):
    """Advance the vehicle one step of p.dt.

    Inputs beyond the actuation limits are clamped (the controller output
    is already constrained; clamping only guards the simulator boundary).
    The returned speed is floored at p.v_min and the heading wrapped.
    """
    u, _ = clamp_input(u, p)
    nxt = _step_raw(x, u, p)
    return VehicleState(
        float(nxt[0]), float(nxt[1]), float(max(nxt[2], p.v_min)), float(wrap_angle(nxt[3]))
    )


def linearize(x, u, p):
    """Analytic Jacobians (A, B) and affine residual c of the step map.

    c = f(x, u) - A x - B u, so that f(x', u') ~ A x' + B u' + c near
    (x, u).  The straight branch keeps the exact delta-column limit of the
    curved branch so steering effectiveness never vanishes.
    """
    l = x.v * p.dt + 0.5 * u.a * p.dt * p.dt
    dt = p.dt
    A = np.eye(4)
    B = np.zeros((4, 2))
    if abs(u.delta) >= DELTA_EPS:
        kappa = np.tan(u.delta) / p.L
        dkappa = (1.0 + np.tan(u.delta) ** 2) / p.L
        psi = x.theta + kappa * l
        sin_t, cos_t = np.sin(x.theta), np.cos(x.theta)
        sin_p, cos_p = np.sin(psi), np.cos(psi)
        A[0, 2] = cos_p * dt
        A[0, 3] = (cos_p - cos_t) / kappa
        A[1, 2] = sin_p * dt
        A[1, 3] = (sin_p - sin_t) / kappa
        A[3, 2] = kappa * dt
        B[0, 0] = cos_p * 0.5 * dt * dt
        B[1, 0] = sin_p * 0.5 * dt * dt
        B[2, 0] = dt
        B[3, 0] = kappa * 0.5 * dt * dt
        B[0, 1] = dkappa * (l * cos_p * kappa - (sin_p - sin_t)) / kappa**2
        B[1, 1] = dkappa * (l * sin_p * kappa - (cos_t - cos_p)) / kappa**2
        B[3, 1] = dkappa * l
    else:
        sin_t, cos_t = np.sin(x.theta), np.cos(x.theta)
        A[0, 2] = cos_t * dt
        A[0, 3] = -l * sin_t
        A[1, 2] = sin_t * dt
        A[1, 3] = l * cos_t
        B[0, 0] = cos_t * 0.5 * dt * dt
        B[1, 0] = sin_t * 0.5 * dt * dt
        B[2, 0] = dt
        # limits of the curved branch as kappa -> 0
        B[0, 1] = -0.5 * l * l * sin_t / p.L
        B[1, 1] = 0.5 * l * l * cos_t / p.L
        B[3, 1] = l / p.L
    c = _step_raw(x, u, p) - A @ x.as_array() - B @ u.as_array()
    return A, B, c


def rollout(x0, controls, p):
    """Apply a control sequence; returns len(controls)+1 states including x0."""
    out = [x0]
    for u in controls:
        out.append(step(out[-1], u, p))
    return out

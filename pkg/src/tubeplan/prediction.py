"""Two-stage dynamic-obstacle prediction.

Short term (up to 1 s): validated interval propagation of the bicycle
model over the initial state box and bounded-but-unobserved controls,
yielding per-step occupancy rectangles that enclose every admissible
trajectory.  Long term: a constant-velocity particle rollout seeded from
the short-term terminal mean, inflated only by the obstacle footprint.
"""

from dataclasses import dataclass, field

import numpy as np

from .dynamics import DELTA_EPS, ControlInput, VehicleParams, VehicleState, step
from .polytope import Box

# widening factor applied to trigonometric range enclosures; interval
# products and sums are exact enclosures and need no remainder
TRIG_PAD = 1.05

SHORT_TERM_MAX_HORIZON = 1.0


class HorizonTooLong(Exception):
    pass


@dataclass(frozen=True)
class ObstacleState:
    px: float
    py: float
    v: float
    theta: float
    state_uncertainty: Box = field(
        default_factory=lambda: Box(np.zeros(4), np.zeros(4))
    )

    def __post_init__(self):
        if not self.state_uncertainty.contains(np.zeros(4)):
            raise ValueError("state uncertainty box must contain the origin")

    def mean(self):
        return VehicleState(self.px, self.py, self.v, self.theta)


@dataclass(frozen=True)
class ControlBounds:
    a_lo: float = 0.0
    a_hi: float = 0.0
    delta_lo: float = 0.0
    delta_hi: float = 0.0

    def __post_init__(self):
        if self.a_lo > self.a_hi or self.delta_lo > self.delta_hi:
            raise ValueError("control bounds must satisfy lo <= hi")

    def mid(self):
        return ControlInput(0.5 * (self.a_lo + self.a_hi), 0.5 * (self.delta_lo + self.delta_hi))


@dataclass(frozen=True)
class OccupancyBox:
    t_index: int
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float

    def __post_init__(self):
        if self.x_lo > self.x_hi + 1e-12 or self.y_lo > self.y_hi + 1e-12:
            raise ValueError("occupancy box bounds inverted")

    def contains(self, x, y, tol=0.0):
        return (
            self.x_lo - tol <= x <= self.x_hi + tol
            and self.y_lo - tol <= y <= self.y_hi + tol
        )

    def distance(self, x, y):
        """Euclidean distance from a point to the box (0 inside)."""
        dx = max(self.x_lo - x, 0.0, x - self.x_hi)
        dy = max(self.y_lo - y, 0.0, y - self.y_hi)
        return float(np.hypot(dx, dy))

    def inflate(self, hx, hy):
        return OccupancyBox(
            self.t_index, self.x_lo - hx, self.x_hi + hx, self.y_lo - hy, self.y_hi + hy
        )

    def to_dict(self):
        return {
            "t_index": self.t_index,
            "x_lo": self.x_lo,
            "x_hi": self.x_hi,
            "y_lo": self.y_lo,
            "y_hi": self.y_hi,
        }


# ---------------------------------------------------------------------------
# interval helpers: an interval is a (lo, hi) float pair
# ---------------------------------------------------------------------------

def _imul(a, b):
    cands = (a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
    return (min(cands), max(cands))


def _ihull0(a):
    """Smallest interval containing both a and zero."""
    return (min(a[0], 0.0), max(a[1], 0.0))


def _cos_interval(lo, hi):
    """Exact range of cos over [lo, hi]."""
    if hi - lo >= 2.0 * np.pi:
        return (-1.0, 1.0)
    vals = [np.cos(lo), np.cos(hi)]
    # interior extrema at multiples of pi
    k_lo = int(np.ceil(lo / np.pi))
    k_hi = int(np.floor(hi / np.pi))
    for k in range(k_lo, k_hi + 1):
        vals.append(1.0 if k % 2 == 0 else -1.0)
    return (float(min(vals)), float(max(vals)))


def _sin_interval(lo, hi):
    c = _cos_interval(lo - 0.5 * np.pi, hi - 0.5 * np.pi)
    return c


def _pad_trig(rng):
    """Widen a trig range enclosure by TRIG_PAD about its midpoint, clipped
    to [-1, 1].  Degenerate (zero-width) ranges stay exact."""
    lo, hi = rng
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) * TRIG_PAD
    return (max(mid - half, -1.0), min(mid + half, 1.0))


def _interval_step(ivals, bounds, p):
    """One validated interval step of the bicycle model.

    ivals is a dict of intervals for px, py, v, theta.  The positional
    increments use the exact arc identity dx = l * cos(xi), xi in
    theta + hull(0, kappa*l), so the enclosure is sound for both the
    curved and straight update branches.
    """
    dt = p.dt
    t_lo, t_hi = np.tan(bounds.delta_lo), np.tan(bounds.delta_hi)
    kappa = (t_lo / p.L, t_hi / p.L)
    a_iv = (bounds.a_lo, bounds.a_hi)
    l_iv = (
        ivals["v"][0] * dt + 0.5 * a_iv[0] * dt * dt,
        ivals["v"][1] * dt + 0.5 * a_iv[1] * dt * dt,
    )
    dtheta = _imul(kappa, _ihull0(l_iv))
    ang_lo = ivals["theta"][0] + _ihull0(dtheta)[0]
    ang_hi = ivals["theta"][1] + _ihull0(dtheta)[1]
    cos_iv = _pad_trig(_cos_interval(ang_lo, ang_hi))
    sin_iv = _pad_trig(_sin_interval(ang_lo, ang_hi))
    dx = _imul(l_iv, cos_iv)
    dy = _imul(l_iv, sin_iv)
    v_next = (
        max(ivals["v"][0] + a_iv[0] * dt, p.v_min),
        max(ivals["v"][1] + a_iv[1] * dt, p.v_min),
    )
    return {
        "px": (ivals["px"][0] + dx[0], ivals["px"][1] + dx[1]),
        "py": (ivals["py"][0] + dy[0], ivals["py"][1] + dy[1]),
        "v": v_next,
        "theta": (ivals["theta"][0] + dtheta[0], ivals["theta"][1] + dtheta[1]),
    }


def _footprint_halfwidths(theta_iv, half_length, half_width):
    """Axis-aligned half-extents of a rotated footprint over a heading range."""
    if half_length == 0.0 and half_width == 0.0:
        return 0.0, 0.0
    abs_cos = max(abs(v) for v in _cos_interval(*theta_iv))
    abs_sin = max(abs(v) for v in _sin_interval(*theta_iv))
    hx = half_length * abs_cos + half_width * abs_sin
    hy = half_length * abs_sin + half_width * abs_cos
    return hx, hy


def short_term_reach(o, b, horizon, dt, params):
    """Interval reach tube plus deterministic mean rollout.

    Returns (interval_list, mean_states): one interval dict and one mean
    VehicleState per step, index 0 being the initial condition.
    """
    if horizon > SHORT_TERM_MAX_HORIZON + 1e-9:
        raise HorizonTooLong(
            f"short-term horizon {horizon} s exceeds {SHORT_TERM_MAX_HORIZON} s"
        )
    p = params.with_dt(dt)
    u = o.state_uncertainty
    mean = o.mean().as_array()
    ivals = {
        "px": (mean[0] + u.lower[0], mean[0] + u.upper[0]),
        "py": (mean[1] + u.lower[1], mean[1] + u.upper[1]),
        "v": (max(mean[2] + u.lower[2], p.v_min), max(mean[2] + u.upper[2], p.v_min)),
        "theta": (mean[3] + u.lower[3], mean[3] + u.upper[3]),
    }
    n_steps = int(round(horizon / dt))
    tube = [ivals]
    mean_states = [o.mean()]
    u_mid = b.mid()
    for _ in range(n_steps):
        tube.append(_interval_step(tube[-1], b, p))
        mean_states.append(step(mean_states[-1], u_mid, p))
    return tube, mean_states


def _boxes_from_tube(tube, half_length, half_width, start_index=0):
    boxes = []
    for k, iv in enumerate(tube):
        hx, hy = _footprint_halfwidths(iv["theta"], half_length, half_width)
        boxes.append(
            OccupancyBox(
                start_index + k,
                iv["px"][0] - hx,
                iv["px"][1] + hx,
                iv["py"][0] - hy,
                iv["py"][1] + hy,
            )
        )
    return boxes


def short_term_occupancy(
    o, b, horizon=0.5, dt=0.1, params=None, half_length=0.0, half_width=0.0
):
    """Sound per-step occupancy rectangles over a short horizon (<= 1 s).

    Every trajectory of the discrete bicycle model started in the obstacle
    state box under controls within the bounds stays inside the returned
    boxes (before and after footprint inflation).
    """
    params = params or VehicleParams(dt=dt)
    tube, _ = short_term_reach(o, b, horizon, dt, params)
    return _boxes_from_tube(tube, half_length, half_width)


def long_term_predict(o, horizon, dt=0.1, half_length=0.0, half_width=0.0):
    """Constant-velocity, constant-heading particle prediction.

    No uncertainty growth: each particle is inflated only by the footprint.
    """
    n_steps = int(round(horizon / dt))
    cx, cy = np.cos(o.theta), np.sin(o.theta)
    hx, hy = _footprint_halfwidths((o.theta, o.theta), half_length, half_width)
    boxes = []
    for k in range(n_steps + 1):
        x = o.px + o.v * cx * k * dt
        y = o.py + o.v * cy * k * dt
        boxes.append(OccupancyBox(k, x - hx, x + hx, y - hy, y + hy))
    return boxes


def predict(
    o,
    b,
    plan_horizon,
    dt=0.1,
    params=None,
    half_length=0.0,
    half_width=0.0,
    short_horizon=0.5,
):
    """Stitched short/long-term occupancy over the full planning horizon.

    Boxes for t <= short_horizon come from the interval reach tube; the
    remainder is a constant-velocity rollout seeded from the short-term
    terminal mean state.  t_index runs 0..plan_horizon/dt.
    """
    if plan_horizon < short_horizon - 1e-9:
        raise ValueError("plan horizon shorter than the short-term stage")
    params = params or VehicleParams(dt=dt)
    tube, mean_states = short_term_reach(o, b, short_horizon, dt, params)
    boxes = _boxes_from_tube(tube, half_length, half_width)
    n_total = int(round(plan_horizon / dt))
    n_short = len(boxes) - 1
    if n_total > n_short:
        seed_state = mean_states[-1]
        seed = ObstacleState(
            seed_state.px, seed_state.py, seed_state.v, seed_state.theta
        )
        tail = long_term_predict(
            seed,
            (n_total - n_short) * dt,
            dt,
            half_length=half_length,
            half_width=half_width,
        )
        for box in tail[1:]:
            boxes.append(
                OccupancyBox(
                    n_short + box.t_index, box.x_lo, box.x_hi, box.y_lo, box.y_hi
                )
            )
    return boxes

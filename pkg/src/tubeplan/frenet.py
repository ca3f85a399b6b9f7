"""Frenet-frame polynomial trajectory sampling and selection.

A cubic-spline reference path provides the arc-length frame.  Candidates
pair a quintic lateral polynomial d(t) with a velocity-keeping quartic
s(t) over a grid of (lateral target, speed target, duration), are
converted to Cartesian samples on the planner grid, filtered against
time-synchronized occupancy boxes, and ranked by a weighted cost of
jerk, acceleration, lateral velocity, terminal deviation, duration and
inverse obstacle clearance.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .dynamics import wrap_angle

ARCLENGTH_RESOLUTION = 0.01


class ProjectionAmbiguous(Exception):
    pass


class NoFeasibleTrajectory(Exception):
    pass


class ReferencePath:
    """Arc-length parameterized C2 path through waypoints.

    Cubic splines in a chord-length parameter are resampled onto a dense
    (1 cm) arc-length table; position/heading/curvature lookups go through
    the same piecewise-linear s <-> t map in both directions, so Frenet
    round trips are consistent to float precision.
    """

    def __init__(self, waypoints):
        wp = np.atleast_2d(np.asarray(waypoints, dtype=float))
        if wp.shape[0] < 2 or wp.shape[1] != 2:
            raise ValueError("need at least two 2-D waypoints")
        chord = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(wp, axis=0), axis=1))])
        if np.any(np.diff(chord) <= 1e-12):
            raise ValueError("consecutive duplicate waypoints")
        self._sx = CubicSpline(chord, wp[:, 0])
        self._sy = CubicSpline(chord, wp[:, 1])
        # dense arc-length table
        n_dense = max(int(chord[-1] / ARCLENGTH_RESOLUTION), 8)
        t_dense = np.linspace(0.0, chord[-1], n_dense + 1)
        dx = self._sx(t_dense, 1)
        dy = self._sy(t_dense, 1)
        speed = np.hypot(dx, dy)
        s_dense = np.concatenate(
            [[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(t_dense))]
        )
        self._t_table = t_dense
        self._s_table = s_dense
        self.length = float(s_dense[-1])

    def _t_of_s(self, s):
        return np.interp(s, self._s_table, self._t_table)

    def _s_of_t(self, t):
        return np.interp(t, self._t_table, self._s_table)

    def position(self, s):
        t = self._t_of_s(np.asarray(s, dtype=float))
        return np.stack([self._sx(t), self._sy(t)], axis=-1)

    def heading(self, s):
        t = self._t_of_s(np.asarray(s, dtype=float))
        return np.arctan2(self._sy(t, 1), self._sx(t, 1))

    def curvature(self, s):
        t = self._t_of_s(np.asarray(s, dtype=float))
        dx, dy = self._sx(t, 1), self._sy(t, 1)
        ddx, ddy = self._sx(t, 2), self._sy(t, 2)
        denom = np.maximum((dx * dx + dy * dy) ** 1.5, 1e-12)
        return (dx * ddy - dy * ddx) / denom

    def normal(self, s):
        h = self.heading(s)
        return np.stack([-np.sin(h), np.cos(h)], axis=-1)

    def project(self, point):
        """Arc length of the nearest path point (coarse table + Newton)."""
        p = np.asarray(point, dtype=float)
        px = self._sx(self._t_table)
        py = self._sy(self._t_table)
        d2 = (px - p[0]) ** 2 + (py - p[1]) ** 2
        t = float(self._t_table[int(np.argmin(d2))])
        t_max = float(self._t_table[-1])
        for _ in range(8):
            dx = float(self._sx(t) - p[0])
            dy = float(self._sy(t) - p[1])
            d1x, d1y = float(self._sx(t, 1)), float(self._sy(t, 1))
            d2x, d2y = float(self._sx(t, 2)), float(self._sy(t, 2))
            g = dx * d1x + dy * d1y
            h = d1x * d1x + d1y * d1y + dx * d2x + dy * d2y
            if abs(h) < 1e-12:
                break
            t_new = min(max(t - g / h, 0.0), t_max)
            if abs(t_new - t) < 1e-12:
                t = t_new
                break
            t = t_new
        return float(self._s_of_t(t))

    def to_cartesian(self, s, d):
        """Map Frenet (s, d) to a Cartesian point."""
        return self.position(s) + np.asarray(d)[..., None] * self.normal(s)


@dataclass(frozen=True)
class FrenetState:
    s: float
    s_dot: float
    d: float
    d_dot: float
    s_ddot: float = 0.0
    d_ddot: float = 0.0


def to_frenet(path, x):
    """Project a vehicle state onto the path; returns a FrenetState.

    Raises ProjectionAmbiguous when the point sits too close to the local
    center of curvature for the projection to be well defined.
    """
    s = path.project((x.px, x.py))
    origin = path.position(s)
    n = path.normal(s)
    d = float((np.array([x.px, x.py]) - origin) @ n)
    kappa = float(path.curvature(s))
    one_minus_kd = 1.0 - kappa * d
    if one_minus_kd <= 0.05:
        raise ProjectionAmbiguous(
            f"offset {d:.2f} m too close to curvature center (1/kappa = {1.0 / kappa:.2f} m)"
        )
    dtheta = wrap_angle(x.theta - float(path.heading(s)))
    return FrenetState(
        s=s,
        s_dot=x.v * np.cos(dtheta) / one_minus_kd,
        d=d,
        d_dot=x.v * np.sin(dtheta),
    )


def quintic_lateral(d0, d_dot0, d_ddot0, d_target, T):
    """Quintic coefficients meeting d(0), d'(0), d''(0) and d(T)=target,
    d'(T)=d''(T)=0 exactly."""
    if T <= 0:
        raise ValueError("duration must be positive")
    a0, a1, a2 = d0, d_dot0, 0.5 * d_ddot0
    A = np.array(
        [
            [T**3, T**4, T**5],
            [3 * T**2, 4 * T**3, 5 * T**4],
            [6 * T, 12 * T**2, 20 * T**3],
        ]
    )
    b = np.array(
        [
            d_target - a0 - a1 * T - a2 * T**2,
            -a1 - 2 * a2 * T,
            -2 * a2,
        ]
    )
    a3, a4, a5 = np.linalg.solve(A, b)
    return np.array([a0, a1, a2, a3, a4, a5])


def quartic_longitudinal(s0, s_dot0, s_ddot0, s_dot_target, T):
    """Quartic coefficients meeting s(0), s'(0), s''(0) and s'(T)=target,
    s''(T)=0 exactly (velocity keeping: no terminal position constraint)."""
    if T <= 0:
        raise ValueError("duration must be positive")
    a0, a1, a2 = s0, s_dot0, 0.5 * s_ddot0
    A = np.array([[3 * T**2, 4 * T**3], [6 * T, 12 * T**2]])
    b = np.array([s_dot_target - a1 - 2 * a2 * T, -2 * a2])
    a3, a4 = np.linalg.solve(A, b)
    return np.array([a0, a1, a2, a3, a4])


def poly_eval(coeffs, t, derivative=0):
    """Evaluate a polynomial (ascending coefficients) or a derivative."""
    c = np.asarray(coeffs, dtype=float)
    for _ in range(derivative):
        c = c[1:] * np.arange(1, c.shape[0])
    return np.polynomial.polynomial.polyval(np.asarray(t, dtype=float), c)


@dataclass
class PlannerConfig:
    """Sampling grids and cost weights; all weights strictly positive."""

    k_j: float = 0.002
    k_a: float = 0.01
    k_v: float = 0.2
    k_s: float = 2.0
    k_t: float = 0.1
    k_lat: float = 1.0
    k_lon: float = 1.0
    k_obs: float = 1.0
    d_targets: tuple = (-3.5, -1.75, 0.0, 1.75, 3.5)
    v_offsets: tuple = (-4.0, -2.0, 0.0)
    T_targets: tuple = (3.0, 3.5, 4.0)
    reference_speed: float = 25.0
    dt: float = 0.1
    d_floor: float = 0.1
    a_max: float = 4.0
    kappa_max: float = 0.25
    ego_halfwidth: float = 1.0

    def __post_init__(self):
        weights = (
            self.k_j, self.k_a, self.k_v, self.k_s,
            self.k_t, self.k_lat, self.k_lon, self.k_obs,
        )
        if any(w <= 0 for w in weights):
            raise ValueError("all cost weights must be positive")

    def v_targets(self):
        return tuple(max(self.reference_speed + off, 0.0) for off in self.v_offsets)


@dataclass
class FrenetCandidate:
    lat_coeffs: np.ndarray
    lon_coeffs: np.ndarray
    T: float
    d_target: float
    v_target: float
    index: int
    times: np.ndarray = None
    s: np.ndarray = None
    d: np.ndarray = None
    s_dot: np.ndarray = None
    d_dot: np.ndarray = None
    x: np.ndarray = None
    y: np.ndarray = None
    v: np.ndarray = None
    theta: np.ndarray = None
    a_lat: np.ndarray = None
    a_lon: np.ndarray = None
    j_lat: np.ndarray = None
    j_lon: np.ndarray = None
    curvature: np.ndarray = None
    feasible: bool = True
    cost: float = field(default=np.nan)

    def n_samples(self):
        return len(self.times)


def _sample_candidate(cand, path, cfg):
    t = np.arange(0.0, cand.T + 0.5 * cfg.dt, cfg.dt)
    cand.times = t
    cand.d = poly_eval(cand.lat_coeffs, t)
    cand.d_dot = poly_eval(cand.lat_coeffs, t, 1)
    cand.a_lat = poly_eval(cand.lat_coeffs, t, 2)
    cand.j_lat = poly_eval(cand.lat_coeffs, t, 3)
    cand.s = poly_eval(cand.lon_coeffs, t)
    cand.s_dot = poly_eval(cand.lon_coeffs, t, 1)
    cand.a_lon = poly_eval(cand.lon_coeffs, t, 2)
    cand.j_lon = poly_eval(cand.lon_coeffs, t, 3)

    beyond_path = bool(np.max(cand.s) > path.length - 0.5)
    s_clip = np.clip(cand.s, 0.0, path.length)
    pts = path.to_cartesian(s_clip, cand.d)
    cand.x, cand.y = pts[:, 0], pts[:, 1]
    diff = np.diff(pts, axis=0)
    seg = np.linalg.norm(diff, axis=1)
    v = seg / cfg.dt
    cand.v = np.concatenate([v, v[-1:]])
    heading = np.arctan2(diff[:, 1], diff[:, 0])
    if len(heading) == 0:
        heading = np.zeros(1)
    cand.theta = np.concatenate([heading, heading[-1:]])
    # curvature from heading increments over travelled distance
    if len(heading) >= 2:
        dh = wrap_angle(np.diff(heading))
        ds = np.maximum(0.5 * (seg[1:] + seg[:-1]), 1e-6)
        kappa = dh / ds
        cand.curvature = np.concatenate([kappa[:1], kappa, kappa[-1:]])
    else:
        cand.curvature = np.zeros_like(cand.x)

    cand.feasible = not beyond_path and bool(
        np.all(np.abs(cand.a_lon) <= cfg.a_max + 1e-9)
        and np.all(np.abs(cand.curvature) <= cfg.kappa_max + 1e-9)
        and np.all(cand.s_dot >= -1e-9)
    )
    return cand


def generate_candidates(state_f, cfg, path):
    """One sampled candidate per (d_target, v_target, T) grid triple."""
    cands = []
    idx = 0
    for d_t in cfg.d_targets:
        for v_t in cfg.v_targets():
            for T in cfg.T_targets:
                lat = quintic_lateral(state_f.d, state_f.d_dot, state_f.d_ddot, d_t, T)
                lon = quartic_longitudinal(state_f.s, state_f.s_dot, state_f.s_ddot, v_t, T)
                cand = FrenetCandidate(
                    lat_coeffs=lat,
                    lon_coeffs=lon,
                    T=T,
                    d_target=d_t,
                    v_target=v_t,
                    index=idx,
                )
                cands.append(_sample_candidate(cand, path, cfg))
                idx += 1
    return cands


def _min_distances(cand, occupancy):
    """Per-sample distance to the nearest same-time obstacle box (inf if none)."""
    n = cand.n_samples()
    dist = np.full(n, np.inf)
    for boxes in occupancy:
        by_index = {b.t_index: b for b in boxes}
        for k in range(n):
            box = by_index.get(k)
            if box is None:
                continue
            dist[k] = min(dist[k], box.distance(cand.x[k], cand.y[k]))
    return dist


def collision_filter(cands, occupancy, ego_halfwidth):
    """Drop candidates whose sample discs hit a same-time occupancy box.

    occupancy is a sequence of per-obstacle box lists indexed by t_index on
    the same time grid as the candidates.
    """
    survivors = []
    for cand in cands:
        if np.min(_min_distances(cand, occupancy), initial=np.inf) <= ego_halfwidth:
            continue
        survivors.append(cand)
    return survivors


def cost(cand, occupancy, cfg):
    """Weighted candidate cost; strictly positive for any T > 0."""
    c_lat = (
        cfg.k_j * float(np.sum(cand.j_lat**2))
        + cfg.k_a * float(np.sum(cand.a_lat**2))
        + cfg.k_v * float(np.sum(cand.d_dot**2))
        + cfg.k_s * float(cand.d[-1] ** 2)
    )
    c_lon = (
        cfg.k_j * float(np.sum(cand.j_lon**2))
        + cfg.k_a * float(np.sum(cand.a_lon**2))
        + cfg.k_t * cand.T
        + cfg.k_s * float((cand.s_dot[-1] - cfg.reference_speed) ** 2)
    )
    dist = _min_distances(cand, occupancy)
    finite = np.isfinite(dist)
    s_obs = float(np.sum(1.0 / np.maximum(dist[finite], cfg.d_floor)))
    return cfg.k_lat * c_lat + cfg.k_lon * c_lon + cfg.k_obs * s_obs


def plan(x, path, occupancy, cfg, accel_hint=(0.0, 0.0)):
    """Full pipeline: project, sample, filter, and pick the cheapest candidate.

    accel_hint provides (s_ddot, d_ddot) continuity from the previous plan.
    Ties break on smaller |d_target|, then smaller grid index.  Raises
    NoFeasibleTrajectory when every candidate is infeasible or colliding.
    """
    fs = to_frenet(path, x)
    fs = FrenetState(fs.s, fs.s_dot, fs.d, fs.d_dot, accel_hint[0], accel_hint[1])
    cands = generate_candidates(fs, cfg, path)
    alive = [c for c in cands if c.feasible]
    alive = collision_filter(alive, occupancy, cfg.ego_halfwidth)
    if not alive:
        raise NoFeasibleTrajectory("no candidate survives feasibility and collision checks")
    for c in alive:
        c.cost = cost(c, occupancy, cfg)
    alive.sort(key=lambda c: (c.cost, abs(c.d_target), c.index))
    return alive[0]

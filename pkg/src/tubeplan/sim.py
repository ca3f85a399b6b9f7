"""Deterministic closed-loop scenario harness.

Runs the full stack at a 0.05 s control period with replanning every
0.1 s: perceive (uniform state noise), filter, learn residual bounds
(GPR), predict obstacle occupancy, plan a Frenet trajectory, grow a
convex free-space region, solve the tube (or nominal) MPC, and advance
the true dynamics under injected process disturbance.  Runs are
byte-reproducible for a fixed seed; wall-clock timings are kept out of
the trace file for that reason and reported in metrics.json and the
per-step CSV instead.

Raw per-step measurement noise is too violent for any feedback law to
absorb directly (rejecting a +-0.2 m/s per-step velocity error at 20 Hz
already takes 4 m/s^2 of authority), so the loop carries a fixed-gain
state estimate; the planner, GPR, and MPC all consume the estimate, and
the tube containment property is checked on it.
"""

import csv
import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import frenet, gpr, iris, mpc, prediction
from .dynamics import ControlInput, VehicleParams, VehicleState, step, wrap_angle
from .polytope import HRep, convex_hull_2d, h_to_v_2d


class ScenarioInvalid(Exception):
    pass


@dataclass
class ObstacleSpec:
    """Scripted traffic participant: straight line or path following."""

    px: float
    py: float
    v: float
    theta: float = 0.0
    policy: str = "line"
    waypoints: list = None
    half_length: float = 2.3
    half_width: float = 1.0
    accel_bound: float = 1.0
    steer_bound: float = 0.03
    uncertainty: tuple = (0.2, 0.2, 0.3, 0.02)

    _path: object = field(default=None, repr=False, compare=False)
    _s0: float = field(default=0.0, repr=False, compare=False)

    def __post_init__(self):
        if self.policy not in ("line", "path"):
            raise ScenarioInvalid(f"unknown obstacle policy {self.policy!r}")
        if self.policy == "path":
            if not self.waypoints:
                raise ScenarioInvalid("path policy needs waypoints")
            self._path = frenet.ReferencePath(self.waypoints)
            self._s0 = self._path.project((self.px, self.py))

    def state_at(self, t):
        if self.policy == "line":
            return prediction.ObstacleState(
                self.px + self.v * np.cos(self.theta) * t,
                self.py + self.v * np.sin(self.theta) * t,
                self.v,
                self.theta,
                self._uncertainty_box(),
            )
        s = min(self._s0 + self.v * t, self._path.length)
        pos = self._path.position(s)
        heading = float(self._path.heading(s))
        return prediction.ObstacleState(
            float(pos[0]), float(pos[1]), self.v, heading, self._uncertainty_box()
        )

    def _uncertainty_box(self):
        h = np.asarray(self.uncertainty, dtype=float)
        from .polytope import Box

        return Box(-h, h)

    def control_bounds(self):
        return prediction.ControlBounds(
            -self.accel_bound, self.accel_bound, -self.steer_bound, self.steer_bound
        )

    def to_dict(self):
        return {
            "px": self.px, "py": self.py, "v": self.v, "theta": self.theta,
            "policy": self.policy, "waypoints": self.waypoints,
            "half_length": self.half_length, "half_width": self.half_width,
            "accel_bound": self.accel_bound, "steer_bound": self.steer_bound,
            "uncertainty": list(self.uncertainty),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            px=d["px"], py=d["py"], v=d["v"], theta=d.get("theta", 0.0),
            policy=d.get("policy", "line"), waypoints=d.get("waypoints"),
            half_length=d.get("half_length", 2.3), half_width=d.get("half_width", 1.0),
            accel_bound=d.get("accel_bound", 1.0), steer_bound=d.get("steer_bound", 0.03),
            uncertainty=tuple(d.get("uncertainty", (0.2, 0.2, 0.3, 0.02))),
        )


@dataclass
class Scenario:
    name: str
    waypoints: list
    ego_start: tuple
    ref_speed: float
    obstacles: list
    bounds: tuple  # (x_lo, x_hi, y_lo, y_hi)
    duration: float
    w_max: tuple = (0.2, 0.2, 0.2, 0.1)
    seed: int = 0
    safe_distance: float = 3.5
    lane_width: float = 3.5
    obstacle_margin: float = 1.2
    iris_margin: float = 0.3
    ego_half_width: float = 1.0
    ego_half_length: float = 2.3
    ego_L: float = 2.9
    ego_a_max: float = 8.0
    ego_delta_max: float = 0.6
    estimator_gains: tuple = (0.35, 0.3, 0.2, 0.12)
    perception_noise: bool = True
    process_noise: bool = True
    d_targets: tuple = (-3.5, -1.75, 0.0, 1.75, 3.5)
    T_targets: tuple = (3.0, 3.5, 4.0)
    plan_horizon: float = 4.0
    gpr_c: float = 3.0
    description: str = ""

    def validate(self):
        if self.duration <= 0:
            raise ScenarioInvalid("duration must be positive")
        if len(self.waypoints) < 2:
            raise ScenarioInvalid("reference path needs at least two waypoints")
        x_lo, x_hi, y_lo, y_hi = self.bounds
        if x_lo >= x_hi or y_lo >= y_hi:
            raise ScenarioInvalid("world bounds are inverted")
        ex, ey = self.ego_start[0], self.ego_start[1]
        for i, ob in enumerate(self.obstacles):
            s0 = ob.state_at(0.0)
            if (
                abs(ex - s0.px) < ob.half_length + self.ego_half_length
                and abs(ey - s0.py) < ob.half_width + self.ego_half_width
            ):
                raise ScenarioInvalid(f"ego start overlaps obstacle {i}")
        if min(self.w_max) < 0:
            raise ScenarioInvalid("disturbance bounds must be non-negative")
        return self

    def ego_params(self, dt=0.05):
        return VehicleParams(
            L=self.ego_L, dt=dt, a_max=self.ego_a_max, delta_max=self.ego_delta_max
        )

    def to_dict(self):
        d = asdict(self)
        d["obstacles"] = [ob.to_dict() for ob in self.obstacles]
        for key in ("_path", "_s0"):
            for ob in d["obstacles"]:
                ob.pop(key, None)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["obstacles"] = [ObstacleSpec.from_dict(o) for o in d.get("obstacles", [])]
        d["ego_start"] = tuple(d["ego_start"])
        d["bounds"] = tuple(d["bounds"])
        for key in ("w_max", "estimator_gains", "d_targets", "T_targets"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class RunMetrics:
    collision: bool = False
    min_actual_distance: float = np.inf
    min_perceived_distance: float = np.inf
    tube_violations: int = 0
    fallback_activations: int = 0
    clamp_events: int = 0
    steps: int = 0
    solve_ms_median: float = 0.0
    solve_ms_mean: float = 0.0
    solve_ms_p95: float = 0.0
    solve_ms_max: float = 0.0
    gpr_coverage: float = 1.0
    final_progress: float = 0.0

    def to_dict(self):
        d = asdict(self)
        d["min_actual_distance"] = float(self.min_actual_distance)
        d["min_perceived_distance"] = float(self.min_perceived_distance)
        return d


def perceive(true_state, w_max, rng):
    """Measured state: truth plus independent uniform noise per dimension."""
    w = np.asarray(w_max, dtype=float)
    noise = rng.uniform(-w, w)
    arr = true_state.as_array() + noise
    return VehicleState(arr[0], arr[1], arr[2], wrap_angle(arr[3]))


def _estimate_update(x_est, u_prev, x_perc, gains, params):
    """Fixed-gain observer: model prediction blended with the measurement."""
    pred = step(x_est, u_prev, params).as_array()
    innov = x_perc.as_array() - pred
    innov[3] = wrap_angle(innov[3])
    upd = pred + np.asarray(gains) * innov
    return VehicleState(upd[0], upd[1], max(upd[2], 0.0), wrap_angle(upd[3]))


def _occupancy_for_planner(scenario, t, params, dt=0.1):
    """Per-obstacle occupancy boxes over the planning horizon, inflated by
    the footprint plus the scenario margin; the collision filter adds the
    ego half-width disc on top."""
    pad = scenario.obstacle_margin
    occ = []
    for ob in scenario.obstacles:
        boxes = prediction.predict(
            ob.state_at(t),
            ob.control_bounds(),
            scenario.plan_horizon,
            dt=dt,
            params=VehicleParams(L=scenario.ego_L, dt=dt),
            half_length=ob.half_length + pad,
            half_width=ob.half_width + pad,
        )
        occ.append(boxes)
    return occ


def _iris_obstacles(scenario, t):
    """Current-timestep obstacle rectangles for the free-space region,
    inflated by the ego half-width plus the IRIS margin."""
    out = []
    for ob in scenario.obstacles:
        s = ob.state_at(t)
        pad = scenario.ego_half_width + scenario.iris_margin
        hx = ob.half_length * abs(np.cos(s.theta)) + ob.half_width * abs(np.sin(s.theta)) + pad
        hy = ob.half_length * abs(np.sin(s.theta)) + ob.half_width * abs(np.cos(s.theta)) + pad
        out.append(
            convex_hull_2d(
                [
                    (s.px - hx, s.py - hy),
                    (s.px + hx, s.py - hy),
                    (s.px + hx, s.py + hy),
                    (s.px - hx, s.py + hy),
                ]
            )
        )
    return out


def _local_bounds(scenario, x_est):
    x_lo, x_hi, y_lo, y_hi = scenario.bounds
    wx_lo = max(x_lo, x_est.px - 30.0)
    wx_hi = min(x_hi, x_est.px + 90.0)
    if wx_hi - wx_lo < 10.0:
        wx_lo, wx_hi = x_lo, x_hi
    return HRep(
        [[1, 0], [-1, 0], [0, 1], [0, -1]], [wx_hi, -wx_lo, y_hi, -y_lo]
    )


def _planner_config(scenario, v_now):
    # keep sampled speed targets reachable under comfortable acceleration
    v_hi = min(scenario.ref_speed, v_now + 0.5 * scenario.ego_a_max * min(scenario.T_targets))
    v_hi = max(v_hi, 1.0)
    return frenet.PlannerConfig(
        d_targets=scenario.d_targets,
        v_offsets=(-6.0, -3.0, 0.0),
        T_targets=scenario.T_targets,
        reference_speed=v_hi,
        a_max=scenario.ego_a_max,
        kappa_max=float(np.tan(scenario.ego_delta_max) / scenario.ego_L) * 0.9,
        ego_halfwidth=scenario.ego_half_width,
    )


def _brake_input(scenario, x_est, plan_heading):
    steer = 0.0
    if plan_heading is not None:
        steer = float(np.clip(wrap_angle(plan_heading - x_est.theta), -0.3, 0.3))
    return ControlInput(-scenario.ego_a_max, steer)


def _distances(scenario, t, point):
    if not scenario.obstacles:
        return np.inf
    dists = []
    for ob in scenario.obstacles:
        s = ob.state_at(t)
        dists.append(float(np.hypot(point[0] - s.px, point[1] - s.py)))
    return min(dists)


def run(
    scenario,
    mode="tube",
    out_dir=None,
    seed=None,
    duration=None,
    wmax_xy=None,
    wmax_yaw=None,
    perception_noise=None,
    process_noise=None,
):
    """Closed-loop run; returns RunMetrics and optionally writes
    trace.jsonl / metrics.json / steps.csv under out_dir."""
    scenario.validate()
    if mode not in ("tube", "nominal"):
        raise ScenarioInvalid(f"unknown mode {mode!r}")
    seed = scenario.seed if seed is None else int(seed)
    duration = scenario.duration if duration is None else float(duration)
    w_max = np.asarray(scenario.w_max, dtype=float).copy()
    if wmax_xy is not None:
        w_max[0] = w_max[1] = w_max[2] = float(wmax_xy)
    if wmax_yaw is not None:
        w_max[3] = float(wmax_yaw)
    use_perc = scenario.perception_noise if perception_noise is None else perception_noise
    use_proc = scenario.process_noise if process_noise is None else process_noise

    rng = np.random.default_rng(seed)
    dt = 0.05
    n_steps = int(round(duration / dt))
    params = scenario.ego_params(dt)
    path = frenet.ReferencePath(scenario.waypoints)
    cfg = mpc.TubeMpcConfig(mode=mode, a_max=scenario.ego_a_max, delta_max=scenario.ego_delta_max)
    model = gpr.GprModel()

    x_true = VehicleState(*scenario.ego_start)
    x_est = x_true
    u_prev = ControlInput(0.0, 0.0)
    plan = None
    plan_t0 = 0.0
    accel_hint = (0.0, 0.0)
    prev_sol = None
    prev_ellipse = None
    metrics = RunMetrics()
    solve_ms = []
    coverage_hits = 0
    coverage_total = 0
    trace_rows = [] if out_dir is not None else None
    csv_rows = [] if out_dir is not None else None
    occ = None

    for k in range(n_steps):
        t = k * dt
        x_perc = perceive(x_true, w_max if use_perc else np.zeros(4), rng)
        if k == 0:
            x_est = VehicleState(x_perc.px, x_perc.py, max(x_perc.v, 0.0), x_perc.theta)
        else:
            # held-out residual coverage of the current bound, then learn it
            bound = model.bounds([x_est.v, x_est.theta], scenario.gpr_c)
            x_new = _estimate_update(x_est, u_prev, x_perc, scenario.estimator_gains, params)
            resid = x_new.as_array() - step(x_est, u_prev, params).as_array()
            resid[3] = wrap_angle(resid[3])
            coverage_total += 1
            coverage_hits += int(bound.contains(resid))
            model.ingest(x_est, u_prev, x_new, params)
            x_est = x_new

        # tube containment of the state the controller acts on
        tube_ok = True
        if prev_sol is not None and mode == "tube":
            tube_ok = mpc.tube_contains_next(prev_sol, x_est, tol=1e-6)
            if not tube_ok:
                metrics.tube_violations += 1

        if k % 2 == 0:
            occ = _occupancy_for_planner(scenario, t, params)
            pcfg = _planner_config(scenario, x_est.v)
            try:
                plan = frenet.plan(x_est, path, occ, pcfg, accel_hint)
                plan_t0 = t
                idx = min(2, plan.n_samples() - 1)
                accel_hint = (float(plan.a_lon[idx]), float(plan.a_lat[idx]))
            except (frenet.NoFeasibleTrajectory, frenet.ProjectionAmbiguous):
                # keep the previous plan geometry, brake along it below
                metrics.fallback_activations += 1

        fallback = False
        sol = None
        t_cycle0 = time.perf_counter()
        if plan is None:
            fallback = True
            u = _brake_input(scenario, x_est, None)
        else:
            try:
                bound = model.bounds([x_est.v, x_est.theta], scenario.gpr_c)
                region = iris.grow_region(
                    (x_est.px, x_est.py),
                    [],
                    _iris_obstacles(scenario, t),
                    _local_bounds(scenario, x_est),
                    max_iterations=3,
                    init_ellipse=prev_ellipse,
                )
                prev_ellipse = region.ellipse
                refs = mpc.resample_reference(plan, t - plan_t0, cfg.N, dt, path)
                sol = mpc.solve_step(
                    x_est,
                    refs,
                    region.polygon,
                    bound.centered_vertices(),
                    cfg,
                    params,
                    w_center=bound.center,
                )
                u = sol.applied
                metrics.clamp_events += int(sol.clamped)
            except (mpc.InfeasibleMpc, mpc.UnstabilizablePair, iris.SeedInsideObstacle):
                fallback = True
                metrics.fallback_activations += 1
                heading = float(plan.theta[0]) if plan is not None else None
                u = _brake_input(scenario, x_est, heading)
        cycle_ms = 1e3 * (time.perf_counter() - t_cycle0)
        solve_ms.append(cycle_ms)
        prev_sol = sol if (sol is not None and not fallback) else None

        d_true = _distances(scenario, t, (x_true.px, x_true.py))
        d_perc = _distances(scenario, t, (x_perc.px, x_perc.py))
        metrics.min_actual_distance = min(metrics.min_actual_distance, d_true)
        metrics.min_perceived_distance = min(metrics.min_perceived_distance, d_perc)

        if trace_rows is not None:
            row = {
                "t": round(t, 6),
                "true": x_true.as_array().tolist(),
                "perceived": x_perc.as_array().tolist(),
                "estimate": x_est.as_array().tolist(),
                "u": [u.a, u.delta],
                "qp_status": sol.qp_status if sol is not None else "fallback",
                "fallback": fallback,
                "tube_ok": tube_ok,
                "obstacles": [
                    [s.px, s.py, s.v, s.theta]
                    for s in (ob.state_at(t) for ob in scenario.obstacles)
                ],
                "safe_distance": scenario.safe_distance,
            }
            if sol is not None:
                row["x_nom"] = sol.x_nom.tolist()
                row["z_xy"] = convex_hull_2d(sol.z_vertices[:, :2]).vertices.tolist() if mode == "tube" else []
                row["z_vth"] = convex_hull_2d(sol.z_vertices[:, 2:]).vertices.tolist() if mode == "tube" else []
                try:
                    row["iris"] = h_to_v_2d(region.polygon).vertices.tolist()
                except Exception:
                    row["iris"] = []
            if k % 2 == 0 and occ is not None:
                row["occupancy"] = [[b.to_dict() for b in boxes] for boxes in occ]
            trace_rows.append(row)
        if csv_rows is not None:
            csv_rows.append(
                [round(t, 6), x_true.px, x_true.py, x_true.v, x_true.theta, d_true, round(cycle_ms, 3)]
            )

        # advance the world
        w_proc = rng.uniform(-w_max, w_max) if use_proc else np.zeros(4)
        nxt = step(x_true, u, params).as_array() + w_proc
        x_true = VehicleState(nxt[0], nxt[1], max(nxt[2], 0.0), wrap_angle(nxt[3]))
        u_prev = u

    metrics.steps = n_steps
    metrics.collision = metrics.min_actual_distance < scenario.safe_distance
    if solve_ms:
        arr = np.array(solve_ms)
        metrics.solve_ms_median = float(np.median(arr))
        metrics.solve_ms_mean = float(np.mean(arr))
        metrics.solve_ms_p95 = float(np.percentile(arr, 95))
        metrics.solve_ms_max = float(np.max(arr))
    metrics.gpr_coverage = coverage_hits / coverage_total if coverage_total else 1.0
    metrics.final_progress = float(path.project((x_true.px, x_true.py)))

    if out_dir is not None:
        import os

        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "trace.jsonl"), "w") as fh:
            for row in trace_rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
            payload = metrics.to_dict()
            payload.update({"scenario": scenario.name, "mode": mode, "seed": seed})
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(out_dir, "steps.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "px", "py", "v", "theta", "min_distance", "solve_ms"])
            writer.writerows(csv_rows)
    return metrics


def replay(trace_path):
    """Recompute distance/collision/tube metrics from a trace file."""
    min_actual = np.inf
    min_perceived = np.inf
    tube_violations = 0
    fallbacks = 0
    steps = 0
    safe_distance = None
    with open(trace_path) as fh:
        for line in fh:
            row = json.loads(line)
            steps += 1
            safe_distance = row.get("safe_distance", safe_distance)
            fallbacks += int(row.get("fallback", False))
            tube_violations += int(not row.get("tube_ok", True))
            tx, ty = row["true"][0], row["true"][1]
            px, py = row["perceived"][0], row["perceived"][1]
            for obs in row.get("obstacles", []):
                min_actual = min(min_actual, float(np.hypot(tx - obs[0], ty - obs[1])))
                min_perceived = min(min_perceived, float(np.hypot(px - obs[0], py - obs[1])))
    return {
        "steps": steps,
        "min_actual_distance": float(min_actual),
        "min_perceived_distance": float(min_perceived),
        "collision": bool(safe_distance is not None and min_actual < safe_distance),
        "tube_violations": tube_violations,
        "fallback_activations": fallbacks,
    }


def builtin_scenarios():
    """The three stock scenarios: overtake, intersection, curved road."""
    overtake = Scenario(
        name="overtake",
        description=(
            "Slow lead vehicle ahead in the ego lane, a second vehicle in the "
            "adjacent lane, and a parked car intruding on the lane edge further on."
        ),
        waypoints=[(x, 0.0) for x in range(0, 401, 25)],
        ego_start=(0.0, 0.0, 0.0, 0.0),
        ref_speed=25.0,
        obstacles=[
            ObstacleSpec(px=35.0, py=0.0, v=8.0),
            ObstacleSpec(px=55.0, py=3.5, v=8.0),
            ObstacleSpec(px=170.0, py=-1.2, v=0.0, uncertainty=(0.05, 0.05, 0.0, 0.0),
                         accel_bound=0.0, steer_bound=0.0),
        ],
        bounds=(-10.0, 410.0, -5.25, 5.25),
        duration=14.0,
        safe_distance=2.4,
    )
    intersection = Scenario(
        name="intersection",
        description=(
            "Uncontrolled intersection: a target vehicle crosses perpendicular "
            "to the ego direction while the ego accelerates toward its reference speed."
        ),
        waypoints=[(x, 0.0) for x in range(0, 301, 25)],
        ego_start=(0.0, 0.0, 0.0, 0.0),
        ref_speed=25.0,
        obstacles=[
            ObstacleSpec(px=62.0, py=-31.0, v=5.0, theta=np.pi / 2,
                         uncertainty=(0.2, 0.2, 0.3, 0.02)),
        ],
        bounds=(-10.0, 310.0, -5.25, 5.25),
        duration=12.0,
    )
    arc = [(float(x), 0.0) for x in range(0, 41, 10)]
    radius = 80.0
    for ang in np.linspace(0, np.pi / 2, 13)[1:]:
        arc.append((40.0 + radius * np.sin(ang), radius * (1 - np.cos(ang))))
    end = arc[-1]
    for d in range(10, 41, 10):
        arc.append((end[0], end[1] + d))
    curve = Scenario(
        name="curve",
        description="Overtake of a slow vehicle on a curved road.",
        waypoints=arc,
        ego_start=(0.0, 0.0, 8.0, 0.0),
        ref_speed=20.0,
        obstacles=[
            ObstacleSpec(px=10.0, py=0.0, v=6.0, policy="path", waypoints=arc),
        ],
        bounds=(-10.0, 140.0, -8.0, 130.0),
        duration=12.0,
        safe_distance=2.4,
    )
    return [overtake, intersection, curve]


def get_scenario(name):
    for sc in builtin_scenarios():
        if sc.name == name:
            return sc
    raise ScenarioInvalid(f"no builtin scenario named {name!r}")

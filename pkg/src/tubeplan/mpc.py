"""LTV robust tube MPC with constraint tightening and ancillary feedback.

Each control cycle linearizes the bicycle model along the reference,
computes a stabilizing LQR gain K at the first reference point, builds
the truncated disturbance-invariant set Z from the identified disturbance
box, tightens the state set (free-space polygon x velocity/heading box)
and input box by the supports of Z and K Z, and solves a convex QP for
the nominal trajectory.  The applied input is u = u_nom0 + K (x - x_nom0).
Nominal (non-robust) mode pins the first nominal state to the measurement
with Z = {0} and K = 0.
"""

from dataclasses import dataclass, field

import numpy as np

from . import qp as qpmod
from .dynamics import ControlInput, VehicleParams, VehicleState, linearize, wrap_angle
from .polytope import (
    HRep,
    VRep,
    concat,
    contains,
    convex_hull_2d,
    disturbance_sum_vertices,
    pontryagin_diff,
    _plane_hrep,
)


class UnstabilizablePair(Exception):
    pass


class InfeasibleMpc(Exception):
    pass


@dataclass
class TubeMpcConfig:
    N: int = 5
    dt: float = 0.05
    Q: np.ndarray = field(default_factory=lambda: np.diag([1.0, 1.0, 2.0, 3.0]))
    R: np.ndarray = field(default_factory=lambda: np.diag([0.005, 0.05]))
    Q_f: np.ndarray = None
    gain_Q: np.ndarray = field(default_factory=lambda: np.diag([0.5, 0.5, 0.5, 1.0]))
    gain_R: np.ndarray = field(default_factory=lambda: np.diag([0.2, 1.0]))
    v_bounds: tuple = (0.0, 30.0)
    theta_halfwidth: float = np.pi / 4
    a_max: float = 4.0
    delta_max: float = 0.6
    z_terms: int = 6
    mode: str = "tube"
    gain_v_floor: float = 6.0
    gain_R_scale: float = 1.0
    qp_tol: float = 1e-6
    qp_max_iter: int = 4000

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        if self.Q_f is None:
            self.Q_f = 10.0 * self.Q
        self.Q_f = np.asarray(self.Q_f, dtype=float)
        self.gain_Q = np.asarray(self.gain_Q, dtype=float)
        self.gain_R = np.asarray(self.gain_R, dtype=float)
        if self.mode not in ("tube", "nominal"):
            raise ValueError("mode must be 'tube' or 'nominal'")


@dataclass
class TubeSolution:
    x_nom: np.ndarray
    u_nom: np.ndarray
    K: np.ndarray
    z_hrep: HRep
    z_vertices: np.ndarray
    applied: ControlInput
    qp_status: str
    qp_iterations: int
    u_limits: tuple
    clamped: bool = False


def compute_gain(A, B, Q, R, tol=1e-9, max_iter=500):
    """Stabilizing feedback u = K x from the discrete Riccati recursion.

    Iterates the value recursion from P = Q to a fixed point and checks
    the closed-loop spectral radius; raises UnstabilizablePair when the
    recursion diverges or the loop is not contractive.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = Q.copy()
    converged = False
    for _ in range(max_iter):
        BtP = B.T @ P
        gain = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ gain
        P_next = 0.5 * (P_next + P_next.T)
        if np.max(np.abs(P_next - P)) <= tol * max(1.0, np.max(np.abs(P))):
            P = P_next
            converged = True
            break
        P = P_next
        if not np.all(np.isfinite(P)) or np.max(np.abs(P)) > 1e14:
            raise UnstabilizablePair("Riccati recursion diverged")
    if not converged:
        raise UnstabilizablePair("Riccati recursion did not converge")
    BtP = B.T @ P
    K = -np.linalg.solve(R + BtP @ B, BtP @ A)
    rho = np.max(np.abs(np.linalg.eigvals(A + B @ K)))
    if rho >= 1.0 - 1e-9:
        raise UnstabilizablePair(f"closed-loop spectral radius {rho:.6f} >= 1")
    return K


def _velocity_heading_box(cfg, theta_ref):
    # 2-D set over (v, theta); concat pads it onto the position plane
    normals = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    offsets = np.array(
        [
            cfg.v_bounds[1],
            -cfg.v_bounds[0],
            theta_ref + cfg.theta_halfwidth,
            -(theta_ref - cfg.theta_halfwidth),
        ]
    )
    return HRep(normals, offsets)


def input_box(cfg):
    normals = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    offsets = np.array([cfg.a_max, cfg.a_max, cfg.delta_max, cfg.delta_max])
    return HRep(normals, offsets)


def assemble_constraints(region_polygon, cfg, z_vertices, K, theta_ref):
    """Tightened nominal-state and nominal-input halfspace sets.

    X = region x V x Y is tightened by the support of Z; U by the support
    of K Z.  Either result may be empty; callers detect that via
    HRep.is_empty or the QP status.
    """
    X = concat(region_polygon, _velocity_heading_box(cfg, theta_ref))
    x_tight = pontryagin_diff(X, z_vertices)
    kz = z_vertices.vertices @ np.asarray(K).T
    u_tight = pontryagin_diff(input_box(cfg), convex_hull_2d(kz))
    return x_tight, u_tight


def _pair_box_empty(h):
    """Cheap emptiness test for sets built from opposing normal pairs."""
    for i in range(len(h)):
        for j in range(i + 1, len(h)):
            if np.allclose(h.normals[i], -h.normals[j], atol=1e-12):
                if h.offsets[i] + h.offsets[j] < -1e-12:
                    return True
    return False


def clamp_to_region(point, region_polygon, tol=1e-9):
    """Closest point inside a polygon (tiny QP); identity when inside."""
    if contains(region_polygon, point, tol):
        return np.asarray(point, dtype=float)
    prob = qpmod.QuadraticProgram(
        H=2.0 * np.eye(2),
        g=-2.0 * np.asarray(point, dtype=float),
        A_in=region_polygon.normals,
        b_in=region_polygon.offsets,
    )
    sol = qpmod.solve(prob, tol=1e-8)
    if sol.status != qpmod.QpStatus.OPTIMAL:
        raise InfeasibleMpc("free-space region is empty")
    return sol.z


def resample_reference(plan, t_offset, N, dt, path):
    """Reference states on the MPC grid from a planned candidate.

    Linear interpolation of the planner's (s, d) samples onto the control
    grid, converted through the path; headings are unwrapped and velocity
    taken from the interpolated longitudinal speed.
    """
    ts = t_offset + dt * np.arange(N + 1)
    ts = np.clip(ts, 0.0, plan.times[-1])
    s = np.interp(ts, plan.times, plan.s)
    d = np.interp(ts, plan.times, plan.d)
    s_dot = np.interp(ts, plan.times, plan.s_dot)
    d_dot = np.interp(ts, plan.times, plan.d_dot)
    s_clip = np.clip(s, 0.0, path.length)
    pts = path.to_cartesian(s_clip, d)
    path_heading = path.heading(s_clip)
    kappa = path.curvature(s_clip)
    heading = path_heading + np.arctan2(d_dot, np.maximum(s_dot * (1 - kappa * d), 1e-6))
    heading = np.unwrap(heading)
    v = np.hypot(s_dot * (1 - kappa * d), d_dot)
    refs = np.stack([pts[:, 0], pts[:, 1], v, heading], axis=1)
    return refs


def solve_step(
    x,
    refs,
    region_polygon,
    w_vertices,
    cfg,
    params,
    w_center=None,
    warm=None,
):
    """One tube (or nominal) MPC solve.

    refs is an (N+1, 4) array of reference states on the cfg.dt grid with
    unwrapped headings; w_vertices a centered 4-D disturbance V-rep;
    w_center an optional known disturbance mean folded into the dynamics.
    Raises InfeasibleMpc when the tightened problem has no solution.
    """
    refs = np.asarray(refs, dtype=float)
    N = cfg.N
    if refs.shape[0] < N + 1:
        raise ValueError(f"need at least {N + 1} reference points")
    refs = refs[: N + 1].copy()
    if w_center is None:
        w_center = np.zeros(4)
    step_params = VehicleParams(
        L=params.L, dt=cfg.dt, a_max=cfg.a_max, delta_max=cfg.delta_max, v_min=params.v_min
    )

    # align the measured heading with the reference branch
    x_vec = x.as_array()
    x_vec[3] = refs[0, 3] + wrap_angle(x_vec[3] - refs[0, 3])

    # clamp reference positions into the free-space region
    for k in range(N + 1):
        refs[k, :2] = clamp_to_region(refs[k, :2], region_polygon)

    nominal = cfg.mode == "nominal"
    gain_state = VehicleState(
        refs[0, 0], refs[0, 1], max(refs[0, 2], cfg.gain_v_floor), refs[0, 3]
    )
    A0, B0, _ = linearize(gain_state, ControlInput(0.0, 0.0), step_params)
    if nominal:
        K = np.zeros((2, 4))
        z_cloud = VRep(np.zeros((1, 4)), degenerate=True)
        z_hrep = HRep(np.zeros((0, 4)), np.zeros(0), dim=4)
    else:
        K = compute_gain(A0, B0, cfg.gain_Q, cfg.gain_R_scale * cfg.gain_R)
        z_cloud = disturbance_sum_vertices(A0 + B0 @ K, w_vertices, cfg.z_terms)
        z_hrep = concat(
            _plane_hrep(z_cloud.vertices[:, :2]), _plane_hrep(z_cloud.vertices[:, 2:])
        )

    x_set, u_set = assemble_constraints(region_polygon, cfg, z_cloud, K, refs[0, 3])
    if _pair_box_empty(u_set) or _pair_box_empty(x_set):
        raise InfeasibleMpc("tightened constraint set is empty")

    n_z = 4 * (N + 1) + 2 * N
    H = np.zeros((n_z, n_z))
    g = np.zeros(n_z)
    for k in range(N + 1):
        Wk = cfg.Q_f if k == N else cfg.Q
        sl = slice(4 * k, 4 * k + 4)
        H[sl, sl] = 2.0 * Wk
        g[sl] = -2.0 * Wk @ refs[k]
    for k in range(N):
        sl = slice(4 * (N + 1) + 2 * k, 4 * (N + 1) + 2 * k + 2)
        H[sl, sl] = 2.0 * cfg.R

    # dynamics equalities along the reference (LTV)
    m_eq = 4 * N + (4 if nominal else 0)
    A_eq = np.zeros((m_eq, n_z))
    b_eq = np.zeros(m_eq)
    for k in range(N):
        xk = VehicleState.from_array(refs[k])
        Ak, Bk, ck = linearize(xk, ControlInput(0.0, 0.0), step_params)
        ck = ck + w_center
        r = slice(4 * k, 4 * k + 4)
        A_eq[r, 4 * k: 4 * k + 4] = Ak
        A_eq[r, 4 * (k + 1): 4 * (k + 1) + 4] = -np.eye(4)
        A_eq[r, 4 * (N + 1) + 2 * k: 4 * (N + 1) + 2 * k + 2] = Bk
        b_eq[r] = -ck
    if nominal:
        A_eq[4 * N: 4 * N + 4, 0:4] = np.eye(4)
        b_eq[4 * N: 4 * N + 4] = x_vec

    rows_x = len(x_set) * (N + 1)
    rows_u = len(u_set) * N
    rows_z = 0 if nominal else len(z_hrep)
    A_in = np.zeros((rows_x + rows_u + rows_z, n_z))
    b_in = np.zeros(rows_x + rows_u + rows_z)
    r = 0
    for k in range(N + 1):
        A_in[r: r + len(x_set), 4 * k: 4 * k + 4] = x_set.normals
        b_in[r: r + len(x_set)] = x_set.offsets
        r += len(x_set)
    for k in range(N):
        A_in[r: r + len(u_set), 4 * (N + 1) + 2 * k: 4 * (N + 1) + 2 * k + 2] = u_set.normals
        b_in[r: r + len(u_set)] = u_set.offsets
        r += len(u_set)
    if not nominal:
        # x - x_nom0 in Z  <=>  -A_z x_nom0 <= b_z - A_z x
        A_in[r:, 0:4] = -z_hrep.normals
        b_in[r:] = z_hrep.offsets - z_hrep.normals @ x_vec

    prob = qpmod.QuadraticProgram(H=H, g=g, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in)
    sol = qpmod.solve(prob, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter, warm=warm)
    if sol.status != qpmod.QpStatus.OPTIMAL:
        raise InfeasibleMpc(f"QP terminated with status {sol.status.value}")

    x_nom = sol.z[: 4 * (N + 1)].reshape(N + 1, 4)
    u_nom = sol.z[4 * (N + 1):].reshape(N, 2)
    raw = u_nom[0] + K @ (x_vec - x_nom[0])
    a = float(np.clip(raw[0], -cfg.a_max, cfg.a_max))
    d = float(np.clip(raw[1], -cfg.delta_max, cfg.delta_max))
    clamped = (a != raw[0]) or (d != raw[1])
    return TubeSolution(
        x_nom=x_nom,
        u_nom=u_nom,
        K=K,
        z_hrep=z_hrep,
        z_vertices=z_cloud.vertices,
        applied=ControlInput(a, d),
        qp_status=sol.status.value,
        qp_iterations=sol.iterations,
        u_limits=(cfg.a_max, cfg.delta_max),
        clamped=clamped,
    )


def ancillary(x, sol):
    """Feedback law u = u_nom0 + K (x - x_nom0), clamped to the input box."""
    raw = sol.u_nom[0] + sol.K @ (x.as_array() - sol.x_nom[0])
    a_max, d_max = sol.u_limits
    return ControlInput(
        float(np.clip(raw[0], -a_max, a_max)),
        float(np.clip(raw[1], -d_max, d_max)),
    )


def _tube_diff(x, x_nom):
    diff = x.as_array() - x_nom
    diff[3] = wrap_angle(diff[3])
    return diff


def tube_contains(sol, x, tol=1e-6):
    """Whether x lies in x_nom0 + Z (trivially true in nominal mode)."""
    if len(sol.z_hrep) == 0:
        return True
    return contains(sol.z_hrep, _tube_diff(x, sol.x_nom[0]), tol)


def tube_contains_next(sol, x_next, tol=1e-6):
    """Whether the next measured state lies in x_nom1 + Z."""
    if len(sol.z_hrep) == 0:
        return True
    return contains(sol.z_hrep, _tube_diff(x_next, sol.x_nom[1]), tol)

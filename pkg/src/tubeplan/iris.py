"""Convex obstacle-free region growth around a seed point (2-D).

Alternates two steps until the inscribed-ellipse area stalls: (1) for
each obstacle, a hyperplane tangent to the obstacle at its closest point
in the ellipse metric, which separates the entire (convex) obstacle from
the ellipse; (2) the maximum-area ellipse inscribed in the resulting
polytope, found by barrier ascent with damped Newton refinement on the
(Cholesky factor, center) parameterization.  No semidefinite-programming
dependency is needed at 2-D scale.
"""

from dataclasses import dataclass

import numpy as np

from .polytope import (
    DegeneratePolytope,
    EmptyPolytope,
    HRep,
    UnboundedPolytope,
    _normals_bound_plane,
    chebyshev_center,
    contains,
    convex_hull_2d,
)

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is expected to be present
    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        return wrap if not args else args[0]


class SeedInsideObstacle(Exception):
    pass


@dataclass(frozen=True)
class Ellipse:
    """{C u + center : ||u|| <= 1} with C symmetric positive definite."""

    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).ravel())
        object.__setattr__(self, "shape", np.asarray(self.shape, dtype=float))
        eigs = np.linalg.eigvalsh(self.shape)
        if eigs[0] <= 1e-9:
            raise ValueError("ellipse shape matrix must be positive definite")

    @property
    def area(self):
        return float(np.pi * np.linalg.det(self.shape))

    def contains(self, point, tol=1e-9):
        u = np.linalg.solve(self.shape, np.asarray(point, dtype=float) - self.center)
        return bool(u @ u <= 1.0 + tol)


@dataclass
class ConvexRegion:
    polygon: HRep
    ellipse: Ellipse
    iterations: int
    required_contained: list


def _closest_point_on_hull(verts, point=None):
    """Closest point to the origin (or to `point`) on a convex polygon
    boundary, plus whether the query point lies strictly inside."""
    p = np.zeros(2) if point is None else np.asarray(point, dtype=float)
    hull = convex_hull_2d(verts)
    v = hull.vertices
    if len(v) == 1:
        return v[0], False
    edges = np.roll(v, -1, axis=0) - v
    if len(v) >= 3:
        rel = p[None, :] - v
        crosses = edges[:, 0] * rel[:, 1] - edges[:, 1] * rel[:, 0]
        if np.all(crosses > 1e-12):
            return p.copy(), True
    best, best_d2 = None, np.inf
    n_edges = len(v) if len(v) >= 3 else len(v) - 1
    for i in range(n_edges):
        a, e = v[i], edges[i]
        ee = float(e @ e)
        t = 0.0 if ee < 1e-18 else float(np.clip((p - a) @ e / ee, 0.0, 1.0))
        cand = a + t * e
        d2 = float(np.sum((cand - p) ** 2))
        if d2 < best_d2:
            best, best_d2 = cand, d2
    return best, False


def _tangent_plane(c_inv, center, obstacle_verts):
    """Separating halfspace a.x <= b from the closest obstacle point in the
    ellipse metric; returns (a, b, metric_distance)."""
    ball_verts = (obstacle_verts - center) @ c_inv.T
    closest, inside = _closest_point_on_hull(ball_verts)
    dist = float(np.linalg.norm(closest))
    if inside or dist < 1e-12:
        raise SeedInsideObstacle("ellipse center inside an obstacle")
    a0 = c_inv.T @ closest
    b0 = dist * dist + a0 @ center
    norm = np.linalg.norm(a0)
    return a0 / norm, float(b0 / norm), dist


def separating_hyperplanes(ellipse, obstacles, bounds, keep_point=None):
    """Hyperplanes separating the ellipse from every obstacle, plus bounds.

    Obstacles are processed nearest-first in the ellipse metric and skipped
    when an already-added plane leaves them entirely infeasible.  When
    keep_point is given, any plane that would cut it off is rebuilt from the
    closest obstacle point to keep_point instead, so keep_point stays
    strictly feasible.
    """
    c_inv = np.linalg.inv(ellipse.shape)
    planes = []
    ranked = []
    for obs in obstacles:
        ball_verts = (obs.vertices - ellipse.center) @ c_inv.T
        closest, inside = _closest_point_on_hull(ball_verts)
        if inside:
            raise SeedInsideObstacle("ellipse center inside an obstacle")
        ranked.append((float(np.linalg.norm(closest)), obs))
    ranked.sort(key=lambda pair: pair[0])
    for _, obs in ranked:
        separated = any(
            np.min(obs.vertices @ a) >= b - 1e-9 for a, b in planes
        )
        if separated:
            continue
        a, b, _ = _tangent_plane(c_inv, ellipse.center, obs.vertices)
        if keep_point is not None and float(a @ keep_point) >= b - 1e-9:
            p_closest, inside = _closest_point_on_hull(obs.vertices, keep_point)
            if inside:
                raise SeedInsideObstacle("keep point inside an obstacle")
            normal = p_closest - np.asarray(keep_point, dtype=float)
            nn = np.linalg.norm(normal)
            if nn < 1e-12:
                raise SeedInsideObstacle("keep point touches an obstacle")
            a = normal / nn
            b = float(a @ p_closest)
        planes.append((a, b))
    normals = [a for a, _ in planes] + list(bounds.normals)
    offsets = [b for _, b in planes] + list(bounds.offsets)
    return HRep(np.array(normals), np.array(offsets), dim=2)


@njit(cache=True)
def _barrier_core(params, normals, offsets, mu):
    """Barrier value and gradient for max log det C s.t. ||C a_i|| <= slack_i.

    params = (l11, l21, l22, dx, dy) with C = L L^T.  Returns F = -inf and a
    zero gradient at infeasible iterates.
    """
    l11, l21, l22, dx, dy = params[0], params[1], params[2], params[3], params[4]
    grad = np.zeros(5)
    if l11 <= 0.0 or l22 <= 0.0:
        return -np.inf, grad
    c11 = l11 * l11
    c12 = l11 * l21
    c22 = l21 * l21 + l22 * l22
    F = np.log(l11) + np.log(l22)
    g11 = 1.0 / l11
    g22 = 1.0 / l22
    g21 = 0.0
    gdx = 0.0
    gdy = 0.0
    for i in range(normals.shape[0]):
        a1 = normals[i, 0]
        a2 = normals[i, 1]
        v1 = c11 * a1 + c12 * a2
        v2 = c12 * a1 + c22 * a2
        n_i = np.sqrt(v1 * v1 + v2 * v2)
        g_i = offsets[i] - a1 * dx - a2 * dy - n_i
        if g_i <= 0.0:
            return -np.inf, grad
        F += mu * np.log(g_i)
        inv_g = mu / g_i
        if n_i > 1e-300:
            h1 = v1 / n_i
            h2 = v2 / n_i
            u1 = l11 * a1 + l21 * a2
            u2 = l22 * a2
            w1 = l11 * h1 + l21 * h2
            w2 = l22 * h2
            g11 -= inv_g * (h1 * u1 + a1 * w1)
            g21 -= inv_g * (h2 * u1 + a1 * w2)
            g22 -= inv_g * (h2 * u2 + a2 * w2)
        gdx -= inv_g * a1
        gdy -= inv_g * a2
    grad[0] = g11
    grad[1] = g21
    grad[2] = g22
    grad[3] = gdx
    grad[4] = gdy
    return F, grad


def _barrier_value_grad(params, normals, offsets, mu):
    return _barrier_core(np.asarray(params, dtype=float), normals, offsets, mu)


def _feasible(params, normals, offsets):
    F, _ = _barrier_value_grad(params, normals, offsets, 1.0)
    return bool(np.isfinite(F))


def _ascent_stage(params, normals, offsets, mu, scale, max_steps):
    F, grad = _barrier_value_grad(params, normals, offsets, mu)
    for _ in range(max_steps):
        gnorm = float(np.linalg.norm(grad))
        if gnorm < 1e-10:
            break
        direction = grad / gnorm
        alpha = 0.2 * scale
        improved = False
        for _ in range(25):
            trial = params + alpha * direction
            Ft, gt = _barrier_value_grad(trial, normals, offsets, mu)
            if Ft > F:
                params, F, grad = trial, Ft, gt
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
    return params


def _newton_stage(params, normals, offsets, mu, max_newton, fd=1e-6):
    """Damped Newton; Hessian from central differences of the gradient."""
    for _ in range(max_newton):
        F, grad = _barrier_value_grad(params, normals, offsets, mu)
        if float(np.linalg.norm(grad)) < 1e-9:
            break
        H = np.zeros((5, 5))
        ok = True
        for i in range(5):
            pp = params.copy(); pp[i] += fd
            pm = params.copy(); pm[i] -= fd
            Fp, gp = _barrier_value_grad(pp, normals, offsets, mu)
            Fm, gm = _barrier_value_grad(pm, normals, offsets, mu)
            if not (np.isfinite(Fp) and np.isfinite(Fm)):
                ok = False
                break
            H[i] = (gp - gm) / (2 * fd)
        if not ok:
            break
        H = 0.5 * (H + H.T)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break
        alpha, applied = 1.0, False
        for _ in range(25):
            trial = params - alpha * step
            Ft, _ = _barrier_value_grad(trial, normals, offsets, mu)
            if Ft > F:
                params = trial
                applied = True
                break
            alpha *= 0.5
        if not applied or float(np.linalg.norm(alpha * step)) < 1e-12:
            break
    return params


def inscribed_ellipse(p, mu_schedule=(1e-2, 1e-4), max_iter=10, init=None):
    """Maximum-area ellipse inscribed in a bounded, full-dimensional H-rep.

    Determinant maximization with log-barrier stages: a few gradient-ascent
    steps to enter the basin, then damped Newton per barrier weight.
    ``init`` may carry a strictly feasible Ellipse to warm-start from,
    skipping the Chebyshev initialization.  Accurate to well under 1% of
    the optimal area on verification polygons.
    """
    if len(p) == 0 or not _normals_bound_plane(p.normals):
        raise UnboundedPolytope("inscribed ellipse needs a bounded polytope")
    normals = np.ascontiguousarray(p.normals)
    offsets = np.ascontiguousarray(p.offsets)
    params = None
    scale = None
    if init is not None:
        try:
            L0 = np.linalg.cholesky(0.81 * init.shape)
            cand = np.array([L0[0, 0], L0[1, 0], L0[1, 1], init.center[0], init.center[1]])
            if _feasible(cand, normals, offsets):
                params = cand
                scale = max(float(np.sqrt(abs(np.linalg.det(init.shape)))), 1e-6)
        except np.linalg.LinAlgError:
            params = None
    if params is None:
        center, radius, status = chebyshev_center(p)
        if status == "unbounded":
            raise UnboundedPolytope("inscribed ellipse needs a bounded polytope")
        if radius < 1e-12:
            if radius < -1e-12:
                raise EmptyPolytope("polytope is empty")
            raise DegeneratePolytope("polytope has no interior")
        r0 = 0.8 * radius
        params = np.array([np.sqrt(r0), 0.0, np.sqrt(r0), center[0], center[1]])
        scale = max(radius, 1e-6)
    for mu in mu_schedule:
        params = _ascent_stage(params, normals, offsets, mu, scale, max_steps=max_iter)
        params = _newton_stage(params, normals, offsets, mu, max_newton=max_iter)
    l11, l21, l22, dx, dy = params
    L = np.array([[l11, 0.0], [l21, l22]])
    return Ellipse(center=np.array([dx, dy]), shape=L @ L.T)


def grow_region(
    seed,
    required,
    obstacles,
    bounds,
    area_tol=0.02,
    max_iterations=10,
    mu_schedule=(1e-2, 1e-4),
    max_iter=10,
    init_ellipse=None,
):
    """Grow a convex obstacle-free polygon around a seed point.

    Iterates separating hyperplanes and inscribed-ellipse steps until the
    ellipse area grows by less than area_tol (relative) or the iteration
    cap is reached.  Required points that end up outside the region are
    reported, not forced.  init_ellipse warm-starts the alternation from a
    previous cycle's result.
    """
    seed = np.asarray(seed, dtype=float).ravel()
    warm = init_ellipse is not None
    ellipse = init_ellipse if warm else Ellipse(center=seed, shape=1e-3 * np.eye(2))
    polygon = bounds
    prev_area = ellipse.area
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        try:
            polygon = separating_hyperplanes(ellipse, obstacles, bounds, keep_point=seed)
        except SeedInsideObstacle:
            if not warm:
                raise
            # stale warm-start ellipse swallowed by a moving obstacle
            warm = False
            ellipse = Ellipse(center=seed, shape=1e-3 * np.eye(2))
            polygon = separating_hyperplanes(ellipse, obstacles, bounds, keep_point=seed)
        ellipse = inscribed_ellipse(
            polygon,
            mu_schedule=mu_schedule,
            max_iter=max_iter,
            init=ellipse if (warm or iterations > 1) else None,
        )
        if ellipse.area - prev_area < area_tol * max(prev_area, 1e-12):
            break
        prev_area = ellipse.area
    flags = [contains(polygon, pt, tol=1e-9) for pt in required]
    return ConvexRegion(
        polygon=polygon,
        ellipse=ellipse,
        iterations=iterations,
        required_contained=flags,
    )

"""Convex polytope algebra in 2-D and product spaces.

Polytopes come in two dual descriptions: vertices (V-rep) and halfspaces
(H-rep).  All 2-D conversions go through a monotone-chain convex hull.
4-D hulls are never computed; the only route from a 4-D vertex cloud to an
H-rep is the projection-based construction in :func:`compute_z_hrep`,
which over-approximates the set by the product of its (px, py) and (v, theta)
plane projections.
"""

import numpy as np
from scipy.optimize import linprog

HULL_COLLINEAR_TOL = 1e-12


class PolytopeError(Exception):
    pass


class DimensionMismatch(PolytopeError):
    pass


class DegeneratePolytope(PolytopeError):
    pass


class EmptyPolytope(PolytopeError):
    pass


class UnboundedPolytope(PolytopeError):
    pass


class IndexOutOfRange(PolytopeError):
    pass


class UnstableGain(PolytopeError):
    pass


class VRep:
    """Vertex representation: the convex hull of a finite point set.

    ``degenerate`` marks sets that are not full-dimensional in their
    ambient space (a point or a segment in 2-D).
    """

    def __init__(self, vertices, degenerate=False):
        v = np.atleast_2d(np.asarray(vertices, dtype=float))
        if v.size == 0:
            raise ValueError("VRep needs at least one vertex")
        self.vertices = v
        self.degenerate = bool(degenerate)

    @property
    def dim(self):
        return self.vertices.shape[1]

    def __len__(self):
        return self.vertices.shape[0]

    def to_dict(self):
        return {"dim": self.dim, "vertices": self.vertices.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["vertices"])

    def __repr__(self):
        return f"VRep({len(self)} vertices, dim={self.dim})"


class HRep:
    """Halfspace representation: the set {x : a_i . x <= b_i for all i}.

    Normals are unit vectors (enforced at construction, tolerance 1e-9).
    Zero halfspaces is legal and denotes the whole space.
    """

    def __init__(self, normals, offsets, dim=None):
        a = np.asarray(normals, dtype=float)
        b = np.asarray(offsets, dtype=float).ravel()
        if a.size == 0:
            if dim is None:
                raise ValueError("empty HRep needs an explicit dimension")
            a = np.zeros((0, dim))
            b = np.zeros(0)
        else:
            a = np.atleast_2d(a)
            if a.shape[0] != b.shape[0]:
                raise DimensionMismatch("normals/offsets row mismatch")
            norms = np.linalg.norm(a, axis=1)
            if np.any(norms < 1e-14):
                raise ValueError("zero normal in HRep")
            if np.any(np.abs(norms - 1.0) > 1e-9):
                a = a / norms[:, None]
                b = b / norms
        self.normals = a
        self.offsets = b

    @property
    def dim(self):
        return self.normals.shape[1]

    def __len__(self):
        return self.normals.shape[0]

    def to_dict(self):
        return {
            "dim": self.dim,
            "halfspaces": [
                {"a": a.tolist(), "b": float(b)}
                for a, b in zip(self.normals, self.offsets)
            ],
        }

    @classmethod
    def from_dict(cls, d):
        hs = d["halfspaces"]
        if not hs:
            return cls(np.zeros((0, d["dim"])), np.zeros(0), dim=d["dim"])
        return cls([h["a"] for h in hs], [h["b"] for h in hs])

    def is_empty(self, min_radius=1e-12):
        """True when no point satisfies all halfspaces (Chebyshev radius < min_radius)."""
        if len(self) == 0:
            return False
        _, r, status = chebyshev_center(self)
        if status == "unbounded":
            return False
        return r < min_radius

    def __repr__(self):
        return f"HRep({len(self)} halfspaces, dim={self.dim})"


class Box:
    """Axis-aligned box given by componentwise lower/upper corners."""

    def __init__(self, lower, upper):
        lo = np.asarray(lower, dtype=float).ravel()
        hi = np.asarray(upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise DimensionMismatch("box corner dimensions differ")
        if np.any(lo > hi + 1e-12):
            raise ValueError("box lower corner exceeds upper corner")
        self.lower = lo
        self.upper = hi

    @property
    def dim(self):
        return self.lower.shape[0]

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def half_widths(self):
        return 0.5 * (self.upper - self.lower)

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def vertices(self):
        """All 2^d corners as a VRep, in binary counting order."""
        d = self.dim
        pts = np.empty((2 ** d, d))
        for k in range(2 ** d):
            for i in range(d):
                pts[k, i] = self.upper[i] if (k >> i) & 1 else self.lower[i]
        return VRep(pts, degenerate=bool(np.any(self.upper - self.lower < 1e-15)))


def _hull_indices_2d(pts):
    """Indices of the counterclockwise convex hull of 2-D points.

    Monotone chain with a strict-left-turn predicate; collinear interior
    points are dropped (cross-product tolerance HULL_COLLINEAR_TOL).
    """
    pts = np.asarray(pts, dtype=float)
    n = pts.shape[0]
    if n == 1:
        return [0]
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    # drop exact duplicates, keeping the first occurrence in sorted order
    uniq = [order[0]]
    for idx in order[1:]:
        if not np.array_equal(pts[idx], pts[uniq[-1]]):
            uniq.append(idx)
    if len(uniq) == 1:
        return [uniq[0]]

    def cross(o, a, b):
        return (pts[a, 0] - pts[o, 0]) * (pts[b, 1] - pts[o, 1]) - (
            pts[a, 1] - pts[o, 1]
        ) * (pts[b, 0] - pts[o, 0])

    lower = []
    for idx in uniq:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], idx) <= HULL_COLLINEAR_TOL:
            lower.pop()
        lower.append(idx)
    upper = []
    for idx in reversed(uniq):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], idx) <= HULL_COLLINEAR_TOL:
            upper.pop()
        upper.append(idx)
    hull = lower[:-1] + upper[:-1]
    if len(hull) == 0:  # all collinear: keep the two extreme points
        hull = [uniq[0], uniq[-1]]
    return hull


def convex_hull_2d(points):
    """Convex hull of 2-D points as a VRep with CCW-ordered extreme vertices.

    Degenerate inputs (single point, collinear set) yield a point or
    segment VRep with the ``degenerate`` flag set.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != 2:
        raise DimensionMismatch("convex_hull_2d expects 2-D points")
    idx = _hull_indices_2d(pts)
    return VRep(pts[idx], degenerate=len(idx) < 3)


def polygon_area(vertices):
    """Shoelace area of a CCW-ordered polygon."""
    v = np.asarray(vertices, dtype=float)
    if v.shape[0] < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def v_to_h(p):
    """Convert a full-dimensional 2-D VRep to its exact H-rep.

    Each hull edge contributes one outward halfspace.  Raises
    DegeneratePolytope when the hull has zero area.
    """
    if p.dim != 2:
        raise DimensionMismatch("v_to_h handles 2-D polytopes only")
    hull = convex_hull_2d(p.vertices)
    if hull.degenerate or abs(polygon_area(hull.vertices)) < 1e-12:
        raise DegeneratePolytope("polytope has zero area")
    v = hull.vertices
    nxt = np.roll(v, -1, axis=0)
    edges = nxt - v
    normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    offsets = np.sum(normals * v, axis=1)
    return HRep(normals, offsets)


def chebyshev_center(p):
    """Largest inscribed ball of an H-rep.

    Returns (center, radius, status).  The radius may be negative for an
    empty set (depth of infeasibility); status is 'ok' or 'unbounded'.
    """
    m, d = len(p), p.dim
    if m == 0:
        return np.zeros(d), np.inf, "unbounded"
    # variables: (x, r); maximize r  s.t.  a_i . x + r <= b_i
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A_ub = np.hstack([p.normals, np.ones((m, 1))])
    res = linprog(c, A_ub=A_ub, b_ub=p.offsets, bounds=[(None, None)] * (d + 1), method="highs")
    if res.status == 3:
        return np.zeros(d), np.inf, "unbounded"
    if not res.success:
        raise PolytopeError(f"Chebyshev LP failed: {res.message}")
    return res.x[:d], float(res.x[d]), "ok"


def _normals_bound_plane(normals, tol=1e-12):
    """True when 2-D unit normals positively span the plane (bounded H-rep)."""
    ang = np.sort(np.arctan2(normals[:, 1], normals[:, 0]))
    gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
    return bool(np.max(gaps) < np.pi - tol)


def h_to_v_2d(p):
    """Enumerate the vertices of a bounded, non-empty 2-D H-rep.

    Intersects all halfspace-boundary pairs and keeps the points feasible
    for every constraint, then hulls them.  Raises EmptyPolytope or
    UnboundedPolytope as appropriate.
    """
    if p.dim != 2:
        raise DimensionMismatch("h_to_v_2d handles 2-D polytopes only")
    _, r, status = chebyshev_center(p)
    if status != "unbounded" and r < -1e-12:
        raise EmptyPolytope("contradictory halfspaces")
    if status == "unbounded" or not _normals_bound_plane(p.normals):
        raise UnboundedPolytope("halfspace normals do not bound the plane")
    a, b = p.normals, p.offsets
    m = len(p)
    pts = []
    for i in range(m):
        for j in range(i + 1, m):
            det = a[i, 0] * a[j, 1] - a[i, 1] * a[j, 0]
            if abs(det) < 1e-12:
                continue
            x = np.array(
                [
                    (b[i] * a[j, 1] - b[j] * a[i, 1]) / det,
                    (a[i, 0] * b[j] - a[j, 0] * b[i]) / det,
                ]
            )
            if np.all(a @ x <= b + 1e-9):
                pts.append(x)
    if not pts:
        raise EmptyPolytope("no feasible basic point found")
    hull = convex_hull_2d(np.array(pts))
    if hull.degenerate:
        raise DegeneratePolytope("H-rep describes a lower-dimensional set")
    return hull


def minkowski_sum(p, q):
    """Minkowski sum of two V-reps (pairwise vertex sums).

    In 2-D the result is hull-normalized; in higher dimensions the raw
    vertex cloud is returned (4-D hulls are deliberately never computed).
    """
    if p.dim != q.dim:
        raise DimensionMismatch("operand dimensions differ")
    sums = (p.vertices[:, None, :] + q.vertices[None, :, :]).reshape(-1, p.dim)
    if p.dim == 2:
        return convex_hull_2d(sums)
    return VRep(sums, degenerate=p.degenerate and q.degenerate)


def support(p, direction):
    """Support function of a V-rep: max over vertices of a . v.

    The direction is normalized internally and must be nonzero.
    """
    a = np.asarray(direction, dtype=float).ravel()
    n = np.linalg.norm(a)
    if n < 1e-15:
        raise ValueError("support direction must be nonzero")
    return float(np.max(p.vertices @ (a / n)))


def pontryagin_diff(p, q):
    """Pontryagin difference of an H-rep by a bounded V-rep.

    Each halfspace offset is tightened by the support of q along the
    halfspace normal.  The result may be empty; callers detect that via
    HRep.is_empty rather than an exception.
    """
    if p.dim != q.dim:
        raise DimensionMismatch("operand dimensions differ")
    if len(p) == 0:
        return HRep(np.zeros((0, p.dim)), np.zeros(0), dim=p.dim)
    shrink = np.max(p.normals @ q.vertices.T, axis=1)
    return HRep(p.normals, p.offsets - shrink)


def project(p, indices):
    """Project a V-rep onto the given zero-based coordinate indices."""
    idx = tuple(indices)
    if len(idx) == 0:
        raise IndexOutOfRange("projection index set is empty")
    for i in idx:
        if not (0 <= i < p.dim):
            raise IndexOutOfRange(f"index {i} outside 0..{p.dim - 1}")
    dropped = p.vertices[:, idx]
    if len(idx) == 2:
        return convex_hull_2d(dropped)
    if len(idx) == 1:
        lo, hi = float(np.min(dropped)), float(np.max(dropped))
        if hi - lo < 1e-15:
            return VRep([[lo]], degenerate=True)
        return VRep([[lo], [hi]], degenerate=True)
    return VRep(dropped)


def concat(p, q):
    """Cartesian product of two H-reps via zero-padded halfspaces."""
    dp, dq = p.dim, q.dim
    a = np.zeros((len(p) + len(q), dp + dq))
    if len(p):
        a[: len(p), :dp] = p.normals
    if len(q):
        a[len(p):, dp:] = q.normals
    b = np.concatenate([p.offsets, q.offsets])
    return HRep(a, b, dim=dp + dq)


def contains(p, x, tol=1e-9):
    """Membership test for an H-rep with slack tolerance."""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != p.dim:
        raise DimensionMismatch("point dimension differs from polytope")
    if len(p) == 0:
        return True
    return bool(np.all(p.normals @ x <= p.offsets + tol))


def _prune_by_plane_hulls(cloud):
    """Keep cloud points extreme in the (0,1) or (2,3) coordinate plane.

    The pruned cloud has exactly the same 2-D projection hulls as the
    full cloud, which is all the projection-based H-rep and the
    plane-aligned support queries need.
    """
    keep = set(_hull_indices_2d(cloud[:, :2]))
    keep.update(_hull_indices_2d(cloud[:, 2:]))
    idx = sorted(keep)
    return cloud[idx]


def disturbance_sum_vertices(a_k, w, n):
    """Vertex cloud of the truncated disturbance sum  sum_{i=0..n} A_k^i W.

    W is a 4-D V-rep containing the origin.  After each pairwise-sum stage
    the cloud is pruned to points extreme in one of the two coordinate-plane
    projections, which keeps the cloud small without changing either
    projection hull.  Raises UnstableGain when the spectral radius of A_k
    is not < 1.
    """
    a_k = np.asarray(a_k, dtype=float)
    if a_k.shape != (4, 4) or w.dim != 4:
        raise DimensionMismatch("disturbance sum expects a 4x4 map and 4-D W")
    rho = np.max(np.abs(np.linalg.eigvals(a_k)))
    if rho >= 1.0 - 1e-12:
        raise UnstableGain(f"spectral radius {rho:.6f} >= 1")
    bbox_lo = np.min(w.vertices, axis=0)
    bbox_hi = np.max(w.vertices, axis=0)
    if np.any(bbox_lo > 1e-9) or np.any(bbox_hi < -1e-9):
        raise ValueError("W must contain the origin")
    cloud = w.vertices.copy()
    term = w.vertices.copy()
    for _ in range(n):
        term = term @ a_k.T
        cloud = (cloud[:, None, :] + term[None, :, :]).reshape(-1, 4)
        cloud = _prune_by_plane_hulls(cloud)
    return VRep(cloud)


def _plane_hrep(points_2d):
    """H-rep of the hull of 2-D points, falling back to the bounding box
    for degenerate (flat) clouds so the result is always a valid superset."""
    hull = convex_hull_2d(points_2d)
    if not hull.degenerate:
        try:
            return v_to_h(hull)
        except DegeneratePolytope:
            pass
    lo = np.min(points_2d, axis=0)
    hi = np.max(points_2d, axis=0)
    normals = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    offsets = np.array([hi[0], -lo[0], hi[1], -lo[1]])
    return HRep(normals, offsets)


def compute_z_hrep(a_k, w, n=6):
    """Over-approximating H-rep of the truncated disturbance-invariant set.

    Builds the 4-D vertex cloud of sum_{i=0..n} A_k^i W, projects it onto
    the (px, py) and (v, theta) planes, converts each projection to an
    exact 2-D H-rep, and concatenates the two.  The result is the product
    of the projections and therefore contains every vertex of the sum.
    """
    cloud = disturbance_sum_vertices(a_k, w, n)
    h_xy = _plane_hrep(cloud.vertices[:, :2])
    h_vt = _plane_hrep(cloud.vertices[:, 2:])
    return concat(h_xy, h_vt)


# spec-facing alias used by callers that follow the published algorithm name
compute_Z_hrep = compute_z_hrep

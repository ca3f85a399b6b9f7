"""Dense convex QP solver: operator splitting with a polish step.

Solves   min 1/2 z'Hz + g'z   s.t.  A_eq z = b_eq,  A_in z <= b_in
with H symmetric PSD.  The splitting iteration follows the OSQP scheme
on the stacked form l <= Az <= u (equality rows have l = u), with
per-row penalties, periodic penalty adaptation, and a final active-set
polish solve.  Everything is dense numpy, single threaded, and
deterministic for fixed inputs.
"""

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve


class QpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"


class DimensionMismatch(Exception):
    pass


@dataclass
class QuadraticProgram:
    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None
    A_in: np.ndarray = None
    b_in: np.ndarray = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.g = np.asarray(self.g, dtype=float).ravel()
        n = self.g.shape[0]
        if self.H.shape != (n, n):
            raise DimensionMismatch("H shape inconsistent with g")
        if np.max(np.abs(self.H - self.H.T), initial=0.0) > 1e-9:
            raise ValueError("H must be symmetric (tolerance 1e-9)")
        self.H = 0.5 * (self.H + self.H.T)
        if self.A_eq is None:
            self.A_eq = np.zeros((0, n))
            self.b_eq = np.zeros(0)
        else:
            self.A_eq = np.atleast_2d(np.asarray(self.A_eq, dtype=float))
            self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        if self.A_in is None:
            self.A_in = np.zeros((0, n))
            self.b_in = np.zeros(0)
        else:
            self.A_in = np.atleast_2d(np.asarray(self.A_in, dtype=float))
            self.b_in = np.asarray(self.b_in, dtype=float).ravel()
        for A, b, name in ((self.A_eq, self.b_eq, "eq"), (self.A_in, self.b_in, "in")):
            if A.shape[0] != b.shape[0] or (A.size and A.shape[1] != n):
                raise DimensionMismatch(f"A_{name}/b_{name} dimensions inconsistent")

    @property
    def n(self):
        return self.g.shape[0]

    @property
    def m_eq(self):
        return self.A_eq.shape[0]

    @property
    def m_in(self):
        return self.A_in.shape[0]


@dataclass
class QpSolution:
    z: np.ndarray
    status: QpStatus
    iterations: int = 0
    primal_residual: float = np.inf
    dual_residual: float = np.inf
    duals_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    duals_in: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def objective(self, qp):
        return float(0.5 * self.z @ qp.H @ self.z + qp.g @ self.z)


def kkt_residuals(qp, z, y_eq, y_in):
    """(stationarity, primal, dual-feasibility, complementarity) inf-norms."""
    stat = qp.H @ z + qp.g
    if qp.m_eq:
        stat = stat + qp.A_eq.T @ y_eq
    if qp.m_in:
        stat = stat + qp.A_in.T @ y_in
    r_stat = float(np.max(np.abs(stat), initial=0.0))
    r_prim = 0.0
    if qp.m_eq:
        r_prim = max(r_prim, float(np.max(np.abs(qp.A_eq @ z - qp.b_eq))))
    if qp.m_in:
        r_prim = max(r_prim, float(np.max(qp.A_in @ z - qp.b_in, initial=0.0)))
    r_dualfeas = float(np.max(-y_in, initial=0.0))
    r_comp = 0.0
    if qp.m_in:
        r_comp = float(np.max(np.abs(y_in * (qp.A_in @ z - qp.b_in)), initial=0.0))
    return r_stat, r_prim, r_dualfeas, r_comp


def _regularized_h(H):
    n = H.shape[0]
    if n == 0:
        return H
    lam_min = float(np.min(np.linalg.eigvalsh(H)))
    if lam_min < 1e-12:
        return H + (1e-8 - min(lam_min, 0.0)) * np.eye(n)
    return H


def _polish(qp, H, z, y, m_eq):
    """Equality solve on the active set; returns (z, y_full) or None."""
    act = m_eq + np.flatnonzero(y[m_eq:] > 1e-8)
    rows = np.concatenate([np.arange(m_eq), act]).astype(int)
    A_full = np.vstack([qp.A_eq, qp.A_in])
    b_full = np.concatenate([qp.b_eq, qp.b_in])
    A_act = A_full[rows]
    b_act = b_full[rows]
    n, k = qp.n, len(rows)
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = H + 1e-10 * np.eye(n)
    kkt[:n, n:] = A_act.T
    kkt[n:, :n] = A_act
    rhs = np.concatenate([-qp.g, b_act])
    try:
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    except np.linalg.LinAlgError:
        return None
    z_p = sol[:n]
    y_p = np.zeros(qp.m_eq + qp.m_in)
    y_p[rows] = sol[n:]
    if qp.m_in and np.any(y_p[m_eq:] < -1e-7):
        return None
    return z_p, y_p


def solve(qp, tol=1e-6, max_iter=4000, warm=None):
    """Solve a QP; returns a QpSolution with status OPTIMAL / INFEASIBLE / MAX_ITER.

    warm, if given, is a (z0, y0) pair from a related problem of identical
    shape (warm starting within a run is deterministic).
    """
    n = qp.n
    H = _regularized_h(qp.H)
    m_eq, m_in = qp.m_eq, qp.m_in
    m = m_eq + m_in
    if m == 0:
        z = np.linalg.solve(H, -qp.g)
        return QpSolution(
            z,
            QpStatus.OPTIMAL,
            iterations=0,
            primal_residual=0.0,
            dual_residual=float(np.max(np.abs(H @ z + qp.g), initial=0.0)),
        )

    A = np.vstack([qp.A_eq, qp.A_in])
    u = np.concatenate([qp.b_eq, qp.b_in])
    l = np.concatenate([qp.b_eq, np.full(m_in, -np.inf)])

    sigma, alpha = 1e-6, 1.6
    rho_bar = 0.1
    rho = np.full(m, rho_bar)
    rho[:m_eq] = 1e3 * rho_bar

    def factor(rho_vec):
        kkt = np.zeros((n + m, n + m))
        kkt[:n, :n] = H + sigma * np.eye(n)
        kkt[:n, n:] = A.T
        kkt[n:, :n] = A
        kkt[n:, n:] = -np.diag(1.0 / rho_vec)
        return lu_factor(kkt)

    lu = factor(rho)

    if warm is not None:
        z = np.array(warm[0], dtype=float)
        y = np.array(warm[1], dtype=float)
        s = np.clip(A @ z, l, u)
    else:
        z = np.zeros(n)
        y = np.zeros(m)
        s = np.zeros(m)

    status = QpStatus.MAX_ITER
    it = 0
    for it in range(1, max_iter + 1):
        rhs = np.concatenate([sigma * z - qp.g, s - y / rho])
        xv = lu_solve(lu, rhs)
        z_t = xv[:n]
        s_t = s + (xv[n:] - y) / rho
        z_next = alpha * z_t + (1 - alpha) * z
        s_relax = alpha * s_t + (1 - alpha) * s
        s_next = np.clip(s_relax + y / rho, l, u)
        y_next = y + rho * (s_relax - s_next)
        dy = y_next - y
        z, s, y = z_next, s_next, y_next

        if it % 10 == 0 or it == max_iter:
            Az = A @ z
            r_prim = float(np.max(np.abs(Az - s), initial=0.0))
            r_dual = float(np.max(np.abs(H @ z + qp.g + A.T @ y), initial=0.0))
            eps_prim = tol + tol * max(
                np.max(np.abs(Az), initial=0.0), np.max(np.abs(s), initial=0.0)
            )
            eps_dual = tol + tol * max(
                np.max(np.abs(H @ z), initial=0.0),
                np.max(np.abs(A.T @ y), initial=0.0),
                np.max(np.abs(qp.g), initial=0.0),
            )
            if r_prim <= eps_prim and r_dual <= eps_dual:
                status = QpStatus.OPTIMAL
                break

        if it % 25 == 0:
            # primal infeasibility certificate on the dual increment
            ndy = float(np.max(np.abs(dy), initial=0.0))
            if ndy > 1e-10:
                dyn = dy / ndy
                if float(np.max(np.abs(A.T @ dyn), initial=0.0)) <= 1e-6:
                    gap = float(u @ np.maximum(dyn, 0.0))
                    neg = np.minimum(dyn, 0.0)
                    finite_l = np.isfinite(l)
                    if np.all(neg[~finite_l] > -1e-9):
                        gap += float(l[finite_l] @ neg[finite_l])
                        if gap < -1e-8:
                            status = QpStatus.INFEASIBLE
                            break

        if it % 100 == 0:
            # penalty adaptation keeps primal and dual progress balanced
            Az = A @ z
            r_prim = np.max(np.abs(Az - s), initial=0.0)
            r_dual = np.max(np.abs(H @ z + qp.g + A.T @ y), initial=0.0)
            scale_p = max(np.max(np.abs(Az), initial=0.0), np.max(np.abs(s), initial=0.0), 1e-10)
            scale_d = max(
                np.max(np.abs(H @ z), initial=0.0),
                np.max(np.abs(A.T @ y), initial=0.0),
                np.max(np.abs(qp.g), initial=0.0),
                1e-10,
            )
            ratio = np.sqrt((r_prim / scale_p) / max(r_dual / scale_d, 1e-12))
            ratio = float(np.clip(ratio, 1e-3, 1e3))
            if ratio > 5.0 or ratio < 0.2:
                rho = np.clip(rho * ratio, 1e-6, 1e6)
                lu = factor(rho)

    sol = QpSolution(
        z.copy(),
        status,
        iterations=it,
        duals_eq=y[:m_eq].copy(),
        duals_in=np.maximum(y[m_eq:], 0.0),
    )
    if status == QpStatus.OPTIMAL:
        polished = _polish(qp, H, z, np.concatenate([y[:m_eq], np.maximum(y[m_eq:], 0.0)]), m_eq)
        if polished is not None:
            z_p, y_p = polished
            old = kkt_residuals(qp, sol.z, sol.duals_eq, sol.duals_in)
            new = kkt_residuals(qp, z_p, y_p[:m_eq], y_p[m_eq:])
            if max(new[0], new[1], new[3]) <= max(old[0], old[1], old[3]):
                sol.z = z_p
                sol.duals_eq = y_p[:m_eq]
                sol.duals_in = y_p[m_eq:]
        r = kkt_residuals(qp, sol.z, sol.duals_eq, sol.duals_in)
        sol.primal_residual = r[1]
        sol.dual_residual = r[0]
    return sol

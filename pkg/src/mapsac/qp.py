"""Exact solver for the per-step safety QP.

minimize ||u - u_ref||^2 subject to a_i . u + b_i >= 0 and box bounds on u.

The problem never has more than a handful of constraints and two inputs, so
instead of an iterative method the solver enumerates candidate active sets
(all linearly independent subsets up to the variable count, in lexicographic
order), solves the equality-constrained KKT system for each, and returns the
first candidate whose multipliers are non-negative and which is primal
feasible. For a strictly convex QP that candidate is the global optimum. A
slack relaxation handles the (logged) case where the constraints conflict.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

OPTIMAL = "optimal"
RELAXED = "relaxed_feasible"
INFEASIBLE = "infeasible"

_FEAS_TOL = 1e-9
_MULT_TOL = 1e-10


@dataclass
class QpSolution:
    u: np.ndarray | None
    status: str
    active_set: tuple[int, ...] = ()
    multipliers: np.ndarray = field(default_factory=lambda: np.empty(0))
    slacks: np.ndarray = field(default_factory=lambda: np.empty(0))
    objective: float = np.nan


def _stack_constraints(constraints, u_min, u_max, m):
    # rows c . z >= d; order: supplied constraints first, then box lows, box highs
    rows, rhs = [], []
    for a, b in constraints:
        rows.append(np.asarray(a, dtype=float))
        rhs.append(-float(b))
    eye = np.eye(m)
    for j in range(m):
        rows.append(eye[j])
        rhs.append(float(u_min[j]))
    for j in range(m):
        rows.append(-eye[j])
        rhs.append(-float(u_max[j]))
    return np.array(rows), np.array(rhs)


def _equality_qp(h_diag: np.ndarray, z0: np.ndarray, c_a: np.ndarray,
                 d_a: np.ndarray):
    """min (z - z0)' H (z - z0) s.t. C_a z = d_a, via the null-space method.

    The primal solution is formed directly in the constraint's coordinate
    frame, so it stays accurate even when the multipliers are huge (large
    slack penalties). Returns None for rank-deficient active sets.
    """
    n = z0.size
    size = c_a.shape[0]
    q_full, r_full = np.linalg.qr(c_a.T, mode="complete")
    r_top = r_full[:size, :size]
    r_diag = np.abs(np.diag(r_top))
    if np.min(r_diag) <= 1e-10 * max(1.0, float(np.max(r_diag))):
        return None
    y1 = np.linalg.solve(r_top.T, d_a)
    q1 = q_full[:, :size]
    z = q1 @ y1
    if size < n:
        q2 = q_full[:, size:]
        a2 = (q2 * h_diag[:, None]).T @ q2
        rhs2 = q2.T @ (h_diag * (z0 - z))
        z = z + q2 @ np.linalg.solve(a2, rhs2)
    lam = np.linalg.solve(r_top, q1.T @ (2.0 * h_diag * (z - z0)))
    return z, lam


def _active_set_minimize(h_diag: np.ndarray, z0: np.ndarray, c_mat: np.ndarray,
                         d_vec: np.ndarray):
    """min (z - z0)' H (z - z0) s.t. C z >= d, H positive diagonal.

    Returns (z, active_set, multipliers) or None when no KKT point exists
    (infeasible constraints).
    """
    n = z0.size
    n_con = c_mat.shape[0]
    h_inv = 1.0 / h_diag
    scale = 1.0 + float(np.max(np.abs(d_vec))) if d_vec.size else 1.0

    for size in range(0, n + 1):
        for subset in combinations(range(n_con), size):
            if size == 0:
                z = z0
                lam = np.empty(0)
            else:
                c_a = c_mat[list(subset)]
                d_a = d_vec[list(subset)]
                result_eq = _equality_qp(h_diag, z0, c_a, d_a)
                if result_eq is None:
                    continue
                z, lam = result_eq
                mult_scale = max(1.0, float(np.max(np.abs(lam))))
                if np.any(lam < -_MULT_TOL * mult_scale):
                    continue
            if n_con and np.min(c_mat @ z - d_vec) < -_FEAS_TOL * scale:
                continue
            return z, subset, lam
    return None


def _box_projection_shortcut(u_ref, constraints, u_min, u_max, m):
    """Return the box projection of u_ref when it strictly satisfies every
    linear constraint; the enumeration would land on the same active set.

    Marginal cases (constraint slack inside the tolerance band) fall through
    to the full enumeration so ties break identically either way.
    """
    u = np.clip(u_ref, u_min, u_max)
    for a, b in constraints:
        if float(np.asarray(a, dtype=float) @ u + b) < 1e-7:
            return None
    active = []
    lam = []
    for j in range(m):
        if u_ref[j] < u_min[j] - 1e-12:
            active.append(len(constraints) + j)
            lam.append(2.0 * (u_min[j] - u_ref[j]))
        elif u_ref[j] > u_max[j] + 1e-12:
            active.append(len(constraints) + m + j)
            lam.append(2.0 * (u_ref[j] - u_max[j]))
        elif u_ref[j] < u_min[j] or u_ref[j] > u_max[j]:
            return None  # clipped by less than the tolerance; enumerate
    order = np.argsort(active) if active else []
    active = tuple(active[i] for i in order)
    lam = np.array([lam[i] for i in order])
    return u, active, lam


def solve(u_ref, constraints, u_min, u_max) -> QpSolution:
    """Solve the strict QP. ``constraints`` is a list of (a, b) pairs meaning
    a . u + b >= 0; box bounds are per-coordinate arrays or scalars."""
    u_ref = np.asarray(u_ref, dtype=float)
    m = u_ref.size
    u_min = np.broadcast_to(np.asarray(u_min, dtype=float), (m,))
    u_max = np.broadcast_to(np.asarray(u_max, dtype=float), (m,))
    if np.any(u_min > u_max):
        raise ValueError("u_min exceeds u_max")
    shortcut = _box_projection_shortcut(u_ref, constraints, u_min, u_max, m)
    if shortcut is not None:
        z, subset, lam = shortcut
        return QpSolution(u=z, status=OPTIMAL, active_set=subset, multipliers=lam,
                          slacks=np.zeros(len(constraints)),
                          objective=float(np.sum((z - u_ref) ** 2)))
    c_mat, d_vec = _stack_constraints(constraints, u_min, u_max, m)
    result = _active_set_minimize(np.full(m, 1.0), u_ref, c_mat, d_vec)
    if result is None:
        return QpSolution(u=None, status=INFEASIBLE,
                          slacks=np.zeros(len(constraints)))
    z, subset, lam = result
    return QpSolution(u=z, status=OPTIMAL, active_set=subset, multipliers=lam,
                      slacks=np.zeros(len(constraints)),
                      objective=float(np.sum((z - u_ref) ** 2)))


def solve_relaxed(u_ref, constraints, u_min, u_max,
                  penalty: float = 1e6) -> QpSolution:
    """Soften the linear constraints with quadratically penalized slacks.

    minimize ||u - u_ref||^2 + penalty * sum s_i^2
    s.t. a_i . u + b_i + s_i >= 0, s_i >= 0, box bounds hard.

    Always feasible when the box is; used after ``solve`` reports infeasible.
    """
    u_ref = np.asarray(u_ref, dtype=float)
    m = u_ref.size
    k = len(constraints)
    u_min = np.broadcast_to(np.asarray(u_min, dtype=float), (m,))
    u_max = np.broadcast_to(np.asarray(u_max, dtype=float), (m,))
    z0 = np.concatenate([u_ref, np.zeros(k)])
    h_diag = np.concatenate([np.ones(m), np.full(k, float(penalty))])

    rows, rhs = [], []
    for i, (a, b) in enumerate(constraints):
        row = np.zeros(m + k)
        row[:m] = np.asarray(a, dtype=float)
        row[m + i] = 1.0
        rows.append(row)
        rhs.append(-float(b))
    for i in range(k):  # s_i >= 0
        row = np.zeros(m + k)
        row[m + i] = 1.0
        rows.append(row)
        rhs.append(0.0)
    for j in range(m):
        row = np.zeros(m + k)
        row[j] = 1.0
        rows.append(row)
        rhs.append(float(u_min[j]))
    for j in range(m):
        row = np.zeros(m + k)
        row[j] = -1.0
        rows.append(row)
        rhs.append(-float(u_max[j]))
    c_mat = np.array(rows) if rows else np.empty((0, m + k))
    d_vec = np.array(rhs)

    result = _active_set_minimize(h_diag, z0, c_mat, d_vec)
    if result is None:  # box empty; caller validated, so not reachable in practice
        return QpSolution(u=None, status=INFEASIBLE, slacks=np.zeros(k))
    z, subset, lam = result
    u = z[:m]
    slacks = z[m:]
    return QpSolution(u=u, status=RELAXED, active_set=subset, multipliers=lam,
                      slacks=slacks,
                      objective=float(np.sum((u - u_ref) ** 2)
                                      + penalty * np.sum(slacks ** 2)))


def kkt_residuals(solution: QpSolution, u_ref, constraints, u_min, u_max):
    """Stationarity / complementarity residuals certifying an optimal solution."""
    u_ref = np.asarray(u_ref, dtype=float)
    m = u_ref.size
    u_min = np.broadcast_to(np.asarray(u_min, dtype=float), (m,))
    u_max = np.broadcast_to(np.asarray(u_max, dtype=float), (m,))
    c_mat, d_vec = _stack_constraints(constraints, u_min, u_max, m)
    u = solution.u
    grad = 2.0 * (u - u_ref)
    if solution.active_set:
        grad = grad - c_mat[list(solution.active_set)].T @ solution.multipliers
    stationarity = float(np.max(np.abs(grad)))
    comp = 0.0
    for idx, lam in zip(solution.active_set, solution.multipliers):
        comp = max(comp, abs(lam * (c_mat[idx] @ u - d_vec[idx])))
    return stationarity, comp

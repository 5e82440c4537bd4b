import numpy as np
import pytest

from mapsac import qp
from mapsac.linalg import make_rng


def random_problem(rng):
    k = int(rng.integers(0, 4))
    cons = [(rng.normal(size=2), float(rng.normal() * 3)) for _ in range(k)]
    u_ref = rng.normal(size=2) * 6
    return u_ref, cons


def grid_minimizer(u_ref, cons, lo, hi, n=401):
    """Brute-force reference: dense grid over the box."""
    axis = np.linspace(lo, hi, n)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    feasible = np.ones(pts.shape[0], dtype=bool)
    for a, b in cons:
        feasible &= pts @ a + b >= 0.0
    if not np.any(feasible):
        return None, axis[1] - axis[0]
    obj = np.sum((pts - u_ref) ** 2, axis=1)
    obj[~feasible] = np.inf
    return pts[np.argmin(obj)], axis[1] - axis[0]


def refine_batch(u_refs, cons_list, lo, hi, sweeps=3000):
    """Independent iterative oracle: cyclic exact coordinate ascent on the
    dual (Hildreth's method) with multipliers clipped at zero, batched over
    problems. Converges to the unique primal optimum of each QP."""
    n_prob = len(u_refs)
    max_k = max((len(c) for c in cons_list), default=0)
    m = max_k + 4
    c_mat = np.zeros((n_prob, m, 2))
    d_vec = np.full((n_prob, m), -1.0)  # padding rows stay inactive
    eye = np.eye(2)
    for p, cons in enumerate(cons_list):
        for i, (a, b) in enumerate(cons):
            norm = np.linalg.norm(a)
            c_mat[p, i] = np.asarray(a, dtype=float) / norm
            d_vec[p, i] = -float(b) / norm
        base = len(cons)
        for j in range(2):
            c_mat[p, base + 2 * j] = eye[j]
            d_vec[p, base + 2 * j] = lo
            c_mat[p, base + 2 * j + 1] = -eye[j]
            d_vec[p, base + 2 * j + 1] = -hi
    u = np.array(u_refs, dtype=float)
    lam = np.zeros((n_prob, m))
    u_refs = np.array(u_refs, dtype=float)
    for _ in range(sweeps):
        for i in range(m):
            row = c_mat[:, i, :]
            gap = d_vec[:, i] - np.einsum("pj,pj->p", row, u)
            delta = np.maximum(0.0, lam[:, i] + gap / 0.5) - lam[:, i]
            lam[:, i] += delta
            u += 0.5 * delta[:, None] * row
    return u


def projected_refinement(u_ref, cons, lo, hi):
    return refine_batch([u_ref], [cons], lo, hi)[0]


class TestSolve:
    def test_unconstrained_returns_reference(self):
        sol = qp.solve([1.0, -2.0], [], -5.0, 5.0)
        assert sol.status == qp.OPTIMAL
        assert np.allclose(sol.u, [1.0, -2.0])
        assert sol.active_set == ()

    def test_single_violated_constraint_closed_form(self):
        a = np.array([1.0, 2.0])
        b = -8.0
        u_ref = np.array([1.0, 1.0])
        sol = qp.solve(u_ref, [(a, b)], -5.0, 5.0)
        expected = u_ref + a * (-b - a @ u_ref) / (a @ a)
        assert np.allclose(sol.u, expected, atol=1e-10)

    def test_box_clipping(self):
        sol = qp.solve([10.0, 10.0], [], -5.0, 5.0)
        assert np.allclose(sol.u, [5.0, 5.0])

    def test_contradictory_constraints_infeasible(self):
        cons = [(np.array([1.0, 0.0]), -100.0), (np.array([-1.0, 0.0]), -100.0)]
        assert qp.solve([0.0, 0.0], cons, -5.0, 5.0).status == qp.INFEASIBLE

    def test_bad_box_rejected(self):
        with pytest.raises(ValueError):
            qp.solve([0.0, 0.0], [], 5.0, -5.0)

    def test_higher_dimensional_inputs(self):
        # the paper scenarios use two inputs; the solver itself is generic
        rng = make_rng(9)
        for m in (3, 5):
            u_ref = rng.normal(size=m) * 4
            cons = [(rng.normal(size=m), float(rng.normal())) for _ in range(2)]
            sol = qp.solve(u_ref, cons, -5.0, 5.0)
            if sol.status != qp.OPTIMAL:
                continue
            stationarity, comp = qp.kkt_residuals(sol, u_ref, cons, -5.0, 5.0)
            assert stationarity < 1e-8 and comp < 1e-8
            for a, b in cons:
                assert a @ sol.u + b >= -1e-8
            assert np.all(sol.u >= -5.0 - 1e-9) and np.all(sol.u <= 5.0 + 1e-9)

    def test_determinism(self):
        rng = make_rng(0)
        for _ in range(50):
            u_ref, cons = random_problem(rng)
            s1 = qp.solve(u_ref, cons, -5.0, 5.0)
            s2 = qp.solve(u_ref, cons, -5.0, 5.0)
            assert s1.status == s2.status
            assert s1.active_set == s2.active_set
            if s1.u is not None:
                assert np.array_equal(s1.u, s2.u)

    def test_kkt_certificate_on_random_problems(self):
        rng = make_rng(1)
        for _ in range(300):
            u_ref, cons = random_problem(rng)
            sol = qp.solve(u_ref, cons, -5.0, 5.0)
            if sol.status != qp.OPTIMAL:
                continue
            stationarity, comp = qp.kkt_residuals(sol, u_ref, cons, -5.0, 5.0)
            assert stationarity < 1e-8
            assert comp < 1e-8
            assert np.all(sol.multipliers >= -1e-10)
            for a, b in cons:
                assert a @ sol.u + b >= -1e-8

    def test_matches_grid_oracle(self):
        # grid argmin plus an independent first-order refinement; the grid
        # witnesses feasibility, the refinement removes its staircase bias
        rng = make_rng(2)
        kept = []
        for _ in range(200):
            u_ref, cons = random_problem(rng)
            sol = qp.solve(u_ref, cons, -5.0, 5.0)
            grid_u, step = grid_minimizer(u_ref, cons, -5.0, 5.0)
            if grid_u is None:
                assert sol.status == qp.INFEASIBLE or sol.status == qp.OPTIMAL
                continue
            assert sol.status == qp.OPTIMAL
            kept.append((u_ref, cons, sol, grid_u, step))
        assert len(kept) > 100
        refined_all = refine_batch([k[0] for k in kept], [k[1] for k in kept],
                                   -5.0, 5.0)
        for (u_ref, cons, sol, grid_u, step), refined in zip(kept, refined_all):
            obj_grid = np.sum((grid_u - u_ref) ** 2)
            obj_ref = np.sum((refined - u_ref) ** 2)
            assert obj_ref <= obj_grid + 1e-9
            assert np.max(np.abs(sol.u - refined)) <= 2.0 * step
            assert abs(sol.objective - obj_ref) <= 1e-6 * (1.0 + obj_ref)


class TestSolveRelaxed:
    def test_feasible_matches_strict_with_zero_slack(self):
        cons = [(np.array([1.0, 1.0]), 0.5)]
        strict = qp.solve([1.0, 2.0], cons, -5.0, 5.0)
        relaxed = qp.solve_relaxed([1.0, 2.0], cons, -5.0, 5.0)
        assert relaxed.status == qp.RELAXED
        assert np.allclose(relaxed.u, strict.u, atol=1e-9)
        assert np.allclose(relaxed.slacks, 0.0, atol=1e-9)

    def test_contradiction_produces_positive_slack(self):
        cons = [(np.array([1.0, 0.0]), -100.0), (np.array([-1.0, 0.0]), -100.0)]
        sol = qp.solve_relaxed([0.0, 0.0], cons, -5.0, 5.0)
        assert sol.status == qp.RELAXED
        assert np.max(sol.slacks) > 1.0
        # slacked constraints hold exactly
        for (a, b), s in zip(cons, sol.slacks):
            assert a @ sol.u + b + s >= -1e-8

    def test_matches_grid_oracle_on_slack_problems(self):
        # grid over u with the slack cost evaluated in closed form per point;
        # a mild penalty keeps the grid informative (a huge one makes the
        # penalized landscape effectively discontinuous at this resolution)
        rng = make_rng(3)
        for _ in range(25):
            u_ref, cons = random_problem(rng)
            if not cons:
                continue
            penalty = 10.0
            sol = qp.solve_relaxed(u_ref, cons, -5.0, 5.0, penalty=penalty)
            axis = np.linspace(-5.0, 5.0, 401)
            gx, gy = np.meshgrid(axis, axis, indexing="ij")
            pts = np.column_stack([gx.ravel(), gy.ravel()])
            obj = np.sum((pts - u_ref) ** 2, axis=1)
            for a, b in cons:
                slack = np.maximum(0.0, -(pts @ a + b))
                obj += penalty * slack ** 2
            best = pts[np.argmin(obj)]
            step = axis[1] - axis[0]
            assert np.max(np.abs(sol.u - best)) <= 2.0 * step

    def test_matches_smooth_solver_at_production_penalty(self):
        # independent oracle: L-BFGS-B on the exact penalized objective
        from scipy.optimize import minimize

        rng = make_rng(4)
        for _ in range(25):
            u_ref, cons = random_problem(rng)
            if not cons:
                continue
            penalty = 1e6
            sol = qp.solve_relaxed(u_ref, cons, -5.0, 5.0, penalty=penalty)

            def f(u):
                val = float(np.sum((u - u_ref) ** 2))
                for a, b in cons:
                    val += penalty * max(0.0, -(a @ u + b)) ** 2
                return val

            best = min((minimize(f, x0, method="L-BFGS-B",
                                 bounds=[(-5.0, 5.0)] * 2)
                        for x0 in (np.zeros(2), np.clip(u_ref, -5, 5))),
                       key=lambda r: r.fun)
            assert sol.objective <= best.fun + 1e-5 * (1.0 + abs(best.fun))

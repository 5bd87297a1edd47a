"""Exit criteria, each at its stated tolerance and time budget.

Every test prints one verdict line; the session summary repeats them.
"""

from __future__ import annotations

import time

import numpy as np
import pytest
from conftest import report
from helpers import manufactured

from geospline.cli import resolve_config
from geospline.config import load_problem
from geospline.dynamics import ExtremalState, build_model, rhs_se3_body
from geospline.geometry import Connection, ConnectionKind, curvature, curvature_oracle, nabla
from geospline.integrate import propagate
from geospline.lie_groups import GroupElement, MetricTensor, get_group, inverse_matrix
from geospline.potentials import CompactGroupPoint, EuclideanSphere, InsideObstacle, OrientationPoint
from geospline.shooting import NoConvergence, ValidationError, solve
from geospline.variational_oracle import stationarity_test, subgroup_interpolant

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

# seven-point central stencils (fourth order or better) for offsets -3..3
D1 = np.array([-1 / 60, 3 / 20, -3 / 4, 0, 3 / 4, -3 / 20, 1 / 60])
D2 = np.array([1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90])
D3 = np.array([1 / 8, -1, 13 / 8, 0, -13 / 8, 1, -1 / 8])


def knot_log_errors(sol):
    G = get_group(sol.problem.group)
    out = []
    for i, (_, g) in enumerate(sol.problem.knots):
        x = sol.segments[0].x[0] if i == 0 else sol.segments[i - 1].x[-1]
        out.append(np.linalg.norm(G.log(inverse_matrix(G, g.matrix) @ x)))
    return np.array(out)


@pytest.fixture(scope="module")
def se3_run():
    p = load_problem(resolve_config("se3_paper"))
    start = time.perf_counter()
    sol = solve(p)
    return p, sol, time.perf_counter() - start


def test_criterion_1_se3_two_sphere_problem(se3_run):
    p, sol, runtime = se3_run
    r = sol.trajectory.x[:, :3, 3]
    near_origin = np.min(np.linalg.norm(r, axis=1))
    near_second = np.min(np.sum((r - 2.0) ** 2, axis=1))
    errs = knot_log_errors(sol)
    checks = {
        "converged": sol.converged,
        "residual": sol.residual_norm <= 1e-8,
        "knots": errs.max() <= 1e-6,
        "sphere 1": near_origin > 1.0,
        "sphere 2": near_second > 2.0,
        "runtime": runtime <= 60.0,
    }
    ok = all(checks.values())
    report(
        1,
        ok,
        f"residual {sol.residual_norm:.2e}, knot error {errs.max():.1e}, min|r| {near_origin:.4f}, "
        f"min|r-(2,2,2)|^2 {near_second:.4f}, {sol.newton_iters} iterations, {runtime:.1f} s",
    )
    assert ok, checks


def test_criterion_2_unicycle_two_circle_problem():
    start = time.perf_counter()
    try:
        p = load_problem(resolve_config("unicycle_paper"))
        sol = solve(p)
    except (ValidationError, NoConvergence, InsideObstacle) as e:
        report(2, False, f"bundled problem cannot be solved: {e}")
        pytest.fail(str(e))
    runtime = time.perf_counter() - start
    r = sol.trajectory.x[:, :2, 2]
    b2 = np.max(np.abs(sol.trajectory.v[:, 2]))
    c1 = np.min(np.linalg.norm(r, axis=1))
    c2 = np.min(np.sum((r - 2.0) ** 2, axis=1))
    ok = sol.converged and b2 <= 1e-8 and c1 > 1.0 and c2 > 2.0 and runtime <= 60.0
    report(2, ok, f"max|b2| {b2:.1e}, min|r| {c1:.4f}, min|r-(2,2)|^2 {c2:.4f}, {runtime:.1f} s")
    assert ok


def test_criterion_3_manufactured_recovery():
    start = time.perf_counter()
    worst = {}
    passed = {}
    for group in ("SO3", "SE3", "SE2"):
        ok = 0
        worst[group] = 0.0
        for seed in range(10):
            seed_ok = True
            for obstacle in (False, True):
                p, truth = manufactured(group, seed, obstacle, h=1e-3)
                p = p.with_solver(tol=1e-11)
                try:
                    sol = solve(p)
                except (NoConvergence, InsideObstacle):
                    seed_ok = False
                    worst[group] = np.inf
                    continue
                err = np.max(np.abs(sol.unknowns.to_vector(p) - truth.to_vector(p)))
                worst[group] = max(worst[group], err)
                seed_ok &= err <= 1e-5
            ok += seed_ok
        passed[group] = ok
    runtime = time.perf_counter() - start
    good = all(v == 10 for v in passed.values()) and runtime <= 300.0
    detail = ", ".join(f"{g} {passed[g]}/10 (max error {worst[g]:.1e})" for g in passed)
    report(3, good, f"{detail}; {runtime:.0f} s")
    assert good


def _fd_residual(sol, rhs):
    worst = 0.0
    for seg in sol.segments:
        v, h = seg.v, seg.h
        n = len(v)
        d1, d2, d3 = (sum(D[j] * v[j : n - 6 + j] for j in range(7)) / h**k for D, k in ((D1, 1), (D2, 2), (D3, 3)))
        worst = max(worst, np.max(np.abs(d3 - rhs(seg.x[3:-3], v[3:-3], d1, d2))))
    return worst


def test_criterion_4_zero_potential_regression():
    start = time.perf_counter()
    worst = {}
    for group in ("SO3", "SE3"):
        worst[group] = 0.0
        for seed in range(3):
            p, _ = manufactured(group, seed, False, h=5e-3, scheme="rk4")
            sol = solve(p)
            if group == "SO3":

                def rhs(X, v, v1, v2, s=p.sigma):
                    return np.cross(v2, v) + s * v1

            else:

                def rhs(X, v, v1, v2, s=p.sigma):
                    return np.array(
                        [rhs_se3_body(ExtremalState("SE3", X[i], v[i], v1[i], v2[i]), (), s) for i in range(len(v))]
                    )

            worst[group] = max(worst[group], _fd_residual(sol, rhs))
    runtime = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-6 and runtime <= 60.0
    report(4, ok, f"SO3 residual {worst['SO3']:.1e}, SE3 residual {worst['SE3']:.1e}, {runtime:.1f} s")
    assert ok


def _random_metric(group, rng):
    if group == "SE2":
        return MetricTensor.create("SE2", J=rng.uniform(0.5, 3), m=rng.uniform(0.5, 3))
    if group == "SO3":
        return MetricTensor.create("SO3", J=rng.uniform(0.5, 3, 3))
    return MetricTensor.create("SE3", J=rng.uniform(0.5, 3, 3), m=rng.uniform(0.5, 3, 3))


def test_criterion_5_geometry_oracles():
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = 0.0
    closed = [
        Connection(ConnectionKind.SE3_UNIT, "SE3"),
        Connection(ConnectionKind.BI_INVARIANT, "SO3"),
        Connection(ConnectionKind.SE2_CLOSED, "SE2", MetricTensor.create("SE2", J=2.0, m=1.0)),
        Connection(ConnectionKind.SE2_CLOSED, "SE2"),
    ]
    for conn in closed:
        G = get_group(conn.group)
        ref = Connection(ConnectionKind.GENERAL, conn.group, conn.metric)
        E = np.eye(G.dim)
        i, j, k = (a.ravel() for a in np.meshgrid(*(np.arange(G.dim),) * 3, indexing="ij"))
        u, w, z = E[i], E[j], E[k]
        worst = max(worst, np.max(np.abs(curvature(u, w, z, conn) - curvature_oracle(u, w, z, ref))))
    for group in ("SO3", "SE3", "SE2"):
        G = get_group(group)
        for _ in range(5):
            metric = _random_metric(group, rng)
            for conn in (Connection.for_metric(metric), Connection(ConnectionKind.GENERAL, group, metric)):
                u, w, z = rng.normal(size=(3, 100, G.dim))
                torsion = nabla(u, w, conn) - nabla(w, u, conn) - G.bracket(u, w)
                compat = metric.inner(nabla(z, u, conn), w) + metric.inner(u, nabla(z, w, conn))
                worst = max(worst, np.abs(torsion).max(), np.abs(compat).max())
    runtime = time.perf_counter() - start
    ok = worst <= 1e-10 and runtime <= 10.0
    report(5, ok, f"largest identity defect {worst:.1e} over basis triples and 500 random cases per group, {runtime:.2f} s")
    assert ok


def _admissible_poses(G, obstacle, rng, count=200, margin=0.05):
    """Random poses outside the obstacle, away from the log cut locus of rotation targets."""
    SO3 = get_group("SO3")
    target = getattr(obstacle, "Q", None) or getattr(obstacle, "h", None)
    poses = []
    while len(poses) < count:
        xi = rng.normal(size=G.dim)
        xi[: G.rot_coords] *= 2.5 / max(np.linalg.norm(xi[: G.rot_coords]), 1.0)
        xi[G.rot_coords :] *= 2.0
        X = G.exp(xi)
        if obstacle.clearance(G, X) <= margin:
            continue
        if target is not None and np.linalg.norm(SO3.log(X[:3, :3].T @ target.matrix, strict=False)) > 3.0:
            continue
        poses.append(X)
    return np.array(poses)


def test_criterion_6_gradient_checks():
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    SO3 = get_group("SO3")
    Q = SO3.exp(np.array([0.3, -0.8, 1.1]))
    cases = [
        ("SE3", EuclideanSphere(np.array([2.0, 2.0, 2.0]), 2.0, 1.1)),
        ("SE2", EuclideanSphere(np.array([2.0, 2.0]), 2.0, 0.9)),
        ("SO3", OrientationPoint(GroupElement("SO3", Q), 0.7)),
        ("SO3", CompactGroupPoint(GroupElement("SO3", Q), 0.7)),
    ]
    worst = {}
    eps = 1e-6
    for group, obs in cases:
        G = get_group(group)
        X = _admissible_poses(G, obs, rng)
        dV = obs.differential(G, X)
        E = np.eye(G.dim) * eps
        fd = np.empty_like(dV)
        for j in range(G.dim):
            plus = obs.tau / obs.clearance(G, X @ G.exp(E[j]))
            minus = obs.tau / obs.clearance(G, X @ G.exp(-E[j]))
            fd[:, j] = (plus - minus) / (2 * eps)
        rel = np.linalg.norm(fd - dV, axis=1) / np.linalg.norm(dV, axis=1)
        worst[f"{obs.kind}/{group}"] = float(rel.max())
    runtime = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-5 and runtime <= 30.0
    report(6, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {runtime:.2f} s")
    assert ok


def test_criterion_7_stationarity(se3_run):
    start = time.perf_counter()
    p, sol, _ = se3_run
    se3_score = stationarity_test(sol, p, n_dirs=50, eps=1e-4, h=1e-3)
    negative = stationarity_test(subgroup_interpolant(p, 1e-3), p, n_dirs=50, eps=1e-4)
    try:
        q = load_problem(resolve_config("unicycle_paper"))
        usol = solve(q)
        uni_score = stationarity_test(usol, q, n_dirs=50, eps=1e-4, h=1e-3)
        uni_text = f"unicycle {uni_score:.1e}"
    except (ValidationError, NoConvergence, InsideObstacle) as e:
        uni_score = np.inf
        f = load_problem(resolve_config("unicycle_feasible"))
        feasible = stationarity_test(solve(f), f, n_dirs=50, eps=1e-4, h=1e-3)
        uni_text = f"unicycle problem unsolvable ({e}); feasible variant {feasible:.1e}"
    runtime = time.perf_counter() - start
    ok = se3_score <= 5e-3 and uni_score <= 5e-3 and negative > 5e-3 and runtime <= 300.0
    report(7, ok, f"SE3 {se3_score:.1e}, {uni_text}, negative control {negative:.2f}, {runtime:.0f} s")
    assert ok


def test_criterion_8_integrator_order():
    start = time.perf_counter()
    G = get_group("SO3")
    model = build_model("SO3", MetricTensor.identity("SO3"), 0.7)
    rng = np.random.default_rng(8)
    X = np.eye(3)[None]
    V, V1, V2 = rng.normal(size=(3, 1, 3))

    def endpoint(h, scheme):
        return propagate(model, X, V, V1, V2, None, 0.0, 1.0, h, scheme)

    ref = endpoint(1.25e-3 / 16, "rk4")
    hs = np.array([1e-2, 5e-3, 2.5e-3, 1.25e-3])
    slopes = {}
    for scheme in ("euler", "rk4"):
        errs = []
        for h in hs:
            e = endpoint(h, scheme)
            pose = G.log(np.linalg.inv(ref.x[0]) @ e.x[0])
            errs.append(np.linalg.norm(np.concatenate([pose, e.v[0] - ref.v[0], e.v1[0] - ref.v1[0], e.v2[0] - ref.v2[0]])))
        slopes[scheme] = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    runtime = time.perf_counter() - start
    ok = abs(slopes["euler"] - 1.0) <= 0.3 and abs(slopes["rk4"] - 4.0) <= 0.3 and runtime <= 60.0
    report(8, ok, f"euler slope {slopes['euler']:.2f}, rk4 slope {slopes['rk4']:.2f}, {runtime:.1f} s")
    assert ok

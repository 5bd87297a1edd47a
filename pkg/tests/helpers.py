"""Shared builders for tests: manufactured problems and small fixtures."""

from __future__ import annotations

import dataclasses

import numpy as np

from geospline.dynamics import ConstraintSpec
from geospline.lie_groups import GroupElement, MetricTensor, get_group
from geospline.potentials import EuclideanSphere, OrientationPoint
from geospline.shooting import ProblemSpec, SolverOptions, Unknowns, assemble_solution

KNOT_TIMES = (0.0, 0.5, 1.0)


def template_problem(group, obstacle=False, sigma=0.5, h=1e-3, scheme="euler", times=KNOT_TIMES):
    """Problem with every knot at the start pose; manufactured data replace the knots later."""
    G = get_group(group)
    constraints = None
    if group == "SO3":
        metric = MetricTensor.identity("SO3")
        start = GroupElement.identity("SO3")
        obs = [OrientationPoint(GroupElement("SO3", G.exp(np.array([0.0, 0.0, 2.2]))), 0.3)] if obstacle else []
    elif group == "SE3":
        metric = MetricTensor.identity("SE3")
        start = GroupElement.from_rt("SE3", np.eye(3), [-1.0, 1.0, 0.0])
        obs = [EuclideanSphere(np.zeros(3), 0.25, 0.4)] if obstacle else []
    else:
        metric = MetricTensor.create("SE2", J=2.0, m=1.0)
        start = GroupElement.from_rt("SE2", np.eye(2), [1.0, -1.0])
        obs = [EuclideanSphere(np.zeros(2), 0.25, 0.4)] if obstacle else []
        constraints = ConstraintSpec.unicycle(metric)
    knots = tuple((t, start) for t in times)
    v0 = np.zeros(G.dim)
    return ProblemSpec(group, metric, sigma, obs, knots, v0, v0, constraints, SolverOptions(h=h, scheme=scheme))


def with_data(p: ProblemSpec, knots, v0, vN) -> ProblemSpec:
    return dataclasses.replace(p, knots=tuple(knots), v0=np.array(v0, dtype=float), vN=np.array(vN, dtype=float))


def random_unknowns(p: ProblemSpec, rng, scale=0.6) -> Unknowns:
    G = get_group(p.group)
    c = p.constraints

    def draw(*shape):
        a = scale * rng.normal(size=shape + (G.dim,))
        return a if c is None else c.project(a)

    u = Unknowns.zeros(p)
    u.v1_0 = draw()
    u.v2_0 = draw()
    u.jerk_restarts = draw(p.n_segments - 1)
    if c is not None:
        u.lambda0 = scale * rng.normal(size=c.k)
        u.lambda_restarts = scale * rng.normal(size=(p.n_segments - 1, c.k))
    return u


def manufactured(group, seed, obstacle=False, h=1e-3, scheme="euler", max_draws=50):
    """Forward-integrate random initial data; return ``(problem, true_unknowns)``.

    Draws that blow up, pass close to an obstacle, or turn further than the log
    branch allows between knots are redrawn, so every returned problem is well posed.
    """
    G = get_group(group)
    rng = np.random.default_rng(seed)
    template = template_problem(group, obstacle, h=h, scheme=scheme)
    for _ in range(max_draws):
        v0 = 0.8 * rng.normal(size=G.dim)
        if template.constraints is not None:
            v0 = template.constraints.project(v0)
        trial = with_data(template, template.knots, v0, v0)
        u = random_unknowns(trial, rng)
        sol = assemble_solution(trial, u)
        tr = sol.trajectory
        if sol.penalized or not np.all(np.isfinite(tr.v)) or np.abs(tr.v).max() > 10:
            continue
        if tr.clearance_min.size and np.min(tr.clearance_min) < 0.05:
            continue
        poses = [sol.segments[0].x[0]] + [s.x[-1] for s in sol.segments]
        turns = [np.linalg.norm(G.log(np.linalg.inv(a) @ b, strict=False)[: G.rot_coords]) for a, b in zip(poses, poses[1:])]
        if max(turns) > 2.5:
            continue
        knots = tuple((t, GroupElement(group, x)) for (t, _), x in zip(template.knots, poses))
        return with_data(template, knots, v0, tr.v[-1]), u
    raise RuntimeError(f"no admissible manufactured draw for {group} seed {seed}")

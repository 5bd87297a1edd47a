"""Direct check that trajectories are stationary points of the cost functional.

The functional is

    J(x) = 1/2 int |D^2 x/dt^2|^2 + sigma |dx/dt|^2 + sum_r V_r(x) dt

evaluated from the sampled poses alone: body velocity and acceleration come
from finite differences in local log charts, and
``D^2 x/dt^2 = v' + nabla_v v``. Nothing from the solver's internal jet is
reused, so agreement with the extremal equations is a genuine check.

Under velocity constraints the multipliers enter through the augmented
functional ``J + int lambda . omega(v) dt`` whose free critical points are the
normal extremals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Connection, nabla
from .integrate import Trajectory, step_count
from .lie_groups import MetricTensor, get_group, inverse_matrix
from .potentials import CLEARANCE_MARGIN, InsideObstacle


@dataclass(frozen=True)
class PerturbationField:
    """Body-frame variation ``X`` sampled at the trajectory times.

    Built from per-segment bumps ``16 s^2 (L - s)^2 / L^4`` times a constant
    algebra vector, so ``X`` and its derivative vanish at every knot.
    """

    t: np.ndarray
    values: np.ndarray

    @classmethod
    def bump(cls, t, knot_times, coeffs) -> "PerturbationField":
        """Args:
        t: sample times.
        knot_times: segment boundaries, including both ends.
        coeffs: one algebra vector per segment, shape ``(N, n)``.
        """
        t = np.asarray(t, dtype=float)
        kt = np.asarray(knot_times, dtype=float)
        coeffs = np.asarray(coeffs, dtype=float)
        seg = np.clip(np.searchsorted(kt, t, side="right") - 1, 0, kt.size - 2)
        a, b = kt[seg], kt[seg + 1]
        L = b - a
        s = np.clip(t - a, 0.0, L)
        prof = 16.0 * s**2 * (L - s) ** 2 / L**4
        return cls(t, prof[:, None] * coeffs[seg])

    @classmethod
    def zero(cls, t, n) -> "PerturbationField":
        t = np.asarray(t, dtype=float)
        return cls(t, np.zeros((t.size, n)))

    def scaled(self, c: float) -> "PerturbationField":
        return PerturbationField(self.t, c * self.values)


def _unique_samples(t, x, lam=None):
    keep = np.concatenate([[True], np.diff(t) > 1e-12])
    return t[keep], x[..., keep, :, :], None if lam is None else lam[keep]


def _segment_nodes(t, breaks=None):
    """Sample indices per segment; interior knot samples belong to both neighbours."""
    S = t.size
    bounds = [0, S - 1]
    if breaks is not None:
        for b in np.asarray(breaks, dtype=float)[1:-1]:
            j = int(np.argmin(np.abs(t - b)))
            if abs(t[j] - b) <= 1e-9 * max(1.0, abs(b)):
                bounds.append(j)
    bounds = np.unique(bounds)
    return [np.arange(lo, hi + 1) for lo, hi in zip(bounds[:-1], bounds[1:])]


def _stencils(t, breaks=None, width=5):
    """Finite-difference stencils that stay inside one segment.

    Returns:
        ``(node, seg, idx, w1, w2)``: node sample index and segment id of every
        evaluation point (interior knots appear once per side), stencil sample
        indices ``(P, width)`` and weights for the first and second derivative.
    """
    if t.size < width:
        raise ValueError(f"need at least {width} samples, got {t.size}")
    segs = _segment_nodes(t, breaks)
    nodes, seg_id, starts = [], [], []
    for j, ids in enumerate(segs):
        lo, hi = ids[0], ids[-1]
        if hi - lo < width - 1:
            lo, hi = 0, t.size - 1
        nodes.append(ids)
        seg_id.append(np.full(ids.size, j))
        starts.append(np.clip(ids - width // 2, lo, hi - (width - 1)))
    node = np.concatenate(nodes)
    seg = np.concatenate(seg_id)
    idx = np.concatenate(starts)[:, None] + np.arange(width)[None]
    dt = t[idx] - t[node][:, None]
    scale = np.maximum(np.max(np.abs(dt), axis=1), 1e-300)
    u = dt / scale[:, None]
    A = u[:, None, :] ** np.arange(width)[None, :, None]  # rows: power, cols: stencil entry
    rhs = np.zeros((node.size, width, 2))
    rhs[:, 1, 0] = 1.0
    rhs[:, 2, 1] = 2.0
    w = np.linalg.solve(A, rhs)
    return node, seg, idx, w[..., 0] / scale[:, None], w[..., 1] / scale[:, None] ** 2


def _jet_at(G, x, node, idx, w1, w2):
    xk_inv = inverse_matrix(G, x[..., node, :, :])
    y = G.log(xk_inv[..., :, None, :, :] @ x[..., idx, :, :], strict=False)
    return np.einsum("sj,...sjn->...sn", w1, y), np.einsum("sj,...sjn->...sn", w2, y)


def body_jet(group, t, x, breaks=None):
    """Velocity and acceleration at the sample times from the poses alone.

    Around every node ``x_k`` the curve is read in the chart
    ``y(s) = log(x_k^-1 x(t_k + s))``, where ``y'(0) = v`` and ``y''(0) = v'``;
    five-point stencils then give both to fourth order. At a knot the values
    from the following segment are returned.

    Args:
        group: group tag.
        t: sample times, shape ``(S,)``.
        x: poses, shape ``(..., S, m, m)``.
        breaks: knot times; stencils never straddle a knot.

    Returns:
        ``(v, v1)`` with shapes ``(..., S, n)``.
    """
    G = get_group(group)
    t = np.asarray(t, dtype=float)
    node, _, idx, w1, w2 = _stencils(t, breaks)
    v, v1 = _jet_at(G, x, node, idx, w1, w2)
    out_v = np.empty(x.shape[:-3] + (t.size, G.dim))
    out_v1 = np.empty_like(out_v)
    # later entries overwrite earlier ones, so knots keep the following side
    out_v[..., node, :] = v
    out_v1[..., node, :] = v1
    return out_v, out_v1


def _quad_weights(tn, seg, rule):
    """Node weights for integrating over each segment separately.

    ``trapezoid`` is second order; ``cubic`` integrates, on every interval,
    the cubic through the four nearest nodes of the same segment.
    """
    w = np.zeros(tn.size)
    for j in np.unique(seg):
        ids = np.flatnonzero(seg == j)
        tau = tn[ids]
        dt = np.diff(tau)
        if rule == "trapezoid" or ids.size < 4:
            w[ids[:-1]] += 0.5 * dt
            w[ids[1:]] += 0.5 * dt
            continue
        m = ids.size
        start = np.clip(np.arange(m - 1) - 1, 0, m - 4)
        pts = (tau[start[:, None] + np.arange(4)] - tau[:-1, None]) / dt[:, None]
        A = pts[:, None, :] ** np.arange(4)[None, :, None]
        moments = 1.0 / np.arange(1, 5)
        lw = np.linalg.solve(A, np.broadcast_to(moments, (m - 1, 4))[..., None])[..., 0] * dt[:, None]
        np.add.at(w, ids[start[:, None] + np.arange(4)], lw)
    return w


def _cost(group, t, x, sigma, obstacles, conn, lam=None, constraints=None, breaks=None, rule="trapezoid"):
    """Cost integrated segment by segment."""
    G = get_group(group)
    node, seg, idx, w1, w2 = _stencils(t, breaks)
    v, v1 = _jet_at(G, x, node, idx, w1, w2)
    D2 = v1 + nabla(v, v, conn)
    I = conn.metric
    f = I.inner(D2, D2) + sigma * I.inner(v, v)
    xs = x[..., node, :, :]
    for o in obstacles:
        c = o.clearance(G, xs)
        if np.any(~(c > CLEARANCE_MARGIN)):
            raise InsideObstacle(f"trajectory enters {o.kind} obstacle", o, float(np.min(c)))
        f = f + o.tau / c
    f = 0.5 * f
    if lam is not None and constraints is not None:
        omega_v = v[..., list(constraints.indices)] * np.array(constraints.signs)
        f = f + np.sum(lam[node] * omega_v, axis=-1)
    return f @ _quad_weights(t[node], seg, rule)


def functional_J(
    tr: Trajectory,
    sigma: float,
    obstacles=(),
    conn: Connection | None = None,
    constraints=None,
    breaks=None,
    rule: str = "trapezoid",
):
    """Trapezoidal value of the cost (augmented when ``constraints`` are given).

    Args:
        tr: sampled trajectory; duplicate knot samples are ignored.
        sigma: tension weight.
        obstacles: obstacles whose potentials enter the cost.
        conn: connection of the metric; unit metric if omitted.
        constraints: when given together with ``tr.lam``, adds ``int lambda . omega(v)``.
        breaks: knot times; the integrand may jump there, so each segment is
            integrated on its own.
        rule: ``trapezoid`` or ``cubic`` quadrature.

    Raises:
        InsideObstacle: if any sample lies inside an obstacle.
    """
    if conn is None:
        conn = Connection.for_metric(MetricTensor.identity(tr.group))
    t, x, lam = _unique_samples(tr.t, tr.x, tr.lam if constraints is not None else None)
    return float(_cost(tr.group, t, x, sigma, obstacles, conn, lam, constraints, breaks, rule))


def _perturbed_J(group, t, x, fields, eps, sigma, obstacles, conn, lam, constraints, breaks, rule):
    """J at ``x exp(eps X)`` for a stack of fields; ``inf`` where a sample enters an obstacle."""
    G = get_group(group)
    xs = x[None] @ G.exp(eps * fields)
    out = np.full(fields.shape[0], np.inf)
    ok = np.ones(fields.shape[0], bool)
    for o in obstacles:
        ok &= np.all(o.clearance(G, xs) > CLEARANCE_MARGIN, axis=-1)
    if ok.any():
        out[ok] = _cost(group, t, xs[ok], sigma, obstacles, conn, lam, constraints, breaks, rule)
    return out


def first_variations(
    tr: Trajectory,
    p,
    n_dirs: int = 50,
    eps: float = 1e-4,
    seed: int = 0,
    fields=None,
    max_retries: int = 5,
    rule: str = "cubic",
) -> np.ndarray:
    """Central differences ``(J(eps) - J(-eps)) / (2 eps)`` along random bump fields.

    Directions that push a sample into an obstacle are halved and retried.
    The default fourth-order quadrature keeps the discretization error of the
    derivative well below that of the trapezoidal rule at the same step.
    """
    G = get_group(tr.group)
    conn = Connection.for_metric(p.metric)
    cons = p.constraints
    t, x, lam = _unique_samples(tr.t, tr.x, tr.lam if cons is not None else None)
    if fields is None:
        rng = np.random.default_rng(seed)
        c = rng.normal(size=(n_dirs, p.n_segments, G.dim))
        c /= np.linalg.norm(c, axis=-1, keepdims=True)
        fields = np.stack([PerturbationField.bump(t, p.times, ci).values for ci in c])
    else:
        fields = np.stack([f.values if isinstance(f, PerturbationField) else np.asarray(f) for f in fields])
        if fields.shape[1] != t.size:
            raise ValueError("perturbation fields must be sampled at the trajectory times")
    result = np.full(fields.shape[0], np.nan)
    todo = np.arange(fields.shape[0])
    scale = np.ones(fields.shape[0])
    for _ in range(max_retries + 1):
        F = fields[todo] * scale[todo, None, None]
        jp = _perturbed_J(tr.group, t, x, F, eps, p.sigma, p.obstacles, conn, lam, cons, p.times, rule)
        jm = _perturbed_J(tr.group, t, x, F, -eps, p.sigma, p.obstacles, conn, lam, cons, p.times, rule)
        ok = np.isfinite(jp) & np.isfinite(jm)
        result[todo[ok]] = (jp[ok] - jm[ok]) / (2.0 * eps * scale[todo[ok]])
        todo = todo[~ok]
        if todo.size == 0:
            break
        scale[todo] *= 0.5
    if todo.size:
        raise InsideObstacle(f"{todo.size} perturbation directions stayed inside an obstacle after retries")
    return result


def stationarity_test(
    sol, p, n_dirs: int = 50, eps: float = 1e-4, h: float = 1e-3, scheme: str = "rk4", seed: int = 0, rule: str = "cubic"
) -> float:
    """Largest first variation of the cost over random admissible directions.

    A :class:`~geospline.shooting.Solution` is re-integrated from its
    unknowns at step ``h`` before testing; a :class:`Trajectory` is used as is.
    Values near zero (``O(h + eps^2)``) indicate an extremal.
    """
    from .shooting import Solution, assemble_solution

    if isinstance(sol, Solution):
        fine = assemble_solution(p, sol.unknowns, h=h, scheme=scheme)
        if fine.penalized:
            raise InsideObstacle("re-integrated solution enters an obstacle")
        tr = fine.trajectory
    else:
        tr = sol
    return float(np.max(np.abs(first_variations(tr, p, n_dirs, eps, seed, rule=rule))))


def subgroup_interpolant(p, h: float = 1e-3) -> Trajectory:
    """Piecewise one-parameter subgroup curve through the knots of ``p``.

    It matches every knot but ignores the cost, so it serves as a
    non-stationary reference for :func:`stationarity_test`.
    """
    G = get_group(p.group)
    ts, xs, vs = [], [], []
    for i, ((t0, g0), (t1, g1)) in enumerate(zip(p.knots, p.knots[1:])):
        xi = G.log(inverse_matrix(G, g0.matrix) @ g1.matrix) / (t1 - t0)
        s = np.linspace(0.0, t1 - t0, step_count(t0, t1, h) + 1)
        if i < p.n_segments - 1:
            s = s[:-1]
        ts.append(t0 + s)
        xs.append(g0.matrix @ G.exp(s[:, None] * xi))
        vs.append(np.tile(xi, (s.size, 1)))
    t = np.concatenate(ts)
    v = np.concatenate(vs)
    lam = None if p.constraints is None else np.zeros((t.size, p.constraints.k))
    return Trajectory(G.name, t, np.concatenate(xs), v, np.zeros_like(v), np.zeros_like(v), lam, "exact", h, np.array([]))

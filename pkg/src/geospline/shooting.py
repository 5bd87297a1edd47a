"""Multi-segment shooting for the interpolation boundary value problem.

Unknowns are the initial ``v'(0)``, ``v''(0)``, the value of ``v''`` right
after each interior knot and, under constraints, the multipliers at the start
and after each knot. Residuals are knot and terminal pose errors (group log)
plus the terminal velocity mismatch. A damped Newton iteration with a
forward-difference Jacobian drives them to zero; all Jacobian columns are
propagated as one stacked batch.
"""

from __future__ import annotations

import logging
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import ConstraintSpec, ExtremalModel, ExtremalState, abnormal_residual, build_model
from .integrate import Scheme, Trajectory, propagate
from .lie_groups import GroupElement, LogBranchError, MetricTensor, get_group, inverse_matrix
from .potentials import CLEARANCE_MARGIN, InsideObstacle

logger = logging.getLogger(__name__)

_DEAD_PENALTY = 1e3


class ValidationError(ValueError):
    """The problem data violate a precondition (ordering, admissibility, shapes)."""


class NoConvergence(RuntimeError):
    """Newton stopped without meeting the tolerance; ``solution`` holds the best iterate."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


@dataclass(frozen=True)
class SolverOptions:
    """Discretization and Newton settings."""

    h: float = 0.01
    tol: float = 1e-8
    max_iters: int = 100
    fd_epsilon: float = 1e-6
    scheme: str = "euler"
    max_halvings: int = 30
    threads: int | None = None

    def __post_init__(self):
        if not self.h > 0:
            raise ValidationError(f"step size h must be positive, got {self.h}")
        if not self.tol > 0:
            raise ValidationError(f"tolerance must be positive, got {self.tol}")
        if int(self.max_iters) < 0:
            raise ValidationError("max_iters must be non-negative")
        if not self.fd_epsilon > 0:
            raise ValidationError("fd_epsilon must be positive")
        try:
            object.__setattr__(self, "scheme", Scheme(str(self.scheme).lower()).value)
        except ValueError:
            raise ValidationError(f"unknown scheme {self.scheme!r}") from None


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Interpolation problem: knots ``(T_i, x_i)`` including both endpoints.

    Boundary velocities that violate the constraints are projected onto the
    distribution with a warning.
    """

    group: str
    metric: MetricTensor
    sigma: float
    obstacles: tuple
    knots: tuple
    v0: np.ndarray
    vN: np.ndarray
    constraints: ConstraintSpec | None = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    name: str = ""

    def __post_init__(self):
        try:
            G = get_group(self.group)
        except (KeyError, ValueError) as e:
            raise ValidationError(str(e)) from None
        object.__setattr__(self, "group", G.name)
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.metric.group != G.name:
            raise ValidationError(f"metric is for {self.metric.group}, problem is on {G.name}")
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ValidationError(f"sigma must be non-negative, got {self.sigma}")
        object.__setattr__(self, "sigma", float(self.sigma))
        knots = tuple((float(t), g) for t, g in self.knots)
        if len(knots) < 2:
            raise ValidationError("need at least the two boundary poses")
        ts = np.array([t for t, _ in knots])
        if not np.all(np.diff(ts) > 0):
            raise ValidationError(f"knot times must be strictly increasing, got {ts.tolist()}")
        for i, (t, g) in enumerate(knots):
            if not isinstance(g, GroupElement) or g.group != G.name:
                raise ValidationError(f"knot {i} is not a {G.name} element")
            try:
                g.validate()
            except ValueError as e:
                raise ValidationError(f"knot {i}: {e}") from None
        object.__setattr__(self, "knots", knots)
        for o in self.obstacles:
            if not o.supports(G.name):
                raise ValidationError(f"{o.kind} obstacle is not defined on {G.name}")
            for i, (t, g) in enumerate(knots):
                f = float(o.clearance(G, g.matrix))
                if not f > CLEARANCE_MARGIN:
                    raise ValidationError(
                        f"knot {i} (t={t:g}) lies inside {o.kind} obstacle (clearance {f:.6g})"
                    )
        if self.constraints is not None and self.constraints.group != G.name:
            raise ValidationError("constraints belong to another group")
        for name in ("v0", "vN"):
            v = np.array(getattr(self, name), dtype=float).reshape(-1)
            if v.shape != (G.dim,) or not np.all(np.isfinite(v)):
                raise ValidationError(f"{name} must be {G.dim} finite numbers")
            if self.constraints is not None:
                pv = self.constraints.project(v)
                if not np.array_equal(pv, v):
                    warnings.warn(
                        f"{name}={v.tolist()} violates the velocity constraints; projected to {pv.tolist()}",
                        stacklevel=3,
                    )
                    v = pv
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.knots])

    @property
    def n_segments(self) -> int:
        return len(self.knots) - 1

    def model(self) -> ExtremalModel:
        return build_model(self.group, self.metric, self.sigma, self.obstacles, self.constraints)

    def with_solver(self, **kw) -> "ProblemSpec":
        return replace(self, solver=replace(self.solver, **kw))


@dataclass
class Unknowns:
    """Shooting unknowns in full algebra coordinates (constrained entries are zero)."""

    v1_0: np.ndarray
    v2_0: np.ndarray
    jerk_restarts: np.ndarray
    lambda0: np.ndarray | None = None
    lambda_restarts: np.ndarray | None = None

    @classmethod
    def zeros(cls, p: ProblemSpec) -> "Unknowns":
        n, N = get_group(p.group).dim, p.n_segments
        k = 0 if p.constraints is None else p.constraints.k
        lam0 = None if k == 0 else np.zeros(k)
        lam_r = None if k == 0 else np.zeros((N - 1, k))
        return cls(np.zeros(n), np.zeros(n), np.zeros((N - 1, n)), lam0, lam_r)

    def to_vector(self, p: ProblemSpec) -> np.ndarray:
        free = p.model().free
        parts = [self.v1_0[free], self.v2_0[free], np.asarray(self.jerk_restarts)[:, free].ravel()]
        if p.constraints is not None:
            parts += [np.atleast_1d(self.lambda0), np.asarray(self.lambda_restarts).ravel()]
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, u, p: ProblemSpec) -> "Unknowns":
        return cls(*(None if a is None else a[0] for a in _unpack(np.asarray(u)[None], p)))


def _sizes(p: ProblemSpec):
    n = get_group(p.group).dim
    k = 0 if p.constraints is None else p.constraints.k
    return n, k, p.n_segments


def _unpack(U, p: ProblemSpec):
    n, k, N = _sizes(p)
    free = np.arange(n) if p.constraints is None else p.constraints.free
    nf = free.size
    B = U.shape[0]

    def full(block, lead):
        out = np.zeros(lead + (n,))
        out[..., free] = block.reshape(lead + (nf,))
        return out

    o = 0
    v1 = full(U[:, o : o + nf], (B,))
    o += nf
    v2 = full(U[:, o : o + nf], (B,))
    o += nf
    jr = full(U[:, o : o + (N - 1) * nf], (B, N - 1))
    o += (N - 1) * nf
    lam0 = lam_r = None
    if k:
        lam0 = U[:, o : o + k].copy()
        o += k
        lam_r = U[:, o : o + (N - 1) * k].reshape(B, N - 1, k)
        o += (N - 1) * k
    if o != U.shape[1]:
        raise ValueError(f"unknown vector has {U.shape[1]} entries, expected {o}")
    return v1, v2, jr, lam0, lam_r


def n_unknowns(p: ProblemSpec) -> int:
    n, k, N = _sizes(p)
    return (N + 1) * (n - k) + N * k


def n_residuals(p: ProblemSpec) -> int:
    n, k, N = _sizes(p)
    return N * n + n - k


@dataclass
class _Batch:
    residuals: np.ndarray
    alive: np.ndarray
    death_time: np.ndarray
    clearance_min: np.ndarray


class _Shooter:
    def __init__(self, p: ProblemSpec, h=None, scheme=None):
        self.p = p
        self.G = get_group(p.group)
        self.model = p.model()
        self.h = p.solver.h if h is None else float(h)
        self.scheme = p.solver.scheme if scheme is None else scheme
        self.times = p.times
        self.targets_inv = np.stack([inverse_matrix(self.G, g.matrix) for _, g in p.knots])
        self.free = self.model.free

    def initial_batch(self, B):
        x0 = self.p.knots[0][1].matrix
        return np.broadcast_to(x0, (B,) + x0.shape).copy(), np.broadcast_to(self.p.v0, (B, self.G.dim)).copy()

    def run(self, U, record=False):
        """Propagate every row of ``U``; returns residual rows and, if asked, the samples."""
        p, G = self.p, self.G
        B = U.shape[0]
        v1, v2, jr, lam0, lam_r = _unpack(U, p)
        X, V = self.initial_batch(B)
        V1, V2, L = v1, v2, lam0
        alive = np.ones(B, bool)
        death = np.full(B, np.nan)
        cmin = np.full((B, len(self.model.obstacles)), np.inf)
        res, segs = [], []
        for i in range(p.n_segments):
            if i > 0:
                V2 = jr[:, i - 1].copy()
                if L is not None:
                    L = lam_r[:, i - 1].copy()
            pr = propagate(self.model, X, V, V1, V2, L, self.times[i], self.times[i + 1], self.h, self.scheme, record)
            newly = alive & ~pr.alive
            death[newly] = pr.death_time[newly]
            alive &= pr.alive
            cmin = np.minimum(cmin, pr.clearance_min)
            X, V, V1, V2, L = pr.x, pr.v, pr.v1, pr.v2, pr.lam
            res.append(G.log(self.targets_inv[i + 1] @ X, strict=False))
            if record:
                segs.append(pr.record)
        res.append(V[:, self.free] - p.vN[self.free])
        R = np.concatenate(res, axis=-1)
        dead = ~alive | ~np.all(np.isfinite(R), axis=-1)
        if dead.any():
            T0, T = self.times[0], self.times[-1]
            frac = np.where(np.isnan(death), 1.0, (T - np.nan_to_num(death, nan=T0)) / (T - T0))
            Rd = np.nan_to_num(R, nan=1e8, posinf=1e8, neginf=-1e8)
            R = np.where(dead[:, None], Rd * (1.0 + _DEAD_PENALTY * (1.0 + frac[:, None])), R)
            R = np.where(dead[:, None] & (np.abs(R) < 1.0), np.sign(R + 0.5) * _DEAD_PENALTY, R)
            alive &= ~dead
        out = _Batch(R, alive, death, cmin)
        return (out, segs) if record else out


def _thread_count(opt: SolverOptions) -> int:
    if opt.threads is not None:
        return max(1, int(opt.threads))
    env = os.environ.get("GEOSPLINE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logger.warning("ignoring non-integer GEOSPLINE_THREADS=%r", env)
    return 1


def _run_chunked(sh: _Shooter, U, threads):
    if threads <= 1 or U.shape[0] < 2 * threads:
        return sh.run(U)
    chunks = np.array_split(U, threads)
    with ThreadPoolExecutor(max_workers=threads) as ex:
        parts = list(ex.map(sh.run, chunks))
    return _Batch(*(np.concatenate([getattr(b, f) for b in parts]) for f in ("residuals", "alive", "death_time", "clearance_min")))


def residuals(u: Unknowns, p: ProblemSpec) -> np.ndarray:
    """Stacked knot, terminal-pose and terminal-velocity residuals.

    Trajectories that enter an obstacle return an inflated residual instead
    of raising, so a Newton line search can back away.
    """
    vec = u.to_vector(p) if isinstance(u, Unknowns) else np.asarray(u, dtype=float)
    return _Shooter(p).run(vec[None]).residuals[0]


def initial_guess(p: ProblemSpec) -> Unknowns:
    """Constant-acceleration fit to the first segment; all other unknowns zero.

    With ``w = log(x_0^-1 x_1) / T_1`` the mean body velocity over the first
    segment, ``v'(0) = 2 (w - v_0) / T_1``.

    Raises:
        LogBranchError: if two consecutive knots are near a half turn apart.
    """
    G = get_group(p.group)
    u = Unknowns.zeros(p)
    for i in range(p.n_segments):
        (ta, ga), (tb, gb) = p.knots[i], p.knots[i + 1]
        try:
            w = G.log(inverse_matrix(G, ga.matrix) @ gb.matrix, strict=True)
        except LogBranchError as e:
            raise LogBranchError(f"knots {i} and {i + 1} are nearly antipodal: {e}") from None
        if i == 0:
            T1 = tb - ta
            a = 2.0 * (w / T1 - p.v0) / T1
            u.v1_0 = a if p.constraints is None else p.constraints.project(a)
    return u


@dataclass
class Solution:
    """Outcome of :func:`solve` (successful or best failing iterate)."""

    problem: ProblemSpec
    unknowns: Unknowns
    trajectory: Trajectory
    segments: list
    residuals: np.ndarray
    residual_norm: float
    newton_iters: int
    converged: bool
    knot_jerk_jumps: list
    knot_states_minus: list
    clearance_min: np.ndarray
    abnormal_residuals: np.ndarray | None
    history: list
    runtime: float
    penalized: bool = False

    def diagnostics(self) -> dict:
        """JSON-ready summary."""
        return {
            "converged": bool(self.converged),
            "residual_norm": float(self.residual_norm),
            "newton_iters": int(self.newton_iters),
            "residual_history": [float(r) for r in self.history],
            "knot_jerk_jumps": [float(j) for j in self.knot_jerk_jumps],
            "clearance_min": [float(c) for c in self.clearance_min],
            "abnormal_residual_max": None
            if self.abnormal_residuals is None
            else float(np.max(self.abnormal_residuals)),
            "penalized": bool(self.penalized),
            "runtime_s": float(self.runtime),
            "scheme": self.trajectory.scheme,
            "h": float(self.trajectory.h),
            "unknowns": self.unknowns.to_vector(self.problem).tolist(),
        }


def assemble_solution(p: ProblemSpec, u, *, history=(), iters=0, converged=False, runtime=0.0, h=None, scheme=None):
    """Integrate ``u`` once more with recording and package the result."""
    vec = u.to_vector(p) if isinstance(u, Unknowns) else np.asarray(u, dtype=float)
    sh = _Shooter(p, h, scheme)
    batch, segs = sh.run(vec[None], record=True)
    G = sh.G
    seg_trajs, minus, jumps = [], [], []
    for t, X, V, V1, V2, L in segs:
        seg_trajs.append(
            Trajectory(G.name, t, X[0], V[0], V1[0], V2[0], None if L is None else L[0], sh.scheme, sh.h, batch.clearance_min[0])
        )
    for i in range(1, len(seg_trajs)):
        before, after = seg_trajs[i - 1], seg_trajs[i]
        minus.append(before.state(len(before) - 1))
        jumps.append(float(np.linalg.norm(after.v2[0] - before.v2[-1])))
    # stitched samples keep the post-knot state at interior knots
    pieces = seg_trajs
    cat = {}
    for name in ("t", "x", "v", "v1", "v2"):
        arrs = [getattr(pieces[0], name)[:-1] if len(pieces) > 1 else getattr(pieces[0], name)]
        for j, s in enumerate(pieces[1:], start=1):
            a = getattr(s, name)
            arrs.append(a if j == len(pieces) - 1 else a[:-1])
        cat[name] = np.concatenate(arrs)
    lam = None
    if p.constraints is not None:
        arrs = [s.lam if j == len(pieces) - 1 else s.lam[:-1] for j, s in enumerate(pieces)]
        lam = np.concatenate(arrs)
    traj = Trajectory(G.name, cat["t"], cat["x"], cat["v"], cat["v1"], cat["v2"], lam, sh.scheme, sh.h, batch.clearance_min[0])
    abn = None
    if p.constraints is not None:
        mdl = sh.model
        _, ld = mdl(traj.x, traj.v, traj.v1, traj.v2, traj.lam)
        abn = np.array(
            [abnormal_residual(traj.state(i), p.constraints, ld[i]) for i in range(len(traj))]
        )
    R = batch.residuals[0]
    return Solution(
        problem=p,
        unknowns=Unknowns.from_vector(vec, p),
        trajectory=traj,
        segments=seg_trajs,
        residuals=R,
        residual_norm=float(np.linalg.norm(R)),
        newton_iters=int(iters),
        converged=bool(converged),
        knot_jerk_jumps=jumps,
        knot_states_minus=minus,
        clearance_min=batch.clearance_min[0],
        abnormal_residuals=abn,
        history=list(history),
        runtime=float(runtime),
        penalized=not bool(batch.alive[0]),
    )


def _jacobian(evaluate, u, r0, eps):
    steps = eps * (1.0 + np.abs(u))
    b = evaluate(u[None] + np.diag(steps))
    Jm = (b.residuals - r0[None]).T / steps[None]
    bad = ~b.alive
    if bad.any():
        # retry failed columns with a backward difference
        idx = np.flatnonzero(bad)
        bb = evaluate(u[None] - np.diag(steps)[idx])
        cols = (r0[None] - bb.residuals).T / steps[idx][None]
        cols[:, ~bb.alive] = 0.0
        Jm[:, idx] = cols
    return Jm


@dataclass
class _NewtonResult:
    u: np.ndarray
    r: np.ndarray
    norm: float
    history: list
    iters: int
    status: str


def _newton(evaluate, u, *, tol, max_iters, eps, max_halvings, callback=None) -> _NewtonResult:
    """Damped Gauss-Newton on ``evaluate`` (batched residuals) with step halving."""
    b = evaluate(u[None])
    r = b.residuals[0]
    norm = float(np.linalg.norm(r)) if b.alive[0] else np.inf
    history = [norm]
    it = 0
    status = "max_iters"
    if not np.isfinite(norm):
        return _NewtonResult(u, r, float(np.linalg.norm(r)), history, 0, "initial guess not admissible")
    while norm > tol and it < max_iters:
        Jm = _jacobian(evaluate, u, r, eps)
        du = np.linalg.lstsq(Jm, -r, rcond=None)[0]
        if not np.all(np.isfinite(du)):
            status = "singular Jacobian"
            break
        accepted = False
        alphas = 0.5 ** np.arange(max_halvings + 1)
        for chunk in np.array_split(alphas, max(1, (alphas.size + 5) // 6)):
            trial = evaluate(u[None] + chunk[:, None] * du[None])
            tn = np.linalg.norm(trial.residuals, axis=-1)
            tn[~trial.alive] = np.inf
            better = np.flatnonzero(tn < norm)
            if better.size:
                j = better[0]
                u = u + chunk[j] * du
                r, norm = trial.residuals[j], float(tn[j])
                accepted = True
                break
        it += 1
        history.append(norm)
        logger.debug("newton %d residual %.3e", it, norm)
        if callback is not None:
            callback(it, norm)
        if not accepted:
            status = "line search failed"
            break
    return _NewtonResult(u, r, norm, history, it, "converged" if norm <= tol else status)


def marching_guess(p: ProblemSpec, max_iters: int = 40) -> Unknowns:
    """Fit the segments one after another, each to its own end knot.

    The first segment adjusts ``v'(0)``, ``v''(0)`` (and the multipliers) to
    hit the first knot, every later segment adjusts its restart values, and
    the last one also matches the terminal velocity. Short horizons keep
    unstable dynamics under control where a whole-trajectory guess diverges.
    """
    sh = _Shooter(p)
    G, mdl = sh.G, sh.model
    free, k, n = mdl.free, mdl.k, G.dim
    nf = free.size
    N = p.n_segments
    u = initial_guess(p)
    X = p.knots[0][1].matrix[None]
    V = p.v0[None].copy()
    V1 = u.v1_0[None].copy()
    V2 = u.v2_0[None].copy()
    L = None if u.lambda0 is None else u.lambda0[None].copy()
    opt = p.solver
    free_model = build_model(p.group, p.metric, p.sigma, (), p.constraints)
    for i in range(N):
        first, last = i == 0, i == N - 1

        def split(Z):
            B = Z.shape[0]
            o = 0
            v1 = np.broadcast_to(V1, (B, n)).copy()
            if first:
                v1[:, free] = Z[:, :nf]
                o = nf
            v2 = np.zeros((B, n))
            v2[:, free] = Z[:, o : o + nf]
            lam = None if k == 0 else Z[:, o + nf : o + nf + k]
            return v1, v2, lam

        def evaluate(Z, model, i=i, last=last, split=split):
            v1, v2, lam = split(Z)
            B = Z.shape[0]
            pr = propagate(
                model, np.broadcast_to(X, (B,) + X.shape[1:]), np.broadcast_to(V, (B, n)), v1, v2, lam,
                sh.times[i], sh.times[i + 1], sh.h, sh.scheme,
            )
            res = [G.log(sh.targets_inv[i + 1] @ pr.x, strict=False)]
            if last:
                res.append(pr.v[:, free] - p.vN[free])
            R = np.concatenate(res, axis=-1)
            alive = pr.alive & np.all(np.isfinite(R), axis=-1)
            return _Batch(np.nan_to_num(R, nan=1e8, posinf=1e8, neginf=-1e8), alive, pr.death_time, pr.clearance_min)

        z = []
        if first:
            z.append(V1[0, free])
        z.append(V2[0, free] if first else np.zeros(nf))
        if k:
            z.append(L[0])
        z = np.concatenate(z)
        kw = dict(tol=opt.tol, max_iters=max_iters, eps=opt.fd_epsilon, max_halvings=opt.max_halvings)
        # obstacle-free fit first, then the real model from there
        for model in (free_model, mdl):
            with np.errstate(over="ignore", invalid="ignore"):
                res = _newton(lambda Z, model=model: evaluate(Z, model), z, **kw)
            if np.isfinite(res.norm):
                z = res.u
        res.u = z
        v1, v2, lam = split(res.u[None])
        if first:
            u.v1_0, u.v2_0 = v1[0], v2[0]
            if k:
                u.lambda0 = lam[0]
        else:
            u.jerk_restarts[i - 1] = v2[0]
            if k:
                u.lambda_restarts[i - 1] = lam[0]
        pr = propagate(mdl, X, V, v1, v2, lam, sh.times[i], sh.times[i + 1], sh.h, sh.scheme)
        X, V, V1, V2, L = pr.x, pr.v, pr.v1, pr.v2, pr.lam
    return u


def solve(p: ProblemSpec, guess: Unknowns | None = None, *, callback=None) -> Solution:
    """Damped Newton shooting.

    Without an explicit ``guess`` the solver starts from :func:`initial_guess`
    and, if that run fails, retries once from :func:`marching_guess`.

    Args:
        p: validated problem.
        guess: starting unknowns.
        callback: optional ``callback(iteration, residual_norm)``.

    Returns:
        The converged :class:`Solution`.

    Raises:
        NoConvergence: with the best iterate attached as ``solution``.
        InsideObstacle: if even the best iterate penetrates an obstacle.
    """
    opt = p.solver
    start = time.perf_counter()
    sh = _Shooter(p)
    threads = _thread_count(opt)

    def evaluate(U):
        return _run_chunked(sh, U, threads)

    def attempt(g):
        # trial steps may diverge; their norms are compared, never trusted
        with np.errstate(over="ignore", invalid="ignore"):
            return _newton(
                evaluate, g.to_vector(p), tol=opt.tol, max_iters=opt.max_iters, eps=opt.fd_epsilon,
                max_halvings=opt.max_halvings, callback=callback,
            )

    res = attempt(guess if guess is not None else initial_guess(p))
    if res.status != "converged" and guess is None:
        logger.info("direct start failed (%s); retrying from a marching guess", res.status)
        retry = attempt(marching_guess(p))
        if retry.norm < res.norm or not np.isfinite(res.norm):
            retry.history = res.history + retry.history
            retry.iters += res.iters
            res = retry
    converged = res.status == "converged"
    sol = assemble_solution(
        p, res.u, history=res.history, iters=res.iters, converged=converged, runtime=time.perf_counter() - start
    )
    if converged:
        return sol
    if sol.penalized and sol.clearance_min.size and np.min(sol.clearance_min) <= CLEARANCE_MARGIN:
        raise InsideObstacle("best Newton iterate still penetrates an obstacle", None, float(np.min(sol.clearance_min)))
    raise NoConvergence(
        f"Newton did not converge ({res.status}); residual {res.norm:.3e} after {res.iters} iterations", sol
    )

"""Right-hand sides ``v''' = F(x, v, v', v'')`` of the extremal equations.

The general equation is assembled term by term from the connection:

    D4 + R(D2, v) v - sigma D2 + 1/2 sum grad V = lambda' Y + lambda S(v)

where ``D2`` and ``D4`` come from :func:`geometry.covariant_chain`, and ``Y``
and ``S`` encode velocity constraints (absent in the Riemannian case). The
closed forms for SE(3), SO(3) and the unicycle are independent
implementations of the same equation and are cross-checked against it.

All kernels accept leading batch axes so the shooting Jacobian can propagate
many trajectories at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Connection, ConnectionKind, covariant_chain, curvature, nabla
from .lie_groups import SO3, GroupElement, MetricTensor, cross, get_group
from .potentials import (
    CLEARANCE_MARGIN,
    CompactGroupPoint,
    EuclideanSphere,
    InsideObstacle,
    OrientationPoint,
)


@dataclass
class ExtremalState:
    """Pose and body-velocity jet of an extremal at one instant.

    Attributes:
        x: pose matrix (possibly batched).
        v, v1, v2: body velocity and its first two time derivatives.
        lam: Lagrange multipliers, one per constraint, or ``None``.
    """

    group: str
    x: np.ndarray
    v: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    lam: np.ndarray | None = None

    def __post_init__(self):
        G = get_group(self.group)
        self.group = G.name
        self.x = np.asarray(self.x.matrix if isinstance(self.x, GroupElement) else self.x, float)
        for name in ("v", "v1", "v2"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape[-1:] != (G.dim,):
                raise ValueError(f"{name} must have {G.dim} components, got shape {arr.shape}")
            setattr(self, name, arr)
        if self.x.shape[-2:] != (G.size, G.size):
            raise ValueError(f"pose must be {G.size}x{G.size}, got {self.x.shape}")
        if self.lam is not None:
            self.lam = np.atleast_1d(np.asarray(self.lam, dtype=float))

    @property
    def element(self) -> GroupElement:
        return GroupElement(self.group, self.x)


@dataclass(frozen=True, eq=False)
class ConstraintSpec:
    """Velocity constraints ``v_j = 0`` written as left-invariant one-forms.

    The form for index ``j`` is ``omega_j = sign_j e^j``. Its metric dual is
    ``Y_j = I^# omega_j`` and its exterior derivative is represented by the
    map ``S_j u = -I^#(ad_u^* omega_j)``, which is skew for the metric.
    """

    group: str
    metric: MetricTensor
    indices: tuple
    signs: tuple = None
    Y: np.ndarray = field(init=False, repr=False)
    S_maps: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        G = get_group(self.group)
        idx = tuple(int(i) for i in self.indices)
        if len(set(idx)) != len(idx) or any(not 0 <= i < G.dim for i in idx):
            raise ValueError(f"constraint indices must be distinct and in [0, {G.dim}), got {idx}")
        if self.metric.group != G.name:
            raise ValueError("constraint metric belongs to another group")
        signs = (1.0,) * len(idx) if self.signs is None else tuple(float(s) for s in self.signs)
        if len(signs) != len(idx) or any(s not in (1.0, -1.0) for s in signs):
            raise ValueError("constraint signs must be +1 or -1, one per index")
        omegas = np.zeros((len(idx), G.dim))
        omegas[np.arange(len(idx)), list(idx)] = signs
        Y = self.metric.sharp(omegas)
        # S_j e_i = -I^# (ad_{e_i}^T omega_j)
        basis_ad = G.ad_matrix(np.eye(G.dim))  # (i, rows, cols)
        S = -np.einsum("iba,jb->jai", basis_ad, omegas) / self.metric.diag[None, :, None]
        object.__setattr__(self, "group", G.name)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "signs", signs)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "S_maps", S)

    @classmethod
    def unicycle(cls, metric: MetricTensor) -> "ConstraintSpec":
        """Knife-edge constraint ``b2 = 0`` with ``omega = sin(th) dx - cos(th) dy``."""
        return cls("SE2", metric, (2,), (-1.0,))

    @property
    def k(self) -> int:
        return len(self.indices)

    @property
    def free(self) -> np.ndarray:
        n = get_group(self.group).dim
        return np.array([i for i in range(n) if i not in self.indices], dtype=int)

    def S(self, v):
        """``S_j(v)`` for every constraint, stacked on axis -2."""
        return np.einsum("jab,...b->...ja", self.S_maps, v)

    def multiplier_force(self, v, lam, lam_dot):
        """``sum_j lam'_j Y_j + lam_j S_j(v)``."""
        return lam_dot @ self.Y + np.einsum("...j,...ja->...a", lam, self.S(v))

    def project(self, v):
        """Metric-orthogonal projection onto the constraint distribution."""
        out = np.array(v, dtype=float)
        out[..., list(self.indices)] = 0.0
        return out


# ---- potential forces ------------------------------------------------------


def min_clearance(G, obstacles, X) -> np.ndarray:
    """Smallest clearance over ``obstacles`` (``inf`` when there are none)."""
    out = np.full(X.shape[:-2], np.inf)
    for obs in obstacles:
        out = np.minimum(out, obs.clearance(G, X))
    return out


def clearances(G, obstacles, X) -> np.ndarray:
    """Clearance of every obstacle, stacked on the last axis."""
    if not obstacles:
        return np.zeros(X.shape[:-2] + (0,))
    return np.stack([obs.clearance(G, X) for obs in obstacles], axis=-1)


def _require_clear(G, obstacles, X):
    for obs in obstacles:
        f = obs.clearance(G, X)
        if np.any(~(f > CLEARANCE_MARGIN)):
            fmin = float(np.min(f))
            raise InsideObstacle(f"pose is inside {obs.kind} obstacle (clearance {fmin:.3g})", obs, fmin)


def potential_force(G, metric, obstacles, X) -> np.ndarray:
    """``-1/2 sum_r I^#(dV_r)`` in body coordinates; no admissibility check."""
    total = np.zeros(X.shape[:-2] + (G.dim,))
    for obs in obstacles:
        total = total + obs.differential(G, X)
    return -0.5 * metric.sharp(total)


# ---- general assembly ------------------------------------------------------


def _free_terms(v, v1, v2, conn, sigma):
    """``F`` with ``v''' = F + force``: everything except v''' moved right."""
    zero = np.zeros_like(v)
    D2, _, D4_no_v3 = covariant_chain(v, v1, v2, zero, conn)
    return -D4_no_v3 - curvature(D2, v, v, conn) + sigma * D2


def rhs_general(s: ExtremalState, conn: Connection, obstacles=(), sigma: float = 0.0) -> np.ndarray:
    """Extremal equation for an unconstrained left-invariant problem.

    Args:
        s: current state.
        conn: connection of the left-invariant metric.
        obstacles: obstacles contributing potential forces.
        sigma: tension weight on the velocity.

    Returns:
        ``v'''`` in algebra coordinates.

    Raises:
        InsideObstacle: if ``s.x`` is not strictly outside every obstacle.
    """
    G = get_group(conn.group)
    _require_clear(G, obstacles, s.x)
    return _free_terms(s.v, s.v1, s.v2, conn, sigma) + potential_force(G, conn.metric, obstacles, s.x)


def rhs_constrained(s: ExtremalState, conn: Connection, constraints: ConstraintSpec, obstacles=(), sigma=0.0):
    """Normal extremal equation under velocity constraints with multipliers eliminated.

    ``lambda'`` is chosen so the constrained components of ``v'''`` vanish,
    which keeps ``v_j = 0`` along the flow.

    Returns:
        ``(v''', lambda')``.
    """
    G = get_group(conn.group)
    _require_clear(G, obstacles, s.x)
    F = _free_terms(s.v, s.v1, s.v2, conn, sigma) + potential_force(G, conn.metric, obstacles, s.x)
    return _eliminate(F, s.v, s.lam, constraints)


def _eliminate(F, v, lam, cs: ConstraintSpec):
    idx = list(cs.indices)
    base = F + np.einsum("...j,...ja->...a", lam, cs.S(v))
    Ymat = cs.Y[:, idx]  # (k, k) rows: constraint l, cols: component j
    lam_dot = -np.linalg.solve(Ymat.T, base[..., idx, None])[..., 0]
    v3 = base + lam_dot @ cs.Y
    v3[..., idx] = 0.0
    return v3, lam_dot


def abnormal_residual(s: ExtremalState, constraints: ConstraintSpec, lam_dot) -> float:
    """Metric norm of ``sum_j lam'_j Y_j + lam_j S_j(v)``; a diagnostic only."""
    lam = np.zeros(constraints.k) if s.lam is None else s.lam
    w = constraints.multiplier_force(s.v, lam, np.atleast_1d(np.asarray(lam_dot, float)))
    return float(np.max(constraints.metric.norm(w)))


# ---- closed forms ----------------------------------------------------------


def _se3_closed(v, v1, v2, sigma):
    a, a1, a2 = v[..., :3], v1[..., :3], v2[..., :3]
    b, b1, b2 = v[..., 3:], v1[..., 3:], v2[..., 3:]
    cr = cross
    a3 = cr(a2, a) + sigma * a1
    ab = cr(a, b)
    b3 = (
        3.0 * cr(b2, a)
        + sigma * b1
        + 3.0 * cr(b1, a1)
        - 3.0 * cr(cr(b1, a), a)
        + cr(b, a2)
        + sigma * ab
        - 3.0 * cr(cr(b, a1), a)
        + cr(b, cr(a1, a))
        - cr(a, cr(a, ab))
    )
    return np.concatenate([a3, b3], axis=-1)


def rhs_se3_body(s: ExtremalState, obstacles=(), sigma: float = 0.0) -> np.ndarray:
    """Cubic-in-tension equations on SE(3) with unit metric in twist coordinates.

    With ``v = (a, b)``:

        a''' = a'' x a + sigma a'
        b''' = 3 b'' x a + sigma b' + 3 b' x a' - 3 (b' x a) x a + b x a''
               + sigma a x b - 3 (b x a') x a + b x (a' x a) - a x (a x (a x b))
               + sum_i tau_i / f_i^2 R^T (r - p_i)

    Obstacles must be :class:`EuclideanSphere` instances.
    """
    G = get_group("SE3")
    if any(not isinstance(o, EuclideanSphere) for o in obstacles):
        raise TypeError("rhs_se3_body handles sphere obstacles only")
    _require_clear(G, obstacles, s.x)
    return _se3_closed(s.v, s.v1, s.v2, sigma) + potential_force(G, MetricTensor.identity("SE3"), obstacles, s.x)


def rhs_so3(s: ExtremalState, Q, tau: float, sigma: float = 0.0) -> np.ndarray:
    """SO(3) cubic in tension repelled from the orientation ``Q`` (unit metric).

    ``v''' = v'' x v + sigma v' - tau / d^4 log(R^T Q)`` with ``d = |log(Q^T R)|``.
    A zero ``tau`` drops the potential entirely.
    """
    v3 = cross(s.v2, s.v) + sigma * s.v1
    if tau == 0.0:
        return v3
    Qm = Q.matrix if isinstance(Q, GroupElement) else np.asarray(Q, float)
    xi = SO3.log(np.swapaxes(s.x, -1, -2) @ Qm, strict=True)
    d2 = np.sum(xi * xi, axis=-1)
    if np.any(~(d2 > CLEARANCE_MARGIN)):
        raise InsideObstacle("orientation coincides with the obstacle", None, float(np.min(d2)))
    return v3 - (tau / d2**2)[..., None] * xi


def rhs_compact(s: ExtremalState, obstacle: CompactGroupPoint | None, sigma: float = 0.0, metric=None) -> np.ndarray:
    """Bi-invariant extremal equation ``v''' = sigma v' + [v'', v] - 1/2 grad V_h``."""
    G = get_group(s.group)
    if metric is None:
        metric = MetricTensor.identity(G.name)
    v3 = G.bracket(s.v2, s.v) + sigma * s.v1
    if obstacle is None:
        return v3
    _require_clear(G, [obstacle], s.x)
    return v3 - 0.5 * metric.sharp(obstacle.differential(G, s.x, strict=True))


def _unicycle_closed(v, v1, v2, lam, sigma, J, m):
    a, a1, a2 = v[..., 0], v1[..., 0], v2[..., 0]
    b, bp, bpp = v[..., 1:], v1[..., 1:], v2[..., 1:]

    def Jm(u):
        return np.stack([u[..., 1], -u[..., 0]], axis=-1)

    a_, a1_, a2_ = a[..., None], a1[..., None], a2[..., None]
    lam0 = lam[..., 0]
    a3 = sigma * a1 - lam0 * b[..., 0] / J
    rest = (
        3.0 * a_ * a1_ * b
        + 3.0 * a_**2 * bp
        - (a_**3 - a2_) * Jm(b)
        + 3.0 * a1_ * Jm(bp)
        + 3.0 * a_ * Jm(bpp)
        + sigma * (bp - a_ * Jm(b))
    )
    rest = rest + (lam0 / m)[..., None] * np.stack([a, np.zeros_like(a)], axis=-1)
    return a3, rest


def rhs_se2_unicycle(s: ExtremalState, obstacles=(), sigma=0.0, m=1.0, J=1.0):
    """Knife-edge unicycle extremals with the multiplier eliminated.

    The translational equation carries ``- lambda'/m (0, 1)``; ``lambda'`` is
    picked so that ``b2''' = 0``.

    Returns:
        ``(v''', lambda')`` where ``v''' = (a''', b1''', 0)``.
    """
    G = get_group("SE2")
    if any(not isinstance(o, EuclideanSphere) for o in obstacles):
        raise TypeError("rhs_se2_unicycle handles circle obstacles only")
    _require_clear(G, obstacles, s.x)
    lam = np.zeros(s.v.shape[:-1] + (1,)) if s.lam is None else s.lam
    metric = MetricTensor("SE2", [J, m, m])
    a3, b3 = _unicycle_closed(s.v, s.v1, s.v2, lam, sigma, J, m)
    b3 = b3 + potential_force(G, metric, obstacles, s.x)[..., 1:]
    lam_dot = m * b3[..., 1]
    v3 = np.concatenate([a3[..., None], b3[..., :1], np.zeros_like(a3)[..., None]], axis=-1)
    return v3, lam_dot[..., None]


# ---- models ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExtremalModel:
    """Batched vector field of one problem class.

    Calling the model returns ``(v''', lambda')`` for stacked states without
    admissibility checks; callers monitor clearance themselves.
    """

    group: str
    metric: MetricTensor
    sigma: float
    obstacles: tuple = ()
    constraints: ConstraintSpec | None = None
    kernel: str = "general"
    connection: Connection = field(init=False, repr=False)

    def __post_init__(self):
        G = get_group(self.group)
        object.__setattr__(self, "group", G.name)
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "connection", Connection.for_metric(self.metric))
        for o in self.obstacles:
            if not o.supports(G.name):
                raise ValueError(f"{o.kind} obstacle is not defined on {G.name}")
        if self.kernel not in _KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        ok = {
            "general": True,
            "se3_body": G.name == "SE3" and self.metric.is_identity() and self.constraints is None,
            "so3": G.name == "SO3" and self.connection.kind is ConnectionKind.BI_INVARIANT,
            "unicycle": G.name == "SE2" and self.constraints is not None
            and self.constraints.indices == (2,) and self.constraints.signs == (-1.0,),
        }[self.kernel]
        if not ok:
            raise ValueError(f"kernel {self.kernel!r} does not apply to this problem")

    @property
    def dim(self) -> int:
        return get_group(self.group).dim

    @property
    def k(self) -> int:
        return 0 if self.constraints is None else self.constraints.k

    @property
    def free(self) -> np.ndarray:
        return np.arange(self.dim) if self.constraints is None else self.constraints.free

    def force(self, X):
        return potential_force(get_group(self.group), self.metric, self.obstacles, X)

    def __call__(self, X, v, v1, v2, lam=None):
        return _KERNELS[self.kernel](self, X, v, v1, v2, lam)

    def min_clearance(self, X):
        return min_clearance(get_group(self.group), self.obstacles, X)


def _k_general(mdl, X, v, v1, v2, lam):
    F = _free_terms(v, v1, v2, mdl.connection, mdl.sigma) + mdl.force(X)
    if mdl.constraints is None:
        return F, None
    return _eliminate(F, v, lam, mdl.constraints)


def _k_se3(mdl, X, v, v1, v2, lam):
    return _se3_closed(v, v1, v2, mdl.sigma) + mdl.force(X), None


def _k_so3(mdl, X, v, v1, v2, lam):
    return cross(v2, v) + mdl.sigma * v1 + mdl.force(X), None


def _k_unicycle(mdl, X, v, v1, v2, lam):
    J, m = mdl.metric.diag[0], mdl.metric.diag[1]
    a3, b3 = _unicycle_closed(v, v1, v2, lam, mdl.sigma, J, m)
    f = mdl.force(X)
    a3 = a3 + f[..., 0]
    b3 = b3 + f[..., 1:]
    lam_dot = m * b3[..., 1]
    v3 = np.concatenate([a3[..., None], b3[..., :1], np.zeros_like(a3)[..., None]], axis=-1)
    return v3, lam_dot[..., None]


_KERNELS = {"general": _k_general, "se3_body": _k_se3, "so3": _k_so3, "unicycle": _k_unicycle}


def build_model(group, metric: MetricTensor, sigma: float, obstacles=(), constraints=None, kernel="auto"):
    """Pick the fastest applicable kernel unless one is requested."""
    G = get_group(group)
    if kernel == "auto":
        kernel = "general"
        if G.name == "SE3" and metric.is_identity() and constraints is None:
            kernel = "se3_body"
        elif G.name == "SO3" and np.ptp(metric.diag) == 0.0:
            kernel = "so3"
        elif G.name == "SE2" and constraints is not None and constraints.indices == (2,) and constraints.signs == (-1.0,):
            kernel = "unicycle"
    return ExtremalModel(G.name, metric, float(sigma), tuple(obstacles), constraints, kernel)


__all__ = [
    "ConstraintSpec",
    "ExtremalModel",
    "ExtremalState",
    "InsideObstacle",
    "OrientationPoint",
    "abnormal_residual",
    "build_model",
    "clearances",
    "min_clearance",
    "potential_force",
    "rhs_compact",
    "rhs_constrained",
    "rhs_general",
    "rhs_se2_unicycle",
    "rhs_se3_body",
    "rhs_so3",
]

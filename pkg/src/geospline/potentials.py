"""Repulsive obstacle potentials and their body-frame gradients.

Each obstacle exposes a *clearance* (a positive scalar that reaches zero on
the obstacle boundary): ``|r - p|^2 - c`` for spheres and circles, the
squared geodesic distance for point obstacles on SO(3). The potential is
``tau / clearance``.

The body gradient is the metric gradient left-translated to the algebra,
``I^#(dV)``, where ``dV`` holds the derivatives of V along ``x exp(t e_i)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lie_groups import SO3, GroupElement, MetricTensor, get_group, inverse_matrix

CLEARANCE_MARGIN = 1e-9


class InsideObstacle(ValueError):
    """A pose lies on or inside an obstacle (clearance below the margin)."""

    def __init__(self, message, obstacle=None, clearance=None, time=None):
        super().__init__(message)
        self.obstacle = obstacle
        self.clearance = clearance
        self.time = time


@dataclass(frozen=True, eq=False)
class EuclideanSphere:
    """Sphere (SE(3)) or circle (SE(2)) ``|r - p|^2 = offset`` in the workspace."""

    center: np.ndarray
    offset: float
    tau: float
    kind = "sphere"

    def __post_init__(self):
        c = np.array(self.center, dtype=float).reshape(-1)
        if c.shape not in ((2,), (3,)):
            raise ValueError(f"sphere center must have 2 or 3 coordinates, got {c.shape}")
        if not self.offset > 0.0:
            raise ValueError(f"sphere offset must be positive, got {self.offset}")
        if not self.tau > 0.0:
            raise ValueError(f"obstacle strength tau must be positive, got {self.tau}")
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "tau", float(self.tau))

    def supports(self, group) -> bool:
        return get_group(group).trans_dim == self.center.size

    def clearance(self, G, X):
        d = G.rot_dim
        diff = X[..., :d, d] - self.center
        return np.sum(diff * diff, axis=-1) - self.offset

    def differential(self, G, X):
        d = G.rot_dim
        R, r = X[..., :d, :d], X[..., :d, d]
        f = np.sum((r - self.center) ** 2, axis=-1) - self.offset
        coef = -2.0 * self.tau / f**2
        trans = coef[..., None] * np.einsum("...ji,...j->...i", R, r - self.center)
        rot = np.zeros(X.shape[:-2] + (G.rot_coords,))
        return np.concatenate([rot, trans], axis=-1)


@dataclass(frozen=True, eq=False)
class OrientationPoint:
    """Forbidden orientation ``Q`` on SO(3); V(R) = tau / |log(Q^T R)|^2."""

    Q: GroupElement
    tau: float
    kind = "orientation"

    def __post_init__(self):
        Q = self.Q if isinstance(self.Q, GroupElement) else GroupElement("SO3", self.Q)
        if Q.group != "SO3":
            raise ValueError("orientation obstacles live on SO3")
        Q.validate()
        if not self.tau > 0.0:
            raise ValueError(f"obstacle strength tau must be positive, got {self.tau}")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "tau", float(self.tau))

    def supports(self, group) -> bool:
        return get_group(group) is SO3

    def _log_to_obstacle(self, X, strict=False):
        # body-frame tangent pointing from R towards Q
        return SO3.log(np.swapaxes(X, -1, -2) @ self.Q.matrix, strict)

    def clearance(self, G, X):
        xi = self._log_to_obstacle(X)
        return np.sum(xi * xi, axis=-1)

    def differential(self, G, X, strict=False):
        xi = self._log_to_obstacle(X, strict)
        d2 = np.sum(xi * xi, axis=-1)
        return (2.0 * self.tau / d2**2)[..., None] * xi


@dataclass(frozen=True, eq=False)
class CompactGroupPoint:
    """Point obstacle ``h`` on a compact group with bi-invariant metric; V = tau / d^2(h, g)."""

    h: GroupElement
    tau: float
    kind = "group_point"

    def __post_init__(self):
        if not isinstance(self.h, GroupElement):
            raise TypeError("h must be a GroupElement")
        if self.h.group != "SO3":
            raise ValueError("point obstacles need a compact group; only SO3 is supported")
        self.h.validate()
        if not self.tau > 0.0:
            raise ValueError(f"obstacle strength tau must be positive, got {self.tau}")
        object.__setattr__(self, "tau", float(self.tau))

    def supports(self, group) -> bool:
        return get_group(group).name == self.h.group

    def _inverse_exp(self, G, X, strict=False):
        # exp_g^{-1} h, left-translated to the algebra
        return G.log(inverse_matrix(G, X) @ self.h.matrix, strict)

    def clearance(self, G, X):
        xi = self._inverse_exp(G, X)
        return np.sum(xi * xi, axis=-1)

    def differential(self, G, X, strict=False):
        xi = self._inverse_exp(G, X, strict)
        d2 = np.sum(xi * xi, axis=-1)
        return (2.0 * self.tau / d2**2)[..., None] * xi


Obstacle = EuclideanSphere | OrientationPoint | CompactGroupPoint


def _check(obs, g: GroupElement):
    if not obs.supports(g.group):
        raise ValueError(f"{obs.kind} obstacle is not defined on {g.group}")
    G = get_group(g.group)
    f = float(obs.clearance(G, g.matrix))
    if not f > CLEARANCE_MARGIN:
        raise InsideObstacle(f"pose is inside {obs.kind} obstacle (clearance {f:.3g})", obs, f)
    return G, f


def clearance(obs, g: GroupElement) -> float:
    """Signed clearance of ``g`` from the obstacle boundary."""
    return float(obs.clearance(get_group(g.group), g.matrix))


def potential(obs, g: GroupElement) -> float:
    """Value of the repulsive potential ``tau / clearance``."""
    _, f = _check(obs, g)
    return obs.tau / f


def grad_body(obs, g: GroupElement, metric: MetricTensor | None = None) -> np.ndarray:
    """Left-translated gradient T_x L_{x^-1} grad V(x).

    Args:
        obs: the obstacle.
        g: pose outside the obstacle.
        metric: left-invariant metric defining the gradient; identity if omitted.
    """
    G, _ = _check(obs, g)
    if isinstance(obs, EuclideanSphere):
        dV = obs.differential(G, g.matrix)
    else:
        dV = obs.differential(G, g.matrix, strict=True)
    return dV if metric is None else metric.sharp(dV)


def total_potential(obstacles, g: GroupElement) -> float:
    return sum(potential(o, g) for o in obstacles)

"""Levi-Civita connection and curvature of left-invariant metrics, restricted to the algebra.

Every connection here acts on algebra coordinates: ``nabla(w, u, conn)`` is
the covariant derivative of the left-invariant field of ``u`` along that of
``w``. Closed forms exist for the special cases the planners use; the general
formula goes through the coadjoint action and doubles as their reference.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .lie_groups import SE2, SE3, SO3, MetricTensor, cross, get_group


class ConnectionKind(enum.Enum):
    GENERAL = "general"
    SE3_CLOSED = "se3_closed"
    SE3_UNIT = "se3_unit"
    SE2_CLOSED = "se2_closed"
    BI_INVARIANT = "bi_invariant"


_ALLOWED = {
    ConnectionKind.SE3_CLOSED: {"SE3"},
    ConnectionKind.SE3_UNIT: {"SE3"},
    ConnectionKind.SE2_CLOSED: {"SE2"},
    ConnectionKind.BI_INVARIANT: {"SO3"},
    ConnectionKind.GENERAL: {"SO3", "SE2", "SE3"},
}


@dataclass(frozen=True)
class Connection:
    """A connection kind bound to its group and metric."""

    kind: ConnectionKind
    group: str
    metric: MetricTensor = field(default=None)

    def __post_init__(self):
        kind = ConnectionKind(self.kind)
        G = get_group(self.group)
        if G.name not in _ALLOWED[kind]:
            raise ValueError(f"connection {kind.value} is not defined on {G.name}")
        metric = self.metric if self.metric is not None else MetricTensor.identity(G.name)
        if metric.group != G.name:
            raise ValueError(f"metric for {metric.group} used with {G.name}")
        if kind is ConnectionKind.SE3_UNIT and not metric.is_identity():
            raise ValueError("se3_unit connection requires J = M = I")
        if kind is ConnectionKind.BI_INVARIANT and np.ptp(metric.diag) != 0.0:
            raise ValueError("bi-invariant connection requires an isotropic metric")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "group", G.name)
        object.__setattr__(self, "metric", metric)

    @classmethod
    def for_metric(cls, metric: MetricTensor) -> "Connection":
        """Pick the closed form matching ``metric`` when one exists."""
        G = get_group(metric.group)
        if G is SE3:
            kind = ConnectionKind.SE3_UNIT if metric.is_identity() else ConnectionKind.SE3_CLOSED
        elif G is SE2:
            kind = ConnectionKind.SE2_CLOSED
        elif np.ptp(metric.diag) == 0.0:
            kind = ConnectionKind.BI_INVARIANT
        else:
            kind = ConnectionKind.GENERAL
        return cls(kind, G.name, metric)


def _coords(v, conn):
    v = np.asarray(v, dtype=float)
    n = get_group(conn.group).dim
    if v.shape[-1:] != (n,):
        raise ValueError(f"{conn.group} algebra vectors have {n} coordinates, got shape {v.shape}")
    return v


def coadjoint(w, alpha, group):
    """``ad_w^* alpha``: the covector z -> alpha([w, z])."""
    G = get_group(group)
    return np.einsum("...ji,...j->...i", G.ad_matrix(w), alpha)


def _nabla_general(w, u, conn):
    G = get_group(conn.group)
    I = conn.metric
    sym = coadjoint(w, I.flat(u), G) + coadjoint(u, I.flat(w), G)
    return 0.5 * G.bracket(w, u) - 0.5 * I.sharp(sym)


def _nabla_se3_closed(w, u, conn):
    Jd, Md = conn.metric.J, conn.metric.m
    a, b = w[..., :3], w[..., 3:]
    c, d = u[..., :3], u[..., 3:]
    rot = cross(a, c) + (
        cross(a, Jd * c) + cross(b, Md * d) + cross(c, Jd * a) + cross(d, Md * b)
    ) / Jd
    trans = cross(b, c) + cross(a, d) + (cross(a, Md * d) + cross(c, Md * b)) / Md
    return 0.5 * np.concatenate([rot, trans], axis=-1)


def _nabla_se3_unit(w, u, conn):
    a = w[..., :3]
    c, d = u[..., :3], u[..., 3:]
    return np.concatenate([0.5 * cross(a, c), cross(a, d)], axis=-1)


def _nabla_se2(w, u, conn):
    # (0, -a Jd) with Jd = (d2, -d1)
    a = w[..., 0]
    d1, d2 = u[..., 1], u[..., 2]
    return np.stack([np.zeros_like(a * d1), -a * d2, a * d1], axis=-1)


def _nabla_bi(w, u, conn):
    return 0.5 * get_group(conn.group).bracket(w, u)


_NABLA = {
    ConnectionKind.GENERAL: _nabla_general,
    ConnectionKind.SE3_CLOSED: _nabla_se3_closed,
    ConnectionKind.SE3_UNIT: _nabla_se3_unit,
    ConnectionKind.SE2_CLOSED: _nabla_se2,
    ConnectionKind.BI_INVARIANT: _nabla_bi,
}


def nabla(w, u, conn: Connection) -> np.ndarray:
    """Covariant derivative of ``u`` along ``w`` (both algebra coordinates)."""
    w, u = np.broadcast_arrays(_coords(w, conn), _coords(u, conn))
    return _NABLA[conn.kind](w, u, conn)


def curvature_oracle(u, w, z, conn: Connection) -> np.ndarray:
    """R(u, w)z evaluated from its definition through :func:`nabla`."""
    G = get_group(conn.group)
    return (
        nabla(u, nabla(w, z, conn), conn)
        - nabla(w, nabla(u, z, conn), conn)
        - nabla(G.bracket(u, w), z, conn)
    )


def curvature(u, w, z, conn: Connection) -> np.ndarray:
    """Restricted curvature tensor R(u, w)z."""
    u, w, z = np.broadcast_arrays(_coords(u, conn), _coords(w, conn), _coords(z, conn))
    kind = conn.kind
    if kind is ConnectionKind.SE2_CLOSED:
        return np.zeros_like(z)
    if kind is ConnectionKind.BI_INVARIANT:
        G = get_group(conn.group)
        return -0.25 * G.bracket(G.bracket(u, w), z)
    if kind is ConnectionKind.SE3_UNIT:
        a, c, h = u[..., :3], w[..., :3], z[..., :3]
        rot = -0.25 * cross(cross(a, c), h)
        return np.concatenate([rot, np.zeros_like(rot)], axis=-1)
    return curvature_oracle(u, w, z, conn)


def covariant_chain(v, v1, v2, v3, conn: Connection):
    """Body coordinates of the second, third and fourth covariant derivatives of a curve.

    Args:
        v, v1, v2, v3: body velocity and its first three time derivatives.
        conn: connection of the left-invariant metric.

    Returns:
        ``(D2, D3, D4)`` as algebra arrays.
    """

    def nab(p, q):
        return nabla(p, q, conn)

    nvv = nab(v, v)
    D2 = v1 + nvv
    D3 = v2 + nab(v1, v) + 2.0 * nab(v, v1) + nab(v, nvv)
    D4 = (
        v3
        + nab(v2, v)
        + 3.0 * nab(v1, v1)
        + 3.0 * nab(v, v2)
        + nab(v1, nvv)
        + 2.0 * nab(v, nab(v1, v))
        + 3.0 * nab(v, nab(v, v1))
        + nab(v, nab(v, nvv))
    )
    return D2, D3, D4

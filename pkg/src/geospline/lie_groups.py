"""Kinematic kernels for the matrix groups SO(3), SE(2) and SE(3).

Algebra elements are plain numpy arrays of coordinates in the ordered basis
used throughout the package: rotational coordinates first, translational
coordinates after (``(a, b)`` with ``a`` in R^3 and ``b`` in R^3 for se(3),
``(a, b1, b2)`` for se(2)). Group elements are homogeneous matrices.

All kernels accept leading batch axes: an algebra array has shape
``(..., n)`` and a group matrix ``(..., k, k)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SMALL_ANGLE = 1e-4
PI_MARGIN = 1e-6
ORTHO_TOL = 1e-10
ALGEBRA_TOL = 1e-12


class LogBranchError(ValueError):
    """Raised when a rotation angle is too close to pi for the principal log."""


def skew(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def cross(a, b) -> np.ndarray:
    """Batched 3-vector cross product; much cheaper than ``np.cross`` on small arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def unskew(m: np.ndarray) -> np.ndarray:
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def _rodrigues_coeffs(th2: np.ndarray):
    """Return sin(t)/t, (1-cos t)/t^2 and (t-sin t)/t^3 with small-angle series."""
    th = np.sqrt(th2)
    small = th < SMALL_ANGLE
    safe = np.where(small, 1.0, th)
    A = np.where(small, 1.0 - th2 / 6.0 + th2 * th2 / 120.0, np.sin(safe) / safe)
    B = np.where(small, 0.5 - th2 / 24.0 + th2 * th2 / 720.0, (1.0 - np.cos(safe)) / safe**2)
    C = np.where(small, 1.0 / 6.0 - th2 / 120.0 + th2 * th2 / 5040.0, (safe - np.sin(safe)) / safe**3)
    return A, B, C


def so3_exp(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    A, B, _ = _rodrigues_coeffs(np.sum(w * w, axis=-1))
    W = skew(w)
    return np.eye(3) + A[..., None, None] * W + B[..., None, None] * (W @ W)


def so3_left_jacobian(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    _, B, C = _rodrigues_coeffs(np.sum(w * w, axis=-1))
    W = skew(w)
    return np.eye(3) + B[..., None, None] * W + C[..., None, None] * (W @ W)


def so3_left_jacobian_inv(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    th2 = np.sum(w * w, axis=-1)
    th = np.sqrt(th2)
    small = th < SMALL_ANGLE
    safe = np.where(small, 1.0, th)
    D = np.where(
        small,
        1.0 / 12.0 + th2 / 720.0 + th2 * th2 / 30240.0,
        (1.0 - safe * np.sin(safe) / (2.0 * (1.0 - np.cos(safe)))) / safe**2,
    )
    W = skew(w)
    return np.eye(3) - 0.5 * W + D[..., None, None] * (W @ W)


def so3_log(R: np.ndarray, strict: bool = True) -> np.ndarray:
    """Principal logarithm of rotation matrices.

    With ``strict`` a rotation within ``PI_MARGIN`` of angle pi raises
    :class:`LogBranchError`; otherwise the nearest principal value is returned.
    """
    R = np.asarray(R, dtype=float)
    s = 0.5 * unskew(R - np.swapaxes(R, -1, -2))
    sin_th = np.linalg.norm(s, axis=-1)
    cos_th = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    th = np.arctan2(sin_th, cos_th)
    if strict and np.any(th > np.pi - PI_MARGIN):
        raise LogBranchError(f"rotation angle {np.max(th):.9f} too close to pi for the principal log")
    small = th < SMALL_ANGLE
    safe_sin = np.where(small, 1.0, sin_th)
    factor = np.where(small, 1.0 + th * th / 6.0, th / safe_sin)
    w = factor[..., None] * s
    near_pi = (sin_th < 1e-3) & (cos_th < 0.0)
    if np.any(near_pi):
        shape = w.shape
        w = w.reshape(-1, 3).copy()
        mask = near_pi.reshape(-1)
        w[mask] = _so3_log_near_pi(R.reshape(-1, 3, 3)[mask], th.reshape(-1)[mask], s.reshape(-1, 3)[mask])
        w = w.reshape(shape)
    return w


def _so3_log_near_pi(R, th, s):
    # nn^T = (sym(R) - cos(th) I) / (1 - cos(th)); sign fixed by the skew part
    cos_th = np.cos(th)
    M = 0.5 * (R + np.swapaxes(R, -1, -2)) - cos_th[:, None, None] * np.eye(3)
    M = M / (1.0 - cos_th)[:, None, None]
    diag = np.diagonal(M, axis1=-2, axis2=-1)
    k = np.argmax(diag, axis=-1)
    rows = np.arange(len(k))
    n = M[rows, :, k] / np.sqrt(np.maximum(diag[rows, k], 1e-300))[:, None]
    sign = np.where(np.sum(n * s, axis=-1) < 0.0, -1.0, 1.0)
    return (sign * th)[:, None] * n


class _Group:
    name: str
    dim: int
    size: int
    rot_dim: int
    trans_dim: int

    @property
    def rot_coords(self) -> int:
        """Number of rotational algebra coordinates."""
        return self.dim - self.trans_dim

    def identity(self) -> np.ndarray:
        return np.eye(self.size)

    def ad_matrix(self, w: np.ndarray) -> np.ndarray:
        """Matrix of ad_w, i.e. ``ad_matrix(w) @ z == bracket(w, z)``."""
        w = np.asarray(w, dtype=float)
        cols = self.bracket(w[..., None, :], np.eye(self.dim))
        return np.swapaxes(cols, -1, -2)

    def __repr__(self):
        return self.name


class _SO3(_Group):
    name = "SO3"
    dim = 3
    size = 3
    rot_dim = 3
    trans_dim = 0

    def hat(self, v):
        return skew(v)

    def vee(self, m):
        return unskew(m)

    def bracket(self, u, w):
        u, w = np.broadcast_arrays(np.asarray(u, float), np.asarray(w, float))
        return cross(u, w)

    def exp(self, xi):
        return so3_exp(xi)

    def log(self, g, strict=True):
        return so3_log(g, strict)

    def adjoint(self, g, xi):
        return np.einsum("...ij,...j->...i", g, xi)


class _SE3(_Group):
    name = "SE3"
    dim = 6
    size = 4
    rot_dim = 3
    trans_dim = 3

    def hat(self, v):
        v = np.asarray(v, dtype=float)
        out = np.zeros(v.shape[:-1] + (4, 4))
        out[..., :3, :3] = skew(v[..., :3])
        out[..., :3, 3] = v[..., 3:]
        return out

    def vee(self, m):
        return np.concatenate([unskew(m[..., :3, :3]), m[..., :3, 3]], axis=-1)

    def bracket(self, u, w):
        u, w = np.broadcast_arrays(np.asarray(u, float), np.asarray(w, float))
        a, b = u[..., :3], u[..., 3:]
        c, d = w[..., :3], w[..., 3:]
        return np.concatenate([cross(a, c), cross(a, d) - cross(c, b)], axis=-1)

    def exp(self, xi):
        xi = np.asarray(xi, dtype=float)
        w, b = xi[..., :3], xi[..., 3:]
        out = np.zeros(xi.shape[:-1] + (4, 4))
        out[..., :3, :3] = so3_exp(w)
        out[..., :3, 3] = np.einsum("...ij,...j->...i", so3_left_jacobian(w), b)
        out[..., 3, 3] = 1.0
        return out

    def log(self, g, strict=True):
        w = so3_log(g[..., :3, :3], strict)
        b = np.einsum("...ij,...j->...i", so3_left_jacobian_inv(w), g[..., :3, 3])
        return np.concatenate([w, b], axis=-1)

    def adjoint(self, g, xi):
        R, r = g[..., :3, :3], g[..., :3, 3]
        Ra = np.einsum("...ij,...j->...i", R, xi[..., :3])
        Rb = np.einsum("...ij,...j->...i", R, xi[..., 3:])
        return np.concatenate([Ra, Rb - cross(Ra, r)], axis=-1)


def _planar_rot(a):
    c, s = np.cos(a), np.sin(a)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def _planar_coeffs(a):
    """sin(a)/a and (1-cos a)/a with small-angle series."""
    small = np.abs(a) < SMALL_ANGLE
    safe = np.where(small, 1.0, a)
    a2 = a * a
    alpha = np.where(small, 1.0 - a2 / 6.0 + a2 * a2 / 120.0, np.sin(safe) / safe)
    beta = np.where(small, a / 2.0 - a * a2 / 24.0, (1.0 - np.cos(safe)) / safe)
    return alpha, beta


class _SE2(_Group):
    name = "SE2"
    dim = 3
    size = 3
    rot_dim = 2
    trans_dim = 2

    def hat(self, v):
        v = np.asarray(v, dtype=float)
        out = np.zeros(v.shape[:-1] + (3, 3))
        out[..., 0, 1] = -v[..., 0]
        out[..., 1, 0] = v[..., 0]
        out[..., :2, 2] = v[..., 1:]
        return out

    def vee(self, m):
        return np.stack([m[..., 1, 0], m[..., 0, 2], m[..., 1, 2]], axis=-1)

    def bracket(self, u, w):
        # [(a,b),(c,d)] = (0, -a Jd + c Jb) with Jd = (d2, -d1)
        u, w = np.broadcast_arrays(np.asarray(u, float), np.asarray(w, float))
        a, b1, b2 = u[..., 0], u[..., 1], u[..., 2]
        c, d1, d2 = w[..., 0], w[..., 1], w[..., 2]
        return np.stack([np.zeros_like(a), -a * d2 + c * b2, a * d1 - c * b1], axis=-1)

    def exp(self, xi):
        xi = np.asarray(xi, dtype=float)
        a, b1, b2 = xi[..., 0], xi[..., 1], xi[..., 2]
        alpha, beta = _planar_coeffs(a)
        out = np.zeros(xi.shape[:-1] + (3, 3))
        out[..., :2, :2] = _planar_rot(a)
        out[..., 0, 2] = alpha * b1 - beta * b2
        out[..., 1, 2] = beta * b1 + alpha * b2
        out[..., 2, 2] = 1.0
        return out

    def log(self, g, strict=True):
        a = np.arctan2(g[..., 1, 0], g[..., 0, 0])
        if strict and np.any(np.abs(a) > np.pi - PI_MARGIN):
            raise LogBranchError(f"rotation angle {np.max(np.abs(a)):.9f} too close to pi for the principal log")
        alpha, beta = _planar_coeffs(a)
        det = alpha * alpha + beta * beta
        t1, t2 = g[..., 0, 2], g[..., 1, 2]
        b1 = (alpha * t1 + beta * t2) / det
        b2 = (-beta * t1 + alpha * t2) / det
        return np.stack([a, b1, b2], axis=-1)

    def adjoint(self, g, xi):
        R, r = g[..., :2, :2], g[..., :2, 2]
        a = xi[..., 0]
        Rb = np.einsum("...ij,...j->...i", R, xi[..., 1:])
        aJr = a[..., None] * np.stack([r[..., 1], -r[..., 0]], axis=-1)
        return np.concatenate([a[..., None], Rb + aJr], axis=-1)


SO3 = _SO3()
SE2 = _SE2()
SE3 = _SE3()
GROUPS = {"SO3": SO3, "SE2": SE2, "SE3": SE3}


def get_group(group) -> _Group:
    if isinstance(group, _Group):
        return group
    try:
        return GROUPS[str(group).upper()]
    except KeyError:
        raise ValueError(f"unknown group {group!r}; expected one of {sorted(GROUPS)}") from None


def _check_coords(v, G):
    v = np.asarray(v, dtype=float)
    if v.shape[-1:] != (G.dim,):
        raise ValueError(f"{G.name} algebra vectors have {G.dim} coordinates, got shape {v.shape}")
    return v


@dataclass(frozen=True, eq=False)
class GroupElement:
    """A point on SO(3), SE(2) or SE(3) stored as a homogeneous matrix."""

    group: str
    matrix: np.ndarray

    def __post_init__(self):
        G = get_group(self.group)
        m = np.array(self.matrix, dtype=float)
        if m.shape[-2:] != (G.size, G.size):
            raise ValueError(f"{G.name} matrices are {G.size}x{G.size}, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "group", G.name)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_rt(cls, group, R, r=None) -> "GroupElement":
        G = get_group(group)
        R = np.asarray(R, dtype=float)
        if G is SO3:
            return cls("SO3", R)
        m = np.eye(G.size)
        m[: G.rot_dim, : G.rot_dim] = R
        m[: G.rot_dim, G.rot_dim] = np.zeros(G.trans_dim) if r is None else r
        return cls(G.name, m)

    @classmethod
    def identity(cls, group) -> "GroupElement":
        G = get_group(group)
        return cls(G.name, G.identity())

    @property
    def R(self) -> np.ndarray:
        d = get_group(self.group).rot_dim
        return self.matrix[..., :d, :d]

    @property
    def r(self):
        G = get_group(self.group)
        if G.trans_dim == 0:
            return None
        return self.matrix[..., : G.rot_dim, G.rot_dim]

    def orthogonality_error(self) -> float:
        R = self.R
        return float(np.max(np.linalg.norm(np.swapaxes(R, -1, -2) @ R - np.eye(R.shape[-1]), axis=(-2, -1))))

    def validate(self, tol: float = ORTHO_TOL) -> "GroupElement":
        err = self.orthogonality_error()
        det = np.linalg.det(self.R)
        if err > tol or np.any(np.abs(det - 1.0) > tol):
            raise ValueError(f"not a proper rotation: |R^T R - I| = {err:.3g}, det = {det}")
        return self

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        return compose(self, other)

    def __repr__(self):
        return f"GroupElement({self.group}, {self.matrix.tolist()})"


def hat(v, group) -> np.ndarray:
    G = get_group(group)
    return G.hat(_check_coords(v, G))


def vee(m, group) -> np.ndarray:
    """Inverse of :func:`hat`; raises if ``m`` is not in the algebra."""
    G = get_group(group)
    m = np.asarray(m, dtype=float)
    if m.shape[-2:] != (G.size, G.size):
        raise ValueError(f"{G.name} algebra matrices are {G.size}x{G.size}, got {m.shape}")
    v = G.vee(m)
    if np.max(np.abs(G.hat(v) - m), initial=0.0) > ALGEBRA_TOL:
        raise ValueError(f"matrix is not in the Lie algebra of {G.name}")
    return v


def bracket(u, w, group) -> np.ndarray:
    G = get_group(group)
    return G.bracket(_check_coords(u, G), _check_coords(w, G))


def _same_group(g: GroupElement, h: GroupElement):
    if g.group != h.group:
        raise ValueError(f"group mismatch: {g.group} vs {h.group}")


def compose(g: GroupElement, h: GroupElement) -> GroupElement:
    _same_group(g, h)
    return GroupElement(g.group, g.matrix @ h.matrix)


def inverse(g: GroupElement) -> GroupElement:
    G = get_group(g.group)
    return GroupElement(g.group, inverse_matrix(G, g.matrix))


def inverse_matrix(G, m: np.ndarray) -> np.ndarray:
    d = G.rot_dim
    Rt = np.swapaxes(m[..., :d, :d], -1, -2)
    if G.trans_dim == 0:
        return Rt.copy()
    out = np.zeros_like(m)
    out[..., :d, :d] = Rt
    out[..., :d, d] = -np.einsum("...ij,...j->...i", Rt, m[..., :d, d])
    out[..., d, d] = 1.0
    return out


def exp(xi, group) -> GroupElement:
    G = get_group(group)
    return GroupElement(G.name, G.exp(_check_coords(xi, G)))


def log(g: GroupElement, strict: bool = True) -> np.ndarray:
    """Principal logarithm; errors within ``PI_MARGIN`` of a half turn."""
    return get_group(g.group).log(g.matrix, strict)


def adjoint(g: GroupElement, xi) -> np.ndarray:
    G = get_group(g.group)
    return G.adjoint(g.matrix, _check_coords(xi, G))


@dataclass(frozen=True, eq=False)
class MetricTensor:
    """Diagonal left-invariant metric; ``diag`` follows the algebra basis order."""

    group: str
    diag: np.ndarray

    def __post_init__(self):
        G = get_group(self.group)
        d = np.array(self.diag, dtype=float).reshape(-1)
        if d.shape != (G.dim,):
            raise ValueError(f"{G.name} metric needs {G.dim} diagonal entries, got {d.shape}")
        if not np.all(np.isfinite(d)) or np.any(d <= 0.0):
            raise ValueError(f"metric parameters must be strictly positive, got {d.tolist()}")
        d.setflags(write=False)
        object.__setattr__(self, "group", G.name)
        object.__setattr__(self, "diag", d)

    @classmethod
    def create(cls, group, J=None, m=None) -> "MetricTensor":
        """Build from inertia ``J`` and mass ``m`` (scalars or 3-vectors)."""
        G = get_group(group)
        if G is SO3:
            J = 1.0 if J is None else J
            return cls("SO3", np.broadcast_to(np.asarray(J, float), (3,)))
        if G is SE2:
            J = 1.0 if J is None else float(np.asarray(J).reshape(-1)[0])
            m = 1.0 if m is None else float(np.asarray(m).reshape(-1)[0])
            return cls("SE2", [J, m, m])
        J = np.broadcast_to(np.asarray(1.0 if J is None else J, float), (3,))
        m = np.broadcast_to(np.asarray(1.0 if m is None else m, float), (3,))
        return cls("SE3", np.concatenate([J, m]))

    @classmethod
    def identity(cls, group) -> "MetricTensor":
        return cls(group, np.ones(get_group(group).dim))

    @property
    def J(self) -> np.ndarray:
        return self.diag[: get_group(self.group).rot_coords]

    @property
    def m(self) -> np.ndarray:
        return self.diag[get_group(self.group).rot_coords :]

    def is_identity(self) -> bool:
        return bool(np.all(self.diag == 1.0))

    def flat(self, u):
        return self.diag * u

    def sharp(self, alpha):
        return alpha / self.diag

    def inner(self, u, w):
        return np.sum(self.diag * (u * w), axis=-1)

    def norm(self, u):
        return np.sqrt(self.inner(u, u))


def inner(u, w, metric: MetricTensor):
    G = get_group(metric.group)
    return metric.inner(_check_coords(u, G), _check_coords(w, G))

"""Time stepping of the extremal jet ``(x, v, v', v'', lambda)``.

Poses are advanced by the group exponential so iterates stay on the group.
Two schemes are available:

* ``euler``: semi-implicit cascade that updates the highest derivative first.
* ``rk4``: classical RK4 on the velocity jet, with Munthe-Kaas commutator
  corrections for the pose so the pose also converges at fourth order.

Everything works on stacked states (leading batch axis); members that hit an
obstacle or blow up are frozen and reported, not raised, by :func:`propagate`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import ExtremalModel, ExtremalState, clearances
from .lie_groups import get_group
from .potentials import CLEARANCE_MARGIN, InsideObstacle


class Scheme(str, enum.Enum):
    EULER = "euler"
    RK4 = "rk4"


def _parse_scheme(scheme) -> Scheme:
    try:
        return Scheme(scheme.value if isinstance(scheme, Scheme) else str(scheme).lower())
    except ValueError:
        raise ValueError(f"unknown scheme {scheme!r}; expected 'euler' or 'rk4'") from None


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled extremal on ``[t[0], t[-1]]``.

    Arrays are indexed by sample along axis 0. ``lam`` is ``None`` for
    unconstrained problems. ``clearance_min`` holds the smallest clearance
    seen for each obstacle.
    """

    group: str
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    lam: np.ndarray | None
    scheme: str
    h: float
    clearance_min: np.ndarray

    def __len__(self) -> int:
        return self.t.size

    def state(self, i: int) -> ExtremalState:
        lam = None if self.lam is None else self.lam[i]
        return ExtremalState(self.group, self.x[i], self.v[i], self.v1[i], self.v2[i], lam)

    @property
    def samples(self):
        return [(float(self.t[i]), self.state(i)) for i in range(len(self))]

    @property
    def orthogonality_drift(self) -> float:
        d = get_group(self.group).rot_dim
        R = self.x[:, :d, :d]
        err = np.swapaxes(R, -1, -2) @ R - np.eye(d)
        return float(np.max(np.linalg.norm(err, axis=(-2, -1))))


def step_count(t0: float, t1: float, h: float) -> int:
    """Number of steps of size ``h`` (the last possibly partial) to cover ``[t0, t1]``."""
    span = (t1 - t0) / h
    k = round(span)
    if abs(span - k) <= 1e-9 * max(1.0, span):
        return max(int(k), 1)
    return int(math.ceil(span))


def step_sizes(t0: float, t1: float, h: float) -> np.ndarray:
    """Step lengths from ``t0`` to ``t1``; every step equals ``h`` except a shorter last one."""
    n = step_count(t0, t1, h)
    hs = np.full(n, float(h))
    hs[-1] = (t1 - t0) - h * (n - 1)
    return hs


def _euler(model, G, X, V, V1, V2, L, h):
    v3, ld = model(X, V, V1, V2, L)
    V2n = V2 + h * v3
    V1n = V1 + h * V2n
    Vn = V + h * V1n
    Ln = None if L is None else L + h * ld
    return X @ G.exp(h * Vn), Vn, V1n, V2n, Ln


def _rk4(model, G, X, V, V1, V2, L, h):
    def f(Xs, v, v1, v2, lam):
        v3, ld = model(Xs, v, v1, v2, lam)
        return v1, v2, v3, ld

    def add(y, k, c):
        return tuple(None if a is None else a + c * b for a, b in zip(y, k))

    y1 = (V, V1, V2, L)
    k1 = f(X, *y1)
    u1 = h * V
    y2 = add(y1, k1, 0.5 * h)
    u2 = h * y2[0]
    k2 = f(X @ G.exp(0.5 * u1), *y2)
    y3 = add(y1, k2, 0.5 * h)
    u3 = h * y3[0]
    k3 = f(X @ G.exp(0.5 * u2 + G.bracket(u1, u2) / 8.0), *y3)
    y4 = add(y1, k3, h)
    u4 = h * y4[0]
    k4 = f(X @ G.exp(u3), *y4)
    theta = (u1 + 2.0 * u2 + 2.0 * u3 + u4) / 6.0 + G.bracket(u1, u4) / 12.0
    out = []
    for i, y in enumerate(y1):
        if y is None:
            out.append(None)
        else:
            out.append(y + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
    return (X @ G.exp(theta), *out)


_STEPPERS = {Scheme.EULER: _euler, Scheme.RK4: _rk4}


@dataclass
class Propagation:
    """Result of :func:`propagate` on a batch.

    Attributes:
        x, v, v1, v2, lam: final states (frozen at the last admissible step for dead members).
        alive: members that stayed outside all obstacles with finite values.
        death_time: time of first failure (``nan`` for alive members).
        clearance_min: smallest clearance per member and obstacle, ``(B, n_obs)``.
        record: per-sample arrays ``(t, x, v, v1, v2, lam)`` when requested.
    """

    x: np.ndarray
    v: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    lam: np.ndarray | None
    alive: np.ndarray
    death_time: np.ndarray
    clearance_min: np.ndarray
    record: tuple | None = None


def propagate(model: ExtremalModel, X, V, V1, V2, L, t0, t1, h, scheme="euler", record=False) -> Propagation:
    """Integrate a batch of states from ``t0`` to ``t1``; never raises on obstacle contact."""
    scheme = _parse_scheme(scheme)
    G = get_group(model.group)
    stepper = _STEPPERS[scheme]
    X, V, V1, V2 = (np.array(a, dtype=float) for a in (X, V, V1, V2))
    L = None if L is None else np.array(L, dtype=float)
    B = V.shape[0]
    clr = clearances(G, model.obstacles, X)
    cmin = clr.copy()
    alive = np.all(clr > CLEARANCE_MARGIN, axis=-1) & np.all(np.isfinite(V), axis=-1)
    death = np.where(alive, np.nan, t0)
    rec = None
    if record:
        rec = [[t0], [X.copy()], [V.copy()], [V1.copy()], [V2.copy()], [None if L is None else L.copy()]]
    t = float(t0)
    with np.errstate(all="ignore"):
        for hs in step_sizes(t0, t1, h):
            Xn, Vn, V1n, V2n, Ln = stepper(model, G, X, V, V1, V2, L, hs)
            t += hs
            clr = clearances(G, model.obstacles, Xn)
            finite = np.isfinite(Xn).all(axis=(-2, -1)) & np.isfinite(Vn).all(-1)
            finite &= np.isfinite(V1n).all(-1) & np.isfinite(V2n).all(-1)
            ok = alive & finite & np.all(clr > CLEARANCE_MARGIN, axis=-1)
            newly_dead = alive & ~ok
            death[newly_dead] = t
            cmin[alive] = np.minimum(cmin[alive], np.where(finite[alive, None], clr[alive], -np.inf))
            alive = ok
            X[ok], V[ok], V1[ok], V2[ok] = Xn[ok], Vn[ok], V1n[ok], V2n[ok]
            if L is not None:
                L[ok] = Ln[ok]
            if record:
                for lst, arr in zip(rec, (t, X, V, V1, V2, L)):
                    lst.append(arr if np.isscalar(arr) else (None if arr is None else arr.copy()))
            if not alive.any() and not record:
                break
    if record:
        t_arr = np.array(rec[0])
        stacked = [np.stack(r, axis=1) for r in rec[1:5]]
        lam_rec = None if L is None else np.stack(rec[5], axis=1)
        rec = (t_arr, *stacked, lam_rec)
    if B and cmin.shape[-1] == 0:
        cmin = np.full((B, 0), np.inf)
    return Propagation(X, V, V1, V2, L, alive, death, cmin, rec)


def _state_arrays(s: ExtremalState):
    lam = None if s.lam is None else s.lam[None]
    return s.x[None], s.v[None], s.v1[None], s.v2[None], lam


def step(s: ExtremalState, h: float, rhs: ExtremalModel, scheme="euler") -> ExtremalState:
    """Advance a single state by one step of size ``h``.

    Raises:
        InsideObstacle: if the new pose leaves the admissible set.
    """
    if h < 0:
        raise ValueError("step size must be non-negative")
    if h == 0:
        return s
    G = get_group(rhs.group)
    X, V, V1, V2, L = _state_arrays(s)
    with np.errstate(all="ignore"):
        out = _STEPPERS[_parse_scheme(scheme)](rhs, G, X, V, V1, V2, L, h)
    clr = clearances(G, rhs.obstacles, out[0])
    if not np.all(clr > CLEARANCE_MARGIN):
        raise InsideObstacle(f"step of size {h} enters an obstacle", None, float(np.min(clr)), h)
    lam = None if out[4] is None else out[4][0]
    return ExtremalState(s.group, out[0][0], out[1][0], out[2][0], out[3][0], lam)


def integrate_segment(s0: ExtremalState, t0: float, t1: float, h: float, rhs: ExtremalModel, scheme="euler") -> Trajectory:
    """Integrate one state from ``t0`` to ``t1`` inclusive, recording every sample.

    Raises:
        InsideObstacle: carrying the time at which the trajectory hit an obstacle.
    """
    if not t1 > t0:
        raise ValueError("integration interval must have t1 > t0")
    if not h > 0:
        raise ValueError("step size must be positive")
    scheme = _parse_scheme(scheme)
    p = propagate(rhs, *_state_arrays(s0), t0, t1, h, scheme, record=True)
    if not p.alive[0]:
        tdead = float(p.death_time[0])
        raise InsideObstacle(f"trajectory enters an obstacle at t={tdead:.6g}", None, None, tdead)
    t, X, V, V1, V2, L = p.record
    return Trajectory(
        s0.group, t, X[0], V[0], V1[0], V2[0], None if L is None else L[0], scheme.value, float(h), p.clearance_min[0]
    )

"""JSON problem files and CSV trajectory output.

Problem schema (all rotations row-major, never angles)::

    {
      "group": "SE3",
      "metric": {"J": [1, 1, 1], "m": [1, 1, 1]},
      "sigma": 0.5,
      "obstacles": [{"kind": "sphere", "center": [0, 0, 0], "offset": 1, "tau": 1.7}],
      "knots": [{"t": 0.0, "R": [1, 0, 0, 0, 1, 0, 0, 0, 1], "r": [-1, 1, 0]}, ...],
      "v0": [...], "vN": [...],
      "constraints": {"zero_indices": [2], "signs": [-1]},
      "solver": {"h": 0.01, "tol": 1e-8, "max_iters": 100, "fd_epsilon": 1e-6, "scheme": "euler"}
    }

Obstacle kinds are ``sphere`` (``center``, ``offset``), ``orientation`` and
``group_point`` (both with a row-major ``Q``).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .dynamics import ConstraintSpec
from .lie_groups import GroupElement, MetricTensor, get_group
from .potentials import CompactGroupPoint, EuclideanSphere, OrientationPoint
from .shooting import ProblemSpec, SolverOptions, ValidationError

POLAR_MIN = 1e-12
POLAR_MAX = 1e-6


class ConfigError(ValidationError):
    """Malformed problem file; ``location`` names the offending entry."""

    def __init__(self, message, location=""):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


def _floats(value, n, where):
    try:
        arr = np.array(value, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise ConfigError(f"expected {n} numbers", where) from None
    if arr.size != n or not np.all(np.isfinite(arr)):
        raise ConfigError(f"expected {n} finite numbers, got {value!r}", where)
    return arr


def _rotation(value, d, where):
    """Row-major rotation, polar-projected when slightly off the group."""
    R = _floats(value, d * d, where).reshape(d, d)
    drift = float(np.linalg.norm(R.T @ R - np.eye(d)))
    if drift > POLAR_MAX:
        raise ConfigError(f"matrix is not a rotation (|R^T R - I| = {drift:.3g})", where)
    if drift > POLAR_MIN:
        U, _, Vt = np.linalg.svd(R)
        R = U @ Vt
    if np.linalg.det(R) <= 0:
        raise ConfigError("rotation has non-positive determinant", where)
    return R


def _element(group, R, r=None) -> GroupElement:
    G = get_group(group)
    return GroupElement.from_rt(G.name, R, r if G.trans_dim else None)


def _metric(group, spec, where="metric") -> MetricTensor:
    G = get_group(group)
    spec = spec or {}
    if not isinstance(spec, dict):
        raise ConfigError("expected an object with J and m", where)
    size = 1 if G.name == "SE2" else 3

    def entry(key):
        val = spec.get(key)
        if val is None:
            return None
        return _floats(val, size, f"{where}.{key}") if np.ndim(val) else float(val)

    try:
        return MetricTensor.create(G.name, J=entry("J"), m=entry("m"))
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e), where) from None


def _obstacle(group, spec, where):
    G = get_group(group)
    if not isinstance(spec, dict):
        raise ConfigError("expected an object", where)
    kind = spec.get("kind")
    try:
        tau = float(spec["tau"])
        if kind == "sphere":
            return EuclideanSphere(_floats(spec["center"], G.trans_dim, f"{where}.center"), float(spec["offset"]), tau)
        if kind == "orientation":
            return OrientationPoint(GroupElement("SO3", _rotation(spec["Q"], 3, f"{where}.Q")), tau)
        if kind == "group_point":
            return CompactGroupPoint(GroupElement("SO3", _rotation(spec["Q"], 3, f"{where}.Q")), tau)
    except KeyError as e:
        raise ConfigError(f"missing field {e.args[0]!r}", where) from None
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e), where) from None
    raise ConfigError(f"unknown obstacle kind {kind!r}", where)


def problem_from_dict(d: dict) -> ProblemSpec:
    """Build and validate a :class:`ProblemSpec` from parsed JSON."""
    if not isinstance(d, dict):
        raise ConfigError("top level must be an object")
    try:
        G = get_group(d["group"])
    except KeyError:
        raise ConfigError("missing field 'group'") from None
    except ValueError as e:
        raise ConfigError(str(e), "group") from None
    metric = _metric(G.name, d.get("metric"))
    obstacles = [_obstacle(G.name, o, f"obstacles[{i}]") for i, o in enumerate(d.get("obstacles", []))]
    knots = []
    for i, k in enumerate(d.get("knots", [])):
        where = f"knots[{i}]"
        need = ("t", "R", "r") if G.trans_dim else ("t", "R")
        if not isinstance(k, dict) or any(key not in k for key in need):
            raise ConfigError(f"each knot needs {', '.join(map(repr, need))}", where)
        R = _rotation(k["R"], G.rot_dim, f"{where}.R")
        r = _floats(k["r"], G.trans_dim, f"{where}.r") if G.trans_dim else None
        knots.append((float(k["t"]), _element(G.name, R, r)))
    constraints = None
    c = d.get("constraints")
    if c:
        try:
            constraints = ConstraintSpec(G.name, metric, tuple(c["zero_indices"]), c.get("signs"))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(str(e), "constraints") from None
    solver_d = dict(d.get("solver", {}))
    allowed = {"h", "tol", "max_iters", "fd_epsilon", "scheme", "max_halvings", "threads"}
    unknown = set(solver_d) - allowed
    if unknown:
        raise ConfigError(f"unknown solver fields {sorted(unknown)}", "solver")
    try:
        solver = SolverOptions(**solver_d)
        for key in ("v0", "vN"):
            if key not in d:
                raise ConfigError(f"missing field {key!r}")
        return ProblemSpec(
            G.name,
            metric,
            float(d.get("sigma", 0.0)),
            obstacles,
            knots,
            _floats(d["v0"], G.dim, "v0"),
            _floats(d["vN"], G.dim, "vN"),
            constraints,
            solver,
            str(d.get("name", "")),
        )
    except ConfigError:
        raise
    except ValidationError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def _num(x):
    return [float(v) for v in np.asarray(x).reshape(-1)]


def problem_to_dict(p: ProblemSpec) -> dict:
    """Inverse of :func:`problem_from_dict`; floats survive a JSON round trip exactly."""
    G = get_group(p.group)
    obs = []
    for o in p.obstacles:
        if isinstance(o, EuclideanSphere):
            obs.append({"kind": "sphere", "center": _num(o.center), "offset": o.offset, "tau": o.tau})
        elif isinstance(o, OrientationPoint):
            obs.append({"kind": "orientation", "Q": _num(o.Q.matrix), "tau": o.tau})
        else:
            obs.append({"kind": "group_point", "Q": _num(o.h.matrix), "tau": o.tau})
    knots = []
    for t, g in p.knots:
        k = {"t": t, "R": _num(g.R)}
        if G.trans_dim:
            k["r"] = _num(g.r)
        knots.append(k)
    out = {"name": p.name, "group": G.name}
    if G.name == "SO3":
        out["metric"] = {"J": _num(p.metric.J)}
    elif G.name == "SE2":
        out["metric"] = {"J": float(p.metric.J[0]), "m": float(p.metric.m[0])}
    else:
        out["metric"] = {"J": _num(p.metric.J), "m": _num(p.metric.m)}
    out.update(sigma=p.sigma, obstacles=obs, knots=knots, v0=_num(p.v0), vN=_num(p.vN))
    if p.constraints is not None:
        out["constraints"] = {"zero_indices": list(p.constraints.indices), "signs": list(p.constraints.signs)}
    s = p.solver
    out["solver"] = {"h": s.h, "tol": s.tol, "max_iters": int(s.max_iters), "fd_epsilon": s.fd_epsilon, "scheme": s.scheme}
    return out


def loads_problem(text: str) -> ProblemSpec:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg}", f"line {e.lineno} column {e.colno}") from None
    return problem_from_dict(d)


def load_problem(path) -> ProblemSpec:
    return loads_problem(Path(path).read_text())


def dumps_problem(p: ProblemSpec) -> str:
    # json writes floats with repr, which round-trips exactly
    return json.dumps(problem_to_dict(p), indent=2)


def dump_problem(p: ProblemSpec, path) -> None:
    Path(path).write_text(dumps_problem(p) + "\n")


def csv_header(group: str, constrained: bool) -> list:
    G = get_group(group)
    d = G.rot_dim
    cols = ["t"] + [f"R{i}{j}" for i in range(1, d + 1) for j in range(1, d + 1)]
    cols += [f"r{i}" for i in range(1, G.trans_dim + 1)]
    if G.name == "SE2":
        cols.append("theta")
    for prefix in ("v", "v1_", "v2_"):
        cols += [f"{prefix}{i}" for i in range(1, G.dim + 1)]
    cols += ["V_total", "min_clearance"]
    if constrained:
        cols.append("lambda")
    return cols


def trajectory_rows(traj, obstacles):
    """Rows matching :func:`csv_header` for every sample."""
    G = get_group(traj.group)
    d = G.rot_dim
    n = len(traj)
    if obstacles:
        clr = np.stack([o.clearance(G, traj.x) for o in obstacles], axis=-1)
        V = np.sum(np.array([o.tau for o in obstacles]) / clr, axis=-1)
        cmin = np.min(clr, axis=-1)
    else:
        V = np.zeros(n)
        cmin = np.full(n, np.inf)
    parts = [traj.t[:, None], traj.x[:, :d, :d].reshape(n, d * d)]
    if G.trans_dim:
        parts.append(traj.x[:, :d, d])
    if G.name == "SE2":
        th = np.mod(np.arctan2(traj.x[:, 1, 0], traj.x[:, 0, 0]), 2 * np.pi)
        parts.append(th[:, None])
    parts += [traj.v, traj.v1, traj.v2, V[:, None], cmin[:, None]]
    if traj.lam is not None:
        parts.append(traj.lam[:, :1])
    return np.concatenate(parts, axis=-1)


def write_trajectory_csv(traj, obstacles, path) -> None:
    rows = trajectory_rows(traj, obstacles)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(csv_header(traj.group, traj.lam is not None))
        for row in rows:
            w.writerow([repr(float(x)) for x in row])

"""Input functions of the parametric problems.

Inputs are stored as *channels*: a bank of ``N`` functions, each with one
representation per subdomain.  A channel answers three questions for a
subset ``idx`` of its functions:

* ``value(idx, region, points)``    -> array (len(idx), P)
* ``gradient(idx, region, points)`` -> array (len(idx), P, d)
* ``sensors(idx, region)``          -> array (len(idx), m_region), the branch input

Fixed (non-parametric) data such as jump or boundary functions ignore
``idx`` and return arrays with a leading axis of length 1 that broadcast
against the batch.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import LinAlgError, cholesky

from .geometry import EXTERIOR, INTERFACE, Geometry

DATASET_FORMAT = "ionet-dataset"
DATASET_VERSION = 1

# purposes for counter-based random streams
PURPOSE = {"grf": 1, "uniform": 2, "sensors": 3, "collocation": 4, "batch": 5, "labels": 6, "eval": 7}


class GrfError(RuntimeError):
    pass


class DomainError(ValueError):
    pass


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Independent generator for (seed, purpose, index)."""
    return np.random.default_rng([int(seed), PURPOSE[purpose], int(index)])


# --------------------------------------------------------------------------
# Gaussian random fields
# --------------------------------------------------------------------------

@dataclass
class GrfSpec:
    length_scale: float
    grid: np.ndarray
    jitter: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.length_scale <= 0:
            raise ValueError("length scale must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be nonnegative")
        if self.grid.ndim == 1 and np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")


def rbf_kernel_matrix(spec: GrfSpec) -> np.ndarray:
    y = spec.grid.reshape(len(spec.grid), -1)
    sq = np.sum((y[:, None, :] - y[None, :, :]) ** 2, axis=-1)
    K = np.exp(-sq / (2.0 * spec.length_scale ** 2))
    K[np.diag_indices_from(K)] += spec.jitter
    return K


_FACTOR_CACHE: dict = {}


def cholesky_factor(spec: GrfSpec) -> np.ndarray:
    key = (spec.length_scale, spec.jitter, spec.grid.tobytes())
    L = _FACTOR_CACHE.get(key)
    if L is None:
        try:
            L = cholesky(rbf_kernel_matrix(spec), lower=True)
        except LinAlgError as exc:
            raise GrfError(
                f"Cholesky failed for l={spec.length_scale}, jitter={spec.jitter}; "
                "increase the jitter") from exc
        _FACTOR_CACHE[key] = L
    return L


def sample_grf(spec: GrfSpec, index: int = 0, z: np.ndarray | None = None) -> np.ndarray:
    """One mean-zero draw ``L z`` on the field grid.

    ``z`` defaults to standard normals from the stream (spec.seed, index).
    """
    L = cholesky_factor(spec)
    if z is None:
        z = stream(spec.seed, "grf", index).standard_normal(len(spec.grid))
    return L @ np.asarray(z, dtype=np.float64)


def shift_positive(values) -> np.ndarray:
    """Shift so the minimum is exactly one (along the last axis)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("empty input")
    return v - v.min(axis=-1, keepdims=True) + 1.0


# --------------------------------------------------------------------------
# sensors
# --------------------------------------------------------------------------

@dataclass
class SensorLayout:
    """Sensors split by subdomain: ``points[r]`` holds the (m_r, d) sensors of region r."""

    points: dict[int, np.ndarray]

    @property
    def counts(self) -> dict[int, int]:
        return {r: len(p) for r, p in self.points.items()}

    def all_points(self) -> np.ndarray:
        return np.concatenate([self.points[r] for r in sorted(self.points)])

    @classmethod
    def split(cls, geom: Geometry, points) -> "SensorLayout":
        pts = np.asarray(points, dtype=np.float64).reshape(len(points), geom.dim)
        region = geom.classify_many(pts)
        if np.any(region == EXTERIOR):
            raise DomainError("sensor outside the domain")
        # a sensor on an interface goes to the lower-numbered side
        for k in np.flatnonzero(region == INTERFACE):
            region[k] = 1 if geom.kind != "interval" else int(
                np.searchsorted(np.asarray(geom.interfaces), pts[k, 0], side="left") + 1)
        return cls({r: pts[region == r] for r in range(1, geom.n_subdomains + 1)})


# --------------------------------------------------------------------------
# channels
# --------------------------------------------------------------------------

class Channel:
    n_functions: int | None = None
    kind = ""

    def value(self, idx, region: int, points) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, idx, region: int, points) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no gradient")

    def sensors(self, idx, region: int) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} is not a branch input")

    def function(self, n: int, geom: Geometry) -> "InputFunction":
        return InputFunction(self, n, geom)


class SplineChannel(Channel):
    """Grid values per subdomain, interpolated by natural cubic splines (1D).

    ``grids[r]`` covers the closure of region r; ``sensor_index[r]`` picks
    the grid nodes that are sensors.
    """

    kind = "spline"

    def __init__(self, grids: Mapping[int, np.ndarray], values: Mapping[int, np.ndarray],
                 sensor_index: Mapping[int, np.ndarray]):
        self.grids = {r: np.asarray(g, dtype=np.float64) for r, g in grids.items()}
        self.values = {r: np.atleast_2d(np.asarray(v, dtype=np.float64)) for r, v in values.items()}
        self.sensor_index = {r: np.asarray(s, dtype=int) for r, s in sensor_index.items()}
        self.n_functions = len(next(iter(self.values.values())))
        self._splines: dict[int, CubicSpline] = {}

    def _spline(self, region: int) -> CubicSpline:
        cs = self._splines.get(region)
        if cs is None:
            cs = CubicSpline(self.grids[region], self.values[region].T, bc_type="natural", axis=0)
            self._splines[region] = cs
        return cs

    def _eval(self, idx, region, points, nu):
        x = np.asarray(points, dtype=np.float64).reshape(-1)
        idx = np.atleast_1d(np.asarray(idx))
        if 4 * len(idx) < self.n_functions:
            # a few functions: fitting their splines is cheaper than evaluating the bank
            cs = CubicSpline(self.grids[region], self.values[region][idx].T, bc_type="natural", axis=0)
            return cs(x, nu).T
        out = self._spline(region)(x, nu)  # (P, N_all)
        return out[:, idx].T

    def value(self, idx, region, points):
        return self._eval(idx, region, points, 0)

    def gradient(self, idx, region, points):
        return self._eval(idx, region, points, 1)[..., None]

    def sensors(self, idx, region):
        return self.values[region][np.asarray(idx)][:, self.sensor_index[region]]


class ConstantChannel(Channel):
    """One constant per (function, region)."""

    kind = "constant"

    def __init__(self, values):
        self.values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        self.n_functions = len(self.values)

    def value(self, idx, region, points):
        P = len(points)
        return np.repeat(self.values[np.asarray(idx), region - 1][:, None], P, axis=1)

    def gradient(self, idx, region, points):
        pts = np.asarray(points)
        return np.zeros((len(np.atleast_1d(idx)), len(pts), pts.reshape(len(pts), -1).shape[1]))

    def sensors(self, idx, region):
        return self.values[np.asarray(idx), region - 1][:, None]


@dataclass(frozen=True)
class Family:
    """Closed-form parametric family: ``value(params (N, p), region, points (P, d)) -> (N, P)``."""

    name: str
    value: Callable
    gradient: Callable | None = None


class ClosedFormChannel(Channel):
    kind = "closed-form"

    def __init__(self, family: Family, params, sensors: SensorLayout | None = None):
        self.family = family
        self.params = np.asarray(params, dtype=np.float64)  # (N, I, p)
        if self.params.ndim == 2:
            self.params = self.params[:, :, None]
        self.layout = sensors
        self.n_functions = len(self.params)

    def value(self, idx, region, points):
        return self.family.value(self.params[np.asarray(idx), region - 1], region,
                                 np.asarray(points, dtype=np.float64))

    def gradient(self, idx, region, points):
        if self.family.gradient is None:
            return super().gradient(idx, region, points)
        return self.family.gradient(self.params[np.asarray(idx), region - 1], region,
                                    np.asarray(points, dtype=np.float64))

    def sensors(self, idx, region):
        return self.value(idx, region, self.layout.points[region])


class FixedChannel(Channel):
    """Deterministic data, the same for every function.

    ``funcs`` maps a region (or interface label) to ``f(points) -> (P,)``;
    key ``None`` is the fallback.
    """

    kind = "fixed"

    def __init__(self, funcs: Mapping, grads: Mapping | None = None):
        self.funcs = dict(funcs)
        self.grads = dict(grads or {})

    @classmethod
    def constant(cls, c: float | Mapping) -> "FixedChannel":
        table = c if isinstance(c, Mapping) else {None: c}
        return cls({k: (lambda p, v=v: np.full(len(p), float(v))) for k, v in table.items()},
                   {k: (lambda p: np.zeros(np.shape(p))) for k in table})

    def _lookup(self, table, region):
        f = table.get(region, table.get(None))
        if f is None:
            raise DomainError(f"no data for region {region}")
        return f

    def value(self, idx, region, points):
        return np.asarray(self._lookup(self.funcs, region)(np.asarray(points, dtype=np.float64)))[None, :]

    def gradient(self, idx, region, points):
        return np.asarray(self._lookup(self.grads, region)(np.asarray(points, dtype=np.float64)))[None, ...]


class InputFunction:
    """One member of a channel, evaluable at single points."""

    def __init__(self, channel: Channel, n: int, geom: Geometry):
        self.channel, self.n, self.geom = channel, n, geom

    def region_of(self, x, side: int | None = None) -> int:
        region = self.geom.classify(x)
        if region == EXTERIOR:
            raise DomainError(f"point {x} lies outside the domain")
        if region == INTERFACE:
            if side is None:
                raise DomainError(f"point {x} is on an interface; pass side=")
            region = side
        return region

    def __call__(self, x, side: int | None = None):
        return eval_input(self, x, side)


def eval_input(f: InputFunction, x, side: int | None = None) -> tuple[float, np.ndarray]:
    """Value and spatial gradient of one input function at one point."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    region = f.region_of(x, side)
    pts = x.reshape(1, -1)
    val = f.channel.value([f.n], region, pts)[0, 0]
    grad = f.channel.gradient([f.n], region, pts)[0, 0]
    return float(val), np.asarray(grad, dtype=np.float64).reshape(-1)


# --------------------------------------------------------------------------
# collections of channels
# --------------------------------------------------------------------------

@dataclass
class FunctionSet:
    """Named channels over the same function index set, plus the branch layout.

    ``branches`` lists (channel name, region) pairs in branch-net order.
    Branch ``j`` receives ``scales[j] * (sensor values - offsets[j])``, a
    fixed normalization keeping inputs O(1).
    """

    channels: dict[str, Channel]
    branches: list[tuple[str, int]]
    scales: list[float] | None = None
    offsets: list[float] | None = None

    def __len__(self):
        return next(c.n_functions for c in self.channels.values() if c.n_functions is not None)

    def branch_sizes(self) -> list[int]:
        return [self.channels[c].sensors([0], r).shape[1] for c, r in self.branches]

    def branch_inputs(self, idx) -> list[np.ndarray]:
        idx = np.asarray(idx)
        scales = self.scales or [1.0] * len(self.branches)
        offsets = self.offsets or [0.0] * len(self.branches)
        return [s * (self.channels[c].sensors(idx, r) - o)
                for (c, r), s, o in zip(self.branches, scales, offsets)]

    def subset(self, idx) -> "FunctionSet":
        idx = np.asarray(idx)
        return FunctionSet({k: _subset_channel(c, idx) for k, c in self.channels.items()},
                           list(self.branches), self.scales, self.offsets)


def _subset_channel(c: Channel, idx) -> Channel:
    if isinstance(c, SplineChannel):
        return SplineChannel(c.grids, {r: v[idx] for r, v in c.values.items()}, c.sensor_index)
    if isinstance(c, ConstantChannel):
        return ConstantChannel(c.values[idx])
    if isinstance(c, ClosedFormChannel):
        return ClosedFormChannel(c.family, c.params[idx], c.layout)
    return c


# --------------------------------------------------------------------------
# closed-form families
# --------------------------------------------------------------------------

def _r2(points):
    return np.sum(np.asarray(points) ** 2, axis=1)


def _astroid_source(params, region, points):
    r2 = _r2(points)[None, :]
    s = 1.0 + 10.0 * r2
    return params[:, 0:1] / s ** 2 - params[:, 1:2] * r2 / s ** 3


def _astroid_source_grad(params, region, points):
    pts = np.asarray(points)
    r2 = _r2(pts)[None, :]
    s = 1.0 + 10.0 * r2
    p1, p2 = params[:, 0:1], params[:, 1:2]
    dfdr2 = -20.0 * p1 / s ** 3 - p2 / s ** 3 + 30.0 * p2 * r2 / s ** 4
    return (2.0 * dfdr2)[..., None] * pts[None, :, :]


def _sphere_source(params, region, points):
    pts = np.asarray(points)
    base = np.exp(pts.sum(axis=1)) if region == 1 else np.prod(np.sin(pts), axis=1)
    return -params[:, 0:1] * base[None, :]


FAMILIES = {
    "astroid-source": Family("astroid-source", _astroid_source, _astroid_source_grad),
    "sphere-source": Family("sphere-source", _sphere_source),
}


# --------------------------------------------------------------------------
# dataset files
# --------------------------------------------------------------------------

def _fmt(v) -> list:
    return [float(x) for x in np.ravel(v)]


def write_dataset(path, fs: FunctionSet, meta: Mapping | None = None) -> None:
    """One JSON record per (function, channel, subdomain) after a header line."""
    n = len(fs)
    header = {"format": DATASET_FORMAT, "version": DATASET_VERSION, "n_functions": n,
              "branches": [[c, r] for c, r in fs.branches], "scales": fs.scales, "offsets": fs.offsets,
              "meta": dict(meta or {})}
    stored = {k: c for k, c in fs.channels.items() if not isinstance(c, FixedChannel)}
    header["channels"] = {}
    for name, c in stored.items():
        info = {"kind": c.kind}
        if isinstance(c, SplineChannel):
            info["grids"] = {str(r): _fmt(g) for r, g in c.grids.items()}
            info["sensor_index"] = {str(r): [int(i) for i in s] for r, s in c.sensor_index.items()}
        elif isinstance(c, ConstantChannel):
            info["regions"] = int(c.values.shape[1])
        elif isinstance(c, ClosedFormChannel):
            info["family"] = c.family.name
            info["regions"] = int(c.params.shape[1])
            if c.layout is not None:
                info["sensors"] = {str(r): np.asarray(p).tolist() for r, p in c.layout.points.items()}
        header["channels"][name] = info
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i in range(n):
            for name, c in stored.items():
                if isinstance(c, SplineChannel):
                    for r in sorted(c.values):
                        rec = {"index": i, "channel": name, "subdomain": r, "kind": c.kind,
                               "values": _fmt(c.values[r][i])}
                        fh.write(json.dumps(rec) + "\n")
                elif isinstance(c, ConstantChannel):
                    for r in range(1, c.values.shape[1] + 1):
                        rec = {"index": i, "channel": name, "subdomain": r, "kind": c.kind,
                               "value": float(c.values[i, r - 1])}
                        fh.write(json.dumps(rec) + "\n")
                elif isinstance(c, ClosedFormChannel):
                    for r in range(1, c.params.shape[1] + 1):
                        rec = {"index": i, "channel": name, "subdomain": r, "kind": c.kind,
                               "params": _fmt(c.params[i, r - 1])}
                        fh.write(json.dumps(rec) + "\n")


def read_dataset(path, fixed: Mapping[str, Channel] | None = None) -> tuple[FunctionSet, dict]:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != DATASET_FORMAT or header.get("version") != DATASET_VERSION:
            raise ValueError(f"{path}: unsupported dataset header")
        n = header["n_functions"]
        raw: dict[str, dict[int, list]] = {k: {} for k in header["channels"]}
        for line in fh:
            rec = json.loads(line)
            payload = rec.get("values", rec.get("value", rec.get("params")))
            raw[rec["channel"]].setdefault(rec["subdomain"], [None] * n)[rec["index"]] = payload
    channels: dict[str, Channel] = {}
    for name, info in header["channels"].items():
        data = raw[name]
        if info["kind"] == "spline":
            grids = {int(r): np.array(g) for r, g in info["grids"].items()}
            sidx = {int(r): np.array(s, dtype=int) for r, s in info["sensor_index"].items()}
            channels[name] = SplineChannel(grids, {r: np.array(v) for r, v in data.items()}, sidx)
        elif info["kind"] == "constant":
            channels[name] = ConstantChannel(
                np.stack([np.array(data[r]) for r in range(1, info["regions"] + 1)], axis=1))
        elif info["kind"] == "closed-form":
            params = np.stack([np.array(data[r]) for r in range(1, info["regions"] + 1)], axis=1)
            layout = None
            if "sensors" in info:
                layout = SensorLayout({int(r): np.array(p) for r, p in info["sensors"].items()})
            channels[name] = ClosedFormChannel(FAMILIES[info["family"]], params, layout)
        else:
            raise ValueError(f"unknown channel kind {info['kind']}")
    channels.update(fixed or {})
    fs = FunctionSet(channels, [(c, int(r)) for c, r in header["branches"]], header["scales"],
                     header.get("offsets"))
    return fs, header["meta"]


def export_csv(path, channel: Channel, idx, region_points: Mapping[int, np.ndarray]) -> None:
    """Sampled values for plotting: one row per (function, point)."""
    idx = np.atleast_1d(idx)
    with open(path, "w") as fh:
        dims = next(iter(region_points.values())).shape[1]
        fh.write("function,region," + ",".join(f"x{j + 1}" for j in range(dims)) + ",value\n")
        for r, pts in region_points.items():
            vals = channel.value(idx, r, pts)
            for a, n in enumerate(idx):
                for p, v in zip(pts, vals[min(a, len(vals) - 1)]):
                    fh.write(f"{int(n)},{r}," + ",".join(repr(float(c)) for c in p) + f",{float(v)!r}\n")

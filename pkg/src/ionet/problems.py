"""Benchmark problem families: geometry, input-function sampling and PDE data.

``build_functions`` draws the input functions of one split, and
``build_problem`` attaches the fixed data (jumps, boundary values,
coefficients that are not inputs) to produce a :class:`ProblemSpec`.
"""
from __future__ import annotations

import numpy as np

from .fields import (FAMILIES, ClosedFormChannel, ConstantChannel, FixedChannel, FunctionSet,
                     GrfSpec, SensorLayout, SplineChannel, sample_grf, shift_positive)
from .geometry import (INTERFACE, AstroidSquareGeometry, IntervalGeometry,
                       NestedSpheresGeometry)
from .losses import ProblemSpec

EXPERIMENT_IDS = ("ex1", "ex1-3sub", "ex2", "ex3", "ex6")
SPLITS = {"train": 0, "test": 1}

# distinguished parameters with a closed-form solution, per subdomain
EXACT_PARAMS = {
    "ex3": np.array([[80.0, 1600.0], [80.0, 1600.0]]),
    "ex6": np.array([[6.0], [-6e-3]]),
}

# fixed branch-input normalization, scale * (value - offset), keeping inputs O(1)
DEFAULT_SCALES = {
    "ex1": [1.0, 1.0],
    "ex1-3sub": [1.0, 1.0, 1.0],
    "ex2": [1.0, 1.0, 1.0, 1.0, 4.0, 2.0, 20.0, 20.0],
    "ex3": [0.01, 0.01],
    "ex6": [0.1, 1e5],
}

DEFAULT_OFFSETS = {
    "ex1": [2.5, 2.5],
    "ex1-3sub": [2.5, 2.5, 2.5],
    "ex2": [0.0, 0.0, 2.5, 2.5, 0.75, 2.5, -0.05, 0.05],
    "ex3": [0.0, 0.0],
    "ex6": [0.0, 0.0],
}

DEFAULT_SENSORS = {"ex1": 100, "ex1-3sub": 100, "ex2": 100, "ex3": 100, "ex6": 40}


class UnknownExperiment(KeyError):
    pass


def _check(exp_id):
    if exp_id not in EXPERIMENT_IDS:
        raise UnknownExperiment(f"unknown experiment '{exp_id}'; choose from {', '.join(EXPERIMENT_IDS)}")


def make_geometry_for(exp_id: str):
    _check(exp_id)
    if exp_id == "ex1-3sub":
        return IntervalGeometry(interfaces=(0.3, 0.7))
    if exp_id in ("ex1", "ex2"):
        return IntervalGeometry(interfaces=(0.5,))
    if exp_id == "ex3":
        return AstroidSquareGeometry()
    return NestedSpheresGeometry()


def sensor_layout(exp_id: str, geom, n_sensors: int | None = None, seed: int = 0) -> SensorLayout:
    m = n_sensors or DEFAULT_SENSORS[exp_id]
    if geom.kind == "interval":
        pts = np.linspace(geom.lo, geom.hi, m).reshape(m, 1)
    elif geom.kind == "square-astroid":
        side = int(round(np.sqrt(m)))
        if side * side != m:
            raise ValueError("square-grid sensors need a perfect-square count")
        g = np.linspace(-geom.half, geom.half, side)
        pts = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(m, 2)
    else:
        pts = geom.sample_ball(m, geom.r_out, np.random.default_rng([seed, 3, 0]))
    return SensorLayout.split(geom, pts)


def _grf_channel(geom, layout, count, length_scales, seed, split, channel_code, shift):
    """Independent GRF draw per (function, subdomain) on sensors plus subdomain ends."""
    grids, values, sidx = {}, {}, {}
    for r in range(1, geom.n_subdomains + 1):
        lo, hi = geom.subdomain_bounds(r)
        sens = layout.points[r][:, 0]
        grid = np.unique(np.concatenate([sens, [lo, hi]]))
        spec = GrfSpec(length_scales[r - 1], grid, seed=seed)
        draws = np.empty((count, len(grid)))
        for n in range(count):
            z = np.random.default_rng([seed, 1, SPLITS[split], channel_code, r, n]).standard_normal(len(grid))
            draws[n] = sample_grf(spec, z=z)
        grids[r] = grid
        values[r] = shift_positive(draws) if shift else draws
        sidx[r] = np.searchsorted(grid, sens)
    return SplineChannel(grids, values, sidx)


def _uniform(seed, split, code, count, ranges):
    rng = np.random.default_rng([seed, 2, SPLITS[split], code])
    return np.stack([rng.uniform(lo, hi, size=count) for lo, hi in ranges], axis=1)


def build_functions(exp_id: str, count: int, seed: int = 0, split: str = "train",
                    n_sensors: int | None = None, scales=None, offsets=None):
    """Draw ``count`` input functions; returns (geometry, FunctionSet, metadata)."""
    _check(exp_id)
    geom = make_geometry_for(exp_id)
    layout = sensor_layout(exp_id, geom, n_sensors, seed)
    scales = list(scales) if scales is not None else list(DEFAULT_SCALES[exp_id])
    offsets = list(offsets) if offsets is not None else list(DEFAULT_OFFSETS[exp_id])
    I = geom.n_subdomains
    meta = {"experiment": exp_id, "split": split, "seed": seed, "count": count,
            "sensors": sum(layout.counts.values())}
    if exp_id in ("ex1", "ex1-3sub"):
        a = _grf_channel(geom, layout, count, [0.25] * I, seed, split, 0, shift=True)
        if split == "test" and count > 0:
            # record 0: a = 1 everywhere, whose solution is known in closed form
            for r in a.values:
                a.values[r][0] = 1.0
        fs = FunctionSet({"a": a}, [("a", r) for r in range(1, I + 1)], scales, offsets)
    elif exp_id == "ex2":
        f = _grf_channel(geom, layout, count, [0.2, 0.1], seed, split, 1, shift=False)
        b = _grf_channel(geom, layout, count, [0.25, 0.25], seed, split, 2, shift=True)
        a = ConstantChannel(_uniform(seed, split, 3, count, [(0.5, 1.0), (2.0, 3.0)]))
        h = ConstantChannel(_uniform(seed, split, 4, count, [(-0.1, 0.0), (0.0, 0.1)]))
        branches = [("f", 1), ("f", 2), ("b", 1), ("b", 2), ("a", 1), ("a", 2), ("h", 1), ("h", 2)]
        fs = FunctionSet({"f": f, "b": b, "a": a, "h": h}, branches, scales, offsets)
    elif exp_id == "ex3":
        if split == "test":
            params = np.repeat(EXACT_PARAMS["ex3"][None], count, axis=0)
        else:
            params = _uniform(seed, split, 5, count, [(50, 100), (1550, 1650)] * 2).reshape(count, 2, 2)
        f = ClosedFormChannel(FAMILIES["astroid-source"], params, layout)
        fs = FunctionSet({"f": f, **fixed_channels(exp_id)}, [("f", 1), ("f", 2)], scales, offsets)
    else:
        if split == "test":
            params = np.repeat(EXACT_PARAMS["ex6"][None], count, axis=0)
        else:
            params = _uniform(seed, split, 6, count, [(1.0, 10.0), (-1e-2, -1e-3)]).reshape(count, 2, 1)
        f = ClosedFormChannel(FAMILIES["sphere-source"], params, layout)
        fs = FunctionSet({"f": f, **fixed_channels(exp_id)}, [("f", 1), ("f", 2)], scales, offsets)
    return geom, fs, meta


def _r2(p):
    return np.sum(p * p, axis=1)


def _ex3_gd(p):
    return 1.0 / (1.0 + 10.0 * _r2(p))


def _ex3_h(p):
    return 2.0 / (1.0 + 10.0 * _r2(p))


def _ex6_gd(p):
    return np.prod(np.sin(p), axis=1) - np.exp(p.sum(axis=1))


def _ex6_gn(p, r_in=0.5):
    # a2 du2/dn - a1 du1/dn with n = x / r_in
    s, c = np.sin(p), np.cos(p)
    outer = sum(p[:, i] * c[:, i] * np.prod(np.delete(s, i, axis=1), axis=1) for i in range(6))
    inner = p.sum(axis=1) * np.exp(p.sum(axis=1))
    return (1e-3 * outer - inner) / r_in


def _ex6_h(p):
    return np.prod(np.sin(p), axis=1)


def fixed_channels(exp_id: str) -> dict:
    """Channels of a problem that are not sampled per function."""
    if exp_id == "ex3":
        return {"a": FixedChannel.constant({1: 2.0, 2: 1.0}),
                "gD": FixedChannel({None: _ex3_gd}),
                "gN": FixedChannel.constant(0.0),
                "h": FixedChannel({None: _ex3_h})}
    if exp_id == "ex6":
        return {"a": FixedChannel.constant({1: 1.0, 2: 1e-3}),
                "gD": FixedChannel({None: _ex6_gd}),
                "gN": FixedChannel({None: _ex6_gn}),
                "h": FixedChannel({None: _ex6_h})}
    return {}


def build_problem(exp_id: str, geom, fs: FunctionSet) -> ProblemSpec:
    _check(exp_id)
    ch = fs.channels
    if exp_id == "ex1":
        return ProblemSpec(geom, ch["a"], jump_value=FixedChannel.constant(1.0),
                           jump_flux=FixedChannel.constant(0.0),
                           boundary=FixedChannel.constant({1: 1.0, 2: 0.0}))
    if exp_id == "ex1-3sub":
        return ProblemSpec(geom, ch["a"], jump_value=FixedChannel.constant({1: 1.0, 2: -0.5}),
                           jump_flux=FixedChannel.constant(0.0),
                           boundary=FixedChannel.constant({1: 1.0, 3: 0.0}))
    if exp_id == "ex2":
        return ProblemSpec(geom, ch["a"], source=ch["f"], reaction=ch["b"],
                           jump_value=FixedChannel.constant(0.0),
                           jump_flux=FixedChannel.constant(0.0), boundary=ch["h"])
    return ProblemSpec(geom, ch["a"], source=ch["f"], jump_value=ch["gD"],
                       jump_flux=ch["gN"], boundary=ch["h"])


def evaluation_points(exp_id: str, geom, n_grid: int = 1000, n_mc: int = 10_000, seed: int = 0):
    """Points and subdomain sides at which test errors are measured.

    1D uses the nodes of the uniform solver mesh, 2D a 101 x 101 grid, 6D
    uniform Monte Carlo points.  Points on an interface are read from the
    lower-numbered side.
    """
    if geom.kind == "interval":
        pts = np.linspace(geom.lo, geom.hi, n_grid + 1).reshape(-1, 1)
    elif geom.kind == "square-astroid":
        g = np.linspace(-geom.half, geom.half, 101)
        pts = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    else:
        pts = geom.sample_ball(n_mc, geom.r_out, np.random.default_rng([seed, 7, 0]))
    sides = geom.classify_many(pts)
    if geom.kind == "interval":
        for k in np.flatnonzero(sides == INTERFACE):
            sides[k] = int(np.searchsorted(np.asarray(geom.interfaces), pts[k, 0], side="left") + 1)
    else:
        sides[sides == INTERFACE] = 1
    return pts, sides

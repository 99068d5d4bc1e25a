"""Reference solutions and error metrics.

The 1D solver discretizes -(a u')' + b u = f with the conservative
three-point stencil and treats every interface as a grid node carrying two
unknowns (u-, u+).  The two extra rows enforce

    u+ - u-                      = g_D
    a+ u'(x+) - a- u'(x-)         = g_N

where each one-sided flux is the linear extrapolation of the two nearest
half-node fluxes on its side.  The scheme stays second order, is exact for
piecewise-linear solutions, and conserves the discrete flux across the
interface.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from .geometry import IntervalGeometry
from .networks import FieldJet


class SolverError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


class MetricError(ValueError):
    pass


@dataclass
class Grid1D:
    lo: float
    hi: float
    n: int
    interfaces: tuple = ()

    def __post_init__(self):
        self.h = (self.hi - self.lo) / self.n
        self.nodes = self.lo + self.h * np.arange(self.n + 1)
        idx = []
        for xg in self.interfaces:
            k = int(round((xg - self.lo) / self.h))
            if abs(self.lo + k * self.h - xg) > 1e-9 * self.h + 1e-14:
                raise ConfigError(f"interface {xg} is not a grid node for n={self.n}")
            idx.append(k)
        self.interface_index = idx
        bounds = [0, *idx, self.n]
        if any(b - a < 2 for a, b in zip(bounds[:-1], bounds[1:])):
            raise ConfigError(f"n={self.n} leaves fewer than 3 nodes in a subdomain")


@dataclass
class ReferenceSolution:
    """Nodal values; interface nodes appear twice (inner side, then outer side)."""

    x: np.ndarray
    side: np.ndarray
    u: np.ndarray
    meta: dict = field(default_factory=dict)

    def grid_values(self, interface_side: str = "inner") -> np.ndarray:
        """One value per grid node; interface nodes from the chosen side."""
        keep = np.ones(len(self.x), dtype=bool)
        dup = np.flatnonzero(np.diff(self.x) == 0)
        keep[dup + (1 if interface_side == "inner" else 0)] = False
        return self.u[keep]

    def jumps(self) -> np.ndarray:
        dup = np.flatnonzero(np.diff(self.x) == 0)
        return self.u[dup + 1] - self.u[dup]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# problem {self.meta.get('hash', '')}\n")
            fh.write(f"# order {self.meta.get('order', 2)} n {self.meta.get('n', len(self.x) - 1)}\n")
            fh.write("x,side,u\n")
            for x, s, u in zip(self.x, self.side, self.u):
                fh.write(f"{float(x)!r},{int(s)},{float(u)!r}\n")

    @classmethod
    def from_csv(cls, path) -> "ReferenceSolution":
        meta = {}
        with open(path) as fh:
            lines = fh.read().splitlines()
        meta["hash"] = lines[0].split(" ", 2)[2] if lines[0].startswith("# problem") else ""
        rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[3:]])
        return cls(rows[:, 0], rows[:, 1].astype(int), rows[:, 2], meta)


def _dirichlet(problem, index, region, x):
    return float(problem.boundary.value([index], region, np.array([[x]]))[0, 0])


def _values(channel, index, region, x):
    if channel is None:
        return np.zeros(len(x))
    return channel.value([index], region, np.asarray(x).reshape(-1, 1))[0]


def solve_interface_1d(problem, n: int, index: int = 0) -> ReferenceSolution:
    """Second-order dual-node finite-difference solve for one input function."""
    geom = problem.geometry
    if not isinstance(geom, IntervalGeometry):
        raise ConfigError("the reference solver handles 1D interval problems only")
    if problem.nonlinear_reaction is not None:
        raise ConfigError("nonlinear reactions are not supported by the reference solver")
    grid = Grid1D(geom.lo, geom.hi, n, geom.interfaces)
    h, xs, kif = grid.h, grid.nodes, grid.interface_index
    I = geom.n_subdomains

    # unknown positions: interface nodes get two consecutive slots
    pos = np.arange(n + 1) + np.searchsorted(kif, np.arange(n + 1), side="left")
    size = n + 1 + len(kif)
    x_unk = np.empty(size)
    side_unk = np.empty(size, dtype=int)
    bounds = [0, *kif, n]

    def slot(node, region):
        """Unknown holding node ``node`` as seen from ``region``."""
        if node in kif:
            m = kif.index(node) + 1  # interface between m and m+1
            return pos[node] + (0 if region == m else 1)
        return pos[node]

    lower, upper = 3, 2
    ab = np.zeros((lower + upper + 1, size))
    rhs = np.zeros(size)

    def put(row, col, val):
        ab[upper + row - col, col] += val

    for r in range(1, I + 1):
        a_node, b_node = bounds[r - 1], bounds[r]
        nodes = np.arange(a_node + 1, b_node)
        x_unk[[slot(k, r) for k in range(a_node, b_node + 1)]] = xs[a_node:b_node + 1]
        side_unk[[slot(k, r) for k in range(a_node, b_node + 1)]] = r
        xi = xs[nodes]
        a_lo = _values(problem.coefficient, index, r, xi - 0.5 * h)
        a_hi = _values(problem.coefficient, index, r, xi + 0.5 * h)
        if np.any(a_lo <= 0) or np.any(a_hi <= 0):
            raise SolverError(f"coefficient not positive in subdomain {r}")
        b = _values(problem.reaction, index, r, xi)
        f = _values(problem.source, index, r, xi)
        for k, al, ah, bb, ff in zip(nodes, a_lo, a_hi, b, f):
            row = slot(k, r)
            put(row, slot(k - 1, r), -al / h ** 2)
            put(row, row, (al + ah) / h ** 2 + bb)
            put(row, slot(k + 1, r), -ah / h ** 2)
            rhs[row] = ff

    put(0, 0, 1.0)
    rhs[0] = _dirichlet(problem, index, 1, geom.lo)
    put(size - 1, size - 1, 1.0)
    rhs[size - 1] = _dirichlet(problem, index, I, geom.hi)

    for m, k in enumerate(kif, start=1):
        xg = np.array([[xs[k]]])
        um, up = slot(k, m), slot(k, m + 1)
        gd = float(problem.jump_value.value([index], m, xg)[0, 0]) if problem.jump_value else 0.0
        gn = float(problem.jump_flux.value([index], m, xg)[0, 0]) if problem.jump_flux else 0.0
        # flux row: half-node fluxes extrapolated linearly to the interface from
        # each side (second order, and discretely conservative); scaled by 1/h
        ap1, ap2 = _values(problem.coefficient, index, m + 1, xs[k] + np.array([0.5, 1.5]) * h)
        am1, am2 = _values(problem.coefficient, index, m, xs[k] - np.array([0.5, 1.5]) * h)
        # jump row
        put(um, um, -1.0)
        put(um, up, 1.0)
        rhs[um] = gd
        c = 1.0 / (2.0 * h * h)
        k1p, k2p = slot(k + 1, m + 1), slot(k + 2, m + 1)
        k1m, k2m = slot(k - 1, m), slot(k - 2, m)
        # F+ = (3 ap1 (u_{k+1} - u+) - ap2 (u_{k+2} - u_{k+1})) / 2h
        put(up, up, -3.0 * ap1 * c)
        put(up, k1p, (3.0 * ap1 + ap2) * c)
        put(up, k2p, -ap2 * c)
        # - F- = -(3 am1 (u- - u_{k-1}) - am2 (u_{k-1} - u_{k-2})) / 2h
        put(up, um, -3.0 * am1 * c)
        put(up, k1m, (3.0 * am1 + am2) * c)
        put(up, k2m, -am2 * c)
        rhs[up] = gn / h

    diag = ab[upper]
    zero_rows = np.flatnonzero(diag == 0)
    try:
        u = solve_banded((lower, upper), ab, rhs)
    except (LinAlgError, ValueError) as exc:
        raise SolverError(f"singular interface system (zero pivots near rows {zero_rows.tolist()}): {exc}") from exc
    if not np.all(np.isfinite(u)):
        raise SolverError("non-finite solution")
    digest = hashlib.sha256(ab.tobytes() + rhs.tobytes()).hexdigest()[:16]
    return ReferenceSolution(x_unk, side_unk, u, {"hash": digest, "order": 2, "n": n})


def discrete_fluxes(problem, sol: ReferenceSolution, index: int = 0) -> dict[int, np.ndarray]:
    """Half-node fluxes a u' per subdomain plus the fluxes extrapolated to its interface ends."""
    geom = problem.geometry
    out = {}
    for r in range(1, geom.n_subdomains + 1):
        mask = sol.side == r
        x, u = sol.x[mask], sol.u[mask]
        h = x[1] - x[0]
        mid = 0.5 * (x[1:] + x[:-1])
        a = _values(problem.coefficient, index, r, mid)
        flux = list(a * np.diff(u) / h)
        if r > 1:
            flux.insert(0, 1.5 * flux[0] - 0.5 * flux[1])
        if r < geom.n_subdomains:
            flux.append(1.5 * flux[-1] - 0.5 * flux[-2])
        out[r] = np.array(flux)
    return out


# --------------------------------------------------------------------------
# exact solutions
# --------------------------------------------------------------------------

def _ex3_parts(points, region):
    p = np.asarray(points, dtype=np.float64).reshape(len(points), 2)
    c = 1.0 if region == 1 else 2.0
    r2 = np.sum(p * p, axis=1)
    s = 1.0 + 10.0 * r2
    u = c / s
    grad = (-20.0 * c / s ** 2)[:, None] * p
    # d2/dx_j^2 (c / s) = -20 c / s^2 + 800 c x_j^2 / s^3
    second = (-20.0 * c / s ** 2)[:, None] + (800.0 * c / s ** 3)[:, None] * p * p
    return u, grad, second


def _ex6_parts(points, region):
    p = np.asarray(points, dtype=np.float64).reshape(len(points), 6)
    if region == 1:
        u = np.exp(p.sum(axis=1))
        grad = np.repeat(u[:, None], 6, axis=1)
        return u, grad, grad.copy()
    s, c = np.sin(p), np.cos(p)
    u = np.prod(s, axis=1)
    grad = np.empty_like(p)
    for j in range(6):
        grad[:, j] = c[:, j] * np.prod(np.delete(s, j, axis=1), axis=1)
    return u, grad, -np.repeat(u[:, None], 6, axis=1)


_EXACT = {"ex3": _ex3_parts, "ex6": _ex6_parts}


def exact_solution(example: str, x, region: int | None = None, geometry=None) -> np.ndarray:
    """Closed-form solution at the distinguished parameters of ex3 / ex6.

    ``x`` is one point or an array of points; the subdomain comes from
    ``region`` or from classifying with ``geometry``.
    """
    if example not in _EXACT:
        raise ValueError(f"no exact solution for '{example}'")
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if region is None:
        if geometry is None:
            from .problems import make_geometry_for
            geometry = make_geometry_for(example)
        regions = geometry.classify_many(pts)
    else:
        regions = np.full(len(pts), region)
    out = np.empty(len(pts))
    for r in (1, 2):
        mask = regions == r
        if mask.any():
            out[mask] = _EXACT[example](pts[mask], r)[0]
    if np.any((regions != 1) & (regions != 2)):
        raise ValueError("exact solution requested at an interface or exterior point; pass region=")
    return out if np.ndim(x) > 1 else out[0]


class ClosedFormField:
    """Differentiable field from per-side callables ``f(points) -> (u, grad, second)``.

    Used to check that losses vanish on exact solutions.
    """

    def __init__(self, parts: dict):
        self.parts = parts

    def evaluate(self, side, points, order=0):
        pts = np.asarray(points, dtype=np.float64)
        u, g, s = self.parts[side](pts)
        jet = FieldJet(np.asarray(u)[None, :])
        if order >= 1:
            jet.grad = [g[None, :, j] for j in range(pts.shape[1])]
        if order >= 2:
            jet.second = [s[None, :, j] for j in range(pts.shape[1])]
        return jet


def exact_field(example: str) -> ClosedFormField:
    fn = _EXACT[example]
    return ClosedFormField({r: (lambda p, r=r: fn(p, r)) for r in (1, 2)})


def affine_parts(slope, intercept):
    """Parts for u = slope * x + intercept in 1D."""
    def parts(p):
        x = p[:, 0]
        return slope * x + intercept, np.full((len(x), 1), float(slope)), np.zeros((len(x), 1))
    return parts


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

def relative_l2(pred, ref) -> float:
    pred, ref = np.asarray(pred, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    denom = np.sum(ref * ref)
    if denom == 0:
        raise MetricError("reference has zero norm; relative error undefined")
    return float(np.sqrt(np.sum((ref - pred) ** 2) / denom))


def mean_relative_l2(preds, refs) -> tuple[float, float, np.ndarray]:
    """Per-function relative L2 errors with their mean and standard deviation."""
    per = np.array([relative_l2(p, r) for p, r in zip(preds, refs)])
    return float(per.mean()), float(per.std()), per


def monte_carlo_points(geometry, n: int, seed: int = 0) -> np.ndarray:
    """Uniform points in the whole domain."""
    rng = np.random.default_rng(seed)
    if geometry.kind == "nested-spheres":
        return geometry.sample_ball(n, geometry.r_out, rng)
    if geometry.kind == "square-astroid":
        return rng.uniform(-geometry.half, geometry.half, size=(n, 2))
    return rng.uniform(geometry.lo, geometry.hi, size=(n, 1))


def verify_example1_solver(n: int = 1000, count: int = 8, seed: int = 0) -> dict:
    """Flux-conservation and jump checks of the solver on sampled ex1 coefficients."""
    from .problems import build_functions, build_problem

    report = {"n": n, "flux_variation": [], "jump_residual": []}
    for exp_id in ("ex1", "ex1-3sub"):
        geom, fs, _ = build_functions(exp_id, count, seed, "train")
        problem = build_problem(exp_id, geom, fs)
        for i in range(count):
            sol = solve_interface_1d(problem, n, i)
            fluxes = discrete_fluxes(problem, sol, i)
            var = max(float(np.ptp(f)) for f in fluxes.values())
            expected = np.array([float(problem.jump_value.value([i], m, np.array([[xg]]))[0, 0])
                                 for m, xg in enumerate(geom.interfaces, start=1)])
            report["flux_variation"].append((exp_id, var))
            report["jump_residual"].append((exp_id, float(np.max(np.abs(sol.jumps() - expected)))))
    report["max_flux_variation"] = max(v for _, v in report["flux_variation"])
    report["max_jump_residual"] = max(v for _, v in report["jump_residual"])
    return report

"""Benchmark geometries: region classification and point samplers.

Region codes are integers: ``1..I`` for the subdomains, :data:`INTERFACE`
for points on an interface and :data:`EXTERIOR` for points outside the
closed domain.  Interface normals point from the lower-numbered subdomain
into the higher-numbered one (Omega_1 -> Omega_2).

Every sampler is a pure function of its arguments and ``seed``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INTERFACE = 0
EXTERIOR = -1
TOL = 1e-12


class ConfigurationError(ValueError):
    pass


class GeometryError(ValueError):
    pass


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass
class InterfaceSample:
    """Interface points with unit normals.

    ``inner[k]`` / ``outer[k]`` are the regions on the two sides of point
    ``k``; the normal points from ``inner`` into ``outer``.  ``label[k]``
    identifies which interface the point lies on (1-based).
    """

    points: np.ndarray
    normals: np.ndarray
    inner: np.ndarray
    outer: np.ndarray
    label: np.ndarray

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(zip(self.points, self.normals))

    def subset(self, mask) -> "InterfaceSample":
        return InterfaceSample(self.points[mask], self.normals[mask], self.inner[mask],
                               self.outer[mask], self.label[mask])


class Geometry:
    kind: str = ""
    dim: int = 0
    n_subdomains: int = 2

    def classify_many(self, points) -> np.ndarray:
        raise NotImplementedError

    def classify(self, x) -> int:
        return int(self.classify_many(np.atleast_2d(np.asarray(x, dtype=np.float64).reshape(1, -1)))[0])

    def interface_points(self, n: int, seed=None) -> InterfaceSample:
        raise NotImplementedError

    def sample_boundary(self, n: int, seed=None) -> np.ndarray:
        raise NotImplementedError

    def bounding_box(self) -> tuple[list, list]:
        raise NotImplementedError

    def boundary_region(self, points) -> np.ndarray:
        """Subdomain whose closure holds each boundary point."""
        return np.full(len(points), self.n_subdomains, dtype=int)

    def _propose(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def sample_interior(self, region: int, n: int, seed=None, max_rounds: int = 1000) -> np.ndarray:
        """Rejection sampling from a bounding proposal; override for direct samplers."""
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = _rng(seed)
        out, accepted, proposed = [], 0, 0
        for _ in range(max_rounds):
            cand = self._propose(max(2 * n, 64), rng)
            keep = cand[self.classify_many(cand) == region]
            proposed += len(cand)
            accepted += len(keep)
            out.append(keep)
            if proposed >= 1000 and accepted < 0.01 * proposed:
                raise ConfigurationError(
                    f"rejection acceptance {accepted}/{proposed} below 1% for region {region}")
            if accepted >= n:
                return np.concatenate(out)[:n]
        raise ConfigurationError(f"could not draw {n} points in region {region}")


@dataclass
class IntervalGeometry(Geometry):
    """[lo, hi] split by interface points; Omega_1 is the leftmost piece."""

    interfaces: tuple = (0.5,)
    lo: float = 0.0
    hi: float = 1.0
    kind: str = field(default="interval", init=False)
    dim: int = field(default=1, init=False)

    def __post_init__(self):
        self.interfaces = tuple(float(v) for v in self.interfaces)
        if list(self.interfaces) != sorted(self.interfaces):
            raise ConfigurationError("interfaces must be increasing")
        self.n_subdomains = len(self.interfaces) + 1

    def bounding_box(self):
        return [self.lo], [self.hi]

    @property
    def breakpoints(self) -> np.ndarray:
        return np.array([self.lo, *self.interfaces, self.hi])

    def subdomain_bounds(self, region: int) -> tuple[float, float]:
        b = self.breakpoints
        return float(b[region - 1]), float(b[region])

    def classify_many(self, points) -> np.ndarray:
        x = np.asarray(points, dtype=np.float64).reshape(len(points), -1)[:, 0]
        region = np.searchsorted(np.asarray(self.interfaces), x, side="right") + 1
        for xg in self.interfaces:
            region[np.abs(x - xg) <= TOL] = INTERFACE
        region[(x < self.lo - TOL) | (x > self.hi + TOL)] = EXTERIOR
        return region

    def interface_points(self, n: int = 1, seed=None) -> InterfaceSample:
        k = len(self.interfaces)
        return InterfaceSample(
            points=np.array(self.interfaces).reshape(k, 1),
            normals=np.ones((k, 1)),
            inner=np.arange(1, k + 1),
            outer=np.arange(2, k + 2),
            label=np.arange(1, k + 1),
        )

    def sample_interior(self, region: int, n: int, seed=None, max_rounds: int = 1000) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        a, b = self.subdomain_bounds(region)
        rng = _rng(seed)
        x = rng.uniform(a, b, size=n)
        # keep samples off the interface nodes themselves
        x = np.clip(x, a + 1e-9 if region > 1 else a, b - 1e-9 if region < self.n_subdomains else b)
        return x.reshape(n, 1)

    def sample_boundary(self, n: int = 2, seed=None) -> np.ndarray:
        return np.array([[self.lo], [self.hi]])

    def boundary_region(self, points) -> np.ndarray:
        x = np.asarray(points).reshape(len(points), -1)[:, 0]
        return np.where(x <= self.lo + TOL, 1, self.n_subdomains)


@dataclass
class AstroidSquareGeometry(Geometry):
    """Square [-half, half]^2 with an astroid interface; Omega_1 is inside."""

    scale: float = 0.65
    half: float = 1.0
    cusp_tol: float = 1e-6
    kind: str = field(default="square-astroid", init=False)
    dim: int = field(default=2, init=False)

    def __post_init__(self):
        self.n_subdomains = 2

    def bounding_box(self):
        return [-self.half] * 2, [self.half] * 2

    def implicit(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return np.abs(p[:, 0]) ** (2.0 / 3.0) + np.abs(p[:, 1]) ** (2.0 / 3.0) - self.scale ** (2.0 / 3.0)

    def classify_many(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(len(points), 2)
        phi = self.implicit(p)
        region = np.where(phi < 0, 1, 2)
        region[np.abs(phi) <= TOL] = INTERFACE
        region[np.any(np.abs(p) > self.half + TOL, axis=1)] = EXTERIOR
        return region

    def curve(self, theta) -> tuple[np.ndarray, np.ndarray]:
        """Point and outward unit normal at curve parameter ``theta``."""
        theta = np.asarray(theta, dtype=np.float64)
        c, s = np.cos(theta), np.sin(theta)
        if np.any(np.abs(c * s) < self.cusp_tol):
            raise GeometryError("normal undefined at an astroid cusp")
        pts = np.stack([self.scale * c ** 3, self.scale * s ** 3], axis=-1)
        normals = np.stack([np.sign(c) * np.abs(s), np.sign(s) * np.abs(c)], axis=-1)
        return pts, normals

    def interface_points(self, n: int, seed=None) -> InterfaceSample:
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = _rng(seed)
        thetas = []
        while len(thetas) < n:
            t = rng.uniform(0.0, 2.0 * np.pi, size=2 * n)
            t = t[np.abs(np.cos(t) * np.sin(t)) >= self.cusp_tol]
            thetas.extend(t.tolist())
        pts, normals = self.curve(np.array(thetas[:n]))
        ones = np.ones(n, dtype=int)
        return InterfaceSample(pts, normals, ones, 2 * ones, ones)

    def _propose(self, n, rng):
        return rng.uniform(-self.half, self.half, size=(n, 2))

    def sample_boundary(self, n: int, seed=None) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = _rng(seed)
        side = rng.integers(0, 4, size=n)
        t = rng.uniform(-self.half, self.half, size=n)
        pts = np.empty((n, 2))
        fixed = np.where(side % 2 == 0, -self.half, self.half)
        horizontal = side < 2
        pts[:, 0] = np.where(horizontal, t, fixed)
        pts[:, 1] = np.where(horizontal, fixed, t)
        return pts


@dataclass
class NestedSpheresGeometry(Geometry):
    """Ball of radius ``r_out`` containing the ball of radius ``r_in`` (Omega_1)."""

    r_in: float = 0.5
    r_out: float = 0.6
    dim: int = 6
    kind: str = field(default="nested-spheres", init=False)

    def __post_init__(self):
        self.n_subdomains = 2

    def classify_many(self, points) -> np.ndarray:
        r = np.linalg.norm(np.asarray(points, dtype=np.float64).reshape(len(points), self.dim), axis=1)
        region = np.where(r < self.r_in, 1, 2)
        region[np.abs(r - self.r_in) <= TOL] = INTERFACE
        region[r > self.r_out + TOL] = EXTERIOR
        return region

    def bounding_box(self):
        return [-self.r_out] * self.dim, [self.r_out] * self.dim

    def _directions(self, n, rng):
        v = rng.standard_normal((n, self.dim))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    def sample_ball(self, n: int, radius: float, seed=None) -> np.ndarray:
        rng = _rng(seed)
        u = self._directions(n, rng)
        r = radius * rng.uniform(size=n) ** (1.0 / self.dim)
        return u * r[:, None]

    def sample_interior(self, region: int, n: int, seed=None, max_rounds: int = 1000) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = _rng(seed)
        u = self._directions(n, rng)
        lo, hi = (0.0, self.r_in) if region == 1 else (self.r_in, self.r_out)
        d = self.dim
        # radius CDF proportional to r^d on [lo, hi]
        r = (lo ** d + rng.uniform(size=n) * (hi ** d - lo ** d)) ** (1.0 / d)
        if region == 2:
            r = np.maximum(r, self.r_in * (1 + 1e-12) + 1e-15)
        return u * r[:, None]

    def interface_points(self, n: int, seed=None) -> InterfaceSample:
        if n < 1:
            raise ValueError("n must be >= 1")
        u = self._directions(n, _rng(seed))
        ones = np.ones(n, dtype=int)
        return InterfaceSample(self.r_in * u, u, ones, 2 * ones, ones)

    def sample_boundary(self, n: int, seed=None) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        return self.r_out * self._directions(n, _rng(seed))


def make_geometry(kind: str, **kw) -> Geometry:
    kinds = {"interval": IntervalGeometry, "square-astroid": AstroidSquareGeometry,
             "nested-spheres": NestedSpheresGeometry}
    if kind not in kinds:
        raise ConfigurationError(f"unknown geometry '{kind}'")
    return kinds[kind](**kw)

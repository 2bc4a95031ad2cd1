"""Cayley-disk grid for the field half-plane and the density containers on it.

The scaled field phi = u1 + i u2 (u2 > 0) is mapped to the unit disk by
w = (phi - i)/(phi + i). A uniform n x n grid covers the square [-1, 1]^2 in
w = x + i y; cells whose centre lies inside the unit circle are active. The
whole half-plane is represented, so there is no outer truncation. The circle
|w| = 1 is the image of u2 = 0 together with the point at infinity (w = 1).

Cell values store the mass per unit (x, y) area, so the mass of a cell is
value * h^2 and the u-space density is value / jac with jac = 4 / |1 - w|^4.
The reflection u1 -> -u1 is y -> -y, which maps the grid onto itself.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .errors import ConfigError, UsageError

KINDS = ("probability", "weighted", "signed")


@dataclass(frozen=True)
class GridSpec:
    n: int = 256
    dt: float = 0.01
    cfl: float = 0.5
    smoothing: float = 2.0

    def __post_init__(self):
        problems = []
        if int(self.n) != self.n or self.n < 16 or self.n % 2:
            problems.append(f"grid.n must be an even integer >= 16, got {self.n}")
        if not self.dt > 0:
            problems.append(f"grid.dt must be > 0, got {self.dt}")
        if not 0 < self.cfl <= 0.5:
            problems.append(f"grid.cfl must lie in (0, 0.5], got {self.cfl}")
        if not self.smoothing > 0:
            problems.append(f"grid.smoothing must be > 0, got {self.smoothing}")
        if problems:
            raise ConfigError("invalid grid", problems)

    @property
    def h(self) -> float:
        return 2.0 / self.n

    def refine(self, factor: int) -> "GridSpec":
        if factor < 1 or int(factor) != factor:
            raise ConfigError(f"refinement factor must be a positive integer, got {factor}")
        return replace(self, n=self.n * factor, dt=self.dt / factor)

    @property
    def geometry(self) -> "Geometry":
        return geometry(self.n)


def cayley(u1, u2):
    phi = np.asarray(u1) + 1j * np.asarray(u2)
    return (phi - 1j) / (phi + 1j)


def inverse_cayley(w):
    phi = 1j * (1.0 + w) / (1.0 - w)
    return phi.real, phi.imag


def hyperbolic_invariant(u1, u2):
    """H = (1 + u1^2 + u2^2) / (2 u2), conserved by the unit-frequency drift."""
    u1, u2 = np.asarray(u1), np.asarray(u2)
    return (1.0 + u1 * u1 + u2 * u2) / (2.0 * u2)


@dataclass(frozen=True, eq=False)
class Geometry:
    n: int
    h: float
    xc: np.ndarray
    w: np.ndarray            # cell centres (complex), shape (n, n), index [i, j] = (x_i, y_j)
    active: np.ndarray
    band: np.ndarray         # active cells touching an inactive cell or the square edge
    u1: np.ndarray           # 0 on inactive cells
    u2: np.ndarray           # 1 on inactive cells (harmless placeholder)
    jac: np.ndarray          # d(u1,u2)/d(x,y); 0 on inactive cells
    open_x: np.ndarray       # (n+1, n) faces between two active cells
    open_y: np.ndarray       # (n, n+1)
    wx: np.ndarray           # x-face centres
    wy: np.ndarray           # y-face centres
    index: np.ndarray        # active cell -> compressed index, -1 elsewhere
    n_active: int = field(default=0)

    def mirror(self, values: np.ndarray) -> np.ndarray:
        """Values of f(-u1, u2) given f(u1, u2)."""
        return values[:, ::-1]


@lru_cache(maxsize=8)
def geometry(n: int) -> Geometry:
    h = 2.0 / n
    xc = -1.0 + (np.arange(n) + 0.5) * h
    w = xc[:, None] + 1j * xc[None, :]
    active = np.abs(w) < 1.0
    inner = np.zeros_like(active)
    inner[1:-1, 1:-1] = (active[1:-1, 1:-1] & active[2:, 1:-1] & active[:-2, 1:-1]
                         & active[1:-1, 2:] & active[1:-1, :-2])
    band = active & ~inner
    ws = np.where(active, w, 0.0)
    u1, u2 = inverse_cayley(ws)
    u1 = np.where(active, u1, 0.0)
    u2 = np.where(active, u2, 1.0)
    jac = np.where(active, 4.0 / np.abs(1.0 - ws) ** 4, 0.0)
    open_x = np.zeros((n + 1, n), dtype=bool)
    open_x[1:-1] = active[1:] & active[:-1]
    open_y = np.zeros((n, n + 1), dtype=bool)
    open_y[:, 1:-1] = active[:, 1:] & active[:, :-1]
    xf = -1.0 + np.arange(n + 1) * h
    wx = xf[:, None] + 1j * xc[None, :]
    wy = xc[:, None] + 1j * xf[None, :]
    index = np.full((n, n), -1, dtype=np.int64)
    index[active] = np.arange(int(active.sum()))
    for a in (xc, w, active, band, u1, u2, jac, open_x, open_y, wx, wy, index):
        a.setflags(write=False)
    return Geometry(n, h, xc, w, active, band, u1, u2, jac, open_x, open_y, wx, wy, index,
                    int(active.sum()))


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """Real field on the disk grid (P, Q, D, or one of R and I)."""

    grid: GridSpec
    values: np.ndarray
    time: float = 0.0
    kind: str = "probability"
    normalized: bool = False

    def __post_init__(self):
        n = self.grid.n
        if self.values.shape != (n, n):
            raise UsageError(f"values shape {self.values.shape} does not match grid n={n}")
        if self.kind not in KINDS:
            raise UsageError(f"unknown density kind {self.kind!r}")
        if not np.all(np.isfinite(self.values)):
            raise UsageError("density values must be finite")

    @property
    def geometry(self) -> Geometry:
        return self.grid.geometry

    def mass(self) -> float:
        return float(np.sum(self.values) * self.grid.h ** 2)

    def cell_mass(self) -> np.ndarray:
        return self.values * self.grid.h ** 2

    def integrate(self, kernel: np.ndarray, mask: np.ndarray | None = None) -> float:
        """Midpoint rule for the u-space integral of kernel(u1, u2) * F."""
        m = self.geometry.active if mask is None else mask
        return float(np.sum(np.where(m, kernel * self.values, 0.0)) * self.grid.h ** 2)

    def u_density(self) -> np.ndarray:
        g = self.geometry
        return np.where(g.active, self.values / np.where(g.active, g.jac, 1.0), 0.0)

    def mirrored(self) -> "DensityGrid":
        return replace(self, values=np.ascontiguousarray(self.geometry.mirror(self.values)))

    def scaled(self, factor: float) -> "DensityGrid":
        return replace(self, values=self.values * factor, normalized=False)

    def normalize(self) -> "DensityGrid":
        m = self.mass()
        if m == 0:
            raise UsageError("cannot normalize a zero field")
        return replace(self, values=self.values / m, normalized=True)

    def mean(self) -> tuple[float, float]:
        g, m = self.geometry, self.mass()
        return self.integrate(g.u1) / m, self.integrate(g.u2) / m

    def band_mass(self) -> float:
        return float(np.sum(np.abs(self.values[self.geometry.band])) * self.grid.h ** 2)


@dataclass(frozen=True, eq=False)
class ComplexGrid:
    re: DensityGrid
    im: DensityGrid

    def __post_init__(self):
        if self.re.grid != self.im.grid or self.re.time != self.im.time:
            raise UsageError("R and I components must share grid and time")

    @classmethod
    def from_values(cls, grid: GridSpec, values: np.ndarray, time: float = 0.0) -> "ComplexGrid":
        return cls(DensityGrid(grid, np.ascontiguousarray(values.real), time, "signed"),
                   DensityGrid(grid, np.ascontiguousarray(values.imag), time, "signed"))

    @property
    def grid(self) -> GridSpec:
        return self.re.grid

    @property
    def time(self) -> float:
        return self.re.time

    @property
    def values(self) -> np.ndarray:
        return self.re.values + 1j * self.im.values

    def integrate(self, kernel: np.ndarray, mask: np.ndarray | None = None) -> complex:
        g = self.re.geometry
        m = g.active if mask is None else mask
        return complex(np.sum(np.where(m, kernel * self.values, 0.0)) * self.grid.h ** 2)

    def norm_sq(self) -> float:
        """Integral of |Upsilon|^2 over u-space (u-density squared times du)."""
        g = self.re.geometry
        f = np.abs(self.values) ** 2 / np.where(g.active, g.jac, 1.0)
        return float(np.sum(np.where(g.active, f, 0.0)) * self.grid.h ** 2)


def delta(grid: GridSpec, u1: float, u2: float, weight: float = 1.0, time: float = 0.0,
          kind: str = "probability", width: float | None = None) -> DensityGrid:
    """Unit delta at (u1, u2) smoothed to a grid Gaussian of ``width`` cells."""
    if not u2 > 0:
        raise UsageError(f"delta location needs u2 > 0, got {u2}")
    g = grid.geometry
    s = (grid.smoothing if width is None else width) * grid.h
    w0 = complex(cayley(u1, u2))
    r2 = np.abs(g.w - w0) ** 2
    bump = np.where(g.active, np.exp(-0.5 * r2 / (s * s)), 0.0)
    total = bump.sum() * grid.h ** 2
    if total <= 0 or not np.isfinite(total):
        raise UsageError(f"delta at ({u1}, {u2}) does not overlap the active grid")
    return DensityGrid(grid, bump * (weight / total), time, kind, normalized=(weight == 1.0))


def zeros(grid: GridSpec, time: float = 0.0, kind: str = "signed") -> DensityGrid:
    return DensityGrid(grid, np.zeros((grid.n, grid.n)), time, kind)


def coarsen(values: np.ndarray, factor: int) -> np.ndarray:
    """Sum cell masses over factor x factor blocks."""
    n = values.shape[0]
    if n % factor:
        raise UsageError(f"grid size {n} not divisible by {factor}")
    m = n // factor
    return values.reshape(m, factor, m, factor).sum(axis=(1, 3))

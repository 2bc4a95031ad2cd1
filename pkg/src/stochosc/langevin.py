"""Ensemble integration of the Riccati field SDE and Feynman-Kac estimators.

Everything here is in scaled units: t_bar = Omega+ t, u_bar = u / Omega+, so

    du1 = (u2^2 - u1^2 - Om(t)^2) dt - dW_r,    Var dW_r = 2 lam dt
    du2 = -2 u1 u2 dt - dW_i,                     Var dW_i = 2 mu lam dt

Trajectories are grouped in fixed blocks of ``BLOCK`` with one Philox stream
per block, keyed by (seed, block index). Results therefore do not depend on
the number of worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import ConfigError, CoverageError, DivergenceError, UsageError, VarianceError
from .grids import DensityGrid, GridSpec, cayley, coarsen
from .model import DimensionlessParams, ModelParams, scale

BLOCK = 1024
CHUNK = 256
ESCAPE_CAP = 1e3
MAX_ESCAPE_RATE = 0.01
MIN_ESS = 100.0
MAX_OUTSIDE = 0.05


@dataclass(frozen=True)
class FieldPoint:
    u1: float
    u2: float


@dataclass(frozen=True, eq=False)
class Snapshot:
    time: float
    u1: np.ndarray
    u2: np.ndarray
    acc: np.ndarray          # int u1 dt since switch-on
    alive: np.ndarray

    def points(self) -> list[FieldPoint]:
        return [FieldPoint(float(a), float(b)) for a, b in zip(self.u1[self.alive], self.u2[self.alive])]


@dataclass(frozen=True, eq=False)
class Ensemble:
    n_traj: int
    dt: float
    seed: int
    params: DimensionlessParams = field(repr=False)
    snapshots: dict[float, Snapshot] = field(repr=False)

    @property
    def times(self) -> list[float]:
        return sorted(self.snapshots)

    def snapshot(self, t: float) -> Snapshot:
        for s in self.snapshots:
            if abs(s - t) <= 1e-9 * max(1.0, abs(t)):
                return self.snapshots[s]
        raise UsageError(f"t={t} is not a snapshot time; available {self.times}")

    def escape_rate(self, t: float | None = None) -> float:
        s = self.snapshot(self.times[-1] if t is None else t)
        return float(1.0 - s.alive.mean())

    def weights(self, m: int, t: float) -> np.ndarray:
        """exp(-(m+1) int u1 dt) for the surviving trajectories."""
        s = self.snapshot(t)
        return np.exp(-(m + 1) * s.acc[s.alive])

    def manifest(self) -> dict:
        return {"n_traj": self.n_traj, "dt": self.dt, "seed": self.seed, "block": BLOCK,
                "escape_rate": {f"{t:.17g}": self.escape_rate(t) for t in self.times}}


def _as_scaled(params: ModelParams | DimensionlessParams, l: int) -> DimensionlessParams:
    return scale(params, l) if isinstance(params, ModelParams) else params


def _run_block(b: int, n_blk: int, seed: int, p: DimensionlessParams, dt: float, n_steps: int,
               record_steps: dict[int, float], om2_all: np.ndarray):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, b])))
    u1 = np.zeros(n_blk)
    u2 = np.full(n_blk, p.u2_in)
    acc = np.zeros(n_blk)
    alive = np.ones(n_blk, dtype=bool)
    sd_r = math.sqrt(2.0 * p.lam * dt)
    sd_i = math.sqrt(2.0 * p.mu * p.lam * dt)
    noisy = p.lam > 0
    out = {}
    if 0 in record_steps:
        out[record_steps[0]] = (u1.copy(), u2.copy(), acc.copy(), alive.copy())
    marks = sorted(set(record_steps) | {n_steps})
    step = 0
    for mark in marks:
        while step < mark:
            k = min(CHUNK, mark - step)
            if noisy:
                z = rng.standard_normal((k, 2, n_blk))
            else:
                z = np.zeros((k, 2, n_blk))
            _kernels.em_chunk(u1, u2, acc, alive, z, om2_all[step:step + k], dt, sd_r, sd_i, ESCAPE_CAP)
            step += k
        if mark in record_steps and mark > 0:
            out[record_steps[mark]] = (u1.copy(), u2.copy(), acc.copy(), alive.copy())
    return out


def simulate(params: ModelParams | DimensionlessParams, n_traj: int, dt: float, t_end: float, seed: int,
             record: Sequence[float] = (), threads: int = 1, l: int = 1) -> Ensemble:
    """Euler-Maruyama ensemble from (0, 1/d^2) at the switch-on time.

    ``record`` and ``t_end`` are scaled times and must be reachable in whole steps.
    Raises DivergenceError when more than 1% of trajectories escape.
    """
    p = _as_scaled(params, l)
    if n_traj < 1 or not dt > 0:
        raise ConfigError(f"need n_traj >= 1 and dt > 0, got {n_traj}, {dt}")
    t0 = p.t0_bar
    times = sorted({float(t) for t in record} | {float(t_end)})
    steps = {}
    for t in times:
        k = (t - t0) / dt
        if k < -1e-9 or abs(k - round(k)) > 1e-6:
            raise UsageError(f"snapshot time {t} is not t0 + integer * dt (t0={t0}, dt={dt})")
        steps[int(round(k))] = t
    n_steps = max(steps)
    om_max = float(np.max(np.atleast_1d(p.omega_bar(np.linspace(t0, t_end, 1001)))))
    if dt * max(1.0, om_max) ** 2 > 0.05:
        raise ConfigError(f"dt={dt} too large for the drift (dt * max Om^2 must be <= 0.05)")
    tk = t0 + dt * np.arange(n_steps)
    om2_all = np.ascontiguousarray(np.broadcast_to(np.asarray(p.omega_bar(tk), dtype=float) ** 2, (n_steps,)))
    n_blocks = -(-n_traj // BLOCK)
    sizes = [min(BLOCK, n_traj - b * BLOCK) for b in range(n_blocks)]

    def job(b):
        return _run_block(b, sizes[b], seed, p, dt, n_steps, steps, om2_all)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, range(n_blocks)))
    else:
        parts = [job(b) for b in range(n_blocks)]
    snaps = {}
    for t in times:
        cols = [np.concatenate([pt[t][i] for pt in parts]) for i in range(4)]
        snaps[t] = Snapshot(t, *cols)
    ens = Ensemble(n_traj, dt, seed, p, snaps)
    rate = ens.escape_rate(times[-1])
    if rate > MAX_ESCAPE_RATE:
        raise DivergenceError(f"{rate:.2%} of trajectories escaped |u| > {ESCAPE_CAP:g}")
    return ens


def _histogram(grid: GridSpec, u1: np.ndarray, u2: np.ndarray, weights: np.ndarray | None):
    geo = grid.geometry
    n, h = grid.n, grid.h
    w = cayley(u1, u2)
    i = np.clip(np.floor((w.real + 1.0) / h).astype(np.int64), 0, n - 1)
    j = np.clip(np.floor((w.imag + 1.0) / h).astype(np.int64), 0, n - 1)
    inside = geo.active[i, j]
    wt = np.ones(u1.size) if weights is None else weights
    counts = np.zeros(n * n)
    np.add.at(counts, (i * n + j)[inside], wt[inside])
    return counts.reshape(n, n), float(wt[~inside].sum()), float(wt.sum())


def empirical_density(ens: Ensemble, grid: GridSpec, t: float, weights: np.ndarray | None = None,
                      kind: str = "probability") -> DensityGrid:
    """Histogram of the surviving trajectories on the disk grid, unit discrete integral."""
    s = ens.snapshot(t)
    counts, outside, total = _histogram(grid, s.u1[s.alive], s.u2[s.alive], weights)
    if total <= 0:
        raise CoverageError("no surviving trajectories")
    if outside > MAX_OUTSIDE * total:
        raise CoverageError(f"{outside / total:.2%} of the mass falls outside the active grid")
    vals = counts / (counts.sum() * grid.h ** 2)
    return DensityGrid(grid, vals, float(s.time), kind, normalized=True)


@dataclass(frozen=True)
class FeynmanKac:
    norm: float
    stderr: float
    ess: float
    density: DensityGrid | None
    escape_rate: float


def feynman_kac(ens: Ensemble, m: int, t: float, grid: GridSpec | None = None) -> FeynmanKac:
    """Estimate c^(m)(t) = E[exp(-(m+1) int u1 dt)] and the weighted density Q^(m)/c^(m).

    Escaped trajectories are excluded (their rate is reported); the mean runs
    over the survivors.
    """
    wts = ens.weights(m, t)
    if wts.size == 0:
        raise VarianceError("no surviving trajectories")
    norm = float(wts.mean())
    se = float(wts.std(ddof=1) / math.sqrt(wts.size)) if wts.size > 1 else math.inf
    ess = float(wts.sum() ** 2 / np.sum(wts * wts))
    if ess < MIN_ESS:
        raise VarianceError(f"effective sample size {ess:.1f} below {MIN_ESS:g}")
    dens = None
    if grid is not None:
        dens = empirical_density(ens, grid, t, weights=wts, kind="weighted")
    return FeynmanKac(norm, se, ess, dens, ens.escape_rate(t))


def coarse_l1(a: DensityGrid, b: DensityGrid, bins: int) -> float:
    """L1 distance of the two normalized mass distributions on ``bins`` x ``bins`` blocks of the disk."""
    if a.grid.n != b.grid.n:
        raise UsageError("densities live on different grids")
    if a.grid.n % bins:
        raise UsageError(f"{bins} bins do not divide n={a.grid.n}")
    f = a.grid.n // bins
    ma, mb = coarsen(a.cell_mass(), f), coarsen(b.cell_mass(), f)
    return float(np.abs(ma / ma.sum() - mb / mb.sum()).sum())


def l1_noise_floor(pde: DensityGrid, bins: int, n_samples: int) -> float:
    """Expected coarse L1 of an exact n-sample histogram: sum_k sqrt(2 p_k (1-p_k) / (pi n))."""
    f = pde.grid.n // bins
    m = coarsen(pde.cell_mass(), f)
    p = np.clip(m / m.sum(), 0.0, 1.0)
    return float(np.sum(np.sqrt(2.0 * p * (1.0 - p) / (math.pi * n_samples))))

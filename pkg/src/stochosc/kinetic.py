"""Kinetic (Fokker-Planck / Feynman-Kac) solver on the Cayley-disk grid.

Scaled equation for a field F(u1, u2, t):

    dF/dt = lam (d11 + mu d22) F - div(a F) - (p u1 + p2 u2 + i k u2) F + source,
    a = (u2^2 - u1^2 - Om(t)^2, -2 u1 u2).

In disk coordinates the same process is an Ito diffusion with bounded drift
b(w) = -(i/2)[(1+w)^2 - Om^2 (1-w)^2] + lam (1-mu)(1-w)^3 / 2 and diffusion
tensor D = lam (c_r c_r^T + mu c_i c_i^T), c_r = i g, c_i = -g, g = (1-w)^2/2.
The density G = F * jac then obeys dG/dt = -div(b G) + d_i d_j (D_ij G).

Time stepping is Strang splitting: sink(tau/2), diffusion(tau/2), drift(tau),
diffusion(tau/2), sink(tau/2). Drift uses a flux-form upwind scheme with SSP
Runge-Kutta substeps (MUSCL with an MC limiter for non-negative fields, a
linear third-order upwind-biased reconstruction for signed and complex
fields). Diffusion is backward Euler with a sparse LU factorisation; for
non-negative fields a flux-corrected variant keeps the result non-negative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from . import _kernels
from .errors import ConfigError, ConvergenceError, PositivityError, StabilityError, UsageError
from .grids import ComplexGrid, DensityGrid, Geometry, GridSpec, cayley, delta
from .model import DimensionlessParams

POSITIVITY_FLOOR = -1e-12
EIGEN_WARMUP = 5
ESCAPE_CAP = 1e3   # |u_bar| beyond which weighted runs absorb, mirroring the trajectory escape cap
STANDARD_SINKS = ((0.0, 0.0), (0.5, 0.5), (1.5, 1.5), (2.0, 2.0), (2.0, 0.0))


@dataclass(frozen=True)
class SourceSpec:
    """Source -coefficient * u1 * Q where Q is co-evolved with sink driver_p * u1."""

    coefficient: float = 1.0
    driver_p: float = 1.0


@dataclass(frozen=True)
class SinkSpec:
    """Multiplicative term -(p u1 + p2 u2 + i k u2).

    ``p2`` is a real u2 coefficient; it only appears in the decoupled R/I
    equations produced by :func:`split_complex`.
    """

    p: float = 0.0
    k: float = 0.0
    p2: float = 0.0
    source: SourceSpec | None = None

    def __post_init__(self):
        if self.p < 0 or self.k < 0:
            raise ConfigError(f"sink coefficients must be >= 0, got p={self.p}, k={self.k}")

    @classmethod
    def q_index(cls, m: int) -> "SinkSpec":
        """Sink -(m+1) u1 of the weighted distribution Q^(m)."""
        if m < -1 or int(m) != m:
            raise ConfigError(f"Q-index must be an integer >= -1, got {m}")
        return cls(p=float(m + 1))

    @property
    def is_complex(self) -> bool:
        return self.k != 0.0

    @property
    def amplifies(self) -> bool:
        """True when the multiplicative term can grow without bound in the far field."""
        return self.p != 0.0 or self.p2 < 0.0 or self.source is not None

    def factor(self, geo: Geometry, tau: float) -> np.ndarray:
        expo = -(self.p * geo.u1 + self.p2 * geo.u2) * tau
        if self.is_complex:
            return np.exp(expo - 1j * self.k * geo.u2 * tau)
        return np.exp(expo)


def split_complex(sink: SinkSpec) -> tuple[SinkSpec, SinkSpec]:
    """Real sinks p u1 + k u2 (for R) and p u1 - k u2 (for I)."""
    if sink.source is not None:
        raise UsageError("split_complex takes a plain sink")
    return SinkSpec(p=sink.p, p2=sink.p2 + sink.k), SinkSpec(p=sink.p, p2=sink.p2 - sink.k)


@dataclass
class RunStats:
    steps: int = 0
    substeps: int = 0
    limited_solves: int = 0
    factorizations: int = 0
    max_band_fraction: float = 0.0
    min_value: float = 0.0


def _face_terms(geo: Geometry, dxx, dxy, dyy):
    """Sparse entries of the conservative Ito-form diffusion operator."""
    n, h, idx = geo.n, geo.h, geo.index
    rows, cols, vals = [], [], []

    def cell(i, j):
        ok = (i >= 0) & (i < n) & (j >= 0) & (j < n)
        ii, jj = np.clip(i, 0, n - 1), np.clip(j, 0, n - 1)
        k = np.where(ok, idx[ii, jj], -1)
        return k, ii, jj

    for axis in (0, 1):
        if axis == 0:
            fi, fj = np.nonzero(geo.open_x)          # face between (fi-1, fj) and (fi, fj)
            li, lj, ri, rj = fi - 1, fj, fi, fj
            d_main = dxx
            cross = [((li, lj + 1), -1), ((ri, rj + 1), -1), ((li, lj - 1), 1), ((ri, rj - 1), 1)]
        else:
            fi, fj = np.nonzero(geo.open_y)
            li, lj, ri, rj = fi, fj - 1, fi, fj
            d_main = dyy
            cross = [((li + 1, lj), -1), ((ri + 1, rj), -1), ((li - 1, lj), 1), ((ri - 1, rj), 1)]
        kl, kr = idx[li, lj], idx[ri, rj]
        terms = [(kr, -d_main[ri, rj] / h), (kl, d_main[li, lj] / h)]
        for (ci, cj), sgn in cross:
            k, ii, jj = cell(ci, cj)
            terms.append((k, sgn * dxy[ii, jj] / (4.0 * h)))
        for k, c in terms:
            ok = (k >= 0) & (c != 0.0)
            rows += [kl[ok], kr[ok]]
            cols += [k[ok], k[ok]]
            vals += [-c[ok] / h, c[ok] / h]
    m = geo.n_active
    mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))
    mat.sum_duplicates()
    return mat


def diffusion_tensor(w: np.ndarray, lam: float, mu: float):
    g = 0.5 * (1.0 - w) ** 2
    gx, gy = g.real, g.imag
    return lam * (gy * gy + mu * gx * gx), lam * (mu - 1.0) * gx * gy, lam * (gx * gx + mu * gy * gy)


def drift_parts(w: np.ndarray, lam: float, mu: float):
    """(A, B, C) with b = A + Om^2 B + C."""
    return -0.5j * (1.0 + w) ** 2, 0.5j * (1.0 - w) ** 2, 0.5 * lam * (1.0 - mu) * (1.0 - w) ** 3


class KineticSolver:
    """Operators for fixed (grid, lam, mu); reusable across sinks and runs."""

    def __init__(self, grid: GridSpec, lam: float, mu: float):
        if lam < 0 or not 0 <= mu <= 1:
            raise ConfigError(f"invalid lam={lam}, mu={mu}")
        self.grid, self.lam, self.mu = grid, float(lam), float(mu)
        geo = self.geo = grid.geometry
        ax, bx, cx = drift_parts(geo.wx, lam, mu)
        ay, by, cy = drift_parts(geo.wy, lam, mu)
        ox, oy = geo.open_x, geo.open_y
        self._vx = tuple(np.where(ox, a.real, 0.0) for a in (ax, bx, cx))
        self._vy = tuple(np.where(oy, a.imag, 0.0) for a in (ay, by, cy))
        self._lu: dict[float, tuple] = {}
        self._gauge: dict[float, tuple] = {}
        self.stats = RunStats()
        if lam > 0:
            dxx, dxy, dyy = diffusion_tensor(geo.w, lam, mu)
            act = geo.active
            self.L = _face_terms(geo, np.where(act, dxx, 0.0), np.where(act, dxy, 0.0), np.where(act, dyy, 0.0))
            off = self.L - sp.diags(self.L.diagonal())
            neg = (-off).maximum(0)
            d = neg.maximum(neg.T).tocsr()
            d.sum_duplicates()
            d.sort_indices()
            self._d = d
            self.L_low = (self.L + d - sp.diags(np.asarray(d.sum(axis=1)).ravel())).tocsr()
        else:
            self.L = self.L_low = self._d = None
        self._work = [np.zeros((geo.n, geo.n)) for _ in range(3)]

    # ---- operators -------------------------------------------------------
    def velocities(self, om2: float, gauge_p: float = 0.0):
        vx = self._vx[0] + om2 * self._vx[1] + self._vx[2]
        vy = self._vy[0] + om2 * self._vy[1] + self._vy[2]
        if gauge_p:
            ex, ey, _ = self.gauge_terms(gauge_p)
            vx, vy = vx + ex, vy + ey
        return vx, vy

    def gauge_terms(self, p: float):
        """Extra face velocities and centre growth rate for G = |1-w|^{-p} Psi.

        With V = ln|1-w|, the transformed equation gains the drift 2 p D grad V
        and the rate p D:hess V + p^2 grad V . D grad V; the sink p u1 is replaced
        by p times the bounded residual of :func:`gauge_residual`.
        """
        key = float(p)
        if key not in self._gauge:
            geo = self.geo

            def drift(wf, open_mask, comp):
                dxx, dxy, dyy = diffusion_tensor(wf, self.lam, self.mu)
                inv = 1.0 / (1.0 - wf)
                vx_, vy_ = -inv.real, inv.imag
                b = (dxx * vx_ + dxy * vy_) if comp == 0 else (dxy * vx_ + dyy * vy_)
                return np.where(open_mask, 2.0 * p * b, 0.0)

            w = np.where(geo.active, geo.w, 0.0)
            dxx, dxy, dyy = diffusion_tensor(w, self.lam, self.mu)
            inv = 1.0 / (1.0 - w)
            vx_, vy_ = -inv.real, inv.imag
            f2 = -inv * inv
            hess = (dxx - dyy) * f2.real - 2.0 * dxy * f2.imag
            quad = dxx * vx_ * vx_ + 2.0 * dxy * vx_ * vy_ + dyy * vy_ * vy_
            rate = np.where(geo.active, p * hess + p * p * quad, 0.0)
            self._gauge[key] = (drift(geo.wx, geo.open_x, 0), drift(geo.wy, geo.open_y, 1), rate)
        return self._gauge[key]

    def gauge_residual(self, om2: float) -> np.ndarray:
        """u1 - b . grad V: what remains of the u1 sink after the gauge transform."""
        geo = self.geo
        y = geo.w.imag
        return np.where(geo.active, 0.5 * (om2 - 1.0) * y
                        + 0.5 * self.lam * (1.0 - self.mu) * ((1.0 - geo.w) ** 2).real, 0.0)

    def cfl_step(self, om2: float, gauge_p: float = 0.0) -> float:
        vx, vy = self.velocities(om2, gauge_p)
        s = _kernels.outflow_bound(vx, vy)
        return math.inf if s == 0 else self.grid.cfl * self.geo.h / s

    def _factors(self, tau: float):
        key = round(tau, 15)
        if key not in self._lu:
            m = self.geo.n_active
            eye = sp.identity(m, format="csc")
            hi = sla.splu((eye - tau * self.L).tocsc(), permc_spec="MMD_AT_PLUS_A")
            lo = sla.splu((eye - tau * self.L_low).tocsc(), permc_spec="MMD_AT_PLUS_A")
            self._lu[key] = (hi, lo)
            self.stats.factorizations += 1
        return self._lu[key]

    def diffuse(self, g: np.ndarray, tau: float, positive: bool) -> np.ndarray:
        if self.L is None or tau == 0:
            return g
        act = self.geo.active
        hi, lo = self._factors(tau)
        if np.iscomplexobj(g):
            v = g[act]
            out = np.zeros_like(g)
            out[act] = hi.solve(np.ascontiguousarray(v.real)) + 1j * hi.solve(np.ascontiguousarray(v.imag))
            return out
        v = np.ascontiguousarray(g[act])
        uh = hi.solve(v)
        if positive and uh.min() < 0.0:
            # (I - tau L_low) uh = v - tau Dart uh: limit that antidiffusive right-hand
            # side so it stays >= 0, then apply the nonnegative inverse of the M-matrix
            rhs = np.empty_like(v)
            d = self._d
            _kernels.zalesak(v, uh, d.indptr, d.indices, d.data, tau, True, rhs)
            uh = lo.solve(rhs)
            self.stats.limited_solves += 1
        out = np.zeros_like(g)
        out[act] = uh
        return out

    def advect(self, g: np.ndarray, tau: float, t: float, omega_bar: Callable, positive: bool,
               n_sub: int | None = None, gauge_p: float = 0.0) -> np.ndarray:
        om_a = float(omega_bar(t)) ** 2
        om_b = float(omega_bar(t + tau)) ** 2
        bound = min(self.cfl_step(om_a, gauge_p), self.cfl_step(om_b, gauge_p))
        need = max(1, math.ceil(tau / bound - 1e-12)) if math.isfinite(bound) else 1
        if n_sub is None:
            n_sub = need
        elif n_sub < need:
            raise StabilityError(f"{n_sub} advective substeps violate the CFL bound (need {need})")
        dt = tau / n_sub
        geo = self.geo
        w1, w2, w3 = self._work
        varying = om_a != om_b
        vx, vy = self.velocities(om_a, gauge_p)
        parts = [g.real.copy(), g.imag.copy()] if np.iscomplexobj(g) else [g.copy()]
        for s in range(n_sub):
            if varying:
                vx, vy = self.velocities(float(omega_bar(t + (s + 0.5) * dt)) ** 2, gauge_p)
            for part in parts:
                _kernels.advect(part, vx, vy, geo.active, geo.h, dt, 1, positive, w1, w2, w3)
        self.stats.substeps += n_sub
        return parts[0] + 1j * parts[1] if len(parts) == 2 else parts[0]


def _step_plan(t_a: float, t_b: float, dt: float, stops: Sequence[float]) -> list[tuple[float, float]]:
    marks = sorted({t_a, t_b, *[s for s in stops if t_a < s < t_b]})
    plan = []
    for a, b in zip(marks[:-1], marks[1:]):
        k = max(1, math.ceil((b - a) / dt - 1e-9))
        tau = (b - a) / k
        plan += [(a + i * tau, tau) for i in range(k)]
    return plan


def _positive_kind(f: DensityGrid | ComplexGrid, sink: SinkSpec) -> bool:
    return isinstance(f, DensityGrid) and f.kind in ("probability", "weighted") and not sink.is_complex and sink.p2 == 0.0


def evolve_snapshots(initial: DensityGrid | ComplexGrid, params: DimensionlessParams, sink: SinkSpec,
                     t_end: float, record: Sequence[float] = (), *, source_field: DensityGrid | None = None,
                     solver: KineticSolver | None = None, advective_substeps: int | None = None,
                     omega_bar: Callable | None = None, escape_cap: float | None = ESCAPE_CAP,
                     gauge: bool = True):
    """Advance ``initial`` from its time to ``t_end``; returns {time: field}.

    For sinks that can amplify (see ``SinkSpec.amplifies``) cells with
    |u| > ``escape_cap`` are absorbing; pass None to keep the whole plane.

    With ``gauge`` (default) a sink p u1 with p > 0 is handled through the
    exact substitution G = |1-w|^{-p} Psi, whose coefficients stay bounded
    near u = infinity. The returned fields are always G.

    With ``sink.source`` set, ``source_field`` is the driver Q (co-evolved with
    sink driver_p * u1) and each snapshot is a (field, driver) pair.
    """
    grid = initial.grid
    if solver is None:
        solver = KineticSolver(grid, params.lam, params.mu)
    elif solver.grid != grid or solver.lam != params.lam or solver.mu != params.mu:
        raise UsageError("solver was built for a different grid or noise parameters")
    if sink.source is not None and source_field is None:
        raise UsageError("a sourced sink needs the driver field")
    if not isinstance(initial, ComplexGrid) and sink.is_complex:
        initial = ComplexGrid(replace(initial, kind="signed"),
                              replace(initial, values=np.zeros_like(initial.values), kind="signed"))
    om = params.omega_bar if omega_bar is None else omega_bar
    geo = solver.geo
    t_a = float(initial.time)
    if t_end < t_a:
        raise UsageError(f"t_end={t_end} precedes initial time {t_a}")
    positive = _positive_kind(initial, sink)
    g = initial.values.astype(complex if isinstance(initial, ComplexGrid) else float)
    q = None if source_field is None else source_field.values.astype(float).copy()
    src = sink.source
    gp = sink.p if gauge and src is None and sink.p > 0 else 0.0
    weight = None
    if gp:
        weight = np.where(geo.active, np.abs(1.0 - geo.w) ** -gp, 0.0)
        g = np.where(geo.active, g / np.where(geo.active, weight, 1.0), 0.0)
        _, _, gauge_rate = solver.gauge_terms(gp)
    live = None
    if escape_cap is not None and sink.amplifies:
        live = geo.u1 ** 2 + geo.u2 ** 2 <= escape_cap ** 2

    def emit(g, t, q):
        gg = g if weight is None else g * weight
        if live is not None:
            gg = np.where(live, gg, 0.0)
        return _wrap(initial, gg, t, q, source_field)

    stops = list(params.breakpoints_bar) + [float(r) for r in record]
    out = {}
    record_set = sorted({float(r) for r in record if t_a <= r <= t_end} | {float(t_end)})
    if record_set and record_set[0] == t_a:
        out[t_a] = emit(g, t_a, q)

    def half_sink(g, q, tau, t_mid):
        if gp:
            rate = gauge_rate - gp * solver.gauge_residual(float(om(t_mid)) ** 2) - sink.p2 * geo.u2
            f = np.exp(rate * tau)
            if sink.is_complex:
                f = f * np.exp(-1j * sink.k * geo.u2 * tau)
        else:
            f = sink.factor(geo, tau)
        if live is not None:
            f = np.where(live, f, 0.0)
            if q is not None:
                q = np.where(live, q, 0.0)
        if src is not None:
            x = src.driver_p * geo.u1 * tau
            # exact pointwise solution of D' = -c u1 Q, Q' = -p u1 Q over tau
            phi = np.where(np.abs(x) > 1e-12, -np.expm1(-x) / np.where(x == 0, 1.0, x), 1.0)
            g = g * f - src.coefficient * geo.u1 * tau * phi * q
            q = q * np.exp(-x)
        else:
            g = g * f
        return g, q

    plan = _step_plan(t_a, float(t_end), grid.dt, stops)
    for t, tau in plan:
        g, q = half_sink(g, q, 0.5 * tau, t + 0.25 * tau)
        g = solver.diffuse(g, 0.5 * tau, positive)
        if q is not None:
            q = solver.diffuse(q, 0.5 * tau, True)
        g = solver.advect(g, tau, t, om, positive, advective_substeps, gp)
        if q is not None:
            q = solver.advect(q, tau, t, om, True, advective_substeps)
        g = solver.diffuse(g, 0.5 * tau, positive)
        if q is not None:
            q = solver.diffuse(q, 0.5 * tau, True)
        g, q = half_sink(g, q, 0.5 * tau, t + 0.75 * tau)
        solver.stats.steps += 1
        if not np.all(np.isfinite(g)):
            raise StabilityError(f"non-finite values at t={t + tau:.6g}")
        if positive:
            mn = float(g.min())
            solver.stats.min_value = min(solver.stats.min_value, mn)
            if mn < POSITIVITY_FLOOR:
                raise PositivityError(f"value {mn:.3e} below {POSITIVITY_FLOOR:g} at t={t + tau:.6g}")
        tot = np.sum(np.abs(g))
        if tot > 0:
            solver.stats.max_band_fraction = max(solver.stats.max_band_fraction,
                                                 float(np.sum(np.abs(g[geo.band])) / tot))
        t_new = t + tau
        for r in record_set:
            if abs(t_new - r) <= 1e-9 * max(1.0, abs(r)):
                out[r] = emit(g, r, q)
    return out


def _wrap(template, g, t, q, q_template):
    if isinstance(template, ComplexGrid):
        f = ComplexGrid.from_values(template.grid, g, t)
    else:
        f = replace(template, values=np.ascontiguousarray(g.real), time=t, normalized=False)
    if q is None:
        return f
    return f, replace(q_template, values=q.copy(), time=t, normalized=False)


def evolve(initial: DensityGrid | ComplexGrid, params: DimensionlessParams, sink: SinkSpec, t_end: float, **kw):
    snaps = evolve_snapshots(initial, params, sink, t_end, (), **kw)
    return snaps[float(t_end)]


def initial_delta(grid: GridSpec, params: DimensionlessParams, kind: str = "probability",
                  u1: float = 0.0, u2: float | None = None) -> DensityGrid:
    """Switch-on condition: unit mass at (0, Omega-/Omega+) at the switch-on time."""
    return delta(grid, u1, params.u2_in if u2 is None else u2, time=params.t0_bar, kind=kind)


# ---- stationary problem ---------------------------------------------------------------------

@dataclass
class SteadyState:
    field: DensityGrid | ComplexGrid
    rate: complex
    history: list[float]
    method: str
    time: float = math.nan
    basin: dict = field(default_factory=dict)


def _normalized(g: np.ndarray, h: float) -> tuple[np.ndarray, complex]:
    if np.iscomplexobj(g):
        s = complex(np.sum(g) * h * h)
        scale = s if abs(s) > 0 else complex(np.sqrt(np.sum(np.abs(g) ** 2)))
    else:
        scale = float(np.sum(g) * h * h)
    return g / scale, scale


def basin_report(field: DensityGrid | ComplexGrid, candidates: Sequence[tuple[float, float]] = (),
                 radius: float = 0.1) -> dict:
    """Where the mass of |field| sits: mean, peak location, and mass near each candidate."""
    geo = field.grid.geometry if isinstance(field, ComplexGrid) else field.geometry
    h = field.grid.h
    m = np.abs(field.values) * h * h
    tot = float(m.sum())
    mean = (float(np.sum(m * geo.u1) / tot), float(np.sum(m * geo.u2) / tot))
    dens = np.where(geo.active, np.abs(field.values) / np.where(geo.active, geo.jac, 1.0), 0.0)
    i, j = np.unravel_index(np.argmax(dens), dens.shape)
    rep = {"mean_u1": mean[0], "mean_u2": mean[1],
           "mean_abs_u1": float(np.sum(m * np.abs(geo.u1)) / tot),
           "peak_u1": float(geo.u1[i, j]), "peak_u2": float(geo.u2[i, j]), "candidates": []}
    for c1, c2 in candidates:
        near = (geo.u1 - c1) ** 2 + (geo.u2 - c2) ** 2 < (radius * max(1.0, c2)) ** 2
        rep["candidates"].append({"u1": c1, "u2": c2, "mass_fraction": float(m[near].sum() / tot)})
    return rep


def steady_state(params: DimensionlessParams, sink: SinkSpec, tol: float = 1e-4, grid: GridSpec | None = None,
                 *, initial: DensityGrid | ComplexGrid | None = None, method: str = "march",
                 chunk: float = 1.0, t_max: float = 200.0, solver: KineticSolver | None = None,
                 candidates: Sequence[tuple[float, float]] = ()) -> SteadyState:
    """Stationary normalized profile of the sink-augmented equation at Om = 1.

    ``march`` renormalizes after each ``chunk`` of time and stops once the L1
    change of the normalized profile per unit time drops below ``tol``.
    ``eigen`` computes the same fixed point directly as the rightmost eigenpair
    of the assembled linear operator (shift-invert Arnoldi).
    """
    if not params.lam > 0:
        raise UsageError("steady state requires lam > 0")
    grid = GridSpec() if grid is None else grid
    solver = solver or KineticSolver(grid, params.lam, params.mu)
    const = replace(params, omega_bar=lambda tb: 1.0, breakpoints_bar=())
    if method not in ("march", "eigen"):
        raise ConfigError(f"unknown steady-state method {method!r}")
    f = initial if initial is not None else initial_delta(grid, params, kind="weighted")
    if sink.is_complex and isinstance(f, DensityGrid):
        f = ComplexGrid(replace(f, kind="signed"), replace(f, values=np.zeros_like(f.values), kind="signed"))
    h = grid.h
    prof, scale = _normalized(f.values, h)
    f = _rewrap(f, prof)
    history: list[float] = []
    rate = 0j
    t = 0.0
    while t < t_max:
        nxt = evolve(f, const, sink, f.time + chunk, solver=solver)
        newprof, scale = _normalized(nxt.values, h)
        change = float(np.sum(np.abs(newprof - prof)) * h * h) / chunk
        history.append(change)
        rate = -np.log(complex(scale)) / chunk
        prof = newprof
        f = _rewrap(nxt, prof)
        t += chunk
        if method == "eigen" and len(history) >= EIGEN_WARMUP:
            return _steady_eigen(solver, sink, complex(rate), prof, candidates)
        if change < tol:
            return SteadyState(f, complex(rate), history, "march", t, basin_report(f, candidates))
    raise ConvergenceError(f"no stationary profile within t={t_max} (last change {history[-1]:.3e}/time)", history)


def _rewrap(f, values):
    if isinstance(f, ComplexGrid):
        return ComplexGrid.from_values(f.grid, values, f.time)
    return replace(f, values=np.ascontiguousarray(values.real), normalized=True)


def advection_matrix(solver: KineticSolver, om2: float = 1.0) -> sp.csr_matrix:
    """Linear upwind-biased drift operator (same reconstruction as the signed-field scheme)."""
    geo = solver.geo
    n, h, idx = geo.n, geo.h, geo.index
    vx, vy = solver.velocities(om2)
    rows, cols, vals = [], [], []
    for axis, v in ((0, vx), (1, vy)):
        fi, fj = np.nonzero(v)
        vv = v[fi, fj]
        if axis == 0:
            lo, hi = (fi - 1, fj), (fi, fj)
        else:
            lo, hi = (fi, fj - 1), (fi, fj)
        pos = vv > 0
        # upwind c, downwind d, far f
        ci = np.where(pos, lo[0], hi[0]); cj = np.where(pos, lo[1], hi[1])
        di = np.where(pos, hi[0], lo[0]); dj = np.where(pos, hi[1], lo[1])
        step_i = ci - di; step_j = cj - dj
        fi2, fj2 = ci + step_i, cj + step_j
        ok = (fi2 >= 0) & (fi2 < n) & (fj2 >= 0) & (fj2 < n)
        fi2c, fj2c = np.clip(fi2, 0, n - 1), np.clip(fj2, 0, n - 1)
        has_far = ok & geo.active[fi2c, fj2c]
        kc, kd, kf = idx[ci, cj], idx[di, dj], idx[fi2c, fj2c]
        kl, kr = idx[lo], idx[hi]
        wc = np.where(has_far, 5.0 / 6.0, 4.0 / 6.0)
        terms = [(kc, wc * vv), (kd, 2.0 / 6.0 * vv), (np.where(has_far, kf, kc), np.where(has_far, -1.0 / 6.0, 0.0) * vv)]
        for k, c in terms:
            rows += [kl, kr]
            cols += [k, k]
            vals += [-c / h, c / h]
    m = geo.n_active
    mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))
    mat.sum_duplicates()
    return mat


def generator_matrix(solver: KineticSolver, sink: SinkSpec, om2: float = 1.0) -> sp.csr_matrix:
    geo = solver.geo
    act = geo.active
    s = (sink.p * geo.u1 + sink.p2 * geo.u2 + 1j * sink.k * geo.u2)[act]
    a = advection_matrix(solver, om2)
    if solver.L is not None:
        a = a + solver.L
    if sink.is_complex:
        return (a.astype(complex) - sp.diags(s)).tocsr()
    return (a - sp.diags(s.real)).tocsr()


def _steady_eigen(solver: KineticSolver, sink: SinkSpec, rate: complex, guess: np.ndarray,
                  candidates) -> SteadyState:
    """Polish a short renormalized march with shift-invert Arnoldi near -rate."""
    geo = solver.geo
    a = generator_matrix(solver, sink)
    sigma = -rate.real + 0.05
    v0 = guess[geo.active]
    if not sink.is_complex:
        v0 = v0.real
    try:
        vals, vecs = sla.eigs(a.tocsc(), k=1, sigma=sigma, which="LM", v0=v0, tol=1e-10, maxiter=2000)
    except sla.ArpackNoConvergence as exc:
        raise ConvergenceError(f"eigen solve did not converge: {exc}") from exc
    lam0 = complex(vals[0])
    full = np.zeros((geo.n, geo.n), dtype=complex)
    full[geo.active] = vecs[:, 0]
    prof, _ = _normalized(full, solver.grid.h)
    if sink.is_complex:
        f = ComplexGrid.from_values(solver.grid, prof, 0.0)
    else:
        f = DensityGrid(solver.grid, np.ascontiguousarray(prof.real), 0.0, "weighted", normalized=True)
    resid = float(np.linalg.norm(a @ vecs[:, 0] - lam0 * vecs[:, 0]))
    return SteadyState(f, -lam0, [resid], "eigen", math.inf, basin_report(f, candidates))

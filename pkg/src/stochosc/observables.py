"""Double-integral observables over the bath-field distributions.

Inputs are grids in scaled variables (u_bar = u / Omega+). Physical kernels are
rewritten in scaled form: for example the N-factor
sqrt(Omega-) int du Q / sqrt(u2) becomes (1/d) int du_bar Q_bar / sqrt(u2_bar),
because Q du is invariant under the rescaling.

Kernels that blow up at u2 -> 0 are integrated over the interior cells only.
The rim band (cells next to the circle u2 = 0 / infinity) is evaluated
separately and a ResolutionError is raised if it carries more than 1% of the
integral.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid

from .errors import CoverageError, NumericalError, ResolutionError, UsageError
from .grids import DensityGrid
from .model import DimensionlessParams

BAND_TOL = 0.01
Q_POINTS = 2048
Q_EXTENT = 6.0
COVERAGE_TOL = 1e-4


@dataclass
class ObservableTrace:
    name: str
    times: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, t: float, value: float) -> None:
        if self.times and not t > self.times[-1]:
            raise UsageError(f"trace times must increase: {t} after {self.times[-1]}")
        if not math.isfinite(value):
            raise NumericalError(f"non-finite {self.name} value at t={t}")
        self.times.append(float(t))
        self.values.append(float(value))


@dataclass(frozen=True)
class BandedIntegral:
    value: float
    band: float

    @property
    def band_fraction(self) -> float:
        tot = abs(self.value) + abs(self.band)
        return abs(self.band) / tot if tot > 0 else 0.0


def banded_integral(f: DensityGrid, kernel: np.ndarray, check: bool = True) -> BandedIntegral:
    geo = f.geometry
    interior = geo.active & ~geo.band
    val = f.integrate(kernel, interior)
    band = f.integrate(kernel, geo.band)
    out = BandedIntegral(val, band)
    if check and out.band_fraction > BAND_TOL:
        raise ResolutionError(f"rim band carries {out.band_fraction:.2%} of the integral (limit {BAND_TOL:.0%})")
    return out


def _d_of(params: DimensionlessParams | float) -> float:
    return params.d if isinstance(params, DimensionlessParams) else float(params)


def n_factor(q0: DensityGrid, params: DimensionlessParams | float) -> float:
    """N = (1/d) int Q / sqrt(u2), with d = sqrt(Omega+/Omega-)."""
    return n_factor_banded(q0, params).value


def n_factor_banded(q0: DensityGrid, params: DimensionlessParams | float, check: bool = True) -> BandedIntegral:
    d = _d_of(params)
    r = banded_integral(q0, 1.0 / np.sqrt(q0.geometry.u2), check)
    return BandedIntegral(r.value / d, r.band / d)


def auto_q_grid(q0: DensityGrid, omega_plus: float = 1.0, quantile: float = 1e-6) -> np.ndarray:
    """Symmetric grid of 2048 points spanning +-6/sqrt(u2_eff) in physical q.

    u2_eff is the smallest u2 such that cells below it hold at most ``quantile``
    of the absolute mass.
    """
    geo = q0.geometry
    act = geo.active
    u2 = geo.u2[act] * omega_plus
    m = np.abs(q0.values[act])
    order = np.argsort(u2)
    cum = np.cumsum(m[order]) / max(m.sum(), 1e-300)
    k = int(np.searchsorted(cum, quantile))
    u_min = float(u2[order][min(k, u2.size - 1)])
    ext = Q_EXTENT / math.sqrt(u_min)
    return np.linspace(-ext, ext, Q_POINTS)


def rdm_diagonal(q0: DensityGrid, q_grid: np.ndarray | None = None, omega_plus: float = 1.0):
    """rho(q) = int du Q exp(-u2 q^2) with physical u2 = Omega+ u2_bar.

    Returns (q_grid, rho). The part of int rho dq beyond the grid edges is
    computed in closed form and must stay below 1e-4 of the total.
    """
    geo = q0.geometry
    act = geo.active & (q0.values != 0)
    if q_grid is None:
        q_grid = auto_q_grid(q0, omega_plus)
    q = np.asarray(q_grid, dtype=float)
    u2 = geo.u2[act] * omega_plus
    mass = q0.values[act] * q0.grid.h ** 2
    rho = np.exp(-np.outer(q * q, u2)) @ mass
    qmax = float(np.max(np.abs(q)))
    from scipy.special import erfc
    full = np.sqrt(np.pi / u2)
    tail = float(np.sum(np.abs(mass) * full * erfc(np.sqrt(u2) * qmax)))
    total = float(np.sum(np.abs(mass) * full))
    if total > 0 and tail > COVERAGE_TOL * total:
        raise CoverageError(f"q-grid |q| <= {qmax:.4g} misses {tail / total:.2e} of int rho dq")
    return q, rho


def entropy_integral(q: np.ndarray, rho: np.ndarray, normalized: bool = False) -> float:
    """int rho ln rho dq (trapezoid), on the raw rho or on rho / int rho."""
    if np.any(rho <= 0):
        raise NumericalError("rho must be strictly positive for the entropy integral")
    if normalized:
        rho = rho / trapezoid(rho, q)
    return float(trapezoid(rho * np.log(rho), q))


@dataclass(frozen=True)
class EntropyPoint:
    time: float
    value: float
    value_normalized: float
    n_factors: tuple[float, float]
    lambdas: tuple[float, float]


def von_neumann_entropy(q0_pair: Sequence[DensityGrid], params_pair: Sequence[DimensionlessParams],
                        q_grid: np.ndarray | None = None) -> EntropyPoint:
    """Lambda_N = -N_1 Lambda^(2) - N_2 Lambda^(1), Lambda^(l) = int rho_l ln rho_l dq."""
    (qa, qb), (pa, pb) = q0_pair, params_pair
    if qa.time != qb.time:
        raise UsageError("both Q^(0) grids must be taken at the same time")
    na, nb = n_factor(qa, pa), n_factor(qb, pb)
    if q_grid is None:
        ga, gb = auto_q_grid(qa, pa.omega_plus), auto_q_grid(qb, pb.omega_plus)
        q_grid = ga if ga[-1] >= gb[-1] else gb
    qq, ra = rdm_diagonal(qa, q_grid, pa.omega_plus)
    _, rb = rdm_diagonal(qb, q_grid, pb.omega_plus)
    la, lb = entropy_integral(qq, ra), entropy_integral(qq, rb)
    lan, lbn = entropy_integral(qq, ra, True), entropy_integral(qq, rb, True)
    return EntropyPoint(float(qa.time), -na * lb - nb * la, -na * lbn - nb * lan, (na, nb), (la, lb))


def generalized_entropy(q0_pair: Sequence[DensityGrid], d_pair: Sequence[DensityGrid],
                        params_pair: Sequence[DimensionlessParams]) -> EntropyPoint:
    """Lambda_G = -N_1 L_2 - N_2 L_1 with L_l = (1/d_l) int D_l / sqrt(u2)."""
    (qa, qb), (da, db), (pa, pb) = q0_pair, d_pair, params_pair
    na, nb = n_factor(qa, pa), n_factor(qb, pb)
    la, lb = n_factor(da, pa), n_factor(db, pb)
    v = -na * lb - nb * la
    return EntropyPoint(float(qa.time), v, v, (na, nb), (la, lb))


def _level_kernel(geo, m: int, d: float) -> np.ndarray:
    u1, u2 = geo.u1, geo.u2
    k = (1.0 / np.sqrt(u2)) * (-1.0 + (1.0 + u1 * u1 + u2 * u2) / (2.0 * u2 * d))
    if m == 2:
        k = k / u2
    elif m != 0:
        raise UsageError(f"energy levels are defined for m in (0, 2), got {m}")
    return k


def k_integral(m: int, q_stationary: DensityGrid, params: DimensionlessParams | float) -> float:
    return banded_integral(q_stationary, _level_kernel(q_stationary.geometry, m, _d_of(params))).value


def energy_level(m: int, q_stationary: DensityGrid, params: DimensionlessParams) -> float:
    """E_0 = (1 + K_0) Omega+ / 2 for m=0; E_1 = 3 (1 + K_1) Omega+ / 2 for m=2."""
    if not q_stationary.normalized:
        q_stationary = q_stationary.normalize()
    k = k_integral(m, q_stationary, params)
    return (0.5 if m == 0 else 1.5) * (1.0 + k) * params.omega_plus


def delta_level_k(m: int, u2_0: float, d: float, u1_0: float = 0.0) -> float:
    """Closed-form kernel value at a single point (oracle for the quadrature)."""
    k = (1.0 / math.sqrt(u2_0)) * (-1.0 + (1.0 + u1_0 ** 2 + u2_0 ** 2) / (2.0 * u2_0 * d))
    return k / u2_0 if m == 2 else k


def population(m: int, q_field: DensityGrid) -> float:
    """M_0 = int Q^(0) / sqrt(u2), M_1 = int Q^(2) / u2^(3/2) on the unnormalized field."""
    u2 = q_field.geometry.u2
    if m == 0:
        kern = 1.0 / np.sqrt(u2)
    elif m == 2:
        kern = u2 ** -1.5
    else:
        raise UsageError(f"populations are defined for m in (0, 2), got {m}")
    return banded_integral(q_field, kern).value

"""Physical parameters, frequency profiles and dimensionless scalings.

Units: hbar = m = 1. Two oscillators in normal coordinates, each driven by its
own bath; oscillator ``l`` (1 or 2) sees Omega_l^2(t) = Omega^2(t) - (-1)^l w(t).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, DomainError

PROFILE_KINDS = ("constant", "step", "tanh")


def effective_frequencies(omega_sq, coupling):
    """Return (Omega_1^2, Omega_2^2) = (Omega^2 + w, Omega^2 - w)."""
    omega_sq = np.asarray(omega_sq, dtype=float)
    coupling = np.asarray(coupling, dtype=float)
    bad = np.abs(coupling) > omega_sq
    if np.any(bad):
        i = int(np.flatnonzero(np.atleast_1d(bad))[0])
        o = float(np.atleast_1d(omega_sq)[i]) if omega_sq.ndim else float(omega_sq)
        c = float(np.atleast_1d(coupling)[i]) if coupling.ndim else float(coupling)
        raise DomainError(f"coupling |w|={abs(c)} exceeds Omega^2={o} (sample {i})")
    s1, s2 = omega_sq + coupling, omega_sq - coupling
    if s1.ndim == 0:
        return float(s1), float(s2)
    return s1, s2


def normal_coordinates(x1, x2):
    r = 1.0 / math.sqrt(2.0)
    return (np.subtract(x1, x2) * r, np.add(x1, x2) * r)


def physical_coordinates(q1, q2):
    """Inverse of :func:`normal_coordinates`."""
    r = 1.0 / math.sqrt(2.0)
    return (np.add(q1, q2) * r, np.subtract(q2, q1) * r)


@dataclass(frozen=True)
class FrequencyProfile:
    """Regular frequency Omega(t): constant, sudden step at t=0, or tanh ramp.

    The step takes the in-value for t < 0 and the out-value for t >= 0.
    """

    kind: str
    omega_minus: float
    omega_plus: float
    tau: float = 1.0

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ConfigError(f"unknown profile kind {self.kind!r}; expected one of {PROFILE_KINDS}")
        if self.kind == "constant" and self.omega_minus != self.omega_plus:
            raise ConfigError("constant profile needs omega_minus == omega_plus")
        if self.kind == "tanh" and not self.tau > 0:
            raise ConfigError("tanh profile needs tau > 0")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        a, b = self.omega_minus, self.omega_plus
        if self.kind == "constant":
            out = np.full_like(t, a)
        elif self.kind == "step":
            out = np.where(t < 0.0, a, b)
        else:
            out = a + 0.5 * (b - a) * (1.0 + np.tanh(t / self.tau))
        return float(out) if out.ndim == 0 else out

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return (0.0,) if self.kind == "step" and self.omega_minus != self.omega_plus else ()

    def plateau_start(self, rtol: float = 1e-8) -> float:
        """Earliest t after which |Omega(t) - Omega+| / Omega+ < rtol."""
        if self.kind == "constant":
            return -math.inf
        if self.kind == "step":
            return 0.0
        gap = abs(self.omega_plus - self.omega_minus) / self.omega_plus
        if gap == 0.0:
            return -math.inf
        # |b-a|/b * (1 - tanh(t/tau))/2 ~ gap * exp(-2 t / tau)
        return 0.5 * self.tau * math.log(gap / rtol)

    def check_asymptotes(self, t_lo: float, t_hi: float, rtol: float = 1e-6) -> None:
        lo, hi = self(t_lo), self(t_hi)
        if abs(lo - self.omega_minus) > rtol * self.omega_minus:
            raise ConfigError(f"profile not on its in-plateau at t={t_lo}: {lo} vs {self.omega_minus}")
        if abs(hi - self.omega_plus) > rtol * self.omega_plus:
            raise ConfigError(f"profile not on its out-plateau at t={t_hi}: {hi} vs {self.omega_plus}")


@dataclass(frozen=True)
class Oscillator:
    """One normal mode with its own bath: everything downstream works on this."""

    index: int
    omega0: Callable[[float], float]
    omega_minus: float
    omega_plus: float
    eps_r: float
    mu: float
    t0: float
    breakpoints: tuple[float, ...] = ()


@dataclass(frozen=True)
class ModelParams:
    """Configuration of the coupled pair.

    ``profile`` is the common bare frequency; ``coupling`` a constant w.
    ``eps_r`` is either one noise power for both baths or a pair.
    """

    profile: FrequencyProfile
    coupling: float = 0.0
    eps_r: float | tuple[float, float] = 0.0
    mu: float = 0.0
    t0: float = 0.0

    def __post_init__(self):
        problems = []
        if not self.omega_minus > 0:
            problems.append(f"model.omega_minus must be > 0, got {self.omega_minus}")
        if not self.omega_plus > 0:
            problems.append(f"model.omega_plus must be > 0, got {self.omega_plus}")
        for e in self.eps_pair:
            if not e >= 0:
                problems.append(f"model.eps_r must be >= 0, got {e}")
        if not 0.0 <= self.mu <= 1.0:
            problems.append(f"model.mu must lie in [0, 1], got {self.mu}")
        for name, om in (("omega_minus", self.omega_minus), ("omega_plus", self.omega_plus)):
            if om > 0 and abs(self.coupling) > om * om:
                problems.append(f"model.coupling |w|={abs(self.coupling)} exceeds {name}^2={om * om}")
        if problems:
            raise ConfigError("invalid model parameters", problems)

    @property
    def omega_minus(self) -> float:
        return self.profile.omega_minus

    @property
    def omega_plus(self) -> float:
        return self.profile.omega_plus

    @property
    def eps_pair(self) -> tuple[float, float]:
        e = self.eps_r
        return (float(e), float(e)) if np.isscalar(e) else (float(e[0]), float(e[1]))

    def oscillator(self, l: int) -> Oscillator:
        if l not in (1, 2):
            raise ConfigError(f"oscillator index must be 1 or 2, got {l}")
        sign = 1.0 if l == 1 else -1.0   # Omega_l^2 = Omega^2 - (-1)^l w
        w, prof = self.coupling, self.profile

        def omega0(t, _p=prof, _s=sign * w):
            o2 = np.asarray(_p(t)) ** 2 + _s
            if np.any(o2 < 0):
                raise DomainError(f"Omega_{l}^2 < 0 at t={t}")
            r = np.sqrt(o2)
            return float(r) if r.ndim == 0 else r

        om = math.sqrt(self.omega_minus ** 2 + sign * w)
        op = math.sqrt(self.omega_plus ** 2 + sign * w)
        return Oscillator(l, omega0, om, op, self.eps_pair[l - 1], self.mu, self.t0, prof.breakpoints)

    def check_profile(self, t_lo: float, t_hi: float, n_samples: int = 2001) -> None:
        """Sample the coupling constraint and the asymptotic plateaus."""
        t = np.linspace(t_lo, t_hi, n_samples)
        effective_frequencies(np.asarray(self.profile(t)) ** 2, np.full_like(t, self.coupling))
        self.profile.check_asymptotes(t_lo, t_hi)


@dataclass(frozen=True)
class DimensionlessParams:
    """Scaled quantities: lambda = eps/Omega+^3, kappa = 2 sqrt(Omega-/Omega+),
    d = sqrt(Omega+/Omega-); time t_bar = Omega+ t, fields u_bar = u / Omega+."""

    lam: float
    kappa: float
    d: float
    mu: float
    omega_plus: float
    omega_bar: Callable[[float], float] = field(compare=False)
    t0_bar: float = 0.0
    breakpoints_bar: tuple[float, ...] = ()

    def __post_init__(self):
        if self.lam < 0 or self.kappa <= 0 or self.d <= 0:
            raise ConfigError(f"invalid dimensionless parameters {self!r}")

    @property
    def u2_in(self) -> float:
        """In-state field Omega-/Omega+ in scaled units (= 1/d^2)."""
        return 1.0 / (self.d * self.d)

    def unscale(self) -> tuple[float, float]:
        """(eps_r, Omega+) recovered from (lambda, Omega+)."""
        return self.lam * self.omega_plus ** 3, self.omega_plus


def scale(params: ModelParams | Oscillator, l: int = 1) -> DimensionlessParams:
    osc = params.oscillator(l) if isinstance(params, ModelParams) else params
    op, om = osc.omega_plus, osc.omega_minus
    kappa = 2.0 * math.sqrt(om / op)
    d = math.sqrt(op / om)

    def omega_bar(tb, _f=osc.omega0, _op=op):
        return _f(np.asarray(tb) / _op) / _op

    return DimensionlessParams(
        lam=osc.eps_r / op ** 3,
        kappa=kappa,
        d=d,
        mu=osc.mu,
        omega_plus=op,
        omega_bar=omega_bar,
        t0_bar=osc.t0 * op,
        breakpoints_bar=tuple(b * op for b in osc.breakpoints),
    )


def constant_params(lam: float, mu: float = 0.0, d: float = 1.0, omega_plus: float = 1.0) -> DimensionlessParams:
    """Shortcut for a constant scaled frequency Omega_bar = 1 with in-state 1/d^2.

    For d != 1 this describes an oscillator whose in-frequency differs from the
    frequency it relaxes at, i.e. the in-state is not the drift fixed point.
    """
    return DimensionlessParams(
        lam=lam, kappa=2.0 / d, d=d, mu=mu, omega_plus=omega_plus,
        omega_bar=lambda tb: 1.0, t0_bar=0.0,
    )

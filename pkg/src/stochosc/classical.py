"""Deterministic oscillator xi'' + Omega(t)^2 xi = 0 and its out-channel coefficients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import AccuracyError, ConfigError, FitResidualError
from .model import ModelParams, Oscillator

RTOL = 1e-8
ATOL = 1e-10
INVARIANT_RTOL = 1e-8


@dataclass(frozen=True)
class ClassicalSolution:
    t_grid: np.ndarray
    xi: np.ndarray
    xi_dot: np.ndarray
    sigma: np.ndarray
    gamma: np.ndarray
    omega: np.ndarray           # Omega(t) sampled on t_grid, kept for the plateau check
    omega_minus: float
    c1: complex = complex("nan")
    c2: complex = complex("nan")
    rho: float = float("nan")

    @property
    def riccati(self) -> np.ndarray:
        """phi = xi'/xi = u1 + i u2 along the solution."""
        return self.xi_dot / self.xi

    @property
    def wronskian(self) -> np.ndarray:
        return np.imag(self.xi_dot * np.conj(self.xi))


def _as_oscillator(params: ModelParams | Oscillator, l: int) -> Oscillator:
    return params.oscillator(l) if isinstance(params, ModelParams) else params


def solve_classical(params: ModelParams | Oscillator, t_span: tuple[float, float], step: float,
                    l: int = 1, rtol: float = RTOL, atol: float = ATOL,
                    with_coeffs: bool = True) -> ClassicalSolution:
    """Integrate from xi(t_start) = exp(i Omega- t_start), xi' = i Omega- xi.

    Integration is split at profile discontinuities; samples every ``step``.
    The Wronskian Im(xi' conj(xi)) = Omega- must be conserved to 1e-8.
    """
    osc = _as_oscillator(params, l)
    t_a, t_b = map(float, t_span)
    if not t_b > t_a or not step > 0:
        raise ConfigError(f"bad t_span/step: {t_span}, {step}")
    om = osc.omega_minus
    n_pts = int(np.floor((t_b - t_a) / step + 1e-9)) + 1
    t_grid = np.minimum(t_a + step * np.arange(n_pts), t_b)

    def rhs(t, y):
        xi, xid, _ = y
        w = osc.omega0(t)
        return [xid, -w * w * xi, om / (xi.real ** 2 + xi.imag ** 2)]

    cuts = [t_a] + [b for b in osc.breakpoints if t_a < b < t_b] + [t_b]
    y = np.array([np.exp(1j * om * t_a), 1j * om * np.exp(1j * om * t_a), 0.0], dtype=complex)
    out = np.empty((3, t_grid.size), dtype=complex)
    for a, b in zip(cuts[:-1], cuts[1:]):
        last = b == cuts[-1]
        sel = (t_grid >= a) & ((t_grid <= b) if last else (t_grid < b))
        t_eval = np.append(t_grid[sel][t_grid[sel] < b], b)
        sol = solve_ivp(rhs, (a, b), y, method="DOP853", rtol=rtol, atol=atol,
                        t_eval=t_eval, max_step=step)
        if not sol.success:
            raise AccuracyError(f"classical integration failed on [{a}, {b}]: {sol.message}")
        out[:, sel] = sol.y[:, : int(sel.sum())] if t_grid[sel][-1] < b else sol.y
        y = sol.y[:, -1]

    xi, xid, gam = out[0], out[1], out[2].real
    w = np.imag(xid * np.conj(xi))
    drift = float(np.max(np.abs(w - om)) / om)
    if drift > INVARIANT_RTOL:
        raise AccuracyError(f"Wronskian drift {drift:.3e} exceeds {INVARIANT_RTOL:g}; reduce step")
    omega = np.asarray(osc.omega0(t_grid), dtype=float)
    sol = ClassicalSolution(t_grid, xi, xid, np.abs(xi), gam, omega, om)
    if with_coeffs:
        c1, c2, rho = asymptotic_coeffs(sol, osc.omega_plus)
        sol = ClassicalSolution(t_grid, xi, xid, np.abs(xi), gam, omega, om, c1, c2, rho)
    return sol


def asymptotic_coeffs(sol: ClassicalSolution, omega_plus: float,
                      window: float = 0.25, plateau_rtol: float = 1e-8) -> tuple[complex, complex, float]:
    """Least-squares fit xi ~ C1 e^{i W t} - C2 e^{-i W t} over the final window."""
    n = sol.t_grid.size
    k = max(int(np.floor(n * (1.0 - window))), 0)
    t, xi = sol.t_grid[k:], sol.xi[k:]
    if t.size < 4:
        raise FitResidualError("fit window has fewer than 4 samples")
    off = np.max(np.abs(sol.omega[k:] - omega_plus)) / omega_plus
    if off >= plateau_rtol:
        raise FitResidualError(f"fit window not on the out-plateau (max rel. offset {off:.2e})")
    a = np.stack([np.exp(1j * omega_plus * t), -np.exp(-1j * omega_plus * t)], axis=1)
    coef, *_ = np.linalg.lstsq(a, xi, rcond=None)
    c1, c2 = complex(coef[0]), complex(coef[1])
    resid = float(np.max(np.abs(a @ coef - xi)))
    if resid > 1e-6 * abs(c1):
        raise FitResidualError(f"fit residual {resid:.3e} exceeds 1e-6 |C1|")
    return c1, c2, abs(c2 / c1) ** 2


def asymptotic_coeffs_from_samples(t: np.ndarray, xi: np.ndarray, omega_plus: float) -> tuple[complex, complex, float]:
    """Fit helper for synthetic input on an exact plateau."""
    t = np.asarray(t, dtype=float)
    xi = np.asarray(xi, dtype=complex)
    sol = ClassicalSolution(t, xi, np.zeros_like(xi), np.abs(xi), np.zeros_like(t),
                            np.full_like(t, omega_plus), omega_plus)
    return asymptotic_coeffs(sol, omega_plus)


def step_reflection(omega_minus: float, omega_plus: float) -> float:
    """rho for a sudden jump, from continuity of xi and xi' at the jump."""
    return ((omega_plus - omega_minus) / (omega_plus + omega_minus)) ** 2

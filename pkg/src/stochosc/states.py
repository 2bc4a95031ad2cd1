"""Environment-averaged oscillator states, Bell combinations and transition probabilities.

Transition integrals use z = 1 + u2 - i u1 (scaled fields). Two variants exist
for the 0->2 and 2->0 entries:

* ``series``: the forms obtained by expanding the generating function to
  second order. They reduce to the textbook parametric-oscillator values
  W00 = sqrt(1-rho), W11 = (1-rho)^{3/2}, W02 = W20 = rho sqrt(1-rho)/2 when
  the noise vanishes. They need the fields (1/2,1/2), (3/2,3/2), (5/2,5/2)
  and (1/2,5/2).
* ``literal``: the printed end formulas, using (2,2) and (2,0) for 2->0
  and a prefactor kappa for 0->2.

The fields are the unnormalized complex weights evolved from a unit delta at
the in-state, read off at the switch-off time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import eval_hermite, factorial

from .errors import UsageError
from .grids import ComplexGrid, DensityGrid, GridSpec
from .kinetic import KineticSolver, SinkSpec, evolve_snapshots, initial_delta
from .model import DimensionlessParams

SinkKey = tuple[float, float]

SERIES_FIELDS: dict[tuple[int, int], tuple[SinkKey, ...]] = {
    (0, 0): ((0.5, 0.5),),
    (1, 1): ((1.5, 1.5),),
    (0, 2): ((0.5, 0.5),),
    (2, 0): ((2.5, 2.5), (0.5, 2.5)),
}
LITERAL_FIELDS: dict[tuple[int, int], tuple[SinkKey, ...]] = {
    (0, 0): ((0.5, 0.5),),
    (1, 1): ((1.5, 1.5),),
    (0, 2): ((0.5, 0.5),),
    (2, 0): ((2.0, 2.0), (2.0, 0.0)),
}
VARIANTS = {"series": SERIES_FIELDS, "literal": LITERAL_FIELDS}
STATE_SINK = {0: (0.5, 0.5), 1: (1.5, 1.5)}


# ---- analytic basis --------------------------------------------------------------------------

def basis_function(n: int, q: np.ndarray, omega: float, sigma: float = 1.0) -> np.ndarray:
    """Oscillator eigenfunction (g / (2^n n!))^{1/2} e^{-W q^2/2} H_n(sqrt(W) q), W = omega/sigma^2."""
    w = omega / (sigma * sigma)
    g = math.sqrt(w / math.pi)
    q = np.asarray(q, dtype=float)
    return math.sqrt(g / (2.0 ** n * factorial(n, exact=True))) * np.exp(-0.5 * w * q * q) * eval_hermite(n, math.sqrt(w) * q)


def overlap_matrix(funcs: Sequence[np.ndarray], q: np.ndarray) -> np.ndarray:
    k = len(funcs)
    out = np.empty((k, k), dtype=complex)
    for i in range(k):
        for j in range(k):
            out[i, j] = trapezoid(np.conj(funcs[i]) * funcs[j], q)
    return out


def default_q_grid(omega: float, points: int = 2048, extent: float = 12.0) -> np.ndarray:
    half = extent / math.sqrt(omega)
    return np.linspace(-half, half, points)


# ---- averaged states -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AveragedState:
    q: np.ndarray
    values: np.ndarray
    label: tuple[SinkKey, int]
    norm: float
    c_norm: float            # 1 / int |Upsilon|^2, applied to the field before projection

    def normalized(self) -> "AveragedState":
        return AveragedState(self.q, self.values / self.norm, self.label, 1.0, self.c_norm)


def _sink_of(f: ComplexGrid, declared: SinkKey | None) -> SinkKey | None:
    return declared if declared is not None else getattr(f, "sink", None)


def averaged_state(upsilon: ComplexGrid, excitation: int, params: DimensionlessParams,
                   q_grid: np.ndarray | None = None, sink: SinkKey | None = None) -> AveragedState:
    """|0> = g^{1/2} int C Upsilon e^{(i u1 - u2) q^2 / 2} du, |1> adds a factor 2 q.

    u = Omega+ u_bar are physical fields, g = (Omega-/pi)^{1/2}, C = 1/int |Upsilon|^2.
    """
    if excitation not in STATE_SINK:
        raise UsageError(f"excitation must be 0 or 1, got {excitation}")
    if sink is not None and tuple(sink) != STATE_SINK[excitation]:
        raise UsageError(f"excitation {excitation} needs the field {STATE_SINK[excitation]}, got {tuple(sink)}")
    op = params.omega_plus
    om = op / params.d ** 2
    g = math.sqrt(om / math.pi)
    q = default_q_grid(om) if q_grid is None else np.asarray(q_grid, dtype=float)
    geo = upsilon.re.geometry
    act = geo.active
    c = 1.0 / upsilon.norm_sq()
    amp = upsilon.values[act] * upsilon.grid.h ** 2 * c
    expo = 0.5 * (1j * op * geo.u1[act] - op * geo.u2[act])
    vals = math.sqrt(g) * (np.exp(np.outer(q * q, expo)) @ amp)
    if excitation == 1:
        vals = 2.0 * q * vals
    norm = math.sqrt(float(trapezoid(np.abs(vals) ** 2, q)))
    return AveragedState(q, vals, (STATE_SINK[excitation], excitation), norm, c)


def state_overlap(a: AveragedState, b: AveragedState) -> complex:
    if a.q.shape != b.q.shape or not np.array_equal(a.q, b.q):
        raise UsageError("states live on different q-grids")
    return complex(trapezoid(np.conj(a.values) * b.values, a.q))


@dataclass(frozen=True, eq=False)
class BellStates:
    q1: np.ndarray
    q2: np.ndarray
    psi_minus: np.ndarray
    psi_plus: np.ndarray
    phi_minus: np.ndarray
    phi_plus: np.ndarray

    def norms(self) -> dict[str, float]:
        def n2(a):
            return float(trapezoid(trapezoid(np.abs(a) ** 2, self.q2, axis=1), self.q1))
        return {k: n2(getattr(self, k)) for k in ("psi_minus", "psi_plus", "phi_minus", "phi_plus")}


def bell_states(s0_1: AveragedState, s1_1: AveragedState, s0_2: AveragedState, s1_2: AveragedState) -> BellStates:
    """Psi-+ = (|0>|0> -+ |1>|1>)/sqrt2, Phi-+ = (|0>|1> -+ |1>|0>)/sqrt2 on the q1 x q2 grid."""
    for a, b in ((s0_1, s1_1), (s0_2, s1_2)):
        if not np.array_equal(a.q, b.q):
            raise UsageError("states of one oscillator must share a q-grid")
    r = 1.0 / math.sqrt(2.0)
    o = np.outer
    a0, a1, b0, b1 = s0_1.values, s1_1.values, s0_2.values, s1_2.values
    return BellStates(s0_1.q, s0_2.q,
                      r * (o(a0, b0) - o(a1, b1)), r * (o(a0, b0) + o(a1, b1)),
                      r * (o(a0, b1) - o(a1, b0)), r * (o(a0, b1) + o(a1, b0)))


def bell_norm_prediction(s0_1: AveragedState, s1_1: AveragedState, s0_2: AveragedState,
                         s1_2: AveragedState) -> dict[str, float]:
    """Closed-form squared norms from the single-oscillator norms and overlaps."""
    def nn(s):
        return s.norm ** 2
    x1, x2 = state_overlap(s0_1, s1_1), state_overlap(s0_2, s1_2)
    psi = 0.5 * (nn(s0_1) * nn(s0_2) + nn(s1_1) * nn(s1_2))
    phi = 0.5 * (nn(s0_1) * nn(s1_2) + nn(s1_1) * nn(s0_2))
    c_psi = (x1 * x2).real
    c_phi = (x1 * np.conj(x2)).real
    return {"psi_minus": psi - c_psi, "psi_plus": psi + c_psi,
            "phi_minus": phi - c_phi, "phi_plus": phi + c_phi}


# ---- transitions -----------------------------------------------------------------------------

def required_fields(pairs: Sequence[tuple[int, int]], variant: str = "series") -> list[SinkKey]:
    table = VARIANTS[variant]
    need: list[SinkKey] = []
    for nm in pairs:
        for key in table.get(tuple(nm), ()):
            if key not in need:
                need.append(key)
    return need


def _z(geo) -> np.ndarray:
    return 1.0 + geo.u2 - 1j * geo.u1


def transition_probability(n: int, m: int, fields: Mapping[SinkKey, ComplexGrid],
                           params: DimensionlessParams, variant: str = "series") -> float:
    """Per-oscillator W_{n->m}; exactly 0 for odd n+m."""
    if variant not in VARIANTS:
        raise UsageError(f"unknown variant {variant!r}")
    if (n + m) % 2:
        return 0.0
    table = VARIANTS[variant]
    if (n, m) not in table:
        raise UsageError(f"W_{n}->{m} is not available (supported: {sorted(table)})")
    for key in table[(n, m)]:
        if key not in fields:
            raise UsageError(f"W_{n}->{m} needs the field (p,k)={key}")
    k = params.kappa
    any_f = fields[table[(n, m)][0]]
    z = _z(any_f.re.geometry)

    def integ(key, kern):
        return fields[key].integrate(kern)

    if (n, m) == (0, 0):
        return k * abs(integ((0.5, 0.5), z ** -0.5)) ** 2
    if (n, m) == (1, 1):
        return k ** 3 * abs(integ((1.5, 1.5), z ** -1.5)) ** 2
    if (n, m) == (0, 2):
        geo = any_f.re.geometry
        kern = (1.0 - geo.u2 + 1j * geo.u1) * z ** -1.5
        pref = k / 2.0 if variant == "series" else k
        return pref * abs(integ((0.5, 0.5), kern)) ** 2
    if variant == "series":
        a = k * k * integ((2.5, 2.5), z ** -1.5) - 2.0 * integ((0.5, 2.5), z ** -0.5)
        return k / 8.0 * abs(a) ** 2
    a = k * k * integ((2.0, 2.0), z ** -1.5) - integ((2.0, 0.0), z ** -0.5)
    return k * abs(a) ** 2


def deterministic_limits(rho: float) -> dict[tuple[int, int], float]:
    """Noise-free transition probabilities of a parametric oscillator with reflection rho."""
    s = math.sqrt(1.0 - rho)
    return {(0, 0): s, (1, 1): s ** 3, (0, 2): 0.5 * rho * s, (2, 0): 0.5 * rho * s}


@dataclass
class TransitionTable:
    entries: dict[tuple[int, int], float]
    params: dict
    variant: str = "series"
    errors: dict[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        for (n, m), v in self.entries.items():
            if (n + m) % 2 and v != 0.0:
                raise AssertionError(f"parity violated: W_{n}->{m} = {v}")

    def bound_violations(self) -> list[tuple[tuple[int, int], float]]:
        return [(nm, v) for nm, v in self.entries.items() if not 0.0 <= v <= 1.0]

    def rows(self) -> list[dict]:
        return [{"n": n, "m": m, "W": v, "error": self.errors.get((n, m), float("nan"))}
                for (n, m), v in sorted(self.entries.items())]


def transition_table(fields: Mapping[SinkKey, ComplexGrid], params: DimensionlessParams,
                     variant: str = "series", pairs: Sequence[tuple[int, int]] | None = None) -> TransitionTable:
    if pairs is None:
        pairs = [(n, m) for n in range(3) for m in range(3) if (n + m) % 2 or (n, m) in VARIANTS[variant]]
    entries = {}
    for n, m in pairs:
        entries[(n, m)] = transition_probability(n, m, fields, params, variant)
    snap = {"lam": params.lam, "mu": params.mu, "kappa": params.kappa, "d": params.d}
    return TransitionTable(entries, snap, variant)


def product_transition(t1: Mapping[tuple[int, int], float] | TransitionTable,
                       t2: Mapping[tuple[int, int], float] | TransitionTable) -> dict:
    """W_{(n1,n2)->(m1,m2)} = w1_{n1->m1} w2_{n2->m2}."""
    a = t1.entries if isinstance(t1, TransitionTable) else t1
    b = t2.entries if isinstance(t2, TransitionTable) else t2
    return {((n1, n2), (m1, m2)): wa * wb for (n1, m1), wa in a.items() for (n2, m2), wb in b.items()}


def window_fields(params: DimensionlessParams, sinks: Sequence[SinkKey], t_end: float, grid: GridSpec,
                  record: Sequence[float] = (), solver: KineticSolver | None = None) -> dict:
    """Evolve a unit delta at the in-state with each complex sink to ``t_end``.

    Returns {sink: {time: ComplexGrid}} for ``t_end`` and the ``record`` times.
    """
    solver = solver or KineticSolver(grid, params.lam, params.mu)
    out = {}
    for p, k in sinks:
        f0 = initial_delta(grid, params, kind="signed")
        sink = SinkSpec(p=p, k=k)
        if not sink.is_complex:
            f0 = ComplexGrid(f0, DensityGrid(grid, np.zeros_like(f0.values), f0.time, "signed"))
        out[(p, k)] = evolve_snapshots(f0, params, sink, t_end, record, solver=solver)
    return out


# ---- delta-limit report ----------------------------------------------------------------------

def u02_from_rho(rho: float) -> float:
    return -1.0 + 1.0 / math.sqrt(1.0 - rho)


def u02_from_d(d: float) -> tuple[float, float]:
    if d < 1:
        raise UsageError(f"real concentration points need d >= 1, got {d}")
    r = math.sqrt(d * d - 1.0)
    return d + r, d - r


def delta_limit_check(rho: float, d: float, ladder: Sequence[tuple[float, float]],
                      concentration: Sequence[dict] = ()) -> dict:
    """Summarize a small-lambda ladder [(lam, W00)] against sqrt(1-rho).

    ``concentration`` optionally carries per-rung basin reports.
    """
    target = math.sqrt(1.0 - rho)
    lad = sorted(ladder, key=lambda x: -x[0])
    errs = [abs(w - target) for _, w in lad]
    mono = all(b < a for a, b in zip(errs, errs[1:]))
    rep = {"rho": rho, "target_w00": target, "u02_rho": u02_from_rho(rho),
           "ladder": [{"lam": l, "w00": w, "abs_error": e} for (l, w), e in zip(lad, errs)],
           "monotone": mono, "flags": [] if mono else ["non-monotone approach to sqrt(1-rho)"],
           "concentration": list(concentration)}
    if d >= 1:
        rep["u02_d"] = u02_from_d(d)
    return rep

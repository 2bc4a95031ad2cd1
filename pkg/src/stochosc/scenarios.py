"""Scenario pipelines behind the command-line subcommands.

Each pipeline reads a validated :class:`ScenarioConfig`, writes columnar CSV
artifacts through an :class:`ArtifactWriter` and fills ``manifest.results``.
Scaled times are absolute (switch-on at ``model.t0 * Omega+``).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .classical import solve_classical, step_reflection
from .config import ScenarioConfig
from .errors import UsageError
from .grids import ComplexGrid, DensityGrid, GridSpec, zeros
from .io import ArtifactWriter, RunManifest
from .kinetic import (KineticSolver, SinkSpec, SourceSpec, basin_report, evolve_snapshots, initial_delta,
                      steady_state)
from .langevin import coarse_l1, empirical_density, feynman_kac, l1_noise_floor, simulate
from .model import DimensionlessParams, ModelParams, scale
from .observables import energy_level, generalized_entropy, n_factor_banded, population, von_neumann_entropy
from .states import (VARIANTS, averaged_state, bell_norm_prediction, bell_states, default_q_grid,
                     delta_limit_check, deterministic_limits, product_transition, required_fields, state_overlap,
                     transition_table, u02_from_d)

CLASSICAL_SAMPLES_PER_PERIOD = 200


@dataclass
class Context:
    cfg: ScenarioConfig
    out: ArtifactWriter
    grid: GridSpec
    threads: int = 1

    @property
    def model(self) -> ModelParams:
        return self.cfg.model.build()

    def params(self, l: int, model: ModelParams | None = None) -> DimensionlessParams:
        return scale(model or self.model, l)

    def pmap(self, fn: Callable, items: Sequence) -> list:
        """Ordered map; independent solves run concurrently when threads > 1."""
        if self.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]


def _tag(t: float) -> str:
    return format(float(t), "g").replace("-", "m")


def _lam_tag(lam: float) -> str:
    return format(float(lam), "g")


def _trace_times(t_a: float, t_end: float, dt: float, n: int, extra: Sequence[float]) -> list[float]:
    """``n`` roughly even stops on the dt lattice from t_a, plus the requested record times."""
    ts = {float(t_end)} | {float(x) for x in extra if t_a < x <= t_end}
    if n > 0:
        steps = max(1, int(round((t_end - t_a) / dt)))
        for k in np.unique(np.round(np.linspace(0, steps, n + 1)[1:]).astype(int)):
            ts.add(min(t_a + k * dt, float(t_end)))
    return sorted(ts)


def _with_lambda(model: ModelParams, lam: float) -> ModelParams:
    """Same model with each bath's noise power set so that its scaled strength equals ``lam``."""
    eps = tuple(lam * model.oscillator(l).omega_plus ** 3 for l in (1, 2))
    return replace(model, eps_r=eps)


def _ladder(ctx: Context) -> list[float]:
    s = ctx.cfg.scenario
    if s.lam_ladder:
        return [float(x) for x in s.lam_ladder]
    return [ctx.params(s.oscillator).lam]


def _start_point(ctx: Context, p: DimensionlessParams) -> tuple[float, float]:
    s = ctx.cfg.scenario
    return s.initial_u1, (s.initial_u2 if s.initial_u2 > 0 else p.u2_in)


def _check_window(p: DimensionlessParams, t_end: float) -> None:
    if not t_end > p.t0_bar:
        raise UsageError(f"scenario.t_bar_end={t_end} must follow the switch-on time {p.t0_bar}")


# ---- fp-evolve -------------------------------------------------------------------------------

def fp_evolve(ctx: Context) -> dict:
    s, out = ctx.cfg.scenario, ctx.out
    p = ctx.params(s.oscillator)
    _check_window(p, s.t_bar_end)
    u1, u2 = _start_point(ctx, p)
    fields = sorted({float(t) for t in s.record_bar if p.t0_bar < t <= s.t_bar_end} | {float(s.t_bar_end)})
    times = _trace_times(p.t0_bar, s.t_bar_end, ctx.grid.dt, s.n_trace, fields)
    with out.timed("pde"):
        solver = KineticSolver(ctx.grid, p.lam, p.mu)
        f0 = initial_delta(ctx.grid, p, "probability", u1, u2)
        snaps = evolve_snapshots(f0, p, SinkSpec(), s.t_bar_end, times, solver=solver)
    with out.timed("write"):
        mass = [snaps[t].mass() for t in times]
        means = [snaps[t].mean() for t in times]
        band = [snaps[t].band_mass() / max(snaps[t].mass(), 1e-300) for t in times]
        out.trace("trace_mass.csv", "mass", times, mass)
        out.trace("trace_mean_u1.csv", "mean_u1", times, [m[0] for m in means])
        out.trace("trace_mean_u2.csv", "mean_u2", times, [m[1] for m in means])
        out.trace("trace_band_mass.csv", "band_mass", times, band)
        for t in fields:
            out.grid(f"density_t{_tag(t)}", snaps[t])
    out.manifest.warn("boundary_mass", max(band))
    drift = max(abs(m - 1.0) for m in mass)
    return {"max_mass_drift": drift, "final_mean": list(means[-1]), "lam": p.lam, "mu": p.mu,
            "min_value": solver.stats.min_value}


# ---- q-state ---------------------------------------------------------------------------------

def q_state(ctx: Context) -> dict:
    s, out = ctx.cfg.scenario, ctx.out
    p = ctx.params(s.oscillator)
    _check_window(p, s.t_bar_end)
    u1, u2 = _start_point(ctx, p)
    sink = SinkSpec.q_index(s.m)
    fields = sorted({float(t) for t in s.record_bar if p.t0_bar < t <= s.t_bar_end} | {float(s.t_bar_end)})
    times = _trace_times(p.t0_bar, s.t_bar_end, ctx.grid.dt, s.n_trace, fields)
    with out.timed("pde"):
        f0 = initial_delta(ctx.grid, p, "weighted", u1, u2)
        snaps = evolve_snapshots(f0, p, sink, s.t_bar_end, times, escape_cap=s.escape_cap)
    with out.timed("observables"):
        norms = [snaps[t].mass() for t in times]
        nf = [n_factor_banded(snaps[t], p, check=False) for t in times]
        pops = [population(s.m, snaps[t]) for t in times] if s.m in (0, 2) else None
    with out.timed("write"):
        out.trace("trace_norm.csv", "norm", times, norms)
        out.trace("trace_n_factor.csv", "n_factor", times, [b.value for b in nf])
        out.trace("trace_n_factor_band.csv", "band_fraction", times, [b.band_fraction for b in nf])
        if pops is not None:
            out.trace("trace_population.csv", f"population_m{s.m}", times, pops)
        for t in fields:
            out.grid(f"q{s.m}_t{_tag(t)}", snaps[t])
    out.manifest.warn("cutoff_band_mass", max(b.band_fraction for b in nf))
    out.manifest.warn("boundary_mass", max(snaps[t].band_mass() / max(abs(snaps[t].mass()), 1e-300)
                                           for t in times))
    return {"m": s.m, "norm": norms[-1], "n_factor": nf[-1].value,
            "population": None if pops is None else pops[-1]}


# ---- entropy ---------------------------------------------------------------------------------

def _qd_pair(grid: GridSpec, p: DimensionlessParams, t_end: float, record: Sequence[float], cap: float):
    """Q^(0) and the auxiliary D (source -u1 Q^(0)) from the switch-on delta."""
    q0 = initial_delta(grid, p, "weighted")
    d0 = zeros(grid, p.t0_bar, "signed")
    sink = SinkSpec(p=0.0, source=SourceSpec(1.0, 1.0))
    return evolve_snapshots(d0, p, sink, t_end, record, source_field=q0, escape_cap=cap)


def entropy(ctx: Context) -> dict:
    s, out = ctx.cfg.scenario, ctx.out
    rows, summary = [], []
    for lam in _ladder(ctx):
        model = _with_lambda(ctx.model, lam)
        pp = [ctx.params(l, model) for l in (1, 2)]
        _check_window(pp[0], s.t_bar_end)
        times = sorted({float(t) for t in s.record_bar if pp[0].t0_bar < t <= s.t_bar_end}
                       | {float(s.t_bar_end)})
        with out.timed("pde"):
            jobs = [pp[0]] if pp[0] == pp[1] else pp
            runs = ctx.pmap(lambda p: _qd_pair(ctx.grid, p, s.t_bar_end, times, s.escape_cap), jobs)
            runs = runs * 2 if len(runs) == 1 else runs
        with out.timed("observables"):
            trace = []
            for t in times:
                (d1, q1), (d2, q2) = runs[0][t], runs[1][t]
                vn = von_neumann_entropy((q1, q2), pp)
                g = generalized_entropy((q1, q2), (d1, d2), pp)
                band = max(n_factor_banded(q, p, check=False).band_fraction for q, p in ((q1, pp[0]), (q2, pp[1])))
                out.manifest.warn("cutoff_band_mass", band)
                trace.append((t, vn.n_factors[0], vn.n_factors[1], vn.value, vn.value_normalized, g.value))
        out.csv(f"entropy_lam{_lam_tag(lam)}.csv",
                ("t_bar", "n1", "n2", "lambda_n", "lambda_n_normalized", "lambda_g"), trace)
        rows.append((lam,) + trace[-1][1:])
        summary.append({"lam": lam, "n1": trace[-1][1], "n2": trace[-1][2], "lambda_n": trace[-1][3],
                        "lambda_n_normalized": trace[-1][4], "lambda_g": trace[-1][5]})
    out.csv("entropy_ladder.csv", ("lam", "n1", "n2", "lambda_n", "lambda_n_normalized", "lambda_g"), rows)
    lg = [abs(r["lambda_g"]) for r in sorted(summary, key=lambda r: -r["lam"])]
    return {"ladder": summary, "lambda_g_decreasing": all(b < a for a, b in zip(lg, lg[1:]))}


# ---- spectrum --------------------------------------------------------------------------------

def _branch_rows(ctx: Context, p: DimensionlessParams, starts: list[tuple[str, float]], cands) -> list[dict]:
    s, out = ctx.cfg.scenario, ctx.out
    const = replace(p, omega_bar=lambda tb: 1.0, breakpoints_bar=(), t0_bar=0.0)

    def solve(job):
        label, u2 = job
        res = {}
        for m in (0, 2):
            sink = SinkSpec.q_index(m)
            f0 = initial_delta(ctx.grid, const, "weighted", 0.0, u2)
            if s.method == "window":
                f = evolve_snapshots(f0, const, sink, s.t_bar_end, escape_cap=s.escape_cap)[float(s.t_bar_end)]
                res[m] = (f, basin_report(f, cands), math.nan)
            else:
                st = steady_state(const, sink, s.tol, ctx.grid, initial=f0, method=s.method, t_max=s.t_bar_max,
                                  candidates=cands)
                res[m] = (st.field, st.basin, st.rate.real)
        return label, u2, res

    with out.timed("pde"):
        solved = ctx.pmap(solve, starts)
    rows = []
    with out.timed("observables"):
        for label, u2, res in solved:
            f0, b0, r0 = res[0]
            f2, _, r2 = res[2]
            e0, e1 = energy_level(0, f0, const), energy_level(2, f2, const)
            band = max(n_factor_banded(f, const, check=False).band_fraction for f in (f0, f2))
            out.manifest.warn("cutoff_band_mass", band)
            rows.append({"branch": label, "start_u2": u2, "e0": e0, "e1": e1, "gap": e1 - e0,
                         "m0": population(0, f0), "m1": population(2, f2), "rate0": r0, "rate2": r2,
                         "mean_u2": b0["mean_u2"], "peak_u1": b0["peak_u1"], "peak_u2": b0["peak_u2"],
                         "candidates": b0["candidates"]})
            out.grid(f"spectrum_{label}_q0", f0)
    return rows


def spectrum(ctx: Context) -> dict:
    s, out = ctx.cfg.scenario, ctx.out
    p = ctx.params(s.oscillator)
    starts = [("in", p.u2_in)]
    cands = []
    if p.d > 1.0:
        hi, lo = u02_from_d(p.d)
        cands = [(0.0, hi), (0.0, lo)]
        starts += [("upper", hi), ("lower", lo)]
    rows = _branch_rows(ctx, p, starts, cands)
    cols = ("start_u2", "e0", "e1", "gap", "m0", "m1", "rate0", "rate2", "mean_u2", "peak_u1", "peak_u2")
    out.csv("levels.csv", ("branch",) + cols, [[r["branch"]] + [r[c] for c in cols] for r in rows])
    return {"method": s.method, "omega_plus": p.omega_plus, "d": p.d, "lam": p.lam, "branches": rows,
            "u02_candidates": [c[1] for c in cands]}


# ---- transitions -----------------------------------------------------------------------------

def classical_rho(model: ModelParams, l: int) -> tuple[float, float | None]:
    """(numerical rho from the deterministic trajectory, closed form for a sudden step or None)."""
    osc = model.oscillator(l)
    prof = model.profile
    if prof.kind == "constant" and model.coupling == 0.0:
        return 0.0, 0.0
    period = 2.0 * math.pi / osc.omega_plus
    if prof.kind == "tanh":
        edge = max(prof.plateau_start(1e-10), 0.0) + period
        span = (-edge, edge + 20.0 * period)
    else:
        span = (-period, 20.0 * period)
    sol = solve_classical(model, span, period / CLASSICAL_SAMPLES_PER_PERIOD, l)
    exact = step_reflection(osc.omega_minus, osc.omega_plus) if prof.kind == "step" else None
    return float(sol.rho), exact


def _window(ctx: Context, grid: GridSpec, p: DimensionlessParams, keys, t_end: float, cap: float) -> dict:
    def run(key):
        f0 = initial_delta(grid, p, "signed")
        sink = SinkSpec(p=key[0], k=key[1])
        if not sink.is_complex:
            f0 = ComplexGrid(f0, DensityGrid(grid, np.zeros_like(f0.values), f0.time, "signed"))
        return evolve_snapshots(f0, p, sink, t_end, escape_cap=cap)[float(t_end)]
    return dict(zip(keys, ctx.pmap(run, list(keys))))


def transitions(ctx: Context) -> dict:
    s, out = ctx.cfg.scenario, ctx.out
    variants = list(VARIANTS) if s.variant == "both" else [s.variant]
    pairs = [(0, 0), (1, 1), (0, 2), (2, 0)]
    with out.timed("classical"):
        rhos = {l: classical_rho(ctx.model, l) for l in (1, 2)}
    keys = []
    for v in variants:
        keys += [k for k in required_fields(pairs, v) if k not in keys]
    coarse = replace(ctx.grid, n=ctx.grid.n // 2, dt=ctx.grid.dt * 2) if s.error_bars else None
    ladder_doc, ladder_pts = [], {l: [] for l in (1, 2)}
    for lam in _ladder(ctx):
        model = _with_lambda(ctx.model, lam)
        pp = {l: ctx.params(l, model) for l in (1, 2)}
        tables = {}
        for l in (1, 2):
            _check_window(pp[l], s.t_bar_end)
            if l == 2 and pp[2] == pp[1]:
                tables[2] = tables[1]
                continue
            with out.timed("pde"):
                fields = _window(ctx, ctx.grid, pp[l], keys, s.t_bar_end, s.escape_cap)
                cfields = _window(ctx, coarse, pp[l], keys, s.t_bar_end, s.escape_cap) if coarse else None
            tabs = {}
            for v in variants:
                t = transition_table(fields, pp[l], v)
                if cfields is not None:
                    tc = transition_table(cfields, pp[l], v)
                    t.errors = {nm: abs(t.entries[nm] - tc.entries[nm]) for nm in t.entries}
                tabs[v] = t
            tables[l] = tabs
        doc = {"lam": lam, "oscillators": {}}
        for l in (1, 2):
            lim = deterministic_limits(rhos[l][0])
            osc_doc = {"rho": rhos[l][0], "rho_closed_form": rhos[l][1], "params": tables[l][variants[0]].params}
            for v, t in tables[l].items():
                out.csv(f"transitions_lam{_lam_tag(lam)}_osc{l}_{v}.csv", ("n", "m", "W", "error", "lambda0_limit"),
                        [(r["n"], r["m"], r["W"], r["error"], lim.get((r["n"], r["m"]), 0.0)) for r in t.rows()])
                osc_doc[v] = {"entries": {f"{n}->{m}": w for (n, m), w in sorted(t.entries.items())},
                              "errors": {f"{n}->{m}": e for (n, m), e in sorted(t.errors.items())},
                              "bound_violations": [f"{n}->{m}" for (n, m), _ in t.bound_violations()]}
            doc["oscillators"][str(l)] = osc_doc
            ladder_pts[l].append((lam, tables[l][variants[0]].entries[(0, 0)]))
        prod = product_transition(tables[1][variants[0]], tables[2][variants[0]])
        out.csv(f"transitions_lam{_lam_tag(lam)}_product_{variants[0]}.csv", ("n1", "n2", "m1", "m2", "W"),
                [(a[0], a[1], b[0], b[1], w) for (a, b), w in sorted(prod.items())])
        ladder_doc.append(doc)
    reports = {str(l): delta_limit_check(rhos[l][0], ctx.params(l).d, ladder_pts[l]) for l in (1, 2)}
    out.json("transitions.json", {"variants": variants, "ladder": ladder_doc, "limit_report": reports})
    return {"rho": {str(l): rhos[l][0] for l in (1, 2)}, "limit_report": reports}


# ---- bell ------------------------------------------------------------------------------------

def bell(ctx: Context) -> dict:
    s, out = ctx.cfg.scenario, ctx.out
    keys = [(0.5, 0.5), (1.5, 1.5)]
    states = {}
    for l in (1, 2):
        p = ctx.params(l)
        _check_window(p, s.t_bar_end)
        with out.timed("pde"):
            fields = _window(ctx, ctx.grid, p, keys, s.t_bar_end, s.escape_cap)
        q = default_q_grid(p.omega_plus / p.d ** 2, s.q_points)
        with out.timed("states"):
            states[l] = [averaged_state(fields[keys[e]], e, p, q, keys[e]) for e in (0, 1)]
        a0, a1 = states[l]
        out.csv(f"states_osc{l}.csv", ("q", "re0", "im0", "re1", "im1"),
                zip(q, a0.values.real, a0.values.imag, a1.values.real, a1.values.imag))
    with out.timed("bell"):
        b = bell_states(states[1][0], states[1][1], states[2][0], states[2][1])
        direct, pred = b.norms(), bell_norm_prediction(states[1][0], states[1][1], states[2][0], states[2][1])
    q1, q2 = np.meshgrid(b.q1, b.q2, indexing="ij")
    for name in ("psi_minus", "psi_plus", "phi_minus", "phi_plus"):
        a = getattr(b, name)
        out.csv(f"bell_{name}.csv", ("q1", "q2", "re", "im"),
                zip(q1.ravel(), q2.ravel(), a.real.ravel(), a.imag.ravel()))
    out.csv("bell_norms.csv", ("state", "norm_sq_direct", "norm_sq_predicted"),
            [(k, direct[k], pred[k]) for k in direct])
    ov = {str(l): state_overlap(states[l][0], states[l][1]) for l in (1, 2)}
    return {"norms": direct, "predicted": pred,
            "overlap": {l: [v.real, v.imag] for l, v in ov.items()},
            "state_norms": {str(l): [st.norm for st in states[l]] for l in (1, 2)}}


# ---- mc-validate -----------------------------------------------------------------------------

def mc_validate(ctx: Context) -> dict:
    s, out, mc = ctx.cfg.scenario, ctx.out, ctx.cfg.mc
    p = ctx.params(s.oscillator)
    _check_window(p, s.t_bar_end)
    times = sorted({float(t) for t in s.record_bar if p.t0_bar < t <= s.t_bar_end} | {float(s.t_bar_end)})
    with out.timed("mc"):
        ens = simulate(p, mc.n_traj, mc.dt, s.t_bar_end, mc.seed, times, threads=ctx.threads)
    out.manifest.warn("escape_rate", max(ens.escape_rate(t) for t in times))
    with out.timed("pde"):
        solver = KineticSolver(ctx.grid, p.lam, p.mu)
        dens = evolve_snapshots(initial_delta(ctx.grid, p, "probability"), p, SinkSpec(), s.t_bar_end, times,
                                solver=solver)
        sink = SinkSpec.q_index(s.m)
        wq = evolve_snapshots(initial_delta(ctx.grid, p, "weighted"), p, sink, s.t_bar_end, times,
                              solver=solver, escape_cap=s.escape_cap)
    l1_rows, fk_rows = [], []
    with out.timed("compare"):
        for t in times:
            emp = empirical_density(ens, ctx.grid, t)
            n_alive = int(ens.snapshot(t).alive.sum())
            l1_rows.append((t, coarse_l1(dens[t], emp, s.coarse_bins),
                            l1_noise_floor(dens[t], s.coarse_bins, n_alive)))
            fk = feynman_kac(ens, s.m, t)
            pde = wq[t].mass()
            fk_rows.append((t, s.m, fk.norm, fk.stderr, fk.ess, pde, (fk.norm - pde) / fk.stderr))
            out.grid(f"pde_density_t{_tag(t)}", dens[t])
            out.grid(f"mc_density_t{_tag(t)}", emp)
            out.manifest.warn("boundary_mass", dens[t].band_mass())
    out.csv("l1.csv", ("t_bar", "l1", "noise_floor"), l1_rows)
    out.csv("feynman_kac.csv", ("t_bar", "m", "mc_norm", "mc_stderr", "ess", "pde_norm", "z"), fk_rows)
    return {"l1": {f"{r[0]:.17g}": r[1] for r in l1_rows},
            "fk_z": {f"{r[0]:.17g}": r[6] for r in fk_rows}, "ensemble": ens.manifest()}


PIPELINES: dict[str, Callable[[Context], dict]] = {
    "fp-evolve": fp_evolve, "q-state": q_state, "entropy": entropy, "spectrum": spectrum,
    "transitions": transitions, "bell": bell, "mc-validate": mc_validate,
}


def run_scenario(cfg: ScenarioConfig, threads: int = 1, refine: int = 1) -> RunManifest:
    """Run the configured pipeline; the manifest is written whether or not it succeeds."""
    manifest = RunManifest(scenario=cfg.run.scenario, config_hash=cfg.digest())
    writer = ArtifactWriter(cfg.output.dir, manifest, binary=cfg.output.binary)
    manifest.results["config"] = cfg.to_dict()
    manifest.results["refine"] = refine
    try:
        grid = cfg.grid.build(refine) if cfg.grid is not None else GridSpec().refine(refine)
        writer.text("config.toml", cfg.dumps())
        res = PIPELINES[cfg.run.scenario](Context(cfg, writer, grid, max(1, int(threads))))
        manifest.results["summary"] = res
        writer.json("summary.json", res)
    except BaseException as exc:
        writer.finish(exc)
        raise
    writer.finish()
    return manifest

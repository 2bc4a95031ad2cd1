"""Acceptance suite: one PASS/FAIL line per criterion at the stated tolerances.

Runs at production resolution (256^2 for the headline limits, 1e5 trajectories),
so the whole file takes roughly half an hour on one core. Run it directly with
``python tests/test_acceptance.py`` or through pytest; the lines are collected in
the terminal summary either way.
"""
from __future__ import annotations

import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from stochosc.cli import main as cli_main
from stochosc.config import load_toml, parse_config
from stochosc.errors import ResolutionError
from stochosc.grids import GridSpec
from stochosc.io import read_csv
from stochosc.kinetic import SinkSpec, evolve_snapshots, initial_delta, split_complex
from stochosc.model import FrequencyProfile, ModelParams, scale
from stochosc.scenarios import _with_lambda, classical_rho, run_scenario
from stochosc.states import (basis_function, default_q_grid, overlap_matrix, transition_probability,
                             u02_from_d, window_fields)

sys.path.insert(0, str(Path(__file__).parent))
from conftest import ACCEPTANCE_LINES  # noqa: E402

pytestmark = pytest.mark.slow
CONFIGS = Path(__file__).resolve().parents[1] / "scripts" / "configs"
LADDER = (0.1, 0.01, 0.001)


def report(tag: str, title: str, ok: bool, detail: str, seconds: float | None = None) -> None:
    took = f" ({seconds:.0f} s)" if seconds is not None else ""
    line = f"{'PASS' if ok else 'FAIL'}  [{tag}] {title}: {detail}{took}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def run_config(name: str, out: Path, **patch):
    """Run a shipped config (optionally patched section.key=value) into ``out``."""
    data = load_toml(CONFIGS / f"{name}.toml")
    for key, value in patch.items():
        sec, k = key.split("__")
        data.setdefault(sec, {})[k] = value
    data.setdefault("output", {})["dir"] = str(out)
    t = time.perf_counter()
    manifest = run_scenario(parse_config(data))
    return manifest, time.perf_counter() - t


# ---- 1: parametric limit of W(0->0) -------------------------------------------------------

def test_c01_parametric_limit():
    model = ModelParams(FrequencyProfile("step", 1.0, 2.0), t0=-0.5)
    rho, closed = classical_rho(model, 1)
    target = math.sqrt(1.0 - rho)
    grid = GridSpec(n=256)
    t = time.perf_counter()
    ws = []
    for lam in LADDER:
        p = scale(_with_lambda(model, lam), 1)
        f = window_fields(p, [(0.5, 0.5)], 4.0, grid)[(0.5, 0.5)][4.0]
        ws.append(transition_probability(0, 0, {(0.5, 0.5): f}, p))
    dt = time.perf_counter() - t
    gaps = [abs(w - target) for w in ws]
    monotone = all(b < a for a, b in zip(gaps, gaps[1:]))
    final = gaps[-1] / target
    ok = monotone and final < 0.02 and abs(rho - closed) < 1e-8
    report("1", "W00 -> sqrt(1-rho) along the noise ladder", ok,
           f"rho={rho:.10f} (closed form {closed:.10f}), W00={[round(w, 5) for w in ws]}, "
           f"target={target:.5f}, monotone={monotone}, final rel gap={final:.2%} (< 2%)", dt)
    assert ok


# ---- 2: ground-state energy ---------------------------------------------------------------

def test_c02_ground_energy_window(tmp_path):
    man, dt = run_config("spectrum", tmp_path)
    row = man.results["summary"]["branches"][0]
    rel = abs(row["e0"] - 0.5) / 0.5
    report("2/window", "E0 -> Omega+/2 at lam=1e-3, d=1", rel < 0.01,
           f"E0={row['e0']:.6f}, rel err={rel:.3%} (< 1%)", dt)
    assert rel < 0.01


def test_c02_ground_energy_steady_state(tmp_path):
    t = time.perf_counter()
    try:
        man, dt = run_config("spectrum", tmp_path, scenario__method="eigen")
    except ResolutionError as exc:
        report("2/steady", "E0 -> Omega+/2 at lam=1e-3, d=1 (stationary profile)", False,
               f"energy integral unresolved: {exc}", time.perf_counter() - t)
        raise
    row = man.results["summary"]["branches"][0]
    rel = abs(row["e0"] - 0.5) / 0.5
    report("2/steady", "E0 -> Omega+/2 at lam=1e-3, d=1 (stationary profile)", rel < 0.01,
           f"E0={row['e0']:.6f}, rel err={rel:.3%} (< 1%), growth rate={row['rate0']:.3e}", dt)
    assert rel < 0.01


# ---- 3: mass conservation -----------------------------------------------------------------

def test_c03_mass_conservation(tmp_path):
    man, dt = run_config("fp_evolve", tmp_path)
    _, tr = read_csv(tmp_path / "trace_mass.csv")
    drift = float(np.max(np.abs(tr[:, 1] - 1.0)))
    ok = drift < 1e-5
    report("3", "source-free mass conservation, lam=mu=0.1 to t=10", ok,
           f"max |mass-1|={drift:.2e} over {len(tr)} stops (< 1e-5)", dt)
    assert ok


# ---- 4, 5: Monte Carlo against the kinetic solution ----------------------------------------

@pytest.fixture(scope="module")
def mc_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("mc")
    _, dt = run_config("mc_validate", out)
    return out, dt


def test_c04_mc_pde_l1(mc_run):
    out, dt = mc_run
    _, rows = read_csv(out / "l1.csv")
    ok = bool(np.all(rows[:, 1] < 0.05))
    detail = ", ".join(f"t={r[0]:g}: {r[1]:.4f} (floor {r[2]:.4f})" for r in rows)
    report("4", "L1(MC, PDE) on 16x16 coarse bins", ok, detail + " (< 0.05)", dt)
    assert ok


def test_c05_feynman_kac_norm(mc_run):
    out, _ = mc_run
    _, rows = read_csv(out / "feynman_kac.csv")
    last = rows[np.argmax(rows[:, 0])]
    ok = abs(last[6]) <= 3.0
    report("5", "Feynman-Kac c0(t=10) vs PDE norm", ok,
           f"MC={last[2]:.6f} +- {last[3]:.6f}, PDE={last[5]:.6f}, z={last[6]:+.2f} (|z| <= 3)")
    assert ok


# ---- 6, 7: transition tables ----------------------------------------------------------------

@pytest.fixture(scope="module")
def balance_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("balance")
    _, dt = run_config("transitions_balance", out)
    return json.loads((out / "transitions.json").read_text()), dt


def test_c06_parity_selection(balance_run, tmp_path):
    docs = [balance_run[0]]
    run_config("transitions", tmp_path, grid__n=64, scenario__lam_ladder=[0.1], scenario__t_bar_end=1.0)
    docs.append(json.loads((tmp_path / "transitions.json").read_text()))
    seen, bad = 0, []
    for doc in docs:
        for rung in doc["ladder"]:
            for osc in rung["oscillators"].values():
                for v in doc["variants"]:
                    for key in ("0->1", "1->2"):
                        seen += 1
                        if osc[v]["entries"][key] != 0.0:
                            bad.append((key, osc[v]["entries"][key]))
    ok = seen > 0 and not bad
    report("6", "odd-parity entries vanish exactly", ok, f"{seen} entries checked, nonzero: {bad or 'none'}")
    assert ok


def test_c07_detailed_balance_violation(balance_run):
    doc, dt = balance_run
    lines, ok = [], True
    for v in doc["variants"]:
        osc = doc["ladder"][0]["oscillators"]["1"][v]
        w02, w20 = osc["entries"]["0->2"], osc["entries"]["2->0"]
        bar = osc["errors"]["0->2"] + osc["errors"]["2->0"]
        ok &= abs(w02 - w20) > bar
        lines.append(f"{v}: W02={w02:.6g}, W20={w20:.6g}, |diff|={abs(w02 - w20):.3g} vs error bar {bar:.3g}")
    report("7", "detailed balance broken at lam=mu=0.1", ok, "; ".join(lines), dt)
    assert ok


# ---- 8: R/I reflection identity -------------------------------------------------------------

def test_c08_reflection_identity():
    p = scale(_with_lambda(ModelParams(FrequencyProfile("constant", 1.0, 1.0)), 0.1), 1)
    grid = GridSpec(n=128)
    f0 = initial_delta(grid, p, "signed")
    assert np.array_equal(f0.values, f0.grid.geometry.mirror(f0.values))
    sink_r, sink_i = split_complex(SinkSpec(p=0.5, k=0.5))
    t = time.perf_counter()
    rr = evolve_snapshots(f0, p, sink_r, 5.0, [1.0])
    ri = evolve_snapshots(f0, p, sink_i, 5.0, [1.0])
    dt = time.perf_counter() - t
    diffs = {}
    for tb in (1.0, 5.0):
        a, b = rr[tb].values, grid.geometry.mirror(ri[tb].values)
        diffs[tb] = float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300))
    ok = all(d < 1e-8 for d in diffs.values())
    report("8", "R(p u1 + k u2) equals mirrored I(p u1 - k u2), (p,k)=(1/2,1/2)", ok,
           ", ".join(f"t={k:g}: max rel diff {v:.3e}" for k, v in diffs.items()) + " (< 1e-8)", dt)
    assert ok


# ---- 9: entropy switch-off limit -------------------------------------------------------------

def test_c09_entropy_limit(tmp_path):
    man, dt = run_config("entropy", tmp_path)
    lad = sorted(man.results["summary"]["ladder"], key=lambda r: -r["lam"])
    lg = [r["lambda_g"] for r in lad]
    dn = [abs(r["n1"] - 1.0) for r in lad]
    lg_ok = all(b < a for a, b in zip(lg, lg[1:])) and lg[-1] > 0 and lg[-1] < 0.05 * lg[0]
    n_ok = all(b < a for a, b in zip(dn, dn[1:]))
    report("9", "Lambda_G strictly decreasing toward 0 and N -> 1", lg_ok and n_ok,
           f"Lambda_G={[f'{x:.4g}' for x in lg]} (ok={lg_ok}); |N-1|={[f'{x:.3g}' for x in dn]} "
           f"strictly decreasing={n_ok}", dt)
    assert lg_ok and n_ok


# ---- 10: orthonormal basis --------------------------------------------------------------------

def test_c10_orthonormal_basis():
    q = default_q_grid(1.0, 4001)
    m = overlap_matrix([basis_function(n, q, 1.0) for n in range(4)], q)
    err = float(np.max(np.abs(m - np.eye(4))))
    report("10", "overlap matrix of the first four basis functions", err < 1e-8, f"max |M - I|={err:.2e} (< 1e-8)")
    assert err < 1e-8


# ---- 11: level splitting ----------------------------------------------------------------------

def test_c11_level_splitting(tmp_path):
    man, dt = run_config("spectrum_split", tmp_path)
    rows = {r["branch"]: r for r in man.results["summary"]["branches"]}
    hi, lo = u02_from_d(2.0)
    checks = []
    for label, target in (("upper", hi), ("lower", lo)):
        r = rows[label]
        rel = abs(r["peak_u2"] - target) / target
        checks.append((label, target, r["peak_u2"], r["mean_u2"], r["e0"], rel))
    near = all(c[-1] < 0.05 for c in checks)
    distinct = abs(rows["upper"]["e0"] - rows["lower"]["e0"]) > 1e-3 * max(1.0, abs(rows["upper"]["e0"]))
    ok = near and distinct
    detail = "; ".join(f"{c[0]}: target {c[1]:.4f}, peak u02={c[2]:.4f}, mean u2={c[3]:.4f}, E0={c[4]:.5f}, "
                       f"rel={c[5]:.1%}" for c in checks)
    report("11", "two stationary branches near 2 +- sqrt(3)", ok,
           f"{detail}; distinct E0={distinct} (within 5%)", dt)
    assert ok


# ---- 12: thread-count reproducibility ---------------------------------------------------------

SMALL = {
    "mc-validate": ('[run]\nscenario = "mc-validate"\n[model]\neps_r = 0.1\n[grid]\nn = 64\ndt = 0.02\n'
                    '[mc]\nn_traj = 20000\ndt = 0.005\nseed = 7\n[scenario]\nt_bar_end = 1.0\n'
                    'record_bar = [0.5]\ncoarse_bins = 16\n'),
    "transitions": ('[run]\nscenario = "transitions"\n[model]\nprofile = "step"\nomega_minus = 1.0\n'
                    'omega_plus = 2.0\nt0 = -0.5\neps_r = 0.8\n[grid]\nn = 48\ndt = 0.02\n'
                    '[scenario]\nt_bar_end = 1.0\nvariant = "both"\n'),
}


def test_c12_thread_reproducibility(tmp_path):
    t = time.perf_counter()
    mism, files = [], 0
    for scen, body in SMALL.items():
        cfg = tmp_path / f"{scen}.toml"
        cfg.write_text(body)
        out, dirs = tmp_path / scen, []
        for th in ("1", "4"):
            assert cli_main([scen, "--config", str(cfg), "--out", str(out), "--threads", th, "--seed", "99"]) == 0
            dirs.append(out.rename(tmp_path / f"{scen}-threads{th}"))
        names = json.loads((dirs[0] / "manifest.json").read_text())["artifacts"]
        for name in names:
            files += 1
            if (dirs[0] / name).read_bytes() != (dirs[1] / name).read_bytes():
                mism.append(f"{scen}/{name}")
    ok = files > 0 and not mism
    report("12", "--threads 1 vs 4 artifacts byte-identical", ok,
           f"{files} artifacts compared, mismatches: {mism or 'none'}", time.perf_counter() - t)
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))

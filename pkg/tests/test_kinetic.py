import math
from dataclasses import replace

import numpy as np
import pytest

from stochosc.errors import ConfigError, UsageError
from stochosc.grids import ComplexGrid, GridSpec, delta, zeros
from stochosc.kinetic import (KineticSolver, SinkSpec, SourceSpec, _step_plan, diffusion_tensor, drift_parts, evolve,
                              evolve_snapshots, generator_matrix, initial_delta, split_complex, steady_state)
from stochosc.model import constant_params


def test_sinkspec_rules():
    assert SinkSpec.q_index(0) == SinkSpec(p=1.0) and SinkSpec.q_index(2).p == 3.0
    with pytest.raises(ConfigError):
        SinkSpec.q_index(-2)
    with pytest.raises(ConfigError):
        SinkSpec(p=-1)
    assert SinkSpec(0.5, 0.5).is_complex and not SinkSpec(2, 0).is_complex


@pytest.mark.parametrize("sink, expect", [
    (SinkSpec(0.5, 0.5), ((0.5, 0.5), (0.5, -0.5))),
    (SinkSpec(2.0, 0.0), ((2.0, 0.0), (2.0, 0.0))),
    (SinkSpec(0.0, 1.5), ((0.0, 1.5), (0.0, -1.5)))])
def test_split_complex(sink, expect):
    r, i = split_complex(sink)
    assert ((r.p, r.p2), (i.p, i.p2)) == expect


def test_step_plan_hits_stops():
    plan = _step_plan(0.0, 1.0, 0.3, [0.5, 0.55])
    ends = [t + tau for t, tau in plan]
    assert any(abs(e - 0.5) < 1e-12 for e in ends) and any(abs(e - 0.55) < 1e-12 for e in ends)
    assert sum(tau for _, tau in plan) == pytest.approx(1.0)
    assert max(tau for _, tau in plan) <= 0.3 + 1e-12


def _fd_grad_hess(fun, x, y, h=1e-4, h1=1e-6):
    fx = (fun(x + h1, y) - fun(x - h1, y)) / (2 * h1)
    fy = (fun(x, y + h1) - fun(x, y - h1)) / (2 * h1)
    fxx = (fun(x + h, y) - 2 * fun(x, y) + fun(x - h, y)) / h ** 2
    fyy = (fun(x, y + h) - 2 * fun(x, y) + fun(x, y - h)) / h ** 2
    fxy = (fun(x + h, y + h) - fun(x + h, y - h) - fun(x - h, y + h) + fun(x - h, y - h)) / (4 * h * h)
    return fx, fy, fxx, fxy, fyy


def test_gauge_coefficients_against_finite_differences():
    """The closed-form gauge rate and residual, rebuilt from V = ln|1-w| by finite differences."""
    lam, mu, p = 0.1, 0.3, 1.5
    solver = KineticSolver(GridSpec(n=32), lam, mu)
    geo = solver.geo
    _, _, rate = solver.gauge_terms(p)
    rng = np.random.default_rng(1)
    cells = np.argwhere(geo.active & ~geo.band)
    for i, j in cells[rng.choice(len(cells), 25, replace=False)]:
        x, y = geo.w[i, j].real, geo.w[i, j].imag
        V = lambda a, b: np.log(np.abs(1 - (a + 1j * b)))  # noqa: E731
        vx, vy, vxx, vxy, vyy = _fd_grad_hess(V, x, y)
        dxx, dxy, dyy = diffusion_tensor(np.array(x + 1j * y), lam, mu)
        expect = p * (dxx * vxx + 2 * dxy * vxy + dyy * vyy) + p * p * (dxx * vx * vx + 2 * dxy * vx * vy + dyy * vy * vy)
        assert rate[i, j] == pytest.approx(float(expect), rel=1e-5, abs=1e-9)
        # residual u1 - b . grad V at unit frequency
        a, bb, c = drift_parts(np.array(x + 1j * y), lam, mu)
        b = a + bb + c
        u1 = (1j * (1 + x + 1j * y) / (1 - x - 1j * y)).real
        resid = u1 - (b.real * vx + b.imag * vy)
        assert solver.gauge_residual(1.0)[i, j] == pytest.approx(float(resid), rel=1e-6, abs=1e-8)


def test_gauge_and_plain_routes_agree(grid48):
    p = constant_params(0.1)
    f0 = initial_delta(grid48, p, "weighted")
    a = evolve(f0, p, SinkSpec(p=1.0), 1.0, gauge=True)
    b = evolve(f0, p, SinkSpec(p=1.0), 1.0, gauge=False)
    assert a.mass() == pytest.approx(b.mass(), rel=5e-3)
    assert np.abs(a.values - b.values).sum() / np.abs(b.values).sum() < 0.03


def test_mass_conservation_and_positivity(small_grid):
    p = constant_params(0.1, mu=0.1)
    solver = KineticSolver(small_grid, p.lam, p.mu)
    snaps = evolve_snapshots(initial_delta(small_grid, p), p, SinkSpec(), 3.0, [0.5, 1.0, 2.0], solver=solver)
    for f in snaps.values():
        assert abs(f.mass() - 1.0) < 1e-11
        assert f.values.min() >= -1e-12


def test_generator_columns_sum_to_zero(small_grid):
    solver = KineticSolver(small_grid, 0.1, 0.2)
    a = generator_matrix(solver, SinkSpec())
    assert np.max(np.abs(np.asarray(a.sum(axis=0)))) < 1e-9 * np.max(np.abs(a.data))


def test_noiseless_fixed_point_stays_put():
    g = GridSpec(n=64, dt=0.02)
    p = constant_params(0.0)
    f = evolve(initial_delta(g, p), p, SinkSpec(), 10.0)
    m1, m2 = f.mean()
    # centre drift below one cell; a cell near w=0 spans about 2h in u
    assert abs(m1) < 2 * g.h and abs(m2 - 1.0) < 2 * g.h


def test_linearity_of_signed_evolution(small_grid):
    p = constant_params(0.1, mu=0.2)
    a, b = delta(small_grid, 0.2, 1.0, kind="signed"), delta(small_grid, -0.3, 0.7, kind="signed")
    comb = replace(a, values=2.0 * a.values - 0.5 * b.values)
    sink = SinkSpec(0.5, 0.5)
    fa, fb, fc = (evolve(x, p, sink, 1.0) for x in (a, b, comb))
    assert np.allclose(fc.values, 2.0 * fa.values - 0.5 * fb.values, atol=1e-12)


def test_source_pair_identity(grid48):
    """D with source -u1 Q^(0) equals Q^(0) - P when all start from the same delta."""
    p = constant_params(0.1)
    q0 = initial_delta(grid48, p, "weighted")
    sink = SinkSpec(source=SourceSpec(1.0, 1.0))
    d, q = evolve(zeros(grid48, 0.0), p, sink, 2.0, source_field=q0)
    qq = evolve(q0, p, SinkSpec(p=1.0), 2.0)
    pp = evolve(initial_delta(grid48, p), p, SinkSpec(), 2.0)
    diff = qq.values - pp.values
    assert np.abs(d.values - diff).sum() / np.abs(diff).sum() < 0.05
    assert np.abs(q.values - qq.values).sum() / np.abs(qq.values).sum() < 0.03


def test_sourced_run_needs_driver(small_grid):
    p = constant_params(0.1)
    with pytest.raises(UsageError):
        evolve(zeros(small_grid), p, SinkSpec(source=SourceSpec()), 1.0)


def test_cfl_violation_is_a_stability_error(small_grid):
    from stochosc.errors import StabilityError
    p = constant_params(0.1)
    with pytest.raises(StabilityError):
        evolve(initial_delta(small_grid, p), p, SinkSpec(), 0.5, advective_substeps=1)


def test_steady_state_of_p_has_zero_rate(small_grid):
    p = constant_params(0.1)
    st = steady_state(p, SinkSpec(), grid=small_grid, method="eigen")
    assert abs(st.rate) < 1e-8
    assert st.field.mass() == pytest.approx(1.0)


def test_complex_window_is_normalizable(small_grid):
    p = constant_params(0.1)
    f0 = initial_delta(small_grid, p, "signed")
    u = evolve(f0, p, SinkSpec(0.5, 0.5), 2.0)
    assert isinstance(u, ComplexGrid) and math.isfinite(u.norm_sq()) and u.norm_sq() > 0

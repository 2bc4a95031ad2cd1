import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochosc.errors import CoverageError, NumericalError, ResolutionError, UsageError
from stochosc.grids import GridSpec, delta, zeros
from stochosc.model import constant_params
from stochosc.observables import (ObservableTrace, banded_integral, delta_level_k, energy_level, entropy_integral,
                                  generalized_entropy, k_integral, n_factor, population, rdm_diagonal,
                                  von_neumann_entropy)

G = GridSpec(n=128)


def _narrow(u1, u2, width=0.5, kind="weighted"):
    return delta(G, u1, u2, kind=kind, width=width)


def test_n_factor_of_a_point_mass():
    assert n_factor(_narrow(0.0, 1.0), 1.0) == pytest.approx(1.0, abs=2e-4)
    assert n_factor(_narrow(0.0, 4.0), 2.0) == pytest.approx(0.25, rel=1e-3)


def test_level_kernel_against_the_single_point_oracle():
    u02 = 2.0 + math.sqrt(3.0)
    f = _narrow(0.0, u02, width=0.3)
    assert k_integral(0, f, 2.0) == pytest.approx(delta_level_k(0, u02, 2.0), abs=2e-3)
    assert k_integral(2, f, 2.0) == pytest.approx(delta_level_k(2, u02, 2.0), abs=2e-3)
    assert delta_level_k(0, 1.0, 1.0) == 0.0


def test_ground_level_at_the_fixed_point():
    p = constant_params(0.0)
    assert energy_level(0, _narrow(0.0, 1.0), p) == pytest.approx(0.5, rel=1e-3)
    with pytest.raises(UsageError):
        energy_level(1, _narrow(0.0, 1.0), p)


@settings(max_examples=15, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_quadratures_are_linear(a, b):
    f, g = _narrow(0.2, 0.9), _narrow(-0.4, 1.6)
    h = replace(f, values=a * f.values + b * g.values)
    kern = 1.0 / np.sqrt(G.geometry.u2)
    lhs = banded_integral(h, kern, check=False).value
    rhs = a * banded_integral(f, kern, check=False).value + b * banded_integral(g, kern, check=False).value
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


def test_rim_mass_is_a_resolution_error():
    near_rim = delta(GridSpec(n=32), 0.0, 0.02, kind="weighted")
    with pytest.raises(ResolutionError):
        n_factor(near_rim, 1.0)


def test_populations():
    f = _narrow(0.0, 1.0)
    assert population(0, replace(f, values=3.0 * f.values)) == pytest.approx(3.0, rel=1e-3)
    assert population(2, zeros(G, kind="weighted")) == 0.0
    with pytest.raises(UsageError):
        population(1, f)


def test_rdm_of_a_point_mass_is_a_gaussian():
    q, rho = rdm_diagonal(_narrow(0.0, 2.0, width=1.0), np.linspace(-6, 6, 2001))
    assert np.allclose(rho, np.exp(-2.0 * q * q), atol=1e-3)
    with pytest.raises(CoverageError):
        rdm_diagonal(_narrow(0.0, 2.0), np.linspace(-0.5, 0.5, 11))


def test_entropy_integral_of_a_gaussian():
    a = 1.7
    q = np.linspace(-12, 12, 20001)
    rho = np.exp(-a * q * q)
    assert entropy_integral(q, rho) == pytest.approx(-math.sqrt(math.pi) / (2 * math.sqrt(a)), rel=1e-8)
    norm = rho / math.sqrt(math.pi / a)
    assert entropy_integral(q, rho, normalized=True) == pytest.approx(
        entropy_integral(q, norm), rel=1e-6)
    with pytest.raises(NumericalError):
        entropy_integral(q, rho - 1.0)


def test_symmetric_pair_reduces_to_twice_the_cross_term():
    p = constant_params(0.1)
    f = _narrow(0.1, 1.2)
    pt = von_neumann_entropy((f, f), (p, p))
    assert pt.lambdas[0] == pt.lambdas[1] and pt.n_factors[0] == pt.n_factors[1]
    assert pt.value == pytest.approx(-2 * pt.n_factors[0] * pt.lambdas[0])


def test_generalized_entropy_vanishes_without_d():
    p = constant_params(0.1)
    f = _narrow(0.1, 1.2)
    z = zeros(G, kind="signed")
    assert generalized_entropy((f, f), (z, z), (p, p)).value == 0.0


def test_trace_rules():
    tr = ObservableTrace("x")
    tr.append(0.0, 1.0)
    with pytest.raises(UsageError):
        tr.append(0.0, 2.0)
    with pytest.raises(NumericalError):
        tr.append(1.0, float("nan"))

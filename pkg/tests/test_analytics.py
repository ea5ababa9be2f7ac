import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rcsl import analytics as an
from rcsl.analytics import (COEFFICIENTS, EXACT, PAPER, PAPER_COEFFICIENTS, PhysicalConstants, RegimeResult,
                            RegimeWarning, cube_mean_inverse_distance, energy_growth_large_ell,
                            energy_growth_quadrature, gaussian_moment, gaussian_moment_oracle,
                            gaussian_moment_quadrature, grw_mapping, headline_numbers, i_large_ell,
                            i_large_ell_exact, i_small_ell, i_small_ell_leading, mass_spread_large_ell,
                            mass_spread_quadrature, mass_spread_small_ell, poly_mul)

# Frozen values, computed independently by 1D quadrature of the reduced integrals.
ORACLES = {
    "mass_spread_large": 4.0604463141315605,
    "mass_spread_small": math.pi / 2,
    "energy_growth_large": 1.1484090585422586,
    "decoherence_large": 0.67674105235526,
    "decoherence_large_radial": 1.722613587813389,
}
CUBE_MEAN_INVERSE_DISTANCE = 1.8823126444


def test_gaussian_moment_examples():
    assert gaussian_moment(3) == pytest.approx(1 / 8, rel=1e-15)
    assert gaussian_moment(4) == pytest.approx(3 / 8 * math.sqrt(math.pi) * 2**-2.5, rel=1e-14)
    assert gaussian_moment(4) == pytest.approx(0.117501, rel=1e-4)
    with pytest.raises(ValueError):
        gaussian_moment(-1)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=9), st.floats(0.5, 4.0))
def test_oracle_matches_quadrature(coeffs, alpha):
    exact = gaussian_moment_oracle(coeffs, alpha)
    num = gaussian_moment_quadrature(coeffs, alpha)
    scale = gaussian_moment_oracle([abs(c) for c in coeffs], alpha)
    assert abs(exact - num) <= 1e-8 * max(scale, 1e-300)


def test_poly_mul():
    assert poly_mul([1, 1], [1, -1]) == [1.0, 0.0, -1.0]


@pytest.mark.parametrize("key", sorted(ORACLES))
def test_coefficients_frozen(key):
    assert COEFFICIENTS[key] == pytest.approx(ORACLES[key], rel=1e-12)


def test_coefficients_match_direct_quadrature():
    from scipy.integrate import quad
    g = lambda p: quad(lambda u: u**p * (1 - u * u) ** 2 * math.exp(-2 * u * u), 0, np.inf, epsrel=1e-13)[0]
    assert COEFFICIENTS["mass_spread_large"] == pytest.approx(16 * math.pi * g(4), rel=1e-8)
    assert COEFFICIENTS["mass_spread_small"] == pytest.approx(8 * math.pi * g(3), rel=1e-8)
    assert COEFFICIENTS["energy_growth_large"] == pytest.approx(16 * math.pi / 3 * g(2), rel=1e-8)


def test_paper_coefficients():
    assert PAPER_COEFFICIENTS["mass_spread_small"] == 2 * math.pi
    assert PAPER_COEFFICIENTS["mass_spread_large"] == 0.2
    assert PAPER_COEFFICIENTS["decoherence_large"] == math.pi / 2
    assert PAPER_COEFFICIENTS["decoherence_small"] == 1.5 * math.pi**2


def test_cube_mean_inverse_distance():
    assert cube_mean_inverse_distance() == pytest.approx(CUBE_MEAN_INVERSE_DISTANCE, rel=1e-9)
    rng = np.random.default_rng(1)
    a, b = rng.random((2, 400_000, 3))
    inv = 1 / np.linalg.norm(a - b, axis=1)
    assert abs(inv.mean() - CUBE_MEAN_INVERSE_DISTANCE) < 4 * inv.std() / math.sqrt(inv.size)


def test_i_small_ell_examples():
    pc = PhysicalConstants()
    lam = grw_mapping("small-ell", pc)
    a, n, V = pc.a_grw, 1e10, 1e-9
    T = 3.0
    D = n / V
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RegimeWarning)
        val = i_small_ell(lam, T, a, D, V)
        n_cell = D * a**3
        assert val == pytest.approx(1.5 * math.pi**2 * n * n_cell * pc.lambda_grw * T, rel=1e-12)
        assert i_small_ell(lam, 0.0, a, D, V) == 0.0
        assert i_small_ell(lam, T, a, 0.0, V) == 0.0


def test_i_small_ell_warns_outside_regime():
    with pytest.warns(RegimeWarning):
        i_small_ell(1.0, 100.0, 1.0, 1.0, 1.0)


def test_i_large_ell_examples():
    pc = PhysicalConstants()
    lam = grw_mapping("large-ell", pc)
    ell, a = pc.ell_universe, pc.a_grw
    T = 1e3
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RegimeWarning)
        assert i_large_ell(lam, ell, 1.0, T, a) == pytest.approx(math.pi / 2 * pc.lambda_grw * T, rel=1e-12)
        assert i_large_ell(lam, ell, 1.0, T, 0.0) == 0.0
        assert i_large_ell(lam, ell, 2.0, T, a) == pytest.approx(4 * i_large_ell(lam, ell, 1.0, T, a))
        ratio = i_large_ell_exact(lam, ell, 1.0, T, a) / i_large_ell(lam, ell, 1.0, T, a)
    assert ratio == pytest.approx(ORACLES["decoherence_large"] / (math.pi / 2))


@given(st.floats(0.01, 100), st.floats(1e-3, 1e3))
def test_dimensionless_exponents_are_scale_invariant(kappa, T):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RegimeWarning)
        a, D, V = 1.0, 2.0, 1e3
        base = i_small_ell(1.0, T, a, D, V)
        scaled = i_small_ell(kappa**-4, kappa * T, kappa * a, D / kappa**3, V * kappa**3)
        assert scaled == pytest.approx(base, rel=1e-10)
        b = i_large_ell(1.0, 1e3, 5.0, T, 0.1)
        c = i_large_ell(kappa**-4, kappa * 1e3, 5.0, kappa * T, kappa * 0.1)
        assert c == pytest.approx(b, rel=1e-10)
        lead = i_small_ell_leading(1.0, T, 1.0, 1e3, 10.0)
        assert i_small_ell_leading(kappa**-4, kappa * T, kappa, 1e3, 10.0 * kappa) == pytest.approx(lead, rel=1e-10)


def test_linearity_in_T_and_n():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RegimeWarning)
        assert i_small_ell(1, 2.0, 1, 1, 1e3) == pytest.approx(2 * i_small_ell(1, 1.0, 1, 1, 1e3))
        # linear in n at fixed cell occupation D a^3: n = D V
        assert i_small_ell(1, 1.0, 1, 1, 2e3) == pytest.approx(2 * i_small_ell(1, 1.0, 1, 1, 1e3))
        assert i_large_ell(1, 10, 1, 2.0, 0.1) == pytest.approx(2 * i_large_ell(1, 10, 1, 1.0, 0.1))


def test_mass_spread_forms():
    small = mass_spread_small_ell(2.0, 3.0)
    assert small[PAPER].value == pytest.approx(2 * math.pi * 2 * 9)
    assert small[EXACT].value == pytest.approx(math.pi / 2 * 2 * 9)
    large = mass_spread_large_ell(2.0, 5.0, 3.0)
    assert large[PAPER].value == pytest.approx(0.2 * 2 * 5 * 3)
    assert large[EXACT].value == pytest.approx(ORACLES["mass_spread_large"] * 30)
    for forms in (mass_spread_small_ell(1.0, 0.0), mass_spread_large_ell(1.0, 1.0, 0.0)):
        assert all(r.value == 0.0 for r in forms.values())
    assert energy_growth_large_ell(1.0, 2.0, 1.0)[PAPER].value == pytest.approx(3.0)


def test_mass_spread_quadrature_both_regimes():
    small = mass_spread_quadrature(1.0, 1.0, 100.0)
    assert small.value == pytest.approx(COEFFICIENTS["mass_spread_small"] * 1e4, rel=0.02)
    large = mass_spread_quadrature(1.0, 1.0, 0.01)
    assert large.value == pytest.approx(COEFFICIENTS["mass_spread_large"] * 0.01, rel=0.02)
    energy = energy_growth_quadrature(1.0, 1.0, 0.01)
    assert energy.value == pytest.approx(COEFFICIENTS["energy_growth_large"] * 1e-6, rel=0.02)
    assert mass_spread_quadrature(0.0, 1.0, 5.0).value == 0.0


def test_regime_result_validation():
    with pytest.raises(ValueError):
        RegimeResult(1.0, "medium", PAPER)
    with pytest.raises(ValueError):
        RegimeResult(1.0, "small-ell", "guess")


def test_grw_mapping():
    pc = PhysicalConstants()
    assert grw_mapping("small-ell", pc) == pytest.approx(0.1)
    assert grw_mapping("large-ell", pc) * pc.ell_universe == pytest.approx(pc.lambda_grw / pc.a_grw**2)
    same = PhysicalConstants(T_universe=pc.a_grw / pc.c)
    assert grw_mapping("large-ell", same) == pytest.approx(grw_mapping("small-ell", same))
    with pytest.raises(ValueError):
        grw_mapping("medium")


def test_physical_constants_validation():
    with pytest.raises(ValueError):
        PhysicalConstants(mu=-1.0)


def _headline(name):
    return {h.name: h for h in headline_numbers()}[name]


def test_headline_small_ell_paper_pipeline():
    h = _headline("small_ell_fractional_spread[paper-quoted]")
    assert h.value == pytest.approx(1.0666339928e-7, rel=1e-9)
    quarter = {x.name: x for x in headline_numbers(T_small=25.0)}["small_ell_fractional_spread[paper-quoted]"]
    assert quarter.value == pytest.approx(h.value / 4)


def test_headline_values_frozen():
    expected = {
        "small_ell_fractional_spread[derived-exact]": 2.666584982e-8,
        "large_ell_fractional_spread[paper-quoted]": 1.810774106e-10,
        "large_ell_fractional_spread[derived-exact]": 3.676275522e-9,
        "energy_shift[paper-quoted]": 5.106382979e-7,
        "energy_shift[derived-exact]": 9.773694115e-8,
        "energy_rms_excess[paper-quoted]": 30.98386677,
    }
    for name, value in expected.items():
        assert _headline(name).value == pytest.approx(value, rel=1e-8)


def test_headline_is_deterministic():
    assert headline_numbers() == headline_numbers()
    assert all(h.bookkeeping for h in headline_numbers())

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import cubature, quad

from rcsl.errors import BudgetExhausted, ConvergenceError
from rcsl.kernels import SmearingKernel, kernel_cutoff_sq, smear_f
from rcsl.quadrature import (Domain4, QuadResult, hyperbolic_reduce, integrate,
                             lightcone_shell_sampler)

K1 = SmearingKernel(1.0)


def test_quadresult_validation():
    with pytest.raises(ValueError):
        QuadResult(1.0, -1.0, 1, "adaptive")
    with pytest.raises(ValueError):
        QuadResult(1.0, 0.0, 0, "adaptive")
    with pytest.raises(ValueError):
        QuadResult(1.0, 0.0, 1, "simpson")
    r = QuadResult(2.0, 0.1, 5, "monte-carlo").scaled(-3.0)
    assert r.value == -6.0 and r.error_estimate == pytest.approx(0.3)


def test_domain_validation():
    with pytest.raises(ValueError):
        Domain4(T=0.0, r_max=1.0)
    with pytest.raises(ValueError):
        Domain4(T=1.0)
    with pytest.raises(ValueError):
        Domain4(T=1.0, box=((0, 1),))
    dom = Domain4.for_kernel(3.0, K1)
    assert dom.r_max == pytest.approx(math.sqrt(9.0 + kernel_cutoff_sq(K1)))


@pytest.mark.parametrize("method", ["adaptive", "monte-carlo", "stratified-mc"])
def test_constant_over_box(method):
    dom = Domain4(T=2.0, box=((0, 2), (0, 2), (0, 2)))
    r = integrate(lambda t, x: np.ones_like(t), dom, tol=1e-6, method=method, budget=20000, strict=False)
    assert r.value == pytest.approx(16.0, rel=1e-6)
    assert dom.four_volume() == 16.0


def test_gaussian_over_space():
    dom = Domain4(T=1.0, r_max=9.0)
    r = integrate(lambda t, r: np.exp(-r**2), dom, tol=1e-8)
    assert r.value == pytest.approx(math.pi**1.5, rel=1e-7)


def _kernel_integrals():
    T = 10.0
    direct = integrate(lambda t, r: smear_f(r**2 - t**2, K1), Domain4.for_kernel(T, K1), tol=1e-9)
    hyp = hyperbolic_reduce(lambda s, b: 4 * math.pi * (s * np.cosh(b)) ** 2 * smear_f(s**2, K1), T, K1, tol=1e-10)
    return direct, hyp


def test_kernel_integral_direct_equals_hyperbolic():
    direct, hyp = _kernel_integrals()
    assert direct.value == pytest.approx(333.2479176, rel=1e-8)
    assert abs(direct.value - hyp.value) <= 3 * (direct.error_estimate + hyp.error_estimate) + 1e-8 * hyp.value


def _regression_set():
    box = Domain4(T=1.0, box=((-1, 1), (-1, 1), (-1, 1)))
    return [
        (lambda t, x: np.exp(-np.sum(x**2, axis=1)) * (1 + t), box, {}),
        (lambda t, r: np.exp(-r**2) * np.cos(t), Domain4(T=1.0, r_max=8.0), {}),
        (lambda t, r: smear_f(r**2 - t**2, K1), Domain4.for_kernel(4.0, K1), {}),
        (lambda t, r: np.ones_like(t), Domain4.for_kernel(4.0, K1, shell=(0.0, 2.0)),
         {"proposal": "shell", "kernel": K1}),
    ]


@pytest.mark.parametrize("case", range(4))
def test_cross_method_agreement(case):
    f, dom, kw = _regression_set()[case]
    ad = integrate(f, dom, tol=1e-6)
    mc = integrate(f, dom, tol=1e-9, method="monte-carlo", budget=1 << 18, strict=False, seed=11, **kw)
    assert abs(ad.value - mc.value) <= 3 * (ad.error_estimate + mc.error_estimate)


def test_seed_determinism_and_threads():
    f, dom, _ = _regression_set()[0]
    a = integrate(f, dom, tol=1e-9, method="monte-carlo", budget=1 << 18, seed=5, strict=False)
    b = integrate(f, dom, tol=1e-9, method="monte-carlo", budget=1 << 18, seed=5, strict=False, threads=3)
    c = integrate(f, dom, tol=1e-9, method="monte-carlo", budget=1 << 18, seed=6, strict=False)
    assert (a.value, a.error_estimate, a.evaluations) == (b.value, b.error_estimate, b.evaluations)
    assert a.value != c.value


def test_monte_carlo_error_halves_with_four_times_samples():
    f, dom, _ = _regression_set()[1]
    spread = []
    for n in (4096, 16384):
        vals = [integrate(f, dom, tol=1e-12, method="monte-carlo", budget=n, seed=s, strict=False,
                          min_chunks=1).value for s in range(40)]
        spread.append(np.std(vals, ddof=1))
    assert 1.4 <= spread[0] / spread[1] <= 2.8


def test_error_estimate_is_one_sigma():
    f, dom, _ = _regression_set()[1]
    exact = math.pi**1.5 * math.sin(1.0)
    z = []
    for s in range(30):
        r = integrate(f, dom, tol=1e-12, method="monte-carlo", budget=8192, seed=100 + s, strict=False)
        z.append((r.value - exact) / r.error_estimate)
    assert 0.6 < np.std(z) < 1.5


def test_nonconvergence_carries_partial():
    f, dom, _ = _regression_set()[0]
    with pytest.raises(BudgetExhausted) as exc:
        integrate(f, dom, tol=1e-9, method="monte-carlo", budget=5000)
    assert isinstance(exc.value, ConvergenceError)
    assert exc.value.partial.evaluations == 5000
    with pytest.raises(ConvergenceError) as exc:
        integrate(lambda t, r: smear_f(r**2 - t**2, K1), Domain4.for_kernel(50.0, K1), tol=1e-14, budget=2000)
    assert exc.value.partial.value > 0


def test_early_stop_meets_tolerance():
    f, dom, _ = _regression_set()[1]
    r = integrate(f, dom, tol=1e-2, method="monte-carlo", budget=1 << 22, seed=1)
    assert r.relative_error <= 1e-2 and r.evaluations < 1 << 22 and r.meta["converged"]


def test_hyperbolic_constant_beta_limit():
    B = 1.3
    r = hyperbolic_reduce(lambda s, b: np.cosh(b) ** 2 * np.exp(-s) / s, 1.0, K1, beta_max=B, s_max=60.0, tol=1e-11)
    assert r.value == pytest.approx(B / 2 + math.sinh(2 * B) / 4, rel=1e-9)


def test_hyperbolic_zero_time():
    assert hyperbolic_reduce(lambda s, b: np.ones_like(s), 0.0, K1).value == 0.0


def test_hyperbolic_mass_spread_integrand_small_time():
    T = 0.01
    g = lambda s, b: 16 * math.pi * s**4 * (1 - s**2) ** 2 * np.exp(-2 * s**2) * np.cosh(b) ** 2
    m = quad(lambda u: u**4 * (1 - u**2) ** 2 * np.exp(-2 * u**2), 0, np.inf, epsabs=0, epsrel=1e-12)[0]
    r = hyperbolic_reduce(g, T, K1, tol=1e-9)
    assert r.value == pytest.approx(16 * math.pi * m * T, rel=0.02)


def test_hyperbolic_jacobian_against_direct():
    T = 1.5

    def direct_integrand(p):
        # r = t + rho covers the exterior of the cone
        t, rho = p[:, 0], p[:, 1]
        r = t + rho
        return np.exp(-(r * r - t * t)) * (1 + t * r)
    direct = cubature(direct_integrand, [0.0, 0.0], [T, 12.0], rtol=1e-8).estimate

    def g(s, b):
        t, r = s * np.sinh(b), s * np.cosh(b)
        return np.exp(-s**2) * (1 + t * r)
    r = hyperbolic_reduce(g, T, K1, s_max=8.0, tol=1e-7)
    assert r.value == pytest.approx(direct, rel=5e-3)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.2, 8.0), st.integers(0, 2**31 - 1))
def test_shell_samples_are_space_like(T, seed):
    dom = Domain4.for_kernel(T, K1)
    for chunk in lightcone_shell_sampler(dom, K1, seed, n=5000):
        s2 = np.sum(chunk.x**2, axis=1) - chunk.t**2
        assert np.all(s2 > 0)
        assert np.all(chunk.weight > 0)


def test_shell_sampler_unbiased_for_kernel_integrand():
    T = 3.0
    dom = Domain4.for_kernel(T, K1)
    ref = integrate(lambda t, r: smear_f(r**2 - t**2, K1), dom, tol=1e-9)
    est = []
    for c in lightcone_shell_sampler(dom, K1, 7, n=100_000):
        est.append(smear_f(np.sum(c.x**2, axis=1) - c.t**2, K1) * c.weight)
    est = np.concatenate(est)
    ratio = est / ref.value
    # importance weights normalized by the target integral average to 1
    assert abs(ratio.mean() - 1.0) <= 3 * ratio.std(ddof=1) / math.sqrt(ratio.size)


def test_shell_sampler_one_dimension_mixture():
    k = SmearingKernel(1.0, spatial_dim=1)
    T = 2.0
    dom = Domain4(T=T, spatial_dim=1, r_max=40.0)
    centers = [[0.0, -3.0], [0.0, 3.0]]
    est = []
    for c in lightcone_shell_sampler(dom, k, 3, n=200_000, centers=centers):
        f = smear_f((c.x[:, 0] + 3) ** 2 - c.t**2, k) + smear_f((c.x[:, 0] - 3) ** 2 - c.t**2, k)
        est.append(f * c.weight)
    est = np.concatenate(est)
    # one shell: int dx f(x^2 - t^2) = int_0^inf f(u) / sqrt(u + t^2) du
    one = quad(lambda t: quad(lambda u: smear_f(u, k) / math.sqrt(u + t * t), 0, np.inf, epsrel=1e-12)[0],
               0, T, epsrel=1e-11)[0]
    assert abs(est.mean() - 2 * one) <= 3 * est.std(ddof=1) / math.sqrt(est.size)

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from rcsl.errors import ConvergenceError
from rcsl.kernels import (ClumpSpec, EventConfig, SmearingKernel, clump_lattice, clump_profile,
                          interval_sq, kernel_antiderivative, kernel_cutoff_sq, mean_time,
                          ntilde_eigenvalue, shell_norm, shell_overlap, smear_f, smear_f_grad_sq,
                          smear_f_prime, smear_f_timederiv_sq)

K1 = SmearingKernel(1.0)
finite = st.floats(-50, 50, allow_nan=False)


def test_kernel_validation():
    with pytest.raises(ValueError):
        SmearingKernel(0.0)
    with pytest.raises(ValueError):
        SmearingKernel(1.0, spatial_dim=2)


@pytest.mark.parametrize("ell", [0.3, 1.0, 7.0])
def test_smear_f_values(ell):
    k = SmearingKernel(ell)
    assert smear_f(-1.0, k) == 0.0
    assert smear_f(0.0, k) == 0.0
    assert smear_f(ell**2, k) == pytest.approx(math.exp(-1), rel=1e-15)


@given(st.floats(-1e3, 1e3, allow_nan=False), st.floats(0.1, 10))
def test_smear_f_support(x_sq, ell):
    v = smear_f(x_sq, SmearingKernel(ell))
    assert v == 0.0 if x_sq <= 0 else v > 0 or x_sq / ell**2 > 700


def test_smear_f_maximum_at_ell_sq():
    u = np.linspace(0.0, 10.0, 100001)
    vals = smear_f(u, K1)
    assert u[np.argmax(vals)] == pytest.approx(1.0, abs=1e-4)
    assert vals.max() <= math.exp(-1)


def test_smear_f_continuous_at_cone():
    assert smear_f(1e-12, K1) == pytest.approx(1e-12, rel=1e-9)
    assert smear_f(-1e-12, K1) == 0.0


def test_smear_f_prime_values():
    assert smear_f_prime(1.0, K1) == 0.0
    assert smear_f_prime(0.0, SmearingKernel(2.0)) == pytest.approx(0.25)
    assert smear_f_prime(2.0, K1) == pytest.approx(-math.exp(-2), rel=1e-14)
    with pytest.raises(ValueError):
        smear_f_prime(-0.5, K1)


@given(st.floats(0.01, 20))
def test_derivative_consistency(u):
    h = 1e-6
    fd = (smear_f(u + h, K1) - smear_f(u - h, K1)) / (2 * h)
    exact = smear_f_prime(u, K1)
    assert abs(fd - exact) <= 1e-6 * max(abs(exact), 1e-3)


def test_time_and_gradient_squares():
    inside = np.array([2.0, 0.5, 0.0, 0.0])
    assert smear_f_timederiv_sq(inside, K1) == 0.0
    assert smear_f_grad_sq(inside, K1) == 0.0
    x = np.array([0.0, 1.3, -0.2, 0.4])
    assert smear_f_timederiv_sq(x, K1) == 0.0
    on_peak = np.array([1.0, math.sqrt(2.0), 0.0, 0.0])
    assert smear_f_timederiv_sq(on_peak, K1) == pytest.approx(0.0, abs=1e-30)
    assert smear_f_grad_sq(on_peak, K1) == pytest.approx(0.0, abs=1e-30)
    y = np.array([0.7, 1.5, 0.3, 0.0])
    fp = smear_f_prime(interval_sq(y), K1)
    assert smear_f_timederiv_sq(y, K1) == pytest.approx(4 * 0.49 * fp**2)
    assert smear_f_grad_sq(y, K1) == pytest.approx(4 * (2.25 + 0.09) * fp**2)


def test_cutoff_and_antiderivative():
    u = kernel_cutoff_sq(K1, 1e-12)
    assert smear_f(u, K1) == pytest.approx(1e-12 * math.exp(-1), rel=1e-9)
    k = SmearingKernel(1.7)
    for x in (0.3, 2.0, 11.0):
        assert kernel_antiderivative(x, k) == pytest.approx(quad(lambda v: smear_f(v, k), 0, x)[0], rel=1e-12)
    assert kernel_antiderivative(1e6, k) == pytest.approx(1.7**2)


def test_ntilde_eigenvalue_examples():
    vac = EventConfig.vacuum(3)
    assert ntilde_eigenvalue(np.array([0.3, 1, 2, 3]), vac, K1) == 0.0
    one = EventConfig(np.zeros((1, 4)))
    x = np.array([0.5, math.sqrt(1.25), 0.0, 0.0])
    assert ntilde_eigenvalue(x, one, K1) == pytest.approx(math.exp(-1))
    two = EventConfig(np.zeros((2, 4)))
    assert ntilde_eigenvalue(x, two, K1) == pytest.approx(2 * math.exp(-1))


@settings(max_examples=40)
@given(st.lists(st.tuples(finite, finite, finite, finite), min_size=1, max_size=5),
       st.tuples(finite, finite, finite, finite), st.tuples(finite, finite, finite, finite))
def test_ntilde_translation_invariance(events, x, shift):
    ev = np.array(events)
    s = np.array(shift)
    a = ntilde_eigenvalue(np.array(x), EventConfig(ev), K1)
    b = ntilde_eigenvalue(np.array(x) + s, EventConfig(ev + s), K1)
    assert b == pytest.approx(a, rel=1e-7, abs=1e-12)


def test_mean_time():
    assert mean_time(EventConfig(np.zeros((1, 4)))) == 0.0
    assert mean_time(EventConfig(np.array([[1.0, 0, 0, 0], [3.0, 1, 0, 0]]))) == 2.0
    assert mean_time(EventConfig(np.array([[4.5, i, 0, 0] for i in range(5)]))) == 4.5
    with pytest.raises(ValueError):
        mean_time(EventConfig.vacuum(3))


def test_clump_spec_validation():
    with pytest.raises(ValueError):
        ClumpSpec(0.5, 1.0)
    with pytest.raises(ValueError):
        ClumpSpec(8, 2.0, density=2.0)
    c = ClumpSpec(8, 2.0, 3.0)
    assert c.density == 1.0 and c.distance == 3.0


def test_clump_profile_time_like_is_zero():
    clump = ClumpSpec(10, 0.5)
    assert clump_profile(np.array([5.0, 0.1, 0.0, 0.0]), clump, [0, 0, 0], K1) == 0.0


def test_clump_profile_point_limit():
    clump = ClumpSpec(1, 1e-4)
    x = np.array([0.3, 1.1, 0.2, 0.0])
    assert clump_profile(x, clump, [0, 0, 0], K1) == pytest.approx(smear_f(interval_sq(x), K1), rel=1e-6)


def test_clump_profile_matches_lattice_sum():
    clump = ClumpSpec(1000, 0.1)
    x = np.array([0.0, 1.0, 0.0, 0.0])
    lattice = clump_lattice(clump, [0, 0, 0])
    direct = ntilde_eigenvalue(x, lattice, K1)
    assert clump_profile(x, clump, [0, 0, 0], K1) == pytest.approx(direct, rel=5e-3)


def test_lattice_sum_converges_to_profile():
    clump = ClumpSpec(1, 1.0)
    x = np.array([0.2, 1.4, 0.3, 0.1])
    target = clump_profile(x, clump, [0, 0, 0], K1, tol=1e-10)
    errs = []
    for m in (2, 4, 8, 16):
        lat = clump_lattice(ClumpSpec(m**3, 1.0), [0, 0, 0])
        errs.append(abs(ntilde_eigenvalue(x, lat, K1) / m**3 - target))
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_clump_profile_reports_nonconvergence():
    clump = ClumpSpec(1000, 50.0)
    with pytest.raises(ConvergenceError) as exc:
        clump_profile(np.array([0.0, 0.0, 0.0, 0.0]), clump, [0, 0, 0], K1, tol=1e-14, max_nodes=16)
    assert exc.value.partial is not None


def _overlap_direct_3d(rho, ta, tb, k):
    # nested quad over (r, cos theta), with the angular range split where the second shell has its edge
    cut = kernel_cutoff_sq(k, 1e-14)
    rmax = math.sqrt(ta**2 + cut)

    def inner(r):
        if rho == 0.0:
            return 4 * math.pi * r * r * smear_f(r * r - ta**2, k) * smear_f(r * r - tb**2, k)
        edge = (r * r + rho * rho - tb**2) / (2 * r * rho)
        pts = [-1.0] + ([edge] if -1 < edge < 1 else []) + [1.0]

        def g(c):
            return smear_f(r * r + rho * rho - 2 * r * rho * c - tb**2, k)
        ang = sum(quad(g, a, b, epsabs=0, epsrel=1e-13)[0] for a, b in zip(pts, pts[1:]))
        return 2 * math.pi * r * r * smear_f(r * r - ta**2, k) * ang
    brk = sorted(p for p in (abs(rho - tb), rho + tb, math.sqrt(ta**2 + tb**2)) if ta < p < rmax)
    return quad(inner, ta, rmax, points=brk or None, limit=400, epsabs=0, epsrel=1e-12)[0]


@pytest.mark.parametrize("rho,ta,tb", [(0.0, 0.0, 0.0), (0.7, 0.3, 1.2), (3.0, 2.0, 2.0), (5.0, 0.5, 4.0)])
def test_shell_overlap_against_direct(rho, ta, tb):
    assert shell_overlap(rho, ta, tb, K1) == pytest.approx(_overlap_direct_3d(rho, ta, tb, K1), rel=1e-8, abs=1e-13)


def test_shell_overlap_symmetric_and_norm():
    a = shell_overlap(1.3, 0.4, 2.2, K1)
    b = shell_overlap(1.3, 2.2, 0.4, K1)
    assert a == pytest.approx(b, rel=1e-10)
    assert shell_norm(0.8, K1) == pytest.approx(shell_overlap(0.0, 0.8, 0.8, K1))


def test_shell_overlap_large_time_form():
    # two wide shells at offset z overlap in pi l^4 / (2 z)
    z, t = 10.0, 400.0
    assert shell_overlap(z, t, t, K1) == pytest.approx(math.pi / (2 * z), rel=0.02)


def test_shell_overlap_1d_against_direct():
    k = SmearingKernel(1.0, spatial_dim=1)
    rho, ta, tb = 0.9, 0.4, 1.1

    def g(x):
        return smear_f(x * x - ta**2, k) * smear_f((x - rho) ** 2 - tb**2, k)
    pts = [-ta, ta, rho - tb, rho + tb]
    ref = quad(g, -12, 12, points=sorted(pts), limit=400, epsabs=1e-14)[0]
    assert shell_overlap(rho, ta, tb, k) == pytest.approx(ref, rel=1e-8)

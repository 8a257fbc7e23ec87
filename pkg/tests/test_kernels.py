import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nonlocal_homog.kernels import (PLAIN, SLOWLY_VARYING, HypothesisViolation, JumpKernel, KernelError,
                                    ValidationBudget, constant_angular, cos2_angular, make_builtin_kernel,
                                    mass_outside_box, normalize, oscillation_phi, oscillation_profile,
                                    rescaled_density, tail_mass, total_mass, validate_kernel,
                                    with_irregular_core)


def pareto_mass_closed(alpha, r0=1.0, c=1.0):
    # plateau c r0^{-1-alpha} on [-r0, r0] plus two power-law tails
    return 2 * c * r0 ** (-alpha) + 2 * c * r0 ** (-alpha) / alpha


def test_pareto_unit_tail_mass_two_ways():
    k = make_builtin_kernel("pareto", 1, 1.0, normalize_mass=False)
    mass, _ = total_mass(k)
    assert mass == pytest.approx(pareto_mass_closed(1.0), rel=1e-10)
    # mpmath oracle for the same integral
    ref = 2 * (mpmath.quad(lambda r: 1, [0, 1]) + mpmath.quad(lambda r: r ** -2, [1, mpmath.inf]))
    assert mass == pytest.approx(float(ref), rel=1e-10)


def test_pareto_normalized_constant():
    k = make_builtin_kernel("pareto", 1, 1.0)
    assert k.beta1 == pytest.approx(1 / (2 * (1 + 1)), rel=1e-12)
    assert float(k(np.array([3.0]))[0]) * 9 == pytest.approx(0.25, rel=1e-12)
    assert total_mass(k)[0] == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("family,dim,alpha", [
    ("pareto", 1, 0.5), ("pareto", 2, 1.5), ("anisotropic-pareto", 2, 1.0),
    ("log-perturbed", 1, 1.0), ("oscillation-violator", 1, 0.5)])
def test_builtins_normalized(family, dim, alpha):
    k = make_builtin_kernel(family, dim, alpha)
    tol = 1e-10 if dim == 1 else 1e-7
    assert abs(total_mass(k)[0] - 1.0) <= tol


def test_normalize_idempotent_and_scale_invariant():
    k = make_builtin_kernel("pareto", 1, 0.7)
    k2 = normalize(k)
    z = np.linspace(-30, 30, 101)
    assert np.allclose(k2(z), k(z), rtol=1e-12)
    k7 = normalize(k.scaled(7.0))
    assert np.allclose(k7(z), k(z), rtol=1e-12)
    assert k7.beta1 == pytest.approx(k.beta1, rel=1e-12)


def test_builtin_errors():
    with pytest.raises(KernelError):
        make_builtin_kernel("gaussian", 1, 1.0)
    with pytest.raises(KernelError):
        make_builtin_kernel("anisotropic-pareto", 1, 1.0)
    with pytest.raises(KernelError):
        make_builtin_kernel("pareto", 1, 1.0, {"r0": 0.0})
    with pytest.raises(KernelError):
        make_builtin_kernel("pareto", 1, 2.0)


@pytest.mark.parametrize("family,dim", [("pareto", 1), ("pareto", 2), ("anisotropic-pareto", 2),
                                        ("log-perturbed", 2), ("oscillation-violator", 2)])
def test_exact_evenness(family, dim):
    k = make_builtin_kernel(family, dim, 1.2)
    z = np.random.default_rng(1).standard_normal((500, dim)) * 20
    assert np.array_equal(k(z), k(-z))
    assert np.all(k(z) >= 0)


def test_pareto_tail_mass_exact():
    k = make_builtin_kernel("pareto", 1, 1.0)
    tm = tail_mass(k, 100.0, (1,))
    assert tm.mass == pytest.approx(k.beta1 / 100.0, rel=1e-12)
    for n in (1.0, 7.5, 1e3, 1e6):
        assert tail_mass(k, n).ratio == pytest.approx(1.0, rel=1e-10)


def test_tail_mass_complementary():
    k = make_builtin_kernel("pareto", 1, 0.8)
    inner = 2 * float(k(np.array([0.5]))[0]) * k.M
    assert tail_mass(k, k.M).mass == pytest.approx(1.0 - inner, abs=1e-9)


def test_tail_mass_2d_sector():
    k = make_builtin_kernel("anisotropic-pareto", 2, 1.0, {"b": 0.3})
    tm = tail_mass(k, 50.0, (0.0, math.pi / 3))
    assert tm.ratio == pytest.approx(1.0, rel=1e-8)


def test_log_perturbed_tail_ratio():
    k = make_builtin_kernel("log-perturbed", 1, 1.5)
    assert 0.9 <= tail_mass(k, 1e4).ratio <= 1.1


@settings(max_examples=20, deadline=None)
@given(st.floats(1.0, 1e5), st.floats(1.01, 10.0))
def test_tail_mass_nonincreasing(n, factor):
    k = make_builtin_kernel("oscillation-violator", 1, 0.9)
    a, b = tail_mass(k, n).mass, tail_mass(k, n * factor).mass
    assert b <= a * (1 + 1e-12) and a <= 1.0


def test_mass_outside_box_2d_vs_ball():
    k = make_builtin_kernel("pareto", 2, 1.0)
    ball = tail_mass(k, 20.0).mass
    box = mass_outside_box(k, 20.0)
    assert box < ball
    assert box > tail_mass(k, 20.0 * math.sqrt(2)).mass


def test_rescaled_density():
    k = make_builtin_kernel("pareto", 1, 0.5)
    z = np.linspace(-5, 5, 11)
    assert np.array_equal(rescaled_density(k, 1.0, z), k(z))
    for eps in (0.5, 0.1, 0.01):
        zz = np.array([2.0, 3.0])
        assert np.allclose(rescaled_density(k, eps, zz), k.beta1 * zz ** -1.5, rtol=1e-13)
    lk = make_builtin_kernel("log-perturbed", 1, 1.0)
    val = float(rescaled_density(lk, 1e-2, np.array([1.0]))[0])
    ref = float(lk(np.array([100.0]))[0]) * 100.0 ** 2 / math.log(math.e + 100.0)
    assert val == pytest.approx(ref, rel=1e-13)


@pytest.mark.parametrize("eps", [1.0, 0.25, 0.05])
def test_rescaled_density_integral(eps):
    k = make_builtin_kernel("pareto", 1, 0.6)
    from scipy import integrate

    f = lambda x: float(rescaled_density(k, eps, np.array([x]))[0])
    near, _ = integrate.quad(f, 0, eps, epsrel=1e-12)
    far = k.beta1 * eps ** -0.6 / 0.6 * 1.0  # tail of the exact power law beyond eps
    assert 2 * (near + far) == pytest.approx(eps ** -0.6, rel=1e-8)


def test_oscillation_phi_power_law():
    k = make_builtin_kernel("pareto", 1, 1.0)
    K, r = 2.0, 100.0
    phi = oscillation_phi(k, K, r)
    exact = (1 - K / r) ** -2 - 1
    assert phi == pytest.approx(exact, rel=0.05)
    assert phi <= 2 * 2 * K / r


def test_oscillation_phi_halving():
    k = make_builtin_kernel("pareto", 1, 1.0)
    prof = oscillation_profile(k, 2.0)
    vals = [prof.phi(r) for r in (50, 100, 200, 400, 800)]
    for a, b in zip(vals, vals[1:]):
        assert b / a == pytest.approx(0.5, rel=0.2)


def test_oscillation_monotone_in_r_and_K():
    k = make_builtin_kernel("anisotropic-pareto", 2, 1.0)
    b = ValidationBudget(R_max=1e3, per_decade=20)
    p1 = oscillation_profile(k, 1.0, b)
    p2 = oscillation_profile(k, 2.0, b)
    rs = [1, 3, 10, 30, 100]
    v1 = [p1.phi(r) for r in rs]
    assert all(x >= y for x, y in zip(v1, v1[1:]))
    assert all(p2.phi(r) >= p1.phi(r) for r in rs)


def test_violator_phi_stays_large():
    k = make_builtin_kernel("oscillation-violator", 1, 0.5)
    prof = oscillation_profile(k, 2.0)
    for r in np.geomspace(1, 5e3, 12):
        assert prof.phi(r) >= 0.3


def test_oscillation_zero_density_is_violation():
    ang = constant_angular(1)
    k = JumpKernel(1, 1.0, lambda z: np.where(np.abs(z[..., 0]) < 50, 1.0, 0.0), 1.0, 1.0, 1.0, ang)
    with pytest.raises(HypothesisViolation):
        oscillation_phi(k, 2.0, 10.0)


def test_validate_pareto_and_violator():
    assert validate_kernel(make_builtin_kernel("pareto", 1, 1.0)).passed
    rep = validate_kernel(make_builtin_kernel("oscillation-violator", 1, 0.5))
    assert rep.failed == ["oscillation-decay"]
    tb = rep.verdict("tail-bounds").details
    assert tb["inf_scaled"] >= tb["beta1"] * (1 - 1e-9) and tb["sup_scaled"] <= tb["beta2"] * (1 + 1e-9)
    assert rep.verdict("tail-bounds").details["beta2"] == pytest.approx(3 * rep.verdict("tail-bounds").details["beta1"])


def test_validate_log_perturbed_modes():
    k = make_builtin_kernel("log-perturbed", 1, 1.5)
    assert "tail-asymptotics" in validate_kernel(k, mode=PLAIN).failed
    assert validate_kernel(k, mode=SLOWLY_VARYING).passed


def test_report_json_roundtrip():
    import json

    rep = validate_kernel(make_builtin_kernel("pareto", 1, 1.0))
    d = json.loads(rep.to_json())
    assert d["passed"] is True
    assert [v["name"] for v in d["verdicts"]][:3] == ["symmetry", "normalization", "tail-bounds"]
    for v in d["verdicts"]:
        assert v["samples"]


def test_irregular_core_keeps_hypotheses():
    k = with_irregular_core(make_builtin_kernel("pareto", 1, 1.0), amplitude=0.5, seed=3)
    z = np.linspace(-0.99, 0.99, 77)
    assert np.array_equal(k(z), k(-z))
    assert abs(total_mass(k)[0] - 1.0) <= 1e-10
    assert validate_kernel(k).passed


def test_angular_density_checks():
    a = cos2_angular(0.4, 2.0)
    chk = a.check()
    assert chk["symmetry"] == 0 and chk["bounds_ok"] and chk["continuous"]
    assert a.integral() == pytest.approx(4 * math.pi, rel=1e-12)
    with pytest.raises(KernelError):
        cos2_angular(1.0)

"""Acceptance suite: one test per criterion, each logging a PASS/FAIL line."""

import functools
import math
import os
import time
import warnings
from fractions import Fraction
from pathlib import Path

import mpmath
import numpy as np
import pytest

from nonlocal_homog.cli import load_config
from nonlocal_homog.coefficients import make_builtin_coefficient
from nonlocal_homog.discretization import (DiscreteField, TorusGrid, apply_operator, assemble_stencil,
                                           constant_field, energy_form, grid_for)
from nonlocal_homog.harness import (StudyConfig, default_probe_psi, run_study, weak_convergence_probe,
                                    write_outputs)
from nonlocal_homog.kernels import (PLAIN, SLOWLY_VARYING, constant_angular, cos2_angular, make_builtin_kernel,
                                    validate_kernel)
from nonlocal_homog.solvers import (discrete_symbol, effective_symbol, init_symbol, solve_effective, solve_epsilon,
                                    symbol_by_quadrature)

BASELINE = Path(__file__).resolve().parent.parent / "configs" / "baseline.toml"
ALPHAS = (0.5, 1.5)


def baseline_cfg(**overrides):
    return StudyConfig.from_dict(load_config(BASELINE), **overrides)


def timed_study(cfg):
    t0 = time.perf_counter()
    rep = run_study(cfg)
    return rep, time.perf_counter() - t0


@pytest.fixture(scope="module")
def studies():
    out = {}
    for a in ALPHAS:
        out[("osc", a)] = timed_study(baseline_cfg(alpha=a))
        out[("const", a)] = timed_study(baseline_cfg(alpha=a, coefficient={"family": "constant"}))
        out[("osc-T16", a)] = timed_study(baseline_cfg(alpha=a, T=16.0))
    return out


# --- oracles ---------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def mp_c_alpha(alpha):
    """int_0^inf (1 - cos t) t^{-1-alpha} dt: cosine series on [0, 1], oscillatory tail beyond."""
    with mpmath.workdps(40):
        a = mpmath.mpf(alpha)
        near = mpmath.nsum(lambda k: (-1) ** (k + 1) / (mpmath.factorial(2 * k) * (2 * k - a)), [1, mpmath.inf])
        osc = mpmath.quadosc(lambda t: mpmath.cos(t) * t ** (-1 - a), [1, mpmath.inf], omega=1)
        return near + 1 / a - osc


def mp_symbol_2d(xi, alpha, lam_bar, angular):
    """lam_bar |xi|^alpha c_alpha int_0^{2pi} k(theta) |cos(theta - phi)|^alpha dtheta, split at the kinks."""
    r = math.hypot(*xi)
    phi = math.atan2(xi[1], xi[0])
    k = lambda th: float(angular(np.array([[math.cos(th), math.sin(th)]]))[0])
    f = lambda th: k(float(th)) * abs(math.cos(float(th) - phi)) ** alpha
    cuts = sorted({(phi + s * math.pi / 2) % (2 * math.pi) for s in (-1, 1, 3)} | {0.0, 2 * math.pi})
    ang = mpmath.quad(f, cuts)
    return float(lam_bar * r ** alpha * mp_c_alpha(alpha) * ang)


# --- criteria --------------------------------------------------------------

def test_criterion_1_a_priori_bounds(studies, acceptance_log):
    worst_c1 = worst_c2 = 0.0
    ok = True
    slowest = 0.0
    for a in ALPHAS:
        rep, secs = studies[("osc", a)]
        slowest = max(slowest, secs)
        for r in rep.records:
            ok &= r["converged"]
            worst_c1, worst_c2 = max(worst_c1, r["c1_ratio"]), max(worst_c2, r["c2_ratio"])
    ok &= worst_c1 <= 1 + 1e-6 and worst_c2 <= 1 + 1e-6 and slowest <= 120
    acceptance_log(1, ok, f"max m|u|/|f| = {worst_c1:.4f}, max m E/|f|^2 = {worst_c2:.4f}, "
                          f"slowest study {slowest:.2f}s")
    assert ok


def test_criterion_2_operator_algebra(acceptance_log):
    k = make_builtin_kernel("pareto", 1, 0.5)
    c = make_builtin_coefficient("separable-trig", 1, {"a": 0.5})
    g = grid_for(1, 8, Fraction(1, 4), 8)
    st = assemble_stencil(g, k, c, Fraction(1, 4))
    rng = np.random.default_rng(2024)
    sa = nsd = en = 0.0
    for _ in range(20):
        u = DiscreteField(g, rng.standard_normal(g.shape))
        v = DiscreteField(g, rng.standard_normal(g.shape))
        Lu, Lv = apply_operator(st, u), apply_operator(st, v)
        scale = Lu.norm() * v.norm()
        sa = max(sa, abs(Lu.inner(v) - u.inner(Lv)) / scale)
        nsd = max(nsd, Lu.inner(u) / (Lu.norm() * u.norm()))
        E = energy_form(st, u)
        en = max(en, abs(E + Lu.inner(u)) / abs(Lu.inner(u)))
    ones = constant_field(g, 1.0)
    const = float(np.max(np.abs(apply_operator(st, ones).values)) / np.max(st.rowsum()))
    ok = sa <= 1e-12 and nsd <= 1e-12 and const <= 1e-12 and en <= 1e-12
    acceptance_log(2, ok, f"self-adjoint {sa:.1e}, max <Lu,u> {nsd:.1e}, constants {const:.1e}, "
                          f"energy {en:.1e}")
    assert ok


def test_criterion_3_symbol_oracle(acceptance_log):
    rng = np.random.default_rng(7)
    worst = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for alpha in (0.1, 0.5, 1.0, 1.5, 1.9):
            tol = 1e-4 if alpha in (0.1, 1.9) else 1e-6
            k = cos2_angular(0.4, 0.25)
            sym = init_symbol(alpha, 1.3, k)
            errs = []
            for xi in rng.uniform(-6, 6, (10, 2)):
                s = float(effective_symbol(xi, sym))
                errs.append(abs(s / mp_symbol_2d(xi, alpha, 1.3, k) - 1))
                errs.append(abs(s / symbol_by_quadrature(xi, alpha, 1.3, k) - 1))
            worst[alpha] = (max(errs), tol)
        sym1 = init_symbol(1.0, 1.0, constant_angular(1, 1.0))
    pi_dev = max(abs(float(effective_symbol(x, sym1)) / x - math.pi) for x in rng.uniform(0.1, 20, 10))
    ok = all(e <= t for e, t in worst.values()) and pi_dev <= 1e-8
    detail = ", ".join(f"alpha={a}: {e:.1e}" for a, (e, _) in worst.items())
    acceptance_log(3, ok, f"{detail}; |sigma/|xi| - pi| = {pi_dev:.1e}")
    assert ok


def test_criterion_4_spectral_exactness(acceptance_log):
    sym = init_symbol(0.8, 1.0, constant_angular(1, 0.5))
    g = TorusGrid(1, 8.0, 256)
    xi = 2 * math.pi * 5 / 8
    f = DiscreteField(g, np.cos(xi * g.axis()))
    u = solve_effective(g, 1.0, f, sym)
    eff = float(np.max(np.abs(u.values - f.values / (1.0 + float(effective_symbol(xi, sym))))))

    k = make_builtin_kernel("pareto", 1, 0.8)
    st = assemble_stencil(grid_for(1, 8, Fraction(1, 4), 8), k, make_builtin_coefficient("constant", 1),
                          Fraction(1, 4))
    g2 = st.grid
    f2 = DiscreteField(g2, np.cos(xi * g2.axis()))
    res = solve_epsilon(st, 1.0, f2, tol=1e-12)
    exact = f2.values / (1.0 + discrete_symbol(st, xi))
    cg = (res.u - DiscreteField(g2, exact)).norm() / f2.norm()
    ok = eff <= 1e-14 and cg <= 1e-11 and res.converged
    acceptance_log(4, ok, f"effective max error {eff:.1e}, eps-solve relative error {cg:.1e} (tol 1e-12)")
    assert ok


def test_criterion_5_convergence(studies, acceptance_log):
    ok = True
    parts = []
    for a in ALPHAS:
        errs = studies[("osc", a)][0].errors
        e16 = studies[("osc-T16", a)][0].errors[-1]
        change = abs(e16 - errs[-1]) / errs[-1]
        ok &= all(b < x for x, b in zip(errs, errs[1:])) and errs[-1] <= 0.05 and change <= 0.2
        parts.append(f"alpha={a}: errors {', '.join(f'{e:.4f}' for e in errs)}; T=16 final {e16:.4f} "
                     f"({100 * change:.0f}% change)")
    acceptance_log(5, ok, "; ".join(parts))
    assert ok


def test_criterion_6_mean_invariance(studies, acceptance_log):
    ok = True
    parts = []
    for a in ALPHAS:
        osc, const = studies[("osc", a)][0], studies[("const", a)][0]
        same = np.array_equal(osc.effective_solution.values, const.effective_solution.values)
        last = str(osc.config["eps"][-1])
        uo, uc = osc.solutions[last], const.solutions[last]
        gap = (uo - uc).norm() / osc.effective_solution.subsample(uo.grid).norm()
        ok &= same and gap <= 0.05
        parts.append(f"alpha={a}: effective bit-identical={same}, final gap {gap:.4f}")
    acceptance_log(6, ok, "; ".join(parts))
    assert ok


def test_criterion_7_validator_discrimination(acceptance_log):
    good = [validate_kernel(make_builtin_kernel("pareto", 1, 0.5)),
            validate_kernel(make_builtin_kernel("pareto", 2, 1.5)),
            validate_kernel(make_builtin_kernel("anisotropic-pareto", 2, 1.0))]
    vio = validate_kernel(make_builtin_kernel("oscillation-violator", 1, 0.5))
    phi_min = vio.verdict("oscillation-decay").details["min_phi"]
    lp = make_builtin_kernel("log-perturbed", 1, 1.5)
    plain, sv = validate_kernel(lp, mode=PLAIN), validate_kernel(lp, mode=SLOWLY_VARYING)
    ok = (all(r.passed for r in good) and vio.failed == ["oscillation-decay"] and phi_min >= 0.3
          and "tail-asymptotics" in plain.failed and sv.passed)
    acceptance_log(7, ok, f"regular kernels pass={all(r.passed for r in good)}, violator fails {vio.failed} "
                          f"with min phi {phi_min:.3f}, log-perturbed plain fails {plain.failed}, "
                          f"slowly-varying pass={sv.passed}")
    assert ok


def test_criterion_8_probes(studies, acceptance_log):
    eps = ["1/2", "1/4", "1/8", "1/16"]
    psi, delta = default_probe_psi(1)
    k = make_builtin_kernel("pareto", 1, 0.5)
    osc = weak_convergence_probe(k, make_builtin_coefficient("separable-trig", 1, {"a": 0.5}), eps, psi, delta)
    const = weak_convergence_probe(k, make_builtin_coefficient("constant", 1), eps, psi, delta)
    dev = osc.deviations
    mono = all(b <= a for a, b in zip(dev, dev[1:]))
    const_dev = max(const.deviations)
    escape_ok = True
    sups = []
    for a in ALPHAS:
        recs = studies[("osc", a)][0].records
        sup = [max(r["mass_escape"][i]["value"] for r in recs) for i in range(2)]
        sups.append(sup)
        escape_ok &= sup[1] <= sup[0]
    ok = mono and const_dev <= 1e-3 and escape_ok
    acceptance_log(8, ok, f"oscillating deviations {', '.join(f'{d:.2e}' for d in dev)}; constant max deviation "
                          f"{const_dev:.1e}; mass escape sup (T/8, T/4) "
                          + ", ".join(f"({s[0]:.3e}, {s[1]:.3e})" for s in sups))
    assert ok


def test_criterion_9_determinism(tmp_path, acceptance_log):
    outs = []
    for name in ("a", "b"):
        rep = run_study(baseline_cfg())
        write_outputs(rep, tmp_path / name, plot=False)
        outs.append((rep.to_json(include_timing=False), tmp_path / name))
    same_json = outs[0][0] == outs[1][0]
    bins = sorted(p for p in os.listdir(outs[0][1]) if p.endswith(".bin"))
    same_bins = bool(bins) and all((outs[0][1] / p).read_bytes() == (outs[1][1] / p).read_bytes() for p in bins)
    ok = same_json and same_bins
    acceptance_log(9, ok, f"JSON identical={same_json}, {len(bins)} solution payloads identical={same_bins}")
    assert ok

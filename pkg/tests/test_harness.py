import json
import math
import xml.etree.ElementTree as ET
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nonlocal_homog.coefficients import make_builtin_coefficient
from nonlocal_homog.discretization import DiscreteField, TorusGrid, read_field
from nonlocal_homog.harness import (BumpPair, ConfigError, StudyConfig, default_probe_psi, emit_plot, fit_rate,
                                    make_rhs, mass_escape, parse_eps, run_study, weak_convergence_probe,
                                    write_outputs)
from nonlocal_homog.kernels import make_builtin_kernel

SVG = "{http://www.w3.org/2000/svg}"


def small_cfg(**kw):
    base = dict(dim=1, alpha=1.0, T=8.0, rho=8, eps=["1/2", "1/4", "1/8"], rhs={"kind": "bump", "radius": 2.0})
    base.update(kw)
    return StudyConfig(**base)


@pytest.fixture(scope="module")
def const_report():
    return run_study(small_cfg())


def test_parse_eps():
    assert parse_eps("1/4") == Fraction(1, 4)
    assert parse_eps(0.125) == Fraction(1, 8)
    with pytest.raises(ConfigError):
        parse_eps("a/b")


def test_constant_study_converges(const_report):
    errs = const_report.errors
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] <= 0.05
    assert const_report.converged
    for r in const_report.records:
        assert r["c1_ratio"] <= 1 + 1e-6 and r["c2_ratio"] <= 1 + 1e-6
        assert [m["L"] for m in r["mass_escape"]] == [1.0, 2.0]
    assert const_report.fit["n_points"] == 3 and math.isfinite(const_report.fit["slope"])


def test_single_eps_schedule():
    rep = run_study(small_cfg(eps=["1/4"]))
    assert len(rep.records) == 1
    assert math.isnan(rep.fit["slope"]) and rep.fit["flag"]
    d = json.loads(rep.to_json())
    assert d["fit"]["slope"] is None


def test_config_errors():
    with pytest.raises(ConfigError):
        small_cfg(eps=["3/10"])
    with pytest.raises(ConfigError):
        small_cfg(eps=["1/3"])          # N = 192 is not a power of two
    assert small_cfg(eps=["1/3"], require_power_of_two=False).eps == [Fraction(1, 3)]
    with pytest.raises(ConfigError):
        small_cfg(eps=[])
    with pytest.raises(ConfigError):
        small_cfg(alpha=2.0)
    with pytest.raises(ConfigError):
        StudyConfig.from_dict({"kernel": {"family": "pareto"}, "bogus": {}})
    with pytest.raises(ConfigError):
        StudyConfig.from_dict({"study": {"nonsense": 1}})


def test_from_dict_sections():
    doc = {"kernel": {"family": "pareto", "dim": 1, "alpha": 0.5},
           "coefficient": {"family": "separable-trig", "a": 0.5},
           "grid": {"T": 8.0, "rho": 8}, "study": {"eps": ["1/2", "1/4"], "rhs": {"kind": "zero"}}}
    cfg = StudyConfig.from_dict(doc, seed=3)
    assert cfg.alpha == 0.5 and cfg.coefficient["a"] == 0.5 and cfg.seed == 3
    assert cfg.grid(Fraction(1, 4)).N == 256


def test_zero_rhs_study():
    rep = run_study(small_cfg(eps=["1/2", "1/4"], rhs={"kind": "zero"}))
    assert all(r["error"] == 0.0 and r["iterations"] == 0 for r in rep.records)
    assert math.isnan(rep.fit["slope"]) and rep.fit["flag"]


def test_violating_kernel_gated():
    with pytest.raises(ConfigError, match="oscillation"):
        run_study(small_cfg(kernel={"family": "oscillation-violator"}, eps=["1/2"]))


@pytest.mark.parametrize("kind", ["bump", "gaussian", "harmonics"])
def test_rhs_kinds(kind):
    f = make_rhs(TorusGrid(1, 8.0, 64), {"kind": kind})
    assert f.norm() > 0 and np.all(np.isfinite(f.values))


def test_fit_rate_synthetic():
    eps = [0.5, 0.25, 0.125, 0.0625]
    fit = fit_rate([(e, 3.0 * e ** 0.7) for e in eps])
    assert fit.slope == pytest.approx(0.7, abs=1e-12) and fit.residual <= 1e-12
    assert math.exp(fit.intercept) == pytest.approx(3.0, rel=1e-12)
    noisy = fit_rate([{"eps": e, "error": e * (1.1 if i % 2 else 0.9)} for i, e in enumerate(eps)])
    assert noisy.residual > 0.05
    with pytest.raises(ValueError):
        fit_rate([(0.5, 0.1)])
    with pytest.raises(ValueError):
        fit_rate([(0.5, 0.1), (0.25, 0.0)])


def test_mass_escape_properties():
    g = TorusGrid(1, 8.0, 128)
    x = g.axis()
    u = DiscreteField(g, np.exp(-(x - 4.0) ** 2))
    assert mass_escape(u, 1.0) >= mass_escape(u, 2.0) >= 0
    assert mass_escape(DiscreteField(g, np.zeros(128)), 1.0) == 0
    assert mass_escape(u, 1.0) <= u.norm() ** 2
    with pytest.raises(ValueError):
        mass_escape(u, 3.0)


def test_weak_probe_constant_exact():
    k = make_builtin_kernel("pareto", 1, 1.0)
    psi, delta = default_probe_psi(1)
    res = weak_convergence_probe(k, make_builtin_coefficient("constant", 1), ["1/2", "1/4", "1/8"], psi, delta)
    assert max(res.deviations) <= 1e-12


def test_weak_probe_rejects_bad_support():
    k = make_builtin_kernel("pareto", 1, 1.0)
    psi = BumpPair((-0.1,), (0.1,), 0.5)
    with pytest.raises(ValueError):
        weak_convergence_probe(k, make_builtin_coefficient("constant", 1), ["1/2"], psi, 0.25)


def test_weak_probe_zero_psi():
    k = make_builtin_kernel("pareto", 1, 1.0)
    psi = BumpPair((-1.0,), (1.0,), 0.75, amplitude=0.0)
    res = weak_convergence_probe(k, make_builtin_coefficient("separable-trig", 1), ["1/2"], psi, 0.25)
    assert res.ratios == [1.0] and res.rows[0]["exact_zero"]


def test_outputs_and_svg(const_report, tmp_path):
    paths = write_outputs(const_report, tmp_path)
    names = sorted(p.split("/")[-1] for p in paths)
    assert "report.json" in names and "convergence.svg" in names and "u_effective.bin" in names
    root = ET.parse(tmp_path / "convergence.svg").getroot()
    markers = [c for c in root.iter(SVG + "circle") if c.get("class") == "data-marker"]
    assert len(markers) == 3
    assert any(l.get("class") == "fit-line" for l in root.iter(SVG + "line"))
    u, eps = read_field(tmp_path / "u_eps_1_8.bin")
    assert eps == 0.125 and np.array_equal(u.values, const_report.solutions["1/8"].values)
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0].startswith("eps,N,error") and len(lines) == 4


def test_svg_single_record_has_no_fit(tmp_path):
    rep = run_study(small_cfg(eps=["1/2"]))
    emit_plot(rep, tmp_path / "one.svg")
    root = ET.parse(tmp_path / "one.svg").getroot()
    assert not any(l.get("class") == "fit-line" for l in root.iter(SVG + "line"))
    rep.records = []
    with pytest.raises(ValueError):
        emit_plot(rep, tmp_path / "none.svg")


def test_study_deterministic():
    a, b = run_study(small_cfg(eps=["1/2", "1/4"])), run_study(small_cfg(eps=["1/2", "1/4"]))
    assert a.to_json(include_timing=False) == b.to_json(include_timing=False)
    assert "timing" not in json.loads(a.to_json(include_timing=False))


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(1e-6, 1.0), min_size=2, max_size=6), st.floats(0.1, 2.0))
def test_fit_rate_power_law_property(errs, p):
    eps = [2.0 ** -k for k in range(len(errs))]
    fit = fit_rate([(e, 0.3 * e ** p) for e in eps])
    assert fit.slope == pytest.approx(p, abs=1e-9)

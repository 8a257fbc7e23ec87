"""Convergence studies, diagnostic probes, rate fits and report output."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np
import scipy

from . import __version__
from .coefficients import PeriodicCoefficient, make_builtin_coefficient, mean_lambda, validate_coefficient
from .discretization import (CommensurabilityError, DiscreteField, TorusGrid, assemble_stencil, commensurate,
                             fractional_energy_tail, translation_modulus, write_field)
from .kernels import (JumpKernel, ValidationBudget, make_builtin_kernel, rescaled_density, validate_kernel,
                      with_irregular_core)
from .solvers import init_symbol, solve_effective, solve_epsilon


class ConfigError(ValueError):
    pass


def parse_eps(value) -> Fraction:
    """``"1/4"``, ``0.25`` or ``Fraction(1, 4)``."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"cannot parse eps {value!r}") from exc
    f = Fraction(value).limit_denominator(1 << 20)
    if abs(float(f) - float(value)) > 1e-14 * abs(float(value)):
        raise ConfigError(f"eps {value!r} is not a simple rational")
    return f


# ---------------------------------------------------------------------------
# right-hand sides


def _bump(t):
    """``exp(1 - 1/(1 - t^2))`` on ``|t| < 1``, zero outside; peak value 1."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside] ** 2))
    return out


def make_rhs(grid: TorusGrid, spec: Optional[dict] = None) -> DiscreteField:
    """Right-hand side on ``grid``.

    ``kind = "bump"`` (default): smooth radial bump of the given ``radius``
    (default ``T/4``) centred at the torus centre.  ``kind = "gaussian"``:
    periodized Gaussian of standard deviation ``width``.  ``kind =
    "harmonics"``: sum of ``amplitude * cos(2 pi k.x / T)`` over ``modes``,
    each mode a dict with integer vector ``k`` and ``amplitude``.
    """
    spec = dict(spec or {})
    kind = spec.get("kind", "bump")
    T, d = grid.T, grid.dim
    x = grid.coords()
    c = np.full(d, T / 2)
    amp = float(spec.get("amplitude", 1.0))
    if kind == "bump":
        radius = float(spec.get("radius", T / 4))
        if not 0 < radius <= T / 2:
            raise ConfigError("bump radius must lie in (0, T/2]")
        r = np.linalg.norm(x - c, axis=-1)
        vals = amp * _bump(r / radius)
    elif kind == "gaussian":
        w = float(spec.get("width", T / 16))
        vals = np.zeros(grid.shape)
        imgs = range(-2, 3)
        shifts = [(n,) for n in imgs] if d == 1 else [(a, b) for a in imgs for b in imgs]
        for n in shifts:
            r2 = np.sum((x - c + T * np.asarray(n, dtype=float)) ** 2, axis=-1)
            vals += np.exp(-r2 / (2 * w * w))
        vals *= amp
    elif kind == "harmonics":
        vals = np.zeros(grid.shape)
        for mode in spec.get("modes", [{"k": [1] * d, "amplitude": 1.0}]):
            k = np.asarray(mode["k"], dtype=float).reshape(d)
            vals += float(mode.get("amplitude", 1.0)) * np.cos(2 * np.pi * (x @ k) / T)
    elif kind == "zero":
        vals = np.zeros(grid.shape)
    else:
        raise ConfigError(f"unknown rhs kind {kind!r}")
    return DiscreteField(grid, vals)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class StudyConfig:
    dim: int = 1
    alpha: float = 1.0
    kernel: dict = field(default_factory=lambda: {"family": "pareto"})
    coefficient: dict = field(default_factory=lambda: {"family": "constant"})
    m: float = 1.0
    T: float = 8.0
    rho: int = 8
    eps: list = field(default_factory=lambda: [Fraction(1, 2), Fraction(1, 4), Fraction(1, 8)])
    rhs: dict = field(default_factory=dict)
    tol: float = 1e-10
    maxit: Optional[int] = None
    precondition: bool = False
    R_img: int = 8
    subsamples: int = 4
    threshold: Optional[float] = None
    allow_violating_kernel: bool = False
    translation_shifts: Optional[list] = None
    escape_radii: Optional[list] = None
    fractional_tail: bool = True
    probe: Optional[dict] = None
    seed: int = 0
    require_power_of_two: bool = True

    def __post_init__(self):
        self.eps = [parse_eps(e) for e in self.eps]
        self.validate()

    def validate(self):
        if self.dim not in (1, 2):
            raise ConfigError("dim must be 1 or 2")
        if not 0 < self.alpha < 2:
            raise ConfigError("alpha must lie in (0, 2)")
        if not self.m > 0:
            raise ConfigError("m must be positive")
        if not self.eps:
            raise ConfigError("empty eps schedule")
        if self.rho < 1 or int(self.rho) != self.rho:
            raise ConfigError("rho must be a positive integer")
        for e in self.eps:
            if not 0 < e <= 1:
                raise ConfigError(f"eps={e} outside (0, 1]")
            try:
                n_cells, _ = commensurate(self.T, e)
            except CommensurabilityError as exc:
                raise ConfigError(str(exc)) from exc
            N = n_cells * self.rho
            if self.require_power_of_two and N & (N - 1):
                raise ConfigError(f"eps={e}: N = rho T/eps = {N} is not a power of two")
        finest = min(self.eps)
        for e in self.eps:
            if (Fraction(e) / finest).denominator != 1:
                raise ConfigError("every eps must be an integer multiple of the finest eps")

    def grid(self, eps) -> TorusGrid:
        n_cells, _ = commensurate(self.T, eps)
        return TorusGrid(self.dim, float(self.T), n_cells * self.rho)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["eps"] = [str(e) for e in self.eps]
        return out

    @classmethod
    def from_dict(cls, d: dict, **overrides) -> "StudyConfig":
        """Build from the sectioned document ``[kernel] [coefficient] [grid] [study] [probe]``."""
        d = dict(d)
        kernel = dict(d.get("kernel", {}))
        coeff = dict(d.get("coefficient", {}))
        grid = dict(d.get("grid", {}))
        study = dict(d.get("study", {}))
        known = {"kernel", "coefficient", "grid", "study", "probe", "output"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config sections: {sorted(extra)}")
        kw = {}
        if "dim" in kernel:
            kw["dim"] = int(kernel.pop("dim"))
        elif "dim" in grid:
            kw["dim"] = int(grid.pop("dim"))
        if "alpha" in kernel:
            kw["alpha"] = float(kernel.pop("alpha"))
        if kernel:
            kw["kernel"] = kernel
        if coeff:
            kw["coefficient"] = coeff
        for key in ("T", "rho", "R_img", "subsamples"):
            if key in grid:
                kw[key] = grid.pop(key)
        if grid:
            raise ConfigError(f"unknown [grid] keys: {sorted(grid)}")
        if "rhs" in study:
            kw["rhs"] = dict(study.pop("rhs"))
        names = {f for f in cls.__dataclass_fields__}
        for key, val in study.items():
            if key not in names or key in ("kernel", "coefficient", "dim", "alpha"):
                raise ConfigError(f"unknown [study] key {key!r}")
            kw[key] = val
        if "probe" in d:
            kw["probe"] = dict(d["probe"])
        kw.update(overrides)
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def build_kernel(cfg: StudyConfig) -> JumpKernel:
    spec = dict(cfg.kernel)
    family = spec.pop("family", "pareto")
    core = spec.pop("irregular_core", None)
    spec.pop("mode", None)
    spec.pop("validation", None)
    params = spec.pop("params", None) or spec
    k = make_builtin_kernel(family, cfg.dim, cfg.alpha, params)
    if core:
        core = dict(core) if isinstance(core, dict) else {}
        k = with_irregular_core(k, seed=cfg.seed, **core)
    return k


def build_coefficient(cfg: StudyConfig) -> PeriodicCoefficient:
    spec = dict(cfg.coefficient)
    family = spec.pop("family", "constant")
    params = spec.pop("params", None) or spec
    return make_builtin_coefficient(family, cfg.dim, params)


# ---------------------------------------------------------------------------
# probes


def mass_escape(u: DiscreteField, L: float) -> float:
    """``int phi_L u^2`` with ``phi_L`` = 0 within ``L`` of the torus centre, 1 beyond ``2L``."""
    T = u.grid.T
    if not 0 < L or 2 * L > T / 2:
        raise ValueError(f"cutoff L={L} does not fit: need 0 < 2L <= T/2 = {T / 2}")
    r = np.linalg.norm(u.grid.coords() - T / 2, axis=-1)
    phi = np.clip((r - L) / L, 0.0, 1.0)
    return float(np.sum(phi * u.values ** 2)) * u.grid.h ** u.grid.dim


@dataclass(frozen=True)
class BumpPair:
    """Test function ``psi(x, y) = amplitude * b(|x - x0|/R) b(|y - y0|/R)``."""

    x0: tuple
    y0: tuple
    radius: float
    amplitude: float = 1.0

    @property
    def dim(self) -> int:
        return len(self.x0)

    def inside(self, delta: float) -> bool:
        """Whether the support lies in ``{|x - y| >= delta, |x| + |y| <= 1/delta}``."""
        x0, y0 = np.asarray(self.x0, float), np.asarray(self.y0, float)
        R = self.radius
        gap = np.linalg.norm(x0 - y0) - 2 * R
        reach = np.linalg.norm(x0) + np.linalg.norm(y0) + 2 * R
        return bool(gap >= delta and reach <= 1.0 / delta)


def _panel_nodes(lo: float, hi: float, max_width: float, n_gauss: int):
    n_pan = max(1, math.ceil((hi - lo) / max_width - 1e-12))
    edges = np.linspace(lo, hi, n_pan + 1)
    x, w = np.polynomial.legendre.leggauss(n_gauss)
    mid, half = 0.5 * (edges[1:] + edges[:-1]), 0.5 * np.diff(edges)
    return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()


def _box_nodes(center, R, max_width, n_gauss):
    axes = [_panel_nodes(c - R, c + R, max_width, n_gauss) for c in center]
    if len(axes) == 1:
        return axes[0][0][:, None], axes[0][1]
    (a, wa), (b, wb) = axes
    A, B = np.meshgrid(a, b, indexing="ij")
    return np.stack([A.ravel(), B.ravel()], axis=-1), np.outer(wa, wb).ravel()


@dataclass
class ProbeResult:
    rows: list
    delta: float
    psi: dict
    lambda_bar: float

    @property
    def ratios(self) -> list:
        return [r["ratio"] for r in self.rows]

    @property
    def deviations(self) -> list:
        return [r["deviation"] for r in self.rows]

    def to_dict(self) -> dict:
        return {"delta": self.delta, "psi": self.psi, "lambda_bar": self.lambda_bar, "rows": self.rows}


def weak_convergence_probe(kernel: JumpKernel, coeff: PeriodicCoefficient, eps_list: Sequence, psi: BumpPair,
                           delta: float, n_gauss: int = 8, panels_per_eps: int = 2,
                           lambda_bar: Optional[float] = None) -> ProbeResult:
    """Ratios ``LHS(eps) / RHS`` of the oscillating and limiting jump measures tested against ``psi``.

    Both sides use the same composite Gauss-Legendre nodes, with panels no
    wider than ``eps / panels_per_eps`` for the smallest ``eps``.  A zero
    ``psi`` gives ratio 1 by convention (``exact_zero`` is set).
    """
    if psi.dim != kernel.dim:
        raise ValueError("psi dimension does not match the kernel")
    if not psi.inside(delta):
        raise ValueError("psi support is not contained in the region {|x-y| >= delta, |x|+|y| <= 1/delta}")
    eps_vals = [float(parse_eps(e)) for e in eps_list]
    lb = mean_lambda(coeff) if lambda_bar is None else lambda_bar
    width = min(eps_vals) / panels_per_eps
    X, wx = _box_nodes(psi.x0, psi.radius, width, n_gauss)
    Y, wy = _box_nodes(psi.y0, psi.radius, width, n_gauss)
    bx = _bump(np.linalg.norm(X - np.asarray(psi.x0), axis=-1) / psi.radius) * wx
    by = _bump(np.linalg.norm(Y - np.asarray(psi.y0), axis=-1) / psi.radius) * wy
    d, a = kernel.dim, kernel.alpha

    chunk = max(1, 2_000_000 // len(Y))
    rhs = 0.0
    for s in range(0, len(X), chunk):
        z = X[s:s + chunk, None, :] - Y[None, :, :]
        r = np.linalg.norm(z, axis=-1)
        kk = kernel.angular(z / r[..., None])
        rhs += float(bx[s:s + chunk] @ (kk * r ** (-d - a)) @ by)
    rhs *= lb * psi.amplitude

    rows = []
    for e in eps_vals:
        lhs = 0.0
        for s in range(0, len(X), chunk):
            xs = X[s:s + chunk]
            z = xs[:, None, :] - Y[None, :, :]
            lam = coeff(xs[:, None, :] / e, Y[None, :, :] / e)
            lhs += float(bx[s:s + chunk] @ (rescaled_density(kernel, e, z) * lam) @ by)
        lhs *= psi.amplitude
        if psi.amplitude == 0:
            rows.append({"eps": e, "lhs": 0.0, "rhs": 0.0, "ratio": 1.0, "deviation": 0.0, "exact_zero": True})
        else:
            ratio = lhs / rhs
            rows.append({"eps": e, "lhs": lhs, "rhs": rhs, "ratio": ratio, "deviation": abs(ratio - 1.0),
                         "exact_zero": False})
    return ProbeResult(rows, delta, asdict(psi), lb)


def default_probe_psi(dim: int) -> tuple:
    """A test function and ``delta`` that fit the admissible region.

    The radius avoids multiples of 1/4: compactly supported bumps have
    spectral side lobes, and a radius commensurate with the dyadic periods
    lands the first ones on a zero.
    """
    if dim == 1:
        return BumpPair((-1.0,), (1.0,), 0.75), 0.25
    return BumpPair((-1.0, 0.0), (1.0, 0.0), 0.75), 0.25


def psi_from_spec(dim: int, spec: dict) -> tuple:
    if "delta" not in spec:
        raise ConfigError("probe needs 'delta'")
    x0 = tuple(float(v) for v in np.atleast_1d(spec.get("x0", [-1.0] + [0.0] * (dim - 1))))
    y0 = tuple(float(v) for v in np.atleast_1d(spec.get("y0", [1.0] + [0.0] * (dim - 1))))
    psi = BumpPair(x0, y0, float(spec.get("radius", 0.75)), float(spec.get("amplitude", 1.0)))
    return psi, float(spec["delta"])


# ---------------------------------------------------------------------------
# rate fit


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    residual: float
    n_points: int
    flag: Optional[str] = None


def fit_rate(records) -> RateFit:
    """Least squares for ``log(error) = slope * log(eps) + intercept``.

    ``records`` holds ``(eps, error)`` pairs or dicts with those keys.
    ``residual`` is the RMS of the log-space residuals.
    """
    pts = [(r["eps"], r["error"]) if isinstance(r, dict) else tuple(r) for r in records]
    if len(pts) < 2:
        raise ValueError("fit_rate needs at least two points")
    if any(not float(v) > 0 for _, v in pts):
        raise ValueError("fit_rate needs positive errors")
    x = np.log([float(e) for e, _ in pts])
    y = np.log([float(v) for _, v in pts])
    slope, intercept = np.polyfit(x, y, 1)
    res = y - (slope * x + intercept)
    return RateFit(float(slope), float(intercept), float(np.sqrt(np.mean(res ** 2))), len(pts))


# ---------------------------------------------------------------------------
# study


@dataclass
class ConvergenceReport:
    config: dict
    records: list
    fit: dict
    effective: dict
    kernel_report: dict
    coefficient_report: dict
    probe: Optional[dict]
    versions: dict
    timing: dict = field(default_factory=dict)
    solutions: dict = field(default_factory=dict, repr=False)
    effective_solution: Optional[DiscreteField] = field(default=None, repr=False)

    @property
    def errors(self) -> list:
        return [r["error"] for r in self.records]

    @property
    def converged(self) -> bool:
        return all(r["converged"] for r in self.records)

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {"config": self.config, "versions": self.versions, "effective": self.effective,
               "records": self.records, "fit": self.fit, "probe": self.probe,
               "kernel_report": self.kernel_report, "coefficient_report": self.coefficient_report}
        if include_timing:
            out["timing"] = self.timing
        return _clean(out)

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["eps", "N", "error", "iterations", "c1_ratio", "c2_ratio", "energy"]
        w.writerow(cols)
        for r in self.records:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
        return buf.getvalue()


def _clean(obj):
    """JSON-safe copy: NaN/inf become ``None``, numpy scalars become Python scalars."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def run_study(cfg: StudyConfig, validation_budget: Optional[ValidationBudget] = None) -> ConvergenceReport:
    """Solve the oscillating problems along the eps schedule and compare with the effective solution."""
    t_start = time.perf_counter()
    timing = {}
    kernel = build_kernel(cfg)
    coeff = build_coefficient(cfg)

    budget = validation_budget or ValidationBudget(seed=cfg.seed)
    krep = validate_kernel(kernel, budget)
    if not krep.passed and not cfg.allow_violating_kernel:
        raise ConfigError(f"kernel fails hypotheses {krep.failed}; set allow_violating_kernel to study it anyway")
    crep = validate_coefficient(coeff)
    if not crep.verdict("symmetry").passed:
        raise ConfigError("coefficient is not symmetric; its homogenized limit is not the mean")
    if not crep.passed:
        raise ConfigError(f"coefficient fails {crep.failed}")
    timing["validation"] = time.perf_counter() - t_start

    lam_bar = mean_lambda(coeff)
    sym = init_symbol(cfg.alpha, lam_bar, kernel.angular, seed=cfg.seed)
    finest = cfg.grid(min(cfg.eps))
    f_fine = make_rhs(finest, cfg.rhs)
    u_fine = solve_effective(finest, cfg.m, f_fine, sym)
    effective = {"lambda_bar": lam_bar, "c_alpha": sym.c_alpha, "symbol_check": dict(sym.check),
                 "u_norm": u_fine.norm(), "f_norm": f_fine.norm(), "grid": finest.describe()}

    coarsest_h = cfg.grid(max(cfg.eps)).h
    shifts = cfg.translation_shifts or [cfg.T / 64, cfg.T / 32, cfg.T / 16]
    radii = cfg.escape_radii or [cfg.T / 8, cfg.T / 4]

    records, solutions = [], {}
    prev_err = None
    for e in cfg.eps:
        t0 = time.perf_counter()
        grid = cfg.grid(e)
        f = f_fine.subsample(grid)
        u = u_fine.subsample(grid)
        st = assemble_stencil(grid, kernel, coeff, e, R_img=cfg.R_img, subsamples=cfg.subsamples)
        sol = solve_epsilon(st, cfg.m, f, tol=cfg.tol, maxit=cfg.maxit, precondition=cfg.precondition)
        un = u.norm()
        err = (sol.u - u).norm() / un if un > 0 else (0.0 if sol.u.norm() == 0 else math.inf)
        rec = {"eps": str(e), "eps_value": float(e), "N": grid.N, "h": grid.h, "error": err,
               "converged": sol.converged, "iterations": sol.iterations, "residual": sol.residual,
               "c1_ratio": sol.c1_ratio, "c2_ratio": sol.c2_ratio, "c1_ok": sol.c1_ok, "c2_ok": sol.c2_ok,
               "energy": sol.energy, "green_defect": sol.green_defect,
               "tail_correction": st.tail_correction, "tail_fraction": st.tail_fraction}
        if cfg.fractional_tail:
            rec["fractional_tail"] = fractional_energy_tail(sol.u, cfg.alpha, kernel.M * float(e), R_img=cfg.R_img)
        table = []
        for s in shifts:
            k = s / grid.h
            if abs(k - round(k)) > 1e-9 or round(k) == 0:
                continue
            shift = (int(round(k)),) + (0,) * (cfg.dim - 1)
            mod = translation_modulus(sol.u, shift)
            table.append({"shift": s, "modulus": mod, "ratio": mod / s ** cfg.alpha})
        rec["translation"] = table
        rec["mass_escape"] = [{"L": L, "value": mass_escape(sol.u, L)} for L in radii]
        rec["monotone"] = prev_err is None or err <= prev_err + 10 * cfg.tol
        prev_err = err
        rec["seconds"] = time.perf_counter() - t0
        records.append(rec)
        solutions[str(e)] = sol.u
    timing["records"] = {r["eps"]: r.pop("seconds") for r in records}

    usable = [r for r in records if r["converged"] and r["error"] > 0]
    try:
        rf = fit_rate([(r["eps_value"], r["error"]) for r in usable])
        fit = asdict(rf)
    except ValueError:
        fit = {"slope": math.nan, "intercept": math.nan, "residual": math.nan, "n_points": len(usable),
               "flag": "fewer than two converged records with positive error; no rate fitted"}

    probe = None
    if cfg.probe is not None:
        spec = dict(cfg.probe)
        psi, delta = psi_from_spec(cfg.dim, spec)
        plist = spec.get("eps", [str(e) for e in cfg.eps])
        probe = weak_convergence_probe(kernel, coeff, plist, psi, delta,
                                       n_gauss=int(spec.get("n_gauss", 8))).to_dict()

    timing["total"] = time.perf_counter() - t_start
    versions = {"package": __version__, "numpy": np.__version__, "scipy": scipy.__version__}
    return ConvergenceReport(cfg.to_dict(), records, fit, effective, krep.to_dict(), crep.to_dict(), probe,
                             versions, timing, solutions, u_fine)


def write_outputs(report: ConvergenceReport, out_dir, formats: str = "all", plot: bool = True) -> list:
    """Write ``report.json``, ``report.csv``, ``convergence.svg`` and the solution fields."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    written = []
    if formats in ("json", "all"):
        p = os.path.join(out_dir, "report.json")
        with open(p, "w") as fh:
            fh.write(report.to_json())
        written.append(p)
    if formats in ("csv", "all"):
        p = os.path.join(out_dir, "report.csv")
        with open(p, "w") as fh:
            fh.write(report.to_csv())
        written.append(p)
    if plot and report.records:
        p = os.path.join(out_dir, "convergence.svg")
        emit_plot(report, p)
        written.append(p)
    for key, u in report.solutions.items():
        p = os.path.join(out_dir, f"u_eps_{key.replace('/', '_')}.bin")
        write_field(p, u, float(Fraction(key)))
        written.append(p)
    if report.effective_solution is not None:
        p = os.path.join(out_dir, "u_effective.bin")
        write_field(p, report.effective_solution)
        written.append(p)
    return written


# ---------------------------------------------------------------------------
# plot


def emit_plot(report: ConvergenceReport, path) -> None:
    """Self-contained SVG: log-log error against eps with the fitted line, and the a-priori ratios."""
    recs = report.records
    if not recs:
        raise ValueError("report has no records to plot")
    W, H, pad = 640, 300, 60
    eps = np.array([r["eps_value"] for r in recs])
    err = np.array([max(r["error"], 1e-300) for r in recs])
    lx, ly = np.log10(eps), np.log10(err)

    def span(v):
        lo, hi = float(v.min()), float(v.max())
        if hi - lo < 1e-12:
            lo, hi = lo - 0.5, hi + 0.5
        m = 0.08 * (hi - lo)
        return lo - m, hi + m

    x0, x1 = span(lx)
    y0, y1 = span(ly)
    px = lambda v: pad + (v - x0) / (x1 - x0) * (W - 2 * pad)
    py = lambda v: H - pad - (v - y0) / (y1 - y0) * (H - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{2 * H}" viewBox="0 0 {W} {2 * H}">',
             '<rect width="100%" height="100%" fill="white"/>',
             f'<g id="convergence"><text x="{W / 2}" y="24" text-anchor="middle" font-size="14">'
             'relative L2 error against eps (log-log)</text>',
             f'<rect x="{pad}" y="{pad}" width="{W - 2 * pad}" height="{H - 2 * pad}" fill="none" stroke="black"/>']
    for e, v, a, b in zip(eps, err, lx, ly):
        parts.append(f'<circle class="data-marker" cx="{px(a):.2f}" cy="{py(b):.2f}" r="4" fill="steelblue">'
                     f'<title>eps={e:g} error={v:.3e}</title></circle>')
    fit = report.fit
    slope = fit.get("slope")
    if len(recs) >= 2 and slope is not None and math.isfinite(slope):
        a0, a1 = x0, x1
        b0 = (slope * a0 * math.log(10) + fit["intercept"]) / math.log(10)
        b1 = (slope * a1 * math.log(10) + fit["intercept"]) / math.log(10)
        parts.append(f'<line class="fit-line" x1="{px(a0):.2f}" y1="{py(b0):.2f}" x2="{px(a1):.2f}" '
                     f'y2="{py(b1):.2f}" stroke="firebrick" stroke-dasharray="6 4"/>')
        parts.append(f'<text x="{W - pad}" y="{pad - 8}" text-anchor="end" font-size="12">'
                     f'{escape(f"slope {slope:.3f}")}</text>')
    parts.append(f'<text x="{W / 2}" y="{H - 15}" text-anchor="middle" font-size="12">log10 eps</text></g>')

    # diagnostics panel: c1 and c2 ratios per eps on a linear [0, 1.1] scale
    top = H
    q = lambda v: top + H - pad - v / 1.1 * (H - 2 * pad)
    parts.append(f'<g id="diagnostics" transform="translate(0,0)"><text x="{W / 2}" y="{top + 24}" '
                 'text-anchor="middle" font-size="14">a-priori ratios (c1 blue, c2 green)</text>')
    parts.append(f'<rect x="{pad}" y="{top + pad}" width="{W - 2 * pad}" height="{H - 2 * pad}" fill="none" stroke="black"/>')
    parts.append(f'<line x1="{pad}" y1="{q(1.0):.2f}" x2="{W - pad}" y2="{q(1.0):.2f}" stroke="gray" stroke-dasharray="2 2"/>')
    for r, a in zip(recs, lx):
        for key, color in (("c1_ratio", "steelblue"), ("c2_ratio", "seagreen")):
            v = r[key]
            if v is not None and math.isfinite(v):
                parts.append(f'<rect class="diag-marker" x="{px(a) - 3:.2f}" y="{q(min(v, 1.1)) - 3:.2f}" '
                             f'width="6" height="6" fill="{color}"/>')
    parts.append("</g></svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")

"""Periodic symmetric coefficients Lambda(x, y) on the torus T^{2d}."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from .kernels import Verdict, _jsonable

COEFFICIENT_FAMILIES = ("constant", "separable-trig", "additive-trig")


class CoefficientError(ValueError):
    pass


@dataclass(frozen=True)
class PeriodicCoefficient:
    """``Lambda(x, y)``, 1-periodic in every coordinate of both arguments.

    ``func`` receives two arrays of shape ``(..., d)`` and must broadcast.
    """

    dim: int
    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    gamma1: float
    gamma2: float
    family: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise CoefficientError("dimension must be 1 or 2")
        if not 0.0 < self.gamma1 <= self.gamma2:
            raise CoefficientError("need 0 < gamma1 <= gamma2")

    def __call__(self, x, y) -> np.ndarray:
        x = _pts(x, self.dim)
        y = _pts(y, self.dim)
        shape = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
        return np.broadcast_to(np.asarray(self.func(x, y), dtype=float), shape).copy()

    def scaled(self, c: float) -> "PeriodicCoefficient":
        if c <= 0:
            raise CoefficientError("scale must be positive")
        f = self.func
        return PeriodicCoefficient(self.dim, lambda x, y: c * f(x, y), c * self.gamma1,
                                   c * self.gamma2, self.family, dict(self.params))

    def swapped(self) -> "PeriodicCoefficient":
        f = self.func
        return PeriodicCoefficient(self.dim, lambda x, y: f(y, x), self.gamma1, self.gamma2,
                                   self.family, dict(self.params))

    def describe(self) -> dict:
        return {"family": self.family, "dim": self.dim, "params": dict(self.params),
                "gamma1": self.gamma1, "gamma2": self.gamma2}


def _pts(x, dim):
    x = np.asarray(x, dtype=float)
    if dim == 1 and (x.ndim <= 1 or x.shape[-1] != 1):
        x = x[..., None]
    return x


def make_builtin_coefficient(family: str, dim: int, params: Optional[dict] = None) -> PeriodicCoefficient:
    """Builtin families.

    * ``constant``: ``Lambda = c`` (param ``c``, default 1).
    * ``separable-trig``: ``(1 + a sin 2 pi x_1)(1 + a sin 2 pi y_1)``, bounds ``(1 -+ |a|)^2``.
    * ``additive-trig``: ``1 + a sin 2 pi (x_1 + y_1)``, bounds ``1 -+ |a|``.
    """
    params = dict(params or {})
    if family == "constant":
        c = float(params.get("c", 1.0))
        if c <= 0:
            raise CoefficientError("constant coefficient must be positive")
        return PeriodicCoefficient(dim, lambda x, y: np.full(np.broadcast_shapes(x.shape[:-1], y.shape[:-1]), c),
                                   c, c, family, {"c": c})
    if family in ("separable-trig", "additive-trig"):
        a = float(params.get("a", 0.5))
        if abs(a) >= 1:
            raise CoefficientError("amplitude |a| must be < 1")
        tp = 2.0 * math.pi
        if family == "separable-trig":
            def lam(x, y):
                return (1.0 + a * np.sin(tp * x[..., 0])) * (1.0 + a * np.sin(tp * y[..., 0]))
            return PeriodicCoefficient(dim, lam, (1 - abs(a)) ** 2, (1 + abs(a)) ** 2, family, {"a": a})

        def lam(x, y):
            return 1.0 + a * np.sin(tp * (x[..., 0] + y[..., 0]))
        return PeriodicCoefficient(dim, lam, 1 - abs(a), 1 + abs(a), family, {"a": a})
    raise CoefficientError(f"unknown coefficient family {family!r}; expected one of {COEFFICIENT_FAMILIES}")


def _torus_nodes(dim: int, n: int) -> np.ndarray:
    t = (np.arange(n) + 0.5) / n
    if dim == 1:
        return t[:, None]
    g = np.meshgrid(t, t, indexing="ij")
    return np.stack([a.ravel() for a in g], axis=-1)


def mean_lambda(coeff: PeriodicCoefficient, n_quad: int = 64) -> float:
    """Tensor midpoint rule over T^{2d}; exact for trig polynomials of degree < n_quad."""
    if n_quad < 2:
        raise ValueError("n_quad must be >= 2")
    nodes = _torus_nodes(coeff.dim, n_quad)
    vals = coeff(nodes[:, None, :], nodes[None, :, :])
    # fsum keeps exactly representable means exact (e.g. 1.0 for the trig families)
    return math.fsum(vals.ravel()) / vals.size


@dataclass(frozen=True)
class CoefficientBudget:
    n_grid: int = 32
    n_random: int = 4096
    seed: int = 0
    tol_symmetry: float = 1e-12
    tol_bounds: float = 1e-9
    tol_periodicity: float = 1e-12


@dataclass
class CoefficientReport:
    coefficient: dict
    budget: dict
    verdicts: list

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    @property
    def failed(self) -> list:
        return [v.name for v in self.verdicts if not v.passed]

    def verdict(self, name: str) -> Verdict:
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "coefficient": _jsonable(self.coefficient),
                "budget": _jsonable(self.budget), "verdicts": [v.to_dict() for v in self.verdicts]}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _sample_pairs(dim: int, budget: CoefficientBudget):
    g = _torus_nodes(dim, budget.n_grid)
    x = np.repeat(g, len(g), axis=0)
    y = np.tile(g, (len(g), 1))
    rnd = qmc.Halton(2 * dim, seed=budget.seed).random(budget.n_random)
    # spread over several periods so that periodicity is not assumed by the sampler
    rnd = 4.0 * rnd - 2.0
    x = np.concatenate([x, rnd[:, :dim]])
    y = np.concatenate([y, rnd[:, dim:]])
    return x, y


def validate_coefficient(coeff: PeriodicCoefficient, budget: Optional[CoefficientBudget] = None) -> CoefficientReport:
    budget = budget or CoefficientBudget()
    x, y = _sample_pairs(coeff.dim, budget)
    samples = {"n_grid": budget.n_grid, "n_random": budget.n_random, "seed": budget.seed,
               "n_pairs": int(len(x))}
    vxy = coeff(x, y)
    vyx = coeff(y, x)

    asym = np.abs(vxy - vyx)
    i = int(np.argmax(asym))
    sym = Verdict("symmetry", bool(asym[i] <= budget.tol_symmetry), float(asym[i]), budget.tol_symmetry,
                  samples, {"witness": {"x": x[i].tolist(), "y": y[i].tolist(),
                                        "lambda_xy": float(vxy[i]), "lambda_yx": float(vyx[i])}})

    lo, hi = float(vxy.min()), float(vxy.max())
    excess = max(coeff.gamma1 - lo, hi - coeff.gamma2, 0.0)
    bnd = Verdict("bounds", bool(lo > 0 and excess <= budget.tol_bounds), excess, budget.tol_bounds, samples,
                  {"inf": lo, "sup": hi, "gamma1": coeff.gamma1, "gamma2": coeff.gamma2})

    worst = 0.0
    for axis in range(coeff.dim):
        e = np.zeros(coeff.dim)
        e[axis] = 1.0
        worst = max(worst, float(np.max(np.abs(coeff(x + e, y) - vxy))),
                    float(np.max(np.abs(coeff(x, y + e) - vxy))))
    per = Verdict("periodicity", bool(worst <= budget.tol_periodicity), worst, budget.tol_periodicity, samples)

    return CoefficientReport(coeff.describe(), _jsonable(budget.__dict__), [sym, bnd, per])

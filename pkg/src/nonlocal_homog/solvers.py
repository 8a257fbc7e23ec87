"""Resolvent solvers for the oscillating problem and its effective limit.

The oscillating problem ``m u - L^eps u = f`` is solved by conjugate gradient.
The effective operator is the Fourier multiplier

    sigma(xi) = lambda_bar |xi|^alpha A(xi/|xi|),
    A(e) = c_alpha int_{S^{d-1}} k(s) |s . e|^alpha ds,
    c_alpha = int_0^inf (1 - cos t) t^{-1-alpha} dt,

which on the torus is exact at every lattice frequency.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special

from .discretization import DiscreteField, EpsilonStencil, TorusGrid, apply_operator, energy_form
from .kernels import AngularDensity, QuadratureError, unit_vector


class SymbolCheckError(RuntimeError):
    """The factorized symbol disagrees with direct quadrature of the kernel."""


# ---------------------------------------------------------------------------
# conjugate gradient


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool
    history: list = field(default_factory=list)


def conjugate_gradient(apply: Callable[[np.ndarray], np.ndarray], b: np.ndarray, tol: float = 1e-10,
                       maxit: Optional[int] = None, x0: Optional[np.ndarray] = None,
                       precond: Optional[np.ndarray] = None, callback=None) -> CGResult:
    """CG for a symmetric positive definite ``apply``.

    ``precond`` is the diagonal of the preconditioner (its inverse is applied).
    Stops when ``|b - A x| / |b| <= tol``; the reported residual is recomputed
    from scratch rather than taken from the recurrence.
    """
    b = np.asarray(b, dtype=float)
    shape = b.shape
    b = b.ravel()
    bnorm = float(np.linalg.norm(b))
    maxit = maxit if maxit is not None else 10 * b.size
    if bnorm == 0.0:
        return CGResult(np.zeros(shape), 0, 0.0, True, [0.0])
    op = lambda v: np.asarray(apply(v.reshape(shape)), dtype=float).ravel()
    x = np.zeros_like(b) if x0 is None else np.asarray(x0, dtype=float).ravel().copy()
    r = b - op(x) if x0 is not None else b.copy()
    minv = None if precond is None else 1.0 / np.asarray(precond, dtype=float).ravel()
    z = r if minv is None else minv * r
    p = z.copy()
    rz = float(r @ z)
    history = [float(np.linalg.norm(r)) / bnorm]
    it = 0
    while history[-1] > tol and it < maxit:
        Ap = op(p)
        pAp = float(p @ Ap)
        if pAp <= 0:
            break
        a = rz / pAp
        x += a * p
        r -= a * Ap
        it += 1
        z = r if minv is None else minv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        history.append(float(np.linalg.norm(r)) / bnorm)
        if callback is not None:
            callback(it, x, history[-1])
    true_res = float(np.linalg.norm(b - op(x))) / bnorm
    return CGResult(x.reshape(shape), it, true_res, true_res <= tol, history)


@dataclass
class ResolventSolveResult:
    u: DiscreteField
    iterations: int
    residual: float
    converged: bool
    tol: float
    m: float
    f_norm: float
    u_norm: float
    energy: float
    c1_ratio: float
    c2_ratio: float
    green_defect: float

    @property
    def c1_ok(self) -> bool:
        return self.c1_ratio <= 1 + 10 * self.tol

    @property
    def c2_ok(self) -> bool:
        return self.c2_ratio <= 1 + 10 * self.tol

    def sidecar(self) -> dict:
        return {"iterations": self.iterations, "residual": self.residual, "converged": self.converged,
                "tol": self.tol, "m": self.m, "f_norm": self.f_norm, "u_norm": self.u_norm,
                "energy": self.energy, "c1_ratio": self.c1_ratio, "c2_ratio": self.c2_ratio,
                "green_defect": self.green_defect}


def solve_epsilon(stencil: EpsilonStencil, m: float, f: DiscreteField, tol: float = 1e-10,
                  maxit: Optional[int] = None, precondition: bool = False) -> ResolventSolveResult:
    """Solve ``m u - L^eps u = f`` by CG and record the a-priori bound ratios.

    ``c1_ratio = m |u| / |f|`` and ``c2_ratio = E(u) m / |f|^2``; both are at
    most one for the exact solution.  ``green_defect`` is
    ``|m |u|^2 + E(u) - <f, u>| / |f|^2``.
    """
    if not m > 0:
        raise ValueError("m must be positive")
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    grid = stencil.grid
    diag = m + stencil.rowsum() if precondition else None

    def op(v):
        return m * v - apply_operator(stencil, DiscreteField(grid, v)).values

    res = conjugate_gradient(op, f.values, tol=tol, maxit=maxit, precond=diag)
    u = DiscreteField(grid, res.x)
    fn, un = f.norm(), u.norm()
    E = energy_form(stencil, u)
    if fn == 0.0:
        c1 = c2 = gd = 0.0
    else:
        c1 = m * un / fn
        c2 = E * m / fn ** 2
        gd = abs(m * un ** 2 + E - f.inner(u)) / fn ** 2
    return ResolventSolveResult(u, res.iterations, res.residual, res.converged, tol, m, fn, un, E, c1, c2, gd)


def discrete_symbol(stencil: EpsilonStencil, xi) -> float:
    """``sum_z q(z) (1 - cos xi.z) h^d`` by direct summation; constant coefficient only."""
    lam = stencil.lam
    if np.ptp(lam) != 0:
        raise ValueError("the discrete symbol is defined for constant coefficients only")
    g = stencil.grid
    z = g.offsets().reshape(-1, g.dim)
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    s = np.sum(stencil.q.ravel() * (1.0 - np.cos(z @ xi)))
    return float(lam[0, 0] * s * g.h ** g.dim)


# ---------------------------------------------------------------------------
# effective symbol


def _check_alpha(alpha):
    if not 0 < alpha < 2:
        raise ValueError("alpha must lie in (0, 2)")
    if alpha <= 0.1 or alpha >= 1.9:
        warnings.warn(f"alpha={alpha} is close to an endpoint; stable constants degrade", RuntimeWarning,
                      stacklevel=3)


def c_alpha(alpha: float) -> float:
    """``int_0^inf (1 - cos t) t^{-1-alpha} dt``.

    On ``[0, 1]`` the cosine series is integrated termwise; on ``[1, inf)`` the
    power ``t^{-1-alpha}`` integrates to ``1/alpha`` and the oscillatory part
    goes to a Fourier-weight quadrature.
    """
    if not 0 < alpha < 2:
        raise ValueError("alpha must lie in (0, 2)")
    head = math.fsum((-1) ** (k + 1) / (math.factorial(2 * k) * (2 * k - alpha)) for k in range(1, 20))
    with warnings.catch_warnings():
        # QAWF flags the slowly decaying cycles for small alpha but still meets the tolerance
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        osc, err = integrate.quad(lambda t: t ** (-1.0 - alpha), 1.0, np.inf, weight="cos", wvar=1.0,
                                  epsabs=1e-14, limlst=100)
    if not err < 1e-10:
        raise QuadratureError(f"oscillatory tail did not converge (error {err:.2e})")
    return head + 1.0 / alpha - osc


def c_alpha_closed(alpha: float) -> float:
    """Reference value ``pi / (2 Gamma(1 + alpha) sin(pi alpha / 2))``."""
    return math.pi / (2.0 * special.gamma(1.0 + alpha) * math.sin(math.pi * alpha / 2.0))


@dataclass(frozen=True)
class EffectiveSymbol:
    """``sigma(xi) = lambda_bar |xi|^alpha A(xi/|xi|)``.

    In one dimension ``A`` is the single number ``c_alpha (k(1) + k(-1))``.  In
    two dimensions ``A(phi)`` is tabulated on ``n_angular`` equispaced angles
    and evaluated through its trigonometric interpolant (``A`` is smooth and
    pi-periodic).
    """

    dim: int
    alpha: float
    lambda_bar: float
    angular: AngularDensity
    c_alpha: float
    angles: np.ndarray
    A_table: np.ndarray
    check: dict = field(default_factory=dict, compare=False)

    def A(self, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        if self.dim == 1:
            return np.full(phi.shape, float(self.A_table[0]))
        n = len(self.A_table)
        c = np.fft.rfft(self.A_table) / n
        k = np.arange(len(c))
        w = np.where((k == 0) | ((n % 2 == 0) & (k == n // 2)), 1.0, 2.0)
        ang = np.multiply.outer(phi, k)
        return np.cos(ang) @ (w * c.real) - np.sin(ang) @ (w * c.imag)

    def __call__(self, xi) -> np.ndarray:
        return effective_symbol(xi, self)

    def scaled(self, c: float) -> "EffectiveSymbol":
        return EffectiveSymbol(self.dim, self.alpha, self.lambda_bar * c, self.angular, self.c_alpha,
                               self.angles, self.A_table, dict(self.check))


def effective_symbol(xi, sym: EffectiveSymbol) -> np.ndarray:
    """``sigma`` at frequencies ``xi`` (last axis of length ``d``; bare scalars in 1-D)."""
    xi = np.asarray(xi, dtype=float)
    if sym.dim == 1 and (xi.ndim == 0 or xi.shape[-1] != 1):
        xi = xi[..., None]
    if sym.dim == 1:
        r = np.abs(xi[..., 0])
        return sym.lambda_bar * sym.A_table[0] * r ** sym.alpha
    r = np.hypot(xi[..., 0], xi[..., 1])
    phi = np.arctan2(xi[..., 1], xi[..., 0])
    out = sym.lambda_bar * r ** sym.alpha * sym.A(phi)
    return np.where(r > 0, out, 0.0)


def _angular_factor(k: AngularDensity, alpha: float, ca: float, phi: float) -> float:
    """``c_alpha int_0^{2 pi} k(theta) |cos(theta - phi)|^alpha d theta``."""
    kinks = sorted(((phi + s * math.pi / 2) % (2 * math.pi)) for s in (-1, 1))
    f = lambda t: float(k(unit_vector(t))) * abs(math.cos(t - phi)) ** alpha
    val, err = integrate.quad(f, 0.0, 2 * math.pi, points=kinks, epsabs=0.0, epsrel=1e-13, limit=400)
    return ca * val


def init_symbol(alpha: float, lambda_bar: float, k: AngularDensity, n_angular: int = 64,
                cross_check: bool = True, n_check: int = 3, seed: int = 0) -> EffectiveSymbol:
    """Precompute the effective symbol and verify it against :func:`symbol_by_quadrature`."""
    _check_alpha(alpha)
    if lambda_bar <= 0:
        raise ValueError("lambda_bar must be positive")
    ca = c_alpha(alpha)
    if k.dim == 1:
        angles = np.array([0.0])
        table = np.array([ca * (float(k(np.array([[1.0]]))[0]) + float(k(np.array([[-1.0]]))[0]))])
    else:
        if n_angular < 16:
            raise ValueError("n_angular must be >= 16 in two dimensions")
        angles = 2 * math.pi * np.arange(n_angular) / n_angular
        if n_angular % 2 == 0:
            # A(phi + pi) = A(phi)
            half = [_angular_factor(k, alpha, ca, p) for p in angles[: n_angular // 2]]
            table = np.array(half + half)
        else:
            table = np.array([_angular_factor(k, alpha, ca, p) for p in angles])
    sym = EffectiveSymbol(k.dim, alpha, float(lambda_bar), k, ca, angles, table)
    if cross_check:
        tol = 1e-4 if (alpha <= 0.1 or alpha >= 1.9) else 1e-6
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_check):
            xi = rng.uniform(-10, 10, size=k.dim)
            ref = symbol_by_quadrature(xi, alpha, lambda_bar, k)
            got = float(effective_symbol(xi, sym))
            worst = max(worst, abs(got - ref) / abs(ref))
        sym.check.update({"worst_relative": worst, "tolerance": tol, "n_check": n_check, "seed": seed})
        if worst > tol:
            raise SymbolCheckError(f"symbol disagrees with direct quadrature: relative error {worst:.2e} > {tol}")
    return sym


def _radial_J(a: float, alpha: float) -> float:
    """``int_0^inf (1 - cos(a r)) r^{-1-alpha} dr`` by direct quadrature in ``r``."""
    if a == 0:
        return 0.0
    X = 40.0 * math.pi / a
    # 1 - cos(ar) = r^2 * smooth, so the bounded part carries the algebraic weight r^{1-alpha}
    def smooth(r):
        return 2.0 * (math.sin(0.5 * a * r) / r) ** 2 if r > 0 else 0.5 * a * a

    near, _ = integrate.quad(smooth, 0.0, X, weight="alg", wvar=(1.0 - alpha, 0.0),
                             epsabs=0.0, epsrel=1e-13, limit=1000)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        osc, _ = integrate.quad(lambda r: r ** (-1.0 - alpha), X, np.inf, weight="cos", wvar=a,
                                epsabs=1e-15, limlst=200)
    return near + X ** (-alpha) / alpha - osc


def symbol_by_quadrature(xi, alpha: float, lambda_bar: float, k: AngularDensity) -> float:
    """``lambda_bar int (1 - cos xi.z) k(z/|z|) |z|^{-d-alpha} dz`` by brute-force quadrature."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    r = float(np.linalg.norm(xi))
    if r == 0:
        return 0.0
    if k.dim == 1:
        kk = float(k(np.array([[1.0]]))[0]) + float(k(np.array([[-1.0]]))[0])
        return lambda_bar * kk * _radial_J(r, alpha)
    e = xi / r
    phi = math.atan2(e[1], e[0])
    kinks = sorted(((phi + s * math.pi / 2) % (2 * math.pi)) for s in (-1, 1))

    def g(t):
        proj = abs(math.cos(t) * e[0] + math.sin(t) * e[1])
        return float(k(unit_vector(t))) * _radial_J(r * proj, alpha)

    val, _ = integrate.quad(g, 0.0, 2 * math.pi, points=kinks, epsabs=0.0, epsrel=1e-11, limit=400)
    return lambda_bar * val


# ---------------------------------------------------------------------------
# effective solves


def grid_symbol(grid: TorusGrid, sym: EffectiveSymbol) -> np.ndarray:
    return effective_symbol(grid.frequencies(), sym)


def solve_effective(grid: TorusGrid, m: float, f: DiscreteField, sym: EffectiveSymbol) -> DiscreteField:
    """``u = F^{-1}[ f^ / (m + sigma) ]`` on the dual lattice."""
    if not m > 0:
        raise ValueError("m must be positive")
    if f.grid != grid:
        raise ValueError("f lives on a different grid")
    denom = m + grid_symbol(grid, sym)
    assert np.all(denom > 0)
    u = np.fft.ifftn(np.fft.fftn(f.values) / denom)
    fn = float(np.linalg.norm(f.values))
    if np.max(np.abs(u.imag)) > 1e-12 * max(fn, 1e-300):
        raise ArithmeticError("effective solution has a non-negligible imaginary part")
    return DiscreteField(grid, u.real)


def apply_effective(u: DiscreteField, sym: EffectiveSymbol) -> DiscreteField:
    """``L^0 u`` through the symbol (``-sigma`` multiplier)."""
    s = grid_symbol(u.grid, sym)
    return DiscreteField(u.grid, np.fft.ifftn(-s * np.fft.fftn(u.values)).real)


def apply_effective_quadrature(u: DiscreteField, sym: EffectiveSymbol, pv_radius: Optional[float] = None,
                               R_img: int = 8, n_gauss: int = 8) -> DiscreteField:
    """``L^0 u`` by direct quadrature of the singular integral.

    Pairs ``+z`` and ``-z`` share a weight, so each offset enters through
    ``u(x+z) + u(x-z) - 2 u(x)``.  Cells with ``|z| < pv_radius`` are weighted by
    ``int_cell kappa |z|^2 / |z_c|^2`` (the second difference divided by
    ``|z|^2`` being the smooth factor); the cell at the origin contributes its
    second moment times the discrete Hessian.
    """
    g = u.grid
    d, h, T = g.dim, g.h, g.T
    pv_radius = 32 * h if pv_radius is None else float(pv_radius)
    if pv_radius < 2 * h:
        raise ValueError("pv_radius must be at least 2h")
    alpha, lb = sym.alpha, sym.lambda_bar
    kfun = sym.angular

    def kappa(z):
        rr = np.linalg.norm(z, axis=-1)
        return lb * kfun(z / rr[..., None]) * rr ** (-d - alpha)

    z0 = g.offsets().reshape(-1, d)
    w = np.zeros(len(z0))
    rng = range(-R_img, R_img + 1)
    images = [(n,) for n in rng] if d == 1 else [(a, b) for a in rng for b in rng]
    for n in images:
        if not any(n):
            continue
        w += kappa(z0 + T * np.asarray(n, dtype=float))
    A = (R_img + 0.5) * T
    if d == 1:
        w += lb * (float(kfun(np.array([[1.0]]))[0]) + float(kfun(np.array([[-1.0]]))[0])) / (alpha * A ** alpha) / T
    else:
        tail, _ = integrate.quad(lambda t: float(kfun(unit_vector(t))) * (A / max(abs(math.cos(t)), abs(math.sin(t)))) ** (-alpha) / alpha,
                                 0, 2 * math.pi, points=[j * math.pi / 4 for j in range(1, 8)], limit=200)
        w += lb * tail / T ** 2
    w *= h ** d

    rad = np.linalg.norm(z0, axis=1)
    main = rad > 0
    near = main & (rad < pv_radius)
    w[main & ~near] += kappa(z0[main & ~near]) * h ** d
    if np.any(near):
        x, gw = np.polynomial.legendre.leggauss(n_gauss)
        x, gw = 0.5 * h * x, 0.5 * h * gw
        if d == 1:
            pts = z0[near][:, None, :] + x[None, :, None]
            wts = gw[None, :]
        else:
            a, b = np.meshgrid(x, x, indexing="ij")
            pts = z0[near][:, None, :] + np.stack([a.ravel(), b.ravel()], axis=-1)[None]
            wts = np.outer(gw, gw).ravel()[None, :]
        moment = np.sum(kappa(pts) * np.sum(pts ** 2, axis=-1) * wts, axis=1)
        w[near] += moment / rad[near] ** 2

    out = np.fft.ifftn(np.fft.fftn(w.reshape(g.shape)) * np.fft.fftn(u.values)).real
    out -= np.sum(w) * u.values

    # origin cell: (1/2) sum_ij M_ij d_i d_j u with M_ij = int_cell kappa z_i z_j
    M = _zero_cell_moments(sym, h)
    vals = u.values
    for i in range(d):
        for j in range(d):
            if M[i, j] == 0:
                continue
            if i == j:
                D = (np.roll(vals, -1, i) - 2 * vals + np.roll(vals, 1, i)) / h ** 2
            else:
                D = (np.roll(np.roll(vals, -1, i), -1, j) - np.roll(np.roll(vals, -1, i), 1, j)
                     - np.roll(np.roll(vals, 1, i), -1, j) + np.roll(np.roll(vals, 1, i), 1, j)) / (4 * h ** 2)
            out = out + 0.5 * M[i, j] * D
    return DiscreteField(g, out)


def _zero_cell_moments(sym: EffectiveSymbol, h: float) -> np.ndarray:
    d, alpha, lb, k = sym.dim, sym.alpha, sym.lambda_bar, sym.angular
    if d == 1:
        kk = float(k(np.array([[1.0]]))[0]) + float(k(np.array([[-1.0]]))[0])
        return np.array([[lb * kk * (0.5 * h) ** (2 - alpha) / (2 - alpha)]])
    M = np.zeros((2, 2))
    pts = [j * math.pi / 4 for j in range(1, 8)]
    for i in range(2):
        for j in range(i, 2):
            def f(t, i=i, j=j):
                e = (math.cos(t), math.sin(t))
                R = 0.5 * h / max(abs(e[0]), abs(e[1]))
                return float(k(unit_vector(t))) * e[i] * e[j] * R ** (2 - alpha) / (2 - alpha)
            M[i, j] = M[j, i] = lb * integrate.quad(f, 0, 2 * math.pi, points=pts, limit=200)[0]
    return M

"""Torus discretization of the rescaled nonlocal operator.

The operator acts on T-periodic grid functions as

    (L u)_i = sum_j Lambda(x_i/eps, x_j/eps) q(x_i - x_j) (u_j - u_i) h^d,

where ``q`` is the rescaled density summed over the lattice images ``z + T n``.
Because ``T/eps`` and ``eps/h`` are integers, ``Lambda(x_i/eps, x_j/eps)``
only depends on the residues of ``i`` and ``j`` modulo ``rho = eps/h``, so the
weights factor into an offset table ``q`` and a small ``rho^d x rho^d`` table.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy import integrate

from .coefficients import PeriodicCoefficient
from .kernels import SLOWLY_VARYING, JumpKernel, mass_outside_box, rescaled_density, sphere_measure


class GridError(ValueError):
    pass


class CommensurabilityError(ValueError):
    pass


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid with ``N`` points per axis on the torus of side ``T``.

    Studies use powers of two; single solves accept any even ``N >= 4`` so that
    rational ``eps`` such as ``1/3`` remain usable.
    """

    dim: int
    T: float
    N: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise GridError("dimension must be 1 or 2")
        if self.N < 4 or self.N % 2:
            raise GridError("N must be an even integer >= 4")
        if not self.T > 0:
            raise GridError("T must be positive")

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.dim

    @property
    def size(self) -> int:
        return self.N ** self.dim

    @property
    def power_of_two(self) -> bool:
        return _is_pow2(self.N)

    def axis(self) -> np.ndarray:
        return np.arange(self.N) * self.h

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (dim,)``."""
        ax = self.axis()
        if self.dim == 1:
            return ax[:, None]
        return np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1)

    def offsets(self) -> np.ndarray:
        """Signed minimal-image offsets ``k h`` with ``k`` in ``[-N/2, N/2)``, in FFT order."""
        k = np.fft.fftfreq(self.N, d=1.0 / self.N)
        ax = k * self.h
        if self.dim == 1:
            return ax[:, None]
        return np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1)

    def frequencies(self) -> np.ndarray:
        """Dual lattice ``(2 pi / T) k`` in FFT order, shape ``shape + (dim,)``."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.h)
        if self.dim == 1:
            return k[:, None]
        return np.stack(np.meshgrid(k, k, indexing="ij"), axis=-1)

    def describe(self) -> dict:
        return {"dim": self.dim, "T": self.T, "N": self.N, "h": self.h}


@dataclass(frozen=True)
class DiscreteField:
    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size != self.grid.size:
            raise GridError(f"field has {v.size} values, grid needs {self.grid.size}")
        object.__setattr__(self, "values", v.reshape(self.grid.shape))

    def inner(self, other: "DiscreteField") -> float:
        _same_grid(self.grid, other.grid)
        return float(np.vdot(self.values, other.values)) * self.grid.h ** self.grid.dim

    def norm(self) -> float:
        return math.sqrt(self.inner(self))

    def __add__(self, other):
        _same_grid(self.grid, other.grid)
        return DiscreteField(self.grid, self.values + other.values)

    def __sub__(self, other):
        _same_grid(self.grid, other.grid)
        return DiscreteField(self.grid, self.values - other.values)

    def __mul__(self, c: float):
        return DiscreteField(self.grid, c * self.values)

    __rmul__ = __mul__

    def subsample(self, grid: TorusGrid) -> "DiscreteField":
        """Restriction to a coarser grid of the same torus whose nodes are a subset."""
        if grid.T != self.grid.T or grid.dim != self.grid.dim or self.grid.N % grid.N:
            raise GridError("target grid must be a coarsening of this grid")
        step = self.grid.N // grid.N
        sl = (slice(None, None, step),) * grid.dim
        return DiscreteField(grid, self.values[sl])


def _same_grid(a: TorusGrid, b: TorusGrid):
    if a != b:
        raise GridError(f"grid mismatch: {a} vs {b}")


def constant_field(grid: TorusGrid, c: float = 1.0) -> DiscreteField:
    return DiscreteField(grid, np.full(grid.shape, float(c)))


# ---------------------------------------------------------------------------
# field files

FIELD_MAGIC = b"NLHF"
_HEADER = struct.Struct("<4sIIdd")


def write_field(path, u: DiscreteField, eps: Optional[float] = None) -> None:
    """Binary layout: little-endian header (magic, d, N, T, eps) then C-order float64 values."""
    e = float("nan") if eps is None else float(eps)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FIELD_MAGIC, u.grid.dim, u.grid.N, float(u.grid.T), e))
        fh.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())


def read_field(path):
    """Returns ``(field, eps)``; ``eps`` is ``None`` for fields without one."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError("truncated field header")
        magic, d, n, T, e = _HEADER.unpack(head)
        if magic != FIELD_MAGIC:
            raise ValueError("not a field file")
        grid = TorusGrid(d, T, n)
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != grid.size:
        raise ValueError(f"payload has {data.size} values, header says {grid.size}")
    return DiscreteField(grid, data.astype(float)), (None if math.isnan(e) else e)


def write_field_csv(path, u: DiscreteField) -> None:
    x = u.grid.coords().reshape(-1, u.grid.dim)
    names = ["x", "y"][: u.grid.dim]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["u"])
        for pt, val in zip(x, u.values.ravel()):
            w.writerow([repr(float(c)) for c in pt] + [repr(float(val))])


# ---------------------------------------------------------------------------
# stencil


def commensurate(T: float, eps) -> tuple:
    """Check ``T/eps`` is a positive integer; returns ``(n_cells, eps_fraction)``."""
    ef = Fraction(eps).limit_denominator(1 << 20) if not isinstance(eps, Fraction) else eps
    if abs(float(ef) - float(eps)) > 1e-14 * abs(float(eps)):
        raise CommensurabilityError(f"eps={eps} is not a simple rational")
    tf = Fraction(T).limit_denominator(1 << 20)
    ratio = tf / ef
    if ratio.denominator != 1 or ratio <= 0:
        raise CommensurabilityError(f"T/eps must be a positive integer, got T={T}, eps={eps} (T/eps={float(ratio):g})")
    return int(ratio), ef


def grid_for(dim: int, T: float, eps, rho: int) -> TorusGrid:
    n_cells, _ = commensurate(T, eps)
    return TorusGrid(dim, float(T), n_cells * int(rho))


@dataclass(frozen=True)
class EpsilonStencil:
    """Weights ``Lambda(x/eps, y/eps) q(x - y)`` of the discrete operator.

    ``q`` is indexed by offset in FFT order (``q[k]`` for ``x_i - x_j = k h``
    modulo the torus); ``lam`` is the ``rho^d x rho^d`` table of coefficient
    values on residues.  ``tail_correction`` is the constant added to ``q`` for
    images beyond ``R_img``; ``tail_fraction`` bounds the truncated jump mass
    relative to the total.
    """

    grid: TorusGrid
    eps: float
    rho: int
    q: np.ndarray
    lam: np.ndarray
    R_img: int
    tail_correction: float
    tail_fraction: float
    backend: str
    kernel_info: dict = field(default_factory=dict)
    coeff_info: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def residues(self) -> np.ndarray:
        """Flat residue index of every node, shape ``grid.shape``."""
        r = np.arange(self.grid.N) % self.rho
        if self.grid.dim == 1:
            return r
        return r[:, None] * self.rho + r[None, :]

    def dense_matrix(self) -> np.ndarray:
        """``W_ij = Lambda q h^d`` as an ``N^d x N^d`` array (cached)."""
        if "W" not in self._cache:
            g = self.grid
            if g.dim == 1:
                idx = (np.arange(g.N)[:, None] - np.arange(g.N)[None, :]) % g.N
                qq = self.q[idx]
            else:
                i = np.arange(g.N)
                di = (i[:, None] - i[None, :]) % g.N
                qq = self.q[di[:, None, :, None], di[None, :, None, :]].reshape(g.size, g.size)
            res = self.residues.ravel()
            W = self.lam[res[:, None], res[None, :]] * qq * g.h ** g.dim
            self._cache["W"] = W
            self._cache["rowsum"] = W.sum(axis=1)
        return self._cache["W"]

    def lowrank(self):
        """Eigen-factorization ``lam = V diag(w) V^T`` restricted to non-negligible modes."""
        if "lr" not in self._cache:
            w, V = np.linalg.eigh(self.lam)
            keep = np.abs(w) > 1e-14 * np.max(np.abs(w))
            self._cache["lr"] = (w[keep], V[:, keep])
            self._cache["qhat"] = np.fft.fftn(self.q) * self.grid.h ** self.grid.dim
        return self._cache["lr"]

    def _convolve_modes(self, u: np.ndarray) -> np.ndarray:
        """``sum_j W_ij u_j`` via FFT convolutions, one per retained eigenmode."""
        w, V = self.lowrank()
        qhat = self._cache["qhat"]
        res = self.residues
        out = np.zeros(self.grid.shape)
        for lam_k, v in zip(w, V.T):
            phi = v[res]
            conv = np.fft.ifftn(qhat * np.fft.fftn(phi * u)).real
            out += lam_k * phi * conv
        return out

    def rowsum(self) -> np.ndarray:
        if "rowsum" not in self._cache:
            if self.backend == "dense":
                self.dense_matrix()
            else:
                self._cache["rowsum"] = self._convolve_modes(np.ones(self.grid.shape))
        return self._cache["rowsum"]

    def describe(self) -> dict:
        return {"eps": self.eps, "rho": self.rho, "grid": self.grid.describe(), "R_img": self.R_img,
                "tail_correction": self.tail_correction, "tail_fraction": self.tail_fraction,
                "backend": self.backend}


DENSE_LIMIT = 4096


def _cell_average(kernel, eps, mode, z, h, s, dim):
    sub = (np.arange(s) + 0.5) / s - 0.5
    if dim == 1:
        pts = z[:, None, :] + (sub * h)[None, :, None]
    else:
        a, b = np.meshgrid(sub, sub, indexing="ij")
        shift = np.stack([a.ravel(), b.ravel()], axis=-1) * h
        pts = z[:, None, :] + shift[None, :, :]
    return rescaled_density(kernel, eps, pts, mode).mean(axis=1)


def assemble_stencil(grid: TorusGrid, kernel: JumpKernel, coeff: PeriodicCoefficient, eps,
                     R_img: int = 8, subsamples: int = 4, tail_cap: float = 0.5,
                     backend: Optional[str] = None) -> EpsilonStencil:
    """Tabulate the weights of the discrete operator at scale ``eps``.

    Offsets within ``(core + h sqrt(d)) eps`` of an image of the origin are
    cell-averaged with ``subsamples^d`` points, the rest use the midpoint.
    Images with ``|n|_inf > R_img`` are replaced by their mean value
    ``(1/T^d) int_{|y|_inf > (R_img + 1/2) T} eps^{-d-alpha} p(y/eps) dy``.
    """
    if kernel.dim != grid.dim or coeff.dim != grid.dim:
        raise GridError("kernel, coefficient and grid dimensions differ")
    if R_img < 1:
        raise ValueError("R_img must be >= 1")
    n_cells, ef = commensurate(grid.T, eps)
    rho_f = Fraction(grid.N, n_cells)
    if rho_f.denominator != 1:
        raise CommensurabilityError(f"eps/h must be an integer, got {float(rho_f):g} (N={grid.N}, T/eps={n_cells})")
    rho = int(rho_f)
    eps = float(ef)
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    d, T, h = grid.dim, grid.T, grid.h

    z0 = grid.offsets().reshape(-1, d)
    near_r = max(1.0, kernel.core_radius, *kernel.breakpoints) * eps + h * math.sqrt(d)
    q = np.zeros(len(z0))
    rng = range(-R_img, R_img + 1)
    images = [(n,) for n in rng] if d == 1 else [(a, b) for a in rng for b in rng]
    for n in images:
        z = z0 + T * np.asarray(n, dtype=float)
        val = rescaled_density(kernel, eps, z)
        near = np.linalg.norm(z, axis=1) <= near_r
        if subsamples > 1 and np.any(near):
            val[near] = _cell_average(kernel, eps, kernel.mode, z[near], h, subsamples, d)
        q += val

    A = (R_img + 0.5) * T / eps
    scale = eps ** (-kernel.alpha)
    if kernel.mode == SLOWLY_VARYING:
        scale /= float(kernel.slowly_varying(1.0 / eps))
    correction = scale * mass_outside_box(kernel, A) / T ** d
    q += correction
    # fraction of jump mass beyond the explicit image box (power-law envelope bound)
    bound = kernel.beta2 * sphere_measure(d) / (kernel.alpha * (R_img * T / eps) ** kernel.alpha)
    if kernel.mode == SLOWLY_VARYING:
        bound *= float(kernel.slowly_varying(R_img * T / eps)) / float(kernel.slowly_varying(1.0 / eps))
    if bound > tail_cap:
        raise ValueError(f"image tail fraction {bound:.3g} exceeds cap {tail_cap}; increase R_img or T")

    q = q.reshape(grid.shape)
    neg = (-np.arange(grid.N)) % grid.N
    q = 0.5 * (q + q[np.ix_(*([neg] * d))])
    q.flat[0] = 0.0

    r = np.arange(rho) / rho
    if d == 1:
        res_pts = r[:, None]
    else:
        a, b = np.meshgrid(r, r, indexing="ij")
        res_pts = np.stack([a.ravel(), b.ravel()], axis=-1)
    lam = coeff(res_pts[:, None, :], res_pts[None, :, :])
    lam = 0.5 * (lam + lam.T)

    if backend is None:
        backend = "dense" if grid.size <= DENSE_LIMIT else "fft"
    if backend not in ("dense", "fft"):
        raise ValueError(f"unknown backend {backend!r}")
    return EpsilonStencil(grid=grid, eps=eps, rho=rho, q=q, lam=lam, R_img=R_img,
                          tail_correction=float(correction), tail_fraction=float(bound), backend=backend,
                          kernel_info=kernel.describe(), coeff_info=coeff.describe())


def apply_operator(stencil: EpsilonStencil, u: DiscreteField) -> DiscreteField:
    """``(L u)_i = sum_j W_ij (u_j - u_i)``."""
    _same_grid(stencil.grid, u.grid)
    if stencil.backend == "dense":
        W = stencil.dense_matrix()
        flat = u.values.ravel()
        v = W @ flat - stencil.rowsum() * flat
        return DiscreteField(u.grid, v)
    v = stencil._convolve_modes(u.values) - stencil.rowsum() * u.values
    return DiscreteField(u.grid, v)


def energy_form(stencil: EpsilonStencil, u: DiscreteField) -> float:
    """``(1/2) sum_ij W_ij (u_i - u_j)^2 h^d``, summed pairwise (dense) or by offsets."""
    _same_grid(stencil.grid, u.grid)
    g = stencil.grid
    hd = g.h ** g.dim
    if stencil.backend == "dense":
        W = stencil.dense_matrix()
        flat = u.values.ravel()
        total = 0.0
        # row blocks keep memory bounded; fixed block order keeps the sum reproducible
        for s in range(0, len(flat), 512):
            diff = flat[s:s + 512, None] - flat[None, :]
            total += float(np.sum(W[s:s + 512] * diff * diff))
        return 0.5 * total * hd
    # sum_i rowsum_i u_i^2 - sum_ij W_ij u_i u_j
    return float(np.sum(stencil.rowsum() * u.values ** 2) - np.sum(u.values * stencil._convolve_modes(u.values))) * hd


def translation_modulus(u: DiscreteField, shift) -> float:
    """``h^d sum_i (u_{i+shift} - u_i)^2`` on the torus."""
    g = u.grid
    shift = tuple(int(s) for s in np.atleast_1d(shift))
    if len(shift) != g.dim:
        raise GridError("shift must have one entry per axis")
    moved = np.roll(u.values, tuple(-s for s in shift), axis=tuple(range(g.dim)))
    return float(np.sum((moved - u.values) ** 2)) * g.h ** g.dim


def fractional_energy_tail(u: DiscreteField, alpha: float, cutoff: float, R_img: int = 8) -> float:
    """Discrete ``int int_{|x-y| > cutoff} (u(x) - u(y))^2 |x-y|^{-d-alpha}``, image summed."""
    g = u.grid
    d = g.dim
    z0 = g.offsets().reshape(-1, d)
    rng = range(-R_img, R_img + 1)
    images = [(n,) for n in rng] if d == 1 else [(a, b) for a in rng for b in rng]
    kappa = np.zeros(len(z0))
    for n in images:
        r = np.linalg.norm(z0 + g.T * np.asarray(n, dtype=float), axis=1)
        far = r > cutoff
        kappa[far] += r[far] ** (-d - alpha)
    # remaining images by their mean, as in the stencil
    A = (R_img + 0.5) * g.T
    if d == 1:
        kappa += 2.0 / (alpha * A ** alpha) / g.T
    else:
        kappa += _box_tail_2d(alpha, A) / g.T ** 2
    kappa = kappa.reshape(g.shape)
    # sum_i (u_{i+k} - u_i)^2 = 2 |u|^2 - 2 autocorrelation(k)
    U = np.fft.fftn(u.values)
    auto = np.fft.ifftn(U * np.conj(U)).real
    sq = np.maximum(2.0 * np.sum(u.values ** 2) - 2.0 * auto, 0.0)
    return float(np.sum(kappa * sq)) * g.h ** (2 * d)


def _box_tail_2d(alpha: float, A: float) -> float:
    # int over |y|_inf > A of |y|^{-2-alpha}: by symmetry 8 times the sector theta in (0, pi/4)
    val, _ = integrate.quad(lambda t: (A / math.cos(t)) ** (-alpha) / alpha, 0.0, math.pi / 4)
    return 8.0 * val

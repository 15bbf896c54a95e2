"""Periodic 2D grid, spinor/scalar fields and Fourier-space operators.

Arrays use ``indexing='ij'``: axis -2 is x1 and axis -1 is x2.  Spinor
fields have shape ``(2, n, n)``, scalar fields ``(n, n)``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .spinor_algebra import GammaRep, cubic_nonlinearity, matvec, nonlinearity_time_derivative

FFT_WORKERS = None  # passed to scipy.fft; None means single-threaded

SNAPSHOT_MAGIC = b"DRC2"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIIIdd")  # magic, version, n, reserved, L, t -> 32 bytes


def fft2(a):
    return sfft.fft2(a, axes=(-2, -1), workers=FFT_WORKERS)


def ifft2(a):
    return sfft.ifft2(a, axes=(-2, -1), workers=FFT_WORKERS)


@dataclass(frozen=True)
class Grid2D:
    """Uniform n x n periodic grid on [-L/2, L/2)^2."""

    n: int
    length: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 16 or (self.n & (self.n - 1)) != 0:
            raise ValueError(f"n must be a power of two >= 16, got {self.n}")
        if not (self.length > 0 and math.isfinite(self.length)):
            raise ValueError(f"domain length must be positive, got {self.length}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "length", float(self.length))

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @property
    def r_floor(self) -> float:
        return self.spacing

    @property
    def cell_area(self) -> float:
        return self.spacing ** 2

    @cached_property
    def x(self) -> np.ndarray:
        return -0.5 * self.length + self.spacing * np.arange(self.n)

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        x1, x2 = np.meshgrid(self.x, self.x, indexing="ij")
        return x1, x2

    @cached_property
    def r(self) -> np.ndarray:
        x1, x2 = self.coords
        return np.hypot(x1, x2)

    @cached_property
    def origin_mask(self) -> np.ndarray:
        """True on cells closer to the origin than r_floor."""
        return self.r < self.r_floor

    @cached_property
    def omega(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit direction x/r, zero on the origin cell."""
        x1, x2 = self.coords
        r = np.where(self.origin_mask, 1.0, self.r)
        w1 = np.where(self.origin_mask, 0.0, x1 / r)
        w2 = np.where(self.origin_mask, 0.0, x2 / r)
        return w1, w2

    def seam_mask(self, width: int) -> np.ndarray:
        """True on cells within ``width`` cells of the periodic seam."""
        idx = np.arange(self.n)
        edge = (idx < width) | (idx >= self.n - width)
        return edge[:, None] | edge[None, :]

    def trusted_mask(self, seam: int = 0) -> np.ndarray:
        """Cells used for suprema: origin cell and seam band excluded."""
        m = ~self.origin_mask
        if seam > 0:
            m &= ~self.seam_mask(seam)
        return m

    @cached_property
    def k(self) -> np.ndarray:
        """Wavenumbers 2 pi k / L in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.spacing)

    @cached_property
    def kvec(self) -> tuple[np.ndarray, np.ndarray]:
        k1, k2 = np.meshgrid(self.k, self.k, indexing="ij")
        return k1, k2

    @cached_property
    def ksq(self) -> np.ndarray:
        k1, k2 = self.kvec
        return k1 ** 2 + k2 ** 2

    @cached_property
    def two_thirds_mask(self) -> np.ndarray:
        idx = np.abs(np.fft.fftfreq(self.n, d=1.0 / self.n))
        keep = idx < self.n / 3.0
        return (keep[:, None] & keep[None, :]).astype(float)

    def japanese_xi_power(self, s: float) -> np.ndarray:
        return (1.0 + self.ksq) ** (0.5 * s)

    def deriv(self, values, axis: int):
        """Spectral d/dx_axis (axis 1 or 2) of physical-space values."""
        return ifft2(self.deriv_hat(fft2(values), axis))

    def deriv_hat(self, values_hat, axis: int):
        if axis not in (1, 2):
            raise ValueError(f"axis must be 1 or 2, got {axis}")
        return 1j * self.kvec[axis - 1] * values_hat

    def l2_norm(self, values) -> float:
        return math.sqrt(self.cell_area * float(np.sum(np.abs(values) ** 2)))

    def l2_norm_hat(self, values_hat, s: float = 0.0) -> float:
        """Discrete H^s norm from unnormalised FFT coefficients (Parseval)."""
        w = np.abs(values_hat) ** 2
        if s != 0.0:
            w = w * (1.0 + self.ksq) ** s
        return math.sqrt(self.cell_area * float(np.sum(w)) / self.n ** 2)


def _readonly(values, shape, what):
    v = np.asarray(values, dtype=np.complex128)
    if v.shape != shape:
        raise ValueError(f"{what} values must have shape {shape}, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise FloatingPointError(f"{what} contains NaN or Inf")
    v = v.view()
    v.flags.writeable = False
    return v


@dataclass(frozen=True, eq=False)
class SpinorField:
    grid: Grid2D
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        n = self.grid.n
        object.__setattr__(self, "values", _readonly(self.values, (2, n, n), "spinor field"))
        if self.time < 0:
            raise ValueError("field time must be >= 0")
        object.__setattr__(self, "time", float(self.time))

    def replace(self, values, time=None) -> "SpinorField":
        return SpinorField(self.grid, values, self.time if time is None else time)

    @property
    def modulus(self) -> np.ndarray:
        v = self.values
        return np.sqrt(np.abs(v[0]) ** 2 + np.abs(v[1]) ** 2)

    def charge(self) -> float:
        """||psi||_{L^2}^2."""
        return self.grid.cell_area * float(np.sum(np.abs(self.values) ** 2))


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid2D
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        n = self.grid.n
        object.__setattr__(self, "values", _readonly(self.values, (n, n), "scalar field"))
        object.__setattr__(self, "time", float(self.time))

    def replace(self, values, time=None) -> "ScalarField":
        return ScalarField(self.grid, values, self.time if time is None else time)

    @property
    def modulus(self) -> np.ndarray:
        return np.abs(self.values)


def _check_same_grid(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise ValueError(f"grid mismatch: {g} vs {f.grid}")
    return g


def spatial_derivative(f, axis: int):
    """Spectral partial derivative along x1 (axis=1) or x2 (axis=2)."""
    return f.replace(f.grid.deriv(f.values, axis))


# --------------------------------------------------------------------------
# time derivatives from the equation

def linear_dirac_rhs(values, grid: Grid2D, rep: GammaRep, mass: float):
    """-g0 g^a d_a psi + i m g0 psi (physical-space arrays)."""
    a1, a2 = rep.alpha
    vh = fft2(values)
    rhs_hat = -(matvec(a1, grid.deriv_hat(vh, 1)) + matvec(a2, grid.deriv_hat(vh, 2)))
    out = ifft2(rhs_hat)
    if mass:
        out = out + 1j * mass * matvec(rep.gamma0, values)
    return out


def time_jet(values, grid: Grid2D, rep: GammaRep, mass: float, order: int):
    """[psi, d_t psi, ..., d_t^order psi] from the equation, no finite differencing."""
    jet = [np.asarray(values, dtype=np.complex128)]
    g0 = rep.gamma0
    for k in range(order):
        nxt = linear_dirac_rhs(jet[k], grid, rep, mass)
        nxt = nxt - 1j * matvec(g0, nonlinearity_time_derivative(rep, jet, k))
        jet.append(nxt)
    return jet


def time_derivative(psi: SpinorField, rep: GammaRep, mass: float = 0.0) -> SpinorField:
    """d_t psi = -g0 g^a d_a psi + i m g0 psi - i g0 F(psi)."""
    if mass < 0:
        raise ValueError("mass must be >= 0")
    v = psi.values
    rhs = linear_dirac_rhs(v, psi.grid, rep, mass) - 1j * matvec(rep.gamma0, cubic_nonlinearity(rep, v))
    return psi.replace(rhs)


# --------------------------------------------------------------------------
# vector fields acting on time jets

VECTOR_FIELD_NAMES = ("d_t", "d_1", "d_2", "L_1", "L_2", "Omega_12", "L_0")


def _hat_matrix(k: int, rep: GammaRep):
    if k in (4, 5):
        return 0.5 * rep.alpha[k - 4]
    if k == 6:
        return 0.5 * rep.spin12
    return None


def vector_field_jet(k: int, jet, t: float, grid: Grid2D, rep: GammaRep | None = None,
                     hatted: bool = False):
    """Apply Gamma_k (or its modified version) to a time jet.

    ``jet`` is ``[u, d_t u, ..., d_t^m u]``; the result is the jet of
    Gamma_k u truncated to length m.  Indices follow the ordering
    (d_t, d_1, d_2, L_1, L_2, Omega_12, L_0) with k = 1..7.
    """
    if k not in range(1, 8):
        raise ValueError(f"vector field index must be in 1..7, got {k!r}")
    m = len(jet) - 1
    if m < 1:
        raise ValueError("need at least one time derivative in the jet")
    x1, x2 = grid.coords
    xs = (x1, x2)
    if hatted and rep is None and k in (4, 5, 6):
        raise ValueError("hatted vector fields need a GammaRep")
    hat = _hat_matrix(k, rep) if hatted else None
    spinor = np.ndim(jet[0]) == 3
    if hat is not None and not spinor:
        raise ValueError("modified vector fields act on spinor fields only")

    dcache = {}

    def d(j, a):
        key = (j, a)
        if key not in dcache:
            dcache[key] = grid.deriv(jet[j], a)
        return dcache[key]

    out = []
    for j in range(m):
        if k == 1:
            v = jet[j + 1]
        elif k in (2, 3):
            v = d(j, k - 1)
        elif k in (4, 5):
            a = k - 3
            v = xs[a - 1] * jet[j + 1] + t * d(j, a)
            if j > 0:
                v = v + j * d(j - 1, a)
        elif k == 6:
            v = x1 * d(j, 2) - x2 * d(j, 1)
        else:
            v = t * jet[j + 1] + j * jet[j] + x1 * d(j, 1) + x2 * d(j, 2)
        if hat is not None:
            v = v - matvec(hat, jet[j])
        out.append(v)
    return out


def apply_vector_field(k: int, psi, dpsi_dt, hatted: bool = False, rep: GammaRep | None = None):
    """Gamma_k psi (or hat-Gamma_k psi) at time ``psi.time`` given d_t psi."""
    grid = _check_same_grid(psi, dpsi_dt)
    res = vector_field_jet(k, [psi.values, dpsi_dt.values], psi.time, grid, rep, hatted)
    return psi.replace(res[0])


def good_derivative(a: int, f, df_dt):
    """G_a f = (x_a/r) d_t f + d_a f; on the origin cell only d_a f is kept."""
    if a not in (1, 2):
        raise ValueError(f"a must be 1 or 2, got {a}")
    grid = _check_same_grid(f, df_dt)
    w = grid.omega[a - 1]
    return f.replace(w * df_dt.values + grid.deriv(f.values, a))


# --------------------------------------------------------------------------
# norms

def sobolev_norm(f, order: float = 0.0) -> float:
    """Discrete H^s norm with multiplier <xi>^s; s = 0 is the L^2 norm with cell weight h^2."""
    if order < 0:
        raise ValueError("Sobolev order must be >= 0")
    return f.grid.l2_norm_hat(fft2(f.values), order)


def japanese(z):
    return np.sqrt(1.0 + np.square(z))


def decay_weight(grid: Grid2D, t: float, alpha: float, beta: float) -> np.ndarray:
    r = grid.r
    return japanese(t + r) ** alpha * japanese(t - r) ** beta


def weighted_sup(f, alpha: float, beta: float, seam: int = 0):
    """max over trusted cells of <t+r>^alpha <t-r>^beta |f|, and its location (x1, x2)."""
    grid = f.grid
    w = decay_weight(grid, f.time, alpha, beta) * f.modulus
    w = np.where(grid.trusted_mask(seam), w, -np.inf)
    idx = np.unravel_index(int(np.argmax(w)), w.shape)
    x1, x2 = grid.coords
    return float(w[idx]), (float(x1[idx]), float(x2[idx]))


# --------------------------------------------------------------------------
# binary snapshots

def write_snapshot(path, field: SpinorField) -> None:
    g = field.grid
    header = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, g.n, 0, g.length, field.time)
    data = np.ascontiguousarray(np.moveaxis(field.values, 0, -1), dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


def read_snapshot(path) -> SpinorField:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, n, _, length, t = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    expected = _HEADER.size + n * n * 2 * 16
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size).reshape(n, n, 2)
    return SpinorField(Grid2D(n, length), np.moveaxis(data, -1, 0).astype(np.complex128), t)

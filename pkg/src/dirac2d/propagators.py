"""Exact per-mode flows: the linear Dirac group and the driven wave/Klein-Gordon flow."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grid import Grid2D, SpinorField, fft2, ifft2
from .spinor_algebra import GammaRep, make_default_rep, matvec


def _sinc_ratio(omega, t):
    """sin(omega t) / omega with the omega -> 0 limit t."""
    out = np.full(np.shape(omega), float(t))
    nz = omega != 0.0
    out[nz] = np.sin(omega[nz] * t) / omega[nz]
    return out


@dataclass(frozen=True, eq=False)
class DiracSymbol:
    """M(xi) = xi_a g0 g^a - m g0 and omega(xi) = sqrt(|xi|^2 + m^2) on every grid mode.

    The three independent entries of M are stored as arrays so that
    ``apply`` is a handful of elementwise products.
    """

    grid: Grid2D
    rep: GammaRep
    mass: float = 0.0

    def __post_init__(self):
        if self.mass < 0:
            raise ValueError("mass must be >= 0")

    @cached_property
    def matrix(self) -> np.ndarray:
        """M as a (2, 2, n, n) array."""
        k1, k2 = self.grid.kvec
        a1, a2 = self.rep.alpha
        g0 = self.rep.gamma0
        return (a1[:, :, None, None] * k1 + a2[:, :, None, None] * k2
                - self.mass * g0[:, :, None, None])

    @cached_property
    def omega(self) -> np.ndarray:
        return np.sqrt(self.grid.ksq + self.mass ** 2)

    def apply_matrix(self, v_hat):
        m = self.matrix
        return np.stack([m[0, 0] * v_hat[0] + m[0, 1] * v_hat[1],
                         m[1, 0] * v_hat[0] + m[1, 1] * v_hat[1]])

    def exp_factors(self, dt: float):
        """(cos(dt omega), sin(dt omega)/omega) for e^{-i dt M}."""
        return np.cos(dt * self.omega), _sinc_ratio(self.omega, dt)

    def flow_hat(self, v_hat, dt: float, factors=None):
        """e^{-i dt M(xi)} v_hat, per mode, via cos/sinc closed form."""
        if dt == 0.0:
            return np.array(v_hat, dtype=np.complex128, copy=True)
        c, s = self.exp_factors(dt) if factors is None else factors
        return c * v_hat - 1j * s * self.apply_matrix(v_hat)

    def square_residual(self) -> float:
        """max |M^2 - omega^2 I| over all modes."""
        m = self.matrix
        sq = np.einsum("ij...,jk...->ik...", m, m)
        eye = np.eye(2)[:, :, None, None]
        return float(np.max(np.abs(sq - eye * self.omega ** 2)))


_SYMBOLS: dict = {}


def dirac_symbol(grid: Grid2D, rep: GammaRep | None = None, mass: float = 0.0) -> DiracSymbol:
    rep = make_default_rep() if rep is None else rep
    key = (grid, id(rep), float(mass))
    sym = _SYMBOLS.get(key)
    if sym is None or sym.rep is not rep:
        sym = DiracSymbol(grid, rep, float(mass))
        if len(_SYMBOLS) > 8:
            _SYMBOLS.clear()
        _SYMBOLS[key] = sym
    return sym


def dirac_flow(psi: SpinorField, dt: float, mass: float = 0.0, rep: GammaRep | None = None) -> SpinorField:
    """S(dt) psi, the free Dirac evolution (massive when mass > 0)."""
    sym = dirac_symbol(psi.grid, rep, mass)
    if dt == 0.0:
        return psi.replace(psi.values.copy(), psi.time)
    out = ifft2(sym.flow_hat(fft2(psi.values), dt))
    return psi.replace(out, max(psi.time + dt, 0.0))


def dirac_flow_inverse(psi: SpinorField, dt: float, mass: float = 0.0,
                       rep: GammaRep | None = None) -> SpinorField:
    """S(-dt) psi."""
    return dirac_flow(psi, -dt, mass, rep)


# --------------------------------------------------------------------------
# wave companion

@dataclass(frozen=True, eq=False)
class WaveState:
    """(Psi, d_t Psi) stored as unnormalised FFT coefficients, shape (2, n, n) each."""

    grid: Grid2D
    psi_hat: np.ndarray
    dpsi_hat: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        for name in ("psi_hat", "dpsi_hat"):
            v = np.asarray(getattr(self, name), dtype=np.complex128)
            if v.shape != (2, self.grid.n, self.grid.n):
                raise ValueError(f"{name} has shape {v.shape}")
            if not np.all(np.isfinite(v)):
                raise FloatingPointError(f"wave state {name} is not finite")
            object.__setattr__(self, name, v)

    @property
    def psi_w(self) -> SpinorField:
        return SpinorField(self.grid, ifft2(self.psi_hat), self.time)

    @property
    def dpsi_w(self) -> SpinorField:
        return SpinorField(self.grid, ifft2(self.dpsi_hat), self.time)

    def energy(self, mass: float = 0.0) -> float:
        """||d_t Psi||^2 + ||grad Psi||^2 (+ m^2 ||Psi||^2)."""
        g = self.grid
        w = g.ksq + mass ** 2
        tot = np.sum(np.abs(self.dpsi_hat) ** 2) + np.sum(w * np.abs(self.psi_hat) ** 2)
        return g.cell_area * float(tot) / g.n ** 2


class WaveFlow:
    """Per-mode exact oscillator for d_t^2 Psi = -w^2 Psi - F with w^2 = |xi|^2 + m^2.

    The massless case is the companion equation Box Psi = F; the massive case
    is its Klein-Gordon analogue (Box - m^2) Psi = F.
    """

    def __init__(self, grid: Grid2D, mass: float = 0.0):
        self.grid = grid
        self.mass = float(mass)
        self.w = np.sqrt(grid.ksq + self.mass ** 2)
        self._dt = None

    def _factors(self, dt):
        if self._dt != dt:
            self._c = np.cos(self.w * dt)
            self._s = _sinc_ratio(self.w, dt)  # sin(w dt)/w
            self._ws = self.w * np.sin(self.w * dt)  # w sin(w dt)
            self._dt = dt
        return self._c, self._s, self._ws

    def step_hat(self, psi_hat, dpsi_hat, dt, f0_hat, f1_hat):
        """Advance by dt; f0_hat, f1_hat are FFTs of F at the two step endpoints.

        Homogeneous part exact, Duhamel integral by the trapezoid rule on the
        source -F.
        """
        c, s, ws = self._factors(dt)
        new_psi = c * psi_hat + s * dpsi_hat
        new_dpsi = -ws * psi_hat + c * dpsi_hat
        if f0_hat is not None:
            new_psi = new_psi - 0.5 * dt * s * f0_hat
            new_dpsi = new_dpsi - 0.5 * dt * (c * f0_hat + f1_hat)
        return new_psi, new_dpsi


def wave_flow_step(state: WaveState, dt: float, source_at_t0, source_at_t1, mass: float = 0.0) -> WaveState:
    """Advance the companion by dt with physical-space sources F(t0), F(t1) (or None for zero)."""
    flow = WaveFlow(state.grid, mass)
    f0 = None if source_at_t0 is None else fft2(np.asarray(source_at_t0))
    f1 = None if source_at_t1 is None else fft2(np.asarray(source_at_t1))
    if (f0 is None) != (f1 is None):
        raise ValueError("give both endpoint sources or neither")
    p, dp = flow.step_hat(state.psi_hat, state.dpsi_hat, dt, f0, f1)
    return WaveState(state.grid, p, dp, state.time + dt)


def init_wave_companion(psi0: SpinorField, rep: GammaRep) -> WaveState:
    """Psi = 0, d_t Psi = -i g0 psi0."""
    n = psi0.grid.n
    d = -1j * matvec(rep.gamma0, psi0.values)
    return WaveState(psi0.grid, np.zeros((2, n, n), complex), fft2(d), psi0.time)


def dirac_of_companion_hat(state: WaveState, rep: GammaRep, mass: float = 0.0):
    """FFT of (D - m) Psi = i g0 d_t Psi + i g^a d_a Psi - m Psi.

    For the massless companion this is D Psi, which reproduces psi.
    """
    g = state.grid
    k1, k2 = g.kvec
    out = 1j * matvec(rep.gamma0, state.dpsi_hat)
    out = out - k1 * matvec(rep.gamma1, state.psi_hat) - k2 * matvec(rep.gamma2, state.psi_hat)
    if mass:
        out = out - mass * state.psi_hat
    return out

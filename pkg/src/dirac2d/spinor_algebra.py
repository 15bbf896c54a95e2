"""2x2 Dirac-matrix algebra, the T-/T+ projectors and the cubic nonlinearity.

Spinor arrays carry the component axis first: a single spinor has shape
``(2,)`` and a field sampled on a grid has shape ``(2, n, n)``.  Every
function here broadcasts over the trailing axes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

METRIC = np.diag([-1.0, 1.0, 1.0])
I2 = np.eye(2, dtype=np.complex128)

_GAMMA0 = np.array([[1, 0], [0, -1]], dtype=np.complex128)
_GAMMA1 = np.array([[0, 1j], [1j, 0]], dtype=np.complex128)
_GAMMA2 = np.array([[0, 1], [-1, 0]], dtype=np.complex128)


@dataclass(frozen=True, eq=False)
class GammaRep:
    """A representation of the Dirac matrices together with the interaction matrix H."""

    gamma0: np.ndarray
    gamma1: np.ndarray
    gamma2: np.ndarray
    h_matrix: np.ndarray

    def __post_init__(self):
        for name in ("gamma0", "gamma1", "gamma2", "h_matrix"):
            m = np.array(getattr(self, name), dtype=np.complex128)
            if m.shape != (2, 2):
                raise ValueError(f"{name} must be 2x2, got shape {m.shape}")
            if not np.all(np.isfinite(m)):
                raise ValueError(f"{name} has non-finite entries")
            m.flags.writeable = False
            object.__setattr__(self, name, m)

    @property
    def gammas(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.gamma0, self.gamma1, self.gamma2)

    def gamma(self, mu: int) -> np.ndarray:
        _check_index(mu)
        return self.gammas[mu]

    @property
    def alpha(self) -> tuple[np.ndarray, np.ndarray]:
        """The products gamma^0 gamma^a for a = 1, 2."""
        return (self.gamma0 @ self.gamma1, self.gamma0 @ self.gamma2)

    @property
    def spin12(self) -> np.ndarray:
        """gamma^1 gamma^2, the spin part of the modified rotation."""
        return self.gamma1 @ self.gamma2

    @property
    def h_is_hermitian(self) -> bool:
        return bool(np.allclose(self.h_matrix, self.h_matrix.conj().T, rtol=0, atol=1e-15))

    @property
    def h_is_gamma0(self) -> bool:
        return bool(np.array_equal(self.h_matrix, self.gamma0))

    def with_h(self, h_matrix) -> "GammaRep":
        return GammaRep(self.gamma0, self.gamma1, self.gamma2, h_matrix)


def _check_index(mu):
    if mu not in (0, 1, 2):
        raise IndexError(f"spacetime index must be 0, 1 or 2, got {mu!r}")


def make_default_rep(h_matrix=None) -> GammaRep:
    """Canonical representation gamma0 = sigma3, gamma1 = i sigma1, gamma2 = i sigma2.

    ``h_matrix`` defaults to gamma0 (the Soler-type interaction).
    """
    if h_matrix is None:
        h_matrix = _GAMMA0
    return GammaRep(_GAMMA0, _GAMMA1, _GAMMA2, h_matrix)


def anticommutator(rep: GammaRep, mu: int, nu: int) -> np.ndarray:
    _check_index(mu)
    _check_index(nu)
    a, b = rep.gammas[mu], rep.gammas[nu]
    return a @ b + b @ a


def clifford_residual(rep: GammaRep) -> float:
    """Largest entrywise violation of {gamma^mu, gamma^nu} = -2 g^{mu nu} I over all 9 pairs."""
    worst = 0.0
    for mu in range(3):
        for nu in range(3):
            err = anticommutator(rep, mu, nu) + 2.0 * METRIC[mu, nu] * I2
            worst = max(worst, float(np.max(np.abs(err))))
    return worst


def adjoint_residual(rep: GammaRep) -> float:
    """Largest violation of (gamma^mu)^* = -g_{mu nu} gamma^nu."""
    worst = 0.0
    for mu in range(3):
        g = rep.gammas[mu]
        err = g.conj().T + METRIC[mu, mu] * g
        worst = max(worst, float(np.max(np.abs(err))))
    return worst


def matvec(m, psi):
    """Apply a constant 2x2 matrix to a spinor (or spinor field) ``psi``."""
    psi = np.asarray(psi)
    if psi.ndim == 1:
        return np.array([m[0, 0] * psi[0] + m[0, 1] * psi[1], m[1, 0] * psi[0] + m[1, 1] * psi[1]])
    out = np.empty(psi.shape, dtype=np.result_type(psi.dtype, np.complex128))
    for i in range(2):
        a, b = m[i, 0], m[i, 1]
        # skip structural zeros; the sparse gamma matrices make this worthwhile on big grids
        if b == 0:
            np.multiply(psi[0], a, out=out[i])
        elif a == 0:
            np.multiply(psi[1], b, out=out[i])
        else:
            np.multiply(psi[0], a, out=out[i])
            out[i] += b * psi[1]
    return out


def inner(phi, m, psi):
    """The sesquilinear form phi^* M psi, evaluated componentwise over the trailing axes."""
    mpsi = matvec(m, psi)
    return np.conj(phi[0]) * mpsi[0] + np.conj(phi[1]) * mpsi[1]


def unit_direction(x, r_floor: float = 0.0):
    """Return (omega1, omega2, inside) with omega = x/r, and zero where r < r_floor.

    ``x`` is a pair of coordinate arrays (or scalars).  ``inside`` marks the
    cells treated as the origin.
    """
    x1 = np.asarray(x[0], dtype=float)
    x2 = np.asarray(x[1], dtype=float)
    r = np.hypot(x1, x2)
    inside = (r < r_floor) | (r == 0.0)
    safe = np.where(inside, 1.0, r)
    return np.where(inside, 0.0, x1 / safe), np.where(inside, 0.0, x2 / safe), inside


def radial_matrix_apply(rep: GammaRep, psi, omega1, omega2):
    """(x_a/r) gamma^0 gamma^a psi for precomputed unit direction arrays."""
    a1, a2 = rep.alpha
    return omega1 * matvec(a1, psi) + omega2 * matvec(a2, psi)


def t_projectors(rep: GammaRep, x, r_floor: float = 0.0):
    """T_- = I - (x_a/r) g0 g^a and T_+ = I + (x_a/r) g0 g^a at a single point ``x``.

    Inside ``r_floor`` (and at r = 0) both are the identity by convention.
    """
    w1, w2, inside = unit_direction(x, r_floor)
    if inside:
        return I2.copy(), I2.copy()
    a1, a2 = rep.alpha
    k = float(w1) * a1 + float(w2) * a2
    return I2 - k, I2 + k


def decompose(rep: GammaRep, psi, x, r_floor: float = 0.0):
    """Return ([psi]_-, [psi]_+).  Works pointwise or on whole fields."""
    psi = np.asarray(psi, dtype=np.complex128)
    w1, w2, _ = unit_direction(x, r_floor)
    kpsi = radial_matrix_apply(rep, psi, w1, w2)
    return psi - kpsi, psi + kpsi


def pairing_identity_residual(rep: GammaRep, phi, Phi, x) -> complex:
    """phi^* g0 Phi - ([phi]_-^* g0 [Phi]_+ + [phi]_+^* g0 [Phi]_-) / 4."""
    phi = np.asarray(phi, dtype=np.complex128)
    Phi = np.asarray(Phi, dtype=np.complex128)
    pm, pp = decompose(rep, phi, x)
    qm, qp = decompose(rep, Phi, x)
    g0 = rep.gamma0
    lhs = inner(phi, g0, Phi)
    rhs = (inner(pm, g0, qp) + inner(pp, g0, qm)) / 4.0
    return lhs - rhs


def cubic_density(rep: GammaRep, psi):
    """psi^* H psi."""
    return inner(psi, rep.h_matrix, psi)


def cubic_nonlinearity(rep: GammaRep, psi):
    """F(psi) = (psi^* H psi) psi."""
    psi = np.asarray(psi, dtype=np.complex128)
    return cubic_density(rep, psi) * psi


def nonlinearity_time_derivative(rep: GammaRep, jet, order: int):
    """d^k/dt^k of F(psi) from the time jet [psi, psi_t, ..., psi^(k)].

    Uses the trinomial Leibniz rule for (psi^* H psi) psi.
    """
    from math import factorial

    h = rep.h_matrix
    out = np.zeros_like(jet[0])
    k = order
    for a in range(k + 1):
        for b in range(k + 1 - a):
            c = k - a - b
            coef = factorial(k) // (factorial(a) * factorial(b) * factorial(c))
            out = out + coef * inner(jet[a], h, jet[b]) * jet[c]
    return out

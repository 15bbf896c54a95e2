"""Named self-checks of the matrix algebra, the vector-field calculus and the symbol.

Every check returns a ``CheckResult``; ``run_identity_suite`` evaluates the
whole table.  Spacetime test fields are analytic in t, so time derivatives
enter exactly and only spatial derivatives are spectral.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from math import comb

import numpy as np
from numpy.polynomial import polynomial as P

from .grid import Grid2D, good_derivative, ScalarField, SpinorField, vector_field_jet
from .propagators import DiracSymbol
from .spinor_algebra import (GammaRep, adjoint_residual, clifford_residual, cubic_nonlinearity,
                             decompose, inner, make_default_rep, matvec, nonlinearity_time_derivative,
                             pairing_identity_residual, t_projectors)

ALGEBRA_TOL = 1e-12
COMMUTATOR_TOL = 1e-8
LEIBNIZ_TOL = 1e-10
KS_BOUND = 4.0


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name:<28s} {self.value:10.3e}  (tol {self.tolerance:.1e}) {self.detail}"


def _result(name, value, tol, detail=""):
    value = float(value)
    return CheckResult(name, value, tol, bool(np.isfinite(value) and value <= tol), detail)


def corrupted_rep(scale_gamma1: float) -> GammaRep:
    """Default representation with gamma^1 multiplied by a factor (for guard tests)."""
    rep = make_default_rep()
    return GammaRep(rep.gamma0, scale_gamma1 * rep.gamma1, rep.gamma2, rep.h_matrix)


# --------------------------------------------------------------------------
# pointwise algebra

def check_clifford(rep: GammaRep) -> CheckResult:
    return _result("clifford_anticommutators", clifford_residual(rep), ALGEBRA_TOL, "9 pairs")


def check_adjoint(rep: GammaRep) -> CheckResult:
    return _result("gamma_adjoint", adjoint_residual(rep), ALGEBRA_TOL)


def _random_points(rng, count):
    ang = rng.uniform(0, 2 * np.pi, count)
    rad = rng.uniform(0.05, 50.0, count)
    return rad * np.cos(ang), rad * np.sin(ang)


def _projector_sandwich(rep: GammaRep, which: int, rng, count=200) -> float:
    worst = 0.0
    for x1, x2 in zip(*_random_points(rng, count)):
        tm, tp = t_projectors(rep, (x1, x2))
        t = tm if which < 0 else tp
        worst = max(worst, float(np.max(np.abs(t @ rep.gamma0 @ t))))
    return worst


def check_t_minus(rep: GammaRep, rng) -> CheckResult:
    return _result("t_minus_gamma0_t_minus", _projector_sandwich(rep, -1, rng), ALGEBRA_TOL)


def check_t_plus(rep: GammaRep, rng) -> CheckResult:
    return _result("t_plus_gamma0_t_plus", _projector_sandwich(rep, +1, rng), ALGEBRA_TOL)


def _random_spinors(rng, count):
    return rng.standard_normal((2, count)) + 1j * rng.standard_normal((2, count))


def check_pairing(rep: GammaRep, rng, count=1000) -> CheckResult:
    phi = _random_spinors(rng, count)
    Phi = _random_spinors(rng, count)
    x = _random_points(rng, count)
    res = np.abs(pairing_identity_residual(rep, phi, Phi, x))
    scale = 1.0 + np.linalg.norm(phi, axis=0) * np.linalg.norm(Phi, axis=0)
    return _result("pairing_identity", np.max(res / scale), ALGEBRA_TOL, f"{count} triples")


def check_cubic_homogeneity(rep: GammaRep, rng, count=200) -> CheckResult:
    psi = _random_spinors(rng, count)
    lam = rng.standard_normal(count) + 1j * rng.standard_normal(count)
    lhs = cubic_nonlinearity(rep, lam * psi)
    rhs = np.abs(lam) ** 2 * lam * cubic_nonlinearity(rep, psi)
    rel = np.max(np.abs(lhs - rhs)) / max(np.max(np.abs(rhs)), 1e-300)
    return _result("cubic_homogeneity", rel, ALGEBRA_TOL)


def check_minus_structure(rep: GammaRep, rng, count=200) -> CheckResult:
    """[F(psi)]_- = (psi^* H psi) [psi]_-."""
    psi = _random_spinors(rng, count)
    x = _random_points(rng, count)
    f_minus, _ = decompose(rep, cubic_nonlinearity(rep, psi), x)
    p_minus, _ = decompose(rep, psi, x)
    rhs = inner(psi, rep.h_matrix, psi) * p_minus
    rel = np.max(np.abs(f_minus - rhs)) / max(np.max(np.abs(rhs)), 1e-300)
    return _result("minus_part_structure", rel, ALGEBRA_TOL)


def check_symbol_square(rep: GammaRep) -> CheckResult:
    grid = Grid2D(64, 20.0)
    worst = 0.0
    for m in (0.0, 1.0):
        sym = DiracSymbol(grid, rep, m)
        scale = float(np.max(sym.omega)) ** 2
        worst = max(worst, sym.square_residual() / scale)
    return _result("symbol_square", worst, ALGEBRA_TOL, "M^2 = omega^2, m in {0,1}")


def check_nonlinearity_jet(rep: GammaRep, rng, order=7) -> CheckResult:
    """Trinomial Leibniz rule for d_t^k F against polynomial arithmetic, k <= order."""
    c = _random_spinors(rng, order + 1) * 0.5
    # psi(t) = sum_j c_j t^j / j!; the jet at t = 0 is (c_0, ..., c_order)
    coeffs = [c[i] / np.array([math.factorial(j) for j in range(order + 1)]) for i in range(2)]
    h = rep.h_matrix
    rho = np.zeros(1, complex)
    for a in range(2):
        for b in range(2):
            if h[a, b] != 0:
                rho = P.polyadd(rho, h[a, b] * P.polymul(np.conj(coeffs[a]), coeffs[b]))
    f_poly = [P.polymul(rho, coeffs[i]) for i in range(2)]
    jet = [c[:, j] for j in range(order + 1)]
    worst = 0.0
    for k in range(order + 1):
        exact = np.array([math.factorial(k) * (fp[k] if k < len(fp) else 0.0) for fp in f_poly])
        got = nonlinearity_time_derivative(rep, jet, k)
        worst = max(worst, float(np.max(np.abs(got - exact))) / max(1.0, float(np.max(np.abs(exact)))))
    return _result("nonlinearity_time_jet", worst, ALGEBRA_TOL, f"k <= {order}")


# --------------------------------------------------------------------------
# analytic spacetime test fields

class AnalyticField:
    """Phi(t, x) = A(x) cos(w t) + B(x) sin(w t) + t C(x) with Gaussian spinor profiles."""

    def __init__(self, grid: Grid2D, rng, sigma: float = 1.0, omega: float = 1.3, spinor: bool = True):
        self.grid = grid
        self.omega = omega
        x1, x2 = grid.coords
        parts = []
        for _ in range(3):
            c = rng.uniform(-2.0, 2.0, 2)
            g = np.exp(-((x1 - c[0]) ** 2 + (x2 - c[1]) ** 2) / (2 * sigma ** 2))
            if spinor:
                chi = rng.standard_normal(2) + 1j * rng.standard_normal(2)
                parts.append(chi[:, None, None] * g)
            else:
                parts.append((rng.standard_normal() + 1j * rng.standard_normal()) * g.astype(complex))
        self.a, self.b, self.c = parts

    def jet(self, t: float, order: int):
        """[Phi, d_t Phi, ..., d_t^order Phi] at time t."""
        w = self.omega
        out = []
        for j in range(order + 1):
            # d^j/dt^j cos(wt) = w^j cos(wt + j pi/2), likewise for sin
            cj = w ** j * math.cos(w * t + j * math.pi / 2)
            sj = w ** j * math.sin(w * t + j * math.pi / 2)
            v = cj * self.a + sj * self.b
            if j == 0:
                v = v + t * self.c
            elif j == 1:
                v = v + self.c
            out.append(v)
        return out


def dirac_operator_jet(jet, grid: Grid2D, rep: GammaRep):
    """Jet of D Phi = i g^mu d_mu Phi from the jet of Phi (one order shorter)."""
    g0, g1, g2 = rep.gammas
    out = []
    for j in range(len(jet) - 1):
        v = 1j * matvec(g0, jet[j + 1])
        v = v + 1j * matvec(g1, grid.deriv(jet[j], 1)) + 1j * matvec(g2, grid.deriv(jet[j], 2))
        out.append(v)
    return out


def _h2_norm(grid: Grid2D, values) -> float:
    from .grid import fft2
    return grid.l2_norm_hat(fft2(values), 2.0)


def _commutator_setup(rep: GammaRep, rng):
    grid = Grid2D(128, 32.0)
    return grid, AnalyticField(grid, rng), 0.7


def commutator_residual(k: int, rep: GammaRep, grid: Grid2D, field: AnalyticField, t: float) -> float:
    """||[D, hat Gamma_k] Phi|| / ||Phi||_{H^2}; for k = 7 the target is [D, L_0] Phi = D Phi."""
    jet = field.jet(t, 3)
    hatted = k in (4, 5, 6)
    d_of_gamma = dirac_operator_jet(vector_field_jet(k, jet, t, grid, rep, hatted), grid, rep)[0]
    dphi = dirac_operator_jet(jet, grid, rep)
    gamma_of_d = vector_field_jet(k, dphi, t, grid, rep, hatted)[0]
    resid = d_of_gamma - gamma_of_d
    if k == 7:
        resid = resid - dphi[0]
    return grid.l2_norm(resid) / _h2_norm(grid, jet[0])


def check_commutators(rep: GammaRep, rng):
    grid, field, t = _commutator_setup(rep, rng)
    names = ("d_t", "d_1", "d_2", "L_1", "L_2", "Omega_12")
    out = []
    for k in range(1, 7):
        val = commutator_residual(k, rep, grid, field, t)
        out.append(_result(f"commutator_D_hat_{names[k - 1]}", val, COMMUTATOR_TOL))
    out.append(_result("commutator_D_L_0", commutator_residual(7, rep, grid, field, t), COMMUTATOR_TOL,
                       "[D, L_0] = D"))
    return out


def check_dirac_squares_to_wave(rep: GammaRep, rng) -> CheckResult:
    """D^2 Phi = Box Phi = -d_t^2 Phi + Laplace Phi."""
    grid, field, t = _commutator_setup(rep, rng)
    jet = field.jet(t, 3)
    dd = dirac_operator_jet(dirac_operator_jet(jet, grid, rep), grid, rep)[0]
    lap = grid.deriv(grid.deriv(jet[0], 1), 1) + grid.deriv(grid.deriv(jet[0], 2), 2)
    box = -jet[2] + lap
    return _result("dirac_squares_to_wave", grid.l2_norm(dd - box) / _h2_norm(grid, jet[0]),
                   COMMUTATOR_TOL)


def check_leibniz(rep: GammaRep, rng) -> CheckResult:
    """hat Gamma_k (u Phi) = (Gamma_k u) Phi + u hat Gamma_k Phi for k = 1..7."""
    grid = Grid2D(128, 32.0)
    t = 0.9
    u_jet = AnalyticField(grid, rng, spinor=False).jet(t, 2)
    p_jet = AnalyticField(grid, rng).jet(t, 2)
    prod = [sum(comb(j, i) * u_jet[i] * p_jet[j - i] for i in range(j + 1)) for j in range(3)]
    worst = 0.0
    for k in range(1, 8):
        hatted = k in (4, 5, 6)
        lhs = vector_field_jet(k, prod, t, grid, rep, hatted)[0]
        rhs = (vector_field_jet(k, u_jet, t, grid)[0] * p_jet[0]
               + u_jet[0] * vector_field_jet(k, p_jet, t, grid, rep, hatted)[0])
        worst = max(worst, grid.l2_norm(lhs - rhs) / max(grid.l2_norm(rhs), 1e-300))
    return _result("leibniz_vector_fields", worst, LEIBNIZ_TOL, "k = 1..7")


def check_good_derivative_identity(rng) -> CheckResult:
    """G_a u = (L_a u + (r - t) d_a u) / r away from the origin cell."""
    grid = Grid2D(128, 32.0)
    t = 1.3
    jet = AnalyticField(grid, rng, spinor=False).jet(t, 1)
    u = ScalarField(grid, jet[0], t)
    du = ScalarField(grid, jet[1], t)
    keep = ~grid.origin_mask
    worst = 0.0
    for a in (1, 2):
        g = good_derivative(a, u, du).values
        la = vector_field_jet(3 + a, jet, t, grid)[0]
        rhs = (la + (grid.r - t) * grid.deriv(jet[0], a)) / np.where(keep, grid.r, 1.0)
        scale = float(np.max(np.abs(g[keep])))
        worst = max(worst, float(np.max(np.abs(g - rhs)[keep])) / scale)
    return _result("good_derivative_identity", worst, LEIBNIZ_TOL)


def outgoing_wave_ratio(times=(0.0, 2.0, 10.0, 40.0), r_min: float = 1.0) -> float:
    """max over space-time of (<t-r>|du| + <t+r>|Gu|) / sum_{|I|=1} |Gamma^I u|.

    u = g(r - t) / sqrt(r), g(s) = exp(-s^2), evaluated in closed form on
    a polar sample of the plane (r >= r_min).
    """
    worst = 0.0
    for t in times:
        r = np.linspace(r_min, t + 12.0, 4000)
        ang = np.linspace(0.0, 2 * np.pi, 17)[:-1]
        R, A = np.meshgrid(r, ang, indexing="ij")
        w1, w2 = np.cos(A), np.sin(A)
        s = R - t
        g = np.exp(-s * s)
        gp = -2.0 * s * g
        sq = np.sqrt(R)
        u = g / sq
        ut = -gp / sq
        ur = gp / sq - 0.5 * g / (R * sq)
        u1, u2 = w1 * ur, w2 * ur
        good1 = w1 * ut + u1
        good2 = w2 * ut + u2
        x1, x2 = R * w1, R * w2
        gammas = [ut, u1, u2, x1 * ut + t * u1, x2 * ut + t * u2, x1 * u2 - x2 * u1,
                  t * ut + x1 * u1 + x2 * u2]
        denom = sum(np.abs(v) for v in gammas)
        lhs = (np.sqrt(1 + (t - R) ** 2) * np.sqrt(ut ** 2 + u1 ** 2 + u2 ** 2)
               + np.sqrt(1 + (t + R) ** 2) * np.sqrt(good1 ** 2 + good2 ** 2))
        ok = denom > 1e-200
        worst = max(worst, float(np.max(lhs[ok] / denom[ok])))
    return worst


def check_weighted_derivative_bound() -> CheckResult:
    c = outgoing_wave_ratio()
    return CheckResult("weighted_derivative_bound", c, KS_BOUND, bool(c <= KS_BOUND), "measured C")


# --------------------------------------------------------------------------

def run_identity_suite(rep: GammaRep | None = None, seed: int = 12345) -> list:
    rep = make_default_rep() if rep is None else rep
    rng = np.random.default_rng(seed)
    out = [
        check_clifford(rep),
        check_adjoint(rep),
        check_t_minus(rep, rng),
        check_t_plus(rep, rng),
        check_pairing(rep, rng),
        check_cubic_homogeneity(rep, rng),
        check_minus_structure(rep, rng),
        check_symbol_square(rep),
        check_nonlinearity_jet(rep, rng),
    ]
    out.extend(check_commutators(rep, rng))
    out.append(check_dirac_squares_to_wave(rep, rng))
    out.append(check_leibniz(rep, rng))
    out.append(check_good_derivative_identity(rng))
    out.append(check_weighted_derivative_bound())
    return out


def format_table(results) -> str:
    lines = [r.line() for r in results]
    npass = sum(r.passed for r in results)
    lines.append(f"{npass}/{len(results)} checks passed")
    return "\n".join(lines)

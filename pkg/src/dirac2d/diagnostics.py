"""Monitored quantities: ghost-weight energy and balance, decay envelopes,
vector-field norms and the companion-wave identities."""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.special import beta as beta_fn
from scipy.special import betainc

from .grid import (Grid2D, SpinorField, decay_weight, fft2, ifft2, japanese, time_jet,
                   vector_field_jet)
from .propagators import WaveState, dirac_of_companion_hat
from .spinor_algebra import GammaRep, cubic_nonlinearity, inner, matvec, nonlinearity_time_derivative

CSV_COLUMNS = ("t", "charge", "ghost_integral", "ghost_energy", "balance_residual", "D1", "D2", "D3",
               "ks_ratio", "companion_residual", "h0", "h1", "h2", "h3", "massive_envelope",
               "t_valid_flag")

ENVELOPE_SEAM = 2


def fmt(x) -> str:
    """17 significant digits, so doubles round-trip through text."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


@dataclass
class DiagnosticsRow:
    t: float
    charge: float
    ghost_integral: float
    ghost_energy: float
    balance_residual: float
    D1: float
    D2: float
    D3: float
    ks_ratio: float
    companion_residual: float
    h0: float
    h1: float
    h2: float
    h3: float
    massive_envelope: float
    t_valid_flag: int

    def as_csv(self) -> str:
        return ",".join(fmt(getattr(self, c)) for c in CSV_COLUMNS)

    @classmethod
    def from_csv(cls, line: str) -> "DiagnosticsRow":
        parts = line.strip().split(",")
        vals = {}
        for f, p in zip(fields(cls), parts):
            vals[f.name] = int(p) if f.name == "t_valid_flag" else float(p)
        return cls(**vals)

    def as_dict(self):
        return asdict(self)


# --------------------------------------------------------------------------
# ghost weight

def ghost_profile(s, delta: float):
    """q~(s) = int_{-inf}^s <tau>^{-1-delta} d tau, in closed form.

    With a = (1+delta)/2, int_0^s (1+tau^2)^{-a} = B(s^2/(1+s^2); 1/2, a-1/2)/2,
    which scipy provides as the regularised incomplete beta function.
    """
    if not delta > 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    s = np.asarray(s, dtype=float)
    b = 0.5 * delta
    half_total = 0.5 * beta_fn(0.5, b)
    frac = betainc(0.5, b, s * s / (1.0 + s * s))
    return half_total * (1.0 + np.sign(s) * frac)


def ghost_q_max(delta: float) -> float:
    return float(beta_fn(0.5, 0.5 * delta))


def ghost_weight(x, t: float, delta: float):
    """q(t, x) = q~(|x| - t)."""
    r = np.hypot(np.asarray(x[0], float), np.asarray(x[1], float))
    return ghost_profile(r - t, delta)


class GhostTable:
    """Cubic Hermite table of q~ on a uniform grid of s = r - t.

    Nodes carry exact values and exact slopes <s>^{-1-delta}; values outside
    the table fall back to the closed form.
    """

    def __init__(self, delta: float, s_min: float, s_max: float, ds: float = 1e-2):
        self.delta = float(delta)
        m = int(math.ceil((s_max - s_min) / ds)) + 2
        self.s0 = float(s_min)
        self.ds = float(ds)
        s = self.s0 + self.ds * np.arange(m)
        self.q = ghost_profile(s, delta)
        self.dq = japanese(s) ** (-1.0 - delta) * self.ds
        self.m = m

    def slope(self, s):
        return japanese(s) ** (-1.0 - self.delta)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        u = (s - self.s0) / self.ds
        i = np.floor(u).astype(np.int64)
        bad = (i < 0) | (i >= self.m - 1)
        ic = np.clip(i, 0, self.m - 2)
        th = u - ic
        th2 = th * th
        th3 = th2 * th
        h00 = 2 * th3 - 3 * th2 + 1
        h10 = th3 - 2 * th2 + th
        h01 = -2 * th3 + 3 * th2
        h11 = th3 - th2
        out = h00 * self.q[ic] + h10 * self.dq[ic] + h01 * self.q[ic + 1] + h11 * self.dq[ic + 1]
        if np.any(bad):
            out = np.where(bad, ghost_profile(s, self.delta), out)
        return out


@dataclass
class GhostSample:
    """Spatial integrals entering the ghost balance at one time."""

    t: float
    weighted_charge: float  # ||e^{q/2} psi||^2
    ghost_term: float  # ||e^{q/2} [psi]_- / <r-t>^{(1+d)/2}||^2
    plain_term: float  # ||[psi]_- / <r-t>^{(1+d)/2}||^2
    source: float  # int G dx


_RADIAL: dict = {}


def _radial_entries(grid: Grid2D, rep: GammaRep):
    """Entries of (x_a/r) g0 g^a on the grid, cached per (grid, rep)."""
    key = (grid, id(rep))
    hit = _RADIAL.get(key)
    if hit is None or hit[0] is not rep:
        w1, w2 = grid.omega
        a1, a2 = rep.alpha
        ent = [[w1 * a1[i, j] + w2 * a2[i, j] for j in range(2)] for i in range(2)]
        ent = [[None if not np.any(e) else e for e in row] for row in ent]
        if len(_RADIAL) > 4:
            _RADIAL.clear()
        hit = _RADIAL[key] = (rep, ent)
    return hit[1]


def minus_part(values, grid: Grid2D, rep: GammaRep):
    """[psi]_- on the grid; on the origin cell T_- is the identity."""
    ent = _radial_entries(grid, rep)
    out = np.array(values, dtype=np.complex128, copy=True)
    for i in range(2):
        for j in range(2):
            if ent[i][j] is not None:
                out[i] -= ent[i][j] * values[j]
    return out


def ghost_sample(values, t: float, grid: Grid2D, rep: GammaRep, delta: float,
                 table: GhostTable | None = None, hermitian: bool | None = None) -> GhostSample:
    s = grid.r - t
    q = table(s) if table is not None else ghost_profile(s, delta)
    eq = np.exp(q)
    slope = japanese(s) ** (-1.0 - delta)
    dens = np.abs(values[0]) ** 2 + np.abs(values[1]) ** 2
    pm = minus_part(values, grid, rep)
    mdens = np.abs(pm[0]) ** 2 + np.abs(pm[1]) ** 2
    mdens = np.where(grid.origin_mask, 0.0, mdens) * slope
    h2 = grid.cell_area
    if hermitian is None:
        hermitian = rep.h_is_hermitian
    if hermitian:
        src = 0.0
    else:
        z = inner(values, rep.gamma0, cubic_nonlinearity(rep, values))
        src = h2 * float(np.sum(2.0 * eq * z.imag))
    return GhostSample(t, h2 * float(np.sum(eq * dens)), h2 * float(np.sum(eq * mdens)),
                       h2 * float(np.sum(mdens)), src)


class GhostAccumulator:
    """Running time integrals of the ghost terms, advanced once per stepper step."""

    def __init__(self, first: GhostSample):
        self.last = first
        self.ghost_integral = 0.0  # int_0^t ||[psi]_-/<r-tau>^..||^2
        self.weighted_ghost = 0.0  # int ||e^{q/2}[psi]_-/...||^2 since last row
        self.source_integral = 0.0  # int G since last row
        self.row_start = first

    def advance(self, sample: GhostSample):
        dt = sample.t - self.last.t
        self.ghost_integral += 0.5 * dt * (self.last.plain_term + sample.plain_term)
        self.weighted_ghost += 0.5 * dt * (self.last.ghost_term + sample.ghost_term)
        self.source_integral += 0.5 * dt * (self.last.source + sample.source)
        self.last = sample

    def close_row(self) -> float:
        """Relative residual of the weighted balance since the previous row."""
        start, end = self.row_start, self.last
        resid = (end.weighted_charge - start.weighted_charge + 0.5 * self.weighted_ghost
                 - self.source_integral)
        scale = max(start.weighted_charge, end.weighted_charge)
        self.row_start = end
        self.weighted_ghost = 0.0
        self.source_integral = 0.0
        return 0.0 if scale == 0.0 else resid / scale


def ghost_energy(psi_series, rep: GammaRep, delta: float):
    """E^D_gst and the weighted-balance residual along a sampled trajectory.

    ``psi_series`` is a sequence of SpinorFields at increasing times.  Time
    integrals use the trapezoid rule over the supplied samples, so accuracy
    follows the sampling interval.  Returns two arrays: E(t_k) and the
    relative balance residual on each interval [t_{k-1}, t_k] (0 for k = 0).
    """
    psi_series = list(psi_series)
    if not psi_series:
        return np.zeros(0), np.zeros(0)
    grid = psi_series[0].grid
    acc = None
    energy, resid = [], []
    for f in psi_series:
        smp = ghost_sample(f.values, f.time, grid, rep, delta)
        if acc is None:
            acc = GhostAccumulator(smp)
            resid.append(0.0)
        else:
            acc.advance(smp)
            resid.append(acc.close_row())
        energy.append(f.charge() + acc.ghost_integral)
    return np.array(energy), np.array(resid)


# --------------------------------------------------------------------------
# pointwise envelopes

def decay_envelopes(psi: SpinorField, rep: GammaRep, mass: float = 0.0, seam: int = ENVELOPE_SEAM):
    """(D1, D2, D3, massive_envelope) at time psi.time.

    Suprema skip the origin cell and ``seam`` cells along the periodic seam.
    massive_envelope is 0 for mass == 0.
    """
    g = psi.grid
    t = psi.time
    ok = g.trusted_mask(seam)
    mod = psi.modulus
    r = g.r
    lg = math.log(2.0 + t)
    d1 = np.max(np.where(ok, japanese(t + r) ** 0.5 * japanese(t - r) ** 0.5 * mod, 0.0))
    pm = minus_part(psi.values, g, rep)
    pmod = np.sqrt(np.abs(pm[0]) ** 2 + np.abs(pm[1]) ** 2)
    d2 = japanese(t) ** 1.5 * np.max(np.where(ok, pmod, 0.0)) / lg
    d3 = japanese(t) ** 0.5 * np.max(np.where(ok, japanese(t - r) * mod, 0.0)) / lg
    dm = float(np.max(np.where(ok, japanese(t + r) * mod, 0.0))) if mass > 0 else 0.0
    return float(d1), float(d2), float(d3), dm


# --------------------------------------------------------------------------
# companion-wave identities

def companion_residual(psi: SpinorField, wave: WaveState, rep: GammaRep, mass: float = 0.0,
                       psi_hat=None) -> float:
    """||psi - (D - m) Psi||_{L^2} / ||psi||_{L^2} (0 when psi = 0)."""
    g = psi.grid
    ph = fft2(psi.values) if psi_hat is None else psi_hat
    num = g.l2_norm_hat(ph - dirac_of_companion_hat(wave, rep, mass))
    den = g.l2_norm_hat(ph)
    return 0.0 if den == 0.0 else num / den


def psi_minus_reconstruction_residual(psi: SpinorField, wave: WaveState, rep: GammaRep,
                                      mass: float = 0.0) -> float:
    """Relative L^2 misfit of [psi]_- = i T_- g^a G_a Psi (minus m T_- Psi when massive).

    Cells with r < r_floor are left out of both norms.
    """
    g = psi.grid
    w1, w2 = g.omega
    dpsi = ifft2(wave.dpsi_hat)
    k1, k2 = g.kvec
    d1 = ifft2(1j * k1 * wave.psi_hat)
    d2 = ifft2(1j * k2 * wave.psi_hat)
    G1 = w1 * dpsi + d1
    G2 = w2 * dpsi + d2
    rhs = 1j * (matvec(rep.gamma1, G1) + matvec(rep.gamma2, G2))
    if mass:
        rhs = rhs - mass * ifft2(wave.psi_hat)
    rhs = minus_part(rhs, g, rep)
    lhs = minus_part(psi.values, g, rep)
    keep = ~g.origin_mask
    num = math.sqrt(float(np.sum(np.where(keep, np.abs(lhs - rhs) ** 2, 0.0).sum(axis=0))))
    den = math.sqrt(float(np.sum(np.where(keep, np.abs(psi.values) ** 2, 0.0).sum(axis=0))))
    return 0.0 if den == 0.0 else num / den


# --------------------------------------------------------------------------
# vector-field norms

def multi_indices(order: int):
    """All I in N^7 with |I| <= order, as tuples of vector-field labels in product order.

    Gamma^I = Gamma_1^{i_1} ... Gamma_7^{i_7}, so the rightmost label acts first.
    """
    out = [()]
    for size in range(1, order + 1):
        out.extend(itertools.combinations_with_replacement(range(1, 8), size))
    return out


def vector_field_family(psi: SpinorField, rep: GammaRep, mass: float, order: int, hatted: bool):
    """Map each multi-index with |I| <= order to Gamma^I psi (or hat-Gamma^I psi).

    Time derivatives come from the equation (time_jet), never from stored
    time levels.
    """
    g = psi.grid
    t = psi.time
    jet = time_jet(psi.values, g, rep, mass, order)
    family = {(): jet}
    for idx in multi_indices(order)[1:]:
        parent = family[idx[1:]]
        family[idx] = vector_field_jet(idx[0], parent, t, g, rep, hatted)
    return {idx: j[0] for idx, j in family.items()}


def vector_field_norm_sum(psi: SpinorField, rep: GammaRep, mass: float = 0.0, order: int = 2) -> float:
    """sum_{|I| <= order} ||Gamma^I psi||_{L^2}."""
    fam = vector_field_family(psi, rep, mass, order, hatted=False)
    return sum(psi.grid.l2_norm(v) for v in fam.values())


def klainerman_sobolev_ratio(psi: SpinorField, vf_norm_sum: float) -> float:
    """sup <t+r>^{1/2} <t-r>^{1/2} |psi| divided by sum_{|I|<=2} ||Gamma^I psi||; 0 if psi = 0."""
    if vf_norm_sum == 0.0:
        return 0.0
    g = psi.grid
    w = decay_weight(g, psi.time, 0.5, 0.5) * psi.modulus
    sup = float(np.max(np.where(g.trusted_mask(0), w, 0.0)))
    return sup / vf_norm_sum


MAX_BOOTSTRAP_ORDER = 2


def bootstrap_norms(psi: SpinorField, rep: GammaRep, mass: float = 0.0, order: int = 2,
                    delta: float = 0.1):
    """Vector-field quantities of the bootstrap setting, for |I| <= order.

    Returns ``(l2, sup_minus)``: ``l2`` maps every multi-index to
    ||hat-Gamma^I psi||_{L^2}; ``sup_minus`` maps |I| <= order - 2 to
    <t>^{3/2-delta} sup |[hat-Gamma^I psi]_-|.
    """
    if order < 0:
        raise ValueError("order must be >= 0")
    if order > MAX_BOOTSTRAP_ORDER:
        raise ValueError(f"bootstrap order {order} exceeds {MAX_BOOTSTRAP_ORDER}: nested vector "
                         "fields are not resolved on desk-scale grids")
    g = psi.grid
    fam = vector_field_family(psi, rep, mass, order, hatted=True)
    l2 = {idx: g.l2_norm(v) for idx, v in fam.items()}
    sup_minus = {}
    ok = g.trusted_mask(0)
    tw = japanese(psi.time) ** (1.5 - delta)
    for idx, v in fam.items():
        if len(idx) <= order - 2:
            pm = minus_part(v, g, rep)
            mod = np.sqrt(np.abs(pm[0]) ** 2 + np.abs(pm[1]) ** 2)
            sup_minus[idx] = tw * float(np.max(np.where(ok, mod, 0.0)))
    return l2, sup_minus


def source_vector_field_l1(psi: SpinorField, rep: GammaRep, mass: float = 0.0) -> float:
    """sum_{|I| <= 1} ||Gamma^I F(psi)||_{L^1}, the Duhamel integrand of the L^inf wave bound."""
    g = psi.grid
    jet = time_jet(psi.values, g, rep, mass, 1)
    fjet = [nonlinearity_time_derivative(rep, jet, 0), nonlinearity_time_derivative(rep, jet, 1)]
    total = _l1(g, fjet[0])
    for k in range(1, 8):
        total += _l1(g, vector_field_jet(k, fjet, psi.time, g, rep, False)[0])
    return total


def _l1(g: Grid2D, v) -> float:
    return g.cell_area * float(np.sum(np.sqrt(np.abs(v[0]) ** 2 + np.abs(v[1]) ** 2)))


def w11_norm(values, grid: Grid2D) -> float:
    """||u||_{L^1} + ||grad u||_{L^1}."""
    return (_l1(grid, values) + _l1(grid, grid.deriv(values, 1)) + _l1(grid, grid.deriv(values, 2)))


class WaveBoundMonitor:
    """Ratio ||Psi(t)||_inf <t>^{1/2} / (data + Duhamel terms) of the linear-wave L^inf bound."""

    def __init__(self, psi0: SpinorField, rep: GammaRep, mass: float = 0.0):
        self.rep = rep
        self.mass = mass
        self.data_term = w11_norm(-1j * matvec(rep.gamma0, psi0.values), psi0.grid)
        self.duhamel = 0.0
        self._last = None

    def update(self, psi: SpinorField, wave: WaveState) -> float:
        t = psi.time
        val = (1.0 + t) ** -0.5 * source_vector_field_l1(psi, self.rep, self.mass)
        if self._last is not None:
            t0, v0 = self._last
            self.duhamel += 0.5 * (t - t0) * (v0 + val)
        self._last = (t, val)
        psi_w = ifft2(wave.psi_hat)
        linf = float(np.max(np.sqrt(np.abs(psi_w[0]) ** 2 + np.abs(psi_w[1]) ** 2)))
        den = self.data_term + self.duhamel
        return 0.0 if den == 0.0 else linf * japanese(t) ** 0.5 / den


# --------------------------------------------------------------------------
# validity window

def charge_radius(psi: SpinorField, fraction: float = 1.0 - 1e-8) -> float:
    """Smallest radius containing ``fraction`` of the charge."""
    dens = (np.abs(psi.values) ** 2).sum(axis=0).ravel()
    total = dens.sum()
    if total == 0.0:
        return 0.0
    r = psi.grid.r.ravel()
    order = np.argsort(r, kind="stable")
    cum = np.cumsum(dens[order])
    i = int(np.searchsorted(cum, fraction * total))
    return float(r[order[min(i, r.size - 1)]])


def valid_time(psi0: SpinorField) -> float:
    """Latest time before the periodic wake can reach the light-cone diagnostics."""
    return 0.5 * psi0.grid.length - charge_radius(psi0) - 2.0


def loglog_slope(t, y) -> float:
    """Least-squares slope of log y against log t."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    keep = (t > 0) & (y > 0)
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(t[keep]), np.log(y[keep]), 1)[0])

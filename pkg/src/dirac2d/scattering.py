"""Scattering state from the Duhamel accumulator and the convergence report."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import fmt
from .grid import SpinorField, fft2, ifft2
from .propagators import dirac_symbol
from .spinor_algebra import GammaRep, make_default_rep

ORDERS = (0, 1, 2, 3)


def finalize_scattering_state(traj) -> SpinorField:
    """psi_plus_T = psi0 - i * int_0^T S(-tau) g0 F(tau) dtau, returned as a t = 0 field."""
    acc = getattr(traj, "duhamel_accum", None)
    if acc is None:
        raise ValueError("scattering accumulator was disabled for this trajectory")
    psi0 = traj.psi0
    # the accumulator lives in the frame at time t; pull it back to t = 0
    sym = dirac_symbol(psi0.grid, traj.rep, traj.mass)
    duhamel = ifft2(sym.flow_hat(acc, -traj.time))
    return SpinorField(psi0.grid, psi0.values - 1j * duhamel, 0.0)


def extrapolate_tail(quarter: SpinorField, half: SpinorField, final: SpinorField):
    """Richardson-style tail estimate from psi_plus truncated at T/4, T/2, T.

    Assuming ||psi_plus_inf - psi_plus_T|| ~ C T^-p, the successive
    differences shrink by 2^p, so the missing tail beyond T is approximately
    (psi_plus_T - psi_plus_{T/2}) / (2^p - 1).  Returns (field, p); p is nan
    and the field is ``final`` when the differences do not contract.
    """
    g = final.grid
    d1 = half.values - quarter.values
    d2 = final.values - half.values
    n1, n2 = g.l2_norm(d1), g.l2_norm(d2)
    if n2 == 0.0 or n1 <= n2:
        return final, float("nan")
    p = math.log2(n1 / n2)
    return final.replace(final.values + d2 / (2.0 ** p - 1.0), 0.0), p


def rate_profile(t):
    """<t>^{-1/2} ln(2 + t)."""
    t = np.asarray(t, dtype=float)
    return np.log(2.0 + t) / np.sqrt(1.0 + t * t)


@dataclass
class ScatteringReport:
    psi_plus: SpinorField
    times: np.ndarray
    errors: np.ndarray  # (len(times), len(orders))
    ratios: np.ndarray
    tails: np.ndarray
    orders: tuple = ORDERS
    heuristic: bool = False
    flow_norm_drift: float = 0.0
    notes: list = field(default_factory=list)

    def ratio_spread(self, order: int = 0, t_min: float = -np.inf, t_max: float = np.inf) -> float:
        """max/min of the rate ratio over samples with t in [t_min, t_max]."""
        j = self.orders.index(order)
        keep = (self.times >= t_min - 1e-9) & (self.times <= t_max + 1e-9)
        r = self.ratios[keep, j]
        if r.size == 0:
            raise ValueError("no samples in the requested window")
        lo = float(r.min())
        return float("inf") if lo <= 0 else float(r.max()) / lo

    def lower_order_trend(self, top_order: int = 3) -> float:
        """Log-log slope of the ratio at order top_order - 2 over the second half of the samples."""
        from .diagnostics import loglog_slope
        j = self.orders.index(max(top_order - 2, 0))
        half = self.times >= 0.5 * self.times[-1]
        return loglog_slope(self.times[half], self.ratios[half, j])

    def csv_lines(self) -> list:
        head = ["t"] + [f"err_h{s}" for s in self.orders] + [f"ratio_h{s}" for s in self.orders] \
            + [f"tail_h{s}" for s in self.orders]
        out = [",".join(head)]
        for i, t in enumerate(self.times):
            vals = [t, *self.errors[i], *self.ratios[i], *self.tails[i]]
            out.append(",".join(fmt(v) for v in vals))
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(self.csv_lines()) + "\n")


def scattering_error(snapshots, psi_plus: SpinorField, orders=ORDERS, rep: GammaRep | None = None,
                     mass: float = 0.0, tail_times=None, tail_norms=None,
                     heuristic: bool = False) -> ScatteringReport:
    """Compare each snapshot psi(t) with S(t) psi_plus in H^s.

    ``tail_times``/``tail_norms`` (step nodes and ||F||_{H^s} columns) give the
    tail integral int_t^{T} ||F||_{H^s} by the trapezoid rule.
    """
    rep = make_default_rep() if rep is None else rep
    orders = tuple(orders)
    g = psi_plus.grid
    for s in snapshots:
        if s.grid != g:
            raise ValueError("snapshot grid does not match the scattering state grid")
    sym = dirac_symbol(g, rep, mass)
    plus_hat = fft2(psi_plus.values)
    base = np.array([g.l2_norm_hat(plus_hat, s) for s in orders])
    times = np.array([s.time for s in snapshots], dtype=float)
    errors = np.zeros((len(snapshots), len(orders)))
    drift = 0.0
    for i, snap in enumerate(snapshots):
        free_hat = sym.flow_hat(plus_hat, snap.time)
        nrm = np.array([g.l2_norm_hat(free_hat, s) for s in orders])
        drift = max(drift, float(np.max(np.abs(nrm - base) / np.where(base > 0, base, 1.0))))
        diff = fft2(snap.values) - free_hat
        errors[i] = [g.l2_norm_hat(diff, s) for s in orders]
    ratios = errors / rate_profile(times)[:, None]
    tails = np.zeros_like(errors)
    if tail_times is not None:
        tt = np.asarray(tail_times, dtype=float)
        fn = np.asarray(tail_norms, dtype=float)
        for j, s in enumerate(orders):
            col = fn[:, s] if fn.ndim == 2 else fn
            seg = 0.5 * np.diff(tt) * (col[1:] + col[:-1])
            rev = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])  # int_{t_k}^{T}
            tails[:, j] = np.interp(times, tt, rev)
    return ScatteringReport(psi_plus, times, errors, ratios, tails, orders, heuristic, drift)


def truncation_gap(plus_a: SpinorField, plus_b: SpinorField, order: int = 0) -> float:
    """||psi_plus_{T1} - psi_plus_{T2}||_{H^order}."""
    g = plus_a.grid
    return g.l2_norm_hat(fft2(plus_a.values - plus_b.values), order)

"""Strang-split time integration of the cubic Dirac equation.

One step is: nonlinear half step, exact linear Dirac flow, nonlinear half
step.  The two nonlinear half steps are pointwise and meet across the step
boundary, so the dealiasing mask is applied once per step with the flow.  The
wave companion and the interaction-picture Duhamel integral are carried
along with F sampled at the step endpoints.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import time as _time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import diagnostics as dg
from .grid import Grid2D, SpinorField, fft2, ifft2
from .propagators import DiracSymbol, WaveFlow, WaveState, init_wave_companion
from .spinor_algebra import GammaRep, cubic_nonlinearity, inner, make_default_rep, matvec

log = logging.getLogger(__name__)

PROFILES = ("gaussian", "gaussian-pair", "ring")
DEALIAS_MODES = ("two_thirds", "full", "none")
SWEEP_AXES = ("epsilon", "mass", "delta")


class NumericalBlowup(FloatingPointError):
    """Raised when the solution stops being finite; carries the last finite state."""

    def __init__(self, msg, last_state=None):
        super().__init__(msg)
        self.last_state = last_state


# --------------------------------------------------------------------------
# configuration

def parse_h_matrix(spec: str, rep: GammaRep | None = None) -> np.ndarray:
    """Named interaction ('gamma0', 'identity', 'zero') or four complex entries 'a b c d' (row-major)."""
    rep = make_default_rep() if rep is None else rep
    key = spec.strip().lower()
    named = {"gamma0": rep.gamma0, "identity": np.eye(2), "zero": np.zeros((2, 2))}
    if key in named:
        return np.array(named[key], dtype=np.complex128)
    parts = spec.replace(",", " ").split()
    if len(parts) != 4:
        raise ValueError(f"h_matrix must be gamma0, identity, zero or 4 complex numbers, got {spec!r}")
    return np.array([complex(p.replace("i", "j")) for p in parts]).reshape(2, 2)


def parse_spinor(spec: str) -> np.ndarray:
    parts = spec.replace(",", " ").split()
    if len(parts) != 2:
        raise ValueError(f"spinor must have two complex entries, got {spec!r}")
    v = np.array([complex(p.replace("i", "j")) for p in parts])
    nrm = np.linalg.norm(v)
    if nrm == 0:
        raise ValueError("spinor direction must be nonzero")
    return v / nrm


@dataclass
class SimConfig:
    """Full description of one experiment.  ``dt = 0`` selects 0.01 * min(1, h)."""

    name: str = "run"
    mass: float = 0.0
    h_matrix: str = "gamma0"
    epsilon: float = 0.05
    profile: str = "gaussian"
    width: float = 1.0
    separation: float = 6.0
    ring_radius: float = 4.0
    spinor: str = "1 0"
    noise: float = 0.0
    n: int = 128
    length: float = 40.0
    dt: float = 0.0
    t_end: float = 2.0
    delta: float = 0.1
    dealias: str = "two_thirds"
    output_every: float = 0.5
    snapshot_every: float = 1.0
    ks_diagnostics: bool = True
    monitors: bool = True
    seed: int = 0
    workers: int = 0
    sweep_axis: str = "epsilon"
    sweep_values: str = ""
    conv_dt: float = 0.05
    conv_t_end: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.mass < 0:
            raise ValueError("mass must be >= 0")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not self.delta > 0:
            raise ValueError("delta must be > 0")
        if self.dt < 0:
            raise ValueError("dt must be > 0 (or 0 for the default)")
        if self.t_end < 0:
            raise ValueError("t_end must be >= 0")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}; choose from {PROFILES}")
        if self.dealias not in DEALIAS_MODES:
            raise ValueError(f"unknown dealias mode {self.dealias!r}; choose from {DEALIAS_MODES}")
        if self.sweep_axis not in SWEEP_AXES:
            raise ValueError(f"sweep_axis must be one of {SWEEP_AXES}")
        if self.output_every <= 0:
            raise ValueError("output_every must be > 0")
        Grid2D(self.n, self.length)
        parse_h_matrix(self.h_matrix)
        parse_spinor(self.spinor)

    @property
    def grid(self) -> Grid2D:
        return Grid2D(self.n, self.length)

    @property
    def time_step(self) -> float:
        if self.dt > 0:
            return self.dt
        return 0.01 * min(1.0, self.length / self.n)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.time_step))

    def rep(self) -> GammaRep:
        base = make_default_rep()
        return base.with_h(parse_h_matrix(self.h_matrix, base))

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)

    # flat key = value text
    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = dg.fmt(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "SimConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kw = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            if key in kw:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
            try:
                kw[key] = _coerce(types[key], val)
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
        try:
            return cls(**kw)
        except ValueError as exc:
            raise ConfigError(f"{source}: {exc}") from None

    @classmethod
    def from_file(cls, path) -> "SimConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read(), str(path))


class ConfigError(ValueError):
    pass


def _coerce(typ, val: str):
    typ = typ if isinstance(typ, str) else typ.__name__
    if typ == "float":
        return float(val)
    if typ == "int":
        f = float(val)
        if f != int(f):
            raise ValueError(f"{val!r} is not an integer")
        return int(f)
    if typ == "bool":
        low = val.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"{val!r} is not a boolean")
    return val


# --------------------------------------------------------------------------
# initial data

def make_initial_data(config: SimConfig) -> SpinorField:
    """psi0 = epsilon * profile(x) * chi with peak modulus epsilon."""
    g = config.grid
    x1, x2 = g.coords
    w = config.width
    if config.profile == "gaussian":
        amp = np.exp(-(x1 ** 2 + x2 ** 2) / (2 * w * w))
    elif config.profile == "gaussian-pair":
        d = 0.5 * config.separation
        amp = (np.exp(-((x1 - d) ** 2 + x2 ** 2) / (2 * w * w))
               + np.exp(-((x1 + d) ** 2 + x2 ** 2) / (2 * w * w)))
    elif config.profile == "ring":
        amp = np.exp(-(g.r - config.ring_radius) ** 2 / (2 * w * w))
    else:
        raise ValueError(f"unknown profile {config.profile!r}")
    chi = parse_spinor(config.spinor)
    vals = chi[:, None, None] * amp[None].astype(np.complex128)
    if config.noise:
        rng = np.random.default_rng(config.seed)
        hat = np.zeros((2, g.n, g.n), complex)
        kmax = max(2, g.n // 16)
        hat[:, :kmax, :kmax] = rng.standard_normal((2, kmax, kmax)) + 1j * rng.standard_normal((2, kmax, kmax))
        pert = ifft2(hat)
        pert /= np.max(np.abs(pert))
        vals = vals + config.noise * pert * np.exp(-(x1 ** 2 + x2 ** 2) / (2 * w * w))
    mod = np.sqrt(np.abs(vals[0]) ** 2 + np.abs(vals[1]) ** 2)
    peak = float(mod.max())
    vals = vals * (config.epsilon / peak) if peak > 0 else vals
    return SpinorField(g, vals, 0.0)


def smallness_norm(psi0: SpinorField, order: int = 3) -> float:
    """sum_{k<=order} (||<x>^{k+1} grad^k psi0||_{L^1} + ||...||_{L^2}).

    |grad^k psi| is the Euclidean norm of the full tensor of k-th partials.
    """
    g = psi0.grid
    wt = np.sqrt(1.0 + g.r ** 2)
    level = [psi0.values]
    total = 0.0
    for k in range(order + 1):
        sq = sum((np.abs(v) ** 2).sum(axis=0) for v in level)
        mag = (wt ** (k + 1)) * np.sqrt(sq)
        total += g.cell_area * float(mag.sum()) + math.sqrt(g.cell_area * float((mag ** 2).sum()))
        if k < order:
            level = [g.deriv(v, a) for v in level for a in (1, 2)]
    return total


# --------------------------------------------------------------------------
# stepping

@dataclass
class TrajectoryState:
    psi: SpinorField
    psi0: SpinorField
    wave: WaveState
    f_hat: np.ndarray  # dealiased FFT of F(psi) at the current time
    # FFT of S(t) int_0^t S(-tau) g0 F(tau) dtau: the Duhamel integral carried in the current frame
    duhamel_accum: Optional[np.ndarray]
    step: int = 0
    wall_seconds: float = 0.0
    rep: Optional[GammaRep] = None
    mass: float = 0.0
    clock: tuple = (0.0, 0, 0.0)  # (start time, steps taken, dt) for drift-free time stamps

    @property
    def time(self) -> float:
        return self.psi.time

    @property
    def duhamel_integral(self) -> Optional[np.ndarray]:
        """FFT of int_0^t S(-tau) g0 F(tau) dtau (pulled back from the current frame)."""
        if self.duhamel_accum is None:
            return None
        sym = DiracSymbol(self.psi.grid, self.rep, self.mass)
        return sym.flow_hat(self.duhamel_accum, -self.time)


def _apply_modes(mat, v):
    """Per-mode 2x2 matrix (entries of shape (n, n)) applied to a (2, n, n) array."""
    out = np.empty_like(v)
    np.multiply(mat[0][0], v[0], out=out[0])
    out[0] += mat[0][1] * v[1]
    np.multiply(mat[1][0], v[0], out=out[1])
    out[1] += mat[1][1] * v[1]
    return out


class Stepper:
    """Precomputed tables for repeated Strang steps of fixed dt.

    The second nonlinear half step of one step and the first half step of the
    next are both pointwise, so the mask is applied once per step, together
    with the linear flow.  Three FFTs per step.
    """

    def __init__(self, grid: Grid2D, rep: GammaRep, mass: float, dt: float,
                 dealias: str = "two_thirds", accumulate: bool = True):
        if not dt > 0 and not dt < 0:
            raise ValueError("dt must be nonzero")
        if dealias not in DEALIAS_MODES:
            raise ValueError(f"unknown dealias mode {dealias!r}")
        self.grid = grid
        self.rep = rep
        self.mass = float(mass)
        self.dt = float(dt)
        self.dealias = dealias
        self.accumulate = accumulate
        self.symbol = DiracSymbol(grid, rep, mass)
        self.wave = WaveFlow(grid, mass)
        self.mask = grid.two_thirds_mask if dealias == "two_thirds" else None
        self.h_zero = not np.any(rep.h_matrix)
        self.h_gamma0 = rep.h_is_gamma0
        c, s = self.symbol.exp_factors(dt)
        m = self.symbol.matrix
        self.flow = [[c * (i == j) - 1j * s * m[i, j] for j in range(2)] for i in range(2)]
        if self.mask is None:
            self.masked_flow = self.flow
        else:
            self.masked_flow = [[e * self.mask for e in row] for row in self.flow]

    # pointwise nonlinear flow d_t psi = -i g0 (psi^* H psi) psi
    def nonlinear_flow(self, v, tau):
        if self.h_zero or tau == 0.0:
            return v
        g0 = self.rep.gamma0
        if self.h_gamma0:
            # rho = psi^* g0 psi is invariant, so the flow is an exact phase rotation
            theta = tau * inner(v, g0, v).real
            return np.cos(theta) * v - 1j * np.sin(theta) * matvec(g0, v)
        rep = self.rep

        def f(u):
            return -1j * matvec(g0, cubic_nonlinearity(rep, u))

        k1 = f(v)
        k2 = f(v + 0.5 * tau * k1)
        k3 = f(v + 0.5 * tau * k2)
        k4 = f(v + tau * k3)
        return v + (tau / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    def _masked(self, vh):
        return vh if self.mask is None else vh * self.mask

    def project(self, values):
        if self.mask is None:
            return np.asarray(values, dtype=np.complex128)
        return ifft2(fft2(values) * self.mask)

    def _padded_eval(self, vh, fn):
        """Evaluate a pointwise map on the 2x zero-padded grid and truncate back."""
        n = self.grid.n
        big = np.zeros((2, 2 * n, 2 * n), complex)
        h = n // 2
        idx = np.r_[0:h, 2 * n - h:2 * n]
        big[:, idx[:, None], idx[None, :]] = vh * 4.0
        out = fft2(fn(ifft2(big)))
        return out[:, idx[:, None], idx[None, :]] / 4.0

    def source_hat(self, v):
        """Dealiased FFT of F(psi)."""
        if self.h_zero:
            return np.zeros_like(v)
        if self.dealias == "full":
            return self._padded_eval(fft2(v), lambda u: cubic_nonlinearity(self.rep, u))
        return self._masked(fft2(cubic_nonlinearity(self.rep, v)))

    def initial_state(self, psi0: SpinorField, project: bool = True) -> TrajectoryState:
        vals = self.project(psi0.values) if project else psi0.values
        psi = SpinorField(self.grid, vals, psi0.time)
        f_hat = self.source_hat(psi.values)
        acc = np.zeros((2, self.grid.n, self.grid.n), complex) if self.accumulate else None
        return TrajectoryState(psi, psi, init_wave_companion(psi, self.rep), f_hat, acc, 0, 0.0,
                               self.rep, self.mass)

    def _advance_psi(self, values):
        half = 0.5 * self.dt
        if self.dealias == "full" and not self.h_zero:
            nl = lambda u: self.nonlinear_flow(u, half)  # noqa: E731
            vh = _apply_modes(self.flow, self._padded_eval(fft2(values), nl))
            return ifft2(self._padded_eval(vh, nl))
        v = self.nonlinear_flow(values, half)
        w = ifft2(_apply_modes(self.masked_flow, fft2(v)))
        return self.nonlinear_flow(w, half)

    def step(self, state: TrajectoryState) -> TrajectoryState:
        t0 = _time.perf_counter()
        half = 0.5 * self.dt
        v = self._advance_psi(state.psi.values)
        step = state.step + 1
        t_start, k, clock_dt = state.clock
        if clock_dt != self.dt:
            t_start, k = state.psi.time, 0
        k += 1
        # t_start + k dt avoids drift from repeated addition
        t1 = t_start + k * self.dt
        if -1e-12 < t1 < 0.0:
            t1 = 0.0
        try:
            psi = SpinorField(self.grid, v, t1)
        except FloatingPointError as exc:
            raise NumericalBlowup(f"non-finite solution at step {step} (t = {t1:g})", state) from exc
        f_hat = self.source_hat(v)
        wp, wd = self.wave.step_hat(state.wave.psi_hat, state.wave.dpsi_hat, self.dt,
                                    state.f_hat, f_hat)
        wave = WaveState(self.grid, wp, wd, t1)
        acc = state.duhamel_accum
        if acc is not None and not self.h_zero:
            g0 = self.rep.gamma0
            acc = _apply_modes(self.flow, acc + half * matvec(g0, state.f_hat)) + half * matvec(g0, f_hat)
        return TrajectoryState(psi, state.psi0, wave, f_hat, acc, step,
                               state.wall_seconds + _time.perf_counter() - t0, self.rep, self.mass,
                               (t_start, k, self.dt))


def nonlinear_substep(psi: SpinorField, dt: float, rep: GammaRep) -> SpinorField:
    """Pointwise flow of d_t psi = -i g0 (psi^* H psi) psi over dt (no dealiasing)."""
    st = Stepper(psi.grid, rep, 0.0, dt if dt != 0 else 1.0, "none", accumulate=False)
    return psi.replace(st.nonlinear_flow(psi.values, dt))


_STEPPERS: dict = {}


def strang_step(state: TrajectoryState, config: SimConfig, rep: GammaRep) -> TrajectoryState:
    """One Strang step of size config.time_step."""
    key = (config.grid, id(rep), config.mass, config.time_step, config.dealias)
    st = _STEPPERS.get(key)
    if st is None or st.rep is not rep:
        _STEPPERS.clear()
        st = Stepper(config.grid, rep, config.mass, config.time_step, config.dealias)
        _STEPPERS[key] = st
    return st.step(state)


# --------------------------------------------------------------------------
# full runs

@dataclass
class RunResult:
    config: SimConfig
    rows: list
    monitor_rows: list
    snapshots: list  # SpinorFields at snapshot times
    psi_plus: dict  # truncation time -> SpinorField
    psi0: SpinorField
    step_times: np.ndarray
    f_norms: np.ndarray  # (n_steps + 1, 4): ||F||_{H^s}, s = 0..3, at each step
    t_valid: float
    smallness: float
    final_state: TrajectoryState
    warnings: list = field(default_factory=list)
    heuristic_scattering: bool = False

    def f_norm_integral(self, t0: float, t1: float, order: int = 0) -> float:
        """Trapezoid integral of ||F||_{H^order} over [t0, t1] on step nodes."""
        t = self.step_times
        keep = (t >= t0 - 1e-9) & (t <= t1 + 1e-9)
        return float(np.trapezoid(self.f_norms[keep, order], t[keep])) if keep.sum() > 1 else 0.0

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])


MONITOR_COLUMNS = ("t", "psi_minus_residual", "wave_linf_ratio", "weighted_charge")


def _stride(every: float, dt: float) -> int:
    return max(1, int(round(every / dt)))


def _checkpoint_steps(n_steps: int):
    return {n_steps // 4: "quarter", n_steps // 2: "half", n_steps: "final"}


def run(config: SimConfig, rep: GammaRep | None = None, on_row=None) -> RunResult:
    """Integrate to t_end collecting diagnostics rows, snapshots and scattering candidates.

    Deterministic for a given config.  Raises NumericalBlowup on a non-finite
    state; the exception carries the last finite TrajectoryState.
    """
    rep = config.rep() if rep is None else rep
    grid = config.grid
    dt = config.time_step
    n_steps = config.n_steps
    stepper = Stepper(grid, rep, config.mass, dt, config.dealias)
    psi0_raw = make_initial_data(config)
    state = stepper.initial_state(psi0_raw)
    psi0 = state.psi0
    t_valid = dg.valid_time(psi0)
    warnings = []
    if config.t_end > t_valid:
        msg = (f"WARNING: t_end = {config.t_end:g} exceeds t_valid = {t_valid:g}; "
               "periodic wrap-around contaminates later diagnostics")
        warnings.append(msg)
        log.warning(msg)
    heuristic = not rep.h_is_gamma0
    if heuristic:
        warnings.append("scattering diagnostics are heuristic: H differs from gamma0")

    table = dg.GhostTable(config.delta, -config.t_end - grid.length, grid.length)
    hermitian = rep.h_is_hermitian
    ghost = dg.GhostAccumulator(dg.ghost_sample(psi0.values, 0.0, grid, rep, config.delta, table, hermitian))
    monitor = dg.WaveBoundMonitor(psi0, rep, config.mass) if config.monitors else None

    row_stride = _stride(config.output_every, dt)
    snap_stride = _stride(config.snapshot_every, dt) if config.snapshot_every > 0 else None
    checkpoints = _checkpoint_steps(n_steps)

    rows, mrows, snaps, plus = [], [], [], {}
    step_times = np.zeros(n_steps + 1)
    f_norms = np.zeros((n_steps + 1, 4))
    weights = [grid.japanese_xi_power(s) ** 2 for s in range(4)]

    def f_norm_row(f_hat):
        a = (np.abs(f_hat) ** 2).sum(axis=0)
        return [math.sqrt(grid.cell_area * float(np.sum(a * w)) / grid.n ** 2) for w in weights]

    def emit_row(st: TrajectoryState):
        psi = st.psi
        t = psi.time
        ph = fft2(psi.values)
        charge = grid.l2_norm_hat(ph) ** 2
        d1, d2, d3, dm = dg.decay_envelopes(psi, rep, config.mass)
        if config.ks_diagnostics:
            ks = dg.klainerman_sobolev_ratio(psi, dg.vector_field_norm_sum(psi, rep, config.mass, 2))
        else:
            ks = 0.0
        comp = dg.companion_residual(psi, st.wave, rep, config.mass, psi_hat=ph)
        hn = [grid.l2_norm_hat(ph, s) for s in range(4)]
        bal = ghost.close_row() if rows else 0.0
        row = dg.DiagnosticsRow(t, charge, ghost.ghost_integral, charge + ghost.ghost_integral, bal,
                                d1, d2, d3, ks, comp, *hn, dm, int(t <= t_valid))
        rows.append(row)
        if monitor is not None:
            mrows.append((t, dg.psi_minus_reconstruction_residual(psi, st.wave, rep, config.mass),
                          monitor.update(psi, st.wave), ghost.last.weighted_charge))
        if on_row is not None:
            on_row(row)

    def record(st: TrajectoryState):
        k = st.step
        step_times[k] = st.psi.time
        f_norms[k] = f_norm_row(st.f_hat)
        if k % row_stride == 0 or k == n_steps:
            emit_row(st)
        if snap_stride is not None and (k % snap_stride == 0 or k == n_steps):
            snaps.append(st.psi)
        if k in checkpoints and st.duhamel_accum is not None:
            plus[st.psi.time] = _psi_plus(st)

    record(state)
    for _ in range(n_steps):
        state = stepper.step(state)
        ghost.advance(dg.ghost_sample(state.psi.values, state.psi.time, grid, rep, config.delta,
                                      table, hermitian))
        record(state)

    return RunResult(config, rows, mrows, snaps, plus, psi0, step_times, f_norms, t_valid,
                     smallness_norm(psi0), state, warnings, heuristic)


def _psi_plus(state: TrajectoryState) -> SpinorField:
    from .scattering import finalize_scattering_state
    return finalize_scattering_state(state)

"""Command-line entry point: check-identities, run, convergence, sweep, scatter-report.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure,
3 identity failure.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import diagnostics as dg
from .evolution import (ConfigError, NumericalBlowup, SimConfig, Stepper, make_initial_data, run,
                        MONITOR_COLUMNS, SWEEP_AXES)
from .grid import SpinorField, fft2, read_snapshot, write_snapshot
from .identities import corrupted_rep, format_table, run_identity_suite
from .scattering import extrapolate_tail, scattering_error
from .spinor_algebra import cubic_nonlinearity

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IDENTITY = 0, 1, 2, 3
ORDER_WINDOW = (1.8, 2.2)
# fraction of spectral energy beyond 2/3 of the Nyquist box that flags an under-resolved grid
UNDER_RESOLVED = 1e-10


def output_root() -> Path:
    return Path(os.environ.get("DIRAC2D_OUT", "dirac2d_out"))


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_lines(path, lines):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(outdir: Path, config: SimConfig, artifacts, started: str, extra=None) -> Path:
    manifest = {
        "code_version": __version__,
        "config": config.to_text().splitlines(),
        "start_wall_time": started,
        "end_wall_time": _now(),
        "artifacts": [{"path": str(Path(p).relative_to(outdir)), "sha256": sha256(p)} for p in artifacts],
    }
    manifest.update(extra or {})
    path = outdir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def verify_manifest(outdir) -> list:
    """Return the artifact paths whose checksum no longer matches (empty when all good)."""
    outdir = Path(outdir)
    data = json.loads((outdir / "manifest.json").read_text(encoding="utf-8"))
    bad = []
    for item in data["artifacts"]:
        p = outdir / item["path"]
        if not p.exists() or sha256(p) != item["sha256"]:
            bad.append(item["path"])
    return bad


def snapshot_name(t: float) -> str:
    return f"psi_t{t:010.4f}.bin"


def diagnostics_lines(rows, warnings=()) -> list:
    lines = [f"# {w}" for w in warnings if w.startswith("WARNING")]
    lines.append(",".join(dg.CSV_COLUMNS))
    lines.extend(r.as_csv() for r in rows)
    return lines


def scattering_report(result, use_extrapolation: bool = True):
    """Report against the tail-extrapolated psi_plus when the candidates contract, else psi_plus_T."""
    ts = sorted(result.psi_plus)
    final = result.psi_plus[ts[-1]]
    plus, p = final, float("nan")
    if use_extrapolation and len(ts) == 3:
        plus, p = extrapolate_tail(*(result.psi_plus[t] for t in ts))
    rep = result.config.rep()
    report = scattering_error(result.snapshots, plus, rep=rep, mass=result.config.mass,
                              tail_times=result.step_times, tail_norms=result.f_norms,
                              heuristic=result.heuristic_scattering)
    report.notes.append(f"tail exponent p = {p:.6g}" if math.isfinite(p) else "no tail extrapolation")
    return report, final, p


def write_run_outputs(result, outdir: Path) -> list:
    outdir.mkdir(parents=True, exist_ok=True)
    snapdir = outdir / "snapshots"
    snapdir.mkdir(exist_ok=True)
    paths = []
    cfg = outdir / "config.txt"
    cfg.write_text(result.config.to_text(), encoding="utf-8")
    paths.append(cfg)
    diag = outdir / "diagnostics.csv"
    _write_lines(diag, diagnostics_lines(result.rows, result.warnings))
    paths.append(diag)
    if result.monitor_rows:
        mon = outdir / "monitors.csv"
        _write_lines(mon, [",".join(MONITOR_COLUMNS)] + [",".join(dg.fmt(v) for v in r)
                                                         for r in result.monitor_rows])
        paths.append(mon)
    for snap in result.snapshots:
        p = snapdir / snapshot_name(snap.time)
        write_snapshot(p, snap)
        paths.append(p)
    if result.psi_plus:
        report, final, _ = scattering_report(result)
        p = outdir / "psi_plus.bin"
        write_snapshot(p, final)
        paths.append(p)
        if report.psi_plus is not final:
            p = outdir / "psi_plus_extrapolated.bin"
            write_snapshot(p, report.psi_plus)
            paths.append(p)
        if len(report.times):
            p = outdir / "scattering.csv"
            report.write_csv(p)
            paths.append(p)
    return paths


def _load_config(path):
    try:
        return SimConfig.from_file(path)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except IsADirectoryError:
        raise ConfigError(f"config path is a directory: {path}") from None


# --------------------------------------------------------------------------
# subcommands

def cmd_check_identities(args) -> int:
    rep = corrupted_rep(args.scale_gamma1) if args.scale_gamma1 != 1.0 else None
    results = run_identity_suite(rep)
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("identity failure: " + ", ".join(failed), file=sys.stderr)
        return EXIT_IDENTITY
    return EXIT_OK


def execute_run(config: SimConfig, outdir: Path, quiet: bool = False):
    """Run one configuration and write its artifacts; returns (exit code, RunResult or None)."""
    started = _now()
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        # overflow on the way to a blow-up is reported by the finite-state check, not as warnings
        with np.errstate(over="ignore", invalid="ignore"):
            result = run(config)
    except NumericalBlowup as exc:
        paths = []
        if exc.last_state is not None:
            (outdir / "snapshots").mkdir(exist_ok=True)
            p = outdir / "snapshots" / "last_good.bin"
            write_snapshot(p, exc.last_state.psi)
            paths.append(p)
        write_manifest(outdir, config, paths, started, {"status": "numeric failure", "error": str(exc)})
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC, None
    if not quiet:
        for w in result.warnings:
            print(w, file=sys.stderr)
    paths = write_run_outputs(result, outdir)
    write_manifest(outdir, config, paths, started, {
        "status": "ok",
        "t_valid": result.t_valid,
        "smallness_norm": result.smallness,
        "warnings": result.warnings,
        "heuristic_scattering": result.heuristic_scattering,
        "step_wall_seconds": result.final_state.wall_seconds,
    })
    return EXIT_OK, result


def cmd_run(args) -> int:
    config = _load_config(args.config)
    outdir = Path(args.out) if args.out else output_root() / config.name
    code, result = execute_run(config, outdir)
    if result is not None:
        last = result.rows[-1]
        print(f"run {config.name}: t = {last.t:g}, charge = {last.charge:.12g}, D1 = {last.D1:.6g}, "
              f"t_valid = {result.t_valid:.4g}; outputs in {outdir}")
    return code


def spectral_tail_fraction(psi: SpinorField) -> float:
    """Share of the spectral energy outside the 2/3 box."""
    vh = fft2(psi.values)
    e = (np.abs(vh) ** 2).sum(axis=0)
    tot = float(e.sum())
    return 0.0 if tot == 0 else float(e[psi.grid.two_thirds_mask == 0].sum()) / tot


def convergence_study(config: SimConfig):
    """Three runs at dt, dt/2, dt/4 to conv_t_end; returns (order, diffs)."""
    rep = config.rep()
    psi0 = make_initial_data(config)
    finals = []
    for level in range(3):
        dt = config.conv_dt / 2 ** level
        st = Stepper(config.grid, rep, config.mass, dt, config.dealias, accumulate=False)
        state = st.initial_state(psi0)
        for _ in range(int(round(config.conv_t_end / dt))):
            state = st.step(state)
        finals.append(state.psi.values)
    g = config.grid
    d1 = g.l2_norm(finals[0] - finals[1])
    d2 = g.l2_norm(finals[1] - finals[2])
    order = math.log2(d1 / d2) if d2 > 0 and d1 > 0 else float("nan")
    return order, (d1, d2)


def cmd_convergence(args) -> int:
    config = _load_config(args.config)
    psi0 = make_initial_data(config)
    tail = spectral_tail_fraction(psi0)
    if tail > UNDER_RESOLVED:
        print(f"WARNING: grid under-resolves the initial data (spectral tail fraction {tail:.3e} "
              f"> {UNDER_RESOLVED:.0e}); refine n or smooth the data", file=sys.stderr)
        return EXIT_NUMERIC
    if not np.any(config.rep().h_matrix):
        print("exact linear flow: H = 0, the stepper has no splitting error; order check skipped")
        return EXIT_OK
    try:
        order, (d1, d2) = convergence_study(config)
    except NumericalBlowup as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    lo, hi = ORDER_WINDOW
    ok = lo <= order <= hi
    print(f"dt = {config.conv_dt:g}, {config.conv_dt / 2:g}, {config.conv_dt / 4:g}; "
          f"|u1-u2| = {d1:.6e}, |u2-u3| = {d2:.6e}; observed order = {order:.4f} "
          f"({'within' if ok else 'outside'} [{lo}, {hi}])")
    return EXIT_OK if ok else EXIT_NUMERIC


SWEEP_COLUMNS = ("value", "max_D1", "max_D2", "final_ghost_energy", "scattering_ratio",
                 "max_massive_envelope", "status")


def _sweep_cell(args):
    config, outdir = args
    try:
        code, result = execute_run(config, Path(outdir), quiet=True)
    except Exception as exc:  # a failing cell must not take down the sweep
        return None, f"failed: {type(exc).__name__}: {exc}"
    if result is None:
        return None, "failed: numerical"
    rows = result.rows
    ratio = float("nan")
    if result.psi_plus and len(result.snapshots) > 1:
        rep, _, _ = scattering_report(result)
        t_end = result.config.t_end
        try:
            ratio = rep.ratio_spread(0, 0.5 * t_end, t_end)
        except ValueError:
            pass
    return (max(r.D1 for r in rows), max(r.D2 for r in rows), rows[-1].ghost_energy, ratio,
            max(r.massive_envelope for r in rows)), "ok"


def parse_values(text: str) -> list:
    vals = [float(v) for v in text.replace(",", " ").split()]
    if not vals:
        raise ConfigError("sweep needs at least one value")
    return vals


def cmd_sweep(args) -> int:
    config = _load_config(args.config)
    axis = args.axis or config.sweep_axis
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis must be one of {SWEEP_AXES}")
    values = parse_values(args.values if args.values else config.sweep_values)
    workers = args.workers or config.workers or os.cpu_count() or 1
    root = Path(args.out) if args.out else output_root() / config.name
    cells = []
    for v in values:
        tag = repr(float(v))  # shortest round-trip form keeps directory names readable
        cfg = config.replace(**{axis: v, "name": f"{config.name}_{axis}_{tag}"})
        cfg.validate()
        cells.append((cfg, str(root / f"{axis}={tag}")))
    if workers == 1 or len(cells) == 1:
        results = [_sweep_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as pool:
            results = list(pool.map(_sweep_cell, cells))
    lines = [",".join(SWEEP_COLUMNS)]
    failed = 0
    for v, (stats, status) in zip(values, results):
        if stats is None:
            failed += 1
            stats = (float("nan"),) * 5
        lines.append(",".join([dg.fmt(v)] + [dg.fmt(s) for s in stats] + [status]))
    root.mkdir(parents=True, exist_ok=True)
    _write_lines(root / "sweep_summary.csv", lines)
    print("\n".join(lines))
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_scatter_report(args) -> int:
    rundir = Path(args.run_dir)
    config = _load_config(rundir / "config.txt")
    plus_path = rundir / ("psi_plus_extrapolated.bin" if args.extrapolated else "psi_plus.bin")
    if not plus_path.exists():
        raise ConfigError(f"missing {plus_path}")
    plus = read_snapshot(plus_path)
    snaps = [read_snapshot(p) for p in sorted((rundir / "snapshots").glob("psi_t*.bin"))]
    if not snaps:
        raise ConfigError(f"no snapshots under {rundir / 'snapshots'}")
    rep = config.rep()
    # tail integrals from the stored snapshots only (coarser than the in-run report)
    tt = np.array([s.time for s in snaps])
    fn = np.array([[s.grid.l2_norm_hat(fft2(cubic_nonlinearity(rep, s.values)), k) for k in range(4)]
                   for s in snaps])
    report = scattering_error(snaps, plus, rep=rep, mass=config.mass, tail_times=tt, tail_norms=fn,
                              heuristic=not rep.h_is_gamma0)
    out = Path(args.out) if args.out else rundir / "scattering_report.csv"
    report.write_csv(out)
    t_end = float(tt[-1])
    spread = report.ratio_spread(0, 0.5 * t_end, t_end)
    print(f"{len(snaps)} snapshots; ratio_h0 max/min over [{0.5 * t_end:g}, {t_end:g}] = {spread:.4g}; "
          f"flow norm drift = {report.flow_norm_drift:.2e}"
          + ("; HEURISTIC (H is not gamma0)" if report.heuristic else ""))
    print(f"report written to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dirac2d", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"dirac2d {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("check-identities", help="run the algebraic and commutator identity suite")
    s.add_argument("--scale-gamma1", type=float, default=1.0, metavar="FACTOR",
                   help="multiply gamma^1 by FACTOR (corrupts the representation; for testing the guard)")
    s.set_defaults(func=cmd_check_identities)

    s = sub.add_parser("run", help="integrate one configuration and write all artifacts")
    s.add_argument("config")
    s.add_argument("--out", help="output directory (default $DIRAC2D_OUT/<name>)")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("convergence", help="dt-halving self-convergence study")
    s.add_argument("config")
    s.set_defaults(func=cmd_convergence)

    s = sub.add_parser("sweep", help="run a parameter sweep concurrently")
    s.add_argument("config")
    s.add_argument("--axis", choices=SWEEP_AXES)
    s.add_argument("--values", help="comma separated values (default: sweep_values from the config)")
    s.add_argument("--workers", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("scatter-report", help="recompute the scattering report of a finished run")
    s.add_argument("run_dir")
    s.add_argument("--extrapolated", action="store_true", help="use psi_plus_extrapolated.bin")
    s.add_argument("--out")
    s.set_defaults(func=cmd_scatter_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

Exit status: 0 success, 1 usage error, 2 data or validation error,
3 fit did not converge.  Diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config, parse_number
from .counting import InconsistentDataError, invert_rates, pair_fringe_visibility, rate_uncertainties, visibility
from .dataset import DatasetError, format_float, read_dataset, rows_from_results, write_dataset
from .estimation import (
    FitError,
    FringeData,
    PhasePoint,
    decompose_idler_counts,
    fit_birefringent_phase,
    fit_fringe,
    fringe_model,
    phase_model,
    subtract_accidentals,
)
from .montecarlo import SWEEP_VARIABLES, SweepError, simulate_point, simulate_sweep
from .polarization import (
    PSI_MINUS,
    PSI_PLUS,
    AnalyzerSetting,
    FiberParams,
    PumpState,
    coincidence_probability,
    pass_probabilities,
    pump_phase_from_per,
    solve_pump_for_phase,
    total_phase,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FIT = 0, 1, 2, 3
SEED_ENV = "FIBERBELL_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def parse_values(spec: str) -> list[float]:
    """``start:stop:step`` (stop excluded) or a comma list; numbers may use a pi suffix."""
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise UsageError(f"range must be start:stop:step, got {spec!r}")
        start, stop, step = (parse_number(p) for p in parts)
        if step <= 0 or not all(map(math.isfinite, (start, stop, step))):
            raise UsageError("range step must be positive and bounds finite")
        n = int(math.floor((stop - start) / step + 1e-9))
        n = n if start + n * step < stop - 1e-9 * step else n - 1
        values = [start + k * step for k in range(n + 1)]
    else:
        values = [parse_number(p) for p in spec.split(",") if p.strip()]
    if not values:
        raise UsageError(f"no values in {spec!r}")
    return values


def _resolve_seed(args, cfg) -> int:
    if args.seed is not None:
        return args.seed
    if cfg is not None and cfg.seed is not None:
        return cfg.seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return 0


@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            yield fh


def _fmt(v):
    if isinstance(v, float):
        return format_float(v)
    if isinstance(v, (np.floating,)):
        return format_float(float(v))
    return str(v)


def write_rows(fh, header, rows, fmt="csv"):
    if fmt == "csv":
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    else:
        for row in rows:
            obj = {}
            for k, v in zip(header, row):
                if isinstance(v, (float, np.floating)):
                    v = float(v) if math.isfinite(v) else format_float(float(v))
                obj[k] = v
            fh.write(json.dumps(obj) + "\n")


def _require_config(args):
    if not args.config:
        raise UsageError("--config is required for this command")
    return load_config(args.config)


def _plot_path(args, suffix):
    if getattr(args, "plot_data", None):
        return args.plot_data
    if args.out and args.out != "-":
        p = Path(args.out)
        return str(p.with_name(p.stem + suffix))
    return None


# ---------------------------------------------------------------- commands


def cmd_simulate(args):
    cfg = _require_config(args)
    sim = cfg.sim_config(_resolve_seed(args, cfg))
    res = simulate_point(sim, workers=args.workers)
    with _output(args.out) as fh:
        write_dataset(fh, rows_from_results([res]), args.format)
    return EXIT_OK


def cmd_sweep(args):
    cfg = _require_config(args)
    values = parse_values(args.values)
    sim = cfg.sim_config(_resolve_seed(args, cfg))
    if args.variable in ("theta_i", "theta_s") and sim.analyzers is None:
        raise UsageError(f"sweeping {args.variable} needs an [analyzers] section in the config")
    results = simulate_sweep(sim, args.variable, values, workers=args.workers)
    with _output(args.out) as fh:
        write_dataset(fh, rows_from_results(results), args.format)
    return EXIT_OK


def cmd_invert(args):
    cfg = _require_config(args)
    rows = read_dataset(args.data)
    out_rows = []
    problems = []
    for row in rows:
        rec = row.record()
        pp = None
        if args.with_analyzers:
            pp = _row_pass_probs(row, cfg)
        try:
            rates = invert_rates(rec.rates(), cfg.det, pp)
        except InconsistentDataError as exc:
            problems.append(f"point {row.point_id}: {exc}")
            out_rows.append((row.point_id, math.nan, math.nan, math.nan, "no-real-root"))
            continue
        status = "ok"
        if rates.diagnostics:
            # negative values within noise are reported; beyond 3 sigma the data contradict the model
            sigma = rate_uncertainties(rec, rates, cfg.det, pp)
            values = {"R": rates.R, "R_s": rates.R_s, "R_i": rates.R_i}
            bad = [k for k, v in values.items() if v < -3.0 * sigma[k]]
            note = "; ".join(rates.diagnostics)
            if bad:
                status = "inconsistent"
                problems.append(f"point {row.point_id}: {note} (beyond 3 sigma: {', '.join(bad)})")
            elif any(v < 0.0 for v in values.values()):
                status = "negative"
                print(f"warning: point {row.point_id}: {note} (within 3 sigma of zero)", file=sys.stderr)
            else:
                status = "unobservable"
                print(f"warning: point {row.point_id}: {note}", file=sys.stderr)
        out_rows.append((row.point_id, rates.R, rates.R_s, rates.R_i, status))
    with _output(args.out) as fh:
        write_rows(fh, ("point_id", "R", "R_s", "R_i", "status"), out_rows, args.format)
    if problems:
        for p in problems:
            print(f"inconsistent data: {p}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _row_pass_probs(row, cfg):
    if math.isnan(row.theta_s_deg) or math.isnan(row.theta_i_deg):
        return None
    pump = PumpState(row.per_db, row.handedness, row.long_axis, cfg.pump.theta_p_deg)
    return pass_probabilities(AnalyzerSetting(row.theta_s_deg, row.theta_i_deg), pump, cfg.fiber)


def _fringe_rows(fit):
    p, e = fit.params, fit.errors
    rows = [(k, p[k], e[k]) for k in ("A", "B", "C", "visibility", "phase_deg")]
    rows += [("rss", fit.rss, math.nan), ("dof", float(fit.dof), math.nan)]
    return rows


def _fringe_from_args(args):
    rows = read_dataset(args.data)
    angle = f"{args.angle}_deg"
    data = FringeData.from_records((r.record() for r in rows), angle=angle, subtract=not args.raw)
    return rows, data


def cmd_fit_fringe(args):
    rows, data = _fringe_from_args(args)
    fit = fit_fringe(data)
    for flag in fit.flags:
        print(f"warning: {flag}", file=sys.stderr)
    with _output(args.out) as fh:
        write_rows(fh, ("quantity", "value", "error"), _fringe_rows(fit), args.format)
    plot = _plot_path(args, ".plot.csv")
    if plot:
        model = fringe_model(data.angles_deg, fit["A"], fit["B"], fit["C"])
        with _output(plot) as fh:
            write_rows(fh, ("x", "y", "y_err", "model_y"),
                       zip(data.angles_deg.tolist(), data.values.tolist(), data.errors.tolist(), model.tolist()),
                       args.format)
    return EXIT_OK


def _phase_points(rows):
    pts = []
    for r in rows:
        if not (math.isnan(r.theta_s_deg) or math.isnan(r.theta_i_deg)):
            if abs(r.theta_s_deg - 135.0) > 1e-9 or abs(r.theta_i_deg - 45.0) > 1e-9:
                print(f"warning: point {r.point_id} analyzers are not at (135, 45)", file=sys.stderr)
        y, e = subtract_accidentals(r.record())
        pts.append(PhasePoint(r.per_db, r.handedness, r.long_axis, y, e))
    return pts


def _phase_rows(fit):
    p, e = fit.params, fit.errors
    rows = [
        ("phi_b", p["phi_b"], e["phi_b"]),
        ("phi_b_over_pi", p["phi_b"] / math.pi, e["phi_b"] / math.pi),
        ("K", p["K"], e["K"]),
    ]
    boot = fit.extra.get("bootstrap")
    if boot:
        rows += [
            ("bootstrap_std", boot["std"], math.nan),
            ("bootstrap_ci_lo", boot["ci"][0], math.nan),
            ("bootstrap_ci_hi", boot["ci"][1], math.nan),
        ]
    rows += [("rss", fit.rss, math.nan), ("dof", float(fit.dof), math.nan)]
    return rows


def cmd_fit_phase(args):
    rows = read_dataset(args.data)
    pts = _phase_points(rows)
    fit = fit_birefringent_phase(pts, n_boot=args.bootstrap, seed=_resolve_seed(args, None))
    with _output(args.out) as fh:
        write_rows(fh, ("quantity", "value", "error"), _phase_rows(fit), args.format)
    plot = _plot_path(args, ".plot.csv")
    if plot:
        x = fit.extra["x"]
        model = phase_model(x, fit["K"], fit["phi_b"])
        with _output(plot) as fh:
            write_rows(fh, ("x", "y", "y_err", "model_y"),
                       zip(x.tolist(), [p.value for p in pts], [p.error for p in pts], model.tolist()),
                       args.format)
    return EXIT_OK


_TARGETS = {"psi-plus": 0.0, "psi+": 0.0, "psi-minus": math.pi, "psi-": math.pi}


def cmd_dial(args):
    if args.phi_b is not None:
        fiber = FiberParams(parse_number(args.phi_b))
    else:
        fiber = _require_config(args).fiber
    t = args.target.lower()
    target = _TARGETS[t] if t in _TARGETS else parse_number(args.target)
    pump = solve_pump_for_phase(target, fiber)
    phi = total_phase(pump_phase_from_per(pump.per_db, pump.handedness), fiber, pump.long_axis)
    rows = [
        ("per_db", pump.per_db),
        ("handedness", pump.handedness),
        ("long_axis", f"{pump.long_axis:+d}"),
        ("pump_phase", pump.phase),
        ("state_phase", phi),
        ("coincidence_135_45", coincidence_probability(135.0, 45.0, phi)),
    ]
    with _output(args.out) as fh:
        write_rows(fh, ("quantity", "value"), rows, args.format)
    return EXIT_OK


def _detect_kind(rows):
    thetas = {r.theta_i_deg for r in rows}
    pumps = {(r.per_db, r.handedness, r.long_axis) for r in rows}
    if len(pumps) > 1 and len(thetas) <= 1:
        return "phase"
    if len(thetas) > 1:
        return "fringe"
    raise UsageError("cannot tell fringe from phase sweep: neither analyzer angle nor pump varies")


def cmd_report(args):
    from .plotting import fringe_figure, phase_figure, save_figure

    cfg = _require_config(args)
    rows = read_dataset(args.data)
    kind = args.kind if args.kind != "auto" else _detect_kind(rows)
    fig_dir = Path(args.figures_dir) if args.figures_dir else (Path(args.out).parent if args.out not in (None, "-") else None)
    stem = Path(args.out).stem if args.out not in (None, "-") else "report"
    lines = [f"fiberbell {__version__} report", f"dataset: {args.data} ({len(rows)} points)", ""]
    table_rows = []
    fig = None

    if kind == "fringe":
        args.angle = "theta_i"
        args.raw = False
        _, data = _fringe_from_args(args)
        fit = fit_fringe(data)
        table_rows = _fringe_rows(fit)
        phi = total_phase(cfg.pump.phase, cfg.fiber, cfg.pump.long_axis)
        theta_s = rows[0].theta_s_deg
        lines += [
            f"two-photon fringe over theta_i at theta_s = {theta_s:g} deg (accidentals subtracted)",
            f"  visibility (standard)    = {fit['visibility']:.4f} +- {fit.errors['visibility']:.4f}",
            f"  fringe maximum at theta_i = {fit['phase_deg']:.2f} +- {fit.errors['phase_deg']:.2f} deg",
            f"  reduced chi2             = {fit.rss / max(fit.dof, 1):.3f} (dof {fit.dof})",
            f"  configured state phase   = {phi / math.pi:.4f} pi",
            f"  model visibility, standard convention          = {pair_fringe_visibility(theta_s, phi):.4f}",
            f"  model visibility, paper-theoretical convention = {visibility(convention='paper-theoretical', phase=phi):.4f}",
        ]
        for flag in fit.flags:
            lines.append(f"  warning: {flag}")
        decomposition = _decompose(rows, cfg)
        if decomposition is not None:
            lines += ["", "idler singles split (counts): angle, total, pair +- err, raman +- err"]
            for a, t, p, pe, r, re in zip(data.angles_deg, decomposition["total"], decomposition["pair"],
                                          decomposition["pair_err"], decomposition["raman"], decomposition["raman_err"]):
                lines.append(f"  {a:7.2f} {t:9.0f} {p:10.1f} +- {pe:7.1f} {r:10.1f} +- {re:7.1f}")
        if fig_dir is not None:
            fig = fringe_figure(data.angles_deg, data.values, data.errors, fit, decomposition=decomposition)
        plot_cols = zip(data.angles_deg.tolist(), data.values.tolist(), data.errors.tolist(),
                        fringe_model(data.angles_deg, fit["A"], fit["B"], fit["C"]).tolist())
    else:
        pts = _phase_points(rows)
        fit = fit_birefringent_phase(pts, n_boot=args.bootstrap, seed=_resolve_seed(args, cfg))
        table_rows = _phase_rows(fit)
        phi_b = fit["phi_b"]
        fitted = FiberParams(phi_b)
        lines += [
            "pump-polarization sweep at analyzers (135, 45), accidentals subtracted",
            f"  phi_b = {phi_b / math.pi:.4f} pi +- {fit.errors['phi_b'] / math.pi:.4f} pi",
            f"  bootstrap {fit.extra['bootstrap']['level']:.0%} interval: "
            f"[{fit.extra['bootstrap']['ci'][0] / math.pi:.4f}, {fit.extra['bootstrap']['ci'][1] / math.pi:.4f}] pi",
            f"  amplitude K = {fit['K']:.2f} +- {fit.errors['K']:.2f}",
            "",
            "Bell-state pump settings for the fitted phi_b:",
        ]
        for name, target in ((PSI_PLUS, 0.0), (PSI_MINUS, math.pi)):
            pump = solve_pump_for_phase(target, fitted)
            lines.append(f"  {name}: PER {pump.per_db:.3f} dB, {pump.handedness}-handed, long axis {pump.long_axis:+d} deg")
        x = fit.extra["x"]
        y = np.array([p.value for p in pts])
        e = np.array([p.error for p in pts])
        if fig_dir is not None:
            signed = np.array([(p.per_db if p.handedness == "right" else -p.per_db) for p in pts])
            signed = np.where(np.isinf(signed), np.nan, signed)
            fig = phase_figure(x, y, e, fit, signed_per=signed)
        plot_cols = zip(x.tolist(), y.tolist(), e.tolist(), phase_model(x, fit["K"], phi_b).tolist())

    text = "\n".join(lines) + "\n"
    if fig_dir is not None:
        fig_dir.mkdir(parents=True, exist_ok=True)
        with open(fig_dir / f"{stem}_fit.csv", "w", newline="", encoding="utf-8") as fh:
            write_rows(fh, ("quantity", "value", "error"), table_rows)
        with open(fig_dir / f"{stem}_plot.csv", "w", newline="", encoding="utf-8") as fh:
            write_rows(fh, ("x", "y", "y_err", "model_y"), plot_cols)
        save_figure(fig, fig_dir / f"{stem}.png")
        text += f"\nwrote {stem}_fit.csv, {stem}_plot.csv and {stem}.png to {fig_dir}\n"
    with _output(args.out) as fh:
        fh.write(text)
    return EXIT_OK


def _decompose(rows, cfg):
    if any(math.isnan(r.theta_s_deg) for r in rows):
        return None
    out = {k: [] for k in ("total", "pair", "pair_err", "raman", "raman_err")}
    for r in rows:
        pp = _row_pass_probs(r, cfg)
        if pp["P_c"] <= 1e-9:
            for k in ("pair", "pair_err", "raman", "raman_err"):
                out[k].append(math.nan)
        else:
            d = decompose_idler_counts(r.record(), cfg.det, pp)
            for k in ("pair", "pair_err", "raman", "raman_err"):
                out[k].append(d[k])
        out["total"].append(float(r.n_i))
    return {k: np.array(v) for k, v in out.items()}


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fiberbell", description="Polarization-entangled pair source simulation and analysis.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def common(p, data=False):
        p.add_argument("--config", help="experiment configuration file")
        p.add_argument("--out", default="-", help="output path (default stdout)")
        p.add_argument("--seed", type=int, help=f"master seed (overrides config and ${SEED_ENV})")
        p.add_argument("--format", choices=("csv", "json-lines"), default="csv")
        if data:
            p.add_argument("--data", required=True, help="dataset CSV")

    p = sub.add_parser("simulate", help="simulate one measurement point")
    common(p)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="simulate a sweep of one setting")
    common(p)
    p.add_argument("--variable", choices=SWEEP_VARIABLES, required=True)
    p.add_argument("--values", required=True, help="start:stop:step (stop excluded) or comma list; 'pi' suffix allowed")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("invert", help="recover pair and Raman rates from a dataset")
    common(p, data=True)
    p.add_argument("--with-analyzers", action="store_true", help="invert the analyzer-aware model")
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("fit-fringe", help="fit a two-photon interference fringe")
    common(p, data=True)
    p.add_argument("--angle", choices=("theta_i", "theta_s"), default="theta_i")
    p.add_argument("--raw", action="store_true", help="fit raw coincidences without subtracting accidentals")
    p.add_argument("--plot-data", help="plot-data CSV path (default: next to --out)")
    p.set_defaults(func=cmd_fit_fringe)

    p = sub.add_parser("fit-phase", help="fit the birefringent phase to a pump-PER sweep")
    common(p, data=True)
    p.add_argument("--bootstrap", type=int, default=1000)
    p.add_argument("--plot-data", help="plot-data CSV path (default: next to --out)")
    p.set_defaults(func=cmd_fit_phase)

    p = sub.add_parser("dial", help="pump setting that realizes a Bell state or phase")
    common(p)
    p.add_argument("--target", required=True, help="psi-plus, psi-minus or a phase in radians (e.g. 0.5pi)")
    p.add_argument("--phi-b", help="birefringent phase instead of reading it from --config")
    p.set_defaults(func=cmd_dial)

    p = sub.add_parser("report", help="summary report with figures")
    common(p, data=True)
    p.add_argument("--kind", choices=("auto", "fringe", "phase"), default="auto")
    p.add_argument("--figures-dir", help="directory for figures and tables (default: next to --out)")
    p.add_argument("--bootstrap", type=int, default=1000)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if getattr(args, "workers", 1) < 1:
        print("fiberbell: error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fiberbell: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FitError as exc:
        print(f"fiberbell: fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (ConfigError, DatasetError, InconsistentDataError, SweepError, ValueError, OSError) as exc:
        print(f"fiberbell: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

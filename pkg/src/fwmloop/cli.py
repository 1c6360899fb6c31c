"""Command line front end.

    fwmloop SUBCOMMAND [--config PATH|paper-defaults] [--seed N] [--out DIR]
                       [--runs N] [--no-subtract] [--workers N]

Exit status: 0 success, 1 I/O failure, 2 configuration error, 3 fit failure.
CSV files are comma separated with ``#`` comment lines; the first line records
the config hash and seed, the summary follows the data rows.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path
from typing import Iterable, Optional, Sequence

from fwmloop import config as cfg
from fwmloop.analysis import (
    ChshResult,
    chsh_maximizer,
    chsh_value_ideal,
    correlation_E_counts,
    raw_rate,
    subtract_accidentals,
)
from fwmloop.errors import ConfigError, FitError, FwmLoopError, ZeroDenominatorError
from fwmloop.experiment import (
    FringeRun,
    run_calibrate,
    run_chsh,
    run_fringe,
    run_sweep,
    source_state,
)
from fwmloop.state import relative_phase_full, relative_phase_reduced

log = logging.getLogger("fwmloop")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_FIT = 0, 1, 2, 3
COMMANDS = ("state", "fringe", "chsh", "calibrate", "sweep-distance", "maximize")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


class CsvOut:
    """Builds one CSV document in memory; written in a single call."""

    def __init__(self, kind: str, spec: cfg.ExperimentSpec):
        self.buf = io.StringIO()
        self.writer = csv.writer(self.buf, lineterminator="\n")
        self.buf.write(f"# fwmloop {kind} config_sha256={spec.digest()} seed={spec.run.seed}\n")

    def header(self, names: Sequence[str]) -> None:
        self.writer.writerow(names)

    def row(self, values: Iterable) -> None:
        self.writer.writerow([_fmt(v) for v in values])

    def comment(self, text: str) -> None:
        self.buf.write(f"# {text}\n")

    def text(self) -> str:
        return self.buf.getvalue()


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text, encoding="utf-8")
    return path


def _angle_tag(theta: float) -> str:
    return f"{theta:g}".replace("-", "m").replace(".", "p")


def fringe_csv(spec: cfg.ExperimentSpec, fr: FringeRun, subtract: bool) -> str:
    out = CsvOut("fringe", spec)
    out.comment(f"theta2_deg={fr.theta2!r}")
    out.header(["theta1_deg", "rate_raw", "rate_subtracted", "sigma", "singles_s", "singles_i", "coinc_raw", "acc_est", "gates"])
    for t1, rec in zip(fr.theta1_grid, fr.records):
        raw, s_raw = raw_rate(rec)
        sub, s_sub = subtract_accidentals(rec)
        out.row([float(t1), raw, sub, s_sub if subtract else s_raw, rec.singles_s, rec.singles_i, rec.coinc_raw, rec.acc_est, rec.gates])
    out.comment(f"V_subtracted={fr.subtracted.visibility!r} sigma={fr.subtracted.sigma!r} phase_deg={fr.subtracted.phase_deg!r}")
    out.comment(f"V_raw={fr.raw.visibility!r} sigma={fr.raw.sigma!r} phase_deg={fr.raw.phase_deg!r}")
    return out.text()


def _chsh_summary(out: CsvOut, label: str, res: ChshResult) -> None:
    out.comment(
        f"S_{label}={res.s!r} sigma_run_sd={res.sigma_s!r} sigma_poisson={res.sigma_poisson!r} "
        f"runs={res.runs} sign_placement={res.sign_placement}"
    )


def cmd_state(spec, args, out_dir) -> int:
    loop, pump = spec.loop.build(), spec.pump.build()
    st = source_state(spec)
    print(f"alpha = {pump.alpha!r}")
    print(f"beta = {pump.beta!r}")
    print(f"phi_r_full = {relative_phase_full(loop)!r}")
    print(f"phi_r_reduced = {relative_phase_reduced(loop)!r}")
    for name, a in zip(("HH", "HV", "VH", "VV"), st.amplitudes()):
        print(f"amp_{name} = {a!r}")
    return EXIT_OK


def cmd_fringe(spec, args, out_dir) -> int:
    subtract = spec.run.subtract
    thetas = args.theta2 if args.theta2 is not None else spec.angles.fringe_theta2_deg
    for t2 in thetas:
        fr = run_fringe(spec, t2)
        path = _write(out_dir, f"fringe_t2_{_angle_tag(t2)}.csv", fringe_csv(spec, fr, subtract))
        fit = fr.subtracted if subtract else fr.raw
        print(f"theta2={t2:g}  V={fit.visibility:.4f} +- {fit.sigma:.4f}  ({path})")
    return EXIT_OK


def chsh_csv(spec, run) -> str:
    out = CsvOut("chsh", spec)
    out.header(["run", "theta1_deg", "theta2_deg", "singles_s", "singles_i", "coinc_raw", "acc_est", "gates", "E_raw", "E_subtracted"])
    for r, recs in enumerate(run.records):
        for k in range(0, 16, 4):
            four = recs[k : k + 4]
            e_raw = correlation_E_counts(four, False)[0]
            try:
                e_sub = correlation_E_counts(four, True)[0]
            except ZeroDenominatorError:
                e_sub = float("nan")
            for j, rec in enumerate(four):
                s = rec.setting
                tail = [e_raw, e_sub] if j == 0 else ["", ""]
                out.row([r, s.theta1, s.theta2, rec.singles_s, rec.singles_i, rec.coinc_raw, rec.acc_est, rec.gates, *tail])
    _chsh_summary(out, "subtracted", run.subtracted)
    _chsh_summary(out, "raw", run.raw)
    return out.text()


def cmd_chsh(spec, args, out_dir) -> int:
    run = run_chsh(spec)
    path = _write(out_dir, "chsh.csv", chsh_csv(spec, run))
    res = run.subtracted if spec.run.subtract else run.raw
    print(f"S = {res.s:.4f} +- {res.sigma_s:.4f}  ({res.runs} runs, {path})")
    return EXIT_OK


def cmd_calibrate(spec, args, out_dir) -> int:
    cal = run_calibrate(spec)
    notes = ["calibrated by fwmloop calibrate", f"from config_sha256={spec.digest()}"]
    for k, v in cal.count_residuals.items():
        notes.append(f"residual {k} = {float(v):+.3e}")
    if cal.visibility:
        for k, v in cal.visibility.visibilities.items():
            notes.append(f"model visibility {k} = {float(v):.4f}")
    path = out_dir / "calibrated.ini"
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(cal.spec, path, "\n".join(notes))
    d = cal.spec.detection
    print(f"mu_pairs={d.mu_pairs!r} trans_s={d.trans_s!r} trans_i={d.trans_i!r} p_depol={d.p_depol!r}")
    print(f"wrote {path}")
    return EXIT_OK


def sweep_csv(spec, points) -> str:
    out = CsvOut("sweep-distance", spec)
    cols = ["km"]
    for t2 in spec.angles.fringe_theta2_deg:
        tag = _angle_tag(t2)
        cols += [f"V_sub_{tag}", f"sigma_sub_{tag}", f"V_raw_{tag}", f"sigma_raw_{tag}"]
    cols += ["S_sub", "sigma_S_sub", "S_raw", "sigma_S_raw", "peak_coinc_cps", "p_depol", "trans_s", "trans_i"]
    out.header(cols)
    for p in points:
        row = [p.km]
        for fr in p.fringes:
            row += [fr.subtracted.visibility, fr.subtracted.sigma, fr.raw.visibility, fr.raw.sigma]
        row += [p.chsh.subtracted.s, p.chsh.subtracted.sigma_s, p.chsh.raw.s, p.chsh.raw.sigma_s]
        row += [p.peak_coinc_cps, p.detection.p_depol, p.detection.trans_s, p.detection.trans_i]
        out.row([float(v) for v in row])
    out.comment(f"loss_db_per_km={spec.fiber.loss_db_per_km!r} depol_length_km={spec.fiber.depol_length_km!r}")
    return out.text()


def cmd_sweep(spec, args, out_dir) -> int:
    points = run_sweep(spec, args.km)
    path = _write(out_dir, "sweep_distance.csv", sweep_csv(spec, points))
    for p in points:
        vs = "  ".join(f"V{fr.theta2:g}={fr.subtracted.visibility:.3f}" for fr in p.fringes)
        print(f"{p.km:6.2f} km  {vs}  S={p.chsh.subtracted.s:.3f}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_maximize(spec, args, out_dir) -> int:
    st = source_state(spec)
    conv = spec.angles.convention
    best = chsh_maximizer(st, conv)
    print("best angles (theta1, theta1', theta2, theta2') = " + ", ".join(f"{a:.4f}" for a in best.angles))
    print(f"best sign_placement = {best.sign_placement}")
    print(f"best S = {best.s!r}")
    for placement in range(4):
        s = chsh_value_ideal(st, spec.angles.chsh_deg, placement, conv)
        print(f"configured angles, sign_placement={placement}: S = {s:.6f}")
    return EXIT_OK


HANDLERS = {
    "state": cmd_state,
    "fringe": cmd_fringe,
    "chsh": cmd_chsh,
    "calibrate": cmd_calibrate,
    "sweep-distance": cmd_sweep,
    "maximize": cmd_maximize,
}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=cfg.PAPER_DEFAULTS, help="config file or 'paper-defaults'")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--runs", type=int, help="override run.runs")
    common.add_argument("--workers", type=int, help="override run.workers")
    common.add_argument("--no-subtract", action="store_true", help="report raw coincidences")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="fwmloop", description="Fiber-loop entangled pair source simulator")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "fringe":
            sp.add_argument("--theta2", type=float, nargs="+", help="idler angles (deg)")
        if name == "sweep-distance":
            sp.add_argument("--km", type=float, nargs="+", help="fiber per arm (km)")
    return p


def _apply_overrides(spec: cfg.ExperimentSpec, args) -> cfg.ExperimentSpec:
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.runs is not None:
        changes["runs"] = args.runs
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.no_subtract:
        changes["subtract"] = False
    return spec.with_run(**changes) if changes else spec


def _check_spec(spec: cfg.ExperimentSpec) -> cfg.ExperimentSpec:
    # re-run the invariant checks after overrides
    return cfg.loads(cfg.dumps(spec))


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = _check_spec(_apply_overrides(cfg.load(args.config), args))
        return HANDLERS[args.command](spec, args, Path(args.out))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FitError, ZeroDenominatorError) as exc:
        print(f"fit failure: {exc}", file=sys.stderr)
        return EXIT_FIT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FwmLoopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

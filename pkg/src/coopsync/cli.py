"""Command-line entry point: ``coopsync {generate-config,run,cdf,info}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import montecarlo as mc
from .bp import kernel_bandwidth
from .geometry import STATE_DIM

EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coopsync", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate-config", help="write the default scenario as JSON")
    gen.add_argument("--out", required=True, help="output file (or directory for scenario.json)")

    run = sub.add_parser("run", help="run a Monte-Carlo campaign")
    run.add_argument("--config", help="scenario JSON (default scenario if omitted)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--n-runs", type=int)
    run.add_argument("--n-particles", type=int)
    run.add_argument("--iterations", type=int)
    run.add_argument("--snr-db", type=float)
    run.add_argument("--seed", type=int)
    run.add_argument("--divergence-threshold-m", type=float)
    run.add_argument("--workers", type=_positive_int, default=1)

    cdf = sub.add_parser("cdf", help="turn a runs CSV into CDF tables")
    cdf.add_argument("--runs", required=True, help="runs.csv from a campaign")
    cdf.add_argument("--iteration", type=int, help="1-based iteration (default: last)")
    cdf.add_argument("--out", required=True, help="output CSV")

    info = sub.add_parser("info", help="print derived quantities of a scenario")
    info.add_argument("--config", help="scenario JSON (default scenario if omitted)")
    return parser


def _load(path):
    if path is None:
        return mc.default_scenario()
    if not Path(path).is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return mc.load_scenario(path)


def _progress(m, done, total):
    status = "diverged" if m.diverged else "ok"
    print(f"run {done}/{total} (id {m.run_id}): {status}", file=sys.stderr, flush=True)


def cmd_generate(args):
    out = Path(args.out)
    if out.is_dir():
        out = out / "scenario.json"
    mc.save_scenario(mc.default_scenario(), out)
    print(out)


def cmd_run(args):
    cfg = _load(args.config)
    cfg = mc.with_overrides(cfg, n_runs=args.n_runs, n_particles=args.n_particles,
                            n_iterations=args.iterations, snr_db=args.snr_db, seed=args.seed,
                            divergence_threshold_m=args.divergence_threshold_m)
    result = mc.run_campaign(cfg, workers=args.workers, progress=_progress)
    paths = mc.write_outputs(result, args.out)
    print(json.dumps(mc.summary_dict(result), indent=2))
    for name, p in paths.items():
        print(f"wrote {name}: {p}", file=sys.stderr)


def cmd_cdf(args):
    if not Path(args.runs).is_file():
        raise FileNotFoundError(f"runs file not found: {args.runs}")
    cdf = mc.error_cdf(mc.read_runs_csv(args.runs), args.iteration)
    if cdf.status == "empty":
        print("all runs diverged; no CDF written", file=sys.stderr)
        return 1
    mc.write_cdf_csv(cdf, args.out)
    print(args.out)
    return 0


def cmd_info(args):
    cfg = _load(args.config)
    a = cfg.array
    lines = [
        f"N = {a.n_channel}",
        f"N_f = {a.n_freqs}, N_y = {a.n_y}, N_z = {a.n_z}",
        f"wavelength = {a.wavelength:.6g} m",
        f"h_opt = {kernel_bandwidth(STATE_DIM, cfg.bp.n_particles):.6g} (N_s = {cfg.bp.n_particles})",
        f"apertures = {len(cfg.apertures)} ({len(cfg.agents)} agents), pairs = "
        f"{len(cfg.apertures) * (len(cfg.apertures) - 1)}",
        f"snr = {cfg.snr_db} dB, runs = {cfg.n_runs}, iterations = {cfg.bp.n_iterations}",
    ]
    print("\n".join(lines))


COMMANDS = {"generate-config": cmd_generate, "run": cmd_run, "cdf": cmd_cdf, "info": cmd_info}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args) or 0
    except mc.ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

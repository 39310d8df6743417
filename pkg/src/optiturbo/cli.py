"""Command line entry point: ``optiturbo {run,threshold,selftest,export-code,plotdata}``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np


def _cmd_run(args) -> int:
    from .config import ExperimentConfig
    from .harness import run_experiment

    cfg = ExperimentConfig.load(args.config)
    res = run_experiment(cfg, args.csv, workers=args.workers, resume=not args.no_resume)
    print(f"config {cfg.hash}: {len(res.points)} aggregated points -> {args.csv}")
    return 0


def _cmd_threshold(args) -> int:
    from .config import ExperimentConfig
    from .harness import awgn_threshold, system_for
    from .metrics import ThresholdNotBracketed

    over = {"modulation": args.modulation}
    if args.ccdm_block:
        over["ccdm"] = {"block_length": args.ccdm_block}
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.from_dict(over)
    grid = np.round(np.arange(args.snr_start, args.snr_stop + 1e-9, args.snr_step), 6)
    system = system_for(cfg)
    try:
        thr, res, pts = awgn_threshold(system, grid, args.frames, args.seed, cfg["ldpc"]["bp_iters"])
    except ThresholdNotBracketed as exc:
        print(f"threshold not bracketed: {exc}", file=sys.stderr)
        return 2
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(pts[0]))
            w.writeheader()
            w.writerows(pts)
    print(f"{cfg['modulation']}: threshold {thr:.2f} dB (grid resolution {res:.2f} dB)")
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest() else 1


def _cmd_export_code(args) -> int:
    from .config import ExperimentConfig
    from .constellation import save_constellation
    from .harness import system_for
    from .ldpc import write_alist

    cfg = ExperimentConfig.from_dict({"modulation": args.modulation, "ldpc": {"seed": args.seed}})
    system = system_for(cfg)
    out = Path(args.out)
    write_alist(system.code, out)
    np.savetxt(out.with_suffix(".punct"), np.flatnonzero(system.code.puncture_mask), fmt="%d",
               header=f"punctured variable nodes; lift seed {args.seed}")
    if args.constellation:
        save_constellation(system.constellation, args.constellation)
    print(f"wrote {out} ({system.code.n_checks} x {system.code.n_var}, k={system.code.k}, "
          f"n={system.code.n_transmitted})")
    return 0


def _cmd_plotdata(args) -> int:
    from .harness import ExperimentResult, read_csv

    rows = read_csv(args.csv)
    if args.config_hash:
        rows = [r for r in rows if r["config_hash"] == args.config_hash]
    res = ExperimentResult.from_rows(rows)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.DictWriter(out, fieldnames=list(asdict(res.points[0])) + ["ber_upper_95"])
    w.writeheader()
    for p in res.points:
        w.writerow({**asdict(p), "ber_upper_95": p.ber_upper_95})
    if args.out:
        out.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="optiturbo", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a power/span sweep from a YAML config")
    r.add_argument("config")
    r.add_argument("--csv", default="results.csv")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--no-resume", action="store_true")
    r.set_defaults(func=_cmd_run)

    t = sub.add_parser("threshold", help="AWGN decoding-threshold sweep")
    t.add_argument("--modulation", default="shaped1024")
    t.add_argument("--config")
    t.add_argument("--snr-start", type=float, default=20.0)
    t.add_argument("--snr-stop", type=float, default=22.0)
    t.add_argument("--snr-step", type=float, default=0.1)
    t.add_argument("--frames", type=int, default=64)
    t.add_argument("--seed", type=int, default=7)
    t.add_argument("--ccdm-block", type=int)
    t.add_argument("--csv")
    t.set_defaults(func=_cmd_threshold)

    s = sub.add_parser("selftest", help="fast oracle checks; non-zero exit on failure")
    s.set_defaults(func=_cmd_selftest)

    e = sub.add_parser("export-code", help="write the LDPC parity-check matrix as alist")
    e.add_argument("--modulation", default="shaped1024")
    e.add_argument("--seed", type=int, default=20050901)
    e.add_argument("--out", required=True)
    e.add_argument("--constellation", help="also write the constellation table here")
    e.set_defaults(func=_cmd_export_code)

    d = sub.add_parser("plotdata", help="aggregate a results CSV into a tidy table")
    d.add_argument("csv")
    d.add_argument("--out")
    d.add_argument("--config-hash")
    d.set_defaults(func=_cmd_plotdata)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

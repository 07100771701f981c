"""Command line entry point: ``nsch run|eoc|sweep-eps <config> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from nsch import driver

EXIT_OK, EXIT_BAD_INPUT, EXIT_NONCONVERGED = 0, 1, 2

log = logging.getLogger("nsch")


def _thread_limit():
    raw = os.environ.get("NSCH_THREADS")
    if not raw:
        return nullcontext()
    try:
        k = int(raw)
    except ValueError:
        raise driver.ConfigError(f"NSCH_THREADS must be a positive integer, got {raw!r}")
    if k < 1:
        raise driver.ConfigError(f"NSCH_THREADS must be a positive integer, got {raw!r}")
    return threadpool_limits(limits=k)


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def cmd_run(args, config):
    res = driver.run(config)
    last = res.records[-1]
    print(f"{len(res.records) - 1} steps, t={last.t:.6g}, E_total={last.E_total:.10g}, "
          f"volume={last.volume:.17g}")


def cmd_eoc(args, config):
    rep = driver.eoc_study(config, args.dts, args.ref_dt, t_end=args.t_end)
    header = "dt," + ",".join(driver.ERROR_KEYS) + "," + ",".join("r_" + k for k in driver.ERROR_KEYS)
    lines = [header]
    for i, dt in enumerate(rep.dts):
        errs = [driver._fmt(rep.errors[k][i]) for k in driver.ERROR_KEYS]
        rates = [driver._fmt(rep.rates[k][i - 1]) if i else "" for k in driver.ERROR_KEYS]
        lines.append(",".join([driver._fmt(dt)] + errs + rates))
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if config.out_dir:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eoc.csv").write_text(text, encoding="utf-8", newline="\n")


def cmd_sweep(args, config):
    entries = driver.epsilon_sweep(config, args.eps)
    payload = [
        {"eps": e.eps, "max_neg_sq": e.max_neg_sq, "max_over_sq": e.max_over_sq,
         "min_phi": e.min_phi, "max_phi": e.max_phi}
        for e in entries
    ]
    for row in payload:
        print("eps={eps:g} max_neg_sq={max_neg_sq:.6e} max_over_sq={max_over_sq:.6e}".format(**row))
    if config.out_dir:
        _write_json(Path(config.out_dir) / "sweep.json", payload)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsch", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="integrate one configuration")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eoc", help="time convergence study")
    p.add_argument("config")
    p.add_argument("--dts", type=float, nargs="+", required=True)
    p.add_argument("--ref-dt", type=float, required=True)
    p.add_argument("--t-end", type=float, default=None,
                   help="common final time (default: least common multiple of all dt)")
    p.set_defaults(func=cmd_eoc)

    p = sub.add_parser("sweep-eps", help="bound violations versus eps")
    p.add_argument("config")
    p.add_argument("--eps", type=float, nargs="+", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_BAD_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = driver.load_config(args.config)
        with _thread_limit():
            args.func(args, config)
    except driver.RunAborted as exc:
        print(f"nsch: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except ValueError as exc:
        print(f"nsch: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

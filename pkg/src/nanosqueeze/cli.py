"""Command-line entry point: ``nanosqueeze run|preset|validate``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure (outputs
are still written, failing points carry an error code), 3 I/O error.
"""

import argparse
import json
import logging
import sys

from . import __version__
from .errors import ConfigError, NanosqueezeError
from .scan import FORMATS, ScanConfig, emit_outputs, load_preset, preset_names, run

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("nanosqueeze")


def _parser():
    p = argparse.ArgumentParser(prog="nanosqueeze", description="Squeezing scans for an emitter near a nanosphere.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out-dir", default=".", help="output directory (default: current)")
        sp.add_argument("--format", action="append", choices=FORMATS, dest="formats",
                        help="output format; repeat for several (default: from config)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
        sp.add_argument("--tol", type=float, default=None, help="override numerics.tol")
        sp.add_argument("-q", "--quiet", action="store_true", help="only report errors")

    r = sub.add_parser("run", help="run a scan described by a JSON config")
    r.add_argument("config")
    common(r)
    pr = sub.add_parser("preset", help="run a named preset (" + ", ".join(preset_names()) + ")")
    pr.add_argument("name")
    common(pr)
    v = sub.add_parser("validate", help="check a config and print its normalized form")
    v.add_argument("config")
    v.add_argument("--tol", type=float, default=None)
    return p


def _load(path):
    try:
        return ScanConfig.load(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def _execute(cfg, args):
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    cfg = cfg.with_overrides(tol=args.tol, formats=args.formats)
    grid = run(cfg, threads=args.threads)
    try:
        paths = emit_outputs(grid, args.out_dir, cfg.output["formats"], cfg.stem)
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_IO
    for path in paths:
        log.info("wrote %s", path)
    if grid.failures:
        report = {"failed_points": grid.failures, "codes": {
            str(c): int((grid.error == c).sum()) for c in (1, 3)}}
        print("error: numerical failure at some grid points: " + json.dumps(report), file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "validate":
            cfg = _load(args.config).with_overrides(tol=args.tol)
            sys.stdout.write(cfg.to_json())
            return EXIT_OK
        cfg = _load(args.config) if args.command == "run" else load_preset(args.name)
        return _execute(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NanosqueezeError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

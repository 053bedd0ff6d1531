"""Command-line entry point: ``microcell optimize`` and ``microcell evaluate``."""
from __future__ import annotations

import argparse
import logging
import re
import sys

from microcell.driver import (
    ConfigError,
    RunError,
    evaluate_only,
    format_tensor_report,
    load_config,
    run_optimization,
)

EXIT_CONVERGED = 0
EXIT_ERROR = 1
EXIT_MAX_ITER = 2


def _mesh(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", text)
    if not m:
        raise argparse.ArgumentTypeError(f"mesh must look like 100x100, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="microcell", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="YAML run configuration")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--mesh", type=_mesh, help="element grid, e.g. 60x60")

    opt = sub.add_parser("optimize", help="run the level set optimization")
    common(opt)
    opt.add_argument("--max-iter", type=int, help="iteration cap (overrides max_iter)")

    ev = sub.add_parser("evaluate", help="homogenize a stored field without optimizing")
    common(ev)
    ev.add_argument("--field", required=True, help="phi.txt (nodal) or rho.txt (element) dump")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    overrides = {"output_dir": args.out}
    if args.mesh is not None:
        overrides["nelx"], overrides["nely"] = args.mesh
    if getattr(args, "max_iter", None) is not None:
        overrides["max_iter"] = args.max_iter
    try:
        cfg = load_config(args.config, **overrides)
        if args.command == "evaluate":
            result = evaluate_only(cfg, args.field)
            sys.stdout.write(format_tensor_report(result, cfg))
            return EXIT_CONVERGED
        result = run_optimization(cfg)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    sys.stdout.write(format_tensor_report(result, cfg))
    print(f"stopped after {result.iterations} iterations ({result.reason}); files in {cfg.output_dir}")
    return EXIT_CONVERGED if result.converged else EXIT_MAX_ITER


if __name__ == "__main__":
    sys.exit(main())

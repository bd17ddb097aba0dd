#!/usr/bin/env python3
"""Regenerate the vanishing-selector sweep as CSV.

Each step grows the losing block while the gaining block stays fixed, with
the selector pinned at its feasibility floor; the combined method keeps
strictly beating both base methods while overall selector quality falls
toward zero.  Same data as `dualpath simulate --sweep-alpha`, packaged as a
one-shot file writer.
"""

import argparse
import sys

from dualpath.theory import alpha_sweep, write_sweep_csv


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=40, help="sweep length (default 40)")
    parser.add_argument("--tail", type=int, default=10, help="gaining-block size (default 10)")
    parser.add_argument("--out", default="-", help="output path, - for stdout (default)")
    args = parser.parse_args()

    points = alpha_sweep(args.steps, tail=args.tail)
    if args.out == "-":
        write_sweep_csv(points, sys.stdout)
    else:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            write_sweep_csv(points, fh)
        last = points[-1]
        print(f"wrote {len(points)} rows to {args.out}; final rho = {float(last.rho):.6f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

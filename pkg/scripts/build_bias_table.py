#!/usr/bin/env python3
"""Build the Monte-Carlo bias table used for bias correction.

The default grids cover Models I-IV on the observable scale. ``--acceptance``
builds the table cached for the acceptance tests (b axis extended to 100,
block lengths 216 s and 432 s); ``--theta-m`` builds the single-cell table at
theta_M used for the block-length law.
"""
import argparse
import sys
import time

from tvhawkes.bias import DEFAULT_A, DEFAULT_B, DEFAULT_DELTAS, DEFAULT_NU, build_bias_table

ACCEPTANCE_B = (20.0, 27.5, 35.0, 42.5, 50.0, 65.0, 80.0, 100.0)
ACCEPTANCE_DELTAS = (216.0, 432.0)
ACCEPTANCE_SEED = 20240607


def acceptance_table(workers=1, progress=None):
    return build_bias_table(nu=DEFAULT_NU, a=DEFAULT_A, b=ACCEPTANCE_B, deltas=ACCEPTANCE_DELTAS,
                            mc_paths=5000, seed=ACCEPTANCE_SEED, workers=workers, progress=progress)

THETA_M_SEED = 20240611
THETA_M_PATHS = 100_000


def theta_m_table(workers=1, progress=None):
    """Single cell at theta_M = (0.8, 11, 30) for Delta in (216, 432): the block-length law checks."""
    from tvhawkes.model import THETA_M

    return build_bias_table(nu=THETA_M[:1], a=THETA_M[1:2], b=THETA_M[2:], deltas=ACCEPTANCE_DELTAS,
                            mc_paths=THETA_M_PATHS, seed=THETA_M_SEED, workers=workers, progress=progress,
                            iterated=False)


def floats(s):
    return tuple(float(v) for v in s.split(","))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nu", type=floats, default=DEFAULT_NU)
    ap.add_argument("--a", type=floats, default=DEFAULT_A)
    ap.add_argument("--b", type=floats, default=DEFAULT_B)
    ap.add_argument("--delta", type=floats, default=DEFAULT_DELTAS)
    ap.add_argument("--paths", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=ACCEPTANCE_SEED)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--acceptance", action="store_true", help="grid used by tests/test_acceptance.py")
    ap.add_argument("--theta-m", action="store_true", help="single-cell theta_M table, 100k paths per cell")
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)
    if args.acceptance:
        args.b, args.delta = ACCEPTANCE_B, ACCEPTANCE_DELTAS
    t0 = time.time()
    if args.theta_m:
        table = theta_m_table(args.workers)
        table.save(args.out)
        print(f"wrote {args.out} in {time.time() - t0:.0f}s")
        return

    def progress(i, n):
        if i % 20 == 0 or i == n - 1:
            print(f"cell {i + 1}/{n}  {time.time() - t0:.0f}s", file=sys.stderr, flush=True)

    table = build_bias_table(nu=args.nu, a=args.a, b=args.b, deltas=args.delta, mc_paths=args.paths,
                             seed=args.seed, workers=args.workers, progress=progress)
    table.meta = {"wall_seconds": round(time.time() - t0, 1)}
    table.save(args.out)
    print(f"wrote {args.out}: {int(table.valid.sum())}/{table.valid.size} valid cells "
          f"in {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()

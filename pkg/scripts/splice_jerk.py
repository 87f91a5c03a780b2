"""Peak jerk of hard-cut vs crossfaded splices over random class pairs.

    python3 scripts/splice_jerk.py --pairs 200 --crossfade 8
"""

import argparse

import numpy as np

from floodstream.metrics import jerk_profile, peak_jerk
from floodstream.motion import CLASSES, gen_synthetic, splice
from floodstream.numeric import Rng


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--pairs", type=int, default=200)
    ap.add_argument("--crossfade", type=int, default=8)
    ap.add_argument("--frames", type=int, default=60)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = Rng(args.seed)
    ratios = []
    for i in range(args.pairs):
        a, b = (CLASSES[j] for j in rng.fork("pair", i).integers(len(CLASSES), (2,)))
        if a == b:
            continue
        A = gen_synthetic(rng.fork("a", i), a, args.frames)
        B = gen_synthetic(rng.fork("b", i), b, args.frames)
        hard = peak_jerk(jerk_profile(splice(A, B, 0)))
        soft = peak_jerk(jerk_profile(splice(A, B, args.crossfade)))
        ratios.append(hard / soft)
    r = np.array(ratios)
    print(f"{len(r)} distinct-class pairs: hard/crossfade PJ ratio min {r.min():.2f}, "
          f"median {np.median(r):.2f}, share >= 2: {(r >= 2).mean():.3f}")


if __name__ == "__main__":
    main()

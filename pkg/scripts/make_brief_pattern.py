#!/usr/bin/env python3
"""Generate the fixed descriptor test pattern checked in at
src/matchbench/data/brief_pattern_256.txt.

256 coordinate pairs sampled once from an isotropic Gaussian (sigma = 6.5 px),
resampled until they fall inside the 31x31 patch (|dx|, |dy| <= 15).  Run only
to regenerate the file; the committed data is the contract.
"""

from pathlib import Path

import numpy as np

SIGMA = 6.5
HALF_PATCH = 15
SEED = 20180314


def sample_coord(rng):
    while True:
        v = int(round(rng.normal(0.0, SIGMA)))
        if -HALF_PATCH <= v <= HALF_PATCH:
            return v


def main():
    rng = np.random.default_rng(SEED)
    rows = []
    for _ in range(256):
        rows.append(tuple(sample_coord(rng) for _ in range(4)))
    out = Path(__file__).resolve().parents[1] / "src" / "matchbench" / "data" / "brief_pattern_256.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write("# dx1 dy1 dx2 dy2 offsets of the 256 intensity tests in a 31x31 patch\n")
        for r in rows:
            fh.write("%d %d %d %d\n" % r)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()

"""Regenerate the shipped soft-label dataset for the urgency NN-CPD.

The grid and the hand-set logits encode three rules: many cases that are
still rising push toward stricter policy (+1), falling cases push toward
relaxing (-1), and a flat, low count favours keeping the current policy (0).

    python scripts/make_soft_labels.py src/simlr/data/soft_labels.csv
"""

import sys

import numpy as np

CASES = [0, 10, 25, 50, 100, 200, 300, 500]
CHANGES = [-150, -75, -30, -10, 0, 10, 30, 75, 150]


def logits(c, v):
    tighten = c / 150 + v / 30 - 1.5
    relax = -v / 25 - 1.6
    return np.array([relax, 0.0, tighten])


def main(path):
    with open(path, "w") as fh:
        fh.write("c,v,p_minus1,p_0,p_plus1\n")
        for c in CASES:
            for v in CHANGES:
                z = logits(c, v)
                p = np.exp(z - z.max())
                p /= p.sum()
                p = np.round(p, 3)
                p[1] = round(1.0 - p[0] - p[2], 3)
                fh.write(f"{c},{v},{p[0]:.3f},{p[1]:.3f},{p[2]:.3f}\n")


if __name__ == "__main__":
    main(sys.argv[1])

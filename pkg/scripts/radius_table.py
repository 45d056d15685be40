"""Write the Bernstein / Hoeffding / Faury radius comparison grid as CSV.

    python scripts/radius_table.py [out.csv]
"""
import math
import sys

from varmix.concentration import compare_radii
from varmix.regression import ConfidenceSpec
from varmix.traces import csv_text


def grid():
    for d in (4, 16, 64, 256):
        for label, sigma in (("R", 1.0), ("R/sqrt(d)", 1.0 / math.sqrt(d)), ("0.05", 0.05)):
            for lam in (1.0, sigma**2 * d):
                for t in (10**3, 10**4, 10**5):
                    yield label, ConfidenceSpec(dim=d, noise_bound=1.0, variance_bound=sigma, lam=lam), t


def main(argv):
    items = list(grid())
    rows = compare_radii((spec, t) for _, spec, t in items)
    header = ["sigma_label", *rows[0].keys(), "hoeffding_over_bernstein"]
    body = [(label, *r.values(), r["hoeffding"] / r["bernstein"]) for (label, _, _), r in zip(items, rows)]
    text = csv_text(header, body)
    if len(argv) > 1:
        with open(argv[1], "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main(sys.argv)

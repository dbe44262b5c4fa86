"""Build the canonical 47-state crime CSV from the public UScrime table.

Every column except the indicator So is log-transformed.  The file is not
shipped with the package; run this script once and check the printed
checksum against tallbms.harness.CRIME_SHA256.

    python3 scripts/make_crime_csv.py --out crime.csv
    python3 scripts/make_crime_csv.py --source UScrime.csv --out crime.csv
"""

import argparse
import csv
import hashlib
import math
import sys

from tallbms.harness import CRIME_COLUMNS, CRIME_SHA256


def raw_rows(source):
    if source is None:
        import rdatasets  # optional extra: pip install artifact[data]

        frame = rdatasets.data("MASS", "UScrime")
        return [{c: str(v) for c, v in row.items()} for row in frame.to_dict("records")]
    with open(source, newline="") as fh:
        return list(csv.DictReader(fh))


def build(rows, path):
    if len(rows) != 47:
        raise SystemExit(f"expected 47 rows, got {len(rows)}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CRIME_COLUMNS)
        for row in rows:
            out = []
            for c in CRIME_COLUMNS:
                v = float(row[c])
                out.append(f"{v if c == 'So' else math.log(v):.17g}")
            w.writerow(out)
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--source", help="raw UScrime CSV (default: fetch via rdatasets)")
    ap.add_argument("--out", default="crime.csv")
    args = ap.parse_args(argv)
    digest = build(raw_rows(args.source), args.out)
    print(f"{args.out} sha256 {digest}")
    if digest != CRIME_SHA256:
        print("warning: checksum differs from the canonical file", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

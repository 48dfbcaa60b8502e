#!/usr/bin/env python3
"""Download the crab and AIS datasets and write the cleaned CSVs used by the
benchmark harness.

    python3 scripts/fetch_datasets.py [--from DIR] [--out data]

With --from, raw copies are read from DIR instead of being downloaded.
"""

import argparse
import csv
import hashlib
import io
import pathlib
import urllib.request

SOURCES = {
    "crabs": "https://vincentarelbundock.github.io/Rdatasets/csv/MASS/crabs.csv",
    "ais": "https://vincentarelbundock.github.io/Rdatasets/csv/DAAG/ais.csv",
}

KEEP = {
    "crabs": ["sp", "sex", "FL", "RW", "CL", "CW", "BD"],
    "ais": ["sex", "sport", "rcc", "wcc", "hc", "hg", "ferr", "bmi", "ssf", "pcBfat", "lbm", "ht", "wt"],
}


def raw_text(name, source_dir):
    if source_dir is not None:
        return (pathlib.Path(source_dir) / f"{name}.csv").read_text()
    with urllib.request.urlopen(SOURCES[name]) as r:
        return r.read().decode("utf-8")


def clean(name, text):
    rows = list(csv.DictReader(io.StringIO(text)))
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(KEEP[name])
    for row in rows:
        w.writerow([row[k] for k in KEEP[name]])
    return out.getvalue()


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--from", dest="source_dir")
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data"))
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for name in SOURCES:
        body = clean(name, raw_text(name, args.source_dir))
        path = out / f"{name}.csv"
        path.write_text(body)
        lines.append(f"{hashlib.sha256(body.encode()).hexdigest()}  {name}.csv")
        print(f"wrote {path}")
    manifest = out / "SHA256SUMS"
    if manifest.exists():
        expected = manifest.read_text().split("\n")
        for line in lines:
            if line not in expected:
                print(f"checksum mismatch: {line}")
    else:
        manifest.write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Fetch MovieLens-100k as a user<TAB>item file for `rankformer prepare`.

The interaction table ships inside the RecBole wheel, so this only needs pip.
Every rating counts as one implicit interaction.
"""
import argparse
import glob
import os
import subprocess
import sys
import tempfile
import zipfile

MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def find_wheel(cache):
    hits = sorted(glob.glob(os.path.join(cache, "recbole-*.whl")))
    if hits:
        return hits[-1]
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-d", cache, "recbole==1.2.1"],
        check=True,
    )
    return sorted(glob.glob(os.path.join(cache, "recbole-*.whl")))[-1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "ml-100k.tsv"))
    ap.add_argument("--cache", default=os.path.join(tempfile.gettempdir(), "dl"))
    args = ap.parse_args()
    os.makedirs(args.cache, exist_ok=True)
    with zipfile.ZipFile(find_wheel(args.cache)) as wheel:
        lines = wheel.read(MEMBER).decode("utf-8").splitlines()
    rows = [line.split("\t")[:2] for line in lines[1:] if line.strip()]
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w") as f:
        f.write("# user\titem (MovieLens-100k, all ratings as implicit feedback)\n")
        for u, i in rows:
            f.write(f"{u}\t{i}\n")
    users = len({u for u, _ in rows})
    items = len({i for _, i in rows})
    print(f"wrote {len(rows)} interactions, {users} users, {items} items -> {args.out}")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Download the four MNIST IDX files into a directory.

Usage: python3 scripts/fetch_mnist.py <dest-dir>

Files land gzipped; the package reads .gz transparently. Needs outbound
network access, which the test suite itself never does.
"""

import sys
import urllib.request
from pathlib import Path

MIRROR = "https://storage.googleapis.com/cvdf-datasets/mnist/"
FILES = (
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
)


def main() -> int:
    if len(sys.argv) != 2:
        print(__doc__.strip(), file=sys.stderr)
        return 2
    dest = Path(sys.argv[1])
    dest.mkdir(parents=True, exist_ok=True)
    for name in FILES:
        target = dest / name
        if target.exists():
            print(f"kept    {target}")
            continue
        print(f"fetch   {MIRROR}{name}")
        urllib.request.urlretrieve(MIRROR + name, target)
        print(f"wrote   {target} ({target.stat().st_size} bytes)")
    print(f"done; export MNIST_DIR={dest}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

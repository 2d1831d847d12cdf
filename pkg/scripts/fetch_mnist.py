"""Download the raw MNIST IDX files into $GCELAB_DATA/mnist (default ./data/mnist).

The four files are taken from a PyPI wheel that bundles them unmodified, and
checked against the well-known MD5 digests of the original distribution.

    python3 scripts/fetch_mnist.py [--dest DIR]
"""
import argparse
import hashlib
import io
import os
import sys
import urllib.request
import zipfile
from pathlib import Path

WHEEL_URL = ("https://pypi.org/packages/5c/42/504919bf729ad48c424afee77c993f727add4b333b3941125ad657a5c445/"
             "MNIST_dir-0.2.0-py3-none-any.whl")
MD5 = {
    "train-images-idx3-ubyte": "6bbc9ace898e44ae57da46a324031adb",
    "train-labels-idx1-ubyte": "a25bea736e30d166cdddb491f175f624",
    "t10k-images-idx3-ubyte": "2646ac647ad5339dbf082846283269ea",
    "t10k-labels-idx1-ubyte": "27ae3e4e09519cfbb04c329615203637",
}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dest", default=str(Path(os.environ.get("GCELAB_DATA", "data")) / "mnist"))
    ap.add_argument("--timeout", type=float, default=900.0)
    args = ap.parse_args()
    dest = Path(args.dest)
    dest.mkdir(parents=True, exist_ok=True)
    if all((dest / name).exists() for name in MD5):
        print(f"already present in {dest}")
    else:
        print(f"downloading {WHEEL_URL}")
        with urllib.request.urlopen(WHEEL_URL, timeout=args.timeout) as resp:
            wheel = zipfile.ZipFile(io.BytesIO(resp.read()))
        for member in wheel.namelist():
            base = Path(member).name.replace(".idx", "-idx")
            if base in MD5:
                (dest / base).write_bytes(wheel.read(member))
    bad = [n for n, digest in MD5.items()
           if not (dest / n).exists() or hashlib.md5((dest / n).read_bytes()).hexdigest() != digest]
    if bad:
        print(f"checksum mismatch or missing: {bad}", file=sys.stderr)
        return 1
    print(f"MNIST ready in {dest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

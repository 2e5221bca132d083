"""Write the 5000-image MNIST subset bundled with mlxtend as gzipped IDX files.

    python scripts/make_digits_idx.py [--wheel path/to/mlxtend.whl] [--out data/]

Reads the CSV from an installed mlxtend or directly from a downloaded wheel
(``pip download mlxtend --no-deps``).  Output: data/mnist5k-images-idx3-ubyte.gz
and data/mnist5k-labels-idx1-ubyte.gz.
"""
import argparse
import gzip
import io
import zipfile
from pathlib import Path

import numpy as np

from stochbatch.data import write_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_csv_bytes(wheel=None) -> bytes:
    if wheel:
        return gzip.decompress(zipfile.ZipFile(wheel).read(MEMBER))
    import mlxtend.data

    path = Path(mlxtend.data.__file__).parent / "data" / "mnist_5k.csv.gz"
    return gzip.decompress(path.read_bytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wheel")
    ap.add_argument("--out", default="data")
    args = ap.parse_args()
    table = np.loadtxt(io.StringIO(read_csv_bytes(args.wheel).decode()), delimiter=",")
    images = table[:, :-1].reshape(-1, 28, 28).astype(np.uint8)
    labels = table[:, -1].astype(np.uint8)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "mnist5k-images-idx3-ubyte.gz", images)
    write_idx(out / "mnist5k-labels-idx1-ubyte.gz", labels)
    print(f"wrote {len(labels)} images, class counts {np.bincount(labels).tolist()}")


if __name__ == "__main__":
    main()

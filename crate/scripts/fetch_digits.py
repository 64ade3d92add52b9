"""Write the 5000-sample MNIST subset shipped with mlxtend in salp dataset format.

Usage: python3 scripts/fetch_digits.py [out_dir]   (default: data/digits5000)
Requires: pip install mlxtend numpy
"""
import os
import struct
import sys

import numpy as np
from mlxtend.data import mnist_data


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join("data", "digits5000")
    os.makedirs(out, exist_ok=True)
    x, y = mnist_data()
    x = (x.astype(np.float64) / 255.0).astype("<f4")
    n, d = x.shape
    with open(os.path.join(out, "features.bin"), "wb") as f:
        f.write(b"SALPFTR1")
        f.write(struct.pack("<QQ", n, d))
        f.write(x.tobytes(order="C"))
    with open(os.path.join(out, "labels.txt"), "w") as f:
        for label in y:
            f.write(f"{int(label)}\n")
    with open(os.path.join(out, "manifest.txt"), "w") as f:
        f.write("features=features.bin\nlabels=labels.txt\nclasses=10\nthumbnails=none\n")
    print(f"wrote {n} samples x {d} dims to {out}")


if __name__ == "__main__":
    main()

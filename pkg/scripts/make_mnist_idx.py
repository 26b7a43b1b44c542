#!/usr/bin/env python3
"""Build IDX-format MNIST files from the digit JSONs of the npm `mnist` package.

That package ships ~10k genuine MNIST digits (1000+ per class) as flat JSON
arrays of 784 floats in [0, 1], quantized from the original 8-bit pixels.
This script reassembles them into the four classic IDX files so the bench
harness can consume them like the full dataset:

    python scripts/make_mnist_idx.py <unpacked-package-dir> <out-dir>

Per class, the last 100 images become the test split; everything else goes
to train. Both splits are shuffled with a fixed seed so any prefix is
class-balanced. Output files are gzipped.
"""

import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np

TEST_PER_CLASS = 100
SHUFFLE_SEED = 12345


def load_digit(package_dir: Path, digit: int) -> np.ndarray:
    with open(package_dir / "src" / "digits" / f"{digit}.json") as fh:
        flat = np.asarray(json.load(fh)["data"], dtype=np.float64)
    images = flat.reshape(-1, 784)
    return np.clip(np.round(images * 255.0), 0, 255).astype(np.uint8)


def _write_gz(path: Path, payload: bytes) -> None:
    with open(path, "wb") as raw:
        with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
            fh.write(payload)


def write_idx_images(path: Path, images: np.ndarray) -> None:
    header = struct.pack(">IIII", 0x803, images.shape[0], 28, 28)
    _write_gz(path, header + images.tobytes())


def write_idx_labels(path: Path, labels: np.ndarray) -> None:
    header = struct.pack(">II", 0x801, labels.shape[0])
    _write_gz(path, header + labels.astype(np.uint8).tobytes())


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__)
        return 1
    package_dir, out_dir = Path(sys.argv[1]), Path(sys.argv[2])
    out_dir.mkdir(parents=True, exist_ok=True)

    train_x, train_y, test_x, test_y = [], [], [], []
    for digit in range(10):
        images = load_digit(package_dir, digit)
        n = images.shape[0]
        print(f"digit {digit}: {n} images")
        train_x.append(images[: n - TEST_PER_CLASS])
        train_y.append(np.full(n - TEST_PER_CLASS, digit, dtype=np.uint8))
        test_x.append(images[n - TEST_PER_CLASS:])
        test_y.append(np.full(TEST_PER_CLASS, digit, dtype=np.uint8))

    rng = np.random.default_rng(SHUFFLE_SEED)
    train_x, train_y = np.concatenate(train_x), np.concatenate(train_y)
    test_x, test_y = np.concatenate(test_x), np.concatenate(test_y)
    train_order = rng.permutation(train_x.shape[0])
    test_order = rng.permutation(test_x.shape[0])

    write_idx_images(out_dir / "train-images-idx3-ubyte.gz", train_x[train_order])
    write_idx_labels(out_dir / "train-labels-idx1-ubyte.gz", train_y[train_order])
    write_idx_images(out_dir / "t10k-images-idx3-ubyte.gz", test_x[test_order])
    write_idx_labels(out_dir / "t10k-labels-idx1-ubyte.gz", test_y[test_order])
    print(f"wrote {train_x.shape[0]} train / {test_x.shape[0]} test images to {out_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

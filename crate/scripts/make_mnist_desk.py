#!/usr/bin/env python3
"""Build the bundled desk-scale MNIST subset (6000 train / 1000 test) as gzipped IDX files.

Source: the `mnist` npm package (10,000 MNIST digits stored as JSON, pixels in [0,1]).
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/make_mnist_desk.py package/src/digits crates/core/data/mnist-desk
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

SIDE = 28
N_TRAIN = 6000
N_TEST = 1000
SEED = 20241015


def write_images(path, rows):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(rows), SIDE, SIDE))
        for r in rows:
            f.write(bytes(r))


def write_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    dst.mkdir(parents=True, exist_ok=True)
    samples = []
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        n = len(data) // (SIDE * SIDE)
        for i in range(n):
            px = data[i * SIDE * SIDE:(i + 1) * SIDE * SIDE]
            samples.append(([min(255, max(0, round(v * 255))) for v in px], digit))
    random.Random(SEED).shuffle(samples)
    train, test = samples[:N_TRAIN], samples[N_TRAIN:N_TRAIN + N_TEST]
    write_images(dst / "train-images-idx3-ubyte.gz", [s[0] for s in train])
    write_labels(dst / "train-labels-idx1-ubyte.gz", [s[1] for s in train])
    write_images(dst / "t10k-images-idx3-ubyte.gz", [s[0] for s in test])
    write_labels(dst / "t10k-labels-idx1-ubyte.gz", [s[1] for s in test])


if __name__ == "__main__":
    main()

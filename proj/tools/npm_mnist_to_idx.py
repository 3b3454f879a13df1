#!/usr/bin/env python3
"""Convert the digit subset shipped with the `mnist` npm package into IDX files.

The package stores ~10k MNIST digits as src/digits/<d>.json, each holding a
flat list of 28x28 images with pixels already scaled to [0, 1]. This writes
train/test IDX pairs (u8 pixels, big-endian headers) that `novelty` loads with
its regular IDX reader.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/npm_mnist_to_idx.py package/src/digits data/mnist
"""

import argparse
import json
import pathlib
import random
import struct

SIDE = 28


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), SIDE, SIDE))
        for img in images:
            f.write(bytes(min(255, max(0, round(v * 255))) for v in img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("digits_dir", type=pathlib.Path)
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--test-fraction", type=float, default=0.2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    samples = []
    for digit in range(10):
        flat = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        n = len(flat) // (SIDE * SIDE)
        for i in range(n):
            samples.append((flat[i * SIDE * SIDE:(i + 1) * SIDE * SIDE], digit))

    random.Random(args.seed).shuffle(samples)
    n_test = int(round(len(samples) * args.test_fraction))
    test, train = samples[:n_test], samples[n_test:]

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", train), ("t10k", test)):
        write_images(args.out_dir / f"{name}-images-idx3-ubyte", [s[0] for s in part])
        write_labels(args.out_dir / f"{name}-labels-idx1-ubyte", [s[1] for s in part])
    print(f"wrote {len(train)} train / {len(test)} test digits to {args.out_dir}")


if __name__ == "__main__":
    main()

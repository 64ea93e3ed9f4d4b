#!/usr/bin/env python3
"""Convert the 10,000 MNIST digits bundled in the npm `mnist` package into IDX files.

The package stores one JSON file per digit class with pixels already scaled to
[0, 1] (three decimals). Pixels are mapped back to bytes with round(v * 255).
Each class is split 80/20 into train/test in file order, then each split is
interleaved with a seeded shuffle so that prefixes of the files are
class-balanced-ish samples.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/mnist-subset
"""
import argparse
import json
import random
import struct
from pathlib import Path

SIDE = 28


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), SIDE, SIDE))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--train-fraction", type=float, default=0.8)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()

    train, test = [], []
    for digit in range(10):
        raw = json.loads(Path(args.digits_dir, f"{digit}.json").read_text())["data"]
        count = len(raw) // (SIDE * SIDE)
        samples = []
        for i in range(count):
            px = raw[i * SIDE * SIDE:(i + 1) * SIDE * SIDE]
            samples.append(([min(255, max(0, round(v * 255))) for v in px], digit))
        cut = int(round(count * args.train_fraction))
        train += samples[:cut]
        test += samples[cut:]

    rng = random.Random(args.seed)
    rng.shuffle(train)
    rng.shuffle(test)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_images(out / "train-images-idx3-ubyte", [s for s, _ in train])
    write_labels(out / "train-labels-idx1-ubyte", [l for _, l in train])
    write_images(out / "t10k-images-idx3-ubyte", [s for s, _ in test])
    write_labels(out / "t10k-labels-idx1-ubyte", [l for _, l in test])
    print(f"train={len(train)} test={len(test)} -> {out}")


if __name__ == "__main__":
    main()

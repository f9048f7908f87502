#!/usr/bin/env python3
"""Convert the 10,000 MNIST digits bundled in the `mnist` npm package (v1.1.0)
into gzipped IDX files: 8,000 training and 2,000 test images.

Usage: npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
       python3 tools/make_mnist_subset.py package/src/digits data/mnist10k
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def main(src: Path, dst: Path) -> None:
    samples = []
    for digit in range(10):
        pixels = json.loads((src / f"{digit}.json").read_text())["data"]
        # Pixels were stored as round(byte / 255, 3); the rounding error is
        # below 0.5 / 255, so the original bytes are recovered exactly.
        for i in range(0, len(pixels), 784):
            samples.append((digit, bytes(round(p * 255) for p in pixels[i:i + 784])))
    random.Random(20190602).shuffle(samples)
    splits = {"train": samples[:8000], "t10k": samples[8000:]}
    dst.mkdir(parents=True, exist_ok=True)
    for name, part in splits.items():
        with gzip.GzipFile(dst / f"{name}-images-idx3-ubyte.gz", "wb", mtime=0) as f:
            f.write(struct.pack(">IIII", 0x803, len(part), 28, 28))
            for _, img in part:
                f.write(img)
        with gzip.GzipFile(dst / f"{name}-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
            f.write(struct.pack(">II", 0x801, len(part)))
            f.write(bytes(label for label, _ in part))


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))

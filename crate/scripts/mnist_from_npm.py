#!/usr/bin/env python3
"""Rebuild data/mnist/ from the 10,000 MNIST digits bundled in the npm `mnist` package.

The package stores each digit class as a JSON array of pixel intensities already
divided by 255 and rounded to three decimals; rounding back to bytes recovers the
original pixels up to +-1 grey level. The digits are shuffled with a fixed seed and
split 9000 / 1000 into IDX train / t10k files (gzip-compressed).

    python3 scripts/mnist_from_npm.py [--out data/mnist]
"""

import argparse
import gzip
import json
import random
import struct
import subprocess
import tarfile
import tempfile
from pathlib import Path

ROWS = COLS = 28
TEST_COUNT = 1000
SEED = 20240101


def load_digits(package_root: Path):
    samples = []
    for label in range(10):
        data = json.loads((package_root / "src" / "digits" / f"{label}.json").read_text())["data"]
        assert len(data) % (ROWS * COLS) == 0
        for start in range(0, len(data), ROWS * COLS):
            pixels = bytes(min(255, max(0, round(v * 255))) for v in data[start : start + ROWS * COLS])
            samples.append((pixels, label))
    return samples


def write_idx(path: Path, samples):
    with gzip.GzipFile(path.with_name(path.name + "-images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), ROWS, COLS))
        for pixels, _ in samples:
            f.write(pixels)
    with gzip.GzipFile(path.with_name(path.name + "-labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for _, label in samples))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="data/mnist")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True, capture_output=True)
        with tarfile.open(Path(tmp) / "mnist-1.1.0.tgz") as tar:
            tar.extractall(tmp)
        samples = load_digits(Path(tmp) / "package")

    random.Random(SEED).shuffle(samples)
    write_idx(out / "train", samples[TEST_COUNT:])
    write_idx(out / "t10k", samples[:TEST_COUNT])
    print(f"wrote {len(samples) - TEST_COUNT} train / {TEST_COUNT} test digits to {out}")


if __name__ == "__main__":
    main()

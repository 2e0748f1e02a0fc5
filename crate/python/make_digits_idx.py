#!/usr/bin/env python3
"""Regenerates the handwritten-digit fixtures in data/.

Exports scikit-learn's bundled 8x8 digits scans (1797 samples, labels 0-9)
as a big-endian IDX image/label pair. Pixel intensities 0..16 are rescaled
to the full byte range.
"""

import pathlib
import struct

from sklearn.datasets import load_digits


def main() -> None:
    out_dir = pathlib.Path(__file__).resolve().parent.parent / "data"
    out_dir.mkdir(exist_ok=True)

    digits = load_digits()
    images = digits.images  # (1797, 8, 8), values 0..16
    labels = digits.target

    n, rows, cols = images.shape
    scaled = (images / 16.0 * 255.0).round().astype("uint8")

    with open(out_dir / "digits-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(scaled.tobytes())

    with open(out_dir / "digits-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.astype("uint8").tobytes())

    print(f"wrote {n} images ({rows}x{cols}) to {out_dir}")


if __name__ == "__main__":
    main()

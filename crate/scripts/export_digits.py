"""Write scikit-learn's 8x8 handwritten digits as an IDX image/label pair."""

import struct
import sys
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits


def main(out_dir: Path) -> None:
    digits = load_digits()
    # pixel intensities are 0..16; stretch to the 0..255 byte range
    pixels = np.rint(digits.images * 255.0 / 16.0).astype(np.uint8)
    labels = digits.target.astype(np.uint8)
    n, rows, cols = pixels.shape
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "digits-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(pixels.tobytes())
    with open(out_dir / "digits-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.tobytes())
    print(f"wrote {n} digits to {out_dir}")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path("crates/harness/data"))

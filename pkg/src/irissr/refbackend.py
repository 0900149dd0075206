"""Reference x2 backend: nearest-neighbor doubling through the PGM exchange
protocol. Useful as a wiring check for the external-upscaler path:

    python -m irissr.refbackend <in.pgm> <out.pgm>
"""

import sys

import numpy as np

from . import raster


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print("usage: python -m irissr.refbackend <in.pgm> <out.pgm>",
              file=sys.stderr)
        return 2
    img = raster.read_pgm(argv[0])
    doubled = np.repeat(np.repeat(img, 2, axis=0), 2, axis=1)
    raster.write_pgm(argv[1], doubled)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Convert UNIPEN Pendigits files (pendigits-orig.tra/.tes) into the plain stroke format."""

import argparse

from sparsecnn.data import load_unipen, save_strokes


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("src", help="UNIPEN file, optionally .gz")
    p.add_argument("dst", help="output stroke file")
    p.add_argument("--classes", type=int, default=10)
    args = p.parse_args()
    ds = load_unipen(args.src, args.classes)
    save_strokes(args.dst, ds.samples, ds.num_classes)
    print(f"{len(ds)} characters written to {args.dst}")


if __name__ == "__main__":
    main()

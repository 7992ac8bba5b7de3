"""Pendigits: DeepCNet(4,20) with plain (M=1) and direction-histogram (M=9) encodings.

Expects the data under $SPARSECNN_DATA/pendigits (see README).
"""

import argparse

from sparsecnn.experiments import find_pendigits, train_strokes


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()
    train, test = find_pendigits()
    for hist in (False, True):
        m = 9 if hist else 1
        res = train_strokes(train, test, args.levels, args.k, hist, args.epochs, seed=args.seed,
                            threads=args.threads)
        print(f"M={m}: test error {100 * res.test_error:.2f}%")


if __name__ == "__main__":
    main()

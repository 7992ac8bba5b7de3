"""Write the synthetic ten-glyph stroke dataset used by configs/toy.cfg."""

import argparse
import os

from sparsecnn.data import save_strokes
from sparsecnn.synthetic import toy_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="data/toy")
    p.add_argument("--per-class", type=int, default=20)
    args = p.parse_args()
    os.makedirs(args.out, exist_ok=True)
    for role, seed, n in (("train", 0, args.per_class), ("test", 1, max(1, args.per_class // 4))):
        ds = toy_dataset(n, seed=seed, role=role)
        save_strokes(os.path.join(args.out, f"{role}.txt"), ds.samples, ds.num_classes)
        print(f"{role}: {len(ds)} characters")


if __name__ == "__main__":
    main()

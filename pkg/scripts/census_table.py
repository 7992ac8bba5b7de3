"""Active sites per layer for a circle drawn in the input of DeepCNet(levels, k)."""

import argparse

from sparsecnn import build_deepcnet, census_forward
from sparsecnn.synthetic import circle_grid


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--levels", type=int, default=5)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--diameter", type=float, default=32)
    args = p.parse_args()
    spec = build_deepcnet(args.levels, args.k, 1, 10)
    print(spec.layer_string())
    for r in census_forward(spec, circle_grid(spec.input_size, args.diameter)):
        print(f"{r.name:<8}{r.size:>5}x{r.size:<5}{r.active:>7}  {r.fraction:.4f}")


if __name__ == "__main__":
    main()

"""Forward time on a single pen stroke vs a fully active input."""

import argparse

from sparsecnn import build_deepcnet
from sparsecnn.experiments import full_grid, median_forward_time, one_stroke_character


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--levels", type=int, default=5)
    p.add_argument("--k", type=int, default=30)
    p.add_argument("--runs", type=int, default=20)
    args = p.parse_args()
    spec = build_deepcnet(args.levels, args.k, 1, 10)
    sparse = one_stroke_character(args.levels)
    t_sparse = median_forward_time(spec, sparse, args.runs)
    t_full = median_forward_time(spec, full_grid(spec.input_size), args.runs)
    print(f"{spec.layer_string()}")
    print(f"one stroke ({sparse.active_count()} sites): {1e3 * t_sparse:.2f} ms")
    print(f"full grid ({spec.input_size ** 2} sites): {1e3 * t_full:.2f} ms")
    print(f"ratio {t_sparse / t_full:.3f}")


if __name__ == "__main__":
    main()

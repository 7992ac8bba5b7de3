"""Short MNIST run: DeepCNet(5,10) on a 10k-image training subset."""

import argparse

from sparsecnn.experiments import find_mnist, train_mnist_subset


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n-train", type=int, default=10_000)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()
    train, test = find_mnist()
    res = train_mnist_subset(train, test, args.n_train, epochs=args.epochs, seed=args.seed, threads=args.threads)
    for h in res.history:
        print(h.csv())
    print(f"test error {100 * res.test_error:.2f}%")


if __name__ == "__main__":
    main()

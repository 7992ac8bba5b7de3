"""Train a small DeepCNet on scikit-learn's 8x8 digits, embedded as sparse images.

Runs in a couple of minutes without any download; needs scikit-learn.
"""

import argparse

import numpy as np
from sklearn.datasets import load_digits

from sparsecnn import build_deepcnet
from sparsecnn.augment import AugmentConfig
from sparsecnn.data import GRAY, Dataset, SamplePipeline
from sparsecnn.encoding import EncodingConfig
from sparsecnn.training import TrainConfig, Trainer


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--epochs", type=int, default=6)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    d = load_digits()
    imgs = [(im * 16).clip(0, 255).astype(np.uint8) for im in d.images]
    n = 1500
    train = Dataset(imgs[:n], d.target[:n], 10, GRAY, "train")
    test = Dataset(imgs[n:], d.target[n:], 10, GRAY, "test")
    spec = build_deepcnet(3, args.k, 1, 10)
    pipe = SamplePipeline(GRAY, EncodingConfig(spec.input_size, 8), AugmentConfig("translate", max_shift=1))
    trainer = Trainer(spec, TrainConfig(epochs=args.epochs, batch_size=16, seed=args.seed), pipe)
    print(spec.layer_string())
    for h in trainer.fit(train, test):
        print(h.csv())


if __name__ == "__main__":
    main()

"""Command-line front end: ``sparsecnn {train,eval,census,paths,encode}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext

from .config import RunConfig, load_config
from .data import load_strokes
from .encoding import normalize_character, rasterize
from .grid import GridError, SparseGrid
from .network import ConfigError, census_forward, count_paths, summarize_paths
from .synthetic import circle_grid
from .training import CheckpointError, Trainer, checkpoint_load, evaluate

log = logging.getLogger("sparsecnn")


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("SPARSECNN_THREADS")
    return max(1, int(env)) if env else 1


def _blas_limit(threads: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(threads)


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    return cfg


def cmd_train(args) -> int:
    cfg = _config(args)
    spec = cfg.build_spec()
    train, test = cfg.load_data()
    threads = _threads(args)
    trainer = Trainer(spec, cfg.train, cfg.pipeline(), threads=threads)
    if args.checkpoint:
        trainer.load(args.checkpoint)
    if cfg.output.checkpoint_dir:
        os.makedirs(cfg.output.checkpoint_dir, exist_ok=True)
    if cfg.output.metrics:
        os.makedirs(os.path.dirname(cfg.output.metrics) or ".", exist_ok=True)
        if not args.checkpoint and os.path.exists(cfg.output.metrics):
            os.remove(cfg.output.metrics)
    print(f"network: {spec.layer_string()}  (input {spec.input_size}x{spec.input_size}x{spec.num_features})")
    with _blas_limit(threads):
        history = trainer.fit(train, test, cfg.output.metrics, cfg.output.checkpoint_dir)
    for h in history:
        print(h.csv())
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    spec = cfg.build_spec()
    if not args.checkpoint:
        raise ConfigError("--checkpoint: required for eval")
    if not os.path.exists(args.checkpoint):
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    state = checkpoint_load(args.checkpoint, spec)
    _, test = cfg.load_data()
    if test is None:
        raise ConfigError("data.test: eval needs a test set")
    threads = _threads(args)
    with _blas_limit(threads):
        res = evaluate(spec, state.params, test, cfg.pipeline(augment=False), args.top_k, threads=threads)
    print(f"top1_error={res.top1_error:.6f}")
    if args.top_k:
        print(f"top{args.top_k}_error={res.topk_error:.6f}")
    return 0


def _census_input(args, cfg: RunConfig):
    spec = cfg.build_spec()
    if args.circle is not None:
        return circle_grid(spec.input_size, args.circle)
    if args.sample is not None:
        train, test = cfg.load_data()
        ds = test if test is not None else train
        return cfg.pipeline(augment=False)(ds.samples[args.sample])
    return SparseGrid.new_empty(spec.input_size, spec.num_features)


def cmd_census(args) -> int:
    cfg = _config(args)
    spec = cfg.build_spec()
    rows = census_forward(spec, _census_input(args, cfg))
    print(f"{'layer':<10}{'size':>6}{'active':>9}{'fraction':>10}")
    for r in rows:
        print(f"{r.name:<10}{r.size:>6}{r.active:>9}{r.fraction:>10.4f}")
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("layer,size,active,fraction\n")
            for r in rows:
                fh.write(f"{r.name},{r.size},{r.active},{r.fraction:.6f}\n")
    return 0


def cmd_paths(args) -> int:
    cfg = _config(args)
    paths = count_paths(cfg.build_spec())
    s = summarize_paths(paths)
    print(f"size={paths.shape[0]} corner={s.corner} center={s.center} max={s.maximum} plateau_width={s.plateau_width}")
    if args.out:
        with open(args.out, "w") as fh:
            for row in paths:
                fh.write(",".join(str(v) for v in row) + "\n")
    return 0


def cmd_encode(args) -> int:
    """Dump encoded stroke characters as ``x y f0 f1 ...`` lines for inspection."""
    cfg = _config(args)
    enc = cfg.encoding()
    ds = load_strokes(args.input or cfg.data.train)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for i, ch in enumerate(ds.samples[: args.limit] if args.limit else ds.samples):
            g = rasterize(normalize_character(ch, enc.character_scale), enc)
            xs, ys = g.active_sites()
            out.write(f"GRID {i} label={ch.label} size={g.spatial_size} features={g.num_features} "
                      f"active={g.active_count()}\n")
            for x, y, row in zip(xs, ys, g.features[1:]):
                out.write(f"{x} {y} " + " ".join(f"{v:.6g}" for v in row) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration file")
    common.add_argument("--seed", type=int, default=None, help="override train.seed")
    common.add_argument("--threads", type=int, default=None, help="worker threads (default $SPARSECNN_THREADS or 1)")
    p = argparse.ArgumentParser(prog="sparsecnn", description="Spatially-sparse DeepCNet training and analysis")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train a network")
    t.add_argument("--checkpoint", help="resume from this checkpoint")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="test error of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--top-k", type=int, default=None)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("census", parents=[common], help="active sites per layer")
    g = c.add_mutually_exclusive_group()
    g.add_argument("--circle", type=float, help="synthetic circle of this diameter")
    g.add_argument("--sample", type=int, help="index into the test (or train) set")
    c.add_argument("--csv", help="also write the table as CSV")
    c.set_defaults(func=cmd_census)

    pa = sub.add_parser("paths", parents=[common], help="input-to-output path counts")
    pa.add_argument("--out", help="write the full path-count array as CSV")
    pa.set_defaults(func=cmd_paths)

    en = sub.add_parser("encode", parents=[common], help="dump encoded stroke grids")
    en.add_argument("--input", help="stroke file (default data.train)")
    en.add_argument("--out", help="output file (default stdout)")
    en.add_argument("--limit", type=int, default=None)
    en.set_defaults(func=cmd_encode)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, GridError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

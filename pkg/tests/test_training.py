import numpy as np
import pytest

from oracles import finite_difference, random_grid
from sparsecnn.augment import AugmentConfig
from sparsecnn.data import SamplePipeline, iterate_minibatches
from sparsecnn.encoding import EncodingConfig
from sparsecnn.grid import SparseBatch
from sparsecnn.network import ParamSet, build_deepcnet, build_deepcnin, init_params
from sparsecnn.synthetic import toy_dataset
from sparsecnn.training import (CheckpointError, IncompatibleCheckpoint, TrainConfig, Trainer, TrainState,
                                checkpoint_load, checkpoint_save, evaluate, loss_and_gradients, predict, sgd_step)


def toy_batch(spec, n, seed=0):
    ds = toy_dataset(2, seed=seed)
    enc = EncodingConfig.for_levels(spec.levels, spec.num_features == 9)
    return next(iterate_minibatches(ds, n, np.random.default_rng(seed), encoder=enc))


def stroke_pipeline(spec, augment=None):
    return SamplePipeline("strokes", EncodingConfig.for_levels(spec.levels, spec.num_features == 9), augment)


class TestLoss:
    @pytest.mark.parametrize("spec", [build_deepcnet(3, 8, 9, 10), build_deepcnin(2, 6, 1, 10),
                                      build_deepcnet(2, 4, 1, 10, [0.2, 0.3, 0.4, 0.5])])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_untrained_loss_is_log_classes(self, spec, seed):
        batch, labels = toy_batch(spec, 7, seed)
        params = init_params(spec, np.random.default_rng(seed))
        loss, _, _ = loss_and_gradients(spec, params, batch, labels, np.random.default_rng(seed))
        assert abs(loss / np.log(spec.num_classes) - 1) <= 0.05

    def test_duplicated_sample_gives_single_sample_gradients(self):
        spec = build_deepcnin(2, 4, 9, 10)
        params = init_params(spec, np.random.default_rng(3), zero_output=False)
        for b in params.biases:
            b[:] = np.random.default_rng(4).normal(scale=0.1, size=b.shape)
        batch, labels = toy_batch(spec, 1)
        grid = batch.unstack()[0]
        _, g1, _ = loss_and_gradients(spec, params, batch, labels, train=False)
        _, g8, _ = loss_and_gradients(spec, params, SparseBatch.stack([grid] * 8), np.repeat(labels, 8),
                                      train=False)
        for a, b in zip(g1.arrays(), g8.arrays()):
            np.testing.assert_allclose(a, b, atol=1e-6, rtol=0)

    def test_gradient_finite_differences(self):
        spec = build_deepcnet(1, 2, 1, 10)
        rng = np.random.default_rng(5)
        params = init_params(spec, rng, zero_output=False)
        grid = random_grid(rng, spec.input_size, 1, 0.3)
        _, grads, _ = loss_and_gradients(spec, params, SparseBatch.stack([grid]), [4], train=False)
        for i in (0, 2, 4, 5):  # weights, plus output bias
            fd = finite_difference(spec, params, grid.to_dense(), 4, i)
            a = grads.arrays()[i]
            assert np.linalg.norm(a - fd) / (np.linalg.norm(a) + np.linalg.norm(fd)) <= 1e-4

    def test_batch_label_mismatch(self):
        spec = build_deepcnet(1, 2, 1, 10)
        batch, labels = toy_batch(spec, 3)
        with pytest.raises(ValueError):
            loss_and_gradients(spec, init_params(spec, np.random.default_rng()), batch, labels[:2])


class TestSgd:
    def one(self, value):
        return ParamSet([np.full((1, 1), value, dtype=np.float64)], [np.zeros(1)])

    def test_plain_step(self):
        p, v = self.one(1.0), self.one(0.0)
        sgd_step(p, self.one(1.0), v, 0.1, 0.0)
        assert p.weights[0][0, 0] == pytest.approx(0.9)

    def test_zero_gradient_decays_velocity(self):
        p, v = self.one(1.0), self.one(0.5)
        sgd_step(p, self.one(0.0), v, 0.1, 0.9)
        assert v.weights[0][0, 0] == pytest.approx(0.45)
        assert p.weights[0][0, 0] == pytest.approx(1.45)

    def test_two_momentum_steps(self):
        p, v = self.one(0.0), self.one(0.0)
        for _ in range(2):
            sgd_step(p, self.one(2.0), v, 0.01, 0.9)
        assert p.weights[0][0, 0] == pytest.approx(-0.01 * 2.0 * (1 + 1.9))

    def test_config_validation(self):
        for kw in ({"learning_rate": 0}, {"momentum": 1.0}, {"batch_size": 0}):
            with pytest.raises(ValueError):
                TrainConfig(**kw)


class TestEvaluate:
    def test_topk_all_classes_is_zero_and_ordering(self):
        spec = build_deepcnet(2, 4, 1, 10)
        ds = toy_dataset(3, seed=1)
        params = init_params(spec, np.random.default_rng(0), zero_output=False)
        pipe = stroke_pipeline(spec)
        assert evaluate(spec, params, ds, pipe, top_k=10).topk_error == 0.0
        r = evaluate(spec, params, ds, pipe, top_k=3)
        assert r.top1_error >= r.topk_error
        np.testing.assert_array_equal(predict(spec, params, ds, pipe), predict(spec, params, ds, pipe))

    def test_learns_separable_toy_set(self):
        spec = build_deepcnet(3, 8, 9, 10)
        ds = toy_dataset(2, seed=2)
        t = Trainer(spec, TrainConfig(epochs=40, batch_size=5, lr_decay=1.0), stroke_pipeline(spec))
        hist = t.fit(ds)
        assert hist[4].train_loss < hist[0].train_loss
        assert evaluate(spec, t.params, ds, stroke_pipeline(spec)).top1_error == 0.0


class TestCheckpoint:
    def state(self, spec, seed=0):
        rng = np.random.default_rng(seed)
        params = init_params(spec, rng, zero_output=False)
        vel = ParamSet([rng.normal(size=w.shape).astype(np.float32) for w in params.weights],
                       [rng.normal(size=b.shape).astype(np.float32) for b in params.biases])
        drop = np.random.default_rng([seed, 1])
        drop.random(17)
        return TrainState(spec, params, vel, drop, epoch=3, step=42)

    def test_round_trip_bit_exact(self, tmp_path):
        spec = build_deepcnin(2, 3, 9, 12, [0.1, 0.2, 0.3, 0.4])
        s = self.state(spec)
        checkpoint_save(tmp_path / "a.ckpt", s)
        r = checkpoint_load(tmp_path / "a.ckpt", spec)
        for a, b in zip(s.params.arrays() + s.velocity.arrays(), r.params.arrays() + r.velocity.arrays()):
            assert a.dtype == b.dtype and a.tobytes() == b.tobytes()
        assert (r.epoch, r.step) == (3, 42)
        assert r.rng.random() == s.rng.random()
        # re-saving the reloaded state reproduces the file byte for byte
        r.rng = np.random.default_rng()
        r.rng.bit_generator.state = checkpoint_load(tmp_path / "a.ckpt").rng.bit_generator.state
        checkpoint_save(tmp_path / "b.ckpt", r)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_load_without_spec_rebuilds_it(self, tmp_path):
        spec = build_deepcnet(2, 3, 1, 5, [0, 0, 0.5, 0.5])
        checkpoint_save(tmp_path / "a.ckpt", self.state(spec))
        assert checkpoint_load(tmp_path / "a.ckpt").spec == spec

    def test_incompatible(self, tmp_path):
        checkpoint_save(tmp_path / "a.ckpt", self.state(build_deepcnet(2, 3, 1, 5)))
        with pytest.raises(IncompatibleCheckpoint, match="levels=2, k=3"):
            checkpoint_load(tmp_path / "a.ckpt", build_deepcnet(2, 4, 1, 5))

    def test_corrupt(self, tmp_path):
        path = tmp_path / "a.ckpt"
        checkpoint_save(path, self.state(build_deepcnet(1, 2, 1, 3)))
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="checksum"):
            checkpoint_load(path)
        path.write_bytes(b"hello world, not a checkpoint")
        with pytest.raises(CheckpointError, match="not a checkpoint"):
            checkpoint_load(path)

    def test_eval_identical_after_reload(self, tmp_path):
        spec = build_deepcnet(2, 4, 1, 10)
        s = self.state(spec)
        checkpoint_save(tmp_path / "a.ckpt", s)
        ds, pipe = toy_dataset(2, seed=5), stroke_pipeline(spec)
        a = evaluate(spec, s.params, ds, pipe)
        b = evaluate(spec, checkpoint_load(tmp_path / "a.ckpt", spec).params, ds, pipe)
        assert a == b


class TestTrainer:
    def make(self, seed=0, **kw):
        spec = build_deepcnet(2, 6, 9, 10, [0.0, 0.2, 0.3, 0.5])
        cfg = TrainConfig(epochs=2, batch_size=4, seed=seed, **kw)
        return Trainer(spec, cfg, stroke_pipeline(spec, AugmentConfig("translate", 2)))

    def test_resume_matches_uninterrupted(self, tmp_path):
        ds = toy_dataset(2, seed=0)
        a = self.make()
        batches = list(iterate_minibatches(ds, 4, np.random.default_rng(0), encoder=a.pipeline))[:6]
        for b, y in batches[:3]:
            a.step(b, y)
        a.save(tmp_path / "mid.ckpt")
        for b, y in batches[3:]:
            a.step(b, y)
        r = self.make(seed=99)
        r.load(tmp_path / "mid.ckpt")
        for b, y in batches[3:]:
            r.step(b, y)
        for x, z in zip(a.params.arrays() + a.state.velocity.arrays(), r.params.arrays() + r.state.velocity.arrays()):
            assert x.tobytes() == z.tobytes()

    def test_fit_resume_equals_straight_run(self, tmp_path):
        ds = toy_dataset(1, seed=1)
        a = self.make()
        a.fit(ds, epochs=2)
        b = self.make()
        b.fit(ds, epochs=1, checkpoint_dir=tmp_path)
        c = self.make()
        c.load(tmp_path / "last.ckpt")
        c.fit(ds, epochs=2)
        for x, z in zip(a.params.arrays(), c.params.arrays()):
            assert x.tobytes() == z.tobytes()

    def test_deterministic_and_seed_sensitive(self, tmp_path):
        ds = toy_dataset(1, seed=2)
        runs = []
        for seed in (5, 5, 6):
            t = self.make(seed)
            t.fit(ds, checkpoint_dir=None)
            t.save(tmp_path / f"{len(runs)}.ckpt")
            runs.append((tmp_path / f"{len(runs)}.ckpt").read_bytes())
        assert runs[0] == runs[1]
        assert runs[0] != runs[2]

    def test_threads_do_not_change_result(self):
        ds = toy_dataset(1, seed=3)
        out = []
        for threads in (1, 4):
            t = self.make()
            t.threads = threads
            t.fit(ds)
            out.append(b"".join(a.tobytes() for a in t.params.arrays()))
        assert out[0] == out[1]

    def test_learning_rate_decay_and_metrics(self, tmp_path):
        t = self.make(lr_decay=0.5, learning_rate=0.02)
        assert t.learning_rate() == pytest.approx(0.02)
        hist = t.fit(toy_dataset(1), toy_dataset(1, seed=9, role="test"), tmp_path / "m.csv", tmp_path)
        assert t.learning_rate() == pytest.approx(0.005)
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert len(lines) == 2 and lines[1] == hist[1].csv()
        assert len(lines[0].split(",")) == 4
        assert (tmp_path / "epoch0002.ckpt").exists()

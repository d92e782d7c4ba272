"""Engine tests: layer gradients, optimizer semantics, the two-phase trainer, checkpoints."""

import hashlib

import numpy as np
import pytest

from pwlu.checkpoint import load_checkpoint, load_model, save_checkpoint
from pwlu.data import gen_spirals, standardize
from pwlu.errors import DegenerateParameterError, NonFiniteLossError, ShapeMismatchError
from pwlu.kernel import forward_reference, init_pwlu_relu
from pwlu.layers import (
    Conv2d,
    Dense,
    PwluActivation,
    Swish,
    build_mlp,
    softmax_xent_forward,
)
from pwlu.optim import TrainSchedule, sgd_momentum_step
from pwlu.trainer import Trainer


def pwlu_checksum(model):
    h = hashlib.sha256()
    for layer in model.pwlu_layers():
        for p in layer.units:
            h.update(np.array([p.left_boundary, p.right_boundary,
                               p.left_slope, p.right_slope]).tobytes())
            h.update(p.y_points.tobytes())
    return h.hexdigest()


class TestLayers:
    def test_dense_identity(self):
        rng = np.random.default_rng(0)
        layer = Dense(4, 4, rng)
        layer.weight = np.eye(4)
        layer.bias = np.zeros(4)
        x = rng.normal(size=(5, 4))
        np.testing.assert_array_equal(layer.forward(x), x)

    def test_softmax_xent_uniform(self):
        loss, _ = softmax_xent_forward(np.zeros((3, 7)), np.array([0, 3, 6]))
        assert loss == pytest.approx(np.log(7))

    def test_dense_finite_difference_grads(self):
        rng = np.random.default_rng(1)
        layer = Dense(5, 3, rng)
        x = rng.normal(size=(4, 5))
        labels = np.array([0, 1, 2, 1])

        def loss_of(w):
            saved = layer.weight
            layer.weight = w
            out = layer.forward(x)
            value, _ = softmax_xent_forward(out, labels)
            layer.weight = saved
            return value

        out = layer.forward(x)
        loss, probs = softmax_xent_forward(out, labels)
        from pwlu.layers import softmax_xent_backward

        layer.backward(softmax_xent_backward(probs, labels))
        h = 1e-6
        for i in range(5):
            for j in range(3):
                w_up = layer.weight.copy()
                w_dn = layer.weight.copy()
                w_up[i, j] += h
                w_dn[i, j] -= h
                fd = (loss_of(w_up) - loss_of(w_dn)) / (2 * h)
                assert abs(layer.g_weight[i, j] - fd) <= 1e-4 * max(1e-3, abs(fd))

    def test_dense_shape_mismatch(self):
        layer = Dense(5, 3, np.random.default_rng(0))
        with pytest.raises(ShapeMismatchError):
            layer.forward(np.zeros((2, 4)))

    def test_conv_matches_naive_loop(self):
        rng = np.random.default_rng(2)
        conv = Conv2d(2, 3, 3, rng)
        x = rng.normal(size=(2, 2, 5, 5))
        out = conv.forward(x)
        b, oc, oh, ow = out.shape
        assert (oh, ow) == (3, 3)
        for bi in range(b):
            for o in range(oc):
                for i in range(oh):
                    for j in range(ow):
                        want = np.sum(x[bi, :, i:i + 3, j:j + 3] * conv.weight[o]) + conv.bias[o]
                        assert out[bi, o, i, j] == pytest.approx(want)

    def test_conv_finite_difference_grads(self):
        rng = np.random.default_rng(3)
        conv = Conv2d(1, 2, 2, rng, padding=1)
        x = rng.normal(size=(2, 1, 4, 4))
        up = rng.normal(size=conv.forward(x).shape)

        conv.forward(x)
        gx = conv.backward(up)
        h = 1e-6

        def loss_of_x(xv):
            return np.sum(conv.forward(xv) * up)

        for flat in rng.choice(x.size, size=8, replace=False):
            xi = np.unravel_index(flat, x.shape)
            xu, xd = x.copy(), x.copy()
            xu[xi] += h
            xd[xi] -= h
            fd = (loss_of_x(xu) - loss_of_x(xd)) / (2 * h)
            assert abs(gx[xi] - fd) <= 1e-5 * max(1.0, abs(fd))

        def loss_of_w(wv):
            saved = conv.weight
            conv.weight = wv
            value = np.sum(conv.forward(x) * up)
            conv.weight = saved
            return value

        conv.forward(x)
        conv.backward(up)
        for flat in rng.choice(conv.weight.size, size=8, replace=False):
            wi = np.unravel_index(flat, conv.weight.shape)
            wu, wd = conv.weight.copy(), conv.weight.copy()
            wu[wi] += h
            wd[wi] -= h
            fd = (loss_of_w(wu) - loss_of_w(wd)) / (2 * h)
            assert abs(conv.g_weight[wi] - fd) <= 1e-5 * max(1.0, abs(fd))

    def test_swish_gradient(self):
        layer = Swish()
        x = np.linspace(-3, 3, 31).reshape(1, -1)
        layer.forward(x)
        g = layer.backward(np.ones_like(x))
        h = 1e-6
        fd = (layer.forward(x + h) - layer.forward(x - h)) / (2 * h)
        np.testing.assert_allclose(g, fd, atol=1e-8)


class TestSgdStep:
    def test_plain_step(self):
        p = np.array([0.0])
        v = np.zeros(1)
        sgd_momentum_step(p, np.array([1.0]), v, lr=1.0, momentum=0.0, weight_decay=0.0)
        assert p[0] == -1.0

    def test_two_momentum_steps(self):
        p = np.array([0.0])
        v = np.zeros(1)
        for _ in range(2):
            sgd_momentum_step(p, np.array([1.0]), v, lr=0.1, momentum=0.9, weight_decay=0.0)
        assert p[0] == pytest.approx(-0.29)

    def test_frozen_pwlu_layer_unchanged(self):
        layer = PwluActivation(n_channels=3, n_intervals=4, half_width=2.0, frozen=True)
        x = np.random.default_rng(0).normal(size=(16, 3))
        layer.forward(x, training=True)
        layer.backward(np.ones_like(x))
        before = [p.copy() for p in layer.units]
        layer.step(lr=0.5, momentum=0.9, weight_decay=0.1)
        for b, a in zip(before, layer.units):
            assert b.left_boundary == a.left_boundary
            np.testing.assert_array_equal(b.y_points, a.y_points)


class TestSchedule:
    def test_validation(self):
        with pytest.raises(ValueError):
            TrainSchedule(total_iterations=10, realign_iteration=10, base_lr=0.1)
        with pytest.raises(ValueError):
            TrainSchedule(total_iterations=10, realign_iteration=-1, base_lr=0.1)

    def test_cosine_curve(self):
        s = TrainSchedule(total_iterations=100, realign_iteration=0, base_lr=1.0)
        warm = 5
        assert s.lr_at(0) == pytest.approx(1.0 / warm)
        assert s.lr_at(warm) == pytest.approx(1.0)
        assert s.lr_at(99) < 0.01
        # deterministic function of t
        assert s.lr_at(37) == s.lr_at(37)


class TestInitPwluRelu:
    def test_grid_values(self):
        p = init_pwlu_relu(4, 2.0)
        np.testing.assert_array_equal(p.y_points, [0, 0, 0, 1, 2])

    def test_exact_relu(self):
        rng = np.random.default_rng(5)
        p = init_pwlu_relu(8, 2.0)
        xs = rng.normal(0, 5, size=10_000)
        np.testing.assert_array_equal(forward_reference(xs, p), np.maximum(xs, 0.0))

    def test_default_n16(self):
        p = init_pwlu_relu(16, 3.0)
        assert p.y_points.size == 17
        np.testing.assert_array_equal(p.y_points[:9], 0.0)

    def test_odd_n_rejected(self):
        with pytest.raises(DegenerateParameterError):
            init_pwlu_relu(3, 1.0)


def tiny_problem(seed=0, n=120):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    labels = (x[:, 0] * x[:, 1] > 0).astype(np.int64)
    return x, labels


class TestTwoPhaseTraining:
    def test_phase_one_immutability(self):
        x, labels = tiny_problem()
        model = build_mlp([2, 8, 2], "pwlu", np.random.default_rng(0),
                          n_intervals=4, pwlu_frozen=True, pwlu_collecting=True)
        sched = TrainSchedule(total_iterations=40, realign_iteration=20, base_lr=0.1, seed=0)
        trainer = Trainer(model, sched, x, labels, batch_size=16)
        checksum = pwlu_checksum(model)
        for _ in range(20):
            trainer.step()
            if trainer.t <= 20:
                assert pwlu_checksum(model) == checksum or trainer.t == 20

    def test_realign_targets_input_distribution(self):
        # one frozen PWLU bank fed N(5,1) while boundaries start at [-3,3]
        rng = np.random.default_rng(0)
        layer = PwluActivation(n_channels=2, n_intervals=16, half_width=3.0,
                               frozen=True, collecting=True, seed=0)
        from pwlu.stats import compute_iou, realign_reset

        for _ in range(300):
            layer.forward(rng.normal(5.0, 1.0, size=(64, 2)), training=True)
        for u in range(2):
            pre = layer.units[u]
            p05, p95 = layer.reservoirs[u].percentile_interval()
            pre_iou = compute_iou((pre.left_boundary, pre.right_boundary), (p05, p95))
            post = realign_reset(pre, layer.stats[u])
            post_iou = compute_iou((post.left_boundary, post.right_boundary), (p05, p95))
            assert abs(post.left_boundary - 2.0) < 0.2
            assert abs(post.right_boundary - 8.0) < 0.2
            assert pre_iou < 0.2 < 0.5 <= post_iou

    def test_zero_lr_yields_post_reset_relu_form(self):
        x, labels = tiny_problem(seed=2)
        model = build_mlp([2, 4, 2], "pwlu", np.random.default_rng(1),
                          n_intervals=4, pwlu_frozen=True, pwlu_collecting=True)
        sched = TrainSchedule(total_iterations=30, realign_iteration=15, base_lr=0.0, seed=1)
        trainer = Trainer(model, sched, x, labels, batch_size=16)
        trainer.run()
        for layer in model.pwlu_layers():
            for u, p in enumerate(layer.units):
                from pwlu.stats import realign_reset

                want = realign_reset(init_pwlu_relu(4, 3.0), layer.stats[u])
                assert p.left_boundary == want.left_boundary
                assert p.right_boundary == want.right_boundary
                np.testing.assert_array_equal(p.y_points, want.y_points)

    def test_disabled_realign_trains_from_fixed_boundaries(self):
        x, labels = tiny_problem(seed=3)
        model = build_mlp([2, 4, 2], "pwlu", np.random.default_rng(2), n_intervals=4)
        sched = TrainSchedule(total_iterations=10, realign_iteration=0, base_lr=0.2, seed=2)
        trainer = Trainer(model, sched, x, labels, batch_size=16)
        before = pwlu_checksum(model)
        trainer.run()
        assert not trainer.pre_reports and not trainer.post_reports
        assert pwlu_checksum(model) != before  # gradients applied from iteration 0

    def test_nonfinite_loss_names_layer(self):
        x, labels = tiny_problem(seed=4)
        model = build_mlp([2, 4, 2], "relu", np.random.default_rng(3))
        model.layers[0].weight *= 1e200
        sched = TrainSchedule(total_iterations=5, realign_iteration=0, base_lr=0.1, seed=3)
        trainer = Trainer(model, sched, x, labels, batch_size=16)
        with pytest.raises(NonFiniteLossError) as err:
            trainer.run()
        assert err.value.layer_name

    def test_determinism(self):
        x, labels = tiny_problem(seed=5)

        def run_once():
            model = build_mlp([2, 6, 2], "pwlu", np.random.default_rng(7),
                              n_intervals=4, pwlu_frozen=True, pwlu_collecting=True)
            sched = TrainSchedule(total_iterations=30, realign_iteration=10,
                                  base_lr=0.1, seed=7)
            Trainer(model, sched, x, labels, batch_size=16).run()
            return pwlu_checksum(model)

        assert run_once() == run_once()


class TestEndToEndGradients:
    def test_pwlu_network_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        model = build_mlp([2, 16, 16, 2], "pwlu", rng, n_intervals=4, half_width=2.0)
        x = rng.normal(size=(8, 2)) * 0.37 + 0.013  # keep off grid points
        labels = rng.integers(0, 2, size=8)

        def loss_value():
            logits = model.forward(x)
            value, _ = softmax_xent_forward(logits, labels)
            return value

        model.loss_and_backward(x, labels)
        h = 1e-5
        checked = 0
        for layer in model.pwlu_layers():
            for u in range(min(3, layer.n_units)):
                grads = layer._grads[u]
                params = layer.units[u]
                for field in ("left_boundary", "right_boundary", "left_slope", "right_slope"):
                    orig = getattr(params, field)
                    setattr(params, field, orig + h)
                    up = loss_value()
                    setattr(params, field, orig - h)
                    dn = loss_value()
                    setattr(params, field, orig)
                    fd = (up - dn) / (2 * h)
                    analytic = getattr(grads, field)
                    assert abs(analytic - fd) <= max(1e-3 * abs(fd), 1e-6), (field, analytic, fd)
                    checked += 1
                for j in range(params.n_intervals + 1):
                    orig = params.y_points[j]
                    params.y_points[j] = orig + h
                    up = loss_value()
                    params.y_points[j] = orig - h
                    dn = loss_value()
                    params.y_points[j] = orig
                    fd = (up - dn) / (2 * h)
                    analytic = grads.y_points[j]
                    assert abs(analytic - fd) <= max(1e-3 * abs(fd), 1e-6), (j, analytic, fd)
                    checked += 1
        assert checked > 20


class TestCheckpoint:
    def make_trainer(self, seed=0, total=40, realign=15):
        train = gen_spirals(60, 0.05, 1)
        test = gen_spirals(60, 0.05, 2)
        train, test = standardize(train, test)
        model = build_mlp([2, 6, 2], "pwlu", np.random.default_rng(seed), n_intervals=4,
                          pwlu_frozen=realign > 0, pwlu_collecting=realign > 0, seed=seed)
        sched = TrainSchedule(total_iterations=total, realign_iteration=realign,
                              base_lr=0.1, seed=seed)
        return Trainer(model, sched, train.features, train.labels, batch_size=16,
                       test_features=test.features, test_labels=test.labels)

    def test_save_load_save_roundtrip(self, tmp_path):
        trainer = self.make_trainer()
        for _ in range(10):
            trainer.step()
        p1 = tmp_path / "a.bin"
        p2 = tmp_path / "b.bin"
        save_checkpoint(p1, trainer)
        loaded = load_checkpoint(p1, trainer.train_features, trainer.train_labels,
                                 trainer.test_features, trainer.test_labels)
        save_checkpoint(p2, loaded)
        assert p1.read_bytes() == p2.read_bytes()

    @pytest.mark.parametrize("pause_at", [7, 15, 23])
    def test_resume_matches_straight_run(self, tmp_path, pause_at):
        straight = self.make_trainer()
        straight.run()

        part = self.make_trainer()
        while part.t < pause_at:
            part.step()
        path = tmp_path / "mid.bin"
        save_checkpoint(path, part)
        resumed = load_checkpoint(path, part.train_features, part.train_labels,
                                  part.test_features, part.test_labels)
        resumed.run()

        assert pwlu_checksum(resumed.model) == pwlu_checksum(straight.model)
        for la, lb in zip(resumed.model.layers, straight.model.layers):
            if hasattr(la, "weight"):
                np.testing.assert_array_equal(la.weight, lb.weight)
                np.testing.assert_array_equal(la.bias, lb.bias)
        assert resumed.metrics == straight.metrics

    def test_load_model_only(self, tmp_path):
        trainer = self.make_trainer()
        trainer.run()
        path = tmp_path / "m.bin"
        save_checkpoint(path, trainer)
        model = load_model(path)
        x = trainer.test_features
        np.testing.assert_array_equal(model.forward(x), trainer.model.forward(x))

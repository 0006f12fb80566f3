import numpy as np
import pytest

from saginfl.nn import (Adam, DenseNet, adam_update, clip_global_norm,
                        grads_to_flat, soft_update)


def finite_diff_param_grads(net, x, loss_fn, h=1e-5):
    """Central finite differences of loss_fn(net.forward(x)) w.r.t. params."""
    grads = []
    params = net.get_params()
    for pi, p in enumerate(params):
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            net.set_params(params)
            up = loss_fn(net.forward(x))
            flat[j] = orig - h
            net.set_params(params)
            down = loss_fn(net.forward(x))
            flat[j] = orig
            gflat[j] = (up - down) / (2.0 * h)
        grads.append(g)
    net.set_params(params)
    return grads


class TestForward:
    def test_zero_params_fix_zero(self):
        for act in ("tanh", "relu", "identity"):
            net = DenseNet([3, 4, 2], hidden_activation=act,
                           rng=np.random.default_rng(0))
            net.set_params([np.zeros_like(p) for p in net.get_params()])
            assert np.allclose(net.forward(np.ones(3)), 0.0)

    def test_single_identity_layer_is_affine(self):
        rng = np.random.default_rng(1)
        net = DenseNet([4, 3], rng=rng)
        x = rng.standard_normal(4)
        expect = x @ net.weights[0] + net.biases[0]
        assert np.allclose(net.forward(x), expect)

    def test_repeatable(self):
        net = DenseNet([5, 8, 2], rng=np.random.default_rng(2))
        x = np.random.default_rng(3).standard_normal(5)
        assert np.array_equal(net.forward(x), net.forward(x))

    def test_shape_mismatch(self):
        net = DenseNet([5, 2], rng=np.random.default_rng(0))
        with pytest.raises(ValueError):
            net.forward(np.zeros(4))


class TestBackward:
    @pytest.mark.parametrize("act", ["tanh", "relu", "identity"])
    def test_gradients_match_finite_differences(self, act):
        rng = np.random.default_rng(11)
        net = DenseNet([4, 6, 5, 3], hidden_activation=act, rng=rng)
        x = rng.standard_normal((7, 4))
        w = rng.standard_normal(3)  # random linear loss head

        def loss(y):
            return float(np.sum(y @ w) + 0.5 * np.sum(y * y))

        y, tape = net.forward(x, want_tape=True)
        analytic, dx = net.backward(tape, np.tile(w, (7, 1)) + y)
        numeric = finite_diff_param_grads(net, x, loss)
        for (dw, db), pair_idx in zip(analytic, range(net.n_layers)):
            nw, nb = numeric[2 * pair_idx], numeric[2 * pair_idx + 1]
            assert np.allclose(dw, nw, rtol=1e-5, atol=1e-7)
            assert np.allclose(db, nb, rtol=1e-5, atol=1e-7)

        # input gradient against finite differences too
        h = 1e-6
        for j in range(4):
            xp, xm = x.copy(), x.copy()
            xp[0, j] += h
            xm[0, j] -= h
            num = (loss(net.forward(xp)) - loss(net.forward(xm))) / (2 * h)
            assert dx[0, j] == pytest.approx(num, rel=1e-4, abs=1e-6)

    def test_constant_loss_zero_grads(self):
        net = DenseNet([3, 4, 2], rng=np.random.default_rng(5))
        _, tape = net.forward(np.ones(3), want_tape=True)
        grads, dx = net.backward(tape, np.zeros(2))
        assert all(np.all(g == 0) for g, _ in grads)
        assert np.all(dx == 0)

    def test_linearity(self):
        net = DenseNet([3, 4, 2], rng=np.random.default_rng(6))
        x = np.ones(3)
        _, tape = net.forward(x, want_tape=True)
        g1, _ = net.backward(tape, np.array([1.0, -2.0]))
        g3, _ = net.backward(tape, 3.0 * np.array([1.0, -2.0]))
        for (a, b), (c, d) in zip(g1, g3):
            assert np.allclose(3.0 * a, c)
            assert np.allclose(3.0 * b, d)

    def test_stale_tape_rejected(self):
        net = DenseNet([3, 2], rng=np.random.default_rng(7))
        _, tape = net.forward(np.ones(3), want_tape=True)
        net.set_params([p * 1.0 for p in net.get_params()])
        with pytest.raises(RuntimeError):
            net.backward(tape, np.ones(2))


class TestAdam:
    def test_zero_grad_keeps_params(self):
        net = DenseNet([2, 2], rng=np.random.default_rng(8))
        before = [p.copy() for p in net.get_params()]
        opt = Adam(net, lr=1e-2)
        opt.step([(np.zeros_like(net.weights[0]),
                   np.zeros_like(net.biases[0]))])
        after = net.get_params()
        assert all(np.allclose(a, b) for a, b in zip(before, after))

    def test_first_step_is_lr_times_sign(self):
        p = np.array([1.0, -2.0, 0.5])
        g = np.array([0.3, -4.0, 1e-3])
        new_p, _, _ = adam_update(p, g, np.zeros(3), np.zeros(3), t=1, lr=0.1)
        # bias-corrected first step reduces to lr * sign(grad) (eps aside)
        assert np.allclose(p - new_p, 0.1 * np.sign(g), atol=1e-4)

    def test_moments_decay_geometrically(self):
        p = np.zeros(1)
        m = np.array([1.0])
        v = np.array([1.0])
        _, m2, v2 = adam_update(p, np.zeros(1), m, v, t=5, lr=0.1,
                                beta1=0.9, beta2=0.99)
        assert m2[0] == pytest.approx(0.9)
        assert v2[0] == pytest.approx(0.99)

    def test_no_nans_under_clipped_training(self):
        rng = np.random.default_rng(9)
        net = DenseNet([4, 16, 1], rng=rng)
        opt = Adam(net, lr=1e-2, grad_clip=10.0)
        for _ in range(2000):
            x = rng.standard_normal((8, 4)) * 10.0
            y, tape = net.forward(x, want_tape=True)
            grads, _ = net.backward(tape, np.sign(y) * 100.0)
            opt.step(grads)
        assert all(np.all(np.isfinite(p)) for p in net.get_params())


class TestUtilities:
    def test_clip_global_norm(self):
        gs = [np.array([3.0]), np.array([4.0])]
        clipped = clip_global_norm(gs, 1.0)
        total = np.sqrt(sum(float(np.sum(g * g)) for g in clipped))
        assert total == pytest.approx(1.0)
        assert clip_global_norm(gs, 100.0) is gs

    def test_soft_update_tau_one_copies(self):
        rng = np.random.default_rng(10)
        a, b = DenseNet([2, 2], rng=rng), DenseNet([2, 2], rng=rng)
        soft_update(a, b, tau=1.0)
        assert all(np.allclose(x, y)
                   for x, y in zip(a.get_params(), b.get_params()))

    def test_soft_update_geometric_convergence(self):
        rng = np.random.default_rng(11)
        target, online = DenseNet([2, 2], rng=rng), DenseNet([2, 2], rng=rng)
        gap0 = np.abs(target.weights[0] - online.weights[0]).max()
        for _ in range(200):
            soft_update(target, online, tau=0.05)
        gap = np.abs(target.weights[0] - online.weights[0]).max()
        assert gap == pytest.approx(gap0 * (1 - 0.05) ** 200, rel=1e-6)

    def test_soft_update_rejects_tau_zero(self):
        rng = np.random.default_rng(12)
        with pytest.raises(ValueError):
            soft_update(DenseNet([2, 2], rng=rng), DenseNet([2, 2], rng=rng),
                        tau=0.0)

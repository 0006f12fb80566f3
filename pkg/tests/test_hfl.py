import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from saginfl.hfl import (LocalDataset, TaskModel, TransferJob,
                         advance_transfers, cloud_aggregate, edge_aggregate,
                         evaluate_task, fedavg_weights, final_aggregate,
                         gen_synthetic_tasks, load_model_checkpoint,
                         local_train_step, logistic_loss_grad,
                         save_model_checkpoint, task_loss_grad, zero_model)


def small_tasks(seed=0, n_tasks=2, n_users=4, conc=1.0, **kw):
    rng = np.random.default_rng(seed)
    return gen_synthetic_tasks(n_tasks, n_users, conc, rng,
                               input_dim=kw.pop("input_dim", 8),
                               n_classes=kw.pop("n_classes", 3),
                               samples_min=40, samples_max=80,
                               zero_prob=kw.pop("zero_prob", 0.2),
                               test_samples=120, **kw)


class TestGeneration:
    def test_determinism(self):
        s1, d1 = small_tasks(seed=42)
        s2, d2 = small_tasks(seed=42)
        for a, b in zip(s1, s2):
            assert np.array_equal(a.test_x, b.test_x)
            assert np.array_equal(a.test_y, b.test_y)
        for ua, ub in zip(d1, d2):
            for f in ua:
                assert np.array_equal(ua[f].features, ub[f].features)

    def test_paper_scale(self):
        specs, shards = small_tasks(seed=1, n_tasks=10, n_users=10)
        assert len(specs) == 10 and len(shards) == 10
        for f in range(10):
            holders = sum(shards[k][f].size > 0 for k in range(10))
            assert holders >= 2

    def test_iid_limit_balances_classes(self):
        _, shards = small_tasks(seed=3, conc=1e6, zero_prob=0.0,
                                n_users=6)
        for k in range(6):
            data = shards[k][0]
            counts = np.bincount(data.labels, minlength=3) / data.size
            assert np.all(np.abs(counts - 1.0 / 3.0) < 0.25)

    def test_noniid_is_skewed(self):
        _, shards = small_tasks(seed=4, conc=0.1, zero_prob=0.0, n_users=8)
        skews = []
        for k in range(8):
            data = shards[k][0]
            counts = np.bincount(data.labels, minlength=3) / data.size
            skews.append(counts.max())
        assert np.mean(skews) > 0.55

    def test_model_size_invariant(self):
        specs, _ = small_tasks(seed=5)
        for s in specs:
            assert s.model_size_bits == s.model_dim * 64

    def test_rejects_bad_concentration(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            gen_synthetic_tasks(1, 1, 0.0, rng)


class TestLocalTraining:
    def test_zero_lr_keeps_params(self):
        specs, shards = small_tasks(seed=6)
        model = zero_model(specs[0])
        data = next(shards[k][0] for k in range(4) if shards[k][0].size > 0)
        out = local_train_step(model, data, specs[0], lr=0.0)
        assert np.array_equal(out.params, model.params)
        assert out.local_iterations_done == 1

    def test_gradient_matches_finite_differences(self):
        specs, shards = small_tasks(seed=7)
        spec = specs[0]
        data = next(shards[k][0] for k in range(4) if shards[k][0].size > 0)
        rng = np.random.default_rng(8)
        params = 0.1 * rng.standard_normal(spec.model_dim)
        model = TaskModel(task_id=0, params=params)
        _, grad = task_loss_grad(model, data, spec)
        h = 1e-6
        for j in rng.choice(spec.model_dim, size=12, replace=False):
            up, down = params.copy(), params.copy()
            up[j] += h
            down[j] -= h
            lu, _ = task_loss_grad(TaskModel(0, up), data, spec)
            ld, _ = task_loss_grad(TaskModel(0, down), data, spec)
            assert grad[j] == pytest.approx((lu - ld) / (2 * h),
                                            rel=1e-4, abs=1e-8)

    def test_loss_decreases_with_small_lr(self):
        specs, shards = small_tasks(seed=9)
        spec = specs[0]
        data = next(shards[k][0] for k in range(4) if shards[k][0].size > 0)
        model = zero_model(spec)
        loss0, _ = task_loss_grad(model, data, spec)
        stepped = local_train_step(model, data, spec, lr=0.1)
        loss1, _ = task_loss_grad(stepped, data, spec)
        assert loss1 < loss0

    def test_converges_to_solver_optimum(self):
        # strong L2 keeps the contraction factor small enough for plain GD
        specs, shards = small_tasks(seed=10, l2_penalty=0.05)
        spec = specs[0]
        data = next(shards[k][0] for k in range(4) if shards[k][0].size > 0)
        model = zero_model(spec)
        for _ in range(3000):
            model = local_train_step(model, data, spec, lr=0.2)

        def objective(p):
            return logistic_loss_grad(p, data.features, data.labels,
                                      spec.input_dim, spec.n_classes,
                                      spec.l2_penalty)

        res = minimize(lambda p: objective(p)[0], np.zeros(spec.model_dim),
                       jac=lambda p: objective(p)[1], method="L-BFGS-B",
                       options={"maxiter": 2000, "ftol": 1e-14,
                                "gtol": 1e-12})
        assert np.max(np.abs(model.params - res.x)) < 1e-4

    def test_rejects_empty_shard(self):
        specs, _ = small_tasks(seed=11)
        empty = LocalDataset(task_id=0, features=np.empty((0, 8)),
                             labels=np.empty(0, dtype=np.int64), size=0)
        with pytest.raises(ValueError):
            local_train_step(zero_model(specs[0]), empty, specs[0], lr=0.1)


class TestEvaluate:
    def test_random_model_near_chance_on_balanced_binary(self):
        rng = np.random.default_rng(12)
        specs, _ = small_tasks(seed=12, n_classes=2, n_tasks=1, zero_prob=0.0)
        spec = specs[0]
        accs = []
        for _ in range(40):
            params = rng.standard_normal(spec.model_dim)
            acc, _ = evaluate_task(TaskModel(0, params), spec)
            accs.append(acc)
        assert np.mean(accs) == pytest.approx(0.5, abs=0.05)

    def test_solver_beats_recorded_floor(self):
        specs, shards = small_tasks(seed=13, zero_prob=0.0)
        spec = specs[0]
        x = np.concatenate([shards[k][0].features for k in range(4)])
        y = np.concatenate([shards[k][0].labels for k in range(4)])

        def obj(p):
            return logistic_loss_grad(p, x, y, spec.input_dim,
                                      spec.n_classes, spec.l2_penalty)

        res = minimize(lambda p: obj(p)[0], np.zeros(spec.model_dim),
                       jac=lambda p: obj(p)[1], method="L-BFGS-B")
        acc, _ = evaluate_task(TaskModel(0, res.x), spec)
        assert acc >= spec.separability_floor - 0.05

    def test_perfect_model_scores_one(self):
        # degenerate task whose classes are trivially separated
        rng = np.random.default_rng(14)
        specs, _ = gen_synthetic_tasks(1, 2, 1e6, rng, input_dim=2,
                                       n_classes=2, samples_min=10,
                                       samples_max=12, zero_prob=0.0,
                                       test_samples=50,
                                       separation_min=60.0,
                                       separation_max=60.0,
                                       feature_scale_min=1.0,
                                       feature_scale_max=1.0)
        spec = specs[0]
        w = np.zeros((3, 2))
        # discriminate along the mean difference
        mean0 = spec.test_x[spec.test_y == 0].mean(axis=0)
        mean1 = spec.test_x[spec.test_y == 1].mean(axis=0)
        w[:2, 1] = (mean1 - mean0) * 10.0
        acc, loss = evaluate_task(TaskModel(0, w.reshape(-1)), spec)
        assert acc == 1.0
        assert loss < 1e-3


class TestAggregation:
    def models(self, vectors):
        return [TaskModel(task_id=0, params=np.array(v, dtype=float))
                for v in vectors]

    def test_single_model_identity(self):
        m = self.models([[1.0, 2.0]])
        out = edge_aggregate(m, np.array([1.0]))
        assert np.allclose(out.params, [1.0, 2.0])

    def test_identical_models_fixed_point(self):
        m = self.models([[1.0, -1.0], [1.0, -1.0]])
        out = edge_aggregate(m, np.array([0.3, 0.7]))
        assert np.allclose(out.params, [1.0, -1.0])

    def test_fedavg_weights_reproduce_sample_mean(self):
        rng = np.random.default_rng(15)
        vecs = rng.standard_normal((3, 5))
        sizes = [10, 30, 60]
        weights = fedavg_weights(sizes)
        out = edge_aggregate(self.models(vecs), weights)
        oracle = sum(n * v for n, v in zip(sizes, vecs)) / sum(sizes)
        assert np.allclose(out.params, oracle, atol=1e-12)

    def test_cloud_matches_edge_semantics(self):
        rng = np.random.default_rng(16)
        vecs = rng.standard_normal((2, 4))
        w = np.array([0.25, 0.75])
        a = edge_aggregate(self.models(vecs), w)
        b = cloud_aggregate(self.models(vecs), w)
        assert np.allclose(a.params, b.params)

    def test_final_reduces_to_cloud_without_relays(self):
        rng = np.random.default_rng(17)
        vecs = rng.standard_normal((2, 4))
        w = np.array([0.6, 0.4])
        direct = final_aggregate(self.models(vecs), [], w)
        cloud = cloud_aggregate(self.models(vecs), w)
        assert np.allclose(direct.params, cloud.params)

    def test_final_uniform_mean(self):
        vecs = [[3.0, 0.0], [0.0, 3.0], [3.0, 3.0]]
        out = final_aggregate(self.models(vecs[:2]), self.models(vecs[2:]),
                              np.full(3, 1.0 / 3.0))
        assert np.allclose(out.params, [2.0, 2.0])

    def test_literal_prefactor_shrinks(self):
        m = self.models([[2.0], [2.0]])
        out = edge_aggregate(m, np.array([0.5, 0.5]), literal_prefactor=True)
        assert np.allclose(out.params, [1.0])

    def test_rejects_non_simplex(self):
        m = self.models([[1.0], [2.0]])
        with pytest.raises(ValueError):
            edge_aggregate(m, np.array([0.7, 0.7]))

    def test_rejects_mixed_tasks(self):
        a = TaskModel(task_id=0, params=np.zeros(2))
        b = TaskModel(task_id=1, params=np.zeros(2))
        with pytest.raises(ValueError):
            edge_aggregate([a, b], np.array([0.5, 0.5]))

    @given(st.integers(2, 5), st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_permutation_invariance_and_hull(self, n, seed):
        rng = np.random.default_rng(seed)
        vecs = rng.standard_normal((n, 4))
        w = rng.dirichlet(np.ones(n))
        models = self.models(vecs)
        out = edge_aggregate(models, w)
        perm = rng.permutation(n)
        out_p = edge_aggregate([models[i] for i in perm], w[perm])
        assert np.allclose(out.params, out_p.params, atol=1e-12)
        assert np.all(out.params <= vecs.max(axis=0) + 1e-12)
        assert np.all(out.params >= vecs.min(axis=0) - 1e-12)

    def test_three_level_pipeline_equals_flat_fedavg(self):
        rng = np.random.default_rng(18)
        sizes = [11, 7, 23, 5, 17, 31]
        vecs = rng.standard_normal((6, 9))
        models = self.models(vecs)
        # clusters: {0,1} -> uav0 -> sat0(final, direct), {2,3} -> uav1 ->
        # sat1 (relayed), {4,5} -> uav2 -> sat1 (relayed)
        e0 = edge_aggregate(models[0:2], fedavg_weights(sizes[0:2]))
        e1 = edge_aggregate(models[2:4], fedavg_weights(sizes[2:4]))
        e2 = edge_aggregate(models[4:6], fedavg_weights(sizes[4:6]))
        c1 = cloud_aggregate([e1, e2], fedavg_weights([sum(sizes[2:4]),
                                                       sum(sizes[4:6])]))
        final = final_aggregate([e0], [c1],
                                fedavg_weights([sum(sizes[0:2]),
                                                sum(sizes[2:6])]))
        flat = sum(n * v for n, v in zip(sizes, vecs)) / sum(sizes)
        assert np.max(np.abs(final.params - flat)) < 1e-12


class TestTransfers:
    def job(self, bits, direction="edge_up"):
        return TransferJob(task_id=0, payload=np.zeros(2),
                           bits_remaining=bits, src=("user", 0),
                           dst=("uav", 0), direction=direction)

    def test_zero_rate_no_progress(self):
        jobs = [self.job(100.0)]
        done, active = advance_transfers(jobs, lambda j: 0.0, dt=1.0)
        assert not done and active[0].bits_remaining == 100.0

    def test_exact_completion(self):
        jobs = [self.job(1e6)]
        done, active = advance_transfers(jobs, lambda j: 1e6, dt=1.0)
        assert len(done) == 1 and not active

    def test_multi_slot_completion_schedule(self):
        # 1.5 slot payload at constant rate: survives slot 1, done in slot 2
        jobs = [self.job(1.5e6)]
        done, active = advance_transfers(jobs, lambda j: 1e6, dt=1.0)
        assert not done and active[0].bits_remaining == pytest.approx(0.5e6)
        done, active = advance_transfers(active, lambda j: 1e6, dt=1.0)
        assert len(done) == 1 and not active

    def test_monotone_bits(self):
        job = self.job(10.0)
        for _ in range(5):
            before = job.bits_remaining
            advance_transfers([job], lambda j: 3.0, dt=1.0)
            assert job.bits_remaining <= before


class TestCheckpoints:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(19)
        model = TaskModel(task_id=3, params=rng.standard_normal(17),
                          local_iterations_done=5)
        path = tmp_path / "model.bin"
        save_model_checkpoint(model, path)
        back = load_model_checkpoint(path)
        assert back.task_id == 3
        assert np.array_equal(back.params, model.params)

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"not a checkpoint at all")
        with pytest.raises(ValueError):
            load_model_checkpoint(path)

import numpy as np
import pytest

from ridescore.mtl import (
    FeedbackQueue,
    MtlModel,
    PendingQuery,
    TrainConfig,
    UnknownCommuterError,
    dataset_loss,
    gradients,
    load_model,
    retrain,
    save_model,
    should_query,
    stl_train,
    train,
)
from ridescore.trips import FeatureVector, IndicatorVector


def fv(ls=0.5, lj=0.5, lc=0.5, tt=100.0, d=1.0, z=0):
    return FeatureVector(
        speed_likelihood=ls,
        jerk_likelihood=lj,
        congestion_likelihood=lc,
        travel_time_s=tt,
        distance_km=d,
        time_zone=z,
    )


def random_rows(rng, commuters, n_per=30):
    """Rows whose level is a linear-ish function of the likelihoods, with
    per-commuter emphasis."""
    rows = []
    for i, cid in enumerate(commuters):
        for _ in range(n_per):
            ls, lj, lc = rng.random(3)
            score = [ls, lj, lc][i % 3]
            level = min(5, 1 + int(score * 5))
            rows.append((cid, fv(ls, lj, lc, rng.uniform(0, 1800), rng.uniform(0, 20), int(rng.integers(4))), level))
    return rows


class TestForward:
    def test_zero_weights_uniform(self):
        model = MtlModel(["a"], hidden=8, seed=0)
        model.w1[:] = 0.0
        model.b1[:] = 0.0
        model.head_w[0][:] = 0.0
        model.head_b[0][:] = 0.0
        iv = model.forward("a", fv())
        assert iv.p == pytest.approx((0.2,) * 5)

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(0)
        model = MtlModel(["a", "b"], hidden=16, seed=3)
        for _ in range(20):
            iv = model.forward(
                "b",
                fv(*rng.random(3), tt=rng.uniform(0, 2000), d=rng.uniform(0, 30), z=int(rng.integers(4))),
            )
            assert sum(iv.p) == pytest.approx(1.0, abs=1e-9)

    def test_argmax_invariant_under_logit_shift(self):
        model = MtlModel(["a"], hidden=16, seed=1)
        sample = fv(0.9, 0.1, 0.4)
        before = model.forward("a", sample).level()
        model.head_b[0] += 3.7
        after = model.forward("a", sample).level()
        assert before == after

    def test_unknown_commuter(self):
        model = MtlModel(["a"], hidden=8, seed=0)
        with pytest.raises(UnknownCommuterError):
            model.forward("ghost", fv())

    def test_head_init_independent_of_registration_time(self):
        early = MtlModel(["a", "b"], hidden=8, seed=5)
        late = MtlModel(["a"], hidden=8, seed=5)
        late.register("b")
        assert np.array_equal(early.head_w[1], late.head_w[1])


class TestGradients:
    def test_matches_central_finite_differences(self):
        rng = np.random.default_rng(7)
        model = MtlModel(["a", "b"], hidden=6, seed=2)
        rows = random_rows(rng, ["a", "b"], n_per=8)
        model.update_normalization(rows)
        grads = gradients(model, rows)

        params = [
            ("w1", model.w1), ("b1", model.b1),
            ("head_w_0", model.head_w[0]), ("head_b_0", model.head_b[0]),
            ("head_w_1", model.head_w[1]), ("head_b_1", model.head_b[1]),
        ]
        h = 1e-6
        checked = 0
        for name, arr in params:
            flat = arr.reshape(-1)
            for _ in range(20):
                i = int(rng.integers(flat.size))
                orig = flat[i]
                flat[i] = orig + h
                up = dataset_loss(model, rows)
                flat[i] = orig - h
                down = dataset_loss(model, rows)
                flat[i] = orig
                numeric = (up - down) / (2 * h)
                analytic = grads[name].reshape(-1)[i]
                denom = max(abs(numeric), abs(analytic), 1e-8)
                assert abs(numeric - analytic) / denom < 1e-4, f"{name}[{i}]"
                checked += 1
        assert checked == 120

    def test_task_isolation_within_one_batch(self):
        rng = np.random.default_rng(8)
        model = MtlModel(["a", "b"], hidden=8, seed=0)
        rows_a = [r for r in random_rows(rng, ["a", "b"], 10) if r[0] == "a"]
        model.update_normalization(rows_a)
        grads = gradients(model, rows_a)
        # Head 0 belongs to "a" and learns; head 1 ("b") sees no gradient.
        assert grads["head_w_0"].any()
        assert np.all(grads["head_w_1"] == 0.0)
        assert np.all(grads["head_b_1"] == 0.0)


class TestTrain:
    def test_full_batch_loss_non_increasing_on_separable_set(self):
        rng = np.random.default_rng(1)
        rows = []
        for cid in ("a", "b"):
            for _ in range(40):
                ls = rng.random()
                level = 1 if ls < 0.5 else 5
                rows.append((cid, fv(ls, 0.0, 0.0, 10.0, 0.1, 0), level))
        model = MtlModel(["a", "b"], hidden=16, seed=4)
        cfg = TrainConfig(learning_rate=0.2, epochs=800, batch_size=len(rows), seed=4)
        result = train(model, rows, cfg)
        diffs = np.diff(result.train_loss)
        assert (diffs <= 1e-9).all()
        assert result.train_loss[-1] < 0.1

    def test_deterministic_training(self):
        rng = np.random.default_rng(2)
        rows = random_rows(rng, ["a", "b", "c"], 20)
        cfg = TrainConfig(epochs=30, seed=9)

        m1 = MtlModel(["a", "b", "c"], hidden=12, seed=9)
        train(m1, rows, cfg)
        m2 = MtlModel(["a", "b", "c"], hidden=12, seed=9)
        train(m2, rows, cfg)
        assert np.array_equal(m1.w1, m2.w1)
        assert all(np.array_equal(x, y) for x, y in zip(m1.head_w, m2.head_w))

    def test_single_commuter_trains(self):
        rng = np.random.default_rng(3)
        rows = random_rows(rng, ["solo"], 10)
        model = MtlModel(["solo"], hidden=8, seed=0)
        result = train(model, rows, TrainConfig(epochs=5))
        assert len(result.train_loss) == 5

    def test_tiny_dataset_trains(self):
        rows = [("a", fv(0.1 * i, 0.0, 0.0), 1 + i % 5) for i in range(10)]
        model = MtlModel(["a"], hidden=8, seed=0)
        train(model, rows, TrainConfig(epochs=3))

    def test_registry_commuter_without_rows_warns(self):
        rows = [("a", fv(), 1)]
        model = MtlModel(["a", "idle"], hidden=8, seed=0)
        with pytest.warns(UserWarning, match="idle"):
            train(model, rows, TrainConfig(epochs=1))

    def test_unregistered_commuter_rejected(self):
        model = MtlModel(["a"], hidden=8, seed=0)
        with pytest.raises(UnknownCommuterError):
            train(model, [("b", fv(), 1)], TrainConfig(epochs=1))

    def test_val_losses_reported(self):
        rng = np.random.default_rng(4)
        rows = random_rows(rng, ["a"], 20)
        model = MtlModel(["a"], hidden=8, seed=0)
        result = train(model, rows[:15], TrainConfig(epochs=4), val_rows=rows[15:])
        assert len(result.val_loss) == 4
        assert all(np.isfinite(result.val_loss))


class TestStl:
    def test_equivalent_to_mtl_for_single_commuter(self):
        rng = np.random.default_rng(5)
        rows = random_rows(rng, ["only"], 25)
        cfg = TrainConfig(epochs=20, seed=3)
        mtl = MtlModel(["only"], hidden=32, seed=cfg.seed)
        train(mtl, rows, cfg)
        stl, _ = stl_train("only", rows, cfg)
        assert np.array_equal(mtl.w1, stl.w1)
        assert np.array_equal(mtl.head_w[0], stl.head_w[0])

    def test_trains_on_ten_samples(self):
        rows = [("a", fv(0.1 * i, 0.0, 0.0), 1 + i % 5) for i in range(10)]
        model, result = stl_train("a", rows, TrainConfig(epochs=3))
        assert "a" in model.registry


class TestShouldQuery:
    def test_close_top_two(self):
        assert should_query(IndicatorVector(p=(0.25, 0.24, 0.21, 0.15, 0.15)))

    def test_confident(self):
        assert not should_query(IndicatorVector(p=(0.70, 0.10, 0.08, 0.07, 0.05)))

    def test_boundary_strict(self):
        # Dyadic probabilities make the gap exactly equal to the threshold;
        # strict inequality means no query.
        iv = IndicatorVector(p=(0.5, 0.375, 0.0625, 0.03125, 0.03125))
        assert iv.gap() == 0.125
        assert not should_query(iv, gap_threshold=0.125)


class TestFeedbackQueue:
    def test_span_guard(self):
        q = FeedbackQueue()
        q1 = PendingQuery("a", "trip1", 30, 152.5, fv())
        q2 = PendingQuery("a", "trip1", 40, 202.5, fv())
        q3 = PendingQuery("a", "trip1", 80, 402.5, fv())
        assert q.request(q1)
        assert not q.request(q2)  # same 5-minute span
        assert q.request(q3)      # next span

    def test_separate_trips_independent(self):
        q = FeedbackQueue()
        assert q.request(PendingQuery("a", "t1", 0, 2.5, fv()))
        assert q.request(PendingQuery("a", "t2", 0, 2.5, fv()))

    def test_answer_moves_to_answered(self):
        q = FeedbackQueue()
        query = PendingQuery("a", "t1", 0, 2.5, fv())
        q.request(query)
        q.answer(query, 4)
        assert q.pending == []
        assert q.answered_rows() == [("a", query.features, 4)]

    def test_bad_level_rejected(self):
        q = FeedbackQueue()
        query = PendingQuery("a", "t1", 0, 2.5, fv())
        q.request(query)
        with pytest.raises(ValueError):
            q.answer(query, 9)


class TestRetrain:
    def test_empty_queue_returns_model_unchanged(self):
        model = MtlModel(["a"], hidden=8, seed=0)
        out, result = retrain(model, FeedbackQueue(), TrainConfig(epochs=1))
        assert out is model
        assert result is None

    def test_new_commuter_gets_exactly_one_head(self):
        rng = np.random.default_rng(6)
        base = random_rows(rng, ["a"], 10)
        model = MtlModel(["a"], hidden=8, seed=0)
        train(model, base, TrainConfig(epochs=2))
        queue = FeedbackQueue()
        for i in range(4):
            query = PendingQuery("newbie", "t9", i * 70, i * 350.0, fv(rng.random()))
            assert queue.request(query)
            queue.answer(query, 2)
        out, _ = retrain(model, queue, TrainConfig(epochs=2), base_rows=base)
        assert out is not model
        assert "newbie" in out.registry
        assert len(out.head_w) == 2
        assert "newbie" not in model.registry  # original untouched

    def test_warm_start_keeps_shared_trunk_close(self):
        rng = np.random.default_rng(7)
        base = random_rows(rng, ["a"], 20)
        model = MtlModel(["a"], hidden=8, seed=0)
        train(model, base, TrainConfig(epochs=20))
        queue = FeedbackQueue()
        query = PendingQuery("a", "t1", 0, 2.5, fv(0.9, 0.1, 0.2))
        queue.request(query)
        queue.answer(query, 5)
        out, _ = retrain(model, queue, TrainConfig(epochs=1), base_rows=base)
        assert np.abs(out.w1 - model.w1).max() < 0.5


class TestCheckpoint:
    def test_round_trip_bit_identical_forward(self, tmp_path):
        rng = np.random.default_rng(8)
        rows = random_rows(rng, ["a", "b"], 15)
        model = MtlModel(["a", "b"], hidden=16, seed=2)
        train(model, rows, TrainConfig(epochs=10))
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        for _ in range(10):
            sample = fv(*rng.random(3), tt=rng.uniform(0, 1800), d=rng.uniform(0, 20), z=int(rng.integers(4)))
            assert model.forward("a", sample).p == loaded.forward("a", sample).p

    def test_checkpoint_bytes_deterministic(self, tmp_path):
        model = MtlModel(["a"], hidden=8, seed=1)
        p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
        save_model(model, p1)
        save_model(model, p2)
        assert p1.read_bytes() == p2.read_bytes()

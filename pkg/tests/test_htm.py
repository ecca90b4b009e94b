import math

import mpmath
import numpy as np
import pytest

from ridescore.htm import (
    AnomalyLikelihood,
    Detector,
    DetectorConfig,
    EncodingError,
    LikelihoodConfig,
    ScalarEncoderConfig,
    SpatialPooler,
    SpatialPoolerConfig,
    TemporalMemory,
    TemporalMemoryConfig,
    encode,
    is_anomalous,
    load_detector,
    q_function,
    save_detector,
)


def make_encoder(minimum=0.0, maximum=10.0, **kw):
    return ScalarEncoderConfig(minimum=minimum, maximum=maximum, **kw)


class TestEncoder:
    def test_minimum_maps_to_leading_bits(self):
        cfg = make_encoder()
        bits = encode(0.0, cfg)
        assert bits.tolist() == list(range(21))

    def test_maximum_maps_to_trailing_bits(self):
        cfg = make_encoder()
        bits = encode(10.0, cfg)
        assert bits.tolist() == list(range(cfg.width - 21, cfg.width))

    def test_deterministic(self):
        cfg = make_encoder()
        assert encode(3.7, cfg).tolist() == encode(3.7, cfg).tolist()

    def test_exact_bit_count(self):
        cfg = make_encoder()
        for x in np.linspace(0, 10, 37):
            assert len(encode(float(x), cfg)) == 21

    def test_overlap_non_increasing_in_distance(self):
        cfg = make_encoder()
        base = set(encode(4.0, cfg).tolist())
        overlaps = [
            len(base & set(encode(4.0 + d, cfg).tolist()))
            for d in np.linspace(0.0, 6.0, 40)
        ]
        assert all(b <= a for a, b in zip(overlaps, overlaps[1:]))

    def test_clipping(self):
        cfg = make_encoder()
        assert encode(-5.0, cfg).tolist() == encode(0.0, cfg).tolist()
        assert encode(25.0, cfg).tolist() == encode(10.0, cfg).tolist()

    def test_clip_disabled_raises(self):
        cfg = make_encoder(clip_out_of_range=False)
        with pytest.raises(EncodingError):
            encode(11.0, cfg)

    def test_non_finite_rejected(self):
        with pytest.raises(EncodingError):
            encode(float("nan"), make_encoder())

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            ScalarEncoderConfig(minimum=1.0, maximum=1.0)
        with pytest.raises(ValueError):
            ScalarEncoderConfig(minimum=0.0, maximum=1.0, active_bits=22)


class TestSpatialPooler:
    def test_fixed_sparsity(self):
        cfg = SpatialPoolerConfig()
        sp = SpatialPooler(150, cfg, np.random.default_rng(0))
        active = sp.compute(np.arange(21), learn=False)
        assert len(active) == cfg.active_columns

    def test_deterministic_given_seed(self):
        cfg = SpatialPoolerConfig(columns=256)
        a = SpatialPooler(150, cfg, np.random.default_rng(3))
        b = SpatialPooler(150, cfg, np.random.default_rng(3))
        bits = np.arange(30, 51)
        assert a.compute(bits).tolist() == b.compute(bits).tolist()

    def test_similar_inputs_share_columns(self):
        cfg = SpatialPoolerConfig(columns=512)
        sp = SpatialPooler(150, cfg, np.random.default_rng(1))
        enc = make_encoder(0.0, 10.0)
        a = set(sp.compute(encode(5.0, enc), learn=False).tolist())
        b = set(sp.compute(encode(5.1, enc), learn=False).tolist())
        c = set(sp.compute(encode(9.9, enc), learn=False).tolist())
        assert len(a & b) > len(a & c)

    def test_learning_reinforces_active_input(self):
        cfg = SpatialPoolerConfig(columns=128, sparsity=0.1)
        sp = SpatialPooler(60, cfg, np.random.default_rng(2))
        bits = np.arange(10, 31)
        before = sp.permanences.copy()
        active = sp.compute(bits, learn=True)
        delta = sp.permanences[active][:, bits] - before[active][:, bits]
        pot = sp.potential[active][:, bits]
        assert (delta[pot] >= 0).all()


class TestTemporalMemory:
    def test_repeating_sequence_becomes_predictable(self):
        cfg = TemporalMemoryConfig(activation_threshold=8, min_threshold=5)
        tm = TemporalMemory(200, cfg, np.random.default_rng(0))
        patterns = [np.arange(i * 20, i * 20 + 10) for i in range(4)]
        scores = []
        for rep in range(30):
            for p in patterns:
                predicted = tm.predicted_columns
                hits = sum(1 for c in p.tolist() if c in predicted)
                scores.append(1.0 - hits / len(p))
                tm.compute(p)
        assert np.mean(scores[-8:]) < 0.05

    def test_novel_input_is_unpredicted(self):
        cfg = TemporalMemoryConfig(activation_threshold=8, min_threshold=5)
        tm = TemporalMemory(200, cfg, np.random.default_rng(0))
        a, b = np.arange(0, 10), np.arange(20, 30)
        for _ in range(20):
            tm.compute(a)
            tm.compute(b)
        novel = np.arange(150, 160)
        assert not (set(novel.tolist()) & tm.predicted_columns)

    def test_synapse_bounds_respected(self):
        cfg = TemporalMemoryConfig(max_synapses_per_segment=12, activation_threshold=4,
                                   min_threshold=3, max_new_synapses=6)
        tm = TemporalMemory(100, cfg, np.random.default_rng(1))
        rng = np.random.default_rng(2)
        for _ in range(60):
            tm.compute(np.sort(rng.choice(100, size=8, replace=False)))
        assert all(len(s) <= 12 for s in tm.seg_synapses)

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            TemporalMemoryConfig(activation_threshold=64, max_synapses_per_segment=32)
        with pytest.raises(ValueError):
            TemporalMemoryConfig(min_threshold=20, activation_threshold=13)


class TestQFunction:
    def test_matches_high_precision_erfc(self):
        mpmath.mp.dps = 40
        for z in np.linspace(-8.0, 8.0, 161):
            oracle = float(0.5 * mpmath.erfc(mpmath.mpf(z) / mpmath.sqrt(2)))
            assert abs(q_function(float(z)) - oracle) < 1e-10

    def test_midpoint(self):
        assert q_function(0.0) == pytest.approx(0.5)


class TestLikelihood:
    def test_equal_means_give_half(self):
        lik = AnomalyLikelihood(LikelihoodConfig(window=100, short_window=5))
        out = [lik.update(0.3) for _ in range(50)]
        assert out[-1] == pytest.approx(0.5)

    def test_known_z_crossing(self):
        # Construct a history with known mean/std, then push the short
        # window to rho + 4.2649 sigma.
        cfg = LikelihoodConfig(window=4000, short_window=10)
        lik = AnomalyLikelihood(cfg)
        rng = np.random.default_rng(0)
        history = rng.normal(0.2, 0.05, size=3000).clip(0, 1)
        for v in history:
            lik.update(float(v))
        n = len(lik.scores)
        rho = lik._sum / n
        sigma = math.sqrt(lik._sumsq / n - rho * rho)
        # Solve for a constant short window achieving the target z after
        # the 10 new values shift the long-window stats as well.
        target_z = 4.2649
        values = None
        guess = rho + target_z * sigma
        for _ in range(40):
            trial = AnomalyLikelihood(cfg)
            for v in history:
                trial.update(float(v))
            for _ in range(10):
                out = trial.update(guess)
            m = len(trial.scores)
            new_rho = trial._sum / m
            new_sigma = math.sqrt(trial._sumsq / m - new_rho * new_rho)
            z_now = (guess - new_rho) / new_sigma
            if abs(z_now - target_z) < 1e-9:
                values = out
                break
            guess += (target_z - z_now) * new_sigma
        assert values is not None
        expected = 1.0 - q_function(target_z)
        assert abs(expected - (1.0 - 1e-5)) < 1e-7
        assert values == pytest.approx(expected, abs=1e-7)

    def test_likelihood_bounds(self):
        lik = AnomalyLikelihood(LikelihoodConfig(window=50, short_window=5))
        rng = np.random.default_rng(1)
        for _ in range(300):
            out = lik.update(float(rng.random()))
            assert 0.0 <= out <= 1.0

    def test_constant_then_jump_rises_sharply(self):
        # The long window absorbs the jump too, so the likelihood tops out
        # below 1.0; what matters is the clear separation from baseline.
        lik = AnomalyLikelihood(LikelihoodConfig(window=100, short_window=5))
        for _ in range(60):
            baseline = lik.update(0.0)
        for _ in range(5):
            out = lik.update(1.0)
        assert baseline == pytest.approx(0.5)
        assert out > 0.99


class TestIsAnomalous:
    def test_half_is_not(self):
        assert not is_anomalous(0.5)

    def test_boundary_inclusive(self):
        assert is_anomalous(1.0 - 1e-5)

    def test_below_boundary(self):
        assert not is_anomalous(1.0 - 2e-5)


def small_detector(seed=0):
    cfg = DetectorConfig(
        encoder=ScalarEncoderConfig(minimum=0.0, maximum=10.0, buckets=60, active_bits=11),
        pooler=SpatialPoolerConfig(columns=256, sparsity=0.06),
        memory=TemporalMemoryConfig(
            cells_per_column=8, activation_threshold=8, min_threshold=6, max_new_synapses=12,
            max_synapses_per_segment=24,
        ),
        likelihood=LikelihoodConfig(window=500, short_window=5),
    )
    return Detector(cfg, seed=seed)


class TestDetector:
    def test_first_step_raw_is_one(self):
        det = small_detector()
        raw, _ = det.step(5.0)
        assert raw == 1.0

    def test_raw_zero_once_prediction_covers_input(self):
        det = small_detector()
        raws = [det.step(5.0)[0] for _ in range(60)]
        assert 0.0 in raws[2:]

    def test_raw_score_matches_formula(self):
        det = small_detector()
        from ridescore.htm.encoder import encode as enc
        for value in [5.0] * 30 + [2.0, 7.0] * 5:
            predicted = set(det.memory.predicted_columns)
            active = det.pooler.compute(enc(value, det.cfg.encoder), learn=False)
            expected = 1.0 - sum(1 for c in active.tolist() if c in predicted) / len(active)
            raw, _ = det.step(value)
            if det.steps == 1:
                assert raw == 1.0
            else:
                assert raw == expected

    def test_raw_one_when_prediction_disjoint(self):
        det = small_detector()
        for _ in range(40):
            det.step(1.0)
        raw, _ = det.step(9.0)
        assert raw == 1.0

    def test_scores_in_bounds_and_deterministic(self):
        rng = np.random.default_rng(4)
        values = (5.0 + np.sin(np.arange(200) / 5.0) + rng.normal(0, 0.1, 200)).tolist()
        r1, s1 = small_detector(seed=9).run(values)
        r2, s2 = small_detector(seed=9).run(values)
        assert r1 == r2 and s1 == s2
        assert all(0.0 <= r <= 1.0 for r in r1)
        assert all(0.0 <= s <= 1.0 for s in s1)

    def test_periodic_input_converges(self):
        det = small_detector(seed=3)
        period = [2.0, 4.0, 6.0, 8.0]
        raws = []
        for i in range(240):
            raw, _ = det.step(period[i % 4])
            raws.append(raw)
        assert np.mean(raws[-60:]) < 0.2

    def test_checkpoint_restores_bit_identical_behavior(self, tmp_path):
        rng = np.random.default_rng(7)
        values = (5.0 + np.sin(np.arange(120) / 3.0) + rng.normal(0, 0.2, 120)).tolist()
        tail = (5.0 + np.sin(np.arange(120, 180) / 3.0)).tolist()

        det = small_detector(seed=11)
        det.run(values)
        path = tmp_path / "det.ckpt"
        save_detector(det, path)
        restored = load_detector(path)

        out_a = det.run(tail)
        out_b = restored.run(tail)
        assert out_a == out_b

    def test_checkpoint_bytes_deterministic(self, tmp_path):
        det = small_detector(seed=2)
        det.run([1.0, 2.0, 3.0, 4.0] * 20)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_detector(det, p1)
        save_detector(det, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_quiet_stream_low_anomaly_rate(self):
        # Post-warm-up flag rate at the default threshold stays under 2%.
        rng = np.random.default_rng(13)
        values = (5.0 + np.sin(np.arange(400) / 8.0) + rng.normal(0, 0.15, 400)).tolist()
        det = small_detector(seed=5)
        _, scores = det.run(values)
        flags = [is_anomalous(s) for s in scores[120:]]
        assert sum(flags) / len(flags) < 0.02

import math

import numpy as np
import pytest
from scipy import stats

from ridescore.baselines import (
    ExposeConfig,
    ExposeDetector,
    RelativeEntropyConfig,
    RelativeEntropyDetector,
    iso_comfort,
    relabel,
)


class TestRelativeEntropy:
    def test_constant_stream_scores_toward_zero(self):
        det = RelativeEntropyDetector(0.0, 10.0)
        scores = [det.step(5.0) for _ in range(120)]
        # Pre-window and first-window steps are exactly 0; afterwards only
        # the smoothing residue remains.
        assert all(s == 0.0 for s in scores[:55])
        assert all(s < 1e-9 for s in scores[55:])

    def test_abrupt_shift_alarms_within_one_window(self):
        # Mass moving into a never-seen bin explodes the statistic at the
        # first shifted window; afterwards new hypotheses absorb the regime.
        det = RelativeEntropyDetector(0.0, 10.0)
        for _ in range(55):
            det.step(1.0)
        post_shift = [det.step(9.0) for _ in range(55)]
        assert post_shift[0] > 0.9

    def test_hand_computed_statistic(self):
        # First shifted window: hypothesis (55, 0, ..., 0) in counts vs
        # observed (54, 0, ..., 1); chi-square with the smoothing used by
        # the detector, mapped through the 9-dof CDF.
        cfg = RelativeEntropyConfig()
        det = RelativeEntropyDetector(0.0, 10.0, cfg)
        for _ in range(55):
            det.step(0.1)  # bin 0
        observed = np.zeros(10)
        observed[0] = 54.0
        observed[9] = 1.0
        hypothesis = np.zeros(10)
        hypothesis[0] = 55.0
        freq = (hypothesis + 1e-6) / (hypothesis.sum() + 1e-6 * 10)
        expected = 55.0 * freq
        stat = float(((observed - expected) ** 2 / expected).sum())
        want = stats.chi2.cdf(stat, 9)
        out = det.step(9.9)  # bin 9
        assert out == pytest.approx(want, rel=1e-9)

    def test_scores_bounded_on_random_stream(self):
        det = RelativeEntropyDetector(0.0, 1.0)
        rng = np.random.default_rng(0)
        for _ in range(300):
            s = det.step(float(rng.random()))
            assert 0.0 <= s <= 1.0

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        values = rng.random(200).tolist()
        a = [RelativeEntropyDetector(0.0, 1.0).step(v) for v in values]  # noqa: F841
        d1 = RelativeEntropyDetector(0.0, 1.0)
        d2 = RelativeEntropyDetector(0.0, 1.0)
        assert [d1.step(v) for v in values] == [d2.step(v) for v in values]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RelativeEntropyConfig(window=5, bins=10)


def brute_force_expose(values, cfg=ExposeConfig()):
    """Quadratic-time oracle: causal z-scores, decayed kernel mean."""
    out = []
    zs = []
    n = 0
    mean = 0.0
    m2 = 0.0
    for x in values:
        if n < 2:
            z = 0.0
        else:
            std = math.sqrt(m2 / n)
            z = (x - mean) / max(std, 1e-9)
        if not zs:
            out.append(1.0)
        else:
            num = den = 0.0
            for age, past in enumerate(reversed(zs)):
                w = (1.0 - cfg.decay) ** age
                num += w * math.exp(-((z - past) ** 2) / (2 * cfg.gamma ** 2))
                den += w
            out.append(1.0 - num / den)
        zs.append(z)
        n += 1
        delta = x - mean
        mean += delta / n
        m2 += delta * (x - mean)
    return out


class TestExpose:
    def test_first_observation_scores_one(self):
        det = ExposeDetector()
        assert det.step(3.0) == 1.0

    def test_identical_history_scores_near_zero(self):
        det = ExposeDetector()
        out = [det.step(2.0) for _ in range(100)]
        assert out[-1] == pytest.approx(0.0, abs=1e-9)

    def test_matches_quadratic_oracle(self):
        rng = np.random.default_rng(3)
        values = (5.0 + rng.normal(0, 1.0, size=200)).tolist()
        det = ExposeDetector()
        got = [det.step(v) for v in values]
        want = brute_force_expose(values)
        assert got == pytest.approx(want, abs=1e-9)

    def test_outlier_scores_higher_than_inlier(self):
        rng = np.random.default_rng(4)
        det = ExposeDetector()
        for _ in range(200):
            det.step(float(rng.normal(0, 1)))
        inlier = det.step(0.0)
        outlier = det.step(25.0)
        assert outlier > inlier + 0.3

    def test_scores_bounded(self):
        rng = np.random.default_rng(5)
        det = ExposeDetector()
        for _ in range(300):
            s = det.step(float(rng.normal(0, 3)))
            assert 0.0 <= s <= 1.0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ExposeConfig(decay=0.0)
        with pytest.raises(ValueError):
            ExposeConfig(gamma=-1.0)


class TestIsoComfort:
    def test_single_vertical_component(self):
        a_v, level = iso_comfort(0.0, 0.0, 1.0)
        assert a_v == pytest.approx(1.0)
        assert level == 4

    def test_unit_components(self):
        a_v, level = iso_comfort(1.0, 1.0, 1.0)
        assert a_v == pytest.approx(math.sqrt(4.92))
        assert a_v == pytest.approx(2.2181, abs=1e-4)
        assert level == 5

    def test_zero_is_level_one(self):
        a_v, level = iso_comfort(0.0, 0.0, 0.0)
        assert a_v == 0.0
        assert level == 1

    def test_extreme_is_level_six(self):
        _, level = iso_comfort(2.0, 2.0, 2.0)
        assert level == 6

    @pytest.mark.parametrize("a_v,level", [(0.315, 1), (0.5, 2), (0.8, 3), (1.25, 4), (2.5, 5)])
    def test_band_edges_inclusive(self, a_v, level):
        got_av, got_level = iso_comfort(0.0, 0.0, a_v)
        assert got_av == pytest.approx(a_v)
        assert got_level == level

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            iso_comfort(float("nan"), 0.0, 0.0)


class TestRelabel:
    @pytest.mark.parametrize("level,expected", [(1, 1), (2, 1), (3, 2), (4, 3), (5, 3)])
    def test_five_to_three(self, level, expected):
        assert relabel(level, "five_to_three") == expected

    @pytest.mark.parametrize("level,expected", [(1, 1), (2, 1), (3, 2), (4, 2), (5, 3), (6, 3)])
    def test_six_to_three(self, level, expected):
        assert relabel(level, "six_to_three") == expected

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            relabel(6, "five_to_three")
        with pytest.raises(ValueError):
            relabel(0, "six_to_three")

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            relabel(1, "seven_to_two")

    @pytest.mark.parametrize("scheme,top", [("five_to_three", 5), ("six_to_three", 6)])
    def test_monotone(self, scheme, top):
        mapped = [relabel(v, scheme) for v in range(1, top + 1)]
        assert mapped == sorted(mapped)

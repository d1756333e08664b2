import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlmimo import scenario as sc


class TestPropagation:
    def test_pathloss_values(self):
        assert sc.pathloss_los_db(100.0, 2.0) == pytest.approx(28 + 44 + 20 * np.log10(2))
        assert sc.pathloss_nlos_db(100.0, 2.0) == pytest.approx(22.7 + 73.4 + 26 * np.log10(2))

    def test_los_probability_near_one(self):
        assert sc.los_probability(10.0) == pytest.approx(1.0)
        assert sc.los_probability(0.0) == pytest.approx(1.0)

    @settings(max_examples=50, deadline=None)
    @given(d=st.floats(18.0, 2000.0))
    def test_los_probability_in_unit_interval_and_decreasing(self, d):
        p, q = sc.los_probability(d), sc.los_probability(d + 1.0)
        assert 0 <= q <= p <= 1

    def test_rician_factor(self):
        assert sc.rician_factor_db(100.0) == pytest.approx(10.0)


class TestPowerControl:
    def test_weakest_gets_full_power(self):
        p = sc.power_control(np.array([1e-10, 1e-8, 1e-12]), 0.2, 100.0)
        assert p[2] == pytest.approx(0.2)
        assert p[1] == pytest.approx(0.2 * 100 * 1e-12 / 1e-8)

    @settings(max_examples=50, deadline=None)
    @given(gains=st.lists(st.floats(1e-14, 1e-6), min_size=1, max_size=8), delta_db=st.floats(0, 40))
    def test_received_power_spread_bounded(self, gains, delta_db):
        beta = np.array(gains)
        delta = 10 ** (delta_db / 10)
        p = sc.power_control(beta, 0.2, delta)
        rx = beta * p
        assert np.all(p <= 0.2 * (1 + 1e-12))
        assert rx.max() <= delta * rx.min() * (1 + 1e-9)

    def test_rejects_empty_and_bad_delta(self):
        with pytest.raises(ValueError):
            sc.power_control(np.array([]), 0.2, 10.0)
        with pytest.raises(ValueError):
            sc.power_control(np.ones(2), 0.2, 0.5)


class TestDrops:
    def test_shapes_and_min_distance(self, rng):
        cfg = sc.ScenarioConfig(M=8, K=4)
        ls = sc.sample_drops(cfg, 500, rng)
        assert ls.g_bar.shape == (500, 8, 4)
        horizontal = np.sqrt(ls.distance**2 - (cfg.bs_height - cfg.ue_height) ** 2)
        assert horizontal.min() >= cfg.min_distance - 1e-9

    def test_nlos_has_no_mean(self, rng):
        ls = sc.sample_drops(sc.ScenarioConfig(M=4, K=3), 300, rng)
        assert np.all(ls.g_bar[~ls.los[:, None, :].repeat(4, axis=1)] == 0)

    def test_total_gain_split(self, rng):
        ls = sc.sample_drops(sc.ScenarioConfig(M=4, K=3), 200, rng)
        tot = ls.beta[:, None, :] + np.abs(ls.g_bar) ** 2
        assert np.allclose(tot, ls.beta_total[:, None, :])

    def test_channel_statistics(self, rng):
        ls = sc.sample_drop(sc.ScenarioConfig(M=2, K=2), rng)
        G = sc.sample_channel(ls, rng, n=200000).G
        assert np.allclose(G.mean(axis=0), ls.g_bar, atol=5 * np.sqrt(ls.beta.max() / 200000))
        var = np.var(G, axis=0)
        assert np.allclose(var, np.broadcast_to(ls.beta, var.shape), rtol=0.02)

    def test_same_seed_same_drop(self):
        a = sc.sample_drop(sc.ScenarioConfig(), np.random.default_rng(7))
        b = sc.sample_drop(sc.ScenarioConfig(), np.random.default_rng(7))
        assert np.array_equal(a.g_bar, b.g_bar) and np.array_equal(a.p, b.p)

    def test_config_round_trip_and_unknown_keys(self):
        cfg = sc.ScenarioConfig(M=16)
        assert sc.ScenarioConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ValueError):
            sc.ScenarioConfig.from_dict({"antennas": 3})

    def test_noise_power(self):
        assert sc.ScenarioConfig().sigma2 == pytest.approx(10 ** (-12.6))

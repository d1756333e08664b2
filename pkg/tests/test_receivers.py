import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from nlmimo import bussgang as bg
from nlmimo import constellation as cc
from nlmimo import receivers as rx
from nlmimo.scenario import ScenarioConfig, sample_channel

from conftest import bs_coeffs, los_drop, random_instance, ue_coeffs


def channel_set(seed, K=3, M=6, backoff=3.0, name="gaussian"):
    rng = np.random.default_rng(seed)
    c = cc.from_name(name)
    b = ue_coeffs(backoff)
    G, a = random_instance(rng, K, M, c, b, a_scale=4.0)
    return bg.effective_channel_set(G, np.ones(K), a, b, c, 0.05)


def all_combiners(E):
    return {
        "da-mmse": rx.combine_da_mmse(E.C, E.Czz, E.sigma2),
        "ew-da-mmse": rx.combine_ew_da_mmse(E.C, np.real(np.diag(E.Cmm))),
        "da-rzf": rx.combine_da_rzf(E.C, E.sigma2),
        "da-mrc": rx.combine_da_mrc(E.C),
    }


class TestSinr:
    def test_scalar_matched_filter(self):
        g, p, s2 = 0.7 - 0.2j, 0.3, 0.01
        C = np.array([[np.sqrt(p) * g]])
        val = rx.sinr(C, C, s2 * np.eye(1))
        assert val[0] == pytest.approx(p * abs(g) ** 2 / s2)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), re=st.floats(-5, 5), im=st.floats(-5, 5))
    def test_scale_invariance(self, seed, re, im):
        scale = complex(re, im)
        if abs(scale) < 1e-3:
            return
        E = channel_set(seed)
        V = rx.combine_da_rzf(E.C, E.sigma2)
        assert np.allclose(rx.sinr(V * scale, E.C, E.Cmm), rx.sinr(V, E.C, E.Cmm), rtol=1e-9)

    def test_da_mmse_beats_random_combiners(self, rng):
        E = channel_set(3)
        best = rx.sinr(rx.combine_da_mmse(E.C, E.Czz, E.sigma2), E.C, E.Cmm)
        for _ in range(100):
            V = rng.standard_normal(E.C.shape) + 1j * rng.standard_normal(E.C.shape)
            assert np.all(rx.sinr(V, E.C, E.Cmm) <= best * (1 + 1e-10))

    def test_generalized_eigenvalue_optimum(self):
        E = channel_set(9)
        s = rx.sinr(rx.combine_da_mmse(E.C, E.Czz, E.sigma2), E.C, E.Cmm)
        Q = E.Cmm + E.C @ E.C.conj().T
        for k in range(E.C.shape[1]):
            ck = E.C[:, k:k + 1]
            R = Q - ck @ ck.conj().T
            assert s[k] == pytest.approx(np.real(ck.conj().T @ np.linalg.solve(R, ck))[0, 0], rel=1e-9)


class TestSe:
    def test_values(self):
        assert rx.se_lower_bound(np.zeros((5, 2)))[0] == 0
        assert np.allclose(rx.se_lower_bound(np.ones((5, 2))), 1.0)

    @settings(max_examples=30, deadline=None)
    @given(x=st.lists(st.floats(0, 1e4), min_size=1, max_size=10), bump=st.floats(0, 10))
    def test_monotone(self, x, bump):
        a = np.array(x)
        assert rx.se_lower_bound(a + bump) >= rx.se_lower_bound(a) - 1e-12


class TestCombiners:
    def test_mrc_is_channel(self):
        E = channel_set(1)
        assert np.array_equal(rx.combine_da_mrc(E.C), E.C)

    def test_single_user_rzf_matches_mrc(self):
        E = channel_set(2, K=1)
        assert rx.sinr(rx.combine_da_rzf(E.C, E.sigma2), E.C, E.Cmm) == pytest.approx(
            rx.sinr(E.C, E.C, E.Cmm))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 100_000), K=st.integers(1, 4), name=st.sampled_from(["gaussian", "qpsk"]))
    def test_da_mmse_is_best(self, seed, K, name):
        E = channel_set(seed, K=K, M=5, name=name)
        s = {k: rx.sinr(V, E.C, E.Cmm) for k, V in all_combiners(E).items()}
        for k in s:
            assert np.all(s[k] <= s["da-mmse"] * (1 + 1e-9))

    def test_linear_system_gives_classical_mmse(self, rng):
        G = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
        p = np.array([0.1, 0.5, 1.0])
        c = cc.from_name("gaussian")
        E = bg.effective_channel_set(G, p, np.array([[1.0, 0.0]] * 6), [1.0, 0.0], c, 0.2)
        H = G * np.sqrt(p)
        v_da = rx.combine_da_mmse(E.C, E.Czz, 0.2)
        v_cl = np.linalg.solve(H @ H.conj().T + 0.2 * np.eye(6), H)
        assert np.allclose(rx.sinr(v_da, H, 0.2 * np.eye(6)), rx.sinr(v_cl, H, 0.2 * np.eye(6)))
        assert np.allclose(E.C, H)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            rx.combine("zf", np.ones((2, 1)), 1.0)

    def test_ordering_statistics_on_drops(self):
        rng = np.random.default_rng(11)
        cfg = ScenarioConfig(M=16, K=4)
        c = cc.from_name("gaussian")
        b = ue_coeffs(7.0)
        chi = cc.distorted_moments(c, b)
        se = {k: [] for k in ("da-mrc", "da-rzf", "ew-da-mmse", "da-mmse")}
        for _ in range(60):
            ls = los_drop(cfg, rng, 0)
            G = sample_channel(ls, rng).G
            E = bg.effective_channel_set(G, ls.eta(chi[2]), bs_coeffs(ls), b, c, cfg.sigma2, chi)
            for k, V in all_combiners(E).items():
                se[k].append(np.log2(1 + rx.sinr(V, E.C, E.Cmm)))
        med = {k: np.median(v) for k, v in se.items()}
        assert med["da-mrc"] <= med["da-rzf"] <= med["ew-da-mmse"] <= med["da-mmse"]


class TestDetection:
    def test_noiseless_linear_zero_ber(self, rng):
        c = cc.from_name("qpsk")
        G = rng.standard_normal((32, 4)) + 1j * rng.standard_normal((32, 4))
        y, idx = rx.transmit(G, np.ones(4), np.array([[1.0]] * 32), [1.0], c, 0.0, 10_000, rng)
        V = rx.combine_da_rzf(G, 1e-12)
        assert np.all(rx.detect(y, V, G, c, idx).errors == 0)

    def test_orthogonal_combiner_is_coin_flip(self, rng):
        c = cc.from_name("qpsk")
        G = np.array([[1.0 + 0j], [0.0]])
        y, idx = rx.transmit(G, np.ones(1), np.array([[1.0]] * 2), [1.0], c, 1.0, 20_000, rng)
        V = np.array([[0.0], [1.0 + 0j]])
        ber = rx.detect(y, V, np.array([[1e-3], [1.0]]), c, idx).ber[0]
        assert ber == pytest.approx(0.5, abs=0.02)

    def test_awgn_qpsk(self, rng):
        c = cc.from_name("qpsk")
        n = 400_000
        snr = 10.0
        y, idx = rx.transmit(np.ones((1, 1)), np.ones(1), np.array([[1.0]]), [1.0], c, 10 ** (-snr / 10), n, rng)
        stats = rx.detect(y, np.ones((1, 1)), np.ones((1, 1)), c, idx)
        p = norm.sf(np.sqrt(10 ** (snr / 10)))
        assert abs(stats.ber[0] - p) <= 3 * np.sqrt(p * (1 - p) / stats.bits[0])

    def test_gaussian_rejected(self, rng):
        with pytest.raises(ValueError):
            rx.detect(np.ones((3, 1)), np.ones((1, 1)), np.ones((1, 1)), cc.from_name("gaussian"), np.zeros((3, 1), int))

    def test_stats_add(self):
        a = rx.BerStats(np.array([1, 2]), np.array([10, 10]))
        assert np.array_equal((a + a).ber, a.ber)

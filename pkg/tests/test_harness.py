import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlmimo import harness as h
from nlmimo import neural as nn


def small_spec(experiment, **kw):
    d = {"scenario": {"M": 4, "K": 3}, "setups": 3, "realizations": 5, "symbols": 200, "samples": 500,
         "mc_draws": 500, "seed": 5}
    for key, value in kw.items():
        d[key] = value
    return h.ExperimentSpec.from_dict(d, experiment)


class TestConfig:
    def test_round_trip_and_hash_stable(self):
        s = small_spec("nmse-channel")
        again = h.ExperimentSpec.from_dict(s.to_dict())
        assert again.hash == s.hash
        assert small_spec("nmse-channel", seed=6).hash != s.hash

    def test_unknown_key_rejected(self):
        with pytest.raises(h.ConfigError):
            h.ExperimentSpec.from_dict({"antennas": 4}, "ber")

    def test_bad_values_rejected(self):
        with pytest.raises(h.ConfigError):
            small_spec("ber", setups=0)
        with pytest.raises(h.ConfigError):
            small_spec("nmse-channel", estimators=["oracle"])
        with pytest.raises(h.ConfigError):
            small_spec("train", train={"patience": 9, "max_epochs": 3})
        with pytest.raises(h.ConfigError):
            h.ExperimentSpec.from_dict({}, "fly")

    def test_override_parsing(self):
        d = {"scenario": {"M": 4}}
        h.apply_override(d, "scenario.K=7")
        h.apply_override(d, "constellation=qam16")
        h.apply_override(d, "bs_poly.backoff_db=3.5")
        assert d == {"scenario": {"M": 4, "K": 7}, "constellation": "qam16", "bs_poly": {"backoff_db": 3.5}}
        with pytest.raises(h.ConfigError):
            h.apply_override(d, "scenario.K")
        with pytest.raises(h.ConfigError):
            h.apply_override(d, "constellation.order=4")

    @settings(max_examples=30, deadline=None)
    @given(key=st.text("abcdefgh_", min_size=1, max_size=6), value=st.integers(-1000, 1000))
    def test_override_sets_integer(self, key, value):
        d = {}
        h.apply_override(d, f"outer.{key}={value}")
        assert d["outer"][key] == value


class TestSeeding:
    def test_streams_independent_of_order(self):
        a = h.rng_for(3, "drop", 4).standard_normal(3)
        h.rng_for(3, "drop", 5).standard_normal(10)
        assert np.array_equal(a, h.rng_for(3, "drop", 4).standard_normal(3))
        assert not np.array_equal(a, h.rng_for(3, "channel", 4).standard_normal(3))
        assert not np.array_equal(a, h.rng_for(4, "drop", 4).standard_normal(3))

    def test_worker_env(self, monkeypatch):
        monkeypatch.delenv(h.WORKERS_ENV, raising=False)
        assert h.worker_count() == 1
        monkeypatch.setenv(h.WORKERS_ENV, "3")
        assert h.worker_count() == 3
        monkeypatch.setenv(h.WORKERS_ENV, "0")
        assert h.worker_count() == 1
        monkeypatch.setenv(h.WORKERS_ENV, "many")
        with pytest.raises(h.ConfigError):
            h.worker_count()

    def test_results_independent_of_workers(self, monkeypatch):
        spec = small_spec("nmse-channel", estimators=["dua-lmmse", "da-lmmse"])
        monkeypatch.setenv(h.WORKERS_ENV, "1")
        serial, _ = h.run_nmse_experiment(spec)
        monkeypatch.setenv(h.WORKERS_ENV, "2")
        parallel, _ = h.run_nmse_experiment(spec)
        assert serial == parallel


class TestDataset:
    def test_shapes_and_log_variance_above_floor(self):
        system = h.System(small_spec("dataset-gen"))
        data = h.generate_samples(system, 400, np.random.default_rng(0))
        assert data["X"].shape == (400, 9)
        assert data["C_sorted"].shape == (400, 3)
        assert np.all(data["log_ratio"] >= -1e-12)
        assert data["log_ratio"].mean() > 0

    def test_dataset_bytes_reproducible_across_processes(self, tmp_path):
        code = ("import sys; from nlmimo import harness as h; "
                "s = h.ExperimentSpec.from_dict({'scenario': {'M': 2, 'K': 2}, 'samples': 300, 'seed': 9}, 'dataset-gen'); "
                "h.generate_dataset(s, sys.argv[1])")
        blobs = []
        for name in ("a", "b"):
            d = tmp_path / name
            d.mkdir()
            subprocess.run([sys.executable, "-c", code, str(d)], check=True)
            blobs.append((d / "dataset.npz").read_bytes())
        assert blobs[0] == blobs[1]
        data = h.load_dataset(tmp_path / "a" / "dataset.npz")
        assert str(data["config_hash"]) == h.ExperimentSpec.from_dict(
            {"scenario": {"M": 2, "K": 2}, "samples": 300, "seed": 9}, "dataset-gen").hash


class TestCampaigns:
    def test_nmse_channel_ordering_rows(self):
        spec = small_spec("nmse-channel", estimators=["dua-lmmse", "da-lmmse"], setups=4, realizations=20)
        rows, summary = h.run_nmse_experiment(spec)
        assert len(rows) == 4 * 3 * 2
        assert summary["da-lmmse"]["median_nmse_db"] < 0

    def test_missing_model(self):
        spec = small_spec("nmse-channel", estimators=["dl"], channel_model="/nonexistent/model.json")
        with pytest.raises(h.MissingModelError):
            h.run_nmse_experiment(spec)
        with pytest.raises(h.MissingModelError):
            h.run_nmse_experiment(small_spec("nmse-channel", estimators=["dl"]))

    def test_se_requires_gaussian(self):
        with pytest.raises(h.ConfigError):
            h.run_se_experiment(small_spec("se-cdf"))

    def test_se_no_distortion_collapses(self):
        linear = {"coeffs": [[1.0, 0.0]], "backoff_db": 7.0}
        spec = small_spec("se-cdf", constellation="gaussian", bs_poly=linear, ue_poly=linear,
                          receivers=["da-mmse", "ew-da-mmse"], realizations=3)
        rows, summary = h.run_se_experiment(spec)
        se = {r["receiver"]: [] for r in rows}
        for r in rows:
            se[r["receiver"]].append(r["se"])
        # with ideal hardware the distortion vanishes and element-wise weighting is exact
        assert np.allclose(se["da-mmse"], se["ew-da-mmse"], rtol=1e-9)
        assert summary["sinr_violations"] == 0

    def test_ber_rows(self):
        spec = small_spec("ber", receivers=["dua-rzf", "da-rzf-perfect"], setups=2, realizations=2)
        rows, summary = h.run_ber_experiment(spec)
        assert len(rows) == 2 * 3 * 2
        assert all(r["bits"] == 2 * 200 * 2 for r in rows)
        assert len(summary["dua-rzf"]) == 3

    def test_ber_rejects_gaussian(self):
        with pytest.raises(h.ConfigError):
            h.run_ber_experiment(small_spec("ber", constellation="gaussian"))

    def test_train_eval_export(self, tmp_path):
        spec = small_spec("train", samples=2000, train={"max_epochs": 2, "patience": 1, "batch_size": 200})
        summary = h.run_train(spec, tmp_path)
        assert set(summary) == {"channel", "variance"}
        m = nn.load_model(tmp_path / "channel_model.json")
        assert m.config_hash == spec.hash
        ev = small_spec("eval", samples=500, channel_model=str(tmp_path / "channel_model.json"),
                        variance_model=str(tmp_path / "variance_model.json"))
        res = h.run_eval(ev)
        assert np.isfinite(res["channel_nmse_db"]) and np.isfinite(res["variance_nmse_db"])
        paths = h.run_export(ev, tmp_path)
        with np.load(paths["channel"]) as f:
            assert np.array_equal(f["W0"], m.layers[0].W)


class TestOutputs:
    def test_csv_hash_guard(self, tmp_path):
        path = tmp_path / "t.csv"
        h.CsvSink(path, "aaaa", ["x"]).write([{"x": 0.1}])
        h.CsvSink(path, "aaaa", ["x"], append=True).write([{"x": np.float64(0.2)}])
        lines = path.read_text().splitlines()
        assert lines == ["config_hash,x", "aaaa,0.1", "aaaa,0.2"]
        with pytest.raises(h.HashMismatchError):
            h.CsvSink(path, "bbbb", ["x"], append=True)
        with pytest.raises(h.HashMismatchError):
            h.CsvSink(path, "aaaa", ["y"], append=True)

    def test_csv_floats_round_trip(self, tmp_path):
        v = 1 / 3
        path = tmp_path / "f.csv"
        h.CsvSink(path, "h", ["v"]).write([{"v": v}])
        assert float(path.read_text().splitlines()[1].split(",")[1]) == v

    def test_plot_script_is_valid_python(self, tmp_path):
        for kind in ("cdf", "lines"):
            p = h.write_plot_script(tmp_path, f"{kind}.csv", "estimator", "nmse_db", "NMSE (dB)", kind)
            compile(p.read_text(), str(p), "exec")
            assert json.dumps(p.read_text())

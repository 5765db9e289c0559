import csv
import json

import numpy as np
import pytest

from daelab.autodiff.rng import Rng
from daelab.harness import (CSV_FIELDS, ExperimentConfig, RunRecord, desk_preset, grid_configs,
                            latent_report, parse_axis, robustness_report, run_experiment,
                            scatter_export, sweep, write_grid)
from daelab.io import Dataset, read_tensor
from daelab.model import ArchConfig
from daelab.synthetic import make_images


def _tiny(tmp_path, **kw):
    base = {"run_id": "tiny", "out_dir": str(tmp_path), "arch.filter_base": 4, "arch.latent_units": 4,
            "train.epochs": 1, "train.batch_size": 32, "eval.n_samples": 48, "eval.reference_size": 48,
            "eval.features": "projection", "eval.feature_dim": 16}
    base.update(kw)
    return desk_preset(**base)


@pytest.fixture(scope="module")
def data():
    imgs, _ = make_images(96, Rng(0).spawn("t"))
    x = imgs.astype(np.float32) / 255
    return Dataset(x[:64]), Dataset(x[64:], "test")


class TestConfig:
    def test_json_round_trip(self):
        cfg = desk_preset()
        assert ExperimentConfig.from_json(cfg.to_json()) == cfg

    def test_canonical_ordering(self):
        keys = list(json.loads(desk_preset().to_json()))
        assert keys == sorted(keys)

    def test_seed_and_beta_propagate(self):
        cfg = desk_preset(seed=7, **{"arch.beta": 0.5})
        assert cfg.train.seed == 7 and cfg.train.beta == 0.5

    def test_unknown_field_rejected(self):
        d = desk_preset().to_dict()
        d["arch"]["colour"] = 1
        with pytest.raises(ValueError, match="unknown"):
            ExperimentConfig.from_dict(d)

    def test_external_features_rejected(self):
        with pytest.raises(ValueError, match="external"):
            desk_preset(**{"eval.features": "external"})

    def test_full_scale_grid(self, tmp_path):
        cfgs = grid_configs()
        assert all(c.train.epochs == 100 and c.eval.n_samples == 10_000 for c in cfgs.values())
        assert cfgs["grid_celeba_dae_f64"].arch.latent_units == 64
        assert cfgs["grid_cifar10_dae_f128_d3321"].arch.depth == [3, 3, 2, 1]
        paths = write_grid(tmp_path)
        assert len(paths) == len(cfgs)
        assert ExperimentConfig.load(paths[0]) == cfgs[paths[0].stem]


class TestRunExperiment:
    def test_no_samplers_gives_reconstruction_only(self, tmp_path, data):
        rec = run_experiment(_tiny(tmp_path, **{"eval.samplers": []}), *data)
        assert rec.status == "ok" and rec.fid == {}
        assert rec.train_r_fid > 0 and rec.test_r_fid > 0
        rows = list(csv.DictReader(open(tmp_path / "tiny" / "results.csv")))
        assert [r["sampler"] for r in rows] == ["none"]

    def test_full_run_artifacts_and_determinism(self, tmp_path, data):
        a = run_experiment(_tiny(tmp_path / "a"), *data)
        b = run_experiment(_tiny(tmp_path / "b", **{"out_dir": str(tmp_path / "b")}), *data)
        assert a.status == "ok"
        assert set(a.fid) == {"std_normal", "mvg", "gmm"}
        pa, pb = a.payload(), b.payload()
        pa["config"].pop("out_dir"), pb["config"].pop("out_dir")
        assert pa == pb
        out = tmp_path / "a" / "tiny"
        for f in ("config.json", "record.json", "results.csv", "checkpoint.ckpt", "loss.csv",
                  "latents.tnsr", "density_gmm.tnsr"):
            assert (out / f).is_file()
        assert read_tensor(out / "latents.tnsr").shape == (64, 4)

    def test_csv_header(self, tmp_path, data):
        run_experiment(_tiny(tmp_path, **{"eval.samplers": ["mvg"]}), *data)
        with open(tmp_path / "tiny" / "results.csv") as fh:
            assert tuple(next(csv.reader(fh))) == CSV_FIELDS

    def test_record_validates_against_snapshot(self, tmp_path, data):
        run_experiment(_tiny(tmp_path, **{"eval.samplers": ["mvg"]}), *data)
        d = json.loads((tmp_path / "tiny" / "record.json").read_text())
        rec = RunRecord.from_dict(d)
        assert ExperimentConfig.from_dict(rec.config).arch.latent_units == 4

    def test_failure_is_recorded(self, tmp_path):
        rec = run_experiment(_tiny(tmp_path, **{"data.data_dir": str(tmp_path / "nowhere")}))
        assert rec.status == "failed" and "DatasetError" in rec.error
        assert json.loads((tmp_path / "tiny" / "record.json").read_text())["status"] == "failed"


class TestSweep:
    def test_parse_axis(self):
        assert parse_axis("latent_units=16,32,64") == ("latent_units", [16, 32, 64])
        assert parse_axis("depth=1,3-3-2-1") == ("depth", [1, [3, 3, 2, 1]])
        for bad in ("latent_units", "colour=1", "depth="):
            with pytest.raises(ValueError):
                parse_axis(bad)

    def test_counts_rows(self, tmp_path, data):
        cfg = _tiny(tmp_path, **{"eval.samplers": ["std_normal", "mvg"]})
        recs = sweep(cfg, "latent_units", [2, 3, 4], *data)
        assert len(recs) == 3
        rows = list(csv.DictReader(open(tmp_path / "tiny_sweep.csv")))
        assert len(rows) == 6
        assert [r["latent_units"] for r in rows] == ["2", "2", "3", "3", "4", "4"]

    def test_length_one_matches_single_run(self, tmp_path, data):
        cfg = _tiny(tmp_path, **{"eval.samplers": ["mvg"]})
        (rec,) = sweep(cfg, "latent_units", [4], *data, write=False)
        single = run_experiment(cfg.with_values(run_id=rec.run_id), *data, write=False)
        assert rec.payload() == single.payload()

    def test_invalid_value_recorded_and_continues(self, tmp_path, data):
        cfg = _tiny(tmp_path, **{"eval.samplers": []})
        recs = sweep(cfg, "latent_units", [0, 2], *data, write=False)
        assert [r.status for r in recs] == ["failed", "ok"]


class TestLatentReport:
    def test_standard_normal_moments(self):
        z = np.random.default_rng(0).normal(size=(100_000, 3))
        r = latent_report(z)
        assert max(abs(s) for s in r.skew) < 0.05
        assert max(abs(k) for k in r.excess_kurtosis) < 0.1

    def test_affine_gaussian_gap_small(self):
        g = np.random.default_rng(1)
        a = np.array([[2.0, 0.5, 0.0], [0.0, 1.0, 0.3], [0.0, 0.0, 0.5]])
        r = latent_report(g.normal(size=(20_000, 3)) @ a + 3.0)
        assert abs(r.gap) < 0.01

    def test_bimodal_gap_large(self):
        g = np.random.default_rng(2)
        z = np.concatenate([g.normal(size=(2000, 2)) - 4, g.normal(size=(2000, 2)) + 4])
        assert latent_report(z).gap > 0.1

    def test_degenerate_flagged_not_fatal(self):
        z = np.c_[np.random.default_rng(3).normal(size=(500, 2)), np.full(500, 2.0)]
        r = latent_report(z)
        assert r.degenerate == [2]
        assert np.isfinite(r.gap)

    def test_needs_100_rows(self):
        with pytest.raises(ValueError):
            latent_report(np.zeros((99, 2)))


class TestScatter:
    def test_two_dims_single_pair(self):
        rows = scatter_export(np.random.default_rng(0).normal(size=(10, 2)), 5, Rng(0))
        assert {(i, j) for i, j, _, _ in rows} == {(0, 1)}
        assert len(rows) == 10

    def test_row_count_and_determinism(self, tmp_path):
        z = np.random.default_rng(0).normal(size=(30, 6))
        a = scatter_export(z, 4, Rng(5).spawn("scatter"), tmp_path / "s.csv")
        b = scatter_export(z, 4, Rng(5).spawn("scatter"))
        assert len(a) == 4 * 30 and a == b
        assert len(open(tmp_path / "s.csv").read().splitlines()) == 4 * 30 + 1
        assert all(i < j for i, j, _, _ in a)

    def test_needs_two_dims(self):
        with pytest.raises(ValueError):
            scatter_export(np.zeros((5, 1)), 1, Rng(0))


class TestRobustness:
    def test_cifar_full_set(self):
        r = robustness_report(ArchConfig("cifar10", filter_base=32))
        assert (r.n, r.d, r.window) == (50_000, 3072, (1e7, 1e8))
        assert 1.1e6 < r.params["encoder"] < 1.3e6
        assert r.position["encoder"] == "below"

    def test_celeba_dimension(self):
        r = robustness_report(ArchConfig("celeba", filter_base=4))
        assert r.d == 12_288 and r.window == (1e7, 1e9)

    def test_subset_size_and_within(self):
        r = robustness_report(ArchConfig("cifar10", filter_base=256), n=2048)
        assert r.n == 2048
        assert r.position["total"] == "within"

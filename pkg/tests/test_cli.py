import json
from pathlib import Path

import numpy as np
import pytest

from floodsynth.cli import main
from floodsynth.grid import Raster, read_ascii_grid, write_ascii_grid
from floodsynth.synth import read_patches


def write_demo_inputs(root, n=32):
    """Small valley DEM and a sparse probability raster."""
    r = np.arange(n)
    R, C = np.meshgrid(r, r, indexing="ij")
    zb = (n - 1 - R) * 0.8 + np.abs(C - (n - 1) / 2) * 0.5
    dem = Raster(values=zb.astype(float), cellsize=5.0)
    write_ascii_grid(dem, root / "dem.asc")

    rng = np.random.default_rng(0)
    p = rng.uniform(0, 0.02, (n, n))
    p[2:6, 12:20] = 0.5  # concentrate initiation upslope
    write_ascii_grid(Raster(values=p, cellsize=5.0), root / "prob.asc")
    return dem


def write_config(root, **overrides):
    cfg = {
        "dem": str(root / "dem.asc"),
        "probability": str(root / "prob.asc"),
        "seeds": [1, 2],
        "gammas": [0.0, 0.2],
        "duration": 40.0,
        "max_steps": 60,
        "min_slope_deg": 0.0,
        "max_points": 3,
        "supply": {"peak_discharge": 4.0, "rise_time": 10.0, "duration": 30.0,
                   "concentration": 0.2},
        "corruption": {"truth_threshold": 0.05, "erosion_radius": 1,
                       "erosion_iterations": 1, "fp_rate": 0.01,
                       "cutout_count": 1, "cutout_size_range": [4, 8], "seed": 7},
        "patch": 16,
        "stride": 16,
        "out": str(root / "out"),
    }
    cfg.update(overrides)
    path = root / "config.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def demo(tmp_path):
    write_demo_inputs(tmp_path)
    return tmp_path


class TestSimulate:
    def test_produces_outputs(self, demo):
        cfg = write_config(demo)
        rc = main(["simulate", "--config", str(cfg), "--out", str(demo / "sim")])
        assert rc == 0
        for name in ("maxwl.asc", "deform.asc", "ledger.json", "scenario.json"):
            assert (demo / "sim" / name).exists()
        ledger = json.loads((demo / "sim" / "ledger.json").read_text())
        assert "config_hash" in ledger
        assert ledger["water_closure"] < 1e-6

    def test_zero_duration_zero_outputs(self, demo):
        cfg = write_config(demo, duration=0.0)
        rc = main(["simulate", "--config", str(cfg), "--out", str(demo / "z")])
        assert rc == 0
        maxwl = read_ascii_grid(demo / "z" / "maxwl.asc")
        deform = read_ascii_grid(demo / "z" / "deform.asc")
        assert np.all(maxwl.values == 0.0)
        assert np.all(deform.values == 0.0)

    def test_repeat_is_byte_identical(self, demo):
        cfg = write_config(demo)
        main(["simulate", "--config", str(cfg), "--out", str(demo / "a")])
        main(["simulate", "--config", str(cfg), "--out", str(demo / "b")])
        for name in ("maxwl.asc", "deform.asc"):
            assert (demo / "a" / name).read_bytes() == (demo / "b" / name).read_bytes()

    def test_explicit_scenario_file(self, demo):
        cfg = write_config(demo)
        main(["simulate", "--config", str(cfg), "--out", str(demo / "first")])
        # replay the sampled scenario through the explicit-supplies path
        cfg2 = write_config(demo, scenario=str(demo / "first" / "scenario.json"))
        rc = main(["simulate", "--config", str(cfg2), "--out", str(demo / "replay")])
        assert rc == 0
        assert (demo / "replay" / "maxwl.asc").read_bytes() == \
            (demo / "first" / "maxwl.asc").read_bytes()


class TestEnsemble:
    def test_case_tree_and_averages(self, demo):
        cfg = write_config(demo)
        rc = main(["ensemble", "--config", str(cfg)])
        assert rc == 0
        out = demo / "out"
        cases = sorted(p.name for p in (out / "cases").iterdir())
        assert cases == ["case_1_0", "case_1_0.2", "case_2_0", "case_2_0.2"]
        for g in ("0", "0.2"):
            assert (out / f"average_maxwl_gamma_{g}.asc").exists()
            assert (out / f"average_deform_gamma_{g}.asc").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["failures"] == {}
        assert "config_hash" in summary

    def test_worker_count_invariance(self, demo):
        cfg1 = write_config(demo, out=str(demo / "w1"))
        rc = main(["ensemble", "--config", str(cfg1), "--workers", "1"])
        assert rc == 0
        cfg2 = write_config(demo, out=str(demo / "w2"))
        rc = main(["ensemble", "--config", str(cfg2), "--workers", "2"])
        assert rc == 0
        for case in ("case_1_0", "case_2_0.2"):
            a = (demo / "w1" / "cases" / case / "maxwl.asc").read_bytes()
            b = (demo / "w2" / "cases" / case / "maxwl.asc").read_bytes()
            assert a == b


class TestSynthDataset:
    def test_split_and_manifest(self, demo):
        cfg = write_config(demo, train_cases=3)
        assert main(["ensemble", "--config", str(cfg)]) == 0
        assert main(["synth-dataset", "--config", str(cfg)]) == 0
        ds = demo / "out" / "dataset"
        train = json.loads((ds / "manifest_train.json").read_text())
        test = json.loads((ds / "manifest_test.json").read_text())
        assert len(train["cases"]) == 3 and len(test["cases"]) == 1
        got = read_patches(ds / train["files"]["max_water_level"])
        assert len(got) == train["patch_counts"]["max_water_level"]

    def test_full_train_split_warns(self, demo, capsys):
        cfg = write_config(demo, train_cases=99)
        assert main(["ensemble", "--config", str(cfg)]) == 0
        assert main(["synth-dataset", "--config", str(cfg)]) == 0
        assert "empty test split" in capsys.readouterr().err


class TestSmallCommands:
    def test_binarize_zero_corruption_is_threshold(self, demo):
        vals = np.zeros((20, 20))
        vals[4:9, 4:9] = 1.0
        write_ascii_grid(Raster(values=vals, cellsize=5.0), demo / "target.asc")
        cfg = write_config(demo, corruption={"truth_threshold": 0.5,
                                             "erosion_radius": 0,
                                             "erosion_iterations": 0,
                                             "fp_rate": 0.0, "cutout_count": 0})
        rc = main(["binarize", "--config", str(cfg), "--target", str(demo / "target.asc"),
                   "--out", str(demo / "bin.asc")])
        assert rc == 0
        out = read_ascii_grid(demo / "bin.asc")
        assert np.array_equal(out.values, (vals >= 0.5).astype(float))

    def test_patchify_file(self, demo):
        n = 32
        write_ascii_grid(Raster(values=np.zeros((n, n)), cellsize=5.0), demo / "chg.asc")
        write_ascii_grid(Raster(values=np.full((n, n), 0.3), cellsize=5.0), demo / "slope.asc")
        write_ascii_grid(Raster(values=np.ones((n, n)), cellsize=5.0), demo / "tgt.asc")
        cfg = write_config(demo, patch=16, stride=16)
        rc = main(["patchify", "--config", str(cfg), "--change", str(demo / "chg.asc"),
                   "--slope", str(demo / "slope.asc"), "--target", str(demo / "tgt.asc"),
                   "--out", str(demo / "p.tsp")])
        assert rc == 0
        assert len(read_patches(demo / "p.tsp")) == 4

    def test_metrics_json(self, demo):
        rng = np.random.default_rng(1)
        pred = Raster(values=rng.uniform(0, 2, (16, 16)), cellsize=5.0)
        ref = Raster(values=rng.uniform(0, 2, (16, 16)), cellsize=5.0)
        write_ascii_grid(pred, demo / "pred.asc")
        write_ascii_grid(ref, demo / "ref.asc")
        rc = main(["metrics", "--pred", str(demo / "pred.asc"), "--ref", str(demo / "ref.asc"),
                   "--json", str(demo / "m.json")])
        assert rc == 0
        rep = json.loads((demo / "m.json").read_text())
        assert rep["rmse"] > 0 and rep["n_valid"] == 256

    def test_average(self, demo):
        a = Raster(values=np.zeros((4, 4)), cellsize=5.0)
        b = Raster(values=np.full((4, 4), 2.0), cellsize=5.0)
        write_ascii_grid(a, demo / "a.asc")
        write_ascii_grid(b, demo / "b.asc")
        rc = main(["average", str(demo / "a.asc"), str(demo / "b.asc"),
                   "--out", str(demo / "avg.asc")])
        assert rc == 0
        assert np.all(read_ascii_grid(demo / "avg.asc").values == 1.0)

    def test_render_deterministic(self, demo):
        vals = np.linspace(-1, 1, 64).reshape(8, 8)
        write_ascii_grid(Raster(values=vals, cellsize=5.0), demo / "g.asc")
        rc = main(["render", "--grid", str(demo / "g.asc"), "--colormap", "diverging",
                   "--out", str(demo / "g.ppm")])
        assert rc == 0
        first = (demo / "g.ppm").read_bytes()
        main(["render", "--grid", str(demo / "g.asc"), "--colormap", "diverging",
              "--out", str(demo / "g.ppm")])
        assert (demo / "g.ppm").read_bytes() == first
        side = json.loads((demo / "g.json").read_text())
        assert side["min"] == vals.min() and side["max"] == vals.max()

    def test_detect_change(self, demo):
        n = 8
        for phase, red_hi in (("pre", 0.1), ("post", 0.5)):
            d = demo / phase
            d.mkdir()
            red = np.full((n, n), red_hi)
            green = np.full((n, n), 0.4)
            blue = np.full((n, n), 0.1)
            nir = np.full((n, n), 0.9 if phase == "pre" else 0.5)
            for name, vals in (("red", red), ("green", green), ("blue", blue), ("nir", nir)):
                write_ascii_grid(Raster(values=vals, cellsize=5.0), d / f"{name}.asc")
        rc = main(["detect-change", "--pre", str(demo / "pre"), "--post", str(demo / "post"),
                   "--index", "ndvi", "--out", str(demo / "chgmap.asc")])
        assert rc == 0
        out = read_ascii_grid(demo / "chgmap.asc")
        # pre ndvi = 0.8, post ndvi = 0 -> vegetation lost everywhere
        assert np.all(out.values == 1.0)
        assert (demo / "chgmap_valid.asc").exists()


class TestShippedDemo:
    def test_demo_config_simulates(self, tmp_path, monkeypatch):
        repo = Path(__file__).resolve().parents[1]
        monkeypatch.chdir(repo)
        cfg = json.loads((repo / "demo" / "config.json").read_text())
        cfg["max_steps"] = 40
        small = tmp_path / "demo.json"
        small.write_text(json.dumps(cfg))
        rc = main(["simulate", "--config", str(small), "--out", str(tmp_path / "case")])
        assert rc == 0
        for name in ("maxwl.asc", "deform.asc", "ledger.json"):
            assert (tmp_path / "case" / name).exists()


class TestPaperScaleShapes:
    def test_sixty_seed_single_gamma_case_tree(self, demo):
        cfg = write_config(demo, seeds=list(range(1, 61)), gammas=[0.2],
                           duration=0.0, max_steps=0, train_cases=40)
        rc = main(["ensemble", "--config", str(cfg)])
        assert rc == 0
        cases = list((demo / "out" / "cases").iterdir())
        assert len(cases) == 60
        assert main(["synth-dataset", "--config", str(cfg)]) == 0
        ds = demo / "out" / "dataset"
        train = json.loads((ds / "manifest_train.json").read_text())
        test = json.loads((ds / "manifest_test.json").read_text())
        assert len(train["cases"]) == 40 and len(test["cases"]) == 20

    def test_hundred_case_seventy_thirty_split(self, demo):
        cfg = write_config(demo, seeds=list(range(1, 11)), gammas=[0.0, 0.01, 0.02, 0.05,
                                                                   0.1, 0.2, 0.3, 0.4,
                                                                   0.5, 0.6],
                           duration=0.0, max_steps=0, train_cases=70)
        assert main(["ensemble", "--config", str(cfg)]) == 0
        assert main(["synth-dataset", "--config", str(cfg)]) == 0
        ds = demo / "out" / "dataset"
        train = json.loads((ds / "manifest_train.json").read_text())
        test = json.loads((ds / "manifest_test.json").read_text())
        assert len(train["cases"]) == 70 and len(test["cases"]) == 30


class TestExitCodes:
    def test_unknown_config_key_is_2(self, demo, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"dem": "x.asc", "bogus": 1}))
        assert main(["simulate", "--config", str(bad)]) == 2

    def test_missing_dem_is_2(self, demo):
        cfg = write_config(demo, dem=str(demo / "missing.asc"))
        assert main(["ensemble", "--config", str(cfg)]) == 2

    def test_runtime_failure_is_3(self, demo):
        assert main(["metrics", "--pred", str(demo / "nope.asc"),
                     "--ref", str(demo / "nope.asc")]) == 3

import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from demboost import pipeline
from demboost.cli import main
from demboost.dataset import FEATURE_NAMES
from demboost.gbtree import BoostModel, GbtParams, load_model, save_model
from demboost.raster import Grid, GridHeader, read_ascii_grid, write_ascii_grid


def write_config(path, doc):
    path.write_text(yaml.safe_dump(doc))
    return path


def base_doc(out, **extra):
    doc = {
        "seed": 3,
        "out": str(out),
        "scene": {"size": 48},
        "params": {"n_estimators": 40, "max_depth": 4},
    }
    doc.update(extra)
    return doc


def run_all(cfg_path, *commands):
    for cmd in commands:
        code = main([cmd, "--config", str(cfg_path)])
        assert code == 0, cmd


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = write_config(root / "cfg.yaml", base_doc(root / "out"))
    run_all(cfg, "synth", "features", "train", "correct", "evaluate")
    return root, cfg


def test_outputs_written(finished_run):
    root, _ = finished_run
    out = root / "out"
    for name in ("model.json", "learning_curve.csv", "train_report.json", "corrected.asc",
                 "correction_mask.asc", "error_original.asc", "error_corrected.asc", "accuracy_report.json"):
        assert (out / name).is_file(), name
    assert sorted(p.stem for p in (out / "features").glob("*.asc")) == sorted(FEATURE_NAMES)
    for cmd in ("synth", "features", "train", "correct", "evaluate"):
        assert (out / f"manifest_{cmd}.json").is_file()


def test_correction_improves(finished_run):
    root, _ = finished_run
    rep = json.loads((root / "out" / "accuracy_report.json").read_text())
    rec = rep["records"][0]
    assert rec["site"] == "all"
    assert rec["corrected_rmse"] < rec["original_rmse"]
    assert rec["improvement_pct"] > 30


def test_train_report(finished_run):
    root, _ = finished_run
    rep = json.loads((root / "out" / "train_report.json").read_text())
    assert rep["rows"]["total"] == 48 * 48
    assert sum(rep["rows"][k] for k in ("train", "val", "test")) == 48 * 48
    assert rep["test_rmse"] < rep["original_rmse"]
    model = load_model(root / "out" / "model.json")
    assert sum(rep["importance_weight"].values()) == sum(len(t.split_nodes()) for t in model.active_trees)


def test_manifest_contents(finished_run):
    root, _ = finished_run
    m = json.loads((root / "out" / "manifest_train.json").read_text())
    assert m["command"] == "train"
    assert m["seeds"]["split"] == 3 and m["seeds"]["booster"] == 3
    assert "features/elevation.asc" in m["input_digests"]
    assert "model.json" in m["outputs"]
    assert len(m["config_hash"]) == 64
    assert "numpy" in m["versions"]


def test_rerun_is_byte_identical(finished_run, tmp_path):
    root, _ = finished_run
    cfg = write_config(tmp_path / "cfg.yaml", base_doc(tmp_path / "out"))
    run_all(cfg, "synth", "features", "train", "correct", "evaluate")
    a, b = root / "out", tmp_path / "out"
    for p in sorted(a.rglob("*")):
        if p.is_file() and not p.name.startswith("manifest_"):
            assert (b / p.relative_to(a)).read_bytes() == p.read_bytes(), p.name
    # manifests record absolute input paths only through out-relative labels
    ma = json.loads((a / "manifest_train.json").read_text())
    mb = json.loads((b / "manifest_train.json").read_text())
    assert ma["input_digests"] == mb["input_digests"] and ma["outputs"] == mb["outputs"]


def test_missing_config_exit_2(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.yaml")]) == 2
    assert "config file not found" in capsys.readouterr().err


def test_missing_input_exit_2(tmp_path):
    cfg = write_config(tmp_path / "cfg.yaml", base_doc(tmp_path / "out"))
    assert main(["features", "--config", str(cfg)]) == 2


def test_empty_dataset_exit_3(tmp_path):
    cfg = write_config(tmp_path / "cfg.yaml", base_doc(tmp_path / "out"))
    run_all(cfg, "synth", "features")
    truth = tmp_path / "out" / "scene" / "truth.asc"
    g = read_ascii_grid(truth)
    write_ascii_grid(g.with_data(np.full(g.shape, g.header.nodata_value)), truth)
    assert main(["train", "--config", str(cfg)]) == 3


def test_feature_mismatch_exit_4(finished_run, tmp_path):
    root, cfg = finished_run
    bogus = BoostModel(0.0, [], ("a", "b"), GbtParams(), 0)
    save_model(bogus, tmp_path / "m.json")
    code = main(["correct", "--config", str(cfg), "--out", str(tmp_path / "o"), "--model", str(tmp_path / "m.json")])
    assert code == 4


def test_misaligned_exit_5(finished_run, tmp_path):
    root, _ = finished_run
    scene = root / "out" / "scene"
    ref = read_ascii_grid(scene / "truth.asc")
    h = ref.header
    moved = Grid(GridHeader(h.ncols, h.nrows, h.xllcorner + 30.0, h.yllcorner, h.cellsize), ref.data)
    write_ascii_grid(moved, tmp_path / "ref.asc")
    doc = base_doc(root / "out")
    doc["inputs"] = {k: str(scene / f"{v}.asc") for k, v in pipeline.SCENE_LAYERS.items()}
    doc["inputs"]["ref_dem"] = str(tmp_path / "ref.asc")
    cfg = write_config(tmp_path / "cfg.yaml", doc)
    assert main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 5


def test_unknown_config_key_exit_1(tmp_path):
    cfg = write_config(tmp_path / "cfg.yaml", base_doc(tmp_path / "out", colour="blue"))
    assert main(["synth", "--config", str(cfg)]) == 1


def test_console_script_entry(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "demboost.cli", "synth", "--config", str(tmp_path / "missing.yaml")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 2


def test_pass_through_mask(finished_run):
    root, cfg_path = finished_run
    cfg = pipeline.load_config(cfg_path)
    model = load_model(root / "out" / "model.json")
    dem = pipeline.load_dem(cfg)
    feats = pipeline.build_features(cfg, dem)
    data = feats["forest_pct"].data.copy()
    data[5, 7] = np.nan
    feats["forest_pct"] = feats["forest_pct"].with_data(data)
    corrected, mask = pipeline.correct_dem(model, feats, dem)
    assert mask.data[5, 7] == 1.0
    assert corrected.data[5, 7] == dem.data[5, 7]
    # the border cells lose their tst window, everything valid is corrected
    ok = mask.data == 0.0
    assert ok.sum() > 0.5 * ok.size
    assert np.all(corrected.data[ok] != dem.data[ok])


def test_vertical_offset_shifts_error(finished_run, tmp_path):
    root, _ = finished_run
    scene = root / "out" / "scene"
    inputs = {k: str(scene / f"{v}.asc") for k, v in pipeline.SCENE_LAYERS.items()}
    doc = base_doc(tmp_path / "out", inputs=inputs, offsets={"global_dem": -2.0})
    cfg = pipeline.build_config(doc)
    report = pipeline.cmd_evaluate(cfg, corrected_path=tmp_path / "none.asc")
    plain = pipeline.cmd_evaluate(pipeline.build_config(base_doc(tmp_path / "o2", inputs=inputs)), tmp_path / "none.asc")
    assert report.records[0].original_bias == pytest.approx(plain.records[0].original_bias - 2.0)


def test_covariates_resampled(finished_run, tmp_path):
    root, _ = finished_run
    scene = root / "out" / "scene"
    urban = read_ascii_grid(scene / "urban.asc")
    h = urban.header
    # a coarser covariate grid covering the same extent
    coarse = Grid(GridHeader(h.ncols // 2, h.nrows // 2, h.xllcorner, h.yllcorner, 2 * h.cellsize), urban.data[::2, ::2])
    write_ascii_grid(coarse, tmp_path / "urban.asc")
    inputs = {k: str(scene / f"{v}.asc") for k, v in pipeline.SCENE_LAYERS.items()}
    inputs["urban"] = str(tmp_path / "urban.asc")
    cfg = pipeline.build_config(base_doc(tmp_path / "out", inputs=inputs))
    feats = pipeline.build_features(cfg, pipeline.load_dem(cfg))
    got = feats["urban"]
    assert got.header == h
    assert set(np.unique(got.data[got.valid_mask()])) <= {0.0, 1.0}
    np.testing.assert_array_equal(got.data[::2, ::2], coarse.data)


def test_sites(finished_run, tmp_path):
    root, _ = finished_run
    scene = root / "out" / "scene"
    inputs = {k: str(scene / f"{v}.asc") for k, v in pipeline.SCENE_LAYERS.items()}
    sites = [{"name": "west", "ncols": 24}, {"name": "east", "col0": 24}]
    doc = base_doc(tmp_path / "out", inputs=inputs, evaluate={"corrected": str(root / "out" / "corrected.asc"), "sites": sites})
    report = pipeline.cmd_evaluate(pipeline.build_config(doc))
    assert [r.site for r in report.records] == ["west", "east"]
    assert sum(r.n_points for r in report.records) == 48 * 48


def test_tune_then_params_file_reproduces_model(tmp_path):
    doc = base_doc(
        tmp_path / "out",
        tune={"budget": 4, "n_init": 3, "space": {"n_estimators": [5, 30], "max_depth": [1, 4]}},
    )
    cfg = write_config(tmp_path / "cfg.yaml", doc)
    run_all(cfg, "synth", "features", "tune")
    out = tmp_path / "out"
    assert (out / "tune_history.csv").is_file() and (out / "manifest_tune.json").is_file()
    assert len((out / "tune_history.csv").read_text().splitlines()) == 5
    tuned = (out / "model.json").read_bytes()

    doc2 = base_doc(out)
    doc2["params_file"] = str(out / "best_params.yaml")
    doc2.pop("params")
    cfg2 = write_config(tmp_path / "cfg2.yaml", doc2)
    run_all(cfg2, "train")
    assert (out / "model.json").read_bytes() == tuned


def test_config_validation(tmp_path):
    with pytest.raises(Exception, match="unknown"):
        pipeline.build_config({"split": {"shuffle": True}})
    with pytest.raises(Exception, match="offsets"):
        pipeline.build_config({"offsets": {"urban": 1.0}})
    with pytest.raises(Exception):
        pipeline.build_config({"resample": {"urban": "cubic"}})
    cfg = pipeline.build_config({"seed": 9, "split": {"stride": 2}}, base_dir=tmp_path)
    assert cfg.split.seed == 9 and cfg.params.seed == 9 and cfg.scene.seed == 9 and cfg.stride == 2
    assert cfg.inputs["global_dem"] == tmp_path / "out" / "scene" / "corrupted.asc"

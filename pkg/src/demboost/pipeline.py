"""End-to-end workflow behind the ``demboost`` subcommands.

Every command takes a :class:`RunConfig` and writes into ``config.out``:

    scene/<layer>.asc          synth: truth, corrupted, urban, forest_pct, bare_pct
    features/<name>.asc        features: the eleven predictor rasters
    model.json                 train / tune
    learning_curve.csv         train / tune
    train_report.json          train / tune: train/val/test RMSE, importance
    tune_history.csv           tune (and train with a tune block)
    best_params.yaml           tune (and train with a tune block)
    corrected.asc              correct
    correction_mask.asc        correct: 1 where the cell was passed through
    error_original.asc         evaluate
    error_corrected.asc        evaluate
    accuracy_report.json       evaluate
    manifest_<command>.json    every command

Files are written deterministically, so the same config reproduces them byte
for byte.
"""
from __future__ import annotations

import hashlib
import json
import platform
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__, _jit, dataset, evalkit, hypertune, raster, synthgen, terrain
from .dataset import FEATURE_NAMES, SplitSpec
from .errors import DomainError, FeatureMismatchError, MissingInputError
from .gbtree import GbtParams, feature_importance, load_model, save_model, train
from .raster import Grid

INPUT_KEYS = ("global_dem", "ref_dem", "urban", "forest_pct", "bare_pct")
COVARIATES = ("urban", "forest_pct", "bare_pct")
DEFAULT_RESAMPLE = {"urban": "nearest", "forest_pct": "bilinear", "bare_pct": "bilinear"}
SCENE_LAYERS = {"global_dem": "corrupted", "ref_dem": "truth", "urban": "urban", "forest_pct": "forest_pct", "bare_pct": "bare_pct"}


@dataclass(frozen=True)
class TerrainSettings:
    tpi_radius: int = terrain.DEFAULT_TPI_RADIUS
    tst_radius: int = terrain.DEFAULT_TST_RADIUS
    tst_threshold: float = terrain.DEFAULT_TST_THRESHOLD
    vrm_radius: int = terrain.DEFAULT_VRM_RADIUS


@dataclass(frozen=True)
class TuneSettings:
    budget: int = 50
    n_init: int = 10
    seed: int = 0
    space: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Site:
    name: str
    col0: int = 0
    row0: int = 0
    ncols: int | None = None
    nrows: int | None = None


@dataclass(frozen=True)
class RunConfig:
    out: Path
    inputs: dict
    offsets: dict
    resample: dict
    terrain: TerrainSettings
    split: SplitSpec
    stride: int
    params: GbtParams
    tune: TuneSettings | None
    scene: synthgen.SceneConfig
    correct_dem: Path | None
    model_path: Path | None
    evaluate_dem: Path | None
    sites: tuple
    export_table: bool
    raw: dict

    def hash(self) -> str:
        return config_hash(self.raw)


def config_hash(doc: dict) -> str:
    """sha256 of the canonical config. ``out`` is left out: where results go does not change them."""
    doc = {k: v for k, v in doc.items() if k != "out"}
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


_TOP_KEYS = {
    "seed", "out", "inputs", "offsets", "resample", "terrain", "split", "params",
    "params_file", "tune", "scene", "correct", "evaluate", "export_table",
}


def _known(cls, d, what):
    d = dict(d or {})
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise DomainError(f"unknown {what} setting(s): {', '.join(sorted(unknown))}")
    return d


def load_config(path, out=None) -> RunConfig:
    """Read a YAML run config. Relative paths resolve against the config's directory."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise DomainError(f"{path}: config must be a mapping")
    return build_config(doc, base_dir=path.parent, out=out)


def build_config(doc: dict, base_dir=".", out=None) -> RunConfig:
    base_dir = Path(base_dir)
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise DomainError(f"unknown config key(s): {', '.join(sorted(unknown))}")

    def resolve(p):
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else base_dir / p

    out_dir = Path(out) if out is not None else resolve(doc.get("out", "out"))
    seed = int(doc.get("seed", 0))

    scene_doc = dict(doc.get("scene") or {})
    scene_doc.setdefault("seed", seed)
    scene = synthgen.SceneConfig.from_dict(scene_doc)

    inputs_doc = dict(doc.get("inputs") or {})
    bad = set(inputs_doc) - set(INPUT_KEYS)
    if bad:
        raise DomainError(f"unknown input(s): {', '.join(sorted(bad))}")
    inputs = {}
    for key in INPUT_KEYS:
        if key in inputs_doc:
            inputs[key] = resolve(inputs_doc[key])
        else:
            # Without explicit inputs the synthetic scene written by `synth` is used.
            inputs[key] = out_dir / "scene" / f"{SCENE_LAYERS[key]}.asc"

    offsets_doc = dict(doc.get("offsets") or {})
    bad = set(offsets_doc) - {"global_dem", "ref_dem"}
    if bad:
        raise DomainError(f"offsets apply to global_dem and ref_dem only, got {', '.join(sorted(bad))}")
    offsets = {"global_dem": float(offsets_doc.get("global_dem", 0.0)), "ref_dem": float(offsets_doc.get("ref_dem", 0.0))}

    resample_doc = dict(DEFAULT_RESAMPLE)
    resample_doc.update(doc.get("resample") or {})
    for k, m in resample_doc.items():
        if k not in COVARIATES or m not in ("nearest", "bilinear"):
            raise DomainError(f"bad resample setting {k}: {m}")

    terrain_cfg = TerrainSettings(**_known(TerrainSettings, doc.get("terrain"), "terrain"))

    split_doc = dict(doc.get("split") or {})
    stride = int(split_doc.pop("stride", 1))
    if stride < 1:
        raise DomainError("split.stride must be >= 1")
    split_doc.setdefault("seed", seed)
    split = SplitSpec(**_known(SplitSpec, split_doc, "split"))

    params_doc = {}
    if doc.get("params_file") is not None:
        pf = resolve(doc["params_file"])
        if not pf.is_file():
            raise MissingInputError(f"params file not found: {pf}")
        params_doc.update(hypertune.load_params(pf).to_dict())
    params_doc.update(doc.get("params") or {})
    params_doc.setdefault("seed", seed)
    params = GbtParams.from_dict(params_doc)

    tune = None
    if doc.get("tune") is not None:
        tdoc = dict(doc["tune"] or {})
        tdoc.setdefault("seed", seed)
        tune = TuneSettings(**_known(TuneSettings, tdoc, "tune"))

    correct_doc = dict(doc.get("correct") or {})
    if set(correct_doc) - {"dem", "model"}:
        raise DomainError("correct block accepts 'dem' and 'model' only")
    eval_doc = dict(doc.get("evaluate") or {})
    if set(eval_doc) - {"corrected", "sites"}:
        raise DomainError("evaluate block accepts 'corrected' and 'sites' only")
    sites = tuple(Site(**_known(Site, s, "site")) for s in eval_doc.get("sites", []) or [])
    if not sites:
        sites = (Site("all"),)

    return RunConfig(
        out=out_dir,
        inputs=inputs,
        offsets=offsets,
        resample=resample_doc,
        terrain=terrain_cfg,
        split=split,
        stride=stride,
        params=params,
        tune=tune,
        scene=scene,
        correct_dem=resolve(correct_doc.get("dem")),
        model_path=resolve(correct_doc.get("model")),
        evaluate_dem=resolve(eval_doc.get("corrected")),
        sites=sites,
        export_table=bool(doc.get("export_table", False)),
        raw=_canonical(doc),
    )


def _canonical(doc):
    return json.loads(json.dumps(doc, sort_keys=True, default=str))


# -- io helpers ---------------------------------------------------------------


def _read(path) -> Grid:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"input raster not found: {path}")
    return raster.read_ascii_grid(path)


def _write(grid: Grid, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    raster.write_ascii_grid(grid, path)


def _versions():
    import scipy

    out = {"demboost": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}
    if _jit.HAVE_NUMBA:
        out["numba"] = _jit.numba.__version__
    return out


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _label(cfg: RunConfig, path) -> str:
    try:
        return str(Path(path).relative_to(cfg.out))
    except ValueError:
        return str(path)


def write_manifest(cfg: RunConfig, command: str, outputs, extra=None, inputs=()) -> Path:
    """Record what produced ``outputs``: config hash, input digests, versions, seeds, settings."""
    doc = {
        "command": command,
        "config_hash": cfg.hash(),
        "input_digests": {_label(cfg, p): file_digest(p) for p in sorted(set(map(str, inputs)))},
        "versions": _versions(),
        "backend": _jit.backend(),
        "seeds": {
            "split": cfg.split.seed,
            "booster": cfg.params.seed,
            "scene": cfg.scene.seed,
            "tune": cfg.tune.seed if cfg.tune else None,
        },
        "settings": {
            "terrain": asdict(cfg.terrain),
            "split": asdict(cfg.split),
            "stride": cfg.stride,
            "offsets": cfg.offsets,
            "resample": cfg.resample,
            "params": cfg.params.to_dict(),
            "tune": asdict(cfg.tune) if cfg.tune else None,
        },
        "outputs": sorted(str(Path(p).relative_to(cfg.out)) for p in outputs),
    }
    if extra:
        doc.update(extra)
    path = cfg.out / f"manifest_{command}.json"
    cfg.out.mkdir(parents=True, exist_ok=True)
    evalkit.write_json(doc, path)
    return path


def _used_inputs(cfg: RunConfig, *keys) -> list:
    return [cfg.inputs[k] for k in keys]


# -- shared steps -------------------------------------------------------------


def load_dem(cfg: RunConfig, path=None) -> Grid:
    dem = _read(path or cfg.inputs["global_dem"])
    return raster.apply_vertical_offset(dem, cfg.offsets["global_dem"])


def load_reference(cfg: RunConfig) -> Grid:
    ref = _read(cfg.inputs["ref_dem"])
    return raster.apply_vertical_offset(ref, cfg.offsets["ref_dem"])


def build_features(cfg: RunConfig, dem: Grid) -> dict:
    """Eleven predictor grids on the DEM's frame; covariates resampled onto it."""
    feats = {"elevation": dem}
    for key in COVARIATES:
        src = _read(cfg.inputs[key])
        if src.header.aligned_with(dem.header):
            feats[key] = src
        else:
            feats[key] = raster.resample(src, dem.header, cfg.resample[key])
    feats.update(terrain.derive_all(dem, **asdict(cfg.terrain)))
    return {name: feats[name] for name in FEATURE_NAMES}


def read_features(cfg: RunConfig) -> dict:
    d = cfg.out / "features"
    return {name: _read(d / f"{name}.asc") for name in FEATURE_NAMES}


def build_table(cfg: RunConfig):
    """Feature table from the feature rasters and the error grid (offset DEM minus reference)."""
    feats = read_features(cfg)
    ref = load_reference(cfg)
    raster.require_aligned([feats["elevation"], ref], "features and reference DEM")
    err = raster.diff(feats["elevation"], ref)
    return dataset.assemble(feats, err, stride=cfg.stride), err


def _table_rmse(model, table):
    if len(table) == 0:
        return None
    return evalkit.rmse(model.predict(table.X) - table.y)


# -- commands -----------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> list:
    scene = synthgen.generate_scene(cfg.scene)
    outputs = []
    for name, grid in scene.grids().items():
        p = cfg.out / "scene" / f"{name}.asc"
        _write(grid, p)
        outputs.append(p)
    write_manifest(cfg, "synth", outputs, {"scene": cfg.scene.to_dict(), "n_buildings": scene.n_buildings})
    return outputs


def cmd_features(cfg: RunConfig) -> list:
    dem = load_dem(cfg)
    feats = build_features(cfg, dem)
    outputs = []
    for name, grid in feats.items():
        p = cfg.out / "features" / f"{name}.asc"
        _write(grid, p)
        outputs.append(p)
    write_manifest(cfg, "features", outputs, inputs=_used_inputs(cfg, "global_dem", *COVARIATES))
    return outputs


def _fit(cfg: RunConfig, tune: bool, command: str):
    table, err = build_table(cfg)
    tr, va, te = dataset.split(table, cfg.split)
    outputs = []
    report = {
        "rows": {"total": len(table), "train": len(tr), "val": len(va), "test": len(te)},
        "original_rmse": evalkit.rmse(table.y),
    }
    if tune:
        settings = cfg.tune or TuneSettings(seed=cfg.params.seed)
        space = hypertune.SearchSpace().with_overrides(settings.space)
        params, history, model, trace = hypertune.tune_booster(
            tr, va, space, settings.budget, settings.n_init, settings.seed, base=cfg.params
        )
        hist_path = cfg.out / "tune_history.csv"
        hypertune.export_history(history, hist_path, space.names)
        best_path = cfg.out / "best_params.yaml"
        hypertune.save_params(params, best_path)
        outputs += [hist_path, best_path]
        report["tuning"] = {
            "budget": settings.budget,
            "n_init": settings.n_init,
            "failed_trials": sum(t.failed for t in history),
            "best_objective": min(t.objective for t in history if not t.failed),
        }
    else:
        model, trace = train(tr, va, cfg.params)

    model_path = cfg.out / "model.json"
    save_model(model, model_path)
    curve_path = cfg.out / "learning_curve.csv"
    evalkit.export_learning_curve(trace, curve_path)
    report.update(
        {
            "params": model.params.to_dict(),
            "best_iteration": model.best_iteration,
            "trees_built": len(model.trees),
            "train_rmse": _table_rmse(model, tr),
            "val_rmse": _table_rmse(model, va),
            "test_rmse": _table_rmse(model, te),
            "importance_weight": feature_importance(model, "weight"),
            "importance_gain": feature_importance(model, "gain"),
        }
    )
    report_path = cfg.out / "train_report.json"
    evalkit.write_json(report, report_path)
    outputs += [model_path, curve_path, report_path]
    if cfg.export_table:
        for name, t in (("train", tr), ("val", va), ("test", te)):
            p = cfg.out / f"table_{name}.csv"
            dataset.export_csv(t, p)
            outputs.append(p)
    used = [cfg.out / "features" / f"{n}.asc" for n in FEATURE_NAMES] + _used_inputs(cfg, "ref_dem")
    write_manifest(cfg, command, outputs, inputs=used)
    return model, report


def cmd_train(cfg: RunConfig):
    cfg.out.mkdir(parents=True, exist_ok=True)
    return _fit(cfg, tune=cfg.tune is not None, command="train")


def cmd_tune(cfg: RunConfig):
    cfg.out.mkdir(parents=True, exist_ok=True)
    return _fit(cfg, tune=True, command="tune")


def correct_dem(model, feats: dict, dem: Grid):
    """Corrected DEM (dem - predicted error) and the pass-through mask.

    Cells where any predictor is invalid keep their original value and get
    mask 1; the mask is 0 where the correction was applied.
    """
    names = tuple(model.feature_names)
    if names != FEATURE_NAMES:
        raise FeatureMismatchError(f"model features {list(names)} do not match {list(FEATURE_NAMES)}")
    X, valid = dataset.feature_matrix(feats)
    valid = valid.reshape(-1)
    out = dem.data.reshape(-1).copy()
    if valid.any():
        out[valid] = out[valid] - model.predict(X[valid])
    mask = (~valid).astype(np.float64).reshape(dem.shape)
    return dem.with_data(out.reshape(dem.shape)), Grid(dem.header, mask)


def cmd_correct(cfg: RunConfig, model_path=None, dem_path=None):
    model_path = Path(model_path or cfg.model_path or cfg.out / "model.json")
    if not model_path.is_file():
        raise MissingInputError(f"model file not found: {model_path}")
    model = load_model(model_path)
    if tuple(model.feature_names) != FEATURE_NAMES:
        raise FeatureMismatchError(f"model features {list(model.feature_names)} do not match {list(FEATURE_NAMES)}")
    dem = load_dem(cfg, dem_path or cfg.correct_dem)
    feats = build_features(cfg, dem)
    corrected, mask = correct_dem(model, feats, dem)
    out_path = cfg.out / "corrected.asc"
    mask_path = cfg.out / "correction_mask.asc"
    _write(corrected, out_path)
    _write(mask, mask_path)
    used = [model_path, Path(dem_path or cfg.correct_dem or cfg.inputs["global_dem"])] + _used_inputs(cfg, *COVARIATES)
    write_manifest(cfg, "correct", [out_path, mask_path], {"passed_through": int(mask.data.sum())}, inputs=used)
    return corrected, mask


def _site_window(site: Site, grid: Grid) -> Grid:
    nc = grid.header.ncols - site.col0 if site.ncols is None else site.ncols
    nr = grid.header.nrows - site.row0 if site.nrows is None else site.nrows
    return raster.subset(grid, site.col0, site.row0, nc, nr)


def evaluate_grids(original: Grid, reference: Grid, corrected: Grid | None = None, sites=(Site("all"),), dem_name="dem"):
    """Error maps and per-site accuracy records."""
    err_o = evalkit.error_map(original, reference)
    err_c = evalkit.error_map(corrected, reference) if corrected is not None else None
    records = []
    for site in sites:
        eo = _site_window(site, err_o)
        valid = eo.valid_mask()
        if err_c is not None:
            ec = _site_window(site, err_c)
            valid &= ec.valid_mask()
        if not valid.any():
            raise DomainError(f"site {site.name!r} has no valid cells")
        if err_c is None:
            records.append(evalkit.accuracy_record(site.name, dem_name, eo.data[valid]))
        else:
            rec = evalkit.accuracy_record(site.name, dem_name, eo.data[valid], ec.data[valid])
            if rec.improvement_pct is None:
                rec = evalkit.accuracy_record(site.name, dem_name, eo.data[valid])
            records.append(rec)
    return err_o, err_c, evalkit.AccuracyReport(records)


def cmd_evaluate(cfg: RunConfig, corrected_path=None):
    original = load_dem(cfg)
    reference = load_reference(cfg)
    corrected_path = Path(corrected_path or cfg.evaluate_dem or cfg.out / "corrected.asc")
    corrected = _read(corrected_path) if corrected_path.is_file() else None
    grids = [original, reference] + ([corrected] if corrected is not None else [])
    raster.require_aligned(grids, "evaluated DEMs")
    err_o, err_c, report = evaluate_grids(original, reference, corrected, cfg.sites, "global_dem")
    outputs = [cfg.out / "error_original.asc"]
    _write(err_o, outputs[0])
    if err_c is not None:
        outputs.append(cfg.out / "error_corrected.asc")
        _write(err_c, outputs[1])
    report_path = cfg.out / "accuracy_report.json"
    evalkit.write_json({"config_hash": cfg.hash(), **report.to_dict()}, report_path)
    outputs.append(report_path)
    used = _used_inputs(cfg, "global_dem", "ref_dem") + ([corrected_path] if corrected is not None else [])
    write_manifest(cfg, "evaluate", outputs, inputs=used)
    return report

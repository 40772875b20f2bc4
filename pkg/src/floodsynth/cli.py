"""Command-line entry points: single runs, Monte Carlo ensembles, dataset
synthesis, change detection, metrics, and quick-look rendering.

Every artifact directory gets JSON sidecars stamped with the SHA-256 of
the canonical configuration that produced it. Exit codes: 0 success,
2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import changedet, metrics as metrics_mod, synth
from .grid import BinaryRaster, Raster, read_ascii_grid, slope_grid, terrain_features, write_ascii_grid
from .scenario import (
    HydrographTemplate,
    LogisticModel,
    Scenario,
    apply_slope_mask,
    build_scenario,
    predict_probability,
    sample_initiation_points,
)
from .simulator import SimParams, run_simulation
from .synth import CorruptionParams


class ConfigError(ValueError):
    """Bad or missing configuration."""


DEFAULT_CONFIG = {
    "dem": None,
    "probability": None,        # path to a probability grid
    "logistic": None,           # serialized LogisticModel as an alternative
    "scenario": None,           # explicit scenario JSON (fixed supply points)
    "pre_index": None,          # optional pre-disaster vegetation index grid
    "seeds": [1],
    "gammas": [0.0],
    "duration": 600.0,
    "max_steps": None,
    "water_level_mode": "depth",   # or "surface"
    "min_slope_deg": 15.0,
    "max_points": None,
    "sim": {},
    "supply": {},
    "corruption": {},
    "patch": 256,
    "stride": 256,
    "train_cases": None,
    "workers": 1,
    "out": "out",
}


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            user = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    unknown = set(user) - set(DEFAULT_CONFIG)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = dict(DEFAULT_CONFIG)
    cfg.update(user)
    return cfg


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _dataclass_from(cls, overrides: dict, name: str):
    known = {f.name for f in fields(cls)}
    unknown = set(overrides) - known
    if unknown:
        raise ConfigError(f"unknown {name} keys: {sorted(unknown)}")
    kwargs = dict(overrides)
    if cls is CorruptionParams and "cutout_size_range" in kwargs:
        kwargs["cutout_size_range"] = tuple(kwargs["cutout_size_range"])
    return cls(**kwargs)


def sim_params_from(cfg: dict) -> SimParams:
    p = _dataclass_from(SimParams, cfg.get("sim") or {}, "sim")
    try:
        p.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return p


def _require_dem(cfg: dict) -> Raster:
    if not cfg.get("dem"):
        raise ConfigError("config needs a 'dem' path")
    try:
        return read_ascii_grid(cfg["dem"])
    except OSError as exc:
        raise ConfigError(f"cannot read DEM: {exc}") from exc


def probability_raster(cfg: dict, dem: Raster) -> Raster:
    """Initiation probability from config: a grid path or a logistic model
    applied to the DEM's terrain features; slope-masked either way."""
    if cfg.get("probability"):
        p = read_ascii_grid(cfg["probability"])
    elif cfg.get("logistic"):
        model = LogisticModel.from_dict(cfg["logistic"])
        p = predict_probability(model, terrain_features(dem))
    else:
        raise ConfigError("config needs 'probability' or 'logistic'")
    bad = (p.values != p.nodata) & ((p.values < 0) | (p.values > 1))
    if bad.any():
        raise ConfigError("probability raster has values outside [0, 1]")
    min_slope = float(np.deg2rad(cfg.get("min_slope_deg", 15.0)))
    if min_slope > 0:
        p = apply_slope_mask(p, slope_grid(dem), min_slope)
    return p


def scenario_for(cfg: dict, prob: Raster, seed: int, gamma: float) -> Scenario:
    template = _dataclass_from(HydrographTemplate, cfg.get("supply") or {}, "supply")
    points = sample_initiation_points(prob, seed)
    cap = cfg.get("max_points")
    if cap is not None and len(points) > cap:
        points = points[:cap]  # row-major prefix, deterministic
    return build_scenario(points, gamma, template, seed=seed)


def run_case(cfg: dict, dem: Raster, scenario: Scenario, case_dir: Path) -> dict:
    """Simulate one scenario and write its grids and ledger sidecar."""
    params = sim_params_from(cfg)
    params.gamma = scenario.gamma
    out = run_simulation(dem, scenario.supplies, params,
                         duration=float(cfg["duration"]),
                         max_steps=cfg.get("max_steps"),
                         water_level_mode=cfg.get("water_level_mode", "depth"))
    case_dir.mkdir(parents=True, exist_ok=True)
    write_ascii_grid(out.max_water_level, case_dir / "maxwl.asc")
    write_ascii_grid(out.deformation, case_dir / "deform.asc")
    ledger = out.ledger.as_dict()
    ledger["config_hash"] = config_hash(cfg)
    ledger["seed"] = scenario.seed
    ledger["gamma"] = scenario.gamma
    ledger["n_points"] = len(scenario.points)
    with open(case_dir / "ledger.json", "w") as fh:
        json.dump(ledger, fh, indent=2)
    scen_doc = json.loads(scenario.to_json())
    scen_doc["config_hash"] = config_hash(cfg)
    with open(case_dir / "scenario.json", "w") as fh:
        json.dump(scen_doc, fh, indent=2)
    return ledger


def _gamma_tag(gamma: float) -> str:
    return format(gamma, "g")


def case_dir_name(seed: int, gamma: float) -> str:
    return f"case_{seed}_{_gamma_tag(gamma)}"


def _ensemble_case(payload) -> tuple[str, str | None]:
    """Worker: run one (seed, gamma) case; returns (case name, error)."""
    cfg, seed, gamma, prob_path, out_dir = payload
    try:
        dem = _require_dem(cfg)
        prob = read_ascii_grid(prob_path)
        scen = scenario_for(cfg, prob, seed, gamma)
        case = Path(out_dir) / "cases" / case_dir_name(seed, gamma)
        run_case(cfg, dem, scen, case)
        return case_dir_name(seed, gamma), None
    except Exception as exc:  # isolated per case, reported in the summary
        return case_dir_name(seed, gamma), f"{type(exc).__name__}: {exc}"


def cmd_simulate(cfg: dict, args) -> int:
    dem = _require_dem(cfg)
    if cfg.get("scenario"):
        try:
            scen = Scenario.from_json(Path(cfg["scenario"]).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read scenario: {exc}") from exc
    else:
        if not cfg["seeds"]:
            raise ConfigError("config needs a non-empty seed list")
        seed = int(args.seed if args.seed is not None else cfg["seeds"][0])
        gamma = float(cfg["gammas"][0])
        prob = probability_raster(cfg, dem)
        scen = scenario_for(cfg, prob, seed, gamma)
    out_dir = Path(args.out or cfg["out"])
    ledger = run_case(cfg, dem, scen, out_dir)
    print(f"simulated seed={scen.seed} gamma={scen.gamma} points={ledger['n_points']} "
          f"steps={ledger['steps']} -> {out_dir}")
    return 0


def cmd_ensemble(cfg: dict, args) -> int:
    if not cfg["seeds"]:
        raise ConfigError("config needs a non-empty seed list")
    dem = _require_dem(cfg)
    out_dir = Path(args.out or cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    prob = probability_raster(cfg, dem)
    prob_path = out_dir / "probability.asc"
    write_ascii_grid(prob, prob_path)

    seeds = [int(s) for s in cfg["seeds"]]
    gammas = [float(g) for g in cfg["gammas"]]
    payloads = [(cfg, s, g, str(prob_path), str(out_dir)) for s in seeds for g in gammas]
    workers = int(args.workers or cfg["workers"] or 1)

    results: dict[str, str | None] = {}
    if workers <= 1:
        for payload in payloads:
            name, err = _ensemble_case(payload)
            results[name] = err
            print(f"[{'fail' if err else ' ok '}] {name}" + (f": {err}" if err else ""))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for name, err in pool.map(_ensemble_case, payloads):
                results[name] = err
                print(f"[{'fail' if err else ' ok '}] {name}" + (f": {err}" if err else ""))

    # per-gamma ensemble averages over the successful cases, fixed order
    for gamma in gammas:
        for var, fname in (("maxwl", "maxwl.asc"), ("deform", "deform.asc")):
            grids = []
            for seed in seeds:
                name = case_dir_name(seed, gamma)
                if results.get(name) is None:
                    p = out_dir / "cases" / name / fname
                    if p.exists():
                        grids.append(read_ascii_grid(p))
            if grids:
                avg = metrics_mod.ensemble_average(grids)
                write_ascii_grid(avg, out_dir / f"average_{var}_gamma_{_gamma_tag(gamma)}.asc")

    failures = {k: v for k, v in results.items() if v}
    summary = {
        "config_hash": config_hash(cfg),
        "cases": sorted(results),
        "failures": failures,
        "seeds": seeds,
        "gammas": gammas,
    }
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    print(f"{len(results) - len(failures)}/{len(results)} cases ok -> {out_dir}")
    return 3 if failures else 0


def cmd_synth_dataset(cfg: dict, args) -> int:
    dem = _require_dem(cfg)
    ens_dir = Path(args.out or cfg["out"])
    cases_dir = ens_dir / "cases"
    if not cases_dir.is_dir():
        raise ConfigError(f"no ensemble case directory at {cases_dir}")

    seeds = [int(s) for s in cfg["seeds"]]
    gammas = [float(g) for g in cfg["gammas"]]
    names = [case_dir_name(s, g) for s in seeds for g in gammas]
    missing = [n for n in names if not (cases_dir / n / "maxwl.asc").exists()]
    if missing:
        raise ConfigError(f"missing case outputs: {missing[:5]}")

    k = cfg.get("train_cases")
    k = len(names) if k is None else int(k)
    if k >= len(names):
        k = len(names)
        print("warning: empty test split (train_cases covers every case)", file=sys.stderr)
    split = {"train": names[:k], "test": names[k:]}

    slope = slope_grid(dem)
    pre_index = read_ascii_grid(cfg["pre_index"]) if cfg.get("pre_index") else None
    params = _dataclass_from(CorruptionParams, cfg.get("corruption") or {}, "corruption")
    ds_dir = ens_dir / "dataset"

    class _CaseOutputs:
        def __init__(self, d):
            self.max_water_level = read_ascii_grid(d / "maxwl.asc")
            self.deformation = read_ascii_grid(d / "deform.asc")

    manifests = {}
    for split_name, members in split.items():
        if not members:
            continue
        cases = ((names.index(n), _CaseOutputs(cases_dir / n)) for n in members)
        manifest = synth.synth_dataset(cases, slope, pre_index, params, ds_dir,
                                       patch=int(cfg["patch"]), stride=int(cfg["stride"]),
                                       split_name=split_name)
        manifest["cases"] = members
        manifest["config_hash"] = config_hash(cfg)
        with open(ds_dir / f"manifest_{split_name}.json", "w") as fh:
            json.dump(manifest, fh, indent=2)
        manifests[split_name] = manifest
        print(f"{split_name}: {len(members)} cases, "
              f"{manifest['patch_counts']} patches -> {ds_dir}")
    return 0


def cmd_detect_change(args) -> int:
    def load_bands(d):
        d = Path(d)
        bands = {}
        for name in ("red", "green", "blue", "nir"):
            p = d / f"{name}.asc"
            if p.exists():
                bands[name] = read_ascii_grid(p)
        if "red" not in bands or "green" not in bands or "blue" not in bands:
            raise ConfigError(f"{d} must hold red.asc, green.asc, blue.asc")
        return changedet.BandSet(**bands)

    pre = load_bands(args.pre)
    post = load_bands(args.post)
    if args.index == "ndvi":
        pre_ix, post_ix = changedet.ndvi(pre), changedet.ndvi(post)
        threshold = changedet.NDVI_DEFAULT_THRESHOLD if args.threshold is None else args.threshold
    else:
        pre_ix, post_ix = changedet.vari(pre), changedet.vari(post)
        threshold = changedet.VARI_DEFAULT_THRESHOLD if args.threshold is None else args.threshold
    change, valid = changedet.vegetation_loss(pre_ix, post_ix, threshold)
    if args.mask:
        ext = read_ascii_grid(args.mask)
        keep = ext.values != 0
        change = BinaryRaster(values=change.values * keep, cellsize=change.cellsize,
                              origin_x=change.origin_x, origin_y=change.origin_y,
                              nodata=change.nodata)
        valid = BinaryRaster(values=(valid.values.astype(bool) & keep).astype(np.uint8),
                             cellsize=valid.cellsize, origin_x=valid.origin_x,
                             origin_y=valid.origin_y, nodata=valid.nodata)
    out = Path(args.out or "change.asc")
    write_ascii_grid(change, out)
    write_ascii_grid(valid, out.with_name(out.stem + "_valid.asc"))
    print(f"{int(change.values.sum())} changed cells -> {out}")
    return 0


def cmd_binarize(cfg: dict, args) -> int:
    target = read_ascii_grid(args.target)
    params = _dataclass_from(CorruptionParams, cfg.get("corruption") or {}, "corruption")
    if args.seed is not None:
        params.seed = int(args.seed)
    pre_index = read_ascii_grid(cfg["pre_index"]) if cfg.get("pre_index") else None
    change = synth.corrupt_change_map(target, pre_index, params, params.seed)
    out = Path(args.out or "binary_change.asc")
    write_ascii_grid(change, out)
    print(f"{int(change.values.sum())} changed cells -> {out}")
    return 0


def cmd_patchify(cfg: dict, args) -> int:
    change = BinaryRaster.from_raster(read_ascii_grid(args.change))
    slope = read_ascii_grid(args.slope)
    target = read_ascii_grid(args.target)
    samples = synth.patchify(change, slope, target, patch=int(cfg["patch"]),
                             stride=int(cfg["stride"]), case_id=int(args.case_id))
    out = Path(args.out or "patches.tsp")
    synth.write_patches(out, samples, patch=int(cfg["patch"]))
    print(f"{len(samples)} patches -> {out}")
    return 0


def cmd_metrics(args) -> int:
    pred = read_ascii_grid(args.pred)
    ref = read_ascii_grid(args.ref)
    mask = read_ascii_grid(args.mask).values != 0 if args.mask else None
    ref_bin = read_ascii_grid(args.ref_binary).values != 0 if args.ref_binary else None
    report = metrics_mod.evaluate(pred.values, ref.values, mask=mask, ref_bin=ref_bin)
    payload = report.to_dict()
    payload["pred"] = str(args.pred)
    payload["ref"] = str(args.ref)
    payload["config_hash"] = config_hash({
        "pred": str(args.pred), "ref": str(args.ref),
        "ref_binary": args.ref_binary and str(args.ref_binary),
        "mask": args.mask and str(args.mask),
    })
    out = Path(args.json or "metrics.json")
    with open(out, "w") as fh:
        json.dump(payload, fh, indent=2)
    print(json.dumps(payload, indent=2))
    return 0


def cmd_average(args) -> int:
    grids = [read_ascii_grid(p) for p in args.grids]
    avg = metrics_mod.ensemble_average(grids)
    out = Path(args.out or "average.asc")
    write_ascii_grid(avg, out)
    print(f"averaged {len(grids)} grids -> {out}")
    return 0


def _colormap_linear(t: np.ndarray) -> np.ndarray:
    """White to saturated blue."""
    r = (1 - t) * 255
    g = (1 - 0.6 * t) * 255
    b = np.full_like(t, 255.0)
    return np.stack([r, g, b], axis=-1)


def _colormap_diverging(t: np.ndarray) -> np.ndarray:
    """Blue (negative) through white to red (positive); t in [-1, 1]."""
    neg = np.clip(-t, 0, 1)
    pos = np.clip(t, 0, 1)
    r = (1 - neg) * 255
    g = (1 - np.abs(t)) * 255
    b = (1 - pos) * 255
    return np.stack([r, g, b], axis=-1)


def render_ppm(grid: Raster, out_path, colormap: str = "linear") -> dict:
    """Write a binary portable pixmap of the grid plus a stats sidecar."""
    vals = grid.values
    valid = grid.valid_mask()
    vmin = float(vals[valid].min()) if valid.any() else 0.0
    vmax = float(vals[valid].max()) if valid.any() else 0.0
    if colormap == "diverging":
        scale = max(abs(vmin), abs(vmax))
        t = vals / scale if scale > 0 else np.zeros_like(vals)
        rgb = _colormap_diverging(np.clip(t, -1, 1))
    else:
        span = vmax - vmin
        t = (vals - vmin) / span if span > 0 else np.zeros_like(vals)
        rgb = _colormap_linear(np.clip(t, 0, 1))
    rgb = rgb.astype(np.uint8)
    rgb[~valid] = 128  # nodata in gray
    with open(out_path, "wb") as fh:
        fh.write(f"P6\n{grid.cols} {grid.rows}\n255\n".encode())
        fh.write(rgb.tobytes())
    stats = {"min": vmin, "max": vmax, "colormap": colormap,
             "rows": grid.rows, "cols": grid.cols}
    side = Path(out_path).with_suffix(".json")
    with open(side, "w") as fh:
        json.dump(stats, fh, indent=2)
    return stats


def cmd_render(args) -> int:
    grid = read_ascii_grid(args.grid)
    out = Path(args.out or (Path(args.grid).stem + ".ppm"))
    stats = render_ppm(grid, out, colormap=args.colormap)
    stats["config_hash"] = config_hash({"grid": str(args.grid),
                                        "colormap": args.colormap})
    with open(out.with_suffix(".json"), "w") as fh:
        json.dump(stats, fh, indent=2)
    print(f"rendered [{stats['min']:.4g}, {stats['max']:.4g}] -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--workers", type=int, default=None)
    common.add_argument("--out", default=None)

    ap = argparse.ArgumentParser(prog="floodsynth",
                                 description="flood / debris-flow simulation toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="run one scenario")
    sub.add_parser("ensemble", parents=[common], help="run seeds x gammas cases")
    sub.add_parser("synth-dataset", parents=[common], help="corrupt + patchify ensemble outputs")

    p = sub.add_parser("detect-change", parents=[common], help="vegetation-index change map")
    p.add_argument("--pre", required=True, help="directory of pre-disaster band grids")
    p.add_argument("--post", required=True, help="directory of post-disaster band grids")
    p.add_argument("--index", choices=["ndvi", "vari"], default="ndvi")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--mask", default=None, help="validity mask grid")

    p = sub.add_parser("binarize", parents=[common], help="corrupt one target grid")
    p.add_argument("--target", required=True)

    p = sub.add_parser("patchify", parents=[common], help="tile grids into a patch file")
    p.add_argument("--change", required=True)
    p.add_argument("--slope", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--case-id", dest="case_id", default=0)

    p = sub.add_parser("metrics", parents=[common], help="evaluate a prediction grid")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--ref-binary", dest="ref_binary", default=None)
    p.add_argument("--mask", default=None)
    p.add_argument("--json", default=None)

    p = sub.add_parser("average", parents=[common], help="per-cell mean of grids")
    p.add_argument("grids", nargs="+")

    p = sub.add_parser("render", parents=[common], help="grid to portable pixmap")
    p.add_argument("--grid", required=True)
    p.add_argument("--colormap", choices=["linear", "diverging"], default="linear")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if getattr(args, "config", None) else dict(DEFAULT_CONFIG)
        if args.command == "simulate":
            return cmd_simulate(cfg, args)
        if args.command == "ensemble":
            return cmd_ensemble(cfg, args)
        if args.command == "synth-dataset":
            return cmd_synth_dataset(cfg, args)
        if args.command == "detect-change":
            return cmd_detect_change(args)
        if args.command == "binarize":
            return cmd_binarize(cfg, args)
        if args.command == "patchify":
            return cmd_patchify(cfg, args)
        if args.command == "metrics":
            return cmd_metrics(args)
        if args.command == "average":
            return cmd_average(args)
        if args.command == "render":
            return cmd_render(args)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

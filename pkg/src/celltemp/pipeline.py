"""End-to-end steps shared by the CLI and the acceptance tests."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import config as C
from .datagen import NormStats, ScenarioSpec, WindowBatch, build_dataset, windowize
from .errors import DomainError
from .evalkit import StudyContext, gaussian_smooth, metrics
from .io import ingest_csv, write_series_csv
from .net import NetParams, init_params, predict, train_supervised


@dataclass
class SourceData:
    series: list
    scenario_ids: list
    norm: NormStats


def generate(cfg, workers=None) -> SourceData:
    specs = C.source_scenarios(cfg)
    workers = int(cfg["runtime"]["workers"]) if workers is None else workers
    series, norm = build_dataset(
        specs, C.cell_params(cfg), C.sim_settings(cfg), float(cfg["windows"]["std_floor"]), workers
    )
    return SourceData(series, [s.scenario_id for s in specs], norm)


def save_dataset(data: SourceData, out_dir):
    """One CSV per scenario plus ``dataset.json``; returns written paths."""
    paths, files = [], []
    for i, (s, sid) in enumerate(zip(data.series, data.scenario_ids)):
        name = f"series_{i:03d}.csv"
        write_series_csv(s, os.path.join(out_dir, name))
        files.append({"file": name, "scenario": sid})
        paths.append(os.path.join(out_dir, name))
    meta = os.path.join(out_dir, "dataset.json")
    with open(meta, "w") as fh:
        json.dump({"norm": data.norm.to_dict(), "norm_hash": data.norm.content_hash, "series": files}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [meta] + paths


def load_dataset(in_dir) -> tuple[SourceData, list]:
    """Inverse of :func:`save_dataset`; also returns the files read."""
    meta_path = os.path.join(in_dir, "dataset.json")
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except OSError as err:
        raise DomainError(f"{meta_path}: cannot read dataset index ({err.strerror})") from err
    paths = [os.path.join(in_dir, item["file"]) for item in meta["series"]]
    series = [ingest_csv(p) for p in paths]
    for p, s in zip(paths, series):
        if not s.labeled:
            raise DomainError(f"{p}: source series must carry core_temp_c")
    norm = NormStats.from_dict(meta["norm"])
    return SourceData(series, [item["scenario"] for item in meta["series"]], norm), [meta_path] + paths


def training_windows(cfg, data: SourceData) -> WindowBatch:
    w = int(cfg["windows"]["length"])
    stride = int(cfg["windows"]["stride"])
    return WindowBatch.concat(
        [windowize(s, w, stride, data.norm, sid) for s, sid in zip(data.series, data.scenario_ids)]
    )


def head_for(cfg, data: SourceData) -> dict:
    """Output affine map: standardised target, optionally relative to T_s."""
    norm = data.norm
    if cfg["net"]["surface_skip"]:
        res = np.concatenate([s.t_core - s.t_surf for s in data.series])
        return {
            "shift": float(res.mean()),
            "scale": float(max(res.std(), 1e-6)),
            "skip": 1.0,
            "skip_mean": norm.mean[2],
            "skip_std": norm.std[2],
        }
    return {"shift": norm.label_mean, "scale": norm.label_std}


def initial_params(cfg, data: SourceData) -> NetParams:
    n = cfg["net"]
    return init_params(int(n["hidden"]), int(n["features"]), int(n["seed"]), head=head_for(cfg, data), norm_hash=data.norm.content_hash)


def pretrain(cfg, data: SourceData, log=None):
    """Supervised pre-training on the source sweep; returns ``(params, history)``."""
    return train_supervised(training_windows(cfg, data), C.train_config(cfg), initial_params(cfg, data), log=log)


def study_context(cfg, params, data: SourceData) -> StudyContext:
    return StudyContext(
        nominal=C.cell_params(cfg),
        pretrained=params,
        norm=data.norm,
        source_windows=training_windows(cfg, data),
        adapt=C.adapt_config(cfg),
        settings=C.sim_settings(cfg),
        coolant_temp=float(cfg["study"]["coolant_temp"]),
        adapt_stride=int(cfg["windows"]["adapt_stride"]),
    )


def estimate(params, norm: NormStats, series, window, stride=1, smoothing=None):
    """Core-temperature estimates at each window end.

    ``smoothing`` is an optional ``(window, sigma)`` Gaussian filter applied
    to the measured signals before estimation. Returns ``(ends, pred)``.
    """
    if norm.content_hash != params.norm_hash:
        raise DomainError(f"NormStats hash {norm.content_hash} does not match checkpoint {params.norm_hash}")
    if smoothing is not None:
        sw, sigma = smoothing
        kw = {f: gaussian_smooth(getattr(series, f), sw, sigma) for f in ("current", "voltage", "t_surf", "t_fluid")}
        series = type(series)(**{**{f: getattr(series, f) for f in series.__dataclass_fields__}, **kw})
    wb = windowize(series.measurements() if series.labeled else series, window, stride, norm)
    pred, _ = predict(wb.features(), params)
    return wb.ends, pred


def evaluate(params, norm, series, window, stride=1, smoothing=None):
    """Metrics of the estimator against a labelled series."""
    if not series.labeled:
        raise DomainError("evaluation needs a series with core_temp_c")
    ends, pred = estimate(params, norm, series, window, stride, smoothing)
    return ends, pred, metrics(pred, series.t_core[ends])


def target_spec(cfg, profile, param=None, eps=0.0, coolant=None) -> ScenarioSpec:
    eps_map = {p: eps for p in param.split("+")} if param else {}
    t_f = float(cfg["study"]["coolant_temp"]) if coolant is None else coolant
    return ScenarioSpec(profile, t_f, eps_map, "fom")

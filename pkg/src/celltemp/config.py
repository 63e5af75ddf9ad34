"""YAML configuration: defaults, merging, validation and typed builders."""
from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources

import yaml

from .adapt import AdaptConfig
from .datagen import ProfileSpec, SimSettings, sweep
from .electrical import ElectricalParams
from .errors import CellTempError, ConfigError
from .net import TrainConfig
from .sim import CellParams, NoiseSpec
from .thermal import ThermalParams

# Keys whose values are free-form mappings or lists of mappings.
_OPEN_KEYS = {("profiles", "source"), ("profiles", "evaluation")}


def default_config() -> dict:
    text = resources.files("celltemp").joinpath("defaults.yaml").read_text()
    return yaml.safe_load(text)


def _merge(base, override, path=()):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = path + (key,)
        if key not in base:
            raise ConfigError(f"unknown config key {'.'.join(where)}")
        if isinstance(base[key], dict) and where not in _OPEN_KEYS:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {'.'.join(where)} must be a mapping")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None, overrides=None) -> dict:
    """Defaults, then the YAML file at ``path``, then ``overrides``."""
    cfg = default_config()
    if path is not None:
        try:
            with open(path) as fh:
                user = yaml.safe_load(fh) or {}
        except OSError as err:
            raise ConfigError(f"{path}: cannot read config ({err.strerror})") from err
        except yaml.YAMLError as err:
            raise ConfigError(f"{path}: invalid YAML ({err})") from err
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        cfg = _merge(cfg, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    validate(cfg)
    return cfg


def config_hash(cfg) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def dump_config(cfg, path):
    with open(path, "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)


def validate(cfg):
    """Build every typed object once so bad values surface as ConfigError."""
    try:
        cell_params(cfg)
        sim_settings(cfg)
        train_config(cfg)
        adapt_config(cfg)
        source_scenarios(cfg)
        evaluation_profiles(cfg)
        w = cfg["windows"]
        if min(int(w["length"]), int(w["stride"]), int(w["eval_stride"])) < 1:
            raise ConfigError("window length and strides must be positive")
        s = cfg["smoothing"]
        if int(s["window"]) < 1 or int(s["window"]) % 2 == 0 or float(s["sigma"]) <= 0:
            raise ConfigError("smoothing window must be odd and sigma positive")
        if int(cfg["runtime"]["workers"]) < 1:
            raise ConfigError("runtime.workers must be at least 1")
    except ConfigError:
        raise
    except (CellTempError, ValueError, TypeError, KeyError) as err:
        raise ConfigError(f"invalid configuration: {err}") from err


def cell_params(cfg) -> CellParams:
    e = dict(cfg["cell"]["electrical"])
    e["ocv_curve"] = tuple(tuple(float(v) for v in pt) for pt in e["ocv_curve"])
    return CellParams(ElectricalParams(**e), ThermalParams(**cfg["cell"]["thermal"]))


def noise_spec(cfg):
    n = dict(cfg["simulation"]["noise"])
    if not n.pop("enabled"):
        return None
    return NoiseSpec(**n)


def sim_settings(cfg) -> SimSettings:
    s = cfg["simulation"]
    return SimSettings(soc0=float(s["soc0"]), dt=float(s["dt"]), fom_nodes=int(s["fom_nodes"]), noise=noise_spec(cfg))


def _profiles(cfg, key):
    duration = float(cfg["profiles"]["duration"])
    current = float(cfg["simulation"]["max_current"])
    out = []
    for item in cfg["profiles"][key]:
        item = dict(item)
        out.append(
            ProfileSpec(
                kind=item.pop("kind"),
                seed=int(item.pop("seed", 0)),
                max_current=float(item.pop("max_current", current)),
                duration=float(item.pop("duration", duration)),
                replay_path=item.pop("replay_path", None),
            )
        )
        if item:
            raise ConfigError(f"profiles.{key}: unknown fields {sorted(item)}")
    return out


def source_profiles(cfg):
    return _profiles(cfg, "source")


def evaluation_profiles(cfg):
    src = {p.profile_id for p in source_profiles(cfg)}
    ev = _profiles(cfg, "evaluation")
    leak = src & {p.profile_id for p in ev}
    if leak:
        raise ConfigError(f"evaluation profiles overlap the source sweep: {sorted(leak)}")
    return ev


def source_scenarios(cfg):
    sw = cfg["sweep"]
    eps = {k[len("epsilon_"):]: v for k, v in sw.items() if k.startswith("epsilon_")}
    return sweep(source_profiles(cfg), sw["coolant_temps"], eps, sw["backend"])


def train_config(cfg) -> TrainConfig:
    return TrainConfig(**cfg["train"])


def adapt_config(cfg) -> AdaptConfig:
    a = dict(cfg["adapt"])
    a["bandwidth_factors"] = tuple(a["bandwidth_factors"])
    a["tunable"] = tuple(a["tunable"])
    if a.get("bandwidths") is not None:
        a["bandwidths"] = tuple(a["bandwidths"])
    return AdaptConfig(**a)


def study_grid(cfg) -> dict:
    st = cfg["study"]
    return {
        p: list(st["electrical_epsilons"] if p in ("r0", "r1", "r0+r1") else st["thermal_epsilons"])
        for p in st["parameters"]
    }

"""JSON run configuration with strict key checking."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .cloud import ClusterParams
from .postfilter import FilterParams
from .project import ProjectionParams
from .simgen import LidarModel
from .teleop import FollowGains, TeleopParams, VehicleLimits
from .track import KalmanParams

ENV_VAR = "GESTUREPIPE_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    pose_weights: str | None = None
    gesture_weights: str | None = None
    gesture_map: str | None = None  # None = packaged default
    cluster: ClusterParams = ClusterParams()
    kalman: KalmanParams = KalmanParams()
    projection: ProjectionParams = ProjectionParams()
    filter: FilterParams = FilterParams()
    teleop: TeleopParams = TeleopParams()
    follow: FollowGains = FollowGains()
    vehicle: VehicleLimits = VehicleLimits()
    lidar: LidarModel = LidarModel()
    base_dir: str = field(default=".", compare=False)

    def resolve(self, path: str | None) -> str | None:
        if path is None:
            return None
        p = Path(path)
        return str(p if p.is_absolute() else Path(self.base_dir) / p)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


_BLOCKS = {
    "cluster": ClusterParams,
    "kalman": KalmanParams,
    "projection": ProjectionParams,
    "filter": FilterParams,
    "teleop": TeleopParams,
    "follow": FollowGains,
    "vehicle": VehicleLimits,
    "lidar": LidarModel,
}
_PATH_KEYS = ("pose_weights", "gesture_weights", "gesture_map")


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kw = {}
    for k, v in data.items():
        kw[k] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict, base_dir: str = ".", check_files: bool = True) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    allowed = set(_BLOCKS) | {"seed", *_PATH_KEYS}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}")
    kw = {"base_dir": base_dir}
    for k, v in data.items():
        if k in _BLOCKS:
            kw[k] = _build(_BLOCKS[k], v, k)
        elif k == "seed":
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError("seed must be an integer")
            kw[k] = v
        else:
            if v is not None and not isinstance(v, str):
                raise ConfigError(f"{k} must be a path string")
            kw[k] = v
    cfg = PipelineConfig(**kw)
    if check_files:
        for k in _PATH_KEYS:
            p = cfg.resolve(getattr(cfg, k))
            if p is not None and not os.path.exists(p):
                raise FileNotFoundError(f"{k}: {p} does not exist")
    return cfg


def load_config(path: str | None = None, check_files: bool = True) -> PipelineConfig:
    """Load ``path``, else ``$GESTUREPIPE_CONFIG``, else defaults."""
    path = path or os.environ.get(ENV_VAR)
    if not path:
        return PipelineConfig()
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(data, str(Path(path).resolve().parent), check_files)

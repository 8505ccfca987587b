"""Run configuration: flat JSON, snake_case keys, unknown keys rejected."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .augment import AugmentConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # augmentation
    scale_range: tuple[float, float] = (0.8, 1.2)
    rotation_deg: tuple[float, float] = (-15.0, 15.0)
    mixup_range: tuple[float, float] = (0.2, 0.4)
    target_size: int = 640
    noise_sigma: tuple[float, float] = (0.01, 0.05)
    brightness_range: tuple[float, float] = (0.6, 1.4)
    contrast_range: tuple[float, float] = (0.6, 1.4)
    saturation_range: tuple[float, float] = (0.6, 1.4)
    min_visible_frac: float = 0.25
    pad_value: float = 114 / 255
    mosaic_center_range: tuple[float, float] = (0.5, 1.5)
    mixup_prob: float = 0.5
    # anchors
    anchor_k: int = 9
    anchor_max_iter: int = 300
    anchor_img_size: int = 640
    # evaluation
    iou_thresh: float = 0.5
    conf_thresh: float = 0.25
    # bench / gradcheck
    bench_iters: int = 10
    bench_warmup: int = 2
    bench_channels: int = 16
    gradcheck_trials: int = 100
    # training hyper-parameters, recorded only
    learning_rate: float = 0.0005
    batch_size: int = 32
    momentum: float = 0.9
    weight_decay: float = 0.0001
    optimizer: str = "adam"
    # paths
    in_dir: str | None = None
    out_dir: str | None = None
    labels_dir: str | None = None
    gt_dir: str | None = None
    pred_dir: str | None = None
    out_file: str | None = None

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                object.__setattr__(self, f.name, tuple(v))
        try:
            self.augment_config()
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None
        if not 0 < self.iou_thresh < 1:
            raise ConfigError("iou_thresh must lie in (0, 1)")
        if not 0 <= self.conf_thresh <= 1:
            raise ConfigError("conf_thresh must lie in [0, 1]")
        if self.anchor_k < 1:
            raise ConfigError("anchor_k must be >= 1")

    def augment_config(self) -> AugmentConfig:
        names = {f.name for f in fields(AugmentConfig)}
        return AugmentConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def with_overrides(self, **kw) -> "RunConfig":
        data = asdict(self)
        data.update({k: v for k, v in kw.items() if v is not None})
        return RunConfig(**data)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return RunConfig(**data)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def augment_dict(cfg: AugmentConfig) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()}


def config_hash(cfg: AugmentConfig) -> str:
    blob = json.dumps(augment_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()

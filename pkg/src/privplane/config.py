"""Experiment configuration files.

Configs are YAML with six sections: ``dataset``, ``model``, ``training``,
``ppp``, ``render`` and ``output`` (plus top-level ``name``, ``seed``,
``capture`` and ``jobs``). Every string value goes through ``$VAR`` /
``${VAR}`` environment substitution, so dataset paths are usually written
relative to ``$PRIVPLANE_DATA``. See ``presets/`` for complete examples.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Dict, List, Optional, Sequence, Tuple

import yaml

from .activations import ActivationSpec, Kind
from .model import DEFAULT_EPOCH_INCREMENTS, TrainConfig, truncate_schedule
from .ppp import Mode, PppConfig

DATA_ENV = "PRIVPLANE_DATA"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    source: str = "mnist"  # mnist | cifar10 | mnist-subset
    train_images: Optional[str] = None
    test_images: Optional[str] = None
    train_files: Tuple[str, ...] = ()
    test_files: Tuple[str, ...] = ()
    train_limit: Optional[int] = None
    test_limit: Optional[int] = None
    normalize: Tuple[bool, ...] = (False,)


@dataclass(frozen=True)
class ModelGrid:
    widths: Tuple[int, ...] = (18,)
    depths: Tuple[int, ...] = (0,)
    kinds: Tuple[Kind, ...] = (Kind.STANDARD_TANH, Kind.ISOTROPIC_TANH)
    alpha_slope: float = 1e-2
    eps_ball: float = 1.0

    def activation(self, kind: Kind) -> ActivationSpec:
        return ActivationSpec(kind, self.alpha_slope, self.eps_ball)


@dataclass(frozen=True)
class TrainingSpec:
    learning_rate: float = 0.08
    momentum: float = 0.9
    batch_size: int = 24
    epoch_increments: Tuple[int, ...] = DEFAULT_EPOCH_INCREMENTS
    total_epochs: Optional[int] = None
    repeats: int = 5

    def schedule(self) -> Tuple[int, ...]:
        if self.total_epochs is None:
            return tuple(self.epoch_increments)
        return truncate_schedule(self.epoch_increments, self.total_epochs)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.momentum, self.batch_size, self.schedule(), seed)


@dataclass(frozen=True)
class CaptureSpec:
    layers: Tuple[int, ...] = (0,)
    split: str = "train"
    initial: bool = True


@dataclass(frozen=True)
class RenderSpec:
    resolution: int = 513
    sigma_fraction: float = 1.0 / 128.0
    formats: Tuple[str, ...] = ("png",)
    tiles: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelGrid = field(default_factory=ModelGrid)
    training: TrainingSpec = field(default_factory=TrainingSpec)
    capture: CaptureSpec = field(default_factory=CaptureSpec)
    ppp: PppConfig = field(default_factory=PppConfig)
    half_angle: float = 10.0
    render: RenderSpec = field(default_factory=RenderSpec)
    output: str = "runs"
    jobs: int = 1

    def __post_init__(self):
        if self.training.repeats < 1:
            raise ConfigError("training.repeats must be at least 1")
        for k in self.capture.layers:
            if k < 0 or any(k > d for d in self.model.depths):
                raise ConfigError(f"capture layer {k} exceeds a configured depth {list(self.model.depths)}")


def _expand(obj):
    if isinstance(obj, str):
        return os.path.expandvars(obj)
    if isinstance(obj, list):
        return [_expand(x) for x in obj]
    if isinstance(obj, dict):
        return {k: _expand(v) for k, v in obj.items()}
    return obj


def _tuple(x, conv=lambda v: v) -> tuple:
    if x is None:
        return ()
    if isinstance(x, (list, tuple)):
        return tuple(conv(v) for v in x)
    return (conv(x),)


def _known(section: str, d: dict, allowed: Sequence[str]):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")


def from_dict(doc: Dict[str, Any]) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")
    doc = _expand(copy.deepcopy(doc))
    _known("config", doc, ["name", "seed", "dataset", "model", "training", "capture", "ppp", "render", "output", "jobs"])
    try:
        ds = doc.get("dataset", {}) or {}
        _known("dataset", ds, ["source", "train_images", "test_images", "train_files", "test_files", "train_limit", "test_limit", "normalize"])
        dataset = DatasetSpec(
            source=str(ds.get("source", "mnist")),
            train_images=ds.get("train_images"),
            test_images=ds.get("test_images"),
            train_files=_tuple(ds.get("train_files"), str),
            test_files=_tuple(ds.get("test_files"), str),
            train_limit=ds.get("train_limit"),
            test_limit=ds.get("test_limit"),
            normalize=_tuple(ds.get("normalize", False), bool),
        )
        md = doc.get("model", {}) or {}
        _known("model", md, ["widths", "depths", "kinds", "alpha_slope", "eps_ball"])
        model = ModelGrid(
            widths=_tuple(md.get("widths", 18), int),
            depths=_tuple(md.get("depths", 0), int),
            kinds=_tuple(md.get("kinds", ["standard-tanh", "isotropic-tanh"]), Kind),
            alpha_slope=float(md.get("alpha_slope", 1e-2)),
            eps_ball=float(md.get("eps_ball", 1.0)),
        )
        tr = doc.get("training", {}) or {}
        _known("training", tr, ["learning_rate", "momentum", "batch_size", "epoch_increments", "total_epochs", "repeats"])
        training = TrainingSpec(
            learning_rate=float(tr.get("learning_rate", 0.08)),
            momentum=float(tr.get("momentum", 0.9)),
            batch_size=int(tr.get("batch_size", 24)),
            epoch_increments=_tuple(tr.get("epoch_increments", list(DEFAULT_EPOCH_INCREMENTS)), int),
            total_epochs=tr.get("total_epochs"),
            repeats=int(tr.get("repeats", 5)),
        )
        cp = doc.get("capture", {}) or {}
        _known("capture", cp, ["layers", "split", "initial"])
        capture = CaptureSpec(_tuple(cp.get("layers", 0), int), str(cp.get("split", "train")), bool(cp.get("initial", True)))
        pp = doc.get("ppp", {}) or {}
        _known("ppp", pp, ["epsilon", "mode", "subsample_exponent", "subsample_threshold", "half_angle"])
        ppp = PppConfig(
            epsilon=float(pp.get("epsilon", 0.75)),
            mode=Mode(pp.get("mode", "combination")),
            subsample_exponent=float(pp.get("subsample_exponent", 0.9)),
            subsample_threshold=int(pp.get("subsample_threshold", 10_000)),
        )
        rd = doc.get("render", {}) or {}
        _known("render", rd, ["resolution", "sigma_fraction", "formats", "tiles"])
        render = RenderSpec(
            resolution=int(rd.get("resolution", 513)),
            sigma_fraction=float(rd.get("sigma_fraction", 1.0 / 128.0)),
            formats=_tuple(rd.get("formats", "png"), str),
            tiles=bool(rd.get("tiles", False)),
        )
        return ExperimentConfig(
            name=str(doc.get("name", "experiment")),
            seed=int(doc.get("seed", 0)),
            dataset=dataset,
            model=model,
            training=training,
            capture=capture,
            ppp=ppp,
            half_angle=float(pp.get("half_angle", 10.0)),
            render=render,
            output=str(doc.get("output", "runs")),
            jobs=int(doc.get("jobs", 1)),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(doc or {})


def preset_path(name: str) -> str:
    return str(resources.files("privplane") / "presets" / f"{name}.yaml")


def to_dict(cfg: ExperimentConfig) -> dict:
    """Plain-data view for manifests and sidecars."""
    ds, md, tr = cfg.dataset, cfg.model, cfg.training
    return {
        "name": cfg.name,
        "seed": cfg.seed,
        "dataset": {
            "source": ds.source,
            "train_limit": ds.train_limit,
            "test_limit": ds.test_limit,
            "normalize": list(ds.normalize),
        },
        "model": {
            "widths": list(md.widths),
            "depths": list(md.depths),
            "kinds": [k.value for k in md.kinds],
            "alpha_slope": md.alpha_slope,
            "eps_ball": md.eps_ball,
        },
        "training": {
            "learning_rate": tr.learning_rate,
            "momentum": tr.momentum,
            "batch_size": tr.batch_size,
            "epoch_increments": list(tr.schedule()),
            "repeats": tr.repeats,
        },
        "capture": {"layers": list(cfg.capture.layers), "split": cfg.capture.split, "initial": cfg.capture.initial},
        "ppp": {
            "epsilon": cfg.ppp.epsilon,
            "mode": cfg.ppp.mode.value,
            "subsample_exponent": cfg.ppp.subsample_exponent,
            "subsample_threshold": cfg.ppp.subsample_threshold,
            "half_angle": cfg.half_angle,
        },
        "render": {"resolution": cfg.render.resolution, "sigma_fraction": cfg.render.sigma_fraction},
    }

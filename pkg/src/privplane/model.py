"""Fully-connected autoencoder with manual backpropagation and momentum SGD.

Layout (weights stored ``(out, in)``)::

    x -> encoder affine -> z_0 -> [f -> hidden affine -> z_k] * L -> f -> decoder affine -> y

``z_k`` is the latent captured at layer ``k``: post-affine, pre-activation.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import activations
from .activations import ActivationSpec
from .errors import DimensionMismatch, MissingCapture
from .formats import ensure_dir, read_latent, write_latent
from .numerics import rng_stream

DEFAULT_EPOCH_INCREMENTS = (1, 1, 2, 2, 2, 5, 5, 6, 6, 10, 10, 10, 15, 15, 15, 20)


def cumulative_checkpoints(increments: Sequence[int]) -> List[int]:
    return [int(x) for x in np.cumsum(increments)]


def truncate_schedule(increments: Sequence[int], total_epochs: int) -> Tuple[int, ...]:
    """Cut an increment schedule at ``total_epochs``, shortening the last increment if needed."""
    out, acc = [], 0
    for inc in increments:
        if acc >= total_epochs:
            break
        step = min(inc, total_epochs - acc)
        out.append(step)
        acc += step
    if acc < total_epochs:
        out.append(total_epochs - acc)
    return tuple(out)


@dataclass(frozen=True)
class AutoencoderConfig:
    input_dim: int
    width: int
    depth: int = 0
    activation: ActivationSpec = field(default_factory=lambda: ActivationSpec(activations.Kind.STANDARD_TANH))

    def __post_init__(self):
        if self.input_dim < 1 or self.width < 1:
            raise ValueError("input_dim and width must be positive")
        if self.depth < 0:
            raise ValueError("depth must be non-negative")

    def to_dict(self) -> dict:
        act = self.activation
        return {
            "input_dim": self.input_dim,
            "width": self.width,
            "depth": self.depth,
            "activation": {"kind": act.kind.value, "alpha_slope": act.alpha_slope, "eps_ball": act.eps_ball},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AutoencoderConfig":
        a = d["activation"]
        act = ActivationSpec(activations.Kind(a["kind"]), a.get("alpha_slope", 1e-2), a.get("eps_ball", 1.0))
        return cls(int(d["input_dim"]), int(d["width"]), int(d.get("depth", 0)), act)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.08
    momentum: float = 0.9
    batch_size: int = 24
    epoch_increments: Tuple[int, ...] = DEFAULT_EPOCH_INCREMENTS
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["epoch_increments"] = list(self.epoch_increments)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "epoch_increments" in d:
            d["epoch_increments"] = tuple(int(x) for x in d["epoch_increments"])
        return cls(**d)


@dataclass
class Autoencoder:
    """Parameters are the flat list ``[W_enc, b_enc, W_1, b_1, ..., W_dec, b_dec]``."""

    config: AutoencoderConfig
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @property
    def activation(self) -> ActivationSpec:
        return self.config.activation

    def parameters(self) -> List[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def copy(self) -> "Autoencoder":
        return Autoencoder(self.config, [W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def fingerprint(self) -> str:
        """SHA-256 over all parameter bytes."""
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()


def layer_shapes(config: AutoencoderConfig) -> List[Tuple[int, int]]:
    n, d = config.width, config.input_dim
    return [(n, d)] + [(n, n)] * config.depth + [(d, n)]


def init_xavier(config: AutoencoderConfig, rng: np.random.Generator) -> Autoencoder:
    """Xavier-normal weights (gain 1) and zero biases, float64."""
    weights, biases = [], []
    for fan_out, fan_in in layer_shapes(config):
        std = math.sqrt(2.0 / (fan_in + fan_out))
        weights.append(rng.standard_normal((fan_out, fan_in)) * std)
        biases.append(np.zeros(fan_out))
    return Autoencoder(config, weights, biases)


def _forward(model: Autoencoder, X: np.ndarray):
    f = model.activation
    zs, acts = [], []
    z = X @ model.weights[0].T + model.biases[0]
    zs.append(z)
    for W, b in zip(model.weights[1:-1], model.biases[1:-1]):
        a = activations.apply(f, z)
        acts.append(a)
        z = a @ W.T + b
        zs.append(z)
    a = activations.apply(f, z)
    acts.append(a)
    y = a @ model.weights[-1].T + model.biases[-1]
    return y, zs, acts


def _check_input(model: Autoencoder, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != model.config.input_dim:
        raise DimensionMismatch(f"input has {X.shape[-1]} features, model expects {model.config.input_dim}")
    return X


def forward_collect(model: Autoencoder, x) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Reconstruction and the ``L + 1`` latents for one vector or a batch of rows."""
    x = _check_input(model, x)
    single = x.ndim == 1
    y, zs, _ = _forward(model, np.atleast_2d(x))
    if single:
        return y[0], [z[0] for z in zs]
    return y, zs


def reconstruct(model: Autoencoder, X, chunk: int = 4096) -> np.ndarray:
    X = _check_input(model, X)
    return np.concatenate([_forward(model, X[i:i + chunk])[0] for i in range(0, len(X), chunk)])


def capture_latents(model: Autoencoder, X, layers: Sequence[int], chunk: int = 4096) -> Dict[int, np.ndarray]:
    """Latent matrices for the requested layer indices; never touches parameters."""
    X = _check_input(model, X)
    for k in layers:
        if not 0 <= k <= model.config.depth:
            raise MissingCapture(f"layer {k} outside 0..{model.config.depth}")
    parts: Dict[int, List[np.ndarray]] = {k: [] for k in layers}
    for i in range(0, len(X), chunk):
        _, zs, _ = _forward(model, X[i:i + chunk])
        for k in layers:
            parts[k].append(zs[k])
    return {k: np.concatenate(v) for k, v in parts.items()}


def mse_loss(y, t) -> float:
    """Mean of squared errors over every element (for a batch: mean of per-sample means)."""
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if y.shape != t.shape:
        raise DimensionMismatch(f"shapes {y.shape} and {t.shape} differ")
    return float(np.mean((y - t) ** 2))


def dataset_error(model: Autoencoder, X, chunk: int = 4096) -> float:
    X = _check_input(model, X)
    total = 0.0
    for i in range(0, len(X), chunk):
        xb = X[i:i + chunk]
        total += float(np.sum((_forward(model, xb)[0] - xb) ** 2))
    return total / X.size


def backward(model: Autoencoder, X, T) -> Tuple[float, List[np.ndarray]]:
    """Batch-mean MSE and its gradient for each entry of ``model.parameters()``."""
    X = _check_input(model, X)
    T = np.asarray(T, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("backward needs a non-empty 2-d batch")
    if T.shape != (len(X), model.weights[-1].shape[0]):
        raise DimensionMismatch(f"targets of shape {T.shape} do not match outputs")
    f = model.activation
    y, zs, acts = _forward(model, X)
    diff = y - T
    loss = float(np.mean(diff * diff))
    delta = (2.0 / diff.size) * diff

    L = model.config.depth
    grads: List[Optional[np.ndarray]] = [None] * (2 * (L + 2))
    # decoder
    grads[-2] = delta.T @ acts[L]
    grads[-1] = delta.sum(axis=0)
    dz = activations.jvp(f, zs[L], delta @ model.weights[-1])
    for k in range(L, 0, -1):
        grads[2 * k] = dz.T @ acts[k - 1]
        grads[2 * k + 1] = dz.sum(axis=0)
        dz = activations.jvp(f, zs[k - 1], dz @ model.weights[k])
    grads[0] = dz.T @ X
    grads[1] = dz.sum(axis=0)
    return loss, grads


def sgd_momentum_step(params: List[np.ndarray], velocity: List[np.ndarray], grads: List[np.ndarray], lr: float, mu: float):
    """Heavy-ball update ``v <- mu v + g; p <- p - lr v``, in place. Returns ``(params, velocity)``."""
    if not (len(params) == len(velocity) == len(grads)):
        raise DimensionMismatch("params, velocity and grads differ in length")
    for p, v, g in zip(params, velocity, grads):
        if p.shape != v.shape or p.shape != g.shape:
            raise DimensionMismatch(f"shape mismatch {p.shape} / {v.shape} / {g.shape}")
        v *= mu
        v += g
        p -= lr * v
    return params, velocity


@dataclass
class Checkpoint:
    epoch: int
    train_error: float
    test_error: Optional[float]
    param_sha256: str
    latents: Dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    metrics: Dict[str, float] = field(default_factory=dict)


@dataclass
class RunManifest:
    model_config: AutoencoderConfig
    train_config: TrainConfig
    checkpoints: List[Checkpoint]
    initial: Optional[Checkpoint] = None
    meta: dict = field(default_factory=dict)
    wall_clock: List[float] = field(default_factory=list, repr=False)
    model: Optional[Autoencoder] = field(default=None, repr=False)

    @property
    def epochs(self) -> List[int]:
        return [c.epoch for c in self.checkpoints]

    def all_checkpoints(self) -> List[Checkpoint]:
        return ([self.initial] if self.initial is not None else []) + list(self.checkpoints)

    def checkpoint(self, epoch: int) -> Checkpoint:
        for c in self.all_checkpoints():
            if c.epoch == epoch:
                return c
        raise KeyError(f"no checkpoint at epoch {epoch}")


def train(
    config: AutoencoderConfig,
    train_config: TrainConfig,
    train_data: np.ndarray,
    test_data: Optional[np.ndarray] = None,
    capture_layers: Sequence[int] = (0,),
    capture_data: Optional[np.ndarray] = None,
    capture_initial: bool = True,
    on_checkpoint: Optional[Callable[[Checkpoint], None]] = None,
    extra_metrics: Optional[Callable[[Autoencoder], Dict[str, float]]] = None,
) -> RunManifest:
    """Train by minibatch momentum SGD and capture latents after every scheduled increment.

    ``capture_data`` defaults to the training samples. Initialisation and
    shuffling draw from separate streams of ``train_config.seed``.
    """
    X = np.asarray(train_data, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("training data must be a non-empty 2-d array")
    if X.shape[1] != config.input_dim:
        raise DimensionMismatch(f"training data has {X.shape[1]} features, config says {config.input_dim}")
    capture_layers = tuple(sorted(set(int(k) for k in capture_layers)))
    for k in capture_layers:
        if not 0 <= k <= config.depth:
            raise ValueError(f"capture layer {k} outside 0..{config.depth}")
    C = X if capture_data is None else np.asarray(capture_data, dtype=np.float64)
    tc = train_config

    model = init_xavier(config, rng_stream(tc.seed, "init"))
    shuffle_rng = rng_stream(tc.seed, "shuffle")
    params = model.parameters()
    velocity = [np.zeros_like(p) for p in params]

    def snapshot(epoch: int) -> Checkpoint:
        ck = Checkpoint(
            epoch=epoch,
            train_error=dataset_error(model, X),
            test_error=None if test_data is None else dataset_error(model, test_data),
            param_sha256=model.fingerprint(),
            latents=capture_latents(model, C, capture_layers),
            metrics={} if extra_metrics is None else dict(extra_metrics(model)),
        )
        if on_checkpoint is not None:
            on_checkpoint(ck)
        return ck

    initial = snapshot(0) if capture_initial else None
    checkpoints, clock = [], []
    epoch = 0
    bs = tc.batch_size
    for inc in tc.epoch_increments:
        t0 = time.perf_counter()
        for _ in range(inc):
            order = shuffle_rng.permutation(len(X))
            for start in range(0, len(X), bs):
                xb = X[order[start:start + bs]]
                _, grads = backward(model, xb, xb)
                sgd_momentum_step(params, velocity, grads, tc.learning_rate, tc.momentum)
            epoch += 1
        checkpoints.append(snapshot(epoch))
        clock.append(time.perf_counter() - t0)
    return RunManifest(config, tc, checkpoints, initial, wall_clock=clock, model=model)


def steps_per_epoch(n_samples: int, batch_size: int) -> int:
    return math.ceil(n_samples / batch_size)


# -- persistence ------------------------------------------------------------

def _latent_name(epoch: int, layer: int) -> str:
    return f"epoch_{epoch:04d}_layer_{layer}.pppl"


def _ck_meta(c: Checkpoint) -> dict:
    return {
        "epoch": c.epoch,
        "train_error": c.train_error,
        "test_error": c.test_error,
        "param_sha256": c.param_sha256,
        "metrics": c.metrics,
        "latents": {str(k): os.path.join("latents", _latent_name(c.epoch, k)) for k in sorted(c.latents)},
    }


def save_manifest(manifest: RunManifest, directory) -> str:
    """Write ``manifest.json``, one ``.pppl`` per captured latent, and ``timing.json``.

    Only ``timing.json`` depends on the machine; everything else is a pure
    function of config and seed.
    """
    ensure_dir(os.path.join(directory, "latents"))
    for c in manifest.all_checkpoints():
        for k, Z in sorted(c.latents.items()):
            write_latent(os.path.join(directory, "latents", _latent_name(c.epoch, k)), Z)
    doc = {
        "format": "privplane-run/1",
        "model": manifest.model_config.to_dict(),
        "train": manifest.train_config.to_dict(),
        "seed": manifest.train_config.seed,
        "meta": manifest.meta,
        "initial": None if manifest.initial is None else _ck_meta(manifest.initial),
        "checkpoints": [_ck_meta(c) for c in manifest.checkpoints],
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(directory, "timing.json"), "w") as fh:
        json.dump({"wall_clock_seconds": manifest.wall_clock}, fh, indent=2)
        fh.write("\n")
    return str(directory)


def _load_ck(directory, d: dict) -> Checkpoint:
    lat = {int(k): read_latent(os.path.join(directory, p)) for k, p in d["latents"].items()}
    return Checkpoint(d["epoch"], d["train_error"], d["test_error"], d["param_sha256"], lat, d.get("metrics", {}))


def load_manifest(directory) -> RunManifest:
    with open(os.path.join(directory, "manifest.json")) as fh:
        doc = json.load(fh)
    clock = []
    tpath = os.path.join(directory, "timing.json")
    if os.path.exists(tpath):
        with open(tpath) as fh:
            clock = json.load(fh).get("wall_clock_seconds", [])
    return RunManifest(
        model_config=AutoencoderConfig.from_dict(doc["model"]),
        train_config=TrainConfig.from_dict(doc["train"]),
        checkpoints=[_load_ck(directory, c) for c in doc["checkpoints"]],
        initial=None if doc.get("initial") is None else _load_ck(directory, doc["initial"]),
        meta=doc.get("meta", {}),
        wall_clock=clock,
    )

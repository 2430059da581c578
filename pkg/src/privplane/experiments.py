"""Named experiment protocols: activation ablations, PPP artefact controls, error reports.

Every output lands under the configured output directory:

``runs/<run_id>/``
    training manifest (``manifest.json``, ``latents/``, ``timing.json``),
    ``records/epoch_XXXX_layer_K.pppr`` plus ``.json`` summaries.
``montage_<group>_layer<K>.png``
    rows = runs, columns = checkpoints, colour thresholds shared per row.
``alignment.csv``
    one row per (run, layer, checkpoint) with record counts and axis concentration.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import data as datamod
from . import ppp, render
from .activations import Kind
from .config import DATA_ENV, ExperimentConfig, to_dict
from .data import Dataset, NormalizationStats
from .errors import EmptyInput
from .formats import ensure_dir, write_records
from .model import AutoencoderConfig, RunManifest, dataset_error, load_manifest, reconstruct, save_manifest, train
from .numerics import child_seed, rng_stream
from .plotting import KIND_COLORS, error_curves_figure, figure_png, histogram_figure

log = logging.getLogger(__name__)


class DatasetError(OSError):
    pass


# -- datasets ----------------------------------------------------------------

def cache_dir() -> str:
    return os.environ.get("PRIVPLANE_CACHE", os.path.join(os.path.expanduser("~"), ".cache", "privplane"))


def _require(path: Optional[str], what: str) -> str:
    if not path:
        raise DatasetError(f"dataset.{what} is not set")
    if "$" in path:
        raise DatasetError(f"unresolved environment variable in dataset.{what}: {path!r} (set ${DATA_ENV}?)")
    if not os.path.exists(path):
        raise DatasetError(f"dataset file not found: {path}")
    return path


def load_datasets(spec) -> Tuple[Dataset, Dataset]:
    """Train and test splits for a :class:`~privplane.config.DatasetSpec`."""
    src = spec.source
    if src == "mnist-subset":
        d = os.path.join(cache_dir(), "mnist-subset")
        tr, te = os.path.join(d, "train-images-idx3-ubyte"), os.path.join(d, "t10k-images-idx3-ubyte")
        if not (os.path.exists(tr) and os.path.exists(te)):
            try:
                datamod.export_mlxtend_mnist(d)
            except ImportError as exc:
                raise DatasetError("source 'mnist-subset' needs the optional mlxtend package") from exc
        train_ds = datamod.load_mnist_idx(tr, limit=spec.train_limit)
        test_ds = datamod.load_mnist_idx(te, limit=spec.test_limit)
    elif src == "mnist":
        train_ds = datamod.load_mnist_idx(_require(spec.train_images, "train_images"), limit=spec.train_limit)
        test_ds = datamod.load_mnist_idx(_require(spec.test_images, "test_images"), limit=spec.test_limit)
    elif src == "cifar10":
        if not spec.train_files or not spec.test_files:
            raise DatasetError("cifar10 needs dataset.train_files and dataset.test_files")
        train_ds = datamod.load_cifar10_bin([_require(p, "train_files") for p in spec.train_files], limit=spec.train_limit)
        test_ds = datamod.load_cifar10_bin([_require(p, "test_files") for p in spec.test_files], limit=spec.test_limit)
    else:
        raise DatasetError(f"unknown dataset source {src!r}")
    return train_ds, test_ds


# -- ablation ----------------------------------------------------------------

@dataclass(frozen=True)
class RunSpec:
    kind: Kind
    width: int
    depth: int
    normalized: bool
    repeat: int
    seed: int

    @property
    def run_id(self) -> str:
        return f"{self.kind.value}-w{self.width}-d{self.depth}-{'norm' if self.normalized else 'raw'}-r{self.repeat}"

    @property
    def group(self) -> str:
        return f"w{self.width}-d{self.depth}-{'norm' if self.normalized else 'raw'}"


def plan_runs(cfg: ExperimentConfig) -> List[RunSpec]:
    """Grid of runs. Repeat ``r`` uses the same seed for every kind, width, depth and normalisation."""
    runs = []
    for normalized in cfg.dataset.normalize:
        for width in cfg.model.widths:
            for depth in cfg.model.depths:
                for kind in cfg.model.kinds:
                    for r in range(cfg.training.repeats):
                        runs.append(RunSpec(kind, width, depth, normalized, r, child_seed(cfg.seed, "repeat", r)))
    return runs


@dataclass
class RunResult:
    spec: RunSpec
    directory: str
    rows: List[dict]
    plotted: Dict[int, List[Tuple[int, np.ndarray]]] = field(repr=False, default_factory=dict)


def _records_dir(run_dir: str) -> str:
    return ensure_dir(os.path.join(run_dir, "records"))


def project_checkpoint(latents: np.ndarray, cfg_ppp: ppp.PppConfig, planes) -> np.ndarray:
    return ppp.project_representations(latents, planes, cfg_ppp.epsilon)


def analyse_manifest(manifest: RunManifest, run_dir: str, cfg_ppp: ppp.PppConfig, half_angle: float, layers: Sequence[int], subsample_seed: int, run_id: str = "") -> Tuple[List[dict], Dict[int, List[Tuple[int, np.ndarray]]]]:
    """PPP over every captured checkpoint: writes record tables and returns stats rows plus plotted coordinates."""
    rows, plotted = [], {}
    rdir = _records_dir(run_dir)
    for k in layers:
        plotted[k] = []
        for ck in manifest.all_checkpoints():
            if k not in ck.latents:
                continue
            Z = ck.latents[k]
            planes = ppp.enumerate_planes(ppp.standard_basis(Z.shape[1]), cfg_ppp.mode)
            recs = ppp.project_representations(Z, planes, cfg_ppp.epsilon)
            stem = os.path.join(rdir, f"epoch_{ck.epoch:04d}_layer_{k}")
            write_records(stem + ".pppr", recs)
            sub = ppp.subsample(
                recs, cfg_ppp.subsample_exponent, rng_stream(child_seed(subsample_seed, "subsample", ck.epoch, k), "subsample"), cfg_ppp.subsample_threshold
            )
            try:
                conc = ppp.axis_concentration(recs, half_angle)
            except EmptyInput:
                conc = float("nan")
            with open(stem + ".json", "w") as fh:
                json.dump(ppp.summary(recs, cfg_ppp, len(planes), len(Z), {"epoch": ck.epoch, "layer": k, "plotted": len(sub)}), fh, indent=2, sort_keys=True)
                fh.write("\n")
            plotted[k].append((ck.epoch, np.array(sub["w"])))
            rows.append({
                "run_id": run_id,
                "layer": k,
                "epoch": ck.epoch,
                "records": len(recs),
                "plotted": len(sub),
                "axis_concentration": conc,
                "train_error": ck.train_error,
                "test_error": ck.test_error,
                "renormalized_test_error": ck.metrics.get("renormalized_test_error"),
            })
    return rows, plotted


_SHARED: dict = {}


def _prepare_data(cfg: ExperimentConfig):
    train_raw, test_raw = load_datasets(cfg.dataset)
    stats = datamod.compute_normalization(train_raw)
    return train_raw, test_raw, stats


def _splits(normalized: bool, train_raw: Dataset, test_raw: Dataset, stats: NormalizationStats):
    if normalized:
        return datamod.apply_normalization(train_raw, stats).samples, datamod.apply_normalization(test_raw, stats).samples
    return train_raw.samples, test_raw.samples


def execute_run(cfg: ExperimentConfig, spec: RunSpec, train_raw: Dataset, test_raw: Dataset, stats: NormalizationStats) -> RunResult:
    X, T = _splits(spec.normalized, train_raw, test_raw, stats)
    mcfg = AutoencoderConfig(X.shape[1], spec.width, spec.depth, cfg.model.activation(spec.kind))
    tcfg = cfg.training.train_config(spec.seed)
    layers = [k for k in cfg.capture.layers if k <= spec.depth]
    capture = X if cfg.capture.split == "train" else T

    def comparable(model):
        if spec.normalized:
            return {"renormalized_test_error": dataset_error(model, T)}
        out = reconstruct(model, T)
        return {"renormalized_test_error": datamod.renormalized_error(out, T, stats)}

    log.info("training %s", spec.run_id)
    manifest = train(mcfg, tcfg, X, T, layers, capture, cfg.capture.initial, extra_metrics=comparable)
    manifest.meta = {
        "run_id": spec.run_id,
        "kind": spec.kind.value,
        "width": spec.width,
        "depth": spec.depth,
        "normalized": spec.normalized,
        "repeat": spec.repeat,
        "dataset": cfg.dataset.source,
        "train_samples": int(len(X)),
        "test_samples": int(len(T)),
        "capture_split": cfg.capture.split,
    }
    run_dir = os.path.join(cfg.output, "runs", spec.run_id)
    save_manifest(manifest, run_dir)
    rows, plotted = analyse_manifest(manifest, run_dir, cfg.ppp, cfg.half_angle, layers, spec.seed, spec.run_id)
    for r in rows:
        r.update(kind=spec.kind.value, width=spec.width, depth=spec.depth, normalized=spec.normalized, repeat=spec.repeat, seed=spec.seed)
    return RunResult(spec, run_dir, rows, plotted)


def _pool_init(cfg):
    _SHARED["cfg"] = cfg
    _SHARED["data"] = _prepare_data(cfg)


def _pool_run(spec):
    return execute_run(_SHARED["cfg"], spec, *_SHARED["data"])


ALIGNMENT_COLUMNS = [
    "run_id", "kind", "width", "depth", "normalized", "repeat", "seed", "layer", "epoch",
    "records", "plotted", "axis_concentration", "train_error", "test_error", "renormalized_test_error",
]


def write_csv(path: str, rows: Iterable[dict], columns: Sequence[str]) -> str:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else (repr(r[k]) if isinstance(r.get(k), float) else r[k])) for k in columns})
    return path


def render_row(plotted: List[Tuple[int, np.ndarray]], resolution: int, sigma_fraction: float):
    """Grids for one run's checkpoints with row-shared extent and colour scale."""
    extent = render.default_extent([w for _, w in plotted])
    grids = [render.accumulate_density(w, resolution, extent, extent * sigma_fraction) for _, w in plotted]
    scale = render.row_color_scale(grids)
    return grids, scale, extent


def render_montages(cfg: ExperimentConfig, results: List[RunResult]) -> List[str]:
    paths = []
    groups: Dict[Tuple[str, int], List[RunResult]] = {}
    for res in results:
        for k in res.plotted:
            groups.setdefault((res.spec.group, k), []).append(res)
    for (group, k), members in sorted(groups.items()):
        images, labels, cols, extents = [], [], [], []
        for res in members:
            # the untrained capture stays in the tables but would dominate a shared row scale
            shown = [p for p in res.plotted[k] if p[0] > 0] or res.plotted[k]
            grids, scale, extent = render_row(shown, cfg.render.resolution, cfg.render.sigma_fraction)
            rgb = [render.render_rgb(g, scale) for g in grids]
            if cfg.render.tiles:
                tdir = ensure_dir(os.path.join(res.directory, "tiles"))
                for (epoch, _), g in zip(shown, grids):
                    for fmt in cfg.render.formats:
                        with open(os.path.join(tdir, f"epoch_{epoch:04d}_layer_{k}.{fmt}"), "wb") as fh:
                            fh.write(render.render_grid(g, scale, fmt))
            images.append(rgb)
            labels.append(f"{res.spec.kind.value}\nr{res.spec.repeat}")
            cols.append([f"epoch {e}" for e, _ in shown])
            extents.append(extent)
        path = os.path.join(cfg.output, f"montage_{group}_layer{k}.png")
        with open(path, "wb") as fh:
            fh.write(render.montage(images, labels, cols, extents))
        with open(path[:-4] + ".json", "w") as fh:
            json.dump({
                "rows": [{"run_id": r.spec.run_id, "kind": r.spec.kind.value, "repeat": r.spec.repeat,
                          "epochs": [e for e, _ in r.plotted[k] if e > 0] or [e for e, _ in r.plotted[k]]} for r in members],
                "layer": k,
            }, fh, indent=2, sort_keys=True)
            fh.write("\n")
        paths.append(path)
    return paths


@dataclass
class AblationResult:
    output: str
    runs: List[RunResult]
    rows: List[dict]
    montages: List[str]

    def final_rows(self, layer: int = 0) -> List[dict]:
        out = []
        for res in self.runs:
            mine = [r for r in res.rows if r["layer"] == layer]
            if mine:
                out.append(max(mine, key=lambda r: r["epoch"]))
        return out


def run_ablation(cfg: ExperimentConfig, runs: Optional[Sequence[RunSpec]] = None, render_outputs: bool = True) -> AblationResult:
    """Train every run of the grid, project each checkpoint, render montages and write ``alignment.csv``."""
    ensure_dir(cfg.output)
    with open(os.path.join(cfg.output, "config.json"), "w") as fh:
        json.dump(to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
    runs = plan_runs(cfg) if runs is None else list(runs)
    if cfg.jobs > 1 and len(runs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs, initializer=_pool_init, initargs=(cfg,)) as pool:
            results = list(pool.map(_pool_run, runs))
    else:
        data = _prepare_data(cfg)
        results = [execute_run(cfg, spec, *data) for spec in runs]
    rows = [r for res in results for r in res.rows]
    write_csv(os.path.join(cfg.output, "alignment.csv"), rows, ALIGNMENT_COLUMNS)
    montages = render_montages(cfg, results) if render_outputs else []
    return AblationResult(cfg.output, results, rows, montages)


# -- statistical controls ----------------------------------------------------

class ControlKind(str, enum.Enum):
    GAUSSIAN_RANDOM_BASIS = "gaussian-random-basis"
    HYPERCUBE_EMBEDDED = "hypercube-embedded"
    HYPERCUBE_NORMALIZED_EMBEDDED = "hypercube-normalized-embedded"
    GAUSSIAN_EMBEDDED = "gaussian-embedded"


@dataclass(frozen=True)
class ControlSpec:
    kind: ControlKind = ControlKind.GAUSSIAN_RANDOM_BASIS
    dim: int = 24
    embed_dim: int = 24
    samples: int = 60_000
    repeats: int = 10
    seed: int = 0
    epsilon: float = 0.75
    mode: ppp.Mode = ppp.Mode.COMBINATION
    bins: int = 36
    half_angle: float = 10.0
    chunk: int = 5000

    def __post_init__(self):
        object.__setattr__(self, "kind", ControlKind(self.kind))
        object.__setattr__(self, "mode", ppp.Mode(self.mode))
        if self.samples < 1:
            raise ValueError("samples must be at least 1")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")


def _chunked_stats(dim: int, count: int, seed: int, chunk: int) -> NormalizationStats:
    """Population mean/std of the uniform stream, merged chunk by chunk."""
    n, mean, m2 = 0, np.zeros(dim), np.zeros(dim)
    for block in datamod.iter_uniform_chunks(dim, count, rng_stream(seed, "data"), chunk):
        b = len(block)
        bmean = block.mean(axis=0)
        bm2 = ((block - bmean) ** 2).sum(axis=0)
        delta = bmean - mean
        tot = n + b
        mean = mean + delta * (b / tot)
        m2 = m2 + bm2 + delta * delta * (n * b / tot)
        n = tot
    std = np.sqrt(m2 / n)
    std[std == 0] = 1.0
    return NormalizationStats(mean, std)


def control_samples(spec: ControlSpec, repeat: int) -> Tuple[np.ndarray, np.ndarray]:
    """Representations and privileged basis (rows) for one repeat.

    Data, embedding matrix and basis come from separate streams of the same
    repeat seed, so the hypercube variants of one repeat share samples,
    embedding and basis and differ only in normalisation.
    """
    seed = child_seed(spec.seed, "control", repeat)
    kind = spec.kind
    if kind is ControlKind.GAUSSIAN_RANDOM_BASIS:
        Z = rng_stream(seed, "data").standard_normal((spec.samples, spec.dim))
        return Z, ppp.haar_basis(spec.dim, rng_stream(seed, "basis"))
    target = spec.embed_dim
    M = rng_stream(seed, "embed").standard_normal((spec.dim, target))
    blocks = []
    if kind is ControlKind.GAUSSIAN_EMBEDDED:
        rng = rng_stream(seed, "data")
        for start in range(0, spec.samples, spec.chunk):
            blocks.append(rng.standard_normal((min(spec.chunk, spec.samples - start), spec.dim)) @ M)
    else:
        stats = _chunked_stats(spec.dim, spec.samples, seed, spec.chunk) if kind is ControlKind.HYPERCUBE_NORMALIZED_EMBEDDED else None
        for block in datamod.iter_uniform_chunks(spec.dim, spec.samples, rng_stream(seed, "data"), spec.chunk):
            if stats is not None:
                block = datamod.normalize_array(block, stats)
            blocks.append(block @ M)
    return np.concatenate(blocks), ppp.haar_basis(target, rng_stream(seed, "basis"))


@dataclass
class ControlResult:
    spec: ControlSpec
    rows: List[dict]
    records: List[np.ndarray] = field(repr=False, default_factory=list)
    images: List[str] = field(default_factory=list)


def run_control(spec: ControlSpec, output: Optional[str] = None, render_outputs: bool = True, resolution: int = 257) -> ControlResult:
    """Project synthetic data against a Haar-random basis and test angular uniformity per repeat."""
    rows, tables = [], []
    for r in range(spec.repeats):
        Z, B = control_samples(spec, r)
        planes = ppp.enumerate_planes(B, spec.mode)
        recs = ppp.project_representations(Z, planes, spec.epsilon)
        tables.append(recs)
        row = {"kind": spec.kind.value, "repeat": r, "samples": spec.samples, "records": len(recs)}
        try:
            counts = ppp.angular_histogram(recs, spec.bins)
            u = ppp.chi_square_uniformity(counts)
            row.update(chi_square=u.statistic, pvalue=u.pvalue, dof=u.dof,
                       axis_concentration=ppp.axis_concentration(recs, spec.half_angle), skipped="")
        except EmptyInput as exc:
            row.update(chi_square=None, pvalue=None, dof=spec.bins - 1, axis_concentration=None, skipped=str(exc))
        rows.append(row)
    result = ControlResult(spec, rows, tables)
    if output is not None:
        ensure_dir(output)
        stem = os.path.join(output, f"control_{spec.kind.value}")
        write_csv(stem + ".csv", rows, ["kind", "repeat", "samples", "records", "chi_square", "pvalue", "dof", "axis_concentration", "skipped"])
        for r, recs in enumerate(tables):
            write_records(f"{stem}_r{r}.pppr", recs)
        if render_outputs:
            sub = [ppp.subsample(t, 0.9, rng_stream(child_seed(spec.seed, "control-subsample", r), "subsample"), 10_000)["w"] for r, t in enumerate(tables)]
            extent = render.default_extent(sub)
            grids = [render.accumulate_density(w, resolution, extent, extent * render.SIGMA_FRACTION) for w in sub]
            scale = render.row_color_scale(grids)
            with open(stem + ".png", "wb") as fh:
                fh.write(render.montage([[render.render_rgb(g, scale) for g in grids]], [spec.kind.value], [f"repeat {r}" for r in range(len(grids))], [extent]))
            result.images.append(stem + ".png")
            for r, recs in enumerate(tables):
                if len(recs):
                    fig = histogram_figure(ppp.angular_histogram(recs, spec.bins), f"repeat {r}")
                    with open(f"{stem}_r{r}_hist.png", "wb") as fh:
                        fh.write(figure_png(fig))
    return result


# -- error report ------------------------------------------------------------

ERROR_COLUMNS = ["run_id", "kind", "normalized", "width", "depth", "repeat", "epoch", "test_error", "renormalized_test_error", "comparable_error"]
SUMMARY_COLUMNS = ["kind", "normalized", "width", "depth", "epoch", "seeds", "mean", "std"]


def find_manifests(root: str) -> List[str]:
    out = []
    for dirpath, _, files in os.walk(root):
        if "manifest.json" in files:
            out.append(dirpath)
    return sorted(out)


@dataclass
class ErrorReport:
    rows: List[dict]
    summary: List[dict]
    plots: List[str] = field(default_factory=list)


def error_rows(manifests: Sequence[RunManifest]) -> List[dict]:
    rows = []
    for man in manifests:
        m = man.meta
        for ck in man.all_checkpoints():
            ren = ck.metrics.get("renormalized_test_error")
            rows.append({
                "run_id": m.get("run_id", ""),
                "kind": m.get("kind", man.model_config.activation.kind.value),
                "normalized": bool(m.get("normalized", False)),
                "width": man.model_config.width,
                "depth": man.model_config.depth,
                "repeat": m.get("repeat", 0),
                "epoch": ck.epoch,
                "test_error": ck.test_error,
                "renormalized_test_error": ren,
                "comparable_error": ck.test_error if m.get("normalized") else ren,
            })
    return rows


def summarize_errors(rows: Sequence[dict]) -> List[dict]:
    """Mean and population std of the comparable test error across seeds per cell and epoch."""
    cells: Dict[tuple, List[float]] = {}
    for r in rows:
        if r["comparable_error"] is None:
            continue
        key = (r["kind"], r["normalized"], r["width"], r["depth"], r["epoch"])
        cells.setdefault(key, []).append(float(r["comparable_error"]))
    out = []
    for (kind, norm, w, d, e), vals in sorted(cells.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2], kv[0][3], kv[0][4])):
        arr = np.array(vals)
        out.append({"kind": kind, "normalized": norm, "width": w, "depth": d, "epoch": e, "seeds": len(arr), "mean": float(arr.mean()), "std": float(arr.std())})
    return out


def run_error_report(source, output: Optional[str] = None) -> ErrorReport:
    """Error curves from a directory of manifests, a list of manifests, or an :class:`ExperimentConfig` (trained in place)."""
    if isinstance(source, ExperimentConfig):
        res = run_ablation(source)
        manifests = [load_manifest(r.directory) for r in res.runs]
        output = output or source.output
    elif isinstance(source, (str, os.PathLike)):
        manifests = [load_manifest(d) for d in find_manifests(str(source))]
    else:
        manifests = list(source)
    rows = error_rows(manifests)
    summary = summarize_errors(rows)
    report = ErrorReport(rows, summary)
    if output is not None:
        ensure_dir(output)
        write_csv(os.path.join(output, "error_curves.csv"), rows, ERROR_COLUMNS)
        write_csv(os.path.join(output, "error_summary.csv"), summary, SUMMARY_COLUMNS)
        for (w, d) in sorted({(r["width"], r["depth"]) for r in summary}):
            curves = []
            for kind in sorted({r["kind"] for r in summary}):
                for norm in (True, False):
                    cell = [r for r in summary if (r["kind"], r["normalized"], r["width"], r["depth"]) == (kind, norm, w, d)]
                    if not cell:
                        continue
                    epochs = [r["epoch"] for r in cell]
                    per_seed = {}
                    for r in rows:
                        if (r["kind"], r["normalized"], r["width"], r["depth"]) == (kind, norm, w, d) and r["comparable_error"] is not None:
                            per_seed.setdefault(r["repeat"], {})[r["epoch"]] = r["comparable_error"]
                    family = "isotropic" if Kind(kind).is_isotropic else "anisotropic"
                    curves.append({
                        "epochs": epochs,
                        "mean": [r["mean"] for r in cell],
                        "std": [r["std"] for r in cell],
                        "runs": [[s.get(e, np.nan) for e in epochs] for _, s in sorted(per_seed.items())],
                        "label": f"{kind} ({'norm' if norm else 'raw'})",
                        "color": KIND_COLORS[(family, norm)],
                    })
            path = os.path.join(output, f"error_curves_w{w}_d{d}.png")
            with open(path, "wb") as fh:
                fh.write(figure_png(error_curves_figure(curves, f"width {w}, depth {d}")))
            report.plots.append(path)
    return report

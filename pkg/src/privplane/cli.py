"""``privplane`` command line.

Exit codes
----------
0  success
1  ``verify`` found a failing check
2  config file (or a parameter) could not be parsed or validated
3  dataset or artefact file missing, truncated or malformed
4  requested latent capture is not in the manifest
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from typing import List, Optional, Sequence

import numpy as np

from . import experiments, ppp, render, verify
from .config import ConfigError, ExperimentConfig, load_config, preset_path
from .errors import MissingCapture, PrivPlaneError
from .formats import ensure_dir, read_records, write_records
from .model import load_manifest
from .numerics import rng_stream

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_IO, EXIT_CAPTURE = 0, 1, 2, 3, 4


def _emit(args, payload, lines: Sequence[str]):
    if getattr(args, "json", False):
        json.dump(_finite(payload), sys.stdout, indent=2, sort_keys=True, default=_jsonable)
        sys.stdout.write("\n")
    else:
        for line in lines:
            print(line)


def _finite(x):
    """NaN and inf become null so the output stays strict JSON."""
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    if isinstance(x, (float, np.floating)) and not np.isfinite(x):
        return None
    return x


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serialisable: {type(x).__name__}")


def _load(args) -> ExperimentConfig:
    path = args.config
    if not os.path.exists(path) and os.path.exists(preset_path(path)):
        path = preset_path(path)
    try:
        cfg = load_config(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"config not found: {args.config}") from exc
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.jobs is not None:
        changes["jobs"] = args.jobs
    if args.out is not None:
        changes["output"] = args.out
    ppp_changes = {}
    if getattr(args, "epsilon", None) is not None:
        ppp_changes["epsilon"] = args.epsilon
    if getattr(args, "mode", None) is not None:
        ppp_changes["mode"] = ppp.Mode(args.mode)
    if ppp_changes:
        try:
            changes["ppp"] = dataclasses.replace(cfg.ppp, **ppp_changes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return dataclasses.replace(cfg, **changes) if changes else cfg


def cmd_train(args) -> int:
    cfg = _load(args)
    result = experiments.run_ablation(cfg)
    lines = []
    for run in result.runs:
        lines.append(run.spec.run_id)
        for row in run.rows:
            if row["layer"] == cfg.capture.layers[0]:
                err = "-" if row["test_error"] is None else f"{row['test_error']:.6f}"
                lines.append(f"  epoch {row['epoch']:4d}  test error {err}  records {row['records']}")
    lines.append(f"outputs under {cfg.output}")
    _emit(args, {"output": cfg.output, "runs": [r.directory for r in result.runs], "rows": result.rows, "montages": result.montages}, lines)
    return EXIT_OK


def cmd_project(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = ppp.PppConfig(epsilon=args.epsilon, mode=ppp.Mode(args.mode))
    checkpoints = manifest.all_checkpoints()
    layers = args.layer if args.layer else sorted({k for ck in checkpoints for k in ck.latents})
    for k in layers:
        if not any(k in ck.latents for ck in checkpoints):
            raise MissingCapture(f"manifest {args.manifest} has no capture for layer {k}")
    out = ensure_dir(args.out or os.path.join("projections", os.path.basename(os.path.normpath(args.manifest))))
    rows, lines = [], []
    for k in layers:
        for ck in checkpoints:
            if k not in ck.latents:
                continue
            Z = ck.latents[k]
            basis = ppp.standard_basis(Z.shape[1]) if args.basis == "standard" else ppp.haar_basis(Z.shape[1], rng_stream(args.seed, "basis"))
            planes = ppp.enumerate_planes(basis, cfg.mode)
            recs = ppp.project_representations(Z, planes, cfg.epsilon)
            stem = os.path.join(out, f"epoch_{ck.epoch:04d}_layer_{k}")
            write_records(stem + ".pppr", recs)
            summ = ppp.summary(recs, cfg, len(planes), len(Z), {"epoch": ck.epoch, "layer": k, "basis": args.basis})
            with open(stem + ".json", "w") as fh:
                json.dump(summ, fh, indent=2, sort_keys=True)
                fh.write("\n")
            rows.append({"epoch": ck.epoch, "layer": k, "planes": len(planes), "records": len(recs), "path": stem + ".pppr"})
            lines.append(f"layer {k}  epoch {ck.epoch:4d}  planes {len(planes)}  records {len(recs)}")
    _emit(args, {"epsilon": cfg.epsilon, "mode": cfg.mode.value, "tables": rows}, lines)
    return EXIT_OK


def cmd_render(args) -> int:
    tables = [read_records(p) for p in args.records]
    coords = [t["w"] for t in tables]
    extent = args.extent or render.default_extent(coords)
    grids = [render.accumulate_density(w, args.resolution, extent, extent * render.SIGMA_FRACTION) for w in coords]
    scale = render.row_color_scale(grids)
    out = ensure_dir(args.out or "renders")
    paths = []
    for p, g in zip(args.records, grids):
        name = os.path.splitext(os.path.basename(p))[0] + "." + args.format
        path = os.path.join(out, name)
        with open(path, "wb") as fh:
            fh.write(render.render_grid(g, scale, args.format))
        paths.append(path)
    if len(grids) > 1:
        labels = [os.path.splitext(os.path.basename(p))[0] for p in args.records]
        path = os.path.join(out, "montage.png")
        with open(path, "wb") as fh:
            fh.write(render.montage([[render.render_rgb(g, scale) for g in grids]], [""], labels, [extent]))
        paths.append(path)
    _emit(args, {"extent": extent, "vmax": scale.vmax, "images": paths}, [f"wrote {p}" for p in paths])
    return EXIT_OK


def cmd_control(args) -> int:
    spec = experiments.ControlSpec(
        kind=args.kind, dim=args.dim, embed_dim=args.embed_dim, samples=args.samples, repeats=args.repeats,
        seed=args.seed or 0, epsilon=args.epsilon, mode=args.mode, bins=args.bins,
    )
    out = args.out or "controls"
    res = experiments.run_control(spec, out, render_outputs=not args.no_render)
    lines = []
    for r in res.rows:
        if r["skipped"]:
            lines.append(f"repeat {r['repeat']}: {r['records']} records, skipped ({r['skipped']})")
        else:
            lines.append(f"repeat {r['repeat']}: {r['records']} records, chi2 {r['chi_square']:.2f} (p={r['pvalue']:.3g}), axis concentration {r['axis_concentration']:.4f}")
    _emit(args, {"kind": spec.kind.value, "rows": res.rows, "images": res.images}, lines)
    return EXIT_OK


def cmd_report(args) -> int:
    if args.config:
        cfg = _load(args)
        rep = experiments.run_error_report(cfg, args.out)
    else:
        if not args.manifests:
            raise ConfigError("report needs a manifest directory or --config")
        if not experiments.find_manifests(args.manifests):
            raise MissingCapture(f"no manifests under {args.manifests}")
        rep = experiments.run_error_report(args.manifests, args.out or "report")
    lines = [f"{'kind':28s} {'norm':5s} {'w':>3s} {'d':>2s} {'epoch':>5s} {'seeds':>5s} {'mean':>12s} {'std':>12s}"]
    for s in rep.summary:
        lines.append(f"{s['kind']:28s} {str(s['normalized']):5s} {s['width']:3d} {s['depth']:2d} {s['epoch']:5d} {s['seeds']:5d} {s['mean']:12.6f} {s['std']:12.6f}")
    _emit(args, {"rows": rep.rows, "summary": rep.summary, "plots": rep.plots}, lines)
    return EXIT_OK


def cmd_verify(args) -> int:
    results = verify.run_checks(seed=args.seed or 0, corrupt=args.corrupt_activation)
    failed = [r for r in results if not r.passed]
    lines = [f"{'PASS' if r.passed else 'FAIL'}  {r.name:52s} {r.value:.3e}  (limit {r.threshold:g}) {r.detail}".rstrip() for r in results]
    lines.append(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        lines.append("failed: " + ", ".join(r.name for r in failed))
    _emit(args, {"passed": not failed, "checks": [r.to_dict() for r in results]}, lines)
    return EXIT_VERIFY if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="privplane", description="Train symmetry-classified autoencoders and analyse their latents with privileged-plane projections.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="YAML config path or preset name")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--jobs", type=int)
        sp.add_argument("--out")
        sp.add_argument("--json", action="store_true", help="machine-readable output on stdout")

    sp = sub.add_parser("train", help="train the configured grid and analyse every checkpoint")
    common(sp)
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--mode", choices=[m.value for m in ppp.Mode])
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("project", help="PPP record tables for a saved run")
    sp.add_argument("manifest", help="run directory containing manifest.json")
    common(sp, config=False)
    sp.add_argument("--epsilon", type=float, default=0.75)
    sp.add_argument("--mode", choices=[m.value for m in ppp.Mode], default="combination")
    sp.add_argument("--layer", type=int, action="append", help="layer index (repeatable); default all captured")
    sp.add_argument("--basis", choices=["standard", "haar"], default="standard")
    sp.set_defaults(func=cmd_project, seed=0)

    sp = sub.add_parser("render", help="density images for record tables (one shared colour scale)")
    sp.add_argument("records", nargs="+")
    common(sp, config=False)
    sp.add_argument("--resolution", type=int, default=render.DEFAULT_RESOLUTION)
    sp.add_argument("--extent", type=float)
    sp.add_argument("--format", choices=["png", "pgm"], default="png")
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("control", help="statistical artefact controls on synthetic data")
    common(sp, config=False)
    sp.add_argument("--kind", choices=[k.value for k in experiments.ControlKind], default="gaussian-random-basis")
    sp.add_argument("--dim", type=int, default=24)
    sp.add_argument("--embed-dim", type=int, default=24)
    sp.add_argument("--samples", type=int, default=60_000)
    sp.add_argument("--repeats", type=int, default=10)
    sp.add_argument("--epsilon", type=float, default=0.75)
    sp.add_argument("--mode", choices=[m.value for m in ppp.Mode], default="combination")
    sp.add_argument("--bins", type=int, default=36)
    sp.add_argument("--no-render", action="store_true")
    sp.set_defaults(func=cmd_control)

    sp = sub.add_parser("report", help="test-error curves across seeds")
    sp.add_argument("manifests", nargs="?", help="directory searched for run manifests")
    sp.add_argument("--config", help="train this config in place instead")
    common(sp, config=False)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("verify", help="fast invariant checks")
    common(sp, config=False)
    sp.add_argument("--corrupt-activation", choices=[k.value for k in verify.Kind], help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"privplane: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingCapture as exc:
        print(f"privplane: missing capture: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_CAPTURE
    except (OSError, PrivPlaneError) as exc:
        print(f"privplane: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"privplane: invalid parameter: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

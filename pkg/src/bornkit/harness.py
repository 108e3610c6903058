"""Experiment orchestration: simulate -> invert -> eval, parameter sweeps and replay.

Every command writes into its own output directory and leaves a
``manifest.json`` there.  The manifest records the command name and the
exact keyword arguments it ran with, so :func:`replay` can re-run it.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
import uuid
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io as dumps
from .exceptions import InversionAborted, NumericalError
from .forward import NoiseSpec, add_noise, incident_fields, measured_noise_level, scattered_field, solve_total_field
from .greens import assemble_gd, assemble_gs
from .inversion import DEFAULT_LAMBDA, StackedOperator, bim, bps_trace, data_residual, operator_norm_sq, vbim
from .metrics import nmse, ssim
from .scene import (
    SceneConfig,
    austria_profile,
    disk,
    load_scene,
    rasterize,
    sample_cylinder_scene,
    scene_to_json,
)
from .unrolled import IdentityRefiner, PipelineConfig, RecordingRefiner, TabulatedRefiner, run_pipeline

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "BORNKIT_OUTPUT_ROOT"
MANIFEST = "manifest.json"
METHODS = ("bps", "bim", "vbim", "unrolled")
PROFILES = ("austria", "disk", "cylinders")
EVAL_COLUMNS = ["run_id", "method", "noise_level", "nmse", "ssim", "iterations", "wall_ms", "es_residual"]
SWEEP_METRICS = ("nmse", "ssim", "es_residual", "iterations", "wall_ms")


class InverseCrimeWarning(UserWarning):
    """Forward simulation and inversion share one discretization."""


class RunFailed(NumericalError):
    """A command failed after writing partial outputs; ``manifest`` describes them."""

    def __init__(self, message, manifest, cause=None):
        super().__init__(message)
        self.manifest = manifest
        self.cause = cause


def default_output_dir(command: str, run_id: str) -> Path:
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / f"{command}-{run_id[:8]}"


def _new_manifest(command, args):
    return {
        "run_id": uuid.uuid4().hex,
        "command": command,
        "args": args,
        "outputs": {},
        "timings_ms": {},
        "warnings": [],
        "status": "running",
    }


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no manifest at {path}")
    return json.loads(path.read_text())


class _Timer:
    def __init__(self, sink, key):
        self.sink, self.key = sink, key

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.sink[self.key] = 1e3 * (time.perf_counter() - self.t0)
        return False


def _display_max(chi) -> float:
    peak = float(np.max(np.abs(np.asarray(chi).real), initial=0.0))
    return peak if peak > 0 else 1.0


def _preview(out, stem, chi, display_max, outputs, lossy):
    chi = np.asarray(chi)
    dumps.write_pgm(out / f"{stem}.pgm", chi.real, display_max)
    outputs[f"{stem}_pgm"] = f"{stem}.pgm"
    if lossy:
        dumps.write_pgm(out / f"{stem}_imag.pgm", chi.imag, display_max)
        outputs[f"{stem}_imag_pgm"] = f"{stem}_imag.pgm"


def resolve_scene(scene=None, profile="austria", contrast=1.0, seed=0, config: SceneConfig | None = None):
    """Shapes from a scene file, or from a named built-in profile."""
    config = config or SceneConfig()
    if scene is not None:
        return load_scene(scene)
    if profile == "austria":
        return austria_profile(contrast, config)
    if profile == "disk":
        return [disk((0.0, 0.0), 0.03 * config.doi_side_m / 0.2, contrast)]
    if profile == "cylinders":
        return sample_cylinder_scene(seed, config.lossy, config)
    raise ValueError(f"unknown profile {profile!r}; expected one of {PROFILES}")


# -- simulate -----------------------------------------------------------------


def simulate(
    out,
    config: dict | None = None,
    scene: str | None = None,
    profile: str = "austria",
    contrast: float = 1.0,
    noise: float = 0.0,
    seed: int = 0,
    solve_method: str = "auto",
) -> dict:
    """Rasterize the scene, solve the forward problem and write the measurement set.

    Writes the noisy and noiseless scattered fields, the incident field on
    both grids, the true contrast on both grids, PGM previews and the
    manifest.  Returns the manifest.
    """
    cfg = SceneConfig.from_dict(config or {})
    if scene is not None:
        scene = str(Path(scene).resolve())
    args = dict(
        config=cfg.to_dict(), scene=scene, profile=profile, contrast=contrast,
        noise=noise, seed=seed, solve_method=solve_method,
    )
    manifest = _new_manifest("simulate", args)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    timings = manifest["timings_ms"]
    outputs = manifest["outputs"]
    if cfg.inverse_crime:
        msg = (
            f"forward grid equals inversion grid ({cfg.forward_grid}); "
            "this commits the inverse crime and flatters reconstructions"
        )
        warnings.warn(msg, InverseCrimeWarning, stacklevel=2)
        manifest["warnings"].append(msg)

    shapes = resolve_scene(scene, profile, contrast, seed, cfg)
    (out / "scene.json").write_text(json.dumps(scene_to_json(shapes), indent=2) + "\n")
    outputs["scene"] = "scene.json"
    chi_fwd = rasterize(shapes, cfg, cfg.forward_grid)
    chi_inv = rasterize(shapes, cfg, cfg.inversion_grid)

    with _Timer(timings, "assemble"):
        gd = assemble_gd(cfg, cfg.forward_grid)
        gs = assemble_gs(cfg, cfg.forward_grid)
        einc_fwd = incident_fields(cfg, cfg.forward_grid)
        einc_inv = incident_fields(cfg, cfg.inversion_grid)
    with _Timer(timings, "forward_solve"):
        etot = solve_total_field(chi_fwd, einc_fwd, gd, method=solve_method)
        es_clean = scattered_field(chi_fwd, etot, gs)
    es = add_noise(es_clean, NoiseSpec(noise, seed)) if noise > 0 else es_clean.copy()

    for name, writer, data in (
        ("es", dumps.write_field, es),
        ("es_clean", dumps.write_field, es_clean),
        ("einc", dumps.write_field, einc_inv),
        ("einc_fwd", dumps.write_field, einc_fwd),
    ):
        writer(out / f"{name}.cfld", data)
        outputs[name] = f"{name}.cfld"
    for name, data in (("chi_fwd", chi_fwd), ("chi_inv", chi_inv)):
        dumps.write_contrast(out / f"{name}.cmap", data)
        outputs[name] = f"{name}.cmap"

    display_max = _display_max(chi_fwd)
    _preview(out, "chi_fwd", chi_fwd, display_max, outputs, cfg.lossy)
    _preview(out, "chi_inv", chi_inv, display_max, outputs, cfg.lossy)

    manifest.update(
        config=cfg.to_dict(),
        scene=scene_to_json(shapes),
        noise={"level": noise, "seed": seed,
               "measured": measured_noise_level(es_clean, es) if noise > 0 else 0.0},
        seeds={"noise": seed, "scene": seed if scene is None and profile == "cylinders" else None},
        display_max=display_max,
        status="ok",
    )
    _write_json(out / MANIFEST, manifest)
    return manifest


# -- invert -------------------------------------------------------------------


def _make_refiner(refiner, refiner_file, record_refiner):
    if refiner == "identity":
        inner = IdentityRefiner()
    elif refiner == "tabulated":
        if not refiner_file:
            raise ValueError("--refiner tabulated needs --refiner-file")
        inner = TabulatedRefiner.load(refiner_file)
    else:
        raise ValueError(f"unknown refiner {refiner!r}")
    return RecordingRefiner(inner) if record_refiner else inner


def _write_trace(out, trace, outputs, timings):
    # wall-clock times go to the manifest so every other output replays bit-identically
    tdir = out / "trace"
    tdir.mkdir(exist_ok=True)
    with open(tdir / "residuals.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "data_residual"])
        for i, entry in enumerate(trace.entries, start=1):
            dumps.write_contrast(tdir / f"iter_{i:03d}.cmap", entry.contrast)
            writer.writerow([i, dumps.fmt_float(entry.data_residual)])
    timings["iterations"] = [entry.wall_ms for entry in trace.entries]
    outputs["trace_dir"] = "trace"
    outputs["residuals"] = "trace/residuals.csv"


def invert(
    sim_dir,
    out,
    method: str = "vbim",
    iters: int = 20,
    lam: float = DEFAULT_LAMBDA,
    lambda_mode: str = "absolute",
    layers: int = 7,
    refiner: str = "identity",
    refiner_file: str | None = None,
    record_refiner: str | None = None,
    init: str = "bps",
    stop_tol: float | None = None,
    clamp: bool = True,
    solve_method: str = "auto",
) -> dict:
    """Reconstruct the contrast on the inversion grid from a simulate directory.

    On a numerical failure the trace so far is still written and
    :class:`RunFailed` is raised with the partial manifest.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if lambda_mode not in ("absolute", "relative"):
        raise ValueError("lambda_mode must be 'absolute' or 'relative'")
    if init not in ("bps", "zero"):
        raise ValueError("init must be 'bps' or 'zero'")
    sim_dir = Path(sim_dir).resolve()
    sim = read_manifest(sim_dir)
    args = dict(
        sim_dir=str(sim_dir), method=method, iters=iters, lam=lam, lambda_mode=lambda_mode,
        layers=layers, refiner=refiner,
        refiner_file=str(Path(refiner_file).resolve()) if refiner_file else None,
        record_refiner=record_refiner, init=init, stop_tol=stop_tol, clamp=clamp,
        solve_method=solve_method,
    )
    manifest = _new_manifest("invert", args)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    timings, outputs = manifest["timings_ms"], manifest["outputs"]

    cfg = SceneConfig.from_dict(sim["config"])
    es = dumps.read_field(sim_dir / sim["outputs"]["es"])
    einc = dumps.read_field(sim_dir / sim["outputs"]["einc"])
    m = cfg.inversion_grid
    if einc.shape != (m * m, cfg.n_tx) or es.shape != (cfg.n_rx, cfg.n_tx):
        raise ValueError(f"simulate outputs in {sim_dir} do not match its config")
    with _Timer(timings, "assemble"):
        gd = assemble_gd(cfg, m)
        gs = assemble_gs(cfg, m)

    lam_eff = lam
    if lambda_mode == "relative":
        lam_eff = lam * operator_norm_sq(StackedOperator(einc, gs))
    chi0 = None if init == "bps" else np.zeros((m, m), dtype=complex)
    manifest.update(
        config=cfg.to_dict(), simulation_run_id=sim["run_id"], noise=sim.get("noise"),
        seeds=sim.get("seeds"), method=method,
        hyperparameters=dict(iters=iters, lam=lam, lambda_effective=lam_eff, lambda_mode=lambda_mode,
                             layers=layers, refiner=refiner, init=init, stop_tol=stop_tol, clamp=clamp),
        display_max=sim.get("display_max", 1.0),
    )

    rec = None
    t0 = time.perf_counter()
    try:
        if method == "bps":
            trace = bps_trace(es, einc, gd, gs, cfg.lossy, solve_method)
        elif method in ("bim", "vbim"):
            runner = bim if method == "bim" else vbim
            trace = runner(es, einc, gd, gs, lam=lam_eff, iters=iters, init=chi0,
                           lossy=cfg.lossy, stop_tol=stop_tol, solve_method=solve_method)
        else:
            ref = _make_refiner(refiner, refiner_file, record_refiner)
            rec = ref if isinstance(ref, RecordingRefiner) else None
            pipe = PipelineConfig(n_layers=layers, refiner=ref, clamp=clamp, lossy=cfg.lossy)
            trace = run_pipeline(pipe, es, einc, gd, gs, chi0=chi0)
    except InversionAborted as exc:
        timings["invert"] = 1e3 * (time.perf_counter() - t0)
        trace = exc.trace
        if trace.entries:
            _write_trace(out, trace, outputs, timings)
        manifest.update(status="aborted", error=str(exc), aborted_at=exc.iteration, iterations=len(trace))
        _write_json(out / MANIFEST, manifest)
        raise RunFailed(f"{method} aborted at iteration {exc.iteration}: {exc.cause}", manifest, exc) from exc
    timings["invert"] = 1e3 * (time.perf_counter() - t0)

    _write_trace(out, trace, outputs, timings)
    dumps.write_contrast(out / "chi.cmap", trace.contrast)
    outputs["chi"] = "chi.cmap"
    if trace.etot is not None:
        dumps.write_field(out / "etot.cfld", trace.etot)
        outputs["etot"] = "etot.cfld"
    _preview(out, "chi", trace.contrast, manifest["display_max"], outputs, cfg.lossy)
    if rec is not None:
        rec.save(out / record_refiner)
        outputs["refiner_record"] = record_refiner
    manifest.update(
        status="ok", iterations=len(trace), stopped_early=trace.stopped_early,
        final_residual=trace.entries[-1].data_residual,
    )
    _write_json(out / MANIFEST, manifest)
    return manifest


# -- eval ---------------------------------------------------------------------


def evaluate(pred, truth, es=None, etot=None, gs=None) -> dict:
    """NMSE/SSIM of ``pred`` against ``truth``, plus the data residual when fields are given."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"grid mismatch: prediction {pred.shape} vs truth {truth.shape}")
    row = {"nmse": nmse(pred, truth), "ssim": ssim(pred, truth), "es_residual": None}
    if es is not None:
        row["es_residual"] = data_residual(es, pred, etot, gs)
    return row


def append_csv_row(path, row: dict, columns=EVAL_COLUMNS) -> None:
    """Append one row, writing the header first if the file is new or empty."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    if not new:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
        if header != list(columns):
            raise ValueError(f"{path}: existing header {header} differs from {list(columns)}")
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(columns)
        writer.writerow([_csv_cell(row.get(c)) for c in columns])


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return dumps.fmt_float(value)
    return value


def eval_run(run_dir, csv_path, es_residual: bool = True) -> dict:
    """Score an invert directory against the truth from its simulate directory and append a CSV row."""
    run_dir = Path(run_dir).resolve()
    man = read_manifest(run_dir)
    if man.get("command") != "invert":
        raise ValueError(f"{run_dir} is not an invert output directory")
    if man.get("status") != "ok":
        raise ValueError(f"{run_dir}: invert run did not finish (status {man.get('status')})")
    sim_dir = Path(man["args"]["sim_dir"])
    sim = read_manifest(sim_dir)
    pred = dumps.read_contrast(run_dir / man["outputs"]["chi"])
    truth = dumps.read_contrast(sim_dir / sim["outputs"]["chi_inv"])
    fields = {}
    if es_residual:
        cfg = SceneConfig.from_dict(man["config"])
        fields = dict(
            es=dumps.read_field(sim_dir / sim["outputs"]["es"]),
            etot=dumps.read_field(run_dir / man["outputs"]["etot"]),
            gs=assemble_gs(cfg, cfg.inversion_grid),
        )
    scores = evaluate(pred, truth, **fields)
    row = dict(
        run_id=man["run_id"], method=man["method"], noise_level=float(sim["noise"]["level"]),
        iterations=man["iterations"], wall_ms=float(man["timings_ms"]["invert"]), **scores,
    )
    append_csv_row(csv_path, row)
    return row


def eval_files(pred_path, truth_path, csv_path, run_id="", method="", noise_level=None) -> dict:
    """Score two contrast dumps directly (no manifests involved)."""
    scores = evaluate(dumps.read_contrast(pred_path), dumps.read_contrast(truth_path))
    row = dict(run_id=run_id, method=method, noise_level=noise_level, iterations=None, wall_ms=None, **scores)
    append_csv_row(csv_path, row)
    return row


# -- sweep --------------------------------------------------------------------


def _cell_name(noise, contrast, method, seed):
    return f"noise{noise:g}_contrast{contrast:g}_{method}_seed{seed}"


def _run_cell(cell):
    """Simulate, invert and evaluate one sweep cell inside its own directory."""
    cdir = Path(cell["dir"])
    result = {k: cell[k] for k in ("noise", "contrast", "method", "seed")}
    result.update(cell=cdir.name, status="ok", error="")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", InverseCrimeWarning)
            simulate(cdir / "sim", config=cell["config"], scene=cell["scene"], profile=cell["profile"],
                     contrast=cell["contrast"], noise=cell["noise"], seed=cell["seed"])
        invert(cdir / "sim", cdir / "inv", method=cell["method"], **cell["invert"])
        row = eval_run(cdir / "inv", cdir / "metrics.csv")
        result.update({k: row[k] for k in SWEEP_METRICS}, run_id=row["run_id"])
    except Exception as exc:  # recorded per cell, the sweep carries on
        log.warning("sweep cell %s failed: %s", cdir.name, exc)
        result.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return result


def sweep(
    out,
    noises=(0.1,),
    contrasts=(1.0,),
    methods=("vbim",),
    seeds=(0,),
    config: dict | None = None,
    scene: str | None = None,
    profile: str = "austria",
    invert_args: dict | None = None,
    jobs: int = 1,
) -> dict:
    """Run the noise x contrast x method x seed cross-product.

    Writes ``runs.csv`` (one row per cell) and ``summary.csv`` in long format
    (one row per noise/contrast/method/metric with mean, std, n, n_failed).
    """
    cfg = SceneConfig.from_dict(config or {})
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    if jobs < 1:
        raise ValueError("jobs must be at least 1")
    if scene is not None:
        scene = str(Path(scene).resolve())
    invert_args = dict(invert_args or {})
    args = dict(
        noises=list(noises), contrasts=list(contrasts), methods=list(methods), seeds=list(seeds),
        config=cfg.to_dict(), scene=scene, profile=profile, invert_args=invert_args, jobs=jobs,
    )
    manifest = _new_manifest("sweep", args)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cells = [
        dict(dir=str(out / "cells" / _cell_name(n, c, m, s)), noise=n, contrast=c, method=m, seed=s,
             config=cfg.to_dict(), scene=scene, profile=profile, invert=invert_args)
        for n in noises for c in contrasts for m in methods for s in seeds
    ]
    t0 = time.perf_counter()
    if jobs == 1:
        results = [_run_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, cells))
    manifest["timings_ms"]["sweep"] = 1e3 * (time.perf_counter() - t0)

    run_cols = ["cell", "noise", "contrast", "method", "seed", "status", "run_id", *SWEEP_METRICS, "error"]
    with open(out / "runs.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(run_cols)
        for r in results:
            writer.writerow([_csv_cell(r.get(c)) for c in run_cols])
    summary = summarize(results)
    sum_cols = ["noise", "contrast", "method", "metric", "mean", "std", "n", "n_failed"]
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(sum_cols)
        for r in summary:
            writer.writerow([_csv_cell(r[c]) for c in sum_cols])
    manifest["outputs"] = {"runs": "runs.csv", "summary": "summary.csv", "cells": "cells"}
    manifest["n_cells"] = len(results)
    manifest["n_failed"] = sum(r["status"] != "ok" for r in results)
    manifest["status"] = "ok"
    _write_json(out / MANIFEST, manifest)
    return manifest


def summarize(results) -> list[dict]:
    """Aggregate per (noise, contrast, method) over seeds; std is the population std."""
    groups: dict = {}
    for r in results:
        groups.setdefault((r["noise"], r["contrast"], r["method"]), []).append(r)
    rows = []
    for (n, c, m), rs in groups.items():
        ok = [r for r in rs if r["status"] == "ok"]
        for metric in SWEEP_METRICS:
            vals = np.array([float(r[metric]) for r in ok if r.get(metric) is not None], dtype=float)
            rows.append(dict(
                noise=float(n), contrast=float(c), method=m, metric=metric,
                mean=float(vals.mean()) if vals.size else math.nan,
                std=float(vals.std()) if vals.size else math.nan,
                n=int(vals.size), n_failed=len(rs) - len(ok),
            ))
    return rows


# -- replay -------------------------------------------------------------------


def replay(manifest_path, out) -> dict:
    """Re-run the command recorded in a manifest into ``out``."""
    man = read_manifest(manifest_path)
    command, args = man["command"], dict(man["args"])
    if command == "simulate":
        return simulate(out, **args)
    if command == "invert":
        sim_dir = args.pop("sim_dir")
        return invert(sim_dir, out, **args)
    if command == "sweep":
        return sweep(out, **args)
    raise ValueError(f"cannot replay command {command!r}")

"""Staged end-to-end pipeline with on-disk artifacts.

Each stage reads its inputs from the output directory, checks that they were
produced by the same upstream configuration (via per-stage hashes stored in
the JSON sidecars) and writes its own artifacts.  Numerical artifacts depend
only on the configuration; wall-clock timings go to ``timings.json``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .config import ExperimentConfig
from .forward import (ApertureCalibration, SensingMatrix, calibrate_apertures, normalize_sensing_matrix,
                      sensing_matrix_from_apertures, wavelength)
from .geometry import build_cra_surface
from .postproc import (cross_range_average, max_projection_range, normalize_magnitude, range_profile,
                       resolution_limits, spectral_diversity, support_iou, threshold_volume)
from .scene import ReflectivityVolume, RoIGrid, rasterize_target, synthesize_measurements
from .solver import admm_solve, partition_rows

log = logging.getLogger(__name__)

STAGES = ("geometry", "calibrate", "simulate", "reconstruct", "analyze")

# artifact -> producing subcommand
PRODUCER = {
    "mesh.obj": "geometry",
    "aperture_fields.bin": "calibrate",
    "H.bin": "calibrate",
    "truth.bin": "simulate",
    "g.bin": "simulate",
    "u_raw.bin": "reconstruct",
}


class PipelineError(RuntimeError):
    """A stage failed; carries the stage name and the artifacts already written."""

    def __init__(self, stage: str, message: str, completed=()):
        self.stage = stage
        self.completed = [str(p) for p in completed]
        text = f"stage '{stage}' failed: {message}"
        if self.completed:
            text += "\ncompleted artifacts:\n  " + "\n  ".join(self.completed)
        super().__init__(text)


class MissingArtifactError(PipelineError):
    pass


class StaleArtifactError(PipelineError):
    pass


@dataclass
class ReportBundle:
    out_dir: Path
    artifacts: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)


@dataclass
class RunContext:
    config: ExperimentConfig
    out_dir: Path
    threads: int = 1
    force: bool = False
    progress: bool = False

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name) -> Path:
        return self.out_dir / name

    def meta(self, stage: str, **extra) -> dict:
        info = {"stage": stage, "config_hash": self.config.hash(), "stage_hash": self.config.stage_hash(stage)}
        info.update(extra)
        return info

    def require(self, name: str, consumer: str) -> dict:
        """Sidecar of an upstream artifact after existence and hash checks."""
        producer = PRODUCER[name]
        path = self.path(name)
        if not path.exists() or not io.sidecar_path(path).exists():
            raise MissingArtifactError(consumer, f"missing artifact {path}; run the '{producer}' subcommand first")
        meta = io.read_json(io.sidecar_path(path))
        expected = self.config.stage_hash(producer)
        if meta.get("stage_hash") != expected and not self.force:
            raise StaleArtifactError(
                consumer, f"{path} was produced by a different configuration (stage hash {meta.get('stage_hash')} "
                          f"!= {expected}); rerun '{producer}' or pass --force")
        return meta

    def reporter(self, label):
        if not self.progress:
            return None
        return lambda i, n: log.info("%s %d/%d", label, i, n)


def _write_timing(ctx: RunContext, stage: str, seconds: float):
    path = ctx.path("timings.json")
    data = io.read_json(path) if path.exists() else {}
    data[stage] = round(seconds, 3)
    io.write_json(path, data)


def _timed(stage):
    def wrap(fn):
        def run(ctx: RunContext, *args, **kwargs):
            t0 = time.perf_counter()
            try:
                written = fn(ctx, *args, **kwargs)
            except PipelineError:
                raise
            except Exception as err:
                raise PipelineError(stage, f"{type(err).__name__}: {err}") from err
            _write_timing(ctx, stage, time.perf_counter() - t0)
            return written
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run
    return wrap


# --- stages ------------------------------------------------------------------

@_timed("geometry")
def stage_geometry(ctx: RunContext) -> list[Path]:
    """Build the (perturbed) reflector mesh."""
    params = ctx.config.reflector_params()
    mesh = build_cra_surface(params)
    path = io.write_mesh(mesh, ctx.path("mesh.obj"), ctx.meta("geometry", kind="tra" if params.max_distortion == 0
                                                                else "cra"))
    return [path, io.sidecar_path(path)]


@_timed("calibrate")
def stage_calibrate(ctx: RunContext) -> list[Path]:
    """Synthesise aperture fields for every port and frequency, then assemble H."""
    cfg = ctx.config
    ctx.require("mesh.obj", "calibrate")
    mesh, _ = io.read_mesh(ctx.path("mesh.obj"))
    ports = cfg.feed_ports()
    plane = cfg.aperture_grid()
    roi = cfg.roi_grid()
    cal = calibrate_apertures(ports, cfg.frequencies_ghz(), mesh, plane, progress=ctx.reporter("aperture synthesis"))
    port_meta = [{"name": p.name, "role": p.role, "position": list(p.position)} for p in ports]
    written = [io.save_complex(ctx.path("aperture_fields.bin"), cal.fields,
                               ctx.meta("calibrate", axes=["frequency", "port", "node", "xyz"],
                                        aperture=plane.to_dict(), ports=port_meta,
                                        freqs_ghz=cal.freqs_ghz.tolist()))]
    H = sensing_matrix_from_apertures(cal, roi, method=cfg.calibration.method, workers=ctx.threads,
                                      progress=ctx.reporter("RoI propagation"))
    if cfg.calibration.normalize:
        H = normalize_sensing_matrix(H)
    written.append(io.save_complex(ctx.path("H.bin"), H.matrix,
                                   ctx.meta("calibrate", roi=roi.to_dict(), scale=H.scale,
                                            normalized=cfg.calibration.normalize,
                                            row_index=[list(r) for r in H.row_index])))
    return written + [io.sidecar_path(p) for p in written]


def load_sensing_matrix(path) -> SensingMatrix:
    A, meta = io.load_complex(path)
    roi = RoIGrid(**{k: tuple(v) for k, v in meta["roi"].items()})
    return SensingMatrix(A, [tuple(r) for r in meta["row_index"]], roi, meta.get("scale", 1.0))


def load_calibration(path) -> ApertureCalibration:
    from .forward import ApertureGrid, FeedPort

    fields, meta = io.load_complex(path)
    a = meta["aperture"]
    plane = ApertureGrid(tuple(a["center"]), a["x_extent"], a["z_extent"], a["spacing"])
    ports = [FeedPort(tuple(p["position"]), p["role"], name=p["name"]) for p in meta["ports"]]
    return ApertureCalibration(plane, ports, np.array(meta["freqs_ghz"]), fields)


@_timed("simulate")
def stage_simulate(ctx: RunContext) -> list[Path]:
    """Rasterise the target and synthesise noisy measurements g = H u + n."""
    cfg = ctx.config
    ctx.require("H.bin", "simulate")
    H = load_sensing_matrix(ctx.path("H.bin"))
    truth = rasterize_target(cfg.target_spec(), H.roi)
    g = synthesize_measurements(H, truth, cfg.noise.snr_db, cfg.seeds.noise)
    written = [
        io.save_complex(ctx.path("truth.bin"), truth.grid, ctx.meta("simulate", axes=["y", "z", "x"],
                                                                    roi=H.roi.to_dict())),
        io.save_complex(ctx.path("g.bin"), g.values, ctx.meta("simulate", snr_db=cfg.noise.snr_db,
                                                              noise_seed=cfg.seeds.noise)),
    ]
    return written + [io.sidecar_path(p) for p in written]


@_timed("reconstruct")
def stage_reconstruct(ctx: RunContext) -> list[Path]:
    """Consensus-ADMM reconstruction of the raw reflectivity volume."""
    cfg = ctx.config
    ctx.require("H.bin", "reconstruct")
    ctx.require("g.bin", "reconstruct")
    H = load_sensing_matrix(ctx.path("H.bin"))
    g, _ = io.load_complex(ctx.path("g.bin"))
    admm = cfg.admm_config(workers=ctx.threads)
    blocks = partition_rows(H.matrix, g, admm.block_count)
    v, history = admm_solve(blocks, admm)
    u = ReflectivityVolume(H.roi, v)
    corr = np.abs(H.matrix.conj().T @ g).max()
    written = [io.save_complex(ctx.path("u_raw.bin"), u.grid,
                               ctx.meta("reconstruct", axes=["y", "z", "x"], roi=H.roi.to_dict(),
                                        iterations=history.iterations, converged=history.converged,
                                        lambda_r=admm.lambda_r,
                                        lambda_r_fraction=float(admm.lambda_r / corr) if corr > 0 else None))]
    history.to_csv(ctx.path("convergence.csv"))
    return written + [io.sidecar_path(written[0]), ctx.path("convergence.csv")]


def _range_plane(grid: np.ndarray) -> int:
    return int(np.argmax(np.abs(grid).reshape(grid.shape[0], -1).max(axis=1)))


def write_diversity_csv(path, report):
    s = report.singular_values
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "singular_value", "relative"])
        for i, val in enumerate(s):
            w.writerow([i, repr(float(val)), repr(float(val / s[0]))])


def write_diversity_comparison(path, run, baseline):
    n = max(len(run.singular_values), len(baseline.singular_values))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "run", "baseline"])
        w.writerow(["effective_rank", repr(run.effective_rank), repr(baseline.effective_rank)])
        w.writerow(["condition", repr(run.condition), repr(baseline.condition)])
        for i in range(n):
            a = run.singular_values[i] / run.singular_values[0] if i < len(run.singular_values) else ""
            b = baseline.singular_values[i] / baseline.singular_values[0] if i < len(baseline.singular_values) else ""
            w.writerow([f"relative_sv_{i}", repr(float(a)) if a != "" else "", repr(float(b)) if b != "" else ""])


@_timed("analyze")
def stage_analyze(ctx: RunContext, baseline: Path | None = None) -> list[Path]:
    """Average, normalise, threshold and score the reconstruction; write images and the report."""
    cfg = ctx.config
    for name in ("H.bin", "truth.bin", "u_raw.bin"):
        ctx.require(name, "analyze")
    H = load_sensing_matrix(ctx.path("H.bin"))
    roi = H.roi
    raw, rmeta = io.load_complex(ctx.path("u_raw.bin"))
    truth_grid, _ = io.load_complex(ctx.path("truth.bin"))
    u_raw = ReflectivityVolume.from_grid(roi, raw)
    pp = cfg.postproc
    u_avg = normalize_magnitude(cross_range_average(u_raw, pp.na, pp.renormalize))
    mask = threshold_volume(u_avg, pp.tau)
    truth_mask = np.abs(truth_grid) > 0
    iou = support_iou(mask, truth_mask)
    plane_found = _range_plane(u_avg.grid)
    plane_true = _range_plane(truth_grid)

    written = [io.save_complex(ctx.path("u_avg.bin"), u_avg.grid,
                               ctx.meta("analyze", axes=["y", "z", "x"], na=pp.na, tau=pp.tau))]
    written.append(io.sidecar_path(written[0]))
    proj = max_projection_range(u_avg)
    io.write_csv_image(ctx.path("projection.csv"), proj)
    io.write_pgm(ctx.path("projection.pgm"), proj, vmax=1.0)
    written += [ctx.path("projection.csv"), ctx.path("projection.pgm")]
    slices = ctx.path("slices")
    slices.mkdir(exist_ok=True)
    ys = roi.axis(1)
    for j in range(roi.shape[0]):
        stem = slices / f"plane_{j:02d}"
        io.write_csv_image(stem.with_suffix(".csv"), np.abs(u_avg.grid[j]))
        io.write_pgm(stem.with_suffix(".pgm"), u_avg.grid[j], vmax=1.0)
        written += [stem.with_suffix(".csv"), stem.with_suffix(".pgm")]

    div = spectral_diversity(H)
    write_diversity_csv(ctx.path("diversity.csv"), div)
    written.append(ctx.path("diversity.csv"))
    if baseline is not None:
        other = load_sensing_matrix(Path(baseline) / "H.bin" if Path(baseline).is_dir() else baseline)
        base_div = spectral_diversity(other)
        write_diversity_comparison(ctx.path("diversity_comparison.csv"), div, base_div)
        written.append(ctx.path("diversity_comparison.csv"))

    f = cfg.frequencies
    center = 0.5 * (f.start_ghz + f.stop_ghz)
    bandwidth_hz = (f.stop_ghz - f.start_ghz) * 1e9
    limits = resolution_limits(wavelength(center), cfg.roi.range, cfg.reflector.aperture_size,
                               bandwidth_hz) if bandwidth_hz > 0 else None
    summary = {
        "config_hash": cfg.hash(),
        "kind": "tra" if cfg.reflector.max_distortion == 0 else "cra",
        "unknowns": roi.n_voxels,
        "measurements": int(H.matrix.shape[0]),
        "roi_shape_yzx": list(roi.shape),
        "resolution_limits_mm": None if limits is None else {"cross_range": limits.sigma_xz, "range": limits.sigma_y},
        "support_iou": iou,
        "threshold": pp.tau,
        "voxels_above_threshold": int(mask.sum()),
        "truth_voxels": int(truth_mask.sum()),
        "range_plane": {"found": plane_found, "truth": plane_true, "found_y_mm": float(ys[plane_found]),
                        "truth_y_mm": float(ys[plane_true]), "correct": plane_found == plane_true},
        "range_profile": range_profile(u_avg).tolist(),
        "admm": {"iterations": rmeta.get("iterations"), "converged": rmeta.get("converged"),
                 "lambda_r": rmeta.get("lambda_r"), "lambda_r_fraction_of_max_correlation":
                     rmeta.get("lambda_r_fraction")},
        "diversity": {"effective_rank": div.effective_rank, "condition": div.condition},
        "sensing_matrix_scale": H.scale,
    }
    if baseline is not None:
        summary["baseline_diversity"] = {"effective_rank": base_div.effective_rank, "condition": base_div.condition}
    io.write_json(ctx.path("summary.json"), summary)
    written.append(ctx.path("summary.json"))
    return written


def summary_text(summary: dict, timings: dict) -> str:
    lines = ["crasim reconstruction report", "=" * 28, ""]
    lines.append(f"config hash         {summary['config_hash']} ({summary['kind'].upper()})")
    lines.append(f"unknowns            {summary['unknowns']} (y, z, x = {tuple(summary['roi_shape_yzx'])})")
    lines.append(f"measurements        {summary['measurements']}")
    lim = summary["resolution_limits_mm"]
    if lim:
        lines.append(f"resolution limits   cross-range {lim['cross_range']:.3f} mm, range {lim['range']:.3f} mm")
    rp = summary["range_plane"]
    lines.append(f"support IoU         {summary['support_iou']:.4f} at threshold {summary['threshold']}"
                 f" ({summary['voxels_above_threshold']} recon / {summary['truth_voxels']} truth voxels)")
    lines.append(f"range plane         found {rp['found']} (y={rp['found_y_mm']:.1f} mm), truth {rp['truth']}"
                 f" (y={rp['truth_y_mm']:.1f} mm): {'correct' if rp['correct'] else 'WRONG'}")
    ad = summary["admm"]
    frac = ad["lambda_r_fraction_of_max_correlation"]
    lines.append(f"ADMM                {ad['iterations']} iterations, converged={ad['converged']}, lambda_r="
                 f"{ad['lambda_r']} ({'n/a' if frac is None else f'{frac:.4g}'} of max |H^H g|)")
    d = summary["diversity"]
    lines.append(f"effective rank      {d['effective_rank']:.3f} (condition {d['condition']:.4g})")
    if "baseline_diversity" in summary:
        b = summary["baseline_diversity"]
        lines.append(f"baseline eff. rank  {b['effective_rank']:.3f} (condition {b['condition']:.4g})")
    if timings:
        lines.append("")
        lines.append("timings (s)         " + ", ".join(f"{k} {v:.1f}" for k, v in timings.items()))
        lines.append(f"total               {sum(timings.values()):.1f} s")
    return "\n".join(lines) + "\n"


def write_summary_text(ctx: RunContext) -> Path:
    summary = io.read_json(ctx.path("summary.json"))
    tpath = ctx.path("timings.json")
    timings = io.read_json(tpath) if tpath.exists() else {}
    timings = {k: timings[k] for k in STAGES if k in timings}
    path = ctx.path("summary.txt")
    path.write_text(summary_text(summary, timings))
    return path


STAGE_FUNCS = {
    "geometry": stage_geometry,
    "calibrate": stage_calibrate,
    "simulate": stage_simulate,
    "reconstruct": stage_reconstruct,
    "analyze": stage_analyze,
}


def run_pipeline(config: ExperimentConfig, out_dir, threads: int = 1, force: bool = False,
                 baseline=None, progress: bool = False) -> ReportBundle:
    """Run every stage in order and return the collected artifacts and summary."""
    ctx = RunContext(config, out_dir, threads, force, progress)
    tpath = ctx.path("timings.json")
    if tpath.exists():
        tpath.unlink()
    bundle = ReportBundle(ctx.out_dir)
    for name in STAGES:
        try:
            if name == "analyze":
                bundle.artifacts += STAGE_FUNCS[name](ctx, baseline=baseline)
            else:
                bundle.artifacts += STAGE_FUNCS[name](ctx)
        except PipelineError as err:
            raise PipelineError(err.stage, str(err).split(": ", 1)[-1].split("\ncompleted")[0],
                                bundle.artifacts) from err
        log.info("stage %s done", name)
    bundle.artifacts.append(write_summary_text(ctx))
    bundle.summary = io.read_json(ctx.path("summary.json"))
    bundle.timings = io.read_json(tpath)
    io.write_json(ctx.path("config.json"), config.to_dict())
    return bundle

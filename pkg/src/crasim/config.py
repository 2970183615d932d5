"""Experiment configuration: INI files with one section per pipeline block.

Missing keys fall back to the fabricated-prototype values; unknown sections
or keys and invariant violations are collected and reported together.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .forward import C_MM_PER_NS, ApertureGrid, FeedPort, cross_layout, frequency_grid
from .geometry import ReflectorParams
from .scene import RoIGrid, TargetSpec, build_roi
from .solver import AdmmConfig


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


@dataclass
class ReflectorSection:
    aperture_size: float = 500.0
    focal_length: float = 500.0
    offset: float = 350.0
    mean_facet_edge: float = 16.4
    max_distortion: float = 0.8


@dataclass
class PortsSection:
    n_tx: int = 4
    n_rx: int = 4
    pitch: float = 10.0
    polarization: tuple = (1.0, 0.0, 0.0)
    pattern_exponent: float = 2.0
    # explicit "x y z; x y z" lists override the cross layout, relative to the focal point
    tx_positions: str = ""
    rx_positions: str = ""


@dataclass
class FrequencySection:
    start_ghz: float = 71.0
    stop_ghz: float = 76.0
    count: int = 30
    allow_outside_band: bool = False


@dataclass
class ApertureSection:
    x_extent: float = 880.0
    z_extent: float = 640.0
    spacing: float = C_MM_PER_NS / 77.0 / 2.0
    standoff: float = 900.0


@dataclass
class RoISection:
    extent: tuple = (600.0, 420.0, 600.0)
    voxel: tuple = (6.0, 30.0, 6.0)
    range: float = 1500.0
    lateral_offset: tuple = (0.0, 0.0)


@dataclass
class TargetSection:
    shape: str = "t_shape"
    offset: tuple = (0.0, 0.0, 0.0)
    rotation_deg: float = 45.0
    bar_length: float = 200.0
    bar_width: float = 50.0
    stem_length: float = 150.0
    stem_width: float = 50.0
    depth: float = 0.0  # 0: a single voxel plane
    size: tuple = (60.0, 30.0, 60.0)
    points: str = ""
    reflectivity: complex = 1 + 0j


@dataclass
class NoiseSection:
    snr_db: float = 30.0


@dataclass
class AdmmSection:
    block_count: int = 40
    lambda_r: float = 20.0
    rho: float = 1.0
    max_iters: int = 500
    tol_primal: float = 1e-5
    tol_dual: float = 1e-5
    adaptive_rho: bool = False


@dataclass
class PostprocSection:
    na: int = 4
    tau: float = 0.35
    renormalize: bool = False


@dataclass
class SeedsSection:
    geometry: int = 0
    noise: int = 0


@dataclass
class CalibrationSection:
    normalize: bool = True
    method: str = "auto"


SECTIONS = {
    "reflector": ReflectorSection,
    "ports": PortsSection,
    "frequencies": FrequencySection,
    "aperture": ApertureSection,
    "roi": RoISection,
    "target": TargetSection,
    "noise": NoiseSection,
    "admm": AdmmSection,
    "postproc": PostprocSection,
    "seeds": SeedsSection,
    "calibration": CalibrationSection,
}

# sections each stage's output depends on
STAGE_SECTIONS = {
    "geometry": ("reflector", "seeds.geometry"),
    "calibrate": ("reflector", "seeds.geometry", "ports", "frequencies", "aperture", "roi", "calibration"),
    "simulate": ("reflector", "seeds.geometry", "ports", "frequencies", "aperture", "roi", "calibration",
                 "target", "noise", "seeds.noise"),
    "reconstruct": ("reflector", "seeds.geometry", "ports", "frequencies", "aperture", "roi", "calibration",
                    "target", "noise", "seeds.noise", "admm"),
}
STAGE_SECTIONS["analyze"] = STAGE_SECTIONS["reconstruct"] + ("postproc",)


@dataclass
class ExperimentConfig:
    reflector: ReflectorSection = field(default_factory=ReflectorSection)
    ports: PortsSection = field(default_factory=PortsSection)
    frequencies: FrequencySection = field(default_factory=FrequencySection)
    aperture: ApertureSection = field(default_factory=ApertureSection)
    roi: RoISection = field(default_factory=RoISection)
    target: TargetSection = field(default_factory=TargetSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    admm: AdmmSection = field(default_factory=AdmmSection)
    postproc: PostprocSection = field(default_factory=PostprocSection)
    seeds: SeedsSection = field(default_factory=SeedsSection)
    calibration: CalibrationSection = field(default_factory=CalibrationSection)

    # --- derived objects -------------------------------------------------
    def reflector_params(self) -> ReflectorParams:
        r = self.reflector
        return ReflectorParams(r.aperture_size, r.focal_length, r.offset, r.mean_facet_edge, r.max_distortion,
                               self.seeds.geometry)

    def frequencies_ghz(self) -> np.ndarray:
        f = self.frequencies
        return frequency_grid(f.start_ghz, f.stop_ghz, f.count)

    def feed_ports(self) -> list[FeedPort]:
        p = self.ports
        focus = self.reflector_params().focal_point
        kw = dict(polarization=tuple(p.polarization), pattern_exponent=p.pattern_exponent)
        ports = cross_layout(focus, p.n_tx, p.n_rx, p.pitch, **kw)
        tx = [x for x in ports if x.role == "tx"]
        rx = [x for x in ports if x.role == "rx"]
        if p.tx_positions.strip():
            tx = [FeedPort(tuple(focus + q), "tx", name=f"tx{i}", **kw)
                  for i, q in enumerate(_parse_points(p.tx_positions))]
        if p.rx_positions.strip():
            rx = [FeedPort(tuple(focus + q), "rx", name=f"rx{i}", **kw)
                  for i, q in enumerate(_parse_points(p.rx_positions))]
        return tx + rx

    def aperture_grid(self) -> ApertureGrid:
        a = self.aperture
        c = self.reflector_params().center
        return ApertureGrid((c[0], c[1] + a.standoff, c[2]), a.x_extent, a.z_extent, a.spacing)

    def roi_grid(self) -> RoIGrid:
        r = self.roi
        c = self.reflector_params().center
        center = (c[0] + r.lateral_offset[0], c[1] + r.range, c[2] + r.lateral_offset[1])
        return build_roi(center, tuple(r.extent), tuple(r.voxel))

    def target_spec(self) -> TargetSpec:
        t = self.target
        if t.shape == "t_shape":
            dims = {"bar_length": t.bar_length, "bar_width": t.bar_width, "stem_length": t.stem_length,
                    "stem_width": t.stem_width}
            if t.depth > 0:
                dims["depth"] = t.depth
        elif t.shape == "box":
            dims = dict(zip(("size_x", "size_y", "size_z"), t.size))
        else:
            dims = {"points": _parse_points(t.points).tolist()}
        return TargetSpec(t.shape, tuple(t.offset), t.rotation_deg, dims, complex(t.reflectivity))

    def admm_config(self, workers: int = 1) -> AdmmConfig:
        a = self.admm
        return AdmmConfig(a.block_count, a.lambda_r, a.rho, a.max_iters, a.tol_primal, a.tol_dual, a.adaptive_rho,
                          workers)

    # --- hashing ---------------------------------------------------------
    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self), default=_jsonable))

    def hash(self, sections=None) -> str:
        data = self.to_dict()
        if sections is not None:
            picked = {}
            for s in sections:
                head, _, key = s.partition(".")
                picked[s] = data[head][key] if key else data[head]
            data = picked
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def stage_hash(self, stage: str) -> str:
        return self.hash(STAGE_SECTIONS[stage])


def _jsonable(obj):
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj)}")


def _parse_points(text: str) -> np.ndarray:
    rows = [r for r in (s.strip() for s in text.replace("\n", ";").split(";")) if r]
    pts = [[float(t) for t in r.replace(",", " ").split()] for r in rows]
    if any(len(p) != 3 for p in pts):
        raise ValueError(f"points must be 'x y z; x y z; ...' (got {text!r})")
    return np.array(pts, float).reshape(-1, 3)


def _convert(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        val = int(raw, 0)
        if val < 0:
            raise ValueError(f"expected a non-negative integer, got {raw!r}")
        return val
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, complex):
        return complex(raw.replace(" ", ""))
    if isinstance(default, tuple):
        vals = tuple(float(t) for t in raw.replace(",", " ").split())
        if len(vals) != len(default):
            raise ValueError(f"expected {len(default)} numbers, got {raw!r}")
        return vals
    return raw


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";;"))
    parser.optionxform = str
    parser.read_string(text)
    problems = []
    cfg = ExperimentConfig()
    for name in parser.sections():
        if name not in SECTIONS:
            problems.append(f"unknown section [{name}]")
            continue
        section = getattr(cfg, name)
        known = {f.name: f for f in dataclasses.fields(section)}
        for key, raw in parser.items(name):
            if key not in known:
                problems.append(f"unknown key '{key}' in [{name}]")
                continue
            try:
                setattr(section, key, _convert(raw, getattr(section, key)))
            except ValueError as err:
                problems.append(f"[{name}] {key}: {err}")
    problems += validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def validate(cfg: ExperimentConfig) -> list[str]:
    problems = []

    def attempt(what, fn):
        try:
            return fn()
        except (ValueError, TypeError) as err:
            problems.append(f"{what}: {err}")
            return None

    attempt("[reflector]", cfg.reflector_params)
    f = cfg.frequencies
    if f.count < 1:
        problems.append("[frequencies] count must be >= 1")
    if not (f.start_ghz > 0 and f.stop_ghz >= f.start_ghz):
        problems.append("[frequencies] need 0 < start_ghz <= stop_ghz")
    elif not f.allow_outside_band and (f.start_ghz < 71.0 - 1e-9 or f.stop_ghz > 76.0 + 1e-9):
        problems.append("[frequencies] range must lie within 71-76 GHz (set allow_outside_band = true to override)")
    p = cfg.ports
    if p.n_tx < 1 or p.n_rx < 1:
        problems.append("[ports] need at least one tx and one rx port")
    if attempt("[ports]", cfg.feed_ports) is not None and p.pitch <= 0:
        problems.append("[ports] pitch must be > 0")
    attempt("[aperture]", cfg.aperture_grid)
    if cfg.aperture.standoff <= 0:
        problems.append("[aperture] standoff must be > 0")
    roi = attempt("[roi]", cfg.roi_grid)
    a = cfg.admm
    attempt("[admm]", cfg.admm_config)
    if cfg.postproc.na < 0 or cfg.postproc.na % 2:
        problems.append("[postproc] na must be a non-negative even integer")
    if cfg.noise.snr_db != cfg.noise.snr_db:
        problems.append("[noise] snr_db must be a number or inf")
    if cfg.calibration.method not in ("auto", "fft", "direct"):
        problems.append("[calibration] method must be auto, fft or direct")
    if cfg.target.shape not in ("t_shape", "box", "point_set"):
        problems.append(f"[target] unknown shape {cfg.target.shape!r}")
    elif roi is not None:
        from .scene import rasterize_target

        attempt("[target]", lambda: rasterize_target(cfg.target_spec(), roi))
    if roi is not None and f.count >= 1:
        rows = f.count * p.n_tx * p.n_rx
        if a.block_count > rows:
            problems.append(f"[admm] block_count {a.block_count} exceeds the {rows} measurement rows")
    return problems


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file {path} does not exist"])
    return parse_config(path.read_text())


def write_config(cfg: ExperimentConfig, path):
    """Write ``cfg`` as INI so that :func:`load_config` round-trips it."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name in SECTIONS:
        section = getattr(cfg, name)
        parser[name] = {}
        for f in dataclasses.fields(section):
            val = getattr(section, f.name)
            if isinstance(val, tuple):
                text = ", ".join(repr(float(v)) for v in val)
            elif isinstance(val, bool):
                text = "true" if val else "false"
            elif isinstance(val, complex):
                text = repr(val).strip("()")
            elif isinstance(val, float):
                text = "inf" if math.isinf(val) else repr(val)
            else:
                text = str(val)
            parser[name][f.name] = text
    with open(path, "w") as fh:
        parser.write(fh)

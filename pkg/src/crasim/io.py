"""On-disk formats.

Binary arrays: little-endian complex128 stored as interleaved (real, imag)
float64 pairs in row-major order, next to a JSON sidecar with the same stem
(``H.bin`` + ``H.json``) recording ``shape`` plus stage metadata.

Meshes: plain-text ``v x y z`` / ``f i j k`` lines (1-based indices) with a
JSON sidecar holding reflector parameters, seed and per-vertex distortions.
"""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .geometry import ReflectorParams, TriMesh

BIN_DTYPE = "<c16"


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_json(path, data: dict):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def save_complex(path, array, meta: dict | None = None) -> Path:
    path = Path(path)
    arr = np.ascontiguousarray(np.asarray(array, dtype=complex))
    arr.astype(BIN_DTYPE).tofile(path)
    info = dict(meta or {})
    info.update({"shape": list(arr.shape), "dtype": "complex128", "byte_order": "little",
                 "layout": "row-major interleaved real/imag"})
    write_json(sidecar_path(path), info)
    return path


def load_complex(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = read_json(sidecar_path(path))
    data = np.fromfile(path, dtype=BIN_DTYPE)
    return data.astype(complex).reshape(meta["shape"]), meta


def write_mesh(mesh: TriMesh, path, meta: dict | None = None) -> Path:
    path = Path(path)
    lines = ["# crasim reflector mesh, millimetres"]
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    path.write_text("\n".join(lines) + "\n")
    info = dict(meta or {})
    info["params"] = None if mesh.params is None else vars(mesh.params)
    info["distortions"] = mesh.distortions.tolist()
    info["n_vertices"] = len(mesh.vertices)
    info["n_faces"] = mesh.n_faces
    write_json(sidecar_path(path), info)
    return path


def read_mesh(path) -> tuple[TriMesh, dict]:
    path = Path(path)
    verts, faces = [], []
    for line in path.read_text().splitlines():
        if line.startswith("v "):
            verts.append([float(t) for t in line.split()[1:4]])
        elif line.startswith("f "):
            faces.append([int(t) - 1 for t in line.split()[1:4]])
    meta = read_json(sidecar_path(path))
    params = ReflectorParams(**meta["params"]) if meta.get("params") else None
    mesh = TriMesh(np.array(verts, float).reshape(-1, 3), np.array(faces, np.int64).reshape(-1, 3),
                   np.array(meta["distortions"], float), params)
    return mesh, meta


def write_csv_image(path, image: np.ndarray):
    np.savetxt(path, np.asarray(image, dtype=float), delimiter=",", fmt="%.17g")


def write_pgm(path, image: np.ndarray, vmax: float | None = None):
    """8-bit binary PGM, scaled so ``vmax`` (default: image max) maps to 255."""
    img = np.abs(np.asarray(image)).astype(float)
    top = float(img.max(initial=0.0)) if vmax is None else vmax
    scaled = np.zeros(img.shape, np.uint8) if top <= 0 else np.clip(np.rint(img / top * 255), 0, 255).astype(np.uint8)
    h, w = scaled.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(scaled.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise ValueError("not a binary PGM file")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(raw[m.end():m.end() + w * h], dtype=np.uint8).reshape(h, w)

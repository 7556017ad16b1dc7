"""Artifact persistence: dense-matrix text format, CSV tables, run manifests.

Matrix format (diff-able, language-agnostic):
    line 1:  rows cols symmetry      (symmetry: general|symmetric|antisymmetric)
    then one row per line, row-major, '%.17g' values separated by spaces.
CSV bodies are deterministic for a fixed config and seed; timestamps go only
into the manifest.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from pathlib import Path

import numpy as np


def write_matrix(path, mat: np.ndarray, symmetry: str = "general") -> None:
    mat = np.asarray(mat, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"{mat.shape[0]} {mat.shape[1]} {symmetry}\n")
        for row in mat:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def read_matrix(path) -> tuple[np.ndarray, str]:
    with open(path) as fh:
        header = fh.readline().split()
        rows, cols, symmetry = int(header[0]), int(header[1]), header[2]
        data = np.loadtxt(fh, ndmin=2)
    if data.shape != (rows, cols):
        raise ValueError(f"matrix shape {data.shape} does not match header {(rows, cols)}")
    return data, symmetry


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, (np.floating,)):
        return f"{float(v):.17g}"
    return v


def save_quadrature(outdir, quad) -> None:
    """Serialize a quadrature rule in the matrix format (reproducibility)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    r, w, lid = quad.all_radial()
    write_matrix(outdir / "radial_nodes.mtx", np.column_stack([lid, r, w]), "general")
    write_matrix(
        outdir / "sphere_nodes.mtx",
        np.column_stack([quad.sphere.directions, quad.sphere.weights]),
        "general",
    )


def load_quadrature_arrays(outdir):
    radial, _ = read_matrix(Path(outdir) / "radial_nodes.mtx")
    sphere, _ = read_matrix(Path(outdir) / "sphere_nodes.mtx")
    return radial, sphere


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:16]


def write_manifest(outdir, config: dict, seed: int | None, extra: dict | None = None) -> Path:
    import scipy

    from . import __version__, kernel_backend

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config_hash": config_hash(config),
        "seed": seed,
        "versions": {
            "earthmodes": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "kernel_backend": kernel_backend,
        },
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "config": config,
    }
    if extra:
        manifest.update(extra)
    path = outdir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
    return path

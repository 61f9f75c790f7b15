"""Plot-data files, SVG heat maps and the output manifest."""

import csv
import hashlib
import json
import os

import numpy as np

# schema-stable headers of every CSV artifact
HEADERS = {
    "metrics": ("preset", "scale", "epsilon", "r_rho", "r_g", "nv_rq", "E_rho", "R_rho", "E_vf",
                "R_vf", "E_f", "R_f", "compression_ratio", "offline_ms", "online_ms",
                "predict_ms", "fom_test_ms"),
    "error_history": ("n", "t", "rel_rho", "rel_vf", "rel_f"),
    "sampled_nodes": ("vx", "vy", "vz", "weight", "initial"),
    "grid": ("j", "i", "x", "y", "value"),
    "moments": ("n", "t", "cell", "rho", "vf_x", "vf_y"),
    "prediction": ("direction", "vx", "vy", "vz", "n", "t", "cell", "f"),
    "quad_certificate": ("degree", "max_harmonic_moment", "y00_error", "weight_sum",
                         "min_weight", "n_nodes"),
}

# sampled points of a perceptually ordered blue-green-yellow ramp
_RAMP = np.array([
    (68, 1, 84), (72, 40, 120), (62, 74, 137), (49, 104, 142), (38, 130, 142),
    (31, 158, 137), (53, 183, 121), (109, 205, 89), (180, 222, 44), (253, 231, 37),
], dtype=float)


def write_csv(path, kind, rows):
    header = HEADERS[kind]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"{kind} row has {len(row)} fields, expected {len(header)}")
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                             for v in row])


def read_header(path):
    with open(path, newline="") as fh:
        return tuple(next(csv.reader(fh)))


def grid_rows(mesh, values):
    xc, yc = mesh.cell_centers()
    values = np.asarray(values, dtype=float)
    for k in range(mesh.n_dof):
        yield (k // mesh.nx, k % mesh.nx, xc[k], yc[k], values[k])


def colour(t):
    """Map ``t`` in [0, 1] to an ``#rrggbb`` string."""
    t = min(max(float(t), 0.0), 1.0) * (len(_RAMP) - 1)
    i = min(int(t), len(_RAMP) - 2)
    c = _RAMP[i] + (t - i) * (_RAMP[i + 1] - _RAMP[i])
    return "#{:02x}{:02x}{:02x}".format(*(int(round(v)) for v in c))


def heatmap_svg(mesh, values, title="", cell_px=None, log_scale=False):
    """One filled rectangle per cell, y axis pointing up."""
    values = np.asarray(values, dtype=float)
    if log_scale:
        values = np.log10(np.maximum(np.abs(values), 1e-300))
        finite = values[values > -300]
        floor = finite.min() if finite.size else 0.0
        values = np.maximum(values, floor)
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo if hi > lo else 1.0
    px = cell_px or max(2, 400 // max(mesh.nx, mesh.ny))
    width, height = mesh.nx * px, mesh.ny * px
    top = 24 if title else 0
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height + top}" '
             f'viewBox="0 0 {width} {height + top}">']
    if title:
        parts.append(f'<text x="4" y="16" font-family="sans-serif" font-size="12">{title} '
                     f'[{lo:.3g}, {hi:.3g}]</text>')
    for k in range(mesh.n_dof):
        i, j = k % mesh.nx, k // mesh.nx
        y = top + (mesh.ny - 1 - j) * px
        parts.append(f'<rect x="{i * px}" y="{y}" width="{px}" height="{px}" '
                     f'fill="{colour((values[k] - lo) / span)}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, name="manifest.json"):
    """List every file under ``out_dir`` (except the manifest) with its SHA-256."""
    entries = []
    for root, _, files in os.walk(out_dir):
        for f in sorted(files):
            path = os.path.join(root, f)
            rel = os.path.relpath(path, out_dir)
            if rel == name:
                continue
            entries.append({"path": rel, "sha256": sha256_file(path),
                            "bytes": os.path.getsize(path)})
    entries.sort(key=lambda e: e["path"])
    manifest = os.path.join(out_dir, name)
    with open(manifest, "w") as fh:
        json.dump({"artifacts": entries}, fh, indent=2)
        fh.write("\n")
    return manifest

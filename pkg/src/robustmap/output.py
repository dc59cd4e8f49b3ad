"""File emission: atomic writes, PGM maps and small CSV tables."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Workspace
from .sensing import MeasurementModel


def write_atomic(path, data: str | bytes) -> None:
    """Write to a temporary sibling and rename it over ``path``."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    if isinstance(data, str):
        tmp.write_text(data)
    else:
        tmp.write_bytes(data)
    os.replace(tmp, path)


def rasterize(values, locations, workspace: Workspace, width: int, height: int) -> np.ndarray:
    """Nearest-location raster, shape (height, width), row 0 at the top (north)."""
    xs = workspace.x_min + (np.arange(width) + 0.5) * (workspace.x_max - workspace.x_min) / width
    ys = workspace.y_max - (np.arange(height) + 0.5) * (workspace.y_max - workspace.y_min) / height
    gx, gy = np.meshgrid(xs, ys)
    _, idx = cKDTree(np.asarray(locations, dtype=float)).query(np.column_stack([gx.ravel(), gy.ravel()]))
    return np.asarray(values, dtype=float)[idx].reshape(height, width)


def render_map_pgm(
    values, locations, workspace: Workspace, meas: MeasurementModel, width: int = 128, height: int | None = None
) -> bytes:
    """8-bit binary PGM (P5) of a field given at scattered locations.

    Intensities map linearly from [i_min, i_max] onto [0, 255].
    """
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("map values must be finite")
    if height is None:
        aspect = (workspace.y_max - workspace.y_min) / (workspace.x_max - workspace.x_min)
        height = max(1, int(round(width * aspect)))
    img = rasterize(v, locations, workspace, width, height)
    scaled = np.clip((img - meas.i_min) / meas.span, 0.0, 1.0) * 255.0
    pixels = np.rint(scaled).astype(np.uint8)
    return f"P5\n{width} {height}\n255\n".encode() + pixels.tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    """Parse a binary P5 PGM (no comments) into a (height, width) uint8 array."""
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only 8-bit PGM supported")
    pixels = np.frombuffer(parts[4], dtype=np.uint8)
    return pixels[: width * height].reshape(height, width)


def waypoints_csv(rows) -> str:
    """``rows``: iterable of (t, positions array)."""
    lines = ["t,robot,x,y"]
    for t, xy in rows:
        lines += [f"{t},{i},{x!r},{y!r}" for i, (x, y) in enumerate(np.asarray(xy, dtype=float).tolist())]
    return "\n".join(lines) + "\n"


def cost_trace_csv(rows) -> str:
    """``rows``: iterable of (t, per-sweep cost list)."""
    lines = ["t,sweep,cost"]
    for t, costs in rows:
        lines += [f"{t},{s},{float(c)!r}" for s, c in enumerate(costs)]
    return "\n".join(lines) + "\n"

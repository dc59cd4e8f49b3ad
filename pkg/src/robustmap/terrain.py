"""Ground-truth fields: ESRI ASCII / CSV grids, bilinear sampling, synthetic terrain."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import Workspace
from .rng import stream

log = logging.getLogger(__name__)

__all__ = [
    "TerrainField",
    "GridParseError",
    "load_ascii_grid",
    "load_csv_grid",
    "load_grid",
    "ascii_grid_text",
    "csv_grid_text",
    "sample_terrain",
    "synthetic_terrain",
]

DEFAULT_NODATA = -9999.0


class GridParseError(ValueError):
    def __init__(self, path, line, msg):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = str(path)
        self.line = line


@dataclass(frozen=True)
class TerrainField:
    """Cell values laid out like the file: row 0 is the northern edge."""

    values: np.ndarray  # (nrows, ncols)
    bounds: Workspace
    nodata: float = DEFAULT_NODATA
    filled: int = field(default=0, compare=False)

    @property
    def nrows(self) -> int:
        return self.values.shape[0]

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    @property
    def cellsize(self) -> tuple[float, float]:
        b = self.bounds
        return (b.x_max - b.x_min) / self.ncols, (b.y_max - b.y_min) / self.nrows

    def cell_centers(self) -> np.ndarray:
        """(nrows, ncols, 2) array of cell-centre coordinates."""
        cx, cy = self.cellsize
        xs = self.bounds.x_min + (np.arange(self.ncols) + 0.5) * cx
        ys = self.bounds.y_max - (np.arange(self.nrows) + 0.5) * cy
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy], axis=-1)

    def clamped(self, lo: float, hi: float) -> "TerrainField":
        return TerrainField(np.clip(self.values, lo, hi), self.bounds, self.nodata, self.filled)

    def __call__(self, q) -> np.ndarray:
        return sample_terrain(self, q)


def _fill_nodata(values: np.ndarray, missing: np.ndarray) -> tuple[np.ndarray, int]:
    n = int(missing.sum())
    if n == 0:
        return values, 0
    if n == missing.size:
        raise ValueError("grid contains no valid cells")
    _, (ri, ci) = ndimage.distance_transform_edt(missing, return_indices=True)
    return values[ri, ci], n


def _finish(values: np.ndarray, bounds: Workspace, nodata: float, path) -> TerrainField:
    missing = ~np.isfinite(values) | (values == nodata)
    values, n = _fill_nodata(np.where(missing, 0.0, values), missing)
    if n:
        log.warning("%s: filled %d NODATA cell(s) from nearest valid neighbour", path, n)
    values.setflags(write=False)
    return TerrainField(values, bounds, nodata, n)


_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize")


def load_ascii_grid(path) -> TerrainField:
    """Read an ESRI ASCII grid (``.asc``)."""
    path = Path(path)
    lines = path.read_text().splitlines()
    header: dict[str, float] = {}
    lineno = 0
    while lineno < len(lines):
        parts = lines[lineno].split()
        if not parts:
            lineno += 1
            continue
        key = parts[0].lower()
        if key[0].isdigit() or key[0] in "+-.":
            break
        if len(parts) != 2:
            raise GridParseError(path, lineno + 1, f"malformed header line {lines[lineno]!r}")
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise GridParseError(path, lineno + 1, f"non-numeric value for {parts[0]}") from None
        lineno += 1
    # centre-registered grids are shifted to corner registration
    for axis in ("x", "y"):
        if f"{axis}llcenter" in header and f"{axis}llcorner" not in header and "cellsize" in header:
            header[f"{axis}llcorner"] = header.pop(f"{axis}llcenter") - header["cellsize"] / 2
    for key in _HEADER_KEYS:
        if key not in header:
            raise GridParseError(path, lineno + 1, f"missing header key {key!r}")
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    if ncols < 1 or nrows < 1 or header["cellsize"] <= 0:
        raise GridParseError(path, 1, "ncols, nrows and cellsize must be positive")
    nodata = header.get("nodata_value", DEFAULT_NODATA)

    tokens: list[str] = []
    for i in range(lineno, len(lines)):
        tokens.extend(lines[i].split())
        if len(tokens) > nrows * ncols:
            raise GridParseError(path, i + 1, f"more than {nrows * ncols} values")
    if len(tokens) < nrows * ncols:
        raise GridParseError(path, len(lines), f"expected {nrows * ncols} values, found {len(tokens)}")
    try:
        values = np.array(tokens, dtype=float).reshape(nrows, ncols)
    except ValueError as exc:
        raise GridParseError(path, lineno + 1, f"non-numeric grid value ({exc})") from None

    cs = header["cellsize"]
    x0, y0 = header["xllcorner"], header["yllcorner"]
    return _finish(values, Workspace(x0, x0 + ncols * cs, y0, y0 + nrows * cs), nodata, path)


def load_csv_grid(path, bounds: Workspace | None = None, nodata: float = DEFAULT_NODATA) -> TerrainField:
    """Read a bare numeric CSV grid; the first line is the northern row.

    Empty fields and ``nan`` count as missing, as does ``nodata``.  CSV
    carries no georeferencing, so without ``bounds`` each cell is a unit
    square with the lower-left corner at the origin.
    """
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) if c.strip() else math.nan for c in row])
            except ValueError:
                raise GridParseError(path, lineno, "non-numeric field") from None
            if len(rows[-1]) != len(rows[0]):
                raise GridParseError(path, lineno, f"expected {len(rows[0])} fields, found {len(rows[-1])}")
    if not rows:
        raise GridParseError(path, 1, "empty grid")
    values = np.array(rows)
    if bounds is None:
        bounds = Workspace(0.0, float(values.shape[1]), 0.0, float(values.shape[0]))
    return _finish(values, bounds, nodata, path)


def load_grid(path, bounds: Workspace | None = None) -> TerrainField:
    """Dispatch on extension: ``.csv`` is a bare grid, anything else ESRI ASCII."""
    if str(path).lower().endswith(".csv"):
        return load_csv_grid(path, bounds)
    return load_ascii_grid(path)


def ascii_grid_text(fld: TerrainField) -> str:
    cx, cy = fld.cellsize
    if not math.isclose(cx, cy, rel_tol=1e-9):
        raise ValueError(f"ESRI ASCII grids need square cells, got {cx} x {cy}")
    out = io.StringIO()
    out.write(f"ncols {fld.ncols}\nnrows {fld.nrows}\n")
    out.write(f"xllcorner {float(fld.bounds.x_min)!r}\nyllcorner {float(fld.bounds.y_min)!r}\n")
    out.write(f"cellsize {float(cx)!r}\nNODATA_value {float(fld.nodata)!r}\n")
    for row in fld.values:
        out.write(" ".join(repr(float(v)) for v in row) + "\n")
    return out.getvalue()


def csv_grid_text(fld: TerrainField) -> str:
    return "".join(",".join(repr(float(v)) for v in row) + "\n" for row in fld.values)


def sample_terrain(fld: TerrainField, q) -> np.ndarray | float:
    """Bilinear interpolation between cell centres.

    Points outside the field are clamped onto its boundary; inside the
    outer half-cell the edge value is held constant.
    """
    q = np.asarray(q, dtype=float)
    pts = q.reshape(-1, 2)
    b = fld.bounds
    outside = ~((pts[:, 0] >= b.x_min) & (pts[:, 0] <= b.x_max) & (pts[:, 1] >= b.y_min) & (pts[:, 1] <= b.y_max))
    if np.any(outside):
        log.debug("clamped %d sample point(s) onto the terrain bounds", int(outside.sum()))
    cx, cy = fld.cellsize
    fx = np.clip((pts[:, 0] - b.x_min) / cx - 0.5, 0.0, fld.ncols - 1)
    fy = np.clip((b.y_max - pts[:, 1]) / cy - 0.5, 0.0, fld.nrows - 1)
    c0 = np.minimum(np.floor(fx).astype(np.intp), max(fld.ncols - 2, 0))
    r0 = np.minimum(np.floor(fy).astype(np.intp), max(fld.nrows - 2, 0))
    c1 = np.minimum(c0 + 1, fld.ncols - 1)
    r1 = np.minimum(r0 + 1, fld.nrows - 1)
    tx = fx - c0
    ty = fy - r0
    v = fld.values
    top = v[r0, c0] * (1 - tx) + v[r0, c1] * tx
    bot = v[r1, c0] * (1 - tx) + v[r1, c1] * tx
    out = top * (1 - ty) + bot * ty
    return float(out[0]) if q.ndim == 1 else out.reshape(q.shape[:-1])


def synthetic_terrain(
    seed: int,
    kind: str,
    workspace: Workspace,
    count: int = 6,
    i_min: float = -1000.0,
    i_max: float = 4000.0,
    value: float | None = None,
    nx: int = 128,
    ny: int | None = None,
) -> TerrainField:
    """Deterministic synthetic field.

    ``gaussian-bumps`` sums ``count`` random positive bumps and rescales the
    result to span [i_min, i_max]; ``ramp`` rises linearly west to east;
    ``constant`` is flat at ``value`` (default: mid-range).
    """
    if ny is None:
        ny = max(2, int(round(nx * (workspace.y_max - workspace.y_min) / (workspace.x_max - workspace.x_min))))
    probe = TerrainField(np.zeros((ny, nx)), workspace)
    centers = probe.cell_centers()
    if kind == "constant":
        vals = np.full((ny, nx), (i_min + i_max) / 2 if value is None else float(value))
    elif kind == "ramp":
        u = (centers[..., 0] - workspace.x_min) / (workspace.x_max - workspace.x_min)
        vals = i_min + u * (i_max - i_min)
    elif kind == "gaussian-bumps":
        if count < 1:
            raise ValueError("gaussian-bumps needs count >= 1")
        rng = stream(seed, "terrain")
        mu = workspace.to_unit(rng.random((count, 2)))
        width = workspace.diagonal * rng.uniform(0.06, 0.2, count)
        amp = rng.uniform(0.3, 1.0, count)
        s = np.zeros((ny, nx))
        for m, w, a in zip(mu, width, amp):
            d2 = np.sum((centers - m) ** 2, axis=-1)
            s += a * np.exp(-d2 / (2 * w * w))
        span = s.max() - s.min()
        s = (s - s.min()) / span if span > 0 else np.zeros_like(s)
        vals = i_min + s * (i_max - i_min)
    else:
        raise ValueError(f"unknown terrain kind {kind!r}")
    vals.setflags(write=False)
    return TerrainField(vals, workspace)


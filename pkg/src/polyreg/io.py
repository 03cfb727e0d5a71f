"""File formats: field CSV, image CSV/PGM, cell-mask CSV, certificate bundles.

Fields are written as `i,j,x,y,u1,u2` rows in row-major node order (j varies
fastest).  Scalar images use `i,j,value` triplets on the same convention, or
16-bit binary PGM with the physical value range declared in a comment line.
Cell masks are plain 0/1 matrices, one text row per i index.  Certificate
bundles are directories holding a JSON header plus one CSV per component.

All floats are written with repr, which round-trips exactly.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .bregman import PolySubgradient
from .fields import CellMask, Grid, MatrixField
from .registration import ScalarImage


def _fmt(x) -> str:
    return repr(float(x))


def save_field(path, u) -> None:
    grid = u.grid
    pts = grid.node_points
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write("i,j,x,y,u1,u2\n")
        for i in range(grid.nx):
            for j in range(grid.ny):
                fh.write(
                    f"{i},{j},{_fmt(pts[i, j, 0])},{_fmt(pts[i, j, 1])},"
                    f"{_fmt(u.values[i, j, 0])},{_fmt(u.values[i, j, 1])}\n"
                )


def load_field(path, grid) -> MatrixField:
    values = np.zeros(grid.node_shape + (2,))
    seen = np.zeros(grid.node_shape, dtype=bool)
    with open(path, encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "i,j,x,y,u1,u2":
            raise ValueError(f"unexpected field header {header!r}")
        for line in fh:
            if not line.strip():
                continue
            i_s, j_s, _, _, u1_s, u2_s = line.split(",")
            i, j = int(i_s), int(j_s)
            values[i, j] = (float(u1_s), float(u2_s))
            seen[i, j] = True
    if not seen.all():
        raise ValueError("field file does not cover every node")
    return MatrixField(grid, values)


def save_image_csv(path, image) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write("i,j,value\n")
        for i in range(image.grid.nx):
            for j in range(image.grid.ny):
                fh.write(f"{i},{j},{_fmt(image.samples[i, j])}\n")


def load_image_csv(path, grid) -> ScalarImage:
    samples = np.zeros(grid.node_shape)
    with open(path, encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "i,j,value":
            raise ValueError(f"unexpected image header {header!r}")
        for line in fh:
            if not line.strip():
                continue
            i_s, j_s, v_s = line.split(",")
            samples[int(i_s), int(j_s)] = float(v_s)
    return ScalarImage(grid, samples)


def save_pgm(path, image) -> None:
    """16-bit binary PGM; the physical range is declared in a comment.

    Raster rows run over the j (y) index top-down starting from the largest
    j, columns over i; values are quantized linearly onto 0..65535.
    """
    lo, hi = image.min_max()
    span = hi - lo if hi > lo else 1.0
    quant = np.rint((image.samples - lo) / span * 65535.0).astype(">u2")
    raster = quant.T[::-1, :]  # rows: j descending; cols: i ascending
    header = (
        f"P5\n# scale {_fmt(lo)} {_fmt(hi)}\n"
        f"{image.grid.nx} {image.grid.ny}\n65535\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(raster.tobytes())


def load_pgm(path, grid) -> ScalarImage:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 1)
    if parts[0].strip() != b"P5":
        raise ValueError("not a binary PGM file")
    rest = parts[1]
    lo, hi = 0.0, 65535.0
    tokens = []
    while len(tokens) < 3:
        line, rest = rest.split(b"\n", 1)
        line = line.strip()
        if line.startswith(b"#"):
            fields = line.split()
            if len(fields) == 4 and fields[1] == b"scale":
                lo, hi = float(fields[2]), float(fields[3])
            continue
        tokens.extend(line.split())
    width, height, maxval = (int(t) for t in tokens[:3])
    if maxval != 65535:
        raise ValueError("expected a 16-bit PGM")
    if (width, height) != grid.node_shape:
        raise ValueError(f"PGM size {(width, height)} does not match the grid")
    raster = np.frombuffer(rest, dtype=">u2", count=width * height)
    quant = raster.reshape(height, width)[::-1, :].T.astype(float)
    return ScalarImage(grid, lo + (hi - lo) * quant / 65535.0)


def save_mask(path, mask) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        for row in mask.active.astype(int):
            fh.write(",".join(str(v) for v in row) + "\n")


def load_mask(path) -> CellMask:
    rows = []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([int(v) for v in line.split(",")])
    return CellMask(np.asarray(rows, dtype=bool), kind="cells")


def save_subgradient(directory, w, protocol=None) -> None:
    """Write a certificate bundle: JSON header plus per-component CSVs."""
    os.makedirs(directory, exist_ok=True)
    grid = w.base_point.grid
    header = {
        "nx": grid.nx,
        "ny": grid.ny,
        "bounds": [list(b) for b in grid.bounds],
        "tau2": int(w.v2.shape[-1]),
        "base_energy": float(w.base_energy),
        "protocol": protocol or {},
    }
    with open(os.path.join(directory, "header.json"), "w", encoding="ascii") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")

    with open(os.path.join(directory, "u0.csv"), "w", encoding="ascii", newline="") as fh:
        fh.write("i,j,g1,g2\n")
        for i in range(grid.nx):
            for j in range(grid.ny):
                fh.write(f"{i},{j},{_fmt(w.u0[i, j, 0])},{_fmt(w.u0[i, j, 1])}\n")

    ncx, ncy = grid.cell_shape
    with open(os.path.join(directory, "u1.csv"), "w", encoding="ascii", newline="") as fh:
        fh.write("i,j,a11,a12,a21,a22\n")
        for i in range(ncx):
            for j in range(ncy):
                a = w.u1[i, j]
                fh.write(f"{i},{j},{_fmt(a[0, 0])},{_fmt(a[0, 1])},"
                         f"{_fmt(a[1, 0])},{_fmt(a[1, 1])}\n")

    tau2 = w.v2.shape[-1]
    with open(os.path.join(directory, "v2.csv"), "w", encoding="ascii", newline="") as fh:
        fh.write("i,j," + ",".join(f"v{k+1}" for k in range(tau2)) + "\n")
        for i in range(ncx):
            for j in range(ncy):
                vals = ",".join(_fmt(v) for v in w.v2[i, j])
                fh.write(f"{i},{j},{vals}\n")

    save_field(os.path.join(directory, "base_field.csv"), w.base_point)


def load_subgradient(directory, mask=None) -> PolySubgradient:
    with open(os.path.join(directory, "header.json"), encoding="ascii") as fh:
        header = json.load(fh)
    bounds = tuple(tuple(b) for b in header["bounds"])
    grid = Grid(bounds, header["nx"], header["ny"], mask)
    base = load_field(os.path.join(directory, "base_field.csv"), grid)

    u0 = np.zeros(grid.node_shape + (2,))
    with open(os.path.join(directory, "u0.csv"), encoding="ascii") as fh:
        fh.readline()
        for line in fh:
            if line.strip():
                i_s, j_s, g1, g2 = line.split(",")
                u0[int(i_s), int(j_s)] = (float(g1), float(g2))

    u1 = np.zeros(grid.cell_shape + (2, 2))
    with open(os.path.join(directory, "u1.csv"), encoding="ascii") as fh:
        fh.readline()
        for line in fh:
            if line.strip():
                i_s, j_s, *entries = line.split(",")
                u1[int(i_s), int(j_s)] = np.asarray(
                    [float(e) for e in entries]).reshape(2, 2)

    tau2 = int(header["tau2"])
    v2 = np.zeros(grid.cell_shape + (tau2,))
    with open(os.path.join(directory, "v2.csv"), encoding="ascii") as fh:
        fh.readline()
        for line in fh:
            if line.strip():
                i_s, j_s, *entries = line.split(",")
                v2[int(i_s), int(j_s)] = [float(e) for e in entries]

    return PolySubgradient(u0, u1, v2, base_point=base,
                           base_energy=float(header["base_energy"]))

"""Measure files, density grids, grayscale images, and iteration logs.

Measure text format: one atom per line, ``x1 [x2 [x3]] weight``, with ``#``
starting a comment. Densities are written as row-major CSV with the header
``rows,cols,x0,y0,dx,dy,mass`` and as 8-bit binary PGM (one byte per cell,
max-normalized). PGM files are also accepted back as densities.
"""

from __future__ import annotations

import numpy as np

from .measures import DiscreteMeasure, Grid


def save_measure(measure: DiscreteMeasure, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# discrete measure: {measure.n_atoms} atoms in R^{measure.d}\n")
        for p, w in zip(measure.points, measure.weights):
            coords = " ".join(repr(float(c)) for c in p)
            fh.write(f"{coords} {float(w)!r}\n")


def load_measure(path) -> DiscreteMeasure:
    points, weights = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) < 2 or len(parts) > 4:
                raise ValueError(f"{path}:{lineno}: expected 'x1 [x2 [x3]] weight'")
            try:
                vals = [float(v) for v in parts]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            points.append(vals[:-1])
            weights.append(vals[-1])
    if not points:
        raise ValueError(f"{path}: no atoms found")
    return DiscreteMeasure(np.array(points), np.array(weights))


def measure_to_grid(measure: DiscreteMeasure, grid: Grid) -> np.ndarray:
    """Cell-mass array in ``grid.shape`` row-major order."""
    masses = np.zeros(grid.n_cells)
    np.add.at(masses, grid.cell_of(measure.points), measure.weights)
    return masses.reshape(grid.shape)


def save_density_csv(path, grid: Grid, cell_masses: np.ndarray) -> None:
    if grid.d != 2:
        raise ValueError("density CSV output is two-dimensional")
    arr = np.asarray(cell_masses, dtype=np.float64).reshape(grid.shape)
    with open(path, "w") as fh:
        fh.write("rows,cols,x0,y0,dx,dy,mass\n")
        fh.write(
            f"{grid.shape[0]},{grid.shape[1]},{float(grid.lower[0])!r},{float(grid.lower[1])!r},"
            f"{float(grid.cell_sizes[0])!r},{float(grid.cell_sizes[1])!r},{float(arr.sum())!r}\n"
        )
        for row in arr:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_density_csv(path) -> tuple[Grid, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != ["rows", "cols", "x0", "y0", "dx", "dy", "mass"]:
            raise ValueError(f"{path}: unexpected CSV header")
        meta = fh.readline().strip().split(",")
        rows, cols = int(meta[0]), int(meta[1])
        x0, y0, dx, dy = (float(v) for v in meta[2:6])
        data = np.loadtxt(fh, delimiter=",").reshape(rows, cols)
    grid = Grid([x0, y0], [x0 + rows * dx, y0 + cols * dy], [rows, cols])
    return grid, data


def save_pgm(path, cell_masses: np.ndarray) -> None:
    """Binary PGM, max-normalized; one byte per cell."""
    arr = np.asarray(cell_masses, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("PGM output is two-dimensional")
    peak = arr.max()
    scaled = np.zeros_like(arr) if peak <= 0 else arr / peak
    bytes_ = np.round(scaled * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode())
        fh.write(bytes_.tobytes())


def load_pgm(path) -> np.ndarray:
    """Read P5/P2 PGM as a float array normalized to [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens = []
    i = 0
    while len(tokens) < 4:
        while i < len(blob) and blob[i : i + 1].isspace():
            i += 1
        if blob[i : i + 1] == b"#":
            while i < len(blob) and blob[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(blob) and not blob[i : i + 1].isspace():
            i += 1
        tokens.append(blob[start:i])
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P5":
        data = np.frombuffer(blob[i + 1 : i + 1 + width * height], dtype=np.uint8)
    elif magic == b"P2":
        data = np.array(blob[i:].split(), dtype=np.float64)
    else:
        raise ValueError(f"{path}: not a PGM file")
    if data.size != width * height:
        raise ValueError(f"{path}: truncated PGM payload")
    return data.reshape(height, width).astype(np.float64) / float(maxval)


def save_iteration_log(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("iter,phi,grad_inf,step\n")
        for it, phi, ginf, step in rows:
            fh.write(f"{it},{float(phi)!r},{float(ginf)!r},{float(step)!r}\n")

"""Oriented raster volumes: T2 estimation, edge-preserving smoothing, geometry.

A :class:`VoxelGrid` is a regularly spaced scalar raster with an arbitrary
rigid pose in world (mm) coordinates.  Invalid voxels are stored as quiet
NaN and are excluded from every stencil; they are never interpolated.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

GRID_UNITS = ("ms", "arbitrary-signal")

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class VoxelGrid:
    """Oriented, regularly spaced scalar raster.

    Parameters
    ----------
    dims : (3,) int
        Voxel counts (nx, ny, nz).
    spacing : (3,) float
        Voxel spacing in mm, strictly positive.
    origin : (3,) float
        World position (mm) of the center of voxel (0, 0, 0).
    direction : (3, 3) float
        Orthonormal matrix whose columns are the world directions of the
        index axes.
    values : ndarray, shape (nx, ny, nz)
        Scalar values indexed [i, j, k]; NaN marks an invalid voxel.
        The on-disk layout is the x-fastest flattening of this array.
    unit : str
        "ms" or "arbitrary-signal".
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    direction: np.ndarray
    values: np.ndarray
    unit: str = "ms"

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise ValueError(f"dims must be three positive integers, got {self.dims}")
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be strictly positive, got {self.spacing}")
        d = self.direction
        if d.shape != (3, 3):
            raise ValueError("direction must be a 3x3 matrix")
        if abs(abs(np.linalg.det(d)) - 1.0) > _ORTHO_TOL or not np.allclose(
            d.T @ d, np.eye(3), atol=1e-8
        ):
            raise ValueError("direction must be orthonormal (|det| = 1)")
        if self.values.shape != self.dims:
            raise ValueError(
                f"values shape {self.values.shape} does not match dims {self.dims}"
            )
        if self.unit not in GRID_UNITS:
            raise ValueError(f"unit must be one of {GRID_UNITS}, got {self.unit!r}")

    @classmethod
    def from_flat(cls, dims, spacing, origin, direction, flat_values, unit="ms"):
        """Build a grid from x-fastest flat values (the file layout)."""
        dims = tuple(int(d) for d in dims)
        flat = np.asarray(flat_values, dtype=float)
        if flat.size != dims[0] * dims[1] * dims[2]:
            raise ValueError(
                f"got {flat.size} values for dims {dims} "
                f"(expected {dims[0] * dims[1] * dims[2]})"
            )
        values = flat.reshape(dims, order="F")
        return cls(dims, spacing, origin, direction, values, unit)

    @property
    def flat_values(self) -> np.ndarray:
        """Values in x-fastest order, matching the on-disk layout."""
        return self.values.ravel(order="F")

    @property
    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.values)

    def with_values(self, values: np.ndarray, unit: str | None = None) -> VoxelGrid:
        return replace(self, values=values, unit=unit or self.unit)


def index_to_world(grid: VoxelGrid, index) -> np.ndarray:
    """World coordinates (mm) of a voxel center; accepts fractional indices."""
    idx = np.atleast_2d(np.asarray(index, dtype=float))
    pts = np.asarray(grid.origin) + (idx * np.asarray(grid.spacing)) @ grid.direction.T
    return pts[0] if np.ndim(index) == 1 else pts


def world_to_index(grid: VoxelGrid, point):
    """Map world points (mm) to integer voxel indices.

    The continuous index is ``direction^-1 (point - origin) / spacing``;
    each component is rounded half-up (ties toward +inf, ``floor(c + 0.5)``)
    so nearest-neighbor lookups are deterministic.  Out-of-bounds points are
    not an error: the rounded index is returned with ``in_bounds`` False.

    Returns
    -------
    (index, in_bounds)
        ``index`` is an int array (3,) or (n, 3); ``in_bounds`` a bool or
        bool array (n,).
    """
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    cont = ((pts - np.asarray(grid.origin)) @ grid.direction) / np.asarray(grid.spacing)
    idx = np.floor(cont + 0.5).astype(np.int64)
    in_bounds = np.all((idx >= 0) & (idx < np.asarray(grid.dims)), axis=1)
    if np.ndim(point) == 1:
        return idx[0], bool(in_bounds[0])
    return idx, in_bounds


@dataclass(frozen=True)
class EchoSeries:
    """Multi-echo magnitude volumes sharing one geometry.

    ``echo_times`` (ms) must be strictly increasing with at least three
    entries; every grid must share dims/spacing/origin/direction exactly.
    """

    echo_times: tuple[float, ...]
    grids: tuple[VoxelGrid, ...]

    def __post_init__(self):
        object.__setattr__(self, "echo_times", tuple(float(t) for t in self.echo_times))
        object.__setattr__(self, "grids", tuple(self.grids))
        if len(self.echo_times) < 3:
            raise ValueError("an echo series needs at least 3 echoes")
        if len(self.echo_times) != len(self.grids):
            raise ValueError("echo_times and grids must have equal length")
        te = np.asarray(self.echo_times)
        if not np.all(np.diff(te) > 0):
            raise ValueError("echo_times must be strictly increasing")
        ref = self.grids[0]
        for g in self.grids[1:]:
            if (
                g.dims != ref.dims
                or g.spacing != ref.spacing
                or g.origin != ref.origin
                or not np.array_equal(g.direction, ref.direction)
            ):
                raise ValueError("all echo grids must share geometry exactly")


def fit_t2(series: EchoSeries, drop_first_echo: bool = False) -> VoxelGrid:
    """Per-voxel mono-exponential T2 from a multi-echo series.

    Fits ``S(TE) = S0 exp(-TE / T2)`` by least squares on ln S.  Voxels with
    any nonpositive or nonfinite echo value, a nonpositive fitted T2 (zero or
    growing decay), or a nonfinite fit are marked invalid (NaN).

    Parameters
    ----------
    series : EchoSeries
    drop_first_echo : bool
        Exclude the earliest echo from the fit (at least 3 echoes must
        remain).

    Returns
    -------
    VoxelGrid
        T2 in ms, same geometry as the input, NaN where invalid.
    """
    start = 1 if drop_first_echo else 0
    te = np.asarray(series.echo_times[start:], dtype=float)
    if te.size < 3:
        raise ValueError("need at least 3 usable echoes after the first-echo drop")
    ref = series.grids[0]
    signals = np.stack([g.values for g in series.grids[start:]], axis=-1)

    usable = np.all(np.isfinite(signals) & (signals > 0), axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(usable[..., None], np.log(np.maximum(signals, 1e-300)), 0.0)
        te_c = te - te.mean()
        slope = (logs * te_c).sum(axis=-1) / (te_c * te_c).sum()
        t2 = -1.0 / slope

    valid = usable & np.isfinite(t2) & (t2 > 0)
    out = np.where(valid, t2, np.nan)
    return ref.with_values(out, unit="ms")


def smooth_anisotropic_diffusion(
    grid: VoxelGrid,
    iterations: int = 5,
    time_step: float = 0.125,
    conductance: float = 3.0,
) -> VoxelGrid:
    """Edge-preserving gradient anisotropic diffusion (explicit 6-neighbor).

    Per iteration each voxel is updated by
    ``v_i += dt * sum_faces g(|grad|/K) * (v_n - v_i) / h^2`` with
    ``g(x) = exp(-x^2)`` and the face gradient ``(v_n - v_i)/h`` taken in
    physical units (h = spacing along the face axis, mm).  Boundary faces and
    faces into invalid (NaN) voxels carry zero flux, so invalid voxels act as
    walls and keep their NaN.

    The update is a convex combination, and therefore range-preserving,
    whenever ``dt * sum_axes 2/h^2 <= 1``; a warning is emitted outside that
    regime.

    Raises
    ------
    ValueError
        Nonpositive time step or conductance, or time step above the 0.25
        stability ceiling.
    """
    if time_step <= 0 or conductance <= 0:
        raise ValueError("time_step and conductance must be positive")
    if time_step > 0.25:
        raise ValueError("time_step must lie in (0, 0.25]")
    if iterations < 0:
        raise ValueError("iterations must be nonnegative")
    hx, hy, hz = grid.spacing
    diffusion_number = time_step * 2.0 * (1 / hx**2 + 1 / hy**2 + 1 / hz**2)
    if diffusion_number > 1.0 + 1e-12:
        warnings.warn(
            f"diffusion number {diffusion_number:.3f} > 1: the discrete max "
            "principle is not guaranteed at this time step and spacing",
            stacklevel=2,
        )

    valid = grid.valid_mask
    v = np.where(valid, grid.values, 0.0)
    k = float(conductance)
    for _ in range(int(iterations)):
        update = np.zeros_like(v)
        for axis, h in enumerate(grid.spacing):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[axis] = slice(None, -1)
            hi[axis] = slice(1, None)
            lo, hi = tuple(lo), tuple(hi)
            both_valid = valid[lo] & valid[hi]
            diff = np.where(both_valid, v[hi] - v[lo], 0.0)
            g = np.exp(-((diff / (h * k)) ** 2))
            flux = time_step * g * diff / h**2
            update[lo] += flux
            update[hi] -= flux
        v = v + update
    out = np.where(valid, v, np.nan)
    return grid.with_values(out)


def write_volume(grid: VoxelGrid, header_path, echo_time_ms: float | None = None) -> None:
    """Write a volume as a JSON header plus sibling .raw of little-endian
    float32 in x-fastest order (NaN encodes invalid voxels)."""
    header_path = Path(header_path)
    raw_path = header_path.with_suffix(".raw")
    header = {
        "dims": list(grid.dims),
        "spacing_mm": list(grid.spacing),
        "origin_mm": list(grid.origin),
        "direction": [float(x) for x in grid.direction.ravel()],
        "unit": grid.unit,
    }
    if echo_time_ms is not None:
        header["echo_time_ms"] = float(echo_time_ms)
    header_path.write_text(json.dumps(header, indent=2) + "\n")
    grid.flat_values.astype("<f4").tofile(raw_path)


def read_volume(header_path) -> VoxelGrid:
    """Read a volume written by :func:`write_volume`."""
    header_path = Path(header_path)
    header = json.loads(header_path.read_text())
    dims = tuple(header["dims"])
    raw_path = header_path.with_suffix(".raw")
    flat = np.fromfile(raw_path, dtype="<f4").astype(float)
    return VoxelGrid.from_flat(
        dims,
        header["spacing_mm"],
        header["origin_mm"],
        np.asarray(header["direction"], dtype=float).reshape(3, 3),
        flat,
        header.get("unit", "ms"),
    )


def read_echo_series(header_paths) -> EchoSeries:
    """Assemble an EchoSeries from volume headers carrying echo_time_ms."""
    grids = []
    times = []
    for p in header_paths:
        header = json.loads(Path(p).read_text())
        if "echo_time_ms" not in header:
            raise ValueError(f"{p}: header has no echo_time_ms")
        times.append(float(header["echo_time_ms"]))
        grids.append(read_volume(p))
    order = np.argsort(times)
    return EchoSeries(
        tuple(times[i] for i in order), tuple(grids[i] for i in order)
    )

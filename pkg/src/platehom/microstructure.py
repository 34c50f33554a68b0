"""N-phase voxel microstructures on the periodic cell and on the plate domain.

A ``VoxelGrid`` stores one phase id per hexahedral voxel, x-fastest then y
then z. The z direction always spans the unit-thickness interval
I = [-1/2, 1/2]; in-plane the cell domain is the unit torus and the plate
domain is the unit square.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class VoxelGrid:
    nx: int
    ny: int
    nz: int
    data: np.ndarray  # flat int array, length nx*ny*nz, x-fastest
    domain: str = "cell"  # "cell" (periodic in-plane) or "plate"

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.int32).ravel()
        if self.nx <= 0 or self.ny <= 0 or self.nz <= 0:
            raise ValueError("grid dimensions must be positive")
        if data.size != self.nx * self.ny * self.nz:
            raise ValueError(
                f"data length {data.size} != {self.nx}*{self.ny}*{self.nz}"
            )
        if self.domain not in ("cell", "plate"):
            raise ValueError(f"unknown domain tag {self.domain!r}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    def as_3d(self) -> np.ndarray:
        """View of the phase ids indexed [i, j, k] (x, y, z)."""
        return self.data.reshape(self.nz, self.ny, self.nx).transpose(2, 1, 0)

    def phase_ids(self) -> np.ndarray:
        return np.unique(self.data)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)


def _from_3d(arr: np.ndarray, domain: str) -> VoxelGrid:
    nx, ny, nz = arr.shape
    flat = arr.transpose(2, 1, 0).ravel()
    return VoxelGrid(nx=nx, ny=ny, nz=nz, data=flat, domain=domain)


def validate_fractions(theta, n: int | None = None) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).ravel()
    if n is not None and theta.size != n:
        raise ValueError(f"expected {n} fractions, got {theta.size}")
    if np.any(theta < -1e-12) or np.any(theta > 1.0 + 1e-12):
        raise ValueError("fractions must lie in [0, 1]")
    if abs(theta.sum() - 1.0) > 1e-12:
        raise ValueError(f"fractions sum to {theta.sum()}, expected 1")
    return theta


def make_laminate(axis, fractions, resolution, domain: str = "cell") -> VoxelGrid:
    """Layered microstructure. ``axis`` is "x1", "x2", "x3" or an in-plane
    layering angle in degrees (normal (cos a, sin a), rasterized with periodic
    wrap at voxel centers).

    Axis-aligned laminates place layer boundaries at rounded cumulative
    fractions and reject targets that would produce an empty layer.
    """
    theta = validate_fractions(fractions)
    nx, ny, nz = resolution
    arr = np.zeros((nx, ny, nz), dtype=np.int32)

    if axis in ("x1", "x2", "x3"):
        n = {"x1": nx, "x2": ny, "x3": nz}[axis]
        cuts = np.round(np.cumsum(theta) * n).astype(int)
        cuts[-1] = n
        starts = np.concatenate([[0], cuts[:-1]])
        if np.any(cuts - starts < 1):
            raise ValueError(
                f"fractions {theta.tolist()} not representable with {n} voxels "
                f"along {axis} (empty layer)"
            )
        line = np.zeros(n, dtype=np.int32)
        for p, (a, b) in enumerate(zip(starts, cuts), start=1):
            line[a:b] = p
        if axis == "x1":
            arr[:] = line[:, None, None]
        elif axis == "x2":
            arr[:] = line[None, :, None]
        else:
            arr[:] = line[None, None, :]
        return _from_3d(arr, domain)

    angle = float(axis)
    a = np.deg2rad(angle)
    xc = (np.arange(nx) + 0.5) / nx
    yc = (np.arange(ny) + 0.5) / ny
    t = (xc[:, None] * np.cos(a) + yc[None, :] * np.sin(a)) % 1.0
    cum = np.cumsum(theta)
    plane = np.digitize(t, cum[:-1]) + 1  # phase ids 1..N
    arr[:] = plane[:, :, None]
    return _from_3d(arr, domain)


def make_checkerboard(period: int, resolution, nphases: int = 2,
                      domain: str = "cell") -> VoxelGrid:
    """3D checkerboard of cubic blocks of the given voxel period."""
    nx, ny, nz = resolution
    if period <= 0:
        raise ValueError("period must be positive")
    for n, name in ((nx, "nx"), (ny, "ny"), (nz, "nz")):
        if n % period != 0:
            raise ValueError(f"period {period} does not divide {name}={n}")
    i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                          indexing="ij")
    arr = ((i // period + j // period + k // period) % nphases + 1).astype(np.int32)
    return _from_3d(arr, domain)


def volume_fractions(grid: VoxelGrid, phase_ids=None) -> np.ndarray:
    """Realized volume fraction per phase id (sorted ids unless given)."""
    if phase_ids is None:
        phase_ids = grid.phase_ids()
    total = grid.data.size
    return np.array([np.count_nonzero(grid.data == p) for p in phase_ids],
                    dtype=float) / total


def _integer_targets(theta: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder rounding of theta*total to integers summing to total."""
    raw = theta * total
    base = np.floor(raw + 0.5).astype(int)  # round-half-up, deterministic
    diff = total - base.sum()
    if diff != 0:
        rem = raw - np.floor(raw)
        order = np.argsort(-rem if diff > 0 else rem, kind="stable")
        for idx in order[: abs(diff)]:
            base[idx] += 1 if diff > 0 else -1
    if np.any(base < 0):
        raise ValueError(f"targets {theta.tolist()} not representable on {total} voxels")
    return base


def adjust_volume_fraction(grid: VoxelGrid, target, phase_ids=None) -> VoxelGrid:
    """Flip the minimal number of voxels so realized counts match the
    integer-rounded targets exactly.

    Flipped voxels are taken from over-represented phases in lexicographic
    scan order (x-fastest), so the result is bit-reproducible.
    """
    if phase_ids is None:
        phase_ids = grid.phase_ids()
    phase_ids = np.asarray(phase_ids, dtype=np.int32)
    theta = validate_fractions(target, n=phase_ids.size)
    total = grid.data.size
    want = _integer_targets(theta, total)
    have = np.array([np.count_nonzero(grid.data == p) for p in phase_ids])

    data = grid.data.copy()
    surplus_positions: list[int] = []
    for p, h, w in zip(phase_ids, have, want):
        if h > w:
            pos = np.flatnonzero(data == p)[: h - w]  # first surplus voxels in scan order
            surplus_positions.extend(pos.tolist())
    surplus_positions.sort()
    cursor = 0
    for p, h, w in zip(phase_ids, have, want):
        need = w - h
        if need > 0:
            take = surplus_positions[cursor:cursor + need]
            data[take] = p
            cursor += need
    return VoxelGrid(nx=grid.nx, ny=grid.ny, nz=grid.nz, data=data,
                     domain=grid.domain)


def min_flip_count(grid: VoxelGrid, target, phase_ids=None) -> int:
    """Minimal number of voxel changes needed to reach the integer targets."""
    if phase_ids is None:
        phase_ids = grid.phase_ids()
    phase_ids = np.asarray(phase_ids, dtype=np.int32)
    theta = validate_fractions(target, n=phase_ids.size)
    want = _integer_targets(theta, grid.data.size)
    have = np.array([np.count_nonzero(grid.data == p) for p in phase_ids])
    return int(np.maximum(have - want, 0).sum())


def tile(patches: list[tuple[VoxelGrid, tuple[int, int, int, int]]],
         resolution) -> VoxelGrid:
    """Plate-domain grid tiled patch by patch from periodic cells.

    ``patches`` is a list of (cell grid, (i0, i1, j0, j1)) with half-open
    voxel rectangles in target coordinates. Rectangles must partition the
    in-plane target exactly; each cell's in-plane dims must divide its patch
    and its nz must equal the target nz.
    """
    nx, ny, nz = resolution
    cover = np.zeros((nx, ny), dtype=np.int32)
    arr = np.zeros((nx, ny, nz), dtype=np.int32)
    for cell, (i0, i1, j0, j1) in patches:
        if not (0 <= i0 < i1 <= nx and 0 <= j0 < j1 <= ny):
            raise ValueError(f"patch rectangle {(i0, i1, j0, j1)} out of range")
        if np.any(cover[i0:i1, j0:j1]):
            raise ValueError("patch rectangles overlap")
        cover[i0:i1, j0:j1] = 1
        if (i1 - i0) % cell.nx or (j1 - j0) % cell.ny:
            raise ValueError(
                f"cell period {cell.nx}x{cell.ny} does not divide patch "
                f"{(i1 - i0)}x{(j1 - j0)}"
            )
        if cell.nz != nz:
            raise ValueError(f"cell nz={cell.nz} != target nz={nz}")
        c3 = cell.as_3d()
        rx = (i1 - i0) // cell.nx
        ry = (j1 - j0) // cell.ny
        arr[i0:i1, j0:j1, :] = np.tile(c3, (rx, ry, 1))
    if not np.all(cover):
        raise ValueError("patch rectangles do not cover the target")
    return _from_3d(arr, "plate")


def refine(grid: VoxelGrid, factor: int) -> VoxelGrid:
    """Same microstructure at factor-refined resolution (each voxel split)."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    a = grid.as_3d()
    a = np.repeat(np.repeat(np.repeat(a, factor, 0), factor, 1), factor, 2)
    return _from_3d(a, grid.domain)


def window(grid: VoxelGrid, i0: int, j0: int, wx: int, wy: int) -> VoxelGrid:
    """In-plane sub-block (full thickness) re-tagged as a periodic cell."""
    if not (0 <= i0 and i0 + wx <= grid.nx and 0 <= j0 and j0 + wy <= grid.ny):
        raise ValueError("window out of range")
    sub = grid.as_3d()[i0:i0 + wx, j0:j0 + wy, :]
    return _from_3d(np.ascontiguousarray(sub), "cell")


# ---------------------------------------------------------------------------
# microstructure file format
# ---------------------------------------------------------------------------

def load_grid(path) -> VoxelGrid:
    with open(path) as f:
        doc = json.load(f)
    return VoxelGrid(nx=int(doc["nx"]), ny=int(doc["ny"]), nz=int(doc["nz"]),
                     data=np.array(doc["data"], dtype=np.int32),
                     domain=doc.get("domain", "cell"))


def dump_grid(grid: VoxelGrid, path) -> None:
    doc = {"nx": grid.nx, "ny": grid.ny, "nz": grid.nz, "domain": grid.domain,
           "data": grid.data.tolist()}
    with open(path, "w") as f:
        json.dump(doc, f)

"""Dense 3D scalar volumes: file IO, resampling, standardization, patch grids.

A volume is stored as a float32 array of shape ``(nx, ny, nz)``. On disk it
is a raw little-endian float32 blob (``.evr``) in x-fastest order with a
sibling ``.json`` header carrying dims, spacing, and a format version.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ArgumentError, DegenerateInputError, FormatError, SizeError

EVR_VERSION = 1


@dataclass(frozen=True)
class Volume3:
    """Immutable 3D scalar field with voxel spacing in mm.

    ``data`` has shape ``dims`` and is indexed ``data[x, y, z]``. All values
    are finite; spacing components are strictly positive.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    data: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ArgumentError(f"dims must be three positive integers, got {self.dims}")
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ArgumentError(f"spacing must be three positive reals, got {self.spacing}")
        data = np.asarray(self.data, dtype=np.float32)
        if data.shape != dims:
            if data.size == dims[0] * dims[1] * dims[2]:
                data = data.reshape(dims, order="F") if data.ndim == 1 else data.reshape(dims)
            else:
                raise SizeError(f"data has {data.size} values, dims imply {np.prod(dims)}")
        if not np.isfinite(data).all():
            raise ValueError("volume data contains non-finite values")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "data", data)

    @property
    def n_voxels(self) -> int:
        return self.data.size


@dataclass(frozen=True)
class PatchGrid:
    """Non-overlapping tiling of a volume by cubes of side ``patch_side``.

    Patches are anchored at the origin; voxels beyond the last full patch on
    each axis are not covered. Patch origins are listed x-fastest.
    """

    patch_side: int
    origin_stride: int
    patch_origins: tuple[tuple[int, int, int], ...]
    volume_dims: tuple[int, int, int]

    @property
    def n_patches(self) -> int:
        return len(self.patch_origins)

    @property
    def tiles(self) -> tuple[int, int, int]:
        return tuple(d // self.patch_side for d in self.volume_dims)


def load_volume(path) -> Volume3:
    """Read a ``.evr`` raw float32 volume with its JSON sibling header."""
    path = Path(path)
    header_path = path.with_suffix(".json")
    if not header_path.exists():
        raise FormatError(f"missing header {header_path}")
    try:
        header = json.loads(header_path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"unreadable header {header_path}: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError(f"header {header_path} is not a JSON object")
    if header.get("version") != EVR_VERSION:
        raise FormatError(f"unsupported version {header.get('version')!r} in {header_path}")
    try:
        dims = tuple(int(d) for d in header["dims"])
        spacing = tuple(float(s) for s in header["spacing"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"garbled header {header_path}: {exc}") from exc
    if len(dims) != 3 or len(spacing) != 3:
        raise FormatError(f"header {header_path} must declare 3 dims and 3 spacings")
    raw = np.fromfile(path, dtype="<f4")
    expected = dims[0] * dims[1] * dims[2]
    if raw.size != expected:
        raise SizeError(f"{path} holds {raw.size} floats, header dims imply {expected}")
    if not np.isfinite(raw).all():
        raise ValueError(f"{path} contains non-finite values")
    return Volume3(dims, spacing, raw.reshape(dims, order="F"))


def save_volume(v: Volume3, path) -> None:
    """Write ``v`` as ``.evr`` + ``.json``; round-trips bit-exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    v.data.ravel(order="F").astype("<f4").tofile(path)
    header = {"dims": list(v.dims), "spacing": list(v.spacing), "version": EVR_VERSION}
    path.with_suffix(".json").write_text(json.dumps(header))


def sample_trilinear(data: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of ``data`` at fractional voxel coordinates.

    ``coords`` has shape (3, n): rows are x, y, z indices. Corner samples
    falling outside the grid contribute value 0, so positions fully outside
    return exactly 0 and the field decays continuously across the border.
    """
    return ndimage.map_coordinates(data, coords, order=1, mode="grid-constant", cval=0.0)


def sample_nearest(data: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Nearest-neighbour lookup at fractional voxel coordinates, 0 outside."""
    nx, ny, nz = data.shape
    xi = np.rint(coords[0]).astype(np.int64)
    yi = np.rint(coords[1]).astype(np.int64)
    zi = np.rint(coords[2]).astype(np.int64)
    ok = (xi >= 0) & (xi < nx) & (yi >= 0) & (yi < ny) & (zi >= 0) & (zi < nz)
    flat = (xi * ny + yi) * nz + zi
    flat[~ok] = 0
    out = data.reshape(-1)[flat]
    return np.where(ok, out, np.zeros((), dtype=data.dtype))


def downsample(v: Volume3, target: tuple[int, int, int]) -> Volume3:
    """Trilinear resample onto ``target`` dims; spacing rescales by dims ratio.

    Output voxel i on an axis of n_out samples maps to source coordinate
    ``i * (n_in - 1) / (n_out - 1)`` (grid corners align); a single-sample
    axis maps to the source centre.
    """
    target = tuple(int(t) for t in target)
    if len(target) != 3 or any(t < 1 for t in target):
        raise ArgumentError(f"target must be three positive integers, got {target}")
    if any(t > d for t, d in zip(target, v.dims)):
        raise ArgumentError(f"target {target} exceeds source dims {v.dims}")
    axes = []
    for t, d in zip(target, v.dims):
        if t == 1:
            axes.append(np.array([(d - 1) / 2.0]))
        else:
            axes.append(np.arange(t) * ((d - 1) / (t - 1)))
    grid = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([g.reshape(-1) for g in grid])
    out = sample_trilinear(v.data, coords).reshape(target)
    spacing = tuple(s * d / t for s, d, t in zip(v.spacing, v.dims, target))
    return Volume3(target, spacing, out)


def standardize(v: Volume3) -> Volume3:
    """Shift and scale to zero mean, unit variance (population statistics)."""
    if v.n_voxels < 2:
        raise ArgumentError("standardize requires at least 2 voxels")
    mu = float(v.data.mean(dtype=np.float64))
    sigma = float(np.sqrt(np.mean((v.data.astype(np.float64) - mu) ** 2)))
    if sigma == 0.0:
        raise DegenerateInputError("constant volume has zero variance")
    out = (v.data.astype(np.float64) - mu) / sigma
    return Volume3(v.dims, v.spacing, out.astype(np.float32))


def make_patch_grid(dims: tuple[int, int, int], patch_side: int) -> PatchGrid:
    """Tile ``dims`` with non-overlapping cubes of ``patch_side`` voxels.

    Residual voxels on the high side of each axis are left uncovered.
    """
    dims = tuple(int(d) for d in dims)
    s = int(patch_side)
    if s < 1:
        raise ArgumentError(f"patch_side must be >= 1, got {patch_side}")
    if any(s > d for d in dims):
        raise ArgumentError(f"patch_side {s} exceeds a volume dimension {dims}")
    counts = [d // s for d in dims]
    origins = []
    for kz in range(counts[2]):
        for ky in range(counts[1]):
            for kx in range(counts[0]):
                origins.append((kx * s, ky * s, kz * s))
    # listed x-fastest to mirror the data layout
    return PatchGrid(s, s, tuple(origins), dims)


def extract_patch(v: Volume3, grid: PatchGrid, index: int) -> np.ndarray:
    """Copy patch ``index`` as a flat vector of s^3 values, x-fastest."""
    if v.dims != grid.volume_dims:
        raise ArgumentError(f"volume dims {v.dims} do not match grid dims {grid.volume_dims}")
    if not 0 <= index < grid.n_patches:
        raise ArgumentError(f"patch index {index} out of range [0, {grid.n_patches})")
    x, y, z = grid.patch_origins[index]
    s = grid.patch_side
    return np.ascontiguousarray(
        v.data[x : x + s, y : y + s, z : z + s].ravel(order="F")
    )

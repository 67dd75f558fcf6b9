"""Affine alignment of volumes to a cohort-mean template.

A transform maps fixed-grid voxel coordinates into the moving image, which
is sampled trilinearly (zero outside). The mean squared intensity
difference over the fixed domain is minimized with a derivative-free
downhill-simplex search over the 12 affine parameters, starting from the
identity. The search may evaluate the cost on a deterministic subsample of
the domain for speed; reported costs are always full-domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import ArgumentError, NumericalError
from .segmentation import LungMask
from .volume import Volume3, sample_nearest, sample_trilinear

# initial simplex displacement of matrix entries relative to init_step (voxels)
_MATRIX_STEP_RATIO = 1.0 / 50.0


@dataclass(frozen=True)
class AffineTransform:
    """Orientation-preserving affine map x -> matrix @ x + translation.

    Coordinates are voxel indices of the fixed grid; the image of a point
    indexes into the moving volume.
    """

    matrix: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.isfinite(m).all() and np.isfinite(t).all()):
            raise ArgumentError("transform parameters must be finite")
        if np.linalg.det(m) <= 0:
            raise ArgumentError("transform must preserve orientation (det > 0)")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, coords: np.ndarray) -> np.ndarray:
        """Map coordinates of shape (3, n)."""
        return self.matrix @ coords + self.translation[:, None]

    def as_params(self) -> np.ndarray:
        return np.concatenate([self.matrix.reshape(-1), self.translation])

    @classmethod
    def from_params(cls, p: np.ndarray) -> "AffineTransform":
        p = np.asarray(p, dtype=np.float64).reshape(12)
        return cls(p[:9].reshape(3, 3), p[9:])


@dataclass(frozen=True)
class RegistrationConfig:
    max_iters: int = 400
    init_step: float = 2.0
    tol: float = 1e-6
    # cap on cost-evaluation points during the search; None = full domain
    max_sample_points: int | None = 32768


def _grid_coords(dims: tuple[int, int, int]) -> np.ndarray:
    g = np.mgrid[0 : dims[0], 0 : dims[1], 0 : dims[2]]
    return g.reshape(3, -1).astype(np.float64)


def _domain_points(fixed: Volume3, mask: LungMask | None) -> tuple[np.ndarray, np.ndarray]:
    """Sample coordinates and fixed-image values of the cost domain."""
    if mask is None:
        pts = _grid_coords(fixed.dims)
        vals = fixed.data.reshape(-1).astype(np.float64)
    else:
        if mask.dims != fixed.dims:
            raise ArgumentError(f"mask dims {mask.dims} do not match fixed dims {fixed.dims}")
        idx = np.argwhere(mask.bits)
        if idx.size == 0:
            raise ArgumentError("mask selects no voxels")
        pts = idx.T.astype(np.float64)
        vals = fixed.data[mask.bits].astype(np.float64)
    return pts, vals


def _msd_on_points(
    moving_data: np.ndarray,
    matrix: np.ndarray,
    translation: np.ndarray,
    pts: np.ndarray,
    fixed_vals: np.ndarray,
) -> float:
    mapped = matrix @ pts + translation[:, None]
    sampled = sample_trilinear(moving_data, mapped)
    return float(np.mean((fixed_vals - sampled) ** 2))


def msd_cost(
    fixed: Volume3,
    moving: Volume3,
    t: AffineTransform,
    mask: LungMask | None = None,
) -> float:
    """Mean squared difference between fixed and the warped moving image."""
    if fixed.dims != moving.dims:
        raise ArgumentError(f"fixed dims {fixed.dims} differ from moving dims {moving.dims}")
    pts, vals = _domain_points(fixed, mask)
    return _msd_on_points(moving.data, t.matrix, t.translation, pts, vals)


def _register_arrays(
    fixed_data: np.ndarray,
    moving_data: np.ndarray,
    config: RegistrationConfig,
) -> tuple[np.ndarray, float, float]:
    """Core simplex search on raw arrays; returns (params, cost, identity cost).

    Costs are evaluated on the (possibly subsampled) search domain.
    """
    dims = fixed_data.shape
    pts = _grid_coords(dims)
    vals = fixed_data.reshape(-1).astype(np.float64)
    cap = config.max_sample_points
    if cap is not None and pts.shape[1] > cap:
        stride = int(np.ceil(pts.shape[1] / cap))
        pts = pts[:, ::stride]
        vals = vals[::stride]

    def cost(p: np.ndarray) -> float:
        c = _msd_on_points(moving_data, p[:9].reshape(3, 3), p[9:], pts, vals)
        if not np.isfinite(c):
            raise NumericalError("non-finite registration cost")
        return c

    p0 = np.concatenate([np.eye(3).reshape(-1), np.zeros(3)])
    steps = np.full(12, config.init_step * _MATRIX_STEP_RATIO)
    steps[9:] = config.init_step
    simplex = np.vstack([p0] + [p0 + steps[k] * np.eye(12)[k] for k in range(12)])
    result = optimize.minimize(
        cost,
        p0,
        method="Nelder-Mead",
        options={
            "maxiter": config.max_iters,
            "maxfev": 4 * config.max_iters,
            "xatol": config.tol,
            "fatol": float("inf"),
            "initial_simplex": simplex,
        },
    )
    return result.x, float(result.fun), cost(p0)


def register_affine(
    fixed: Volume3,
    moving: Volume3,
    config: RegistrationConfig | None = None,
) -> tuple[AffineTransform, float]:
    """Find the affine transform minimizing MSD; never worse than identity."""
    if fixed.dims != moving.dims:
        raise ArgumentError(f"fixed dims {fixed.dims} differ from moving dims {moving.dims}")
    config = config or RegistrationConfig()
    params, _, _ = _register_arrays(fixed.data, moving.data, config)
    identity = AffineTransform.identity()
    try:
        found = AffineTransform.from_params(params)
    except ArgumentError:
        found = identity  # simplex wandered into a reflection; fall back
    cost_found = msd_cost(fixed, moving, found)
    cost_id = msd_cost(fixed, moving, identity)
    if cost_id < cost_found:
        return identity, cost_id
    return found, cost_found


def resample_with(
    moving: Volume3,
    t: AffineTransform,
    out_dims: tuple[int, int, int],
) -> Volume3:
    """Materialize the warped moving image on a grid of ``out_dims``."""
    out_dims = tuple(int(d) for d in out_dims)
    if any(d < 1 for d in out_dims):
        raise ArgumentError(f"out_dims must be positive, got {out_dims}")
    coords = t.apply(_grid_coords(out_dims))
    data = sample_trilinear(moving.data, coords).reshape(out_dims)
    return Volume3(out_dims, moving.spacing, data)


def resample_mask_with(
    mask: LungMask,
    t: AffineTransform,
    out_dims: tuple[int, int, int],
) -> LungMask:
    """Warp a boolean mask by nearest-neighbour lookup (False outside)."""
    out_dims = tuple(int(d) for d in out_dims)
    coords = t.apply(_grid_coords(out_dims))
    bits = sample_nearest(mask.bits.astype(np.uint8), coords).reshape(out_dims)
    return LungMask(out_dims, bits > 0)


def build_mean_template(
    volumes: list[Volume3],
    n_rounds: int = 2,
    config: RegistrationConfig | None = None,
) -> Volume3:
    """Iteratively refined voxelwise-mean template of a cohort.

    Round zero is the plain mean; each round re-registers every volume to
    the current template and averages the aligned images.
    """
    if len(volumes) < 2:
        raise ArgumentError("template building needs at least 2 volumes")
    dims = volumes[0].dims
    if any(v.dims != dims for v in volumes):
        raise ArgumentError("all volumes must share dims")
    config = config or RegistrationConfig()
    stack = np.zeros(dims, dtype=np.float64)
    for v in volumes:
        stack += v.data
    template = Volume3(dims, volumes[0].spacing, stack / len(volumes))
    for _ in range(int(n_rounds)):
        stack = np.zeros(dims, dtype=np.float64)
        for i, v in enumerate(volumes):
            try:
                t, _ = register_affine(template, v, config)
                stack += resample_with(v, t, dims).data
            except Exception as exc:
                raise type(exc)(f"registration of volume {i} failed: {exc}") from exc
        template = Volume3(dims, volumes[0].spacing, stack / len(volumes))
    return template

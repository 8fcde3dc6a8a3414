"""Volumetric container and resampling/intensity operations.

Arrays are indexed (z, y, x) with index 0 the superior-most slice. World
coordinates are millimetres along the same axes, ascending with the index;
``origin_mm`` is the position of the centre of voxel (0, 0, 0). All voxel
data is stored as 32-bit floats regardless of modality; mask volumes hold
integer-valued labels in that representation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class Modality(enum.Enum):
    CT = "ct"
    PET = "pet"
    FUSED = "fused"
    MASK = "mask"


def _as_vec3(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have exactly 3 components, got shape {arr.shape}")
    return arr


@dataclass
class Volume:
    """A 3D image with isotropic-or-not voxel spacing and a world origin.

    data : float32 array, shape (nz, ny, nx)
    spacing_mm : per-axis voxel size (z, y, x), strictly positive
    origin_mm : world position of the centre of voxel (0, 0, 0)
    modality : what the intensities mean
    """

    data: np.ndarray
    spacing_mm: np.ndarray
    origin_mm: np.ndarray
    modality: Modality

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got ndim={self.data.ndim}")
        if any(n < 1 for n in self.data.shape):
            raise ValueError(f"volume dimensions must be >= 1, got {self.data.shape}")
        if self.data.dtype != np.float32:
            self.data = self.data.astype(np.float32)
        self.spacing_mm = _as_vec3(self.spacing_mm, "spacing_mm")
        if not np.all(self.spacing_mm > 0):
            raise ValueError(f"spacing_mm must be strictly positive, got {self.spacing_mm}")
        self.origin_mm = _as_vec3(self.origin_mm, "origin_mm")
        if not isinstance(self.modality, Modality):
            raise ValueError(f"modality must be a Modality, got {self.modality!r}")
        if self.modality is Modality.MASK:
            if not np.all(self.data >= 0) or not np.all(self.data == np.round(self.data)):
                raise ValueError("mask volumes must contain non-negative integer values")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def min_corner_mm(self) -> np.ndarray:
        """World position of the outer corner of voxel (0, 0, 0)."""
        return self.origin_mm - 0.5 * self.spacing_mm

    @property
    def extent_mm(self) -> np.ndarray:
        """Physical size of the volume (voxel count times spacing)."""
        return np.asarray(self.shape, dtype=np.float64) * self.spacing_mm

    @property
    def voxel_volume_mm3(self) -> float:
        return float(np.prod(self.spacing_mm))

    def axis_coords_mm(self, axis: int) -> np.ndarray:
        """World coordinates of voxel centres along one axis."""
        n = self.shape[axis]
        return self.origin_mm[axis] + self.spacing_mm[axis] * np.arange(n)

    def with_data(self, data: np.ndarray, modality: Modality | None = None) -> "Volume":
        """New volume on the same grid with replaced voxel data."""
        return Volume(
            data=data,
            spacing_mm=self.spacing_mm.copy(),
            origin_mm=self.origin_mm.copy(),
            modality=self.modality if modality is None else modality,
        )


@dataclass(frozen=True)
class BoxMM:
    """Axis-aligned world-space box: min corner and size, both (z, y, x) mm."""

    min_corner_mm: np.ndarray
    size_mm: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "min_corner_mm", _as_vec3(self.min_corner_mm, "min_corner_mm"))
        object.__setattr__(self, "size_mm", _as_vec3(self.size_mm, "size_mm"))
        if not np.all(self.size_mm > 0):
            raise ValueError(f"box size_mm must be strictly positive, got {self.size_mm}")

    @property
    def max_corner_mm(self) -> np.ndarray:
        return self.min_corner_mm + self.size_mm


def _axis_linear(data: np.ndarray, axis: int, pos: np.ndarray) -> np.ndarray:
    """Linear interpolation along one axis at fractional indices ``pos``.

    Out-of-range positions clamp to the edge value (they only arise half a
    voxel beyond the centre of the first/last sample).
    """
    n = data.shape[axis]
    i0 = np.floor(pos).astype(np.int64)
    w = (pos - i0).astype(np.float32)
    i0c = np.clip(i0, 0, n - 1)
    i1c = np.clip(i0 + 1, 0, n - 1)
    shape = [1, 1, 1]
    shape[axis] = len(pos)
    w = np.clip(w, 0.0, 1.0).reshape(shape)
    a = np.take(data, i0c, axis=axis)
    b = np.take(data, i1c, axis=axis)
    return a * (1.0 - w) + b * w


def _axis_nearest(data: np.ndarray, axis: int, pos: np.ndarray) -> np.ndarray:
    n = data.shape[axis]
    idx = np.clip(np.floor(pos + 0.5).astype(np.int64), 0, n - 1)
    return np.take(data, idx, axis=axis)


def resample(vol: Volume, target_spacing_mm, mode: str = "linear") -> Volume:
    """Resample onto a grid with the requested spacing, preserving extent.

    The output covers the same physical footprint: output dimension is
    round(n_in * spacing_in / spacing_out), at least 1, and sample positions
    are aligned so both grids share the volume's outer min corner. Resampling
    onto the identical spacing reproduces the input voxel-for-voxel.

    mode : "linear" (separable trilinear) or "nearest".
    """
    if mode not in ("linear", "nearest"):
        raise ValueError(f"unknown resample mode {mode!r}")
    sp_out = _as_vec3(target_spacing_mm, "target_spacing_mm")
    if not np.all(sp_out > 0):
        raise ValueError(f"target spacing must be strictly positive, got {sp_out}")
    sp_in = vol.spacing_mm
    dims_in = np.asarray(vol.shape, dtype=np.float64)
    dims_out = np.maximum(1, np.round(dims_in * sp_in / sp_out)).astype(np.int64)

    data = vol.data
    for axis in range(3):
        # Continuous input index of each output voxel centre; both grids
        # hang from the same outer corner, so centre k sits at (k+0.5)*out.
        pos = ((np.arange(dims_out[axis]) + 0.5) * sp_out[axis]) / sp_in[axis] - 0.5
        if mode == "linear":
            data = _axis_linear(data, axis, pos)
        else:
            data = _axis_nearest(data, axis, pos)

    origin_out = vol.origin_mm - 0.5 * sp_in + 0.5 * sp_out
    return Volume(
        data=np.ascontiguousarray(data, dtype=np.float32),
        spacing_mm=sp_out,
        origin_mm=origin_out,
        modality=vol.modality,
    )


def window_clip(vol: Volume, lo: float, hi: float) -> Volume:
    """Clamp intensities into [lo, hi]."""
    if not lo < hi:
        raise ValueError(f"window bounds must satisfy lo < hi, got ({lo}, {hi})")
    return vol.with_data(np.clip(vol.data, lo, hi))


def znormalize(vol: Volume) -> Volume:
    """Shift/scale to zero mean and unit standard deviation.

    Statistics are accumulated in float64; a constant volume maps to zeros
    rather than dividing by the vanishing deviation.
    """
    flat = vol.data.astype(np.float64)
    mean = flat.mean()
    std = flat.std()
    if std < 1e-12:
        return vol.with_data(np.zeros_like(vol.data))
    out = (flat - mean) / std
    return vol.with_data(out.astype(np.float32))


def fuse_average(ct: Volume, pet: Volume) -> Volume:
    """Voxelwise mean of two co-registered volumes on an identical grid."""
    if ct.shape != pet.shape:
        raise ValueError(f"cannot fuse volumes with shapes {ct.shape} and {pet.shape}")
    if not np.allclose(ct.spacing_mm, pet.spacing_mm, rtol=0, atol=1e-6):
        raise ValueError(
            f"cannot fuse volumes with spacings {ct.spacing_mm} and {pet.spacing_mm}"
        )
    if not np.allclose(ct.origin_mm, pet.origin_mm, rtol=0, atol=1e-3):
        raise ValueError(
            f"cannot fuse volumes with origins {ct.origin_mm} and {pet.origin_mm}"
        )
    fused = (ct.data.astype(np.float64) + pet.data.astype(np.float64)) / 2.0
    return Volume(
        data=fused.astype(np.float32),
        spacing_mm=ct.spacing_mm.copy(),
        origin_mm=ct.origin_mm.copy(),
        modality=Modality.FUSED,
    )


def crop_mm(vol: Volume, box: BoxMM, pad_value: float | None = None) -> Volume:
    """Crop a world-space box out of the volume on its own voxel grid.

    The box is snapped to the grid: the start index is the nearest voxel
    boundary to the box's min corner and the output size is
    floor(box_size / spacing) voxels per axis (at least 1). Regions outside
    the volume are filled with ``pad_value`` (default: the volume minimum).
    Cropping the volume's own bounding box is the identity, and re-cropping
    with the same box is idempotent on the voxel grid.
    """
    sp = vol.spacing_mm
    start = np.round((box.min_corner_mm - vol.min_corner_mm) / sp).astype(np.int64)
    n_out = np.maximum(1, np.floor(box.size_mm / sp * (1.0 + 1e-9)).astype(np.int64))
    if pad_value is None:
        pad_value = float(vol.data.min())

    out = np.full(tuple(n_out), np.float32(pad_value), dtype=np.float32)
    src_lo = np.maximum(start, 0)
    src_hi = np.minimum(start + n_out, np.asarray(vol.shape))
    if np.all(src_hi > src_lo):
        dst_lo = src_lo - start
        dst_hi = src_hi - start
        out[dst_lo[0]:dst_hi[0], dst_lo[1]:dst_hi[1], dst_lo[2]:dst_hi[2]] = vol.data[
            src_lo[0]:src_hi[0], src_lo[1]:src_hi[1], src_lo[2]:src_hi[2]
        ]
    origin_out = vol.origin_mm + start * sp
    return Volume(data=out, spacing_mm=sp.copy(), origin_mm=origin_out, modality=vol.modality)


def extract_patch(vol: Volume, center_mm, size_voxels) -> Volume:
    """Sample a 1 mm isotropic patch centred on a world point.

    The patch grid has ``size_voxels`` voxels per axis at 1 mm spacing, with
    the grid centred on ``center_mm``. Values are trilinearly interpolated;
    sample points outside the voxel-centre hull of the source volume are
    padded with the source minimum.
    """
    center = _as_vec3(center_mm, "center_mm")
    size = np.asarray(size_voxels, dtype=np.int64)
    if size.shape != (3,) or np.any(size < 1):
        raise ValueError(f"size_voxels must be 3 positive integers, got {size_voxels}")

    pad_value = float(vol.data.min())
    # World coordinates of patch voxel centres along each axis.
    coords = [center[a] + (np.arange(size[a]) - (size[a] - 1) / 2.0) for a in range(3)]
    # Continuous source indices.
    u = [(coords[a] - vol.origin_mm[a]) / vol.spacing_mm[a] for a in range(3)]

    n = vol.shape
    valid_1d = [(u[a] >= -1e-9) & (u[a] <= n[a] - 1 + 1e-9) for a in range(3)]
    i0 = [np.floor(u[a]).astype(np.int64) for a in range(3)]
    w = [np.clip(u[a] - i0[a], 0.0, 1.0) for a in range(3)]
    lo = [np.clip(i0[a], 0, n[a] - 1) for a in range(3)]
    hi = [np.clip(i0[a] + 1, 0, n[a] - 1) for a in range(3)]

    data = vol.data.astype(np.float64)
    corners = np.zeros(tuple(size), dtype=np.float64)
    for bz in (0, 1):
        iz = (hi if bz else lo)[0][:, None, None]
        wz = (w[0] if bz else 1.0 - w[0])[:, None, None]
        for by in (0, 1):
            iy = (hi if by else lo)[1][None, :, None]
            wy = (w[1] if by else 1.0 - w[1])[None, :, None]
            for bx in (0, 1):
                ix = (hi if bx else lo)[2][None, None, :]
                wx = (w[2] if bx else 1.0 - w[2])[None, None, :]
                corners += data[iz, iy, ix] * (wz * wy * wx)

    valid = valid_1d[0][:, None, None] & valid_1d[1][None, :, None] & valid_1d[2][None, None, :]
    out = np.where(valid, corners, pad_value).astype(np.float32)
    origin_out = np.array([coords[0][0], coords[1][0], coords[2][0]], dtype=np.float64)
    return Volume(
        data=out,
        spacing_mm=np.ones(3),
        origin_mm=origin_out,
        modality=vol.modality,
    )

"""Connected components and per-tumour shape/intensity descriptors.

Components are extracted with 26-connectivity (6-connectivity for the
complement where it matters: hole filling) and numbered by first raster
occurrence in (z, y, x) scan order. Geometric descriptors work on voxel
centres in world millimetres; topology (Euler characteristic) is computed
exactly on the cubical complex of the voxel set.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy import ndimage

from .hull import Hull, convex_hull
from .volume import Modality, Volume

_STRUCT_26 = np.ones((3, 3, 3), dtype=bool)
_STRUCT_6 = ndimage.generate_binary_structure(3, 1)


def _binary(data: np.ndarray) -> np.ndarray:
    return np.asarray(data) > 0


def connected_components(mask: Volume, connectivity: int = 26) -> tuple[Volume, int]:
    """Label foreground components, numbered by first raster occurrence.

    Returns a MASK volume of labels 1..n (0 background) and the count.
    """
    if connectivity not in (6, 26):
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")
    structure = _STRUCT_26 if connectivity == 26 else _STRUCT_6
    raw, n = ndimage.label(_binary(mask.data), structure=structure)
    if n > 1:
        flat = raw.ravel()
        fg = flat > 0
        labels, first = np.unique(flat[fg], return_index=True)
        order = np.argsort(first, kind="stable")
        lut = np.zeros(n + 1, dtype=raw.dtype)
        lut[labels[order]] = np.arange(1, n + 1)
        raw = lut[raw]
    return mask.with_data(raw.astype(np.float32), modality=Modality.MASK), int(n)


def fill_holes(mask: Volume) -> Volume:
    """Fill cavities: background voxels not 6-connected to the border."""
    filled = ndimage.binary_fill_holes(_binary(mask.data), structure=_STRUCT_6)
    return mask.with_data(filled.astype(np.float32), modality=Modality.MASK)


def euler_number(mask: Volume) -> int:
    """Euler characteristic V - E + F - C of the voxel cubical complex.

    Vertices, edges, faces and cubes are the cells of the union of unit
    cubes centred on foreground voxels. Solid genus-0 shapes give 1, one
    tunnel gives 0, one internal cavity gives 2.
    """
    m = _binary(mask.data)
    if not m.any():
        return 0
    cubes = int(m.sum())

    def count_or(arr: np.ndarray, pad_axes: tuple[int, ...]) -> int:
        pad = [(1, 1) if a in pad_axes else (0, 0) for a in range(3)]
        p = np.pad(arr, pad)
        acc = None
        # OR of the 2^len(pad_axes) shifted copies along the padded axes.
        for shifts in np.ndindex(*(2,) * len(pad_axes)):
            sl = [slice(None)] * 3
            for a, s in zip(pad_axes, shifts):
                sl[a] = slice(s, p.shape[a] - 1 + s)
            piece = p[tuple(sl)]
            acc = piece if acc is None else (acc | piece)
        return int(acc.sum())

    faces = sum(count_or(m, (a,)) for a in range(3))
    edges = sum(count_or(m, tuple(b for b in range(3) if b != a)) for a in range(3))
    vertices = count_or(m, (0, 1, 2))
    return vertices - edges + faces - cubes


def convex_hull_mask(region: Volume) -> tuple[Volume, np.ndarray]:
    """Voxelize the convex hull of a region's voxel centres.

    Returns the hull mask (voxels whose centre lies inside the hull, within
    a 1e-9 relative tolerance) and the hull vertices in world mm. For
    degenerate regions (affine rank < 3) the hull mask is the region itself
    and the vertices are the rank-appropriate extremes.
    """
    idx = np.argwhere(_binary(region.data))
    if len(idx) == 0:
        raise ValueError("cannot build a hull mask of an empty region")
    centers = region.origin_mm + idx * region.spacing_mm
    hull = convex_hull(centers)
    if hull.rank < 3:
        return region.with_data(_binary(region.data).astype(np.float32), Modality.MASK), hull.vertices

    lo = idx.min(axis=0)
    hi = idx.max(axis=0)
    grids = np.meshgrid(*(np.arange(lo[a], hi[a] + 1) for a in range(3)), indexing="ij")
    cand_idx = np.stack([g.ravel() for g in grids], axis=1)
    cand_mm = region.origin_mm + cand_idx * region.spacing_mm
    inside = hull.contains(cand_mm, tol=1e-9)
    out = np.zeros(region.shape, dtype=np.float32)
    sel = cand_idx[inside]
    out[sel[:, 0], sel[:, 1], sel[:, 2]] = 1.0
    return region.with_data(out, Modality.MASK), hull.vertices


# Numeric feature order: this is the on-disk CSV order and the classifier
# input order. Changing it invalidates saved models.
REGION_FEATURE_NAMES: tuple[str, ...] = (
    "centroid_z",
    "centroid_y",
    "centroid_x",
    "bbox_zmin",
    "bbox_ymin",
    "bbox_xmin",
    "bbox_zmax",
    "bbox_ymax",
    "bbox_xmax",
    "euler",
    "extent",
    "solidity",
    "filled_area_vox",
    "convex_area_vox",
    "bbox_area_vox",
    "max_feret_mm",
    "equiv_diameter_mm",
    "inertia_1",
    "inertia_2",
    "inertia_3",
    "ct_min",
    "ct_mean",
    "ct_max",
    "pet_min",
    "pet_mean",
    "pet_max",
)

CALIBRATED_FEATURE_NAMES: tuple[str, ...] = (
    "centroid_x",
    "centroid_y",
    "centroid_z",
    "ct_mean",
    "pet_mean",
    "ct_max",
    "n_tumours",
)


@dataclass(frozen=True)
class RegionFeatures:
    """Shape and intensity descriptors of one connected component."""

    centroid_z: float
    centroid_y: float
    centroid_x: float
    bbox_zmin: float
    bbox_ymin: float
    bbox_xmin: float
    bbox_zmax: float
    bbox_ymax: float
    bbox_xmax: float
    euler: float
    extent: float
    solidity: float
    filled_area_vox: float
    convex_area_vox: float
    bbox_area_vox: float
    max_feret_mm: float
    equiv_diameter_mm: float
    inertia_1: float
    inertia_2: float
    inertia_3: float
    ct_min: float
    ct_mean: float
    ct_max: float
    pet_min: float
    pet_mean: float
    pet_max: float

    def as_vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in REGION_FEATURE_NAMES], dtype=np.float64)


assert tuple(f.name for f in fields(RegionFeatures)) == REGION_FEATURE_NAMES


@dataclass(frozen=True)
class PatientFeatureVector:
    """Per-patient mean of region descriptors plus the tumour count."""

    features: np.ndarray  # means over regions, REGION_FEATURE_NAMES order
    n_tumours: int

    def named(self) -> dict[str, float]:
        out = {name: float(v) for name, v in zip(REGION_FEATURE_NAMES, self.features)}
        out["n_tumours"] = float(self.n_tumours)
        return out


def _max_feret(vertices: np.ndarray) -> float:
    if len(vertices) == 1:
        return 0.0
    diff = vertices[:, None, :] - vertices[None, :, :]
    return float(np.sqrt((diff**2).sum(axis=2).max()))


def region_descriptors(
    labels: Volume, label: int, ct: Volume, pet: Volume
) -> RegionFeatures:
    """Descriptors of one labelled component against CT and PET intensities.

    All three volumes must share the grid. Geometric quantities are in
    world mm over voxel centres; counts are in voxels; solidity is the
    hole-filled voxel count over the hull-mask voxel count.
    """
    for other, name in ((ct, "ct"), (pet, "pet")):
        if other.shape != labels.shape:
            raise ValueError(f"{name} volume shape {other.shape} != labels shape {labels.shape}")
    region = labels.data == label
    idx = np.argwhere(region)
    if len(idx) == 0:
        raise ValueError(f"label {label} has no voxels")

    centers = labels.origin_mm + idx * labels.spacing_mm
    centroid = centers.mean(axis=0)
    cmin = centers.min(axis=0)
    cmax = centers.max(axis=0)

    imin = idx.min(axis=0)
    imax = idx.max(axis=0)
    bbox_area = int(np.prod(imax - imin + 1))
    area = len(idx)

    sub = region[imin[0] : imax[0] + 1, imin[1] : imax[1] + 1, imin[2] : imax[2] + 1]
    filled = ndimage.binary_fill_holes(sub, structure=_STRUCT_6)
    filled_area = int(filled.sum())

    region_vol = Volume(
        data=region.astype(np.float32),
        spacing_mm=labels.spacing_mm,
        origin_mm=labels.origin_mm,
        modality=Modality.MASK,
    )
    hull_mask, hull_vertices = convex_hull_mask(region_vol)
    convex_area = int(np.count_nonzero(hull_mask.data))

    euler = euler_number(region_vol)

    rel = centers - centroid
    inertia = np.linalg.eigvalsh((rel.T @ rel) / len(rel))[::-1]

    volume_mm3 = area * labels.voxel_volume_mm3
    equiv_diameter = float((6.0 * volume_mm3 / np.pi) ** (1.0 / 3.0))

    ct_vals = ct.data[region].astype(np.float64)
    pet_vals = pet.data[region].astype(np.float64)

    return RegionFeatures(
        centroid_z=float(centroid[0]),
        centroid_y=float(centroid[1]),
        centroid_x=float(centroid[2]),
        bbox_zmin=float(cmin[0]),
        bbox_ymin=float(cmin[1]),
        bbox_xmin=float(cmin[2]),
        bbox_zmax=float(cmax[0]),
        bbox_ymax=float(cmax[1]),
        bbox_xmax=float(cmax[2]),
        euler=float(euler),
        extent=float(area / bbox_area),
        solidity=float(filled_area / convex_area),
        filled_area_vox=float(filled_area),
        convex_area_vox=float(convex_area),
        bbox_area_vox=float(bbox_area),
        max_feret_mm=_max_feret(hull_vertices),
        equiv_diameter_mm=equiv_diameter,
        inertia_1=float(inertia[0]),
        inertia_2=float(inertia[1]),
        inertia_3=float(inertia[2]),
        ct_min=float(ct_vals.min()),
        ct_mean=float(ct_vals.mean()),
        ct_max=float(ct_vals.max()),
        pet_min=float(pet_vals.min()),
        pet_mean=float(pet_vals.mean()),
        pet_max=float(pet_vals.max()),
    )


def patient_feature_vector(regions: list[RegionFeatures]) -> PatientFeatureVector:
    """Mean of each descriptor over a patient's tumours.

    A patient with no tumours gets an all-zero vector and count 0.
    """
    if not regions:
        return PatientFeatureVector(
            features=np.zeros(len(REGION_FEATURE_NAMES)), n_tumours=0
        )
    stacked = np.stack([r.as_vector() for r in regions])
    return PatientFeatureVector(features=stacked.mean(axis=0), n_tumours=len(regions))


def select_calibrated_features(pfv: PatientFeatureVector) -> np.ndarray:
    """The descriptor subset that calibrates survival models best.

    Order: centroid_x, centroid_y, centroid_z, ct_mean, pet_mean, ct_max,
    n_tumours.
    """
    named = pfv.named()
    return np.array([named[name] for name in CALIBRATED_FEATURE_NAMES], dtype=np.float64)

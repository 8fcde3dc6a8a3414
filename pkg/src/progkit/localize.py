"""Head-and-neck region localization from axial intensity profiles.

Landmarks are found on coarse resamplings: the head top as the first
superior slice with appreciable PET uptake, the brain as the PET profile
peak within a bounded window below the head top, and the neck as the
steepest drop of the CT profile below the brain. The region of interest is
a fixed-size cube hung from the head top and centred in-plane on the PET
centre of mass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DetectionError
from .volume import BoxMM, Volume

BRAIN_WINDOW_MM = 250.0
ROI_SIZE_MM = 440.0


@dataclass(frozen=True)
class AxialProfile:
    """Mean intensity per axial slice, superior first."""

    values: np.ndarray
    spacing_mm: float
    z0_mm: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if self.values.ndim != 1 or len(self.values) < 1:
            raise ValueError("profile values must be a non-empty 1D array")
        if not self.spacing_mm > 0:
            raise ValueError(f"profile spacing must be positive, got {self.spacing_mm}")

    def z_mm(self, k: int | np.ndarray) -> np.ndarray | float:
        return self.z0_mm + self.spacing_mm * k

    @property
    def z_coords_mm(self) -> np.ndarray:
        return self.z0_mm + self.spacing_mm * np.arange(len(self.values))


@dataclass(frozen=True)
class Landmarks:
    """Detected axial landmark positions in world millimetres."""

    head_top_mm: float
    brain_peak_mm: float
    neck_drop_mm: float

    def __post_init__(self) -> None:
        if not (self.head_top_mm <= self.brain_peak_mm <= self.neck_drop_mm):
            raise ValueError(
                "landmarks must be ordered head_top <= brain_peak <= neck_drop, got "
                f"({self.head_top_mm}, {self.brain_peak_mm}, {self.neck_drop_mm})"
            )
        if self.brain_peak_mm - self.head_top_mm > BRAIN_WINDOW_MM + 1e-9:
            raise ValueError(
                f"brain peak {self.brain_peak_mm} lies more than {BRAIN_WINDOW_MM} mm "
                f"below the head top {self.head_top_mm}"
            )


def axial_profile(vol: Volume) -> AxialProfile:
    """Mean intensity of each axial slice."""
    values = vol.data.astype(np.float64).mean(axis=(1, 2))
    return AxialProfile(values=values, spacing_mm=float(vol.spacing_mm[0]), z0_mm=float(vol.origin_mm[0]))


def find_head_top(profile: AxialProfile, frac: float = 0.05) -> float:
    """First slice from the superior end exceeding frac * max(profile)."""
    if not 0 < frac < 1:
        raise ValueError(f"frac must lie in (0, 1), got {frac}")
    peak = profile.values.max()
    if peak <= 0:
        raise DetectionError("cannot detect head top: profile has no positive uptake")
    above = np.nonzero(profile.values > frac * peak)[0]
    if len(above) == 0:
        raise DetectionError("cannot detect head top: no slice exceeds the threshold")
    return float(profile.z_mm(int(above[0])))


def find_brain_peak(profile: AxialProfile, head_top_mm: float) -> float:
    """Profile maximum within the window below the head top.

    The search window is [head_top, head_top + 250] mm; the superior-most
    slice wins ties. An empty window is a detection error.
    """
    z = profile.z_coords_mm
    in_window = (z >= head_top_mm - 1e-9) & (z <= head_top_mm + BRAIN_WINDOW_MM + 1e-9)
    idx = np.nonzero(in_window)[0]
    if len(idx) == 0:
        raise DetectionError(
            f"cannot detect brain peak: no slices within {BRAIN_WINDOW_MM} mm below "
            f"z={head_top_mm}"
        )
    best = idx[int(np.argmax(profile.values[idx]))]
    return float(profile.z_mm(int(best)))


def find_neck_drop(
    profile: AxialProfile,
    brain_peak_mm: float,
    window_mm: float = 300.0,
    fallback_inferior: bool = False,
) -> float:
    """Steepest profile drop below the brain peak.

    First differences of the profile are smoothed with a 3-tap box filter
    for noise robustness; the winner is the most negative raw difference
    among slices tying the smoothed minimum (superior-most on exact ties),
    reported at the inferior slice of the differenced pair. A window with
    no negative difference raises DetectionError, or returns the
    inferior-most window slice when ``fallback_inferior`` is set.
    """
    values = profile.values
    z = profile.z_coords_mm
    if len(values) < 2:
        raise DetectionError("cannot detect neck drop: profile has fewer than 2 slices")

    d = np.diff(values)  # d[k] = v[k+1] - v[k], drop located at z[k+1]
    padded = np.concatenate([d[:1], d, d[-1:]])
    smoothed = (padded[:-2] + padded[1:-1] + padded[2:]) / 3.0

    drop_z = z[1:]
    in_window = (drop_z > brain_peak_mm + 1e-9) & (drop_z <= brain_peak_mm + window_mm + 1e-9)
    idx = np.nonzero(in_window)[0]
    if len(idx) == 0:
        raise DetectionError(
            f"cannot detect neck drop: no slices within {window_mm} mm below z={brain_peak_mm}"
        )

    sm = smoothed[idx]
    if sm.min() >= 0 and d[idx].min() >= 0:
        if fallback_inferior:
            return float(drop_z[idx[-1]])
        raise DetectionError(
            "cannot detect neck drop: profile never decreases below the brain peak"
        )
    tol = 1e-9 * (1.0 + float(np.abs(sm).max()))
    candidates = idx[sm <= sm.min() + tol]
    best = candidates[int(np.argmin(d[candidates]))]
    return float(drop_z[best])


def roi_box(pet: Volume, landmarks: Landmarks, size_mm: float = ROI_SIZE_MM) -> BoxMM:
    """Fixed-size region of interest hung from the head top.

    The axial extent is [head_top, head_top + size]; in-plane the box is
    centred on the PET centre of mass of that slab (uptake clipped at zero),
    falling back to the slab's geometric centre when there is no uptake.
    """
    z = pet.axis_coords_mm(0)
    top = landmarks.head_top_mm
    slab = (z >= top - 1e-9) & (z <= top + size_mm + 1e-9)
    if not np.any(slab):
        raise DetectionError("region of interest does not intersect the volume")

    weights = np.clip(pet.data[slab].astype(np.float64), 0.0, None)
    total = weights.sum()
    yc = pet.axis_coords_mm(1)
    xc = pet.axis_coords_mm(2)
    if total > 0:
        wy = weights.sum(axis=(0, 2))
        wx = weights.sum(axis=(0, 1))
        com_y = float((wy * yc).sum() / total)
        com_x = float((wx * xc).sum() / total)
    else:
        com_y = float(yc.mean())
        com_x = float(xc.mean())

    half = size_mm / 2.0
    return BoxMM(
        min_corner_mm=np.array([top, com_y - half, com_x - half]),
        size_mm=np.array([size_mm, size_mm, size_mm]),
    )


def detect_landmarks(
    pet: Volume,
    ct: Volume,
    frac: float = 0.05,
    neck_window_mm: float = 300.0,
    fallback_inferior: bool = False,
) -> Landmarks:
    """Run the full landmark chain on coarse PET and CT volumes."""
    pet_profile = axial_profile(pet)
    ct_profile = axial_profile(ct)
    head_top = find_head_top(pet_profile, frac=frac)
    brain = find_brain_peak(pet_profile, head_top)
    neck = find_neck_drop(
        ct_profile, brain, window_mm=neck_window_mm, fallback_inferior=fallback_inferior
    )
    return Landmarks(head_top_mm=head_top, brain_peak_mm=brain, neck_drop_mm=neck)

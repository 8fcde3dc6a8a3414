"""Minimal NIfTI-1 reader and writer for axis-aligned volumes.

Only single-file images (magic "n+1") and header/data pairs (magic "ni1")
with axis-aligned affines are supported; oblique rotations are out of scope
and rejected. Loaded arrays are reoriented into the package convention:
axes (z, y, x) with z ascending toward the feet (index 0 superior), y
ascending anterior, x ascending right. Scale factors (scl_slope/scl_inter)
are applied at load time.
"""

from __future__ import annotations

import gzip
import os
import struct

import numpy as np

from .errors import FormatError
from .volume import Modality, Volume

_HDR_SIZE = 348
_MAGIC_SINGLE = b"n+1\x00"
_MAGIC_PAIR = b"ni1\x00"

# NIfTI datatype code -> numpy dtype (endianness applied separately).
_DTYPES = {
    2: "u1",
    4: "i2",
    8: "i4",
    16: "f4",
    64: "f8",
    256: "i1",
    512: "u2",
    768: "u4",
}


def _open_maybe_gzip(path: str, mode: str):
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, mode)
    return open(path, mode)


def _read_exact(fh, count: int, what: str) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise FormatError(f"truncated NIfTI file: expected {count} bytes of {what}")
    return buf


def load_nifti(path: str, modality: Modality = Modality.CT) -> Volume:
    """Load a NIfTI-1 volume and reorient it to the (z, y, x) convention.

    Raises FormatError on truncated headers, bad magic, oblique affines or
    unsupported datatypes. ``modality`` tags the returned volume; pass
    Modality.MASK for label images (integer content is then enforced).
    """
    if not os.path.exists(path):
        raise FormatError(f"NIfTI file not found: {path}")
    with _open_maybe_gzip(path, "rb") as fh:
        hdr = fh.read(_HDR_SIZE)
        if len(hdr) < _HDR_SIZE:
            raise FormatError(f"truncated NIfTI header in {path}: {len(hdr)} < {_HDR_SIZE} bytes")

        sizeof_hdr = struct.unpack("<i", hdr[0:4])[0]
        if sizeof_hdr == _HDR_SIZE:
            end = "<"
        elif struct.unpack(">i", hdr[0:4])[0] == _HDR_SIZE:
            end = ">"
        else:
            raise FormatError(f"not a NIfTI-1 file (sizeof_hdr={sizeof_hdr}): {path}")

        magic = hdr[344:348]
        if magic not in (_MAGIC_SINGLE, _MAGIC_PAIR):
            raise FormatError(f"bad NIfTI magic {magic!r} in {path}")

        dim = struct.unpack(end + "8h", hdr[40:56])
        ndim = dim[0]
        if ndim < 3 or ndim > 7:
            raise FormatError(f"unsupported dimensionality dim[0]={ndim} in {path}")
        dims = dim[1:4]
        if any(d < 1 for d in dims):
            raise FormatError(f"non-positive volume dimensions {dims} in {path}")
        if any(d > 1 for d in dim[4 : 1 + ndim]):
            raise FormatError(f"only 3D volumes are supported, got dim={dim[: 1 + ndim]} in {path}")

        datatype = struct.unpack(end + "h", hdr[70:72])[0]
        if datatype not in _DTYPES:
            raise FormatError(f"unsupported NIfTI datatype code {datatype} in {path}")
        dtype = np.dtype(end + _DTYPES[datatype])

        pixdim = struct.unpack(end + "8f", hdr[76:108])
        vox_offset = struct.unpack(end + "f", hdr[108:112])[0]
        scl_slope = struct.unpack(end + "f", hdr[112:116])[0]
        scl_inter = struct.unpack(end + "f", hdr[116:120])[0]
        qform_code = struct.unpack(end + "h", hdr[252:254])[0]
        sform_code = struct.unpack(end + "h", hdr[254:256])[0]
        quatern = struct.unpack(end + "6f", hdr[256:280])  # b, c, d, qoffset x/y/z
        srow = np.array(struct.unpack(end + "12f", hdr[280:328]), dtype=np.float64).reshape(3, 4)

        nvox = int(np.prod(dims))
        if magic == _MAGIC_SINGLE:
            offset = int(vox_offset) if vox_offset >= _HDR_SIZE else 352
            _read_exact(fh, offset - _HDR_SIZE, "header padding")
            raw = _read_exact(fh, nvox * dtype.itemsize, "voxel data")
        else:
            raw = None

    if raw is None:
        base = path
        for suffix in (".hdr.gz", ".hdr"):
            if base.endswith(suffix):
                base = base[: -len(suffix)]
                break
        img_path = next(
            (base + s for s in (".img", ".img.gz") if os.path.exists(base + s)), None
        )
        if img_path is None:
            raise FormatError(f"header-pair NIfTI without companion .img file: {path}")
        with _open_maybe_gzip(img_path, "rb") as fh:
            fh.read(int(vox_offset))
            raw = _read_exact(fh, nvox * dtype.itemsize, "voxel data")

    # Disk order is x-fastest; shape (nz, ny, nx) wants x last so the
    # C-order reshape of (k, j, i) works directly.
    data = np.frombuffer(raw, dtype=dtype).reshape(dims[2], dims[1], dims[0])
    data = data.astype(np.float32)
    if scl_slope != 0.0 and not (scl_slope == 1.0 and scl_inter == 0.0):
        data = data * np.float32(scl_slope) + np.float32(scl_inter)

    # Affine handling: build per-axis scale and offset in RAS, (i, j, k) order.
    if sform_code > 0:
        scales = np.array([srow[0, 0], srow[1, 1], srow[2, 2]])
        offsets = np.array([srow[0, 3], srow[1, 3], srow[2, 3]])
        off_diag = np.abs(
            [srow[0, 1], srow[0, 2], srow[1, 0], srow[1, 2], srow[2, 0], srow[2, 1]]
        )
        if np.any(off_diag > 1e-3):
            raise FormatError(f"oblique sform affine is not supported: {path}")
        if np.any(np.abs(scales) < 1e-9):
            raise FormatError(f"degenerate sform affine in {path}")
    elif qform_code > 0:
        b, c, d = quatern[0], quatern[1], quatern[2]
        if max(abs(b), abs(c), abs(d)) > 1e-3:
            raise FormatError(f"rotated qform affine is not supported: {path}")
        qfac = -1.0 if pixdim[0] < 0 else 1.0
        scales = np.array([pixdim[1], pixdim[2], qfac * pixdim[3]])
        offsets = np.array([quatern[3], quatern[4], quatern[5]])
        if np.any(np.abs(scales) < 1e-9):
            raise FormatError(f"degenerate qform scales in {path}")
    else:
        spacing_ijk = np.array([pixdim[1], pixdim[2], pixdim[3]])
        if np.any(spacing_ijk <= 0):
            raise FormatError(f"non-positive pixdim spacings {spacing_ijk} in {path}")
        # No orientation info: take disk axes as already (R, A, -S) aligned
        # so the array maps onto the internal convention without flips.
        scales = np.array([spacing_ijk[0], spacing_ijk[1], -spacing_ijk[2]])
        offsets = np.zeros(3)

    spacing = np.zeros(3)
    origin = np.zeros(3)
    # Internal axis -> (disk axis index in data's (k, j, i) layout, RAS axis,
    # direction of the internal coordinate in RAS): z = -S, y = +A, x = +R.
    n_ijk = np.asarray(dims, dtype=np.int64)
    for internal_axis, (array_axis, ras_axis, sign) in enumerate(
        ((0, 2, -1.0), (1, 1, 1.0), (2, 0, 1.0))
    ):
        scale = sign * scales[ras_axis]
        offset = sign * offsets[ras_axis]
        n = n_ijk[ras_axis]
        if scale > 0:
            spacing[internal_axis] = scale
            origin[internal_axis] = offset
        else:
            data = np.flip(data, axis=array_axis)
            spacing[internal_axis] = -scale
            origin[internal_axis] = offset + (n - 1) * scale

    vol = Volume(
        data=np.ascontiguousarray(data),
        spacing_mm=spacing,
        origin_mm=origin,
        modality=modality,
    )
    return vol


def save_nifti(vol: Volume, path: str) -> None:
    """Write a volume as single-file NIfTI-1, gzipped when path ends in .gz.

    Images are stored float32, masks uint8 (or int16 if labels exceed 255).
    The sform encodes the internal convention: +x -> R, +y -> A, +z -> -S,
    so a round trip through load_nifti reproduces the volume bit-exactly.
    Gzip output carries no timestamp; identical volumes yield identical bytes.
    """
    data = vol.data
    if vol.modality is Modality.MASK:
        max_label = float(data.max()) if data.size else 0.0
        if max_label <= 255:
            datatype, bitpix, out = 2, 8, data.astype(np.uint8)
        else:
            datatype, bitpix, out = 4, 16, data.astype(np.int16)
    else:
        datatype, bitpix, out = 16, 32, data.astype(np.float32)

    nz, ny, nx = vol.shape
    sp = vol.spacing_mm
    org = vol.origin_mm

    hdr = bytearray(_HDR_SIZE)
    struct.pack_into("<i", hdr, 0, _HDR_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, datatype)
    struct.pack_into("<h", hdr, 72, bitpix)
    struct.pack_into("<8f", hdr, 76, 1.0, sp[2], sp[1], sp[0], 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, 352.0)  # vox_offset
    struct.pack_into("<f", hdr, 112, 1.0)  # scl_slope
    struct.pack_into("<f", hdr, 116, 0.0)  # scl_inter
    struct.pack_into("<h", hdr, 252, 0)  # qform_code
    struct.pack_into("<h", hdr, 254, 1)  # sform_code
    # srow rows map (i, j, k) -> (x, y, z) RAS; internal z runs against S.
    struct.pack_into("<4f", hdr, 280, sp[2], 0.0, 0.0, org[2])
    struct.pack_into("<4f", hdr, 296, 0.0, sp[1], 0.0, org[1])
    struct.pack_into("<4f", hdr, 312, 0.0, 0.0, -sp[0], -org[0])
    hdr[344:348] = _MAGIC_SINGLE

    payload = bytes(hdr) + b"\x00" * 4 + out.tobytes(order="C")
    if path.endswith(".gz"):
        with open(path, "wb") as fh:
            # filename="" and mtime=0 keep the bytes a pure function of content
            with gzip.GzipFile(filename="", fileobj=fh, mode="wb", mtime=0) as gz:
                gz.write(payload)
    else:
        with open(path, "wb") as fh:
            fh.write(payload)

"""Minimal NIfTI-1 single-file reader/writer.

Handles little-endian ``.nii`` / ``.nii.gz`` volumes with the scalar
datatypes used here (uint8, int16, int32, float32). Geometry is taken from
the sform when present, else the qform quaternion, else pixdim alone.
Voxel data is stored Fortran-ordered, per the format.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, UnsupportedFormatError, ValidationError
from .volume import IMAGE, LABEL, Volume

_HDR_SIZE = 348
_MAGIC = b"n+1\x00"
_GZIP_MAGIC = b"\x1f\x8b"

# datatype code -> numpy dtype (little-endian)
_DTYPES = {
    2: np.dtype("<u1"),
    4: np.dtype("<i2"),
    8: np.dtype("<i4"),
    16: np.dtype("<f4"),
}
_CODES = {np.dtype(np.uint8): 2, np.dtype(np.int16): 4, np.dtype(np.int32): 8, np.dtype(np.float32): 16}


def _read_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == _GZIP_MAGIC:
        raw = gzip.decompress(raw)
    return raw


def _quaternion_to_matrix(b: float, c: float, d: float, qfac: float) -> np.ndarray:
    a2 = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(a2) if a2 > 0 else 0.0
    r = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )
    r[:, 2] *= qfac
    return r


def _orthonormalize(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m)
    return u @ vt


def _geometry_from_header(h: dict) -> tuple[tuple, tuple, np.ndarray]:
    pixdim = h["pixdim"]
    spacing_hdr = tuple(abs(p) if p != 0 else 1.0 for p in pixdim[1:4])

    if h["sform_code"] > 0:
        m = np.array([h["srow_x"][:3], h["srow_y"][:3], h["srow_z"][:3]], dtype=float)
        origin = (h["srow_x"][3], h["srow_y"][3], h["srow_z"][3])
        norms = np.linalg.norm(m, axis=0)
        if np.any(norms <= 0):
            raise FormatError("sform has a zero-length column")
        direction = m / norms
        spacing = tuple(norms)
    elif h["qform_code"] > 0:
        qfac = -1.0 if pixdim[0] < 0 else 1.0
        direction = _quaternion_to_matrix(h["quatern_b"], h["quatern_c"], h["quatern_d"], qfac)
        origin = (h["qoffset_x"], h["qoffset_y"], h["qoffset_z"])
        spacing = spacing_hdr
    else:
        return spacing_hdr, (0.0, 0.0, 0.0), np.eye(3)

    if not np.allclose(direction.T @ direction, np.eye(3), atol=1e-3):
        raise ValidationError("file direction matrix is not orthonormal")
    return spacing, tuple(float(o) for o in origin), _orthonormalize(direction)


def _parse_header(raw: bytes) -> dict:
    if len(raw) < _HDR_SIZE:
        raise FormatError(f"file too short for a header ({len(raw)} bytes)")
    sizeof_hdr = struct.unpack_from("<i", raw, 0)[0]
    if sizeof_hdr != _HDR_SIZE:
        raise UnsupportedFormatError(
            f"sizeof_hdr is {sizeof_hdr}, only little-endian single-file volumes are supported"
        )
    magic = raw[344:348]
    if magic != _MAGIC:
        raise UnsupportedFormatError(f"unrecognized magic {magic!r}")

    h = {
        "dim": struct.unpack_from("<8h", raw, 40),
        "datatype": struct.unpack_from("<h", raw, 70)[0],
        "bitpix": struct.unpack_from("<h", raw, 72)[0],
        "pixdim": struct.unpack_from("<8f", raw, 76),
        "vox_offset": struct.unpack_from("<f", raw, 108)[0],
        "scl_slope": struct.unpack_from("<f", raw, 112)[0],
        "scl_inter": struct.unpack_from("<f", raw, 116)[0],
        "qform_code": struct.unpack_from("<h", raw, 252)[0],
        "sform_code": struct.unpack_from("<h", raw, 254)[0],
        "quatern_b": struct.unpack_from("<f", raw, 256)[0],
        "quatern_c": struct.unpack_from("<f", raw, 260)[0],
        "quatern_d": struct.unpack_from("<f", raw, 264)[0],
        "qoffset_x": struct.unpack_from("<f", raw, 268)[0],
        "qoffset_y": struct.unpack_from("<f", raw, 272)[0],
        "qoffset_z": struct.unpack_from("<f", raw, 276)[0],
        "srow_x": struct.unpack_from("<4f", raw, 280),
        "srow_y": struct.unpack_from("<4f", raw, 296),
        "srow_z": struct.unpack_from("<4f", raw, 312),
    }
    return h


def read_volume(path: str | Path, kind: str = IMAGE) -> Volume:
    """Read a .nii or .nii.gz file into a Volume of the given kind."""
    path = Path(path)
    raw = _read_bytes(path)
    h = _parse_header(raw)

    ndim = h["dim"][0]
    if not 1 <= ndim <= 7:
        raise FormatError(f"dim[0] = {ndim} out of range")
    dims = [max(1, d) for d in h["dim"][1 : 1 + ndim]]
    if any(d != 1 for d in dims[3:]):
        raise UnsupportedFormatError(f"volume has non-singleton extra dimensions {dims}")
    shape = tuple(dims[:3]) + (1,) * (3 - min(3, len(dims)))

    if h["datatype"] not in _DTYPES:
        raise UnsupportedFormatError(f"datatype code {h['datatype']} not supported")
    dtype = _DTYPES[h["datatype"]]

    offset = int(round(h["vox_offset"]))
    if offset < _HDR_SIZE:
        raise FormatError(f"vox_offset {offset} overlaps the header")
    count = int(np.prod(shape))
    end = offset + count * dtype.itemsize
    if len(raw) < end:
        raise FormatError(f"file truncated: need {end} bytes, have {len(raw)}")

    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    data = data.reshape(shape, order="F")

    slope, inter = h["scl_slope"], h["scl_inter"]
    if slope != 0.0 and (slope != 1.0 or inter != 0.0):
        data = data.astype(np.float64) * slope + inter
        if kind == LABEL:
            rounded = np.rint(data)
            if not np.allclose(data, rounded, atol=1e-6):
                raise ValidationError("intensity scaling yields non-integer label values")
            data = rounded

    spacing, origin, direction = _geometry_from_header(h)
    return Volume(np.asarray(data), spacing, origin, direction, kind)


def write_volume(v: Volume, path: str | Path) -> None:
    """Write a Volume as single-file NIfTI-1 (gzipped when path ends in .gz).

    Images are stored as float32, label maps as int32, with an sform built
    from the volume geometry and unit intensity scaling.
    """
    path = Path(path)
    data = v.data
    code = _CODES[data.dtype]

    dim = [3, *v.shape, 1, 1, 1, 1]
    pixdim = [1.0, *v.spacing, 0.0, 0.0, 0.0, 0.0]
    m = v.direction @ np.diag(v.spacing)

    hdr = bytearray(_HDR_SIZE)
    struct.pack_into("<i", hdr, 0, _HDR_SIZE)
    struct.pack_into("<b", hdr, 38, ord("r"))
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<h", hdr, 70, code)
    struct.pack_into("<h", hdr, 72, data.dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<f", hdr, 112, 1.0)  # scl_slope
    struct.pack_into("<f", hdr, 116, 0.0)  # scl_inter
    struct.pack_into("<b", hdr, 123, 2)  # spatial units: mm
    struct.pack_into("<h", hdr, 252, 0)  # qform_code
    struct.pack_into("<h", hdr, 254, 1)  # sform_code
    struct.pack_into("<4f", hdr, 280, *m[0], v.origin[0])
    struct.pack_into("<4f", hdr, 296, *m[1], v.origin[1])
    struct.pack_into("<4f", hdr, 312, *m[2], v.origin[2])
    hdr[344:348] = _MAGIC

    payload = bytes(hdr) + b"\x00\x00\x00\x00" + data.tobytes(order="F")
    if path.suffix == ".gz":
        # mtime pinned so identical volumes give byte-identical files
        path.write_bytes(gzip.compress(payload, compresslevel=1, mtime=0))
    else:
        path.write_bytes(payload)

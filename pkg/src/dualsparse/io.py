"""Image, dictionary and code-matrix file formats.

Images: binary PGM (P5, 8- or 16-bit), grayscale PNG, and ``.dsf`` raw
float64 rasters (``b"DSF1"``, u32 height, u32 width, row-major
little-endian doubles) that keep unclipped values.

Dictionaries: ``b"DSDD"``, u32 version, u32 N, u32 K, then ``K * N``
little-endian doubles in column-major order.

Codes: ``b"DSDC"``, u32 version, u32 K, u32 M, u64 nnz, then
``indptr`` (``M + 1`` u64), row ``indices`` (nnz u32), ``values``
(nnz f64) and one capped-flag byte per column, all little-endian.
"""

from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np
from scipy import sparse

from dualsparse.errors import FormatError
from dualsparse.image import Image
from dualsparse.sparse import SparseCodes

DSF_MAGIC = b"DSF1"
DICT_MAGIC = b"DSDD"
CODES_MAGIC = b"DSDC"
FORMAT_VERSION = 1

_PNM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*(\S+)")


def _pgm_header(buf: bytes) -> tuple[bytes, int, int, int, int]:
    fields = []
    pos = 0
    while len(fields) < 4:
        m = _PNM_TOKEN.match(buf, pos)
        if not m:
            raise FormatError("truncated PNM header")
        fields.append(m.group(1))
        pos = m.end()
    if pos >= len(buf) or buf[pos : pos + 1] not in b" \t\r\n":
        raise FormatError("PNM header must end with a single whitespace byte")
    magic = fields[0]
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise FormatError(f"non-numeric PNM header field: {exc}") from None
    return magic, width, height, maxval, pos + 1


def read_pgm(path) -> Image:
    buf = Path(path).read_bytes()
    if buf[:2] in (b"P3", b"P6"):
        raise FormatError(f"{path}: color PPM input is not supported; convert to grayscale first")
    if buf[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    magic, width, height, maxval, start = _pgm_header(buf)
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise FormatError(f"{path}: invalid PGM dimensions or maxval")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    payload = buf[start : start + need]
    if len(payload) != need:
        raise FormatError(f"{path}: expected {need} bytes of pixel data, found {len(payload)}")
    values = np.frombuffer(payload, dtype=dtype).reshape(height, width).astype(np.float64)
    return Image(values, float(maxval))


def _quantize(img: Image, maxval: int) -> np.ndarray:
    return np.clip(np.rint(img.values), 0, maxval)


def write_pgm(path, img: Image) -> None:
    maxval = 255 if img.dynamic_range <= 255 else 65535
    q = _quantize(img, maxval)
    data = q.astype(">u2" if maxval > 255 else "u1").tobytes()
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + data)


def read_png(path) -> Image:
    from PIL import Image as PILImage

    with PILImage.open(path) as im:
        if im.mode in ("L",):
            return Image(np.asarray(im, dtype=np.float64), 255.0)
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            return Image(np.asarray(im, dtype=np.float64), 65535.0)
        raise FormatError(f"{path}: PNG mode {im.mode!r} is not grayscale; color input is rejected")


def write_png(path, img: Image) -> None:
    from PIL import Image as PILImage

    if img.dynamic_range <= 255:
        PILImage.fromarray(_quantize(img, 255).astype(np.uint8), mode="L").save(path, format="PNG")
    else:
        PILImage.fromarray(_quantize(img, 65535).astype(np.uint16), mode="I;16").save(path, format="PNG")


def read_dsf(path) -> Image:
    buf = Path(path).read_bytes()
    if len(buf) < 12 or buf[:4] != DSF_MAGIC:
        raise FormatError(f"{path}: missing DSF1 header")
    height, width = struct.unpack("<II", buf[4:12])
    need = 8 * height * width
    if len(buf) - 12 != need:
        raise FormatError(f"{path}: expected {need} payload bytes, found {len(buf) - 12}")
    return Image(np.frombuffer(buf[12:], dtype="<f8").reshape(height, width).copy())


def write_dsf(path, img: Image) -> None:
    header = DSF_MAGIC + struct.pack("<II", img.height, img.width)
    Path(path).write_bytes(header + np.ascontiguousarray(img.values, dtype="<f8").tobytes())


_READERS = {".pgm": read_pgm, ".png": read_png, ".dsf": read_dsf}
_WRITERS = {".pgm": write_pgm, ".png": write_png, ".dsf": write_dsf}


def read_image(path) -> Image:
    """Read by file extension (``.pgm``, ``.png``, ``.dsf``)."""
    ext = Path(path).suffix.lower()
    if ext not in _READERS:
        raise FormatError(f"{path}: unsupported image format {ext!r}")
    return _READERS[ext](path)


def write_image(path, img) -> None:
    """Write by extension; 8/16-bit containers are clipped and rounded."""
    if not isinstance(img, Image):
        img = Image(img)
    ext = Path(path).suffix.lower()
    if ext not in _WRITERS:
        raise FormatError(f"{path}: unsupported image format {ext!r}")
    _WRITERS[ext](path, img)


def save_dictionary(path, D) -> None:
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2:
        raise FormatError("dictionary must be a 2-D array")
    N, K = D.shape
    header = DICT_MAGIC + struct.pack("<III", FORMAT_VERSION, N, K)
    Path(path).write_bytes(header + np.asarray(D, dtype="<f8").tobytes(order="F"))


def load_dictionary(path) -> np.ndarray:
    """Read a dictionary file; a noise part may legitimately hold zero atoms."""
    buf = Path(path).read_bytes()
    if len(buf) < 16 or buf[:4] != DICT_MAGIC:
        raise FormatError(f"{path}: missing DSDD header")
    version, N, K = struct.unpack("<III", buf[4:16])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported dictionary version {version}")
    need = 8 * N * K
    if len(buf) - 16 != need:
        raise FormatError(f"{path}: expected {need} payload bytes, found {len(buf) - 16}")
    return np.frombuffer(buf[16:], dtype="<f8").reshape((N, K), order="F").copy()


def save_codes(path, codes: SparseCodes) -> None:
    m = codes.matrix
    K, M = m.shape
    parts = [
        CODES_MAGIC + struct.pack("<IIIQ", FORMAT_VERSION, K, M, m.indices.size),
        np.asarray(m.indptr, dtype="<u8").tobytes(),
        np.asarray(m.indices, dtype="<u4").tobytes(),
        np.asarray(m.data, dtype="<f8").tobytes(),
        np.asarray(codes.capped, dtype="u1").tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


def load_codes(path) -> SparseCodes:
    buf = Path(path).read_bytes()
    if len(buf) < 24 or buf[:4] != CODES_MAGIC:
        raise FormatError(f"{path}: missing DSDC header")
    version, K, M, nnz = struct.unpack("<IIIQ", buf[4:24])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported codes version {version}")
    sizes = [8 * (M + 1), 4 * nnz, 8 * nnz, M]
    if len(buf) - 24 != sum(sizes):
        raise FormatError(f"{path}: payload size does not match header")
    off = 24
    arrays = []
    for size, dt in zip(sizes, ("<u8", "<u4", "<f8", "u1")):
        arrays.append(np.frombuffer(buf[off : off + size], dtype=dt))
        off += size
    indptr, indices, values, capped = arrays
    if indptr[0] != 0 or indptr[-1] != nnz or np.any(np.diff(indptr.astype(np.int64)) < 0):
        raise FormatError(f"{path}: corrupt column pointer array")
    if nnz and indices.max() >= K:
        raise FormatError(f"{path}: row index out of range")
    matrix = sparse.csc_array(
        (values.astype(np.float64), indices.astype(np.int64), indptr.astype(np.int64)), shape=(K, M)
    )
    return SparseCodes(matrix, capped.astype(bool))

"""File formats: PFM images, EQT1 tensors, key=value sidecars and manifests."""

import os

import numpy as np

from ._validation import FormatError, InvalidArgument
from .grid import GroupFeatureMap, Image

__all__ = [
    "read_pfm",
    "write_pfm",
    "read_tensor",
    "write_tensor",
    "read_array",
    "write_array",
    "read_keyvalue",
    "write_keyvalue",
    "parse_keyvalue_line",
    "meta_path",
]


def meta_path(path):
    return os.fspath(path) + ".meta"


def format_value(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list, np.ndarray)):
        return ",".join(format_value(float(v)) if not isinstance(v, str) else v for v in value)
    return str(value)


def write_keyvalue(path, items):
    """Write ``key=value`` lines in the given order."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for key, value in items.items():
            fh.write(f"{key}={format_value(value)}\n")


def read_keyvalue(path):
    """Parse a flat ``key=value`` file; blank lines and ``#`` comments are skipped."""
    out = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{path}: expected key=value, got {line!r}", line=lineno)
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def parse_keyvalue_line(line, lineno=None):
    """Split ``a=1 b=2,3`` into a dict of strings."""
    out = {}
    for token in line.split():
        if "=" not in token:
            raise FormatError(f"malformed token {token!r}", line=lineno)
        key, value = token.split("=", 1)
        out[key] = value
    return out


def _read_token(buf, pos):
    """Next whitespace-delimited ASCII token and the position after its terminator."""
    n = len(buf)
    while pos < n and buf[pos : pos + 1].isspace():
        pos += 1
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of header", offset=start)
    return buf[start:pos], start, pos + 1


def write_pfm(path, img, origin=(0.0, 0.0)):
    """Write a 1- or 3-channel image as little-endian PFM plus a ``.meta`` sidecar."""
    if img.C not in (1, 3):
        raise InvalidArgument(f"PFM supports 1 or 3 channels, got {img.C}")
    magic = b"PF" if img.C == 3 else b"Pf"
    header = magic + f"\n{img.W} {img.H}\n-1.0\n".encode("ascii")
    payload = np.ascontiguousarray(img.data[::-1], dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + payload)
    write_keyvalue(meta_path(path), {"mesh_size": float(img.h), "origin": tuple(origin)})


def read_pfm(path):
    """Read a PFM file; mesh size comes from the sidecar when present (else 1)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, start, pos = _read_token(buf, 0)
    if magic not in (b"PF", b"Pf"):
        raise FormatError(f"{path}: bad PFM magic {magic!r}", offset=start)
    channels = 3 if magic == b"PF" else 1
    dims = []
    for _ in range(2):
        tok, start, pos = _read_token(buf, pos)
        try:
            value = int(tok)
        except ValueError:
            raise FormatError(f"{path}: bad PFM dimension {tok!r}", offset=start) from None
        if value < 1:
            raise FormatError(f"{path}: non-positive PFM dimension", offset=start)
        dims.append(value)
    tok, start, pos = _read_token(buf, pos)
    try:
        scale = float(tok)
    except ValueError:
        raise FormatError(f"{path}: bad PFM scale {tok!r}", offset=start) from None
    if scale == 0.0:
        raise FormatError(f"{path}: PFM scale must be nonzero", offset=start)
    W, H = dims
    need = W * H * channels * 4
    have = len(buf) - pos
    if have < need:
        raise FormatError(
            f"{path}: truncated PFM payload ({have} of {need} bytes)", offset=len(buf)
        )
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(buf, dtype=dtype, count=W * H * channels, offset=pos)
    data = data.reshape(H, W, channels)[::-1].astype(np.float64)
    h = 1.0
    mp = meta_path(path)
    if os.path.exists(mp):
        meta = read_keyvalue(mp)
        if "mesh_size" in meta:
            h = float(meta["mesh_size"])
    return Image(data, h)


def write_array(path, data, h):
    """Write a 4-d float64 array with an EQT1 header."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 4:
        raise InvalidArgument("EQT1 payload must be 4-dimensional")
    d0, d1, d2, d3 = data.shape
    header = f"EQT1 {d0} {d1} {d2} {d3} {float(h)!r}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + np.ascontiguousarray(data, dtype="<f8").tobytes())


def read_array(path):
    """Read an EQT1 file, returning ``(array, h)``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    end = buf.find(b"\n")
    if end < 0:
        raise FormatError(f"{path}: missing EQT1 header terminator", offset=len(buf))
    parts = buf[:end].split(b" ")
    if not parts or parts[0] != b"EQT1":
        raise FormatError(f"{path}: bad magic {parts[0] if parts else b''!r}", offset=0)
    if len(parts) != 6:
        raise FormatError(f"{path}: EQT1 header needs 5 fields", offset=end)
    try:
        dims = [int(v) for v in parts[1:5]]
        h = float(parts[5])
    except ValueError:
        raise FormatError(f"{path}: unparsable EQT1 header", offset=0) from None
    if min(dims) < 1 or not h > 0:
        raise FormatError(f"{path}: invalid EQT1 dimensions or mesh size", offset=0)
    count = int(np.prod(dims))
    payload = len(buf) - end - 1
    if payload != 8 * count:
        raise FormatError(
            f"{path}: payload is {payload} bytes, header implies {8 * count}",
            offset=end + 1 + min(payload, 8 * count),
        )
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=end + 1)
    return data.reshape(dims).astype(np.float64), h


def write_tensor(path, fmap):
    write_array(path, fmap.data, fmap.h)


def read_tensor(path):
    data, h = read_array(path)
    return GroupFeatureMap(data, h)

"""Flat binary container for named float arrays plus string metadata.

One file holds an ordered set of metadata pairs and named arrays. The
layout is a text header per section followed by raw little-endian array
bytes, which keeps files diffable at the header level and bit-exact on
round trip:

    phasefno-archive v1\n
    meta <count>\n
    <key>=<value>\n            (count lines)
    array <name> <dtype> <ndim> <d0> <d1> ...\n
    <raw bytes, C order, little endian>
    ...
    end\n

Allowed dtypes are float64, complex128, and int64. Readers reject
anything else, along with truncated payloads and missing terminators,
so a partially written checkpoint can never be half-loaded.
"""

from __future__ import annotations

import numpy as np

MAGIC = "phasefno-archive v1"

_DTYPES = {
    "float64": np.dtype("<f8"),
    "complex128": np.dtype("<c16"),
    "int64": np.dtype("<i8"),
}
_DTYPE_NAMES = {np.dtype(k): name for name, k in
                (("float64", np.float64),
                 ("complex128", np.complex128),
                 ("int64", np.int64))}


class ArchiveError(ValueError):
    """Raised when a file does not parse as a complete archive."""


def _check_token(kind, s):
    if not s or any(c.isspace() for c in s) or "=" in s:
        raise ArchiveError(f"{kind} {s!r} must be non-empty with no "
                           "whitespace or '='")


def save_archive(path, meta, arrays):
    """Write string metadata and named arrays to ``path``.

    Iteration order of both mappings is preserved, so identical inputs
    produce identical bytes.
    """
    for name in arrays:
        _check_token("array name", name)
    for key, value in meta.items():
        _check_token("meta key", key)
        if "\n" in str(value):
            raise ArchiveError(f"meta value for {key!r} contains a newline")
    with open(path, "wb") as f:
        f.write(f"{MAGIC}\n".encode())
        f.write(f"meta {len(meta)}\n".encode())
        for key, value in meta.items():
            f.write(f"{key}={value}\n".encode())
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            if arr.dtype not in _DTYPE_NAMES:
                raise ArchiveError(
                    f"array {name!r} has unsupported dtype {arr.dtype}")
            dims = " ".join(str(d) for d in arr.shape)
            head = f"array {name} {_DTYPE_NAMES[arr.dtype]} {arr.ndim}"
            f.write((head + (f" {dims}" if dims else "") + "\n").encode())
            f.write(np.ascontiguousarray(arr).astype(
                _DTYPES[_DTYPE_NAMES[arr.dtype]], copy=False).tobytes())
        f.write(b"end\n")


def _read_line(f, path):
    out = bytearray()
    while True:
        c = f.read(1)
        if not c:
            raise ArchiveError(f"{path}: truncated (no terminator)")
        if c == b"\n":
            return out.decode()
        out += c


def load_archive(path):
    """Read ``path`` back into ``(meta, arrays)`` dicts.

    Any structural problem raises ArchiveError; nothing partial is
    returned.
    """
    meta, arrays = {}, {}
    with open(path, "rb") as f:
        if _read_line(f, path) != MAGIC:
            raise ArchiveError(f"{path}: bad magic line")
        head = _read_line(f, path).split()
        if len(head) != 2 or head[0] != "meta":
            raise ArchiveError(f"{path}: expected meta count")
        for _ in range(int(head[1])):
            line = _read_line(f, path)
            key, sep, value = line.partition("=")
            if not sep:
                raise ArchiveError(f"{path}: bad meta line {line!r}")
            meta[key] = value
        while True:
            line = _read_line(f, path)
            if line == "end":
                return meta, arrays
            parts = line.split()
            if len(parts) < 4 or parts[0] != "array":
                raise ArchiveError(f"{path}: bad section line {line!r}")
            name, dtype_name, ndim = parts[1], parts[2], int(parts[3])
            if dtype_name not in _DTYPES:
                raise ArchiveError(f"{path}: unknown dtype {dtype_name!r}")
            if len(parts) != 4 + ndim:
                raise ArchiveError(f"{path}: dimension count mismatch "
                                   f"in {line!r}")
            shape = tuple(int(d) for d in parts[4:])
            dtype = _DTYPES[dtype_name]
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = f.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise ArchiveError(f"{path}: truncated payload for "
                                   f"array {name!r}")
            arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()

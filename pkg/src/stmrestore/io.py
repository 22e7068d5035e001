"""File formats for grids, masks and dictionaries.

* ``tsv-float`` grids: ``SPGRID v1 rows cols``, optional ``# key=value``
  metadata lines, then one tab-separated line of floats per row.
* ``pgm16`` grids: binary P5, maxval 65535, big-endian samples (the PGM
  standard), with ``# offset=... scale=...`` comments so that
  ``value = offset + scale * sample``.
* masks: binary P4 bitmap where a set bit is a valid pixel and a clear bit
  an outlier, plus an optional ``<path>.params`` key=value sidecar.
* dictionaries: ``SPDICT v1``, a line ``m k``, then one atom per line.

Floats are written with ``repr`` so text formats round-trip bit-exactly.
"""
import math
from pathlib import Path

import numpy as np

from .core import as_grid, as_mask
from .errors import ParseError

GRID_MAGIC = "SPGRID"
DICT_MAGIC = "SPDICT"
VERSION = "v1"
PGM_MAX = 65535


def _fmt(x):
    return repr(float(x))


def _meta_lines(metadata):
    lines = []
    for key, value in (metadata or {}).items():
        key = str(key)
        if "=" in key or "\n" in key or "\n" in str(value):
            raise ValueError(f"metadata entry {key!r} cannot be stored on one line")
        lines.append(f"# {key}={value}")
    return lines


def _parse_meta(line):
    key, _, value = line[1:].strip().partition("=")
    return key.strip(), value.strip()


def _float(token, path, lineno):
    try:
        v = float(token)
    except ValueError:
        raise ParseError(f"not a number: {token!r}", path, lineno) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {token!r}", path, lineno)
    return v


def grid_format(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    return "pgm16" if head == b"P5" else "tsv-float"


def write_grid(g, path, metadata=None, fmt="tsv-float"):
    g = as_grid(g)
    if fmt == "tsv-float":
        rows, cols = g.shape
        lines = [f"{GRID_MAGIC} {VERSION} {rows} {cols}", *_meta_lines(metadata)]
        lines += ["\t".join(_fmt(v) for v in row) for row in g]
        Path(path).write_text("\n".join(lines) + "\n")
    elif fmt == "pgm16":
        _write_pgm16(g, path, metadata)
    else:
        raise ValueError(f"unknown grid format {fmt!r}")


def read_grid(path):
    """Return ``(grid, metadata)``; the format is detected from the file's magic."""
    if grid_format(path) == "pgm16":
        return _read_pgm16(path)
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty file", path, 1)
    head = lines[0].split()
    if len(head) != 4 or head[0] != GRID_MAGIC or head[1] != VERSION:
        raise ParseError(f"expected '{GRID_MAGIC} {VERSION} rows cols' header", path, 1)
    try:
        rows, cols = int(head[2]), int(head[3])
    except ValueError:
        raise ParseError("grid dimensions must be integers", path, 1) from None
    if rows < 1 or cols < 1:
        raise ParseError("grid dimensions must be positive", path, 1)
    meta = {}
    data = []
    for lineno, line in enumerate(lines[1:], start=2):
        if line.startswith("#"):
            if data:
                raise ParseError("metadata line after grid data", path, lineno)
            k, v = _parse_meta(line)
            meta[k] = v
            continue
        if not line.strip():
            continue
        tokens = line.split("\t")
        if len(tokens) != cols:
            raise ParseError(f"expected {cols} values, found {len(tokens)}", path, lineno)
        data.append([_float(t, path, lineno) for t in tokens])
    if len(data) != rows:
        raise ParseError(f"expected {rows} data rows, found {len(data)}", path, len(lines))
    return np.array(data, dtype=np.float64), meta


def _pgm_header_tokens(raw, path, want):
    """Read ``want`` whitespace-separated header tokens, collecting comments."""
    tokens, comments = [], []
    pos, lineno = 0, 1
    while len(tokens) < want:
        if pos >= len(raw):
            raise ParseError("truncated header", path, lineno)
        ch = raw[pos:pos + 1]
        if ch == b"#":
            end = raw.find(b"\n", pos)
            end = len(raw) if end < 0 else end
            comments.append(raw[pos:end].decode("ascii", "replace"))
            pos = end
        elif ch.isspace():
            lineno += ch == b"\n"
            pos += 1
        else:
            start = pos
            while pos < len(raw) and not raw[pos:pos + 1].isspace() and raw[pos:pos + 1] != b"#":
                pos += 1
            tokens.append(raw[start:pos].decode("ascii", "replace"))
    # exactly one whitespace byte separates the header from the raster
    return tokens, comments, pos + 1, lineno


def _header_ints(tokens, path, lineno):
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise ParseError("header dimensions must be integers", path, lineno) from None


def _write_pgm16(g, path, metadata):
    lo, hi = float(g.min()), float(g.max())
    scale = (hi - lo) / PGM_MAX if hi > lo else 1.0
    samples = np.rint((g - lo) / scale).astype(">u2")
    rows, cols = g.shape
    head = ["P5", f"# offset={_fmt(lo)}", f"# scale={_fmt(scale)}", *_meta_lines(metadata),
            f"{cols} {rows}", str(PGM_MAX)]
    with open(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode("ascii"))
        fh.write(samples.tobytes())


def _read_pgm16(path):
    raw = Path(path).read_bytes()
    tokens, comments, start, lineno = _pgm_header_tokens(raw, path, 4)
    if tokens[0] != "P5":
        raise ParseError("not a binary PGM (P5) file", path, 1)
    cols, rows, maxval = _header_ints(tokens[1:], path, lineno)
    if cols < 1 or rows < 1 or not 0 < maxval <= PGM_MAX:
        raise ParseError("invalid PGM dimensions or maxval", path, lineno)
    meta = dict(_parse_meta(c) for c in comments if "=" in c)
    offset = float(meta.pop("offset", 0.0))
    scale = float(meta.pop("scale", 1.0))
    dtype = ">u2" if maxval > 255 else "u1"
    need = rows * cols * np.dtype(dtype).itemsize
    body = raw[start:start + need]
    if len(body) != need:
        raise ParseError(f"raster has {len(body)} bytes, expected {need}", path, lineno)
    samples = np.frombuffer(body, dtype=dtype).reshape(rows, cols).astype(np.float64)
    return offset + scale * samples, meta


def write_mask(mask, path, params=None):
    mask = as_mask(mask)
    rows, cols = mask.shape
    packed = np.packbits(mask, axis=1)
    with open(path, "wb") as fh:
        fh.write(f"P4\n{cols} {rows}\n".encode("ascii"))
        fh.write(packed.tobytes())
    if params is not None:
        write_manifest(params, str(path) + ".params")


def read_mask(path, shape=None):
    """Read a P4 bitmap as a boolean mask; ``shape`` checks it against a grid."""
    raw = Path(path).read_bytes()
    tokens, _, start, lineno = _pgm_header_tokens(raw, path, 3)
    if tokens[0] != "P4":
        raise ParseError("not a binary PBM (P4) file", path, 1)
    cols, rows = _header_ints(tokens[1:], path, lineno)
    if cols < 1 or rows < 1:
        raise ParseError("invalid bitmap dimensions", path, lineno)
    stride = (cols + 7) // 8
    body = raw[start:start + rows * stride]
    if len(body) != rows * stride:
        raise ParseError(f"raster has {len(body)} bytes, expected {rows * stride}", path, lineno)
    bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8).reshape(rows, stride), axis=1)
    mask = bits[:, :cols].astype(bool)
    if shape is not None and mask.shape != tuple(shape):
        raise ParseError(f"mask shape {mask.shape} does not match grid shape {tuple(shape)}", path)
    return mask


def write_dictionary(d, path):
    d = np.asarray(d, dtype=np.float64)
    m, k = d.shape
    lines = [f"{DICT_MAGIC} {VERSION}", f"{m} {k}"]
    lines += [" ".join(_fmt(v) for v in d[:, j]) for j in range(k)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_dictionary(path):
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split() != [DICT_MAGIC, VERSION]:
        raise ParseError(f"expected '{DICT_MAGIC} {VERSION}' header", path, 1)
    if len(lines) < 2:
        raise ParseError("missing 'm k' line", path, 2)
    try:
        m, k = (int(t) for t in lines[1].split())
    except ValueError:
        raise ParseError("expected 'm k' on line 2", path, 2) from None
    if m < 1 or k < 1:
        raise ParseError("dictionary dimensions must be positive", path, 2)
    atoms = [ln for ln in lines[2:] if ln.strip()]
    if len(atoms) != k:
        raise ParseError(f"expected {k} atoms, found {len(atoms)}", path, len(lines))
    d = np.empty((m, k))
    for j, line in enumerate(atoms):
        tokens = line.split()
        if len(tokens) != m:
            raise ParseError(f"atom {j} has {len(tokens)} values, expected {m}", path, j + 3)
        d[:, j] = [_float(t, path, j + 3) for t in tokens]
    return d


def write_manifest(entries, path):
    lines = []
    for key, value in entries.items():
        text = str(value)
        if "\n" in text or "=" in str(key):
            raise ValueError(f"manifest entry {key!r} cannot be stored on one line")
        lines.append(f"{key}={text}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path):
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError("expected key=value", path, lineno)
        out[key.strip()] = value.strip()
    return out

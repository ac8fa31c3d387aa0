"""
Matrix files.

Binary layout (little-endian)::

    b"SMZL"  u32 version  u64 n_rows  u64 n_cols  u64 nnz
    nnz records of (u32 row, u32 col, i32 value), sorted by (row, col)

The text variant follows the MatrixMarket coordinate layout (1-based
indices) with an extra ``%%field: integer`` line.
"""

import enum
import struct

import numpy as np

from .matrix import COEFF_LIMIT, CooMatrix

MAGIC = b"SMZL"
VERSION = 1
HEADER = struct.Struct("<4sIQQQ")
RECORD = np.dtype([("row", "<u4"), ("col", "<u4"), ("val", "<i4")])
MM_BANNER = "%%MatrixMarket matrix coordinate integer general"
MM_FIELD = "%%field: integer"


class ErrorCode(enum.IntEnum):
    BAD_HEADER = 1
    TRUNCATED = 2
    INDEX_OUT_OF_RANGE = 3
    COEFF_TOO_LARGE = 4
    UNSORTED = 5
    DUPLICATE = 6
    ZERO_COEFF = 7


class MatrixFormatError(ValueError):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = ErrorCode(code)


def _checked(n_rows, n_cols, rows, cols, vals):
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.int64)
    if len(rows):
        if rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols:
            raise MatrixFormatError(ErrorCode.INDEX_OUT_OF_RANGE, "index out of range")
        if np.abs(vals).max() >= COEFF_LIMIT:
            raise MatrixFormatError(ErrorCode.COEFF_TOO_LARGE, "coefficient magnitude >= 2^31")
        if (vals == 0).any():
            raise MatrixFormatError(ErrorCode.ZERO_COEFF, "explicit zero coefficient")
        key = rows * n_cols + cols
        step = np.diff(key)
        if (step < 0).any():
            raise MatrixFormatError(ErrorCode.UNSORTED, "entries not sorted by (row, col)")
        if (step == 0).any():
            raise MatrixFormatError(ErrorCode.DUPLICATE, "duplicate entry")
    return CooMatrix(n_rows, n_cols, rows, cols, vals)


def encode_binary(m):
    m = m.to_coo()
    if m.n_rows >= 1 << 32 or m.n_cols >= 1 << 32:
        raise ValueError("dimensions exceed 32-bit indices")
    rec = np.empty(m.nnz, dtype=RECORD)
    rec["row"], rec["col"], rec["val"] = m.row, m.col, m.data
    return HEADER.pack(MAGIC, VERSION, m.n_rows, m.n_cols, m.nnz) + rec.tobytes()


def decode_binary(buf):
    if len(buf) < HEADER.size:
        raise MatrixFormatError(ErrorCode.TRUNCATED, "file shorter than header")
    magic, version, n_rows, n_cols, nnz = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise MatrixFormatError(ErrorCode.BAD_HEADER, f"bad magic {magic!r}")
    if version != VERSION:
        raise MatrixFormatError(ErrorCode.BAD_HEADER, f"unsupported version {version}")
    body = buf[HEADER.size:]
    if len(body) != nnz * RECORD.itemsize:
        raise MatrixFormatError(ErrorCode.TRUNCATED, "record count does not match header")
    rec = np.frombuffer(body, dtype=RECORD)
    # i32 can hold -2^31, whose magnitude is out of range
    return _checked(n_rows, n_cols, rec["row"], rec["col"], rec["val"])


def encode_text(m):
    m = m.to_coo()
    lines = [MM_BANNER, MM_FIELD, f"{m.n_rows} {m.n_cols} {m.nnz}"]
    lines += [f"{i + 1} {j + 1} {v}" for i, j, v in m.triplets()]
    return ("\n".join(lines) + "\n").encode()


def decode_text(buf):
    text = buf.decode() if isinstance(buf, bytes) else buf
    lines = text.splitlines()
    if not lines or not lines[0].startswith("%%MatrixMarket matrix coordinate integer"):
        raise MatrixFormatError(ErrorCode.BAD_HEADER, "missing MatrixMarket coordinate banner")
    body = [ln for ln in lines[1:] if ln.strip() and not ln.startswith("%")]
    try:
        n_rows, n_cols, nnz = (int(x) for x in body[0].split())
        entries = [tuple(int(x) for x in ln.split()) for ln in body[1:]]
    except (IndexError, ValueError):
        raise MatrixFormatError(ErrorCode.BAD_HEADER, "malformed size line or entry") from None
    if len(entries) != nnz or any(len(e) != 3 for e in entries):
        raise MatrixFormatError(ErrorCode.TRUNCATED, "entry count does not match header")
    if not entries:
        return _checked(n_rows, n_cols, [], [], [])
    rows, cols, vals = zip(*entries)
    if any(abs(v) >= COEFF_LIMIT for v in vals):
        raise MatrixFormatError(ErrorCode.COEFF_TOO_LARGE, "coefficient magnitude >= 2^31")
    return _checked(n_rows, n_cols, np.array(rows) - 1, np.array(cols) - 1, vals)


def is_text_path(path):
    return str(path).endswith((".mtx", ".txt"))


def load_matrix(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf.startswith(MAGIC):
        return decode_binary(buf)
    if buf.startswith(b"%%MatrixMarket"):
        return decode_text(buf)
    raise MatrixFormatError(ErrorCode.BAD_HEADER, "unrecognized matrix file")


def store_matrix(m, path, text=None):
    if text is None:
        text = is_text_path(path)
    with open(path, "wb") as fh:
        fh.write(encode_text(m) if text else encode_binary(m))

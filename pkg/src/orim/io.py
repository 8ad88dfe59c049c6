"""File formats: dense CSV and MatrixMarket matrices, PGM images, key=value configs."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import PreconditionError

__all__ = [
    "read_matrix",
    "read_vector",
    "write_csv",
    "write_mtx",
    "read_pgm",
    "write_pgm",
    "read_config",
    "write_config",
]


def read_matrix(path):
    """Load a dense CSV (``.csv``/``.txt``) or MatrixMarket (``.mtx``) matrix.

    MatrixMarket coordinate files come back as CSR; everything else as a
    2-D float array.
    """
    path = Path(path)
    if not path.is_file():
        raise PreconditionError(f"no such file: {path}")
    try:
        if path.suffix.lower() == ".mtx":
            M = scipy.io.mmread(str(path))
            return M.tocsr().astype(float) if sp.issparse(M) else np.asarray(M, dtype=float)
        M = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    except (ValueError, OSError) as exc:
        raise PreconditionError(f"malformed matrix file {path}: {exc}") from exc
    if not np.all(np.isfinite(M)):
        raise PreconditionError(f"non-finite entries in {path}")
    return M


def read_vector(path) -> np.ndarray:
    M = read_matrix(path)
    M = M.toarray() if sp.issparse(M) else M
    if min(M.shape) != 1:
        raise PreconditionError(f"{path} holds a {M.shape} matrix, expected a vector")
    return M.ravel()


def write_csv(path, M) -> None:
    """Dense CSV with round-trip precision."""
    M = np.atleast_2d(np.asarray(M.toarray() if sp.issparse(M) else M, dtype=float))
    np.savetxt(path, M, delimiter=",", fmt="%.17g")


def write_mtx(path, M) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(M), precision=17)


# PGM =========================================================================
def _pgm_tokens(data: bytes):
    """Header tokens of a PGM file, skipping comments; returns tokens and body offset."""
    tokens, i = [], 0
    while len(tokens) < 4:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise PreconditionError("truncated PGM header")
        tokens.append(data[i:j].decode("ascii"))
        i = j
    return tokens, i + 1


def read_pgm(path) -> np.ndarray:
    """Read a P2 (ASCII) or P5 (binary) PGM image as floats in [0, 1]."""
    data = Path(path).read_bytes()
    try:
        (magic, w, h, maxval), offset = _pgm_tokens(data)
        w, h, maxval = int(w), int(h), int(maxval)
    except (ValueError, IndexError) as exc:
        raise PreconditionError(f"malformed PGM header in {path}") from exc
    if magic not in ("P2", "P5") or not 0 < maxval < 65536:
        raise PreconditionError(f"unsupported PGM variant {magic!r} in {path}")
    if magic == "P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        body = np.frombuffer(data, dtype=dtype, count=w * h, offset=offset) \
            if len(data) - offset >= w * h * dtype.itemsize else None
    else:
        body = np.array(data[offset:].split(), dtype=int)
        body = body if body.size == w * h else None
    if body is None:
        raise PreconditionError(f"PGM body of {path} does not match {w}x{h}")
    return body.reshape(h, w).astype(float) / maxval


def write_pgm(path, image, binary: bool = True, maxval: int = 255) -> None:
    """Write an image clipped to [0, 1] as an 8-bit (or 16-bit) PGM."""
    img = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    if img.ndim != 2:
        raise PreconditionError("image must be 2-D")
    h, w = img.shape
    q = np.rint(img * maxval).astype(int)
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
        Path(path).write_bytes(header + q.astype(dtype).tobytes())
    else:
        lines = [f"P2\n{w} {h}\n{maxval}"] + [" ".join(map(str, row)) for row in q]
        Path(path).write_text("\n".join(lines) + "\n")


# key=value configs ===========================================================
def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise PreconditionError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PreconditionError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise PreconditionError(f"{path}:{lineno}: empty key")
        if key in out:
            raise PreconditionError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def write_config(path, values: dict) -> None:
    os.makedirs(Path(path).parent, exist_ok=True)
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in values.items()))

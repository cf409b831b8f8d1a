"""Sectioned binary container for named parameter tensors.

Layout: a text manifest, then concatenated payloads. The manifest opens
with ``ISOTENS1 <count>``, has one ``<name> <rows> <cols> <offset>`` line
per tensor (offset in bytes relative to the start of the payload
section), and closes with ``end``. Each payload uses the same encoding as
the embedding files: IEEE-754 float32 little-endian, row-major. Vectors
are stored as one-row matrices, scalars as 1x1.

Writing the result of ``load_tensors`` back yields a byte-identical file.
"""

from __future__ import annotations

import numpy as np

from .ball import AnchorSet, retract_raw
from .errors import FormatError
from .head import CalibrationHead

MAGIC = "ISOTENS1"


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named tensors in dict order."""
    entries = []
    offset = 0
    blobs = []
    for name, value in tensors.items():
        if " " in name or "\n" in name:
            raise ValueError(f"tensor name {name!r} may not contain whitespace")
        arr = np.atleast_2d(np.asarray(value, dtype=np.float64)).astype("<f4")
        blob = np.ascontiguousarray(arr).tobytes()
        entries.append((name, arr.shape[0], arr.shape[1], offset))
        blobs.append(blob)
        offset += len(blob)
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC} {len(entries)}\n".encode("ascii"))
        for name, rows, cols, off in entries:
            fh.write(f"{name} {rows} {cols} {off}\n".encode("ascii"))
        fh.write(b"end\n")
        for blob in blobs:
            fh.write(blob)


def load_tensors(path) -> dict[str, np.ndarray]:
    """Read a container back into an ordered name -> (rows, cols) float32 dict."""
    with open(path, "rb") as fh:
        raw = fh.read()
    end_mark = raw.find(b"end\n")
    if end_mark < 0:
        raise FormatError(f"{path}: manifest terminator not found")
    manifest = raw[:end_mark].decode("ascii").splitlines()
    payload = raw[end_mark + 4:]
    if not manifest or not manifest[0].startswith(MAGIC + " "):
        raise FormatError(f"{path}: bad container magic")
    count = int(manifest[0].split()[1])
    if len(manifest) != count + 1:
        raise FormatError(f"{path}: manifest lists {len(manifest) - 1} tensors, header says {count}")
    tensors: dict[str, np.ndarray] = {}
    for line in manifest[1:]:
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"{path}: malformed manifest line {line!r}")
        name, rows, cols, off = parts[0], int(parts[1]), int(parts[2]), int(parts[3])
        nbytes = rows * cols * 4
        blob = payload[off:off + nbytes]
        if len(blob) != nbytes:
            raise FormatError(f"{path}: payload truncated for tensor {name!r}")
        tensors[name] = np.frombuffer(blob, dtype="<f4").reshape(rows, cols).copy()
    return tensors


def save_head(path, head: CalibrationHead, anchors: AnchorSet | None = None) -> None:
    """Persist a head (and optionally its anchor set) as one container."""
    tensors = {
        "W": head.W, "S": head.S, "beta": head.beta,
        "U": head.U, "c": head.c, "V": head.V,
    }
    if anchors is not None:
        tensors["anchors"] = anchors.anchors
        tensors["eps_ball"] = np.array([[anchors.eps_ball]])
    save_tensors(path, tensors)


def load_head(path) -> tuple[CalibrationHead, AnchorSet | None]:
    """Load a head checkpoint; returns anchors when the file has them."""
    tensors = load_tensors(path)
    try:
        head = CalibrationHead(
            W=tensors["W"].astype(np.float64),
            S=tensors["S"].astype(np.float64),
            beta=tensors["beta"].astype(np.float64).ravel(),
            U=tensors["U"].astype(np.float64),
            c=tensors["c"].astype(np.float64).ravel(),
            V=tensors["V"].astype(np.float64),
        )
    except KeyError as exc:
        raise FormatError(f"{path}: missing head tensor {exc}") from exc
    anchors = None
    if "anchors" in tensors:
        eps = float(tensors["eps_ball"][0, 0]) if "eps_ball" in tensors else 1e-5
        # float32 rounding can push a stored norm a hair past the limit
        anchors = retract_raw(tensors["anchors"].astype(np.float64), eps)
    return head, anchors

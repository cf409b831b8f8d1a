"""Labeled embedding datasets: binary file I/O, k-shot splits, and a
narrow-cone synthetic generator.

The on-disk format is deliberately minimal so that any producer can emit
it without dependencies:

* Embeddings (``.emb``): bytes 0-3 magic ``EMB1``; bytes 4-7 row count n
  (uint32 LE); bytes 8-11 dimension d (uint32 LE); bytes 12-15 reserved,
  zero; then n*d IEEE-754 float32 LE values, row-major.
* Labels (``.csv``): leading comment lines ``#map,<fine>,<coarse>``
  declaring the fine-to-coarse hierarchy, then a header line
  ``index,fine,coarse``, then one row per embedding row, in order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConsistencyError, FormatError, InsufficientDataError, LabelError

EMB1_MAGIC = b"EMB1"
EMB1_HEADER_BYTES = 16


def validate_embeddings(values: np.ndarray) -> np.ndarray:
    """Check an (n, d) embedding matrix: 2-D, n,d >= 1, all finite."""
    values = np.asarray(values)
    if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
        raise ValueError(f"embeddings must be a non-empty 2-D matrix, got shape {values.shape}")
    if not np.isfinite(values).all():
        raise ValueError("embeddings contain NaN or Inf")
    return values


@dataclass(frozen=True)
class LabeledDataset:
    """Embeddings plus a fine label, a coarse label, and the hierarchy map.

    ``fine_to_coarse[f]`` gives the coarse class of fine class ``f``; every
    row must satisfy ``coarse_labels[j] == fine_to_coarse[fine_labels[j]]``.
    """

    embeddings: np.ndarray       # (n, d) float32
    fine_labels: np.ndarray      # (n,) int
    coarse_labels: np.ndarray    # (n,) int
    fine_to_coarse: np.ndarray   # (F,) int, onto [0, C)

    def __post_init__(self):
        validate_embeddings(self.embeddings)
        n = self.embeddings.shape[0]
        if self.fine_labels.shape != (n,) or self.coarse_labels.shape != (n,):
            raise ConsistencyError("label arrays must have one entry per embedding row")
        f_count = self.num_fine
        if f_count < 1 or self.fine_to_coarse.min() < 0:
            raise LabelError("fine_to_coarse must be a non-empty map into [0, C)")
        c_count = self.num_coarse
        if f_count < c_count:
            raise LabelError(f"need F >= C >= 1, got F={f_count}, C={c_count}")
        if len(set(range(c_count)) - set(self.fine_to_coarse.tolist())) > 0:
            raise LabelError("fine_to_coarse must map onto every coarse class")
        if self.fine_labels.min() < 0 or self.fine_labels.max() >= f_count:
            raise LabelError("fine label outside [0, F)")
        if not np.array_equal(self.coarse_labels, self.fine_to_coarse[self.fine_labels]):
            bad = int(np.argmax(self.coarse_labels != self.fine_to_coarse[self.fine_labels]))
            raise LabelError(f"row {bad}: coarse label contradicts fine_to_coarse map")

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]

    @property
    def d(self) -> int:
        return self.embeddings.shape[1]

    @property
    def num_fine(self) -> int:
        return int(self.fine_to_coarse.shape[0])

    @property
    def num_coarse(self) -> int:
        return int(self.fine_to_coarse.max()) + 1

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        """New dataset restricted to the given row indices (order kept)."""
        return replace(
            self,
            embeddings=self.embeddings[indices],
            fine_labels=self.fine_labels[indices],
            coarse_labels=self.coarse_labels[indices],
        )


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the narrow-cone generator.

    Every sample is ``a * mu + coarse_center + fine_offset + eps`` where
    ``mu`` is a shared unit axis, ``a`` is a positive magnitude near
    ``cone_axis_scale``, the class offsets are orthogonal to ``mu`` with
    norms ``coarse_sep`` / ``fine_sep``, and ``eps`` is isotropic noise
    whose expected vector norm is ``cone_noise``.
    """

    d: int = 64
    C: int = 3
    F: int = 6
    per_class: int = 100
    cone_axis_scale: float = 10.0
    cone_noise: float = 0.8
    coarse_sep: float = 1.6
    fine_sep: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.d < 1 or self.C < 1 or self.per_class < 1:
            raise ValueError("d, C, per_class must be >= 1")
        if self.F % self.C != 0:
            raise ValueError(f"F ({self.F}) must be a multiple of C ({self.C})")
        if self.cone_noise < 0:
            raise ValueError("cone_noise must be >= 0")


def save_dataset(dataset: LabeledDataset, embeddings_path, labels_path) -> None:
    """Write a dataset as an EMB1 file plus a labels CSV.

    The float payload is stored as float32; loading the pair back
    reproduces the float32 payload bit-exactly.
    """
    values = np.ascontiguousarray(dataset.embeddings, dtype=np.float32)
    n, d = values.shape
    with open(embeddings_path, "wb") as fh:
        fh.write(EMB1_MAGIC)
        fh.write(struct.pack("<III", n, d, 0))
        fh.write(values.astype("<f4", copy=False).tobytes())
    with open(labels_path, "w", encoding="ascii", newline="\n") as fh:
        for f, c in enumerate(dataset.fine_to_coarse.tolist()):
            fh.write(f"#map,{f},{c}\n")
        fh.write("index,fine,coarse\n")
        for i in range(n):
            fh.write(f"{i},{dataset.fine_labels[i]},{dataset.coarse_labels[i]}\n")


def load_embeddings(path) -> np.ndarray:
    """Read an EMB1 file into an (n, d) float32 matrix."""
    with open(path, "rb") as fh:
        header = fh.read(EMB1_HEADER_BYTES)
        if len(header) < EMB1_HEADER_BYTES or header[:4] != EMB1_MAGIC:
            raise FormatError(f"{path}: not an EMB1 file (bad magic or truncated header)")
        n, d, reserved = struct.unpack("<III", header[4:])
        if reserved != 0:
            raise FormatError(f"{path}: reserved header field must be zero")
        if n < 1 or d < 1:
            raise FormatError(f"{path}: invalid shape {n}x{d}")
        payload = fh.read(4 * n * d)
        if len(payload) != 4 * n * d:
            raise FormatError(f"{path}: truncated payload, expected {4*n*d} bytes")
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    values = np.frombuffer(payload, dtype="<f4").reshape(n, d)
    if not np.isfinite(values).all():
        raise ValueError(f"{path}: payload contains NaN or Inf")
    return np.array(values)  # writable copy


def load_dataset(embeddings_path, labels_path) -> LabeledDataset:
    """Load an EMB1 file + labels CSV pair, checking all invariants."""
    values = load_embeddings(embeddings_path)
    n = values.shape[0]
    mapping: dict[int, int] = {}
    fine, coarse = [], []
    with open(labels_path, "r", encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    i = 0
    while i < len(lines) and lines[i].startswith("#map,"):
        parts = lines[i].split(",")
        if len(parts) != 3:
            raise FormatError(f"{labels_path}: malformed map line {lines[i]!r}")
        f, c = int(parts[1]), int(parts[2])
        if f in mapping:
            raise FormatError(f"{labels_path}: fine class {f} mapped twice")
        mapping[f] = c
        i += 1
    if not mapping:
        raise FormatError(f"{labels_path}: missing #map header block")
    if i >= len(lines) or lines[i] != "index,fine,coarse":
        raise FormatError(f"{labels_path}: expected header 'index,fine,coarse'")
    f_count = len(mapping)
    if sorted(mapping) != list(range(f_count)):
        raise FormatError(f"{labels_path}: map must cover fine classes 0..{f_count-1} exactly once")
    for row in lines[i + 1:]:
        parts = row.split(",")
        if len(parts) != 3:
            raise FormatError(f"{labels_path}: malformed row {row!r}")
        idx, f, c = (int(p) for p in parts)
        if idx != len(fine):
            raise FormatError(f"{labels_path}: rows must be in index order, got {idx}")
        if f not in mapping:
            raise LabelError(f"{labels_path}: row {idx} fine label {f} outside declared range")
        if mapping[f] != c:
            raise LabelError(f"{labels_path}: row {idx} coarse label {c} contradicts map ({mapping[f]})")
        fine.append(f)
        coarse.append(c)
    if len(fine) != n:
        raise ConsistencyError(
            f"row count mismatch: {n} embedding rows vs {len(fine)} label rows")
    fine_to_coarse = np.array([mapping[f] for f in range(f_count)], dtype=np.int64)
    return LabeledDataset(
        embeddings=values,
        fine_labels=np.array(fine, dtype=np.int64),
        coarse_labels=np.array(coarse, dtype=np.int64),
        fine_to_coarse=fine_to_coarse,
    )


def sample_k_shot(dataset: LabeledDataset, k: int, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Split off exactly k training examples per fine class, uniformly
    without replacement; everything else becomes the holdout.

    Raises InsufficientDataError if any class has fewer than k+1 examples
    (at least one must remain for the holdout). Identical seeds give
    identical splits.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    train_idx: list[np.ndarray] = []
    for f in range(dataset.num_fine):
        rows = np.flatnonzero(dataset.fine_labels == f)
        if rows.size < k + 1:
            raise InsufficientDataError(
                f"fine class {f} has {rows.size} examples, need at least {k + 1} for a {k}-shot split")
        chosen = rng.choice(rows, size=k, replace=False)
        train_idx.append(np.sort(chosen))
    train = np.sort(np.concatenate(train_idx))
    mask = np.ones(dataset.n, dtype=bool)
    mask[train] = False
    holdout = np.flatnonzero(mask)
    return dataset.subset(train), dataset.subset(holdout)


def _unit_perp(rng: np.random.Generator, mu: np.ndarray) -> np.ndarray:
    """Random unit vector orthogonal to mu."""
    v = rng.standard_normal(mu.shape[0])
    v -= (v @ mu) * mu
    norm = np.linalg.norm(v)
    if norm < 1e-12:  # astronomically unlikely; redraw deterministically
        return _unit_perp(rng, mu)
    return v / norm


def generate_narrow_cone(config: SyntheticConfig) -> LabeledDataset:
    """Generate an anisotropic dataset whose rows cluster around one axis.

    The geometry mimics the degenerate output spaces measured on deep
    encoders: a single dominant direction carries most of the spectrum
    mass and mean pairwise cosine similarity is high. Fine classes are
    split evenly across coarse classes. Deterministic in ``config.seed``.
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    mu = rng.standard_normal(cfg.d)
    mu /= np.linalg.norm(mu)
    coarse_dirs = np.stack([_unit_perp(rng, mu) for _ in range(cfg.C)])
    fine_dirs = np.stack([_unit_perp(rng, mu) for _ in range(cfg.F)])
    per_coarse = cfg.F // cfg.C
    fine_to_coarse = np.arange(cfg.F, dtype=np.int64) // per_coarse

    n = cfg.F * cfg.per_class
    # magnitude along the axis: positive, centred on cone_axis_scale
    a = cfg.cone_axis_scale * np.exp(0.1 * rng.standard_normal(n))
    # isotropic noise with expected vector norm ~ cone_noise
    eps = (cfg.cone_noise / np.sqrt(cfg.d)) * rng.standard_normal((n, cfg.d))

    rows = a[:, None] * mu[None, :] + eps
    fine_labels = np.repeat(np.arange(cfg.F, dtype=np.int64), cfg.per_class)
    rows += cfg.coarse_sep * coarse_dirs[fine_to_coarse[fine_labels]]
    rows += cfg.fine_sep * fine_dirs[fine_labels]

    return LabeledDataset(
        embeddings=rows.astype(np.float32),
        fine_labels=fine_labels,
        coarse_labels=fine_to_coarse[fine_labels],
        fine_to_coarse=fine_to_coarse,
    )

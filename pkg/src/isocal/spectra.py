"""Spectrum diagnostics for embedding matrices.

Quantifies how concentrated a set of row vectors is: the singular-value
distribution (computed by a dependency-free one-sided Jacobi SVD), its
summary statistics, the mean pairwise cosine similarity ("token
uniformity"), PCA projections, and class-centroid similarity matrices.
A matrix trapped in a narrow cone shows one dominant singular value,
a heavily skewed spectrum, and token uniformity near 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset, validate_embeddings

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60


def _jacobi_svd(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-sided Jacobi SVD of a tall matrix (m >= n).

    Rotates column pairs until every pair is orthogonal to relative
    tolerance JACOBI_TOL (capped at JACOBI_MAX_SWEEPS sweeps). Returns
    (u, s, v) with a ~= u @ diag(s) @ v.T, s descending.
    """
    m, n = a.shape
    work = np.array(a, dtype=np.float64)
    v = np.eye(n)
    for _ in range(JACOBI_MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                cp = work[:, p]
                cq = work[:, q]
                app = cp @ cp
                aqq = cq @ cq
                apq = cp @ cq
                if apq * apq <= JACOBI_TOL * JACOBI_TOL * app * aqq:
                    continue
                rotated = True
                theta = 0.5 * np.arctan2(2.0 * apq, app - aqq)
                c, s = np.cos(theta), np.sin(theta)
                new_p = c * cp + s * cq
                new_q = -s * cp + c * cq
                work[:, p], work[:, q] = new_p, new_q
                vp = v[:, p].copy()
                v[:, p] = c * vp + s * v[:, q]
                v[:, q] = -s * vp + c * v[:, q]
        if not rotated:
            break
    sigma = np.linalg.norm(work, axis=0)
    order = np.argsort(sigma)[::-1]
    sigma = sigma[order]
    work = work[:, order]
    v = v[:, order]
    u = np.zeros((m, n))
    nonzero = sigma > 0
    u[:, nonzero] = work[:, nonzero] / sigma[nonzero]
    return u, sigma, v


def svd_factors(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD (u, s, v) with singular values descending.

    Wide matrices are handled by factoring the transpose, so s always has
    min(n, d) entries and m ~= u @ diag(s) @ v.T.
    """
    m = validate_embeddings(m).astype(np.float64)
    if m.shape[0] >= m.shape[1]:
        return _jacobi_svd(m)
    ut, s, vt = _jacobi_svd(m.T)
    return vt, s, ut


def svd_values(m: np.ndarray) -> np.ndarray:
    """The min(n, d) singular values of the matrix, descending, each >= 0."""
    return svd_factors(m)[1]


def token_uniformity(m: np.ndarray) -> float:
    """Mean cosine similarity over all unordered row pairs (i < j)."""
    m = validate_embeddings(m).astype(np.float64)
    n = m.shape[0]
    if n < 2:
        raise ValueError("token uniformity needs at least 2 rows")
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0):
        raise ValueError("token uniformity is undefined for zero rows")
    unit = m / norms[:, None]
    gram_sum = float(np.sum(unit @ unit.T))
    # subtract the diagonal (each exactly 1 after normalization up to fp)
    diag_sum = float(np.sum(np.einsum("ij,ij->i", unit, unit)))
    return (gram_sum - diag_sum) / (n * (n - 1))


@dataclass(frozen=True)
class SpectrumReport:
    """Singular-value spectrum statistics of an embedding matrix.

    ``normalized_values`` are the raw singular values divided by their
    sum; ``median_norm`` is the median of those. Variance and skewness
    (Fisher-Pearson, population moments) are computed on the raw values,
    where the anisotropy shows up at full magnitude.
    """

    singular_values: np.ndarray
    normalized_values: np.ndarray
    median_norm: float
    variance_raw: float
    skewness_raw: float
    token_uniformity: float

    def as_dict(self) -> dict[str, float]:
        return {
            "median_norm": self.median_norm,
            "variance_raw": self.variance_raw,
            "skewness_raw": self.skewness_raw,
            "token_uniformity": self.token_uniformity,
            "top_normalized_sv": float(self.normalized_values[0]),
        }


def _population_skewness(values: np.ndarray) -> float:
    centered = values - values.mean()
    m2 = float(np.mean(centered**2))
    if m2 < 1e-18:  # equal spectrum: define skewness as 0
        return 0.0
    m3 = float(np.mean(centered**3))
    return m3 / m2**1.5


def spectrum_stats(m: np.ndarray) -> SpectrumReport:
    """Assemble a SpectrumReport from svd_values and token_uniformity."""
    values = svd_values(m)
    total = float(values.sum())
    normalized = values / total
    return SpectrumReport(
        singular_values=values,
        normalized_values=normalized,
        median_norm=float(np.median(normalized)),
        variance_raw=float(np.mean((values - values.mean()) ** 2)),
        skewness_raw=_population_skewness(values),
        token_uniformity=token_uniformity(m),
    )


def pca_project(m: np.ndarray, components: int = 2) -> np.ndarray:
    """Center rows and project onto the top right singular vectors.

    Output column variances are nonincreasing. Raises if components
    exceeds min(n, d) or the row count.
    """
    m = validate_embeddings(m).astype(np.float64)
    n, d = m.shape
    if components < 1 or components > min(n, d):
        raise ValueError(f"components must be in [1, {min(n, d)}], got {components}")
    centered = m - m.mean(axis=0)
    _, _, v = svd_factors(centered)
    return centered @ v[:, :components]


def class_similarity(dataset: LabeledDataset, representations: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of fine-class centroids.

    Centroid f is the mean of the representation rows whose fine label is
    f. Returns an F x F symmetric matrix with unit diagonal.
    """
    reps = validate_embeddings(representations).astype(np.float64)
    if reps.shape[0] != dataset.n:
        raise ValueError("representations row count must match the dataset")
    f_count = dataset.num_fine
    centroids = np.zeros((f_count, reps.shape[1]))
    for f in range(f_count):
        rows = dataset.fine_labels == f
        if not rows.any():
            raise ValueError(f"fine class {f} has no examples")
        centroids[f] = reps[rows].mean(axis=0)
    norms = np.linalg.norm(centroids, axis=1)
    if np.any(norms == 0):
        raise ValueError("a class centroid is the zero vector")
    unit = centroids / norms[:, None]
    sim = unit @ unit.T
    sim = 0.5 * (sim + sim.T)
    np.fill_diagonal(sim, 1.0)
    return sim


def block_similarity_gap(sim: np.ndarray, fine_to_coarse: np.ndarray) -> tuple[float, float]:
    """(mean within-coarse, mean cross-coarse) off-diagonal similarity."""
    f_count = sim.shape[0]
    within, cross = [], []
    for i in range(f_count):
        for j in range(i + 1, f_count):
            if fine_to_coarse[i] == fine_to_coarse[j]:
                within.append(sim[i, j])
            else:
                cross.append(sim[i, j])
    return float(np.mean(within)), float(np.mean(cross))

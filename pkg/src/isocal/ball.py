"""Poincare-ball geometry and the coarse-class anchor loss.

Anchors are learnable points strictly inside the unit ball, one per
coarse class. A sample representation is attracted to the anchor of its
own coarse class and repelled from the others through a softmax over
negated distances. Distances blow up near the ball boundary, which is
what lets the geometry encode a coarse-to-fine hierarchy; a plain
Euclidean variant is kept for comparison.

Gradients are Euclidean gradients of the closed-form distance (no
Riemannian rescaling); the arcosh argument is clamped away from 1 so
they stay finite when points coincide.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LabelError

DEFAULT_EPS_BALL = 1e-5
_ACOSH_GRAD_CLAMP = 1.0 + 1e-12
_EUCLID_NORM_FLOOR = 1e-12


def project_to_ball(v: np.ndarray, eps_ball: float = DEFAULT_EPS_BALL) -> np.ndarray:
    """Radially clip a vector to norm at most 1 - eps_ball."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    limit = 1.0 - eps_ball
    if norm <= limit:
        return v.copy()
    return v * (limit / norm)


@dataclass(frozen=True)
class AnchorSet:
    """One learnable anchor per coarse class, all inside the unit ball."""

    anchors: np.ndarray          # (C, d)
    eps_ball: float = DEFAULT_EPS_BALL

    def __post_init__(self):
        a = self.anchors
        if a.ndim != 2 or a.shape[0] < 1:
            raise ValueError(f"anchors must be a (C, d) matrix, got shape {a.shape}")
        if not np.isfinite(a).all():
            raise ValueError("anchors contain NaN or Inf")
        norms = np.linalg.norm(a, axis=1)
        if np.any(norms > 1.0 - self.eps_ball + 1e-15):
            raise ValueError("anchor outside the shrunken unit ball")

    @property
    def C(self) -> int:
        return self.anchors.shape[0]

    @property
    def d(self) -> int:
        return self.anchors.shape[1]


def init_anchors(C: int, d: int, rng: np.random.Generator,
                 sigma: float = 1e-3, eps_ball: float = DEFAULT_EPS_BALL) -> AnchorSet:
    """Gaussian anchors near the origin (distances start near-Euclidean)."""
    raw = sigma * rng.standard_normal((C, d))
    return retract_raw(raw, eps_ball)


def retract_raw(raw: np.ndarray, eps_ball: float = DEFAULT_EPS_BALL) -> AnchorSet:
    """Build an AnchorSet from arbitrary finite rows, projecting each into the ball."""
    raw = np.asarray(raw, dtype=np.float64)
    limit = 1.0 - eps_ball
    norms = np.linalg.norm(raw, axis=1)
    scale = np.where(norms > limit, limit / np.maximum(norms, _EUCLID_NORM_FLOOR), 1.0)
    return AnchorSet(anchors=raw * scale[:, None], eps_ball=eps_ball)


def retract_anchors(anchors: AnchorSet) -> AnchorSet:
    """Project every anchor back inside the ball (idempotent)."""
    return retract_raw(anchors.anchors, anchors.eps_ball)


def poincare_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Hyperbolic distance between two points strictly inside the unit ball."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu2 = float(u @ u)
    nv2 = float(v @ v)
    if nu2 >= 1.0 or nv2 >= 1.0:
        raise ValueError("poincare_distance requires points with norm < 1")
    diff = u - v
    arg = 1.0 + 2.0 * float(diff @ diff) / ((1.0 - nu2) * (1.0 - nv2))
    return float(np.arccosh(max(arg, 1.0)))


def _distances_and_backward(anchors: AnchorSet, points: np.ndarray, kind: str):
    """Distance matrix (B, C) plus a closure mapping d-gradients back to
    gradients w.r.t. the raw points and the anchors."""
    z = anchors.anchors
    if kind == "hyperbolic":
        limit = 1.0 - anchors.eps_ball
        norms = np.linalg.norm(points, axis=1)
        scale = np.where(norms > limit, limit / np.maximum(norms, _EUCLID_NORM_FLOOR), 1.0)
        h = points * scale[:, None]
        a = 1.0 - np.einsum("ij,ij->i", h, h)          # (B,)
        b = 1.0 - np.einsum("ij,ij->i", z, z)          # (C,)
        diff = h[:, None, :] - z[None, :, :]           # (B, C, d)
        nsq = np.einsum("bcd,bcd->bc", diff, diff)     # (B, C)
        denom = a[:, None] * b[None, :]
        gamma = 1.0 + 2.0 * nsq / denom
        dist = np.arccosh(np.maximum(gamma, 1.0))

        def backward(d_dist: np.ndarray):
            dgamma = d_dist / np.sqrt(np.maximum(gamma, _ACOSH_GRAD_CLAMP) ** 2 - 1.0)
            coef = 4.0 * dgamma / denom                # (B, C)
            grad_h = np.einsum("bc,bcd->bd", coef, diff) \
                + (np.sum(coef * nsq, axis=1) / a)[:, None] * h
            grad_z = -np.einsum("bc,bcd->cd", coef, diff) \
                + (np.sum(coef * nsq, axis=0) / b)[:, None] * z
            # chain through the radial projection where it was active
            clipped = norms > limit
            if np.any(clipped):
                unit = points[clipped] / norms[clipped, None]
                g = grad_h[clipped]
                radial = np.einsum("ij,ij->i", g, unit)
                grad_h[clipped] = scale[clipped, None] * (g - radial[:, None] * unit)
            return grad_h, grad_z

        return dist, backward

    if kind == "euclidean":
        diff = points[:, None, :] - z[None, :, :]
        dist = np.sqrt(np.einsum("bcd,bcd->bc", diff, diff))

        def backward(d_dist: np.ndarray):
            coef = d_dist / np.maximum(dist, _EUCLID_NORM_FLOOR)
            grad_h = np.einsum("bc,bcd->bd", coef, diff)
            grad_z = -np.einsum("bc,bcd->cd", coef, diff)
            return grad_h, grad_z

        return dist, backward

    raise ValueError(f"unknown distance_kind {kind!r}")


def metric_loss_batch(anchors: AnchorSet, points: np.ndarray, coarse: np.ndarray,
                      distance_kind: str = "hyperbolic",
                      with_grad: bool = False):
    """Mean anchor-softmax loss over a batch of representations.

    Each row pays -log softmax(-d(h, z_.))[coarse]. Representations are
    radially projected into the ball before hyperbolic distances. With
    ``with_grad``, also returns the gradient of the mean loss w.r.t. the
    raw (unprojected) points and the anchors.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[None, :]
    coarse = np.atleast_1d(np.asarray(coarse))
    if not np.isfinite(points).all():
        raise ValueError("non-finite representation")
    if coarse.min() < 0 or coarse.max() >= anchors.C:
        raise LabelError(f"coarse label outside [0, {anchors.C})")
    n = points.shape[0]
    dist, backward = _distances_and_backward(anchors, points, distance_kind)
    neg = -dist
    peak = neg.max(axis=1, keepdims=True)
    lse = peak[:, 0] + np.log(np.sum(np.exp(neg - peak), axis=1))
    losses = dist[np.arange(n), coarse] + lse
    loss = float(losses.mean())
    if not with_grad:
        return loss
    q = np.exp(neg - lse[:, None])                 # softmax(-d), rows sum to 1
    d_dist = -q
    d_dist[np.arange(n), coarse] += 1.0
    d_dist /= n
    grad_points, grad_anchors = backward(d_dist)
    return loss, grad_points, grad_anchors


def metric_loss(anchors: AnchorSet, h: np.ndarray, coarse: int,
                distance_kind: str = "hyperbolic") -> float:
    """Anchor-softmax loss for a single representation; exactly 0 when C == 1."""
    return metric_loss_batch(anchors, h, np.array([coarse]), distance_kind)


def metric_grad(anchors: AnchorSet, h: np.ndarray, coarse: int,
                distance_kind: str = "hyperbolic") -> tuple[np.ndarray, np.ndarray]:
    """Exact gradient of metric_loss w.r.t. h and every anchor."""
    _, grad_h, grad_z = metric_loss_batch(
        anchors, h, np.array([coarse]), distance_kind, with_grad=True)
    return grad_h[0], grad_z

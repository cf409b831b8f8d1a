"""The calibration head: rotation and scaling transforms with their
regularizers, per-dimension decoders, and a linear verbalizer classifier.

An input x is scored against K learned directions two ways: a relevance
distribution softmax(W x) from the rotation matrix, and a ratio
distribution softmax(S x + beta) from the scaling matrix. The elementwise
product of the two feeds K rank-one decoders whose sum (plus a shared
bias) is the calibrated output h; a label-embedding matrix V turns h into
fine-class probabilities.

Two data-independent penalties keep the transform spread out: the
rotation rows are pushed toward an orthonormal system through
``||W^T W - I||_F^2`` and each scaling row toward unit norm through
``sum_k (||S_k||^2 - 1)^2``. All gradients here are hand-derived and
checked against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .ball import AnchorSet, metric_loss_batch
from .errors import LabelError

INIT_SCHEMES = ("gaussian", "xavier", "eye", "orthogonal")
GAUSSIAN_INIT_STD = 0.02


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax (max-subtraction)."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


@dataclass(frozen=True)
class CalibrationHead:
    """Learnable parameters of the calibration transform.

    Shapes: W, S, U are (K, d); beta is (K,); c is (d,); V is (F, d).
    K >= 2 is required -- with a single direction both score vectors are
    the constant 1 and the calibrated output no longer depends on x.
    """

    W: np.ndarray
    S: np.ndarray
    beta: np.ndarray
    U: np.ndarray
    c: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        K, d = self.W.shape
        if K < 2:
            raise ValueError("K must be >= 2 (K=1 makes the calibrated output constant)")
        if self.S.shape != (K, d) or self.U.shape != (K, d):
            raise ValueError("W, S, U must share the (K, d) shape")
        if self.beta.shape != (K,) or self.c.shape != (d,):
            raise ValueError("beta must be (K,) and c must be (d,)")
        if self.V.ndim != 2 or self.V.shape[1] != d:
            raise ValueError("V must be (F, d)")
        for name in ("W", "S", "beta", "U", "c", "V"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"parameter {name} contains NaN or Inf")

    @property
    def K(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @property
    def F(self) -> int:
        return self.V.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "S": self.S, "beta": self.beta,
                "U": self.U, "c": self.c, "V": self.V}

    def with_params(self, **tensors: np.ndarray) -> "CalibrationHead":
        return replace(self, **tensors)


def init_head(d: int, K: int, F: int, scheme: str = "gaussian",
              rng: np.random.Generator | None = None) -> CalibrationHead:
    """Fresh head with W and S drawn per the chosen scheme.

    Gaussian (std 0.02) is the default; xavier, eye, and orthogonal are
    alternatives for comparison. Decoders and the verbalizer always start
    Gaussian; biases start at zero.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}, expected one of {INIT_SCHEMES}")

    def draw() -> np.ndarray:
        if scheme == "gaussian":
            return GAUSSIAN_INIT_STD * rng.standard_normal((K, d))
        if scheme == "xavier":
            limit = np.sqrt(6.0 / (K + d))
            return rng.uniform(-limit, limit, size=(K, d))
        if scheme == "eye":
            return np.eye(K, d)
        # orthogonal: orthonormal rows if K <= d, orthonormal columns otherwise
        if K <= d:
            q, _ = np.linalg.qr(rng.standard_normal((d, K)))
            return q.T
        q, _ = np.linalg.qr(rng.standard_normal((K, d)))
        return q

    return CalibrationHead(
        W=draw(),
        S=draw(),
        beta=np.zeros(K),
        U=GAUSSIAN_INIT_STD * rng.standard_normal((K, d)),
        c=np.zeros(d),
        V=GAUSSIAN_INIT_STD * rng.standard_normal((F, d)),
    )


def _check_vector(x: np.ndarray, d: int, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (d,):
        raise ValueError(f"{name} must have shape ({d},), got {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError(f"{name} contains NaN or Inf")
    return x


def relevance(head: CalibrationHead, x: np.ndarray) -> np.ndarray:
    """softmax over k of <x, W_k>: how much each direction matters for x."""
    x = _check_vector(x, head.d)
    return softmax(head.W @ x)


def ratio(head: CalibrationHead, x: np.ndarray) -> np.ndarray:
    """softmax over k of S_k . x + beta_k: mass balance across directions."""
    x = _check_vector(x, head.d)
    return softmax(head.S @ x + head.beta)


def calibrate(head: CalibrationHead, x: np.ndarray) -> np.ndarray:
    """Calibrated output h = sum_k (relevance_k * ratio_k) U_k + c."""
    x = _check_vector(x, head.d)
    scores = relevance(head, x) * ratio(head, x)
    return head.U.T @ scores + head.c


def calibrate_batch(head: CalibrationHead, X: np.ndarray) -> np.ndarray:
    """Vectorized calibrate over the rows of X (n, d) -> (n, d)."""
    X = np.asarray(X, dtype=np.float64)
    H = softmax(X @ head.W.T, axis=1)
    R = softmax(X @ head.S.T + head.beta, axis=1)
    return (H * R) @ head.U + head.c


def classify(head: CalibrationHead, h: np.ndarray) -> np.ndarray:
    """Fine-class probabilities softmax over f of <h, V_f>."""
    h = _check_vector(h, head.d, "h")
    return softmax(head.V @ h)


def orth_loss(head: CalibrationHead) -> float:
    """||W^T W - I_d||_F^2; zero iff the rows of W form an orthonormal basis."""
    gram = head.W.T @ head.W - np.eye(head.d)
    return float(np.sum(gram * gram))


def ratio_loss(head: CalibrationHead) -> float:
    """sum_k (||S_k||^2 - 1)^2; zero iff every scaling row has unit norm."""
    sq = np.einsum("kd,kd->k", head.S, head.S)
    return float(np.sum((sq - 1.0) ** 2))


def dis_loss(head: CalibrationHead) -> float:
    """Distinguishability penalty: orth_loss + ratio_loss."""
    return orth_loss(head) + ratio_loss(head)


def cls_loss(head: CalibrationHead, x: np.ndarray, y: int) -> float:
    """Cross-entropy -log p_y of the verbalizer on the calibrated output."""
    if not 0 <= y < head.F:
        raise LabelError(f"fine label {y} outside [0, {head.F})")
    h = calibrate(head, x)
    return float(-log_softmax(head.V @ h)[y])


def orth_grad(head: CalibrationHead) -> np.ndarray:
    """d orth_loss / dW = 4 W (W^T W - I)."""
    return 4.0 * head.W @ (head.W.T @ head.W - np.eye(head.d))


def ratio_grad(head: CalibrationHead) -> np.ndarray:
    """d ratio_loss / dS = 4 (||S_k||^2 - 1) S_k, rowwise."""
    sq = np.einsum("kd,kd->k", head.S, head.S)
    return 4.0 * (sq - 1.0)[:, None] * head.S


@dataclass(frozen=True)
class TermWeights:
    """Multipliers on the loss terms; a zero weight disables the term."""

    cls: float = 1.0
    orth: float = 0.0
    ratio: float = 0.0
    metric: float = 0.0


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term loss values; total is the weighted sum of active terms."""

    cls: float = 0.0
    orth: float = 0.0
    ratio: float = 0.0
    metric: float = 0.0
    total: float = 0.0
    active_terms: frozenset[str] = field(default_factory=frozenset)


@dataclass
class HeadGradients:
    """Gradient tensors shaped like CalibrationHead (+anchors when used)."""

    W: np.ndarray
    S: np.ndarray
    beta: np.ndarray
    U: np.ndarray
    c: np.ndarray
    V: np.ndarray
    anchors: np.ndarray | None = None


def _softmax_backward(probs: np.ndarray, d_probs: np.ndarray) -> np.ndarray:
    """Gradient through row softmax: dlogits from dprobs."""
    inner = np.sum(d_probs * probs, axis=1, keepdims=True)
    return probs * (d_probs - inner)


def grad_all(head: CalibrationHead, X: np.ndarray, y: np.ndarray,
             weights: TermWeights,
             anchors: AnchorSet | None = None,
             coarse: np.ndarray | None = None,
             distance_kind: str = "hyperbolic") -> tuple[LossBreakdown, HeadGradients]:
    """Loss values and exact analytic gradients of the weighted objective.

    Data-dependent terms (cls, metric) are averaged over the batch; the
    orthogonality and scaling penalties are functions of the parameters
    alone. The metric term requires anchors and coarse labels.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("batch must be a non-empty (n, d) matrix")
    y = np.asarray(y)
    n = X.shape[0]

    # shared forward pass
    A = X @ head.W.T                       # (n, K) relevance logits
    H = softmax(A, axis=1)
    B = X @ head.S.T + head.beta           # (n, K) ratio logits
    R = softmax(B, axis=1)
    G = H * R
    Hout = G @ head.U + head.c             # (n, d) calibrated outputs

    active: set[str] = set()
    terms = {"cls": 0.0, "orth": 0.0, "ratio": 0.0, "metric": 0.0}
    grads = HeadGradients(
        W=np.zeros_like(head.W), S=np.zeros_like(head.S),
        beta=np.zeros_like(head.beta), U=np.zeros_like(head.U),
        c=np.zeros_like(head.c), V=np.zeros_like(head.V))

    d_hout = np.zeros_like(Hout)

    if weights.cls != 0.0:
        active.add("cls")
        if y.shape != (n,):
            raise ValueError("need one fine label per batch row")
        if y.min() < 0 or y.max() >= head.F:
            raise LabelError(f"fine label outside [0, {head.F})")
        Z = Hout @ head.V.T
        logp = log_softmax(Z, axis=1)
        terms["cls"] = float(-logp[np.arange(n), y].mean())
        dZ = np.exp(logp)
        dZ[np.arange(n), y] -= 1.0
        dZ *= weights.cls / n
        grads.V += dZ.T @ Hout
        d_hout += dZ @ head.V

    if weights.metric != 0.0:
        active.add("metric")
        if anchors is None or coarse is None:
            raise ValueError("metric term requires anchors and coarse labels")
        m_loss, m_grad_h, m_grad_z = metric_loss_batch(
            anchors, Hout, coarse, distance_kind, with_grad=True)
        terms["metric"] = m_loss
        d_hout += weights.metric * m_grad_h
        grads.anchors = weights.metric * m_grad_z

    # backprop the shared decoder path once for both data terms
    if active & {"cls", "metric"}:
        grads.U += G.T @ d_hout
        grads.c += d_hout.sum(axis=0)
        dG = d_hout @ head.U.T
        dA = _softmax_backward(H, dG * R)
        dB = _softmax_backward(R, dG * H)
        grads.W += dA.T @ X
        grads.S += dB.T @ X
        grads.beta += dB.sum(axis=0)

    if weights.orth != 0.0:
        active.add("orth")
        terms["orth"] = orth_loss(head)
        grads.W += weights.orth * orth_grad(head)

    if weights.ratio != 0.0:
        active.add("ratio")
        terms["ratio"] = ratio_loss(head)
        grads.S += weights.ratio * ratio_grad(head)

    weight_of = {"cls": weights.cls, "orth": weights.orth,
                 "ratio": weights.ratio, "metric": weights.metric}
    total = sum(weight_of[t] * terms[t] for t in sorted(active))
    breakdown = LossBreakdown(
        cls=terms["cls"], orth=terms["orth"], ratio=terms["ratio"],
        metric=terms["metric"], total=total, active_terms=frozenset(active))
    return breakdown, grads

"""Training loop, evaluation, and the loss-term ablation sweep.

Four model variants combine the loss terms: *baseline* trains only the
decoder and verbalizer on the cross-entropy (the transform stays at its
random initialization), *tara* adds the orthogonality and scaling
penalties and lets the transform learn, *tml* adds the anchor metric
loss instead, and *full* uses everything. Optimization is mini-batch
Adam; anchors are retracted into the ball after every step. Runs are
deterministic given the config (fixed shuffling and reduction order).
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .ball import AnchorSet, init_anchors, retract_raw
from .data import LabeledDataset, sample_k_shot
from .errors import TrainingError
from .head import (CalibrationHead, HeadGradients, LossBreakdown, TermWeights,
                   grad_all, init_head)
from .spectra import SpectrumReport, spectrum_stats

VARIANTS = ("baseline", "tara", "tml", "full")
DISTANCE_KINDS = ("hyperbolic", "euclidean")
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
# fixed evaluation chunk, independent of worker count, so fan-out cannot
# change floating-point results
EVAL_CHUNK = 256


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "full"
    K: int = 16
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    use_orth: bool = True
    use_ratio: bool = True
    l2_weight: float = 1e-4
    distance_kind: str = "hyperbolic"
    init_scheme: str = "gaussian"
    k_shot: int | None = None
    eps_ball: float = 1e-5
    workers: int = 1
    # exploration multipliers; the reference objective keeps them at 1
    w_cls: float = 1.0
    w_orth: float = 1.0
    w_ratio: float = 1.0
    w_metric: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.distance_kind not in DISTANCE_KINDS:
            raise ValueError(f"distance_kind must be one of {DISTANCE_KINDS}")
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("need learning_rate > 0, epochs >= 1, batch_size >= 1")
        if self.l2_weight < 0:
            raise ValueError("l2_weight must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def term_weights(self) -> TermWeights:
        dis_active = self.variant in ("tara", "full")
        return TermWeights(
            cls=self.w_cls,
            orth=self.w_orth if dis_active and self.use_orth else 0.0,
            ratio=self.w_ratio if dis_active and self.use_ratio else 0.0,
            metric=self.w_metric if self.variant in ("tml", "full") else 0.0,
        )

    def trainable(self) -> frozenset[str]:
        if self.variant == "baseline":
            return frozenset({"U", "c", "V"})
        names = {"W", "S", "beta", "U", "c", "V"}
        if self.variant in ("tml", "full"):
            names.add("anchors")
        return frozenset(names)


@dataclass
class TrainReport:
    history: list[LossBreakdown]
    final_f1: float
    final_accuracy: float
    spectrum: SpectrumReport
    wall_clock_s: float
    n_train: int
    n_holdout: int


class Adam:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, shapes: dict[str, tuple], learning_rate: float):
        self.lr = learning_rate
        self.t = 0
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1**self.t
        bc2 = 1.0 - ADAM_BETA2**self.t
        out = {}
        for name, p in params.items():
            g = grads[name]
            self.m[name] = ADAM_BETA1 * self.m[name] + (1 - ADAM_BETA1) * g
            self.v[name] = ADAM_BETA2 * self.v[name] + (1 - ADAM_BETA2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            out[name] = p - self.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        return out


def calibrate_rows(head: CalibrationHead, X: np.ndarray, workers: int = 1) -> np.ndarray:
    """Calibrated outputs for every row, chunked deterministically.

    Chunks have a fixed size regardless of ``workers``, and results are
    concatenated in chunk order, so the output is bit-identical for any
    worker count.
    """
    from .head import calibrate_batch

    X = np.asarray(X, dtype=np.float64)
    chunks = [X[i:i + EVAL_CHUNK] for i in range(0, X.shape[0], EVAL_CHUNK)]
    if workers <= 1 or len(chunks) <= 1:
        parts = [calibrate_batch(head, chunk) for chunk in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ch: calibrate_batch(head, ch), chunks))
    return np.vstack(parts)


def weighted_f1(gold: np.ndarray, pred: np.ndarray, num_classes: int) -> float:
    """Support-weighted mean of per-class F1; a class with zero
    precision+recall contributes 0."""
    gold = np.asarray(gold)
    pred = np.asarray(pred)
    total = 0.0
    n = gold.shape[0]
    for cl in range(num_classes):
        support = int(np.sum(gold == cl))
        if support == 0:
            continue
        tp = int(np.sum((gold == cl) & (pred == cl)))
        fp = int(np.sum((gold != cl) & (pred == cl)))
        fn = support - tp
        denom = 2 * tp + fp + fn
        f1 = 2 * tp / denom if denom > 0 else 0.0
        total += (support / n) * f1
    return total


def evaluate(head: CalibrationHead, dataset: LabeledDataset,
             workers: int = 1) -> tuple[float, float, np.ndarray]:
    """(weighted F1, accuracy, per-row fine predictions) on a dataset."""
    outputs = calibrate_rows(head, dataset.embeddings, workers)
    logits = outputs @ head.V.T
    pred = np.argmax(logits, axis=1)
    gold = dataset.fine_labels
    acc = float(np.mean(pred == gold))
    return weighted_f1(gold, pred, head.F), acc, pred


def _epoch_mean(breakdowns: list[LossBreakdown], weights: TermWeights) -> LossBreakdown:
    active = breakdowns[0].active_terms
    means = {t: float(np.mean([getattr(b, t) for b in breakdowns]))
             for t in ("cls", "orth", "ratio", "metric")}
    weight_of = {"cls": weights.cls, "orth": weights.orth,
                 "ratio": weights.ratio, "metric": weights.metric}
    total = sum(weight_of[t] * means[t] for t in sorted(active))
    return LossBreakdown(total=total, active_terms=active, **means)


def train(config: TrainConfig, dataset: LabeledDataset
          ) -> tuple[CalibrationHead, AnchorSet, TrainReport]:
    """Optimize a fresh head (and anchors) on the dataset.

    With ``k_shot`` set, the dataset is split per fine class and the
    holdout drives the reported F1 and spectrum; otherwise both are
    computed on the training data itself.
    """
    start = time.perf_counter()
    if config.k_shot is not None:
        train_ds, holdout = sample_k_shot(dataset, config.k_shot, config.seed)
    else:
        train_ds = holdout = dataset

    rng = np.random.default_rng(config.seed)
    head = init_head(train_ds.d, config.K, train_ds.num_fine,
                     config.init_scheme, rng)
    anchors = init_anchors(train_ds.num_coarse, train_ds.d, rng,
                           eps_ball=config.eps_ball)

    weights = config.term_weights()
    trainable = config.trainable()
    metric_active = weights.metric != 0.0
    # the transform regularizers own W and S; everything else gets l2
    l2_names = {"beta", "U", "c", "V", "anchors"} & trainable

    shapes = {name: p.shape for name, p in head.params().items() if name in trainable}
    if "anchors" in trainable:
        shapes["anchors"] = anchors.anchors.shape
    optimizer = Adam(shapes, config.learning_rate)

    X = train_ds.embeddings.astype(np.float64)
    y = train_ds.fine_labels
    coarse = train_ds.coarse_labels
    n = train_ds.n

    history: list[LossBreakdown] = []
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        step_breakdowns: list[LossBreakdown] = []
        for lo in range(0, n, config.batch_size):
            batch = perm[lo:lo + config.batch_size]
            breakdown, grads = grad_all(
                head, X[batch], y[batch], weights,
                anchors=anchors if metric_active else None,
                coarse=coarse[batch] if metric_active else None,
                distance_kind=config.distance_kind)
            step_breakdowns.append(breakdown)

            params = {name: p for name, p in head.params().items() if name in trainable}
            grad_map = {name: getattr(grads, name) for name in params}
            if "anchors" in trainable:
                params["anchors"] = anchors.anchors
                grad_map["anchors"] = (grads.anchors if grads.anchors is not None
                                       else np.zeros_like(anchors.anchors))
            if config.l2_weight > 0.0:
                for name in l2_names:
                    grad_map[name] = grad_map[name] + 2.0 * config.l2_weight * params[name]
            updated = optimizer.step(params, grad_map)
            head = head.with_params(
                **{k: v for k, v in updated.items() if k != "anchors"})
            if "anchors" in updated:
                anchors = retract_raw(updated["anchors"], config.eps_ball)

        epoch_loss = _epoch_mean(step_breakdowns, weights)
        if not np.isfinite(epoch_loss.total):
            raise TrainingError(f"training diverged at epoch {epoch}")
        history.append(epoch_loss)

    f1, acc, _ = evaluate(head, holdout, config.workers)
    spectrum = spectrum_stats(calibrate_rows(head, holdout.embeddings, config.workers))
    report = TrainReport(
        history=history, final_f1=f1, final_accuracy=acc, spectrum=spectrum,
        wall_clock_s=time.perf_counter() - start,
        n_train=train_ds.n, n_holdout=holdout.n)
    return head, anchors, report


ABLATION_SETTINGS = ("full", "wo_orth", "wo_ratio", "wo_l2", "wo_all")


def run_ablation(config: TrainConfig, dataset: LabeledDataset) -> list[tuple[str, float]]:
    """Train the full variant with each penalty removed in turn.

    Returns (setting, holdout weighted F1) pairs for: full, without the
    orthogonality penalty, without the scaling penalty, without l2, and
    without all three. Every run uses the same seed.
    """
    if config.variant != "full":
        raise ValueError("ablation sweeps the full variant")
    variants = {
        "full": config,
        "wo_orth": replace(config, use_orth=False),
        "wo_ratio": replace(config, use_ratio=False),
        "wo_l2": replace(config, l2_weight=0.0),
        "wo_all": replace(config, use_orth=False, use_ratio=False, l2_weight=0.0),
    }
    results = []
    for name in ABLATION_SETTINGS:
        _, _, report = train(variants[name], dataset)
        results.append((name, report.final_f1))
    return results

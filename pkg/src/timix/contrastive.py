"""InfoNCE and dual-positive soft-label contrastive losses with gradients.

A mixed image carries two positive texts weighted by the soft labels of
its recipe; symmetrically a text treats the two mixes of its pair as
weighted positives.  Each positive contributes a weighted log-softmax
term.  By default the other positive stays in the denominator of each
term (the index set excludes only the term's own positive, so nothing is
removed from the row); ``exclude_other_positive`` switches to the variant
that drops it.

All losses are computed with per-anchor max-logit subtraction, so the
exponentials never overflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BatchTooSmallError,
    ValidationError,
    WeightSumError,
    ZeroNormError,
)

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class SimilarityConfig:
    """Similarity kind and temperature; ``exp(dot / tau)`` or ``exp(cos / tau)``."""

    kind: str = "exp-cosine"
    temperature: float = 0.07
    exclude_other_positive: bool = False

    def __post_init__(self):
        if self.kind not in ("exp-dot", "exp-cosine"):
            raise ValidationError(f"unknown similarity kind {self.kind!r}")
        if not self.temperature > 0:
            raise ValidationError(f"temperature must be positive, got {self.temperature}")


def similarity(u: np.ndarray, t: np.ndarray, cfg: SimilarityConfig) -> float:
    """Strictly positive similarity between two embeddings."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if cfg.kind == "exp-dot":
        return float(np.exp(u @ t / cfg.temperature))
    nu, nt = np.linalg.norm(u), np.linalg.norm(t)
    if nu == 0 or nt == 0:
        raise ZeroNormError("cosine similarity undefined for a zero vector")
    return float(np.exp(u @ t / (nu * nt * cfg.temperature)))


@dataclass
class ContrastiveBatch:
    """Anchors scored against candidates, with weighted positive indices.

    ``positive_indices`` and ``positive_weights`` have one row per anchor
    and one column per positive (one for plain InfoNCE, two for mixed
    samples); weights in a row sum to 1.
    """

    anchors: np.ndarray
    candidates: np.ndarray
    positive_indices: np.ndarray
    positive_weights: np.ndarray = field(default=None)

    def __post_init__(self):
        self.anchors = np.atleast_2d(np.asarray(self.anchors, dtype=np.float64))
        self.candidates = np.atleast_2d(np.asarray(self.candidates, dtype=np.float64))
        self.positive_indices = np.atleast_2d(np.asarray(self.positive_indices, dtype=np.intp))
        if self.positive_weights is None:
            self.positive_weights = np.ones_like(self.positive_indices, dtype=np.float64)
        self.positive_weights = np.atleast_2d(np.asarray(self.positive_weights, dtype=np.float64))
        m, nc = self.anchors.shape[0], self.candidates.shape[0]
        if m == 0 or nc == 0:
            raise BatchTooSmallError("batch needs at least one anchor and one candidate")
        if self.anchors.shape[1] != self.candidates.shape[1]:
            raise ValidationError(
                f"anchor dim {self.anchors.shape[1]} vs candidate dim {self.candidates.shape[1]}"
            )
        if self.positive_indices.shape[0] != m or self.positive_weights.shape != self.positive_indices.shape:
            raise ValidationError("one row of positive indices/weights per anchor required")
        if self.positive_indices.min() < 0 or self.positive_indices.max() >= nc:
            raise ValidationError("positive index out of candidate range")
        for row in self.positive_indices:
            if len(set(row.tolist())) != len(row):
                raise ValidationError(f"positive indices must be distinct, got {row}")
        sums = self.positive_weights.sum(axis=1)
        if np.any(self.positive_weights < 0) or np.any(np.abs(sums - 1.0) > WEIGHT_TOL):
            raise WeightSumError(f"positive weights must sum to 1 per anchor, got {sums}")

    @property
    def n_positives(self) -> int:
        return self.positive_indices.shape[1]

    @classmethod
    def single(cls, anchors, candidates, indices=None) -> "ContrastiveBatch":
        """One positive per anchor; defaults to the matching index."""
        anchors = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
        if indices is None:
            indices = np.arange(anchors.shape[0])
        indices = np.asarray(indices, dtype=np.intp).reshape(-1, 1)
        return cls(anchors, candidates, indices)

    @classmethod
    def dual(cls, anchors, candidates, primary, secondary, primary_weight) -> "ContrastiveBatch":
        """Two weighted positives per anchor, weights (w, 1 - w)."""
        primary = np.asarray(primary, dtype=np.intp).reshape(-1)
        secondary = np.asarray(secondary, dtype=np.intp).reshape(-1)
        w = np.asarray(primary_weight, dtype=np.float64).reshape(-1)
        if w.shape[0] == 1:
            w = np.full(primary.shape[0], w[0])
        indices = np.stack([primary, secondary], axis=1)
        weights = np.stack([w, 1.0 - w], axis=1)
        return cls(anchors, candidates, indices, weights)


def _logit_rows(batch: ContrastiveBatch, cfg: SimilarityConfig) -> np.ndarray:
    """(m, n_candidates) matrix of log-similarities."""
    u, c = batch.anchors, batch.candidates
    if cfg.kind == "exp-dot":
        return u @ c.T / cfg.temperature
    nu = np.linalg.norm(u, axis=1)
    ncand = np.linalg.norm(c, axis=1)
    if np.any(nu == 0) or np.any(ncand == 0):
        raise ZeroNormError("cosine similarity undefined for a zero vector")
    return (u / nu[:, None]) @ (c / ncand[:, None]).T / cfg.temperature


def _term_log_softmax(logits: np.ndarray, pos: int, mask_out: list[int]) -> float:
    """log softmax of ``pos`` over all candidates minus ``mask_out``."""
    keep = np.ones(logits.shape[0], dtype=bool)
    for j in mask_out:
        keep[j] = False
    kept = logits[keep]
    m = kept.max()
    return float(logits[pos] - m - np.log(np.exp(kept - m).sum()))


def _weighted_loss(batch: ContrastiveBatch, cfg: SimilarityConfig) -> float:
    logits = _logit_rows(batch, cfg)
    total = 0.0
    for i in range(batch.anchors.shape[0]):
        row = logits[i]
        positives = batch.positive_indices[i]
        weights = batch.positive_weights[i]
        for p, w in zip(positives, weights):
            if cfg.exclude_other_positive:
                others = [int(o) for o in positives if o != p]
            else:
                others = []
            total -= w * _term_log_softmax(row, int(p), others)
    return total / batch.anchors.shape[0]


def infonce_loss(batch: ContrastiveBatch, cfg: SimilarityConfig) -> float:
    """Mean single-positive contrastive loss; zero when there are no negatives."""
    if batch.n_positives != 1:
        raise ValidationError("infonce_loss expects exactly one positive per anchor")
    return _weighted_loss(batch, cfg)


def timix_i2t_loss(batch: ContrastiveBatch, cfg: SimilarityConfig) -> float:
    """Image-to-text loss: mixed-image anchors, two soft-label text positives."""
    if batch.n_positives != 2:
        raise ValidationError("timix_i2t_loss expects two positives per anchor")
    return _weighted_loss(batch, cfg)


def timix_t2i_loss(batch: ContrastiveBatch, cfg: SimilarityConfig) -> float:
    """Text-to-image loss: text anchors, the pair's two mixes as positives."""
    if batch.n_positives != 2:
        raise ValidationError("timix_t2i_loss expects two positives per anchor")
    return _weighted_loss(batch, cfg)


def loss_grad(
    batch: ContrastiveBatch, cfg: SimilarityConfig, which: str = "vanilla"
) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradients of the selected loss w.r.t. anchors and candidates."""
    expected = {"vanilla": 1, "i2t": 2, "t2i": 2}
    if which not in expected:
        raise ValidationError(f"unknown loss {which!r}")
    if batch.n_positives != expected[which]:
        raise ValidationError(
            f"{which} loss needs {expected[which]} positive(s) per anchor, "
            f"batch has {batch.n_positives}"
        )
    m, nc = batch.anchors.shape[0], batch.candidates.shape[0]
    logits = _logit_rows(batch, cfg)

    # d loss / d logits, one row per anchor
    dlogits = np.zeros((m, nc))
    for i in range(m):
        row = logits[i]
        positives = batch.positive_indices[i]
        weights = batch.positive_weights[i]
        for p, w in zip(positives, weights):
            keep = np.ones(nc, dtype=bool)
            if cfg.exclude_other_positive:
                for o in positives:
                    if o != p:
                        keep[int(o)] = False
            shifted = np.where(keep, row, -np.inf)
            mx = shifted.max()
            q = np.exp(shifted - mx)
            q /= q.sum()
            dlogits[i] += w * q
            dlogits[i, int(p)] -= w
    dlogits /= m

    u, c = batch.anchors, batch.candidates
    tau = cfg.temperature
    if cfg.kind == "exp-dot":
        d_anchors = dlogits @ c / tau
        d_candidates = dlogits.T @ u / tau
        return d_anchors, d_candidates

    nu = np.linalg.norm(u, axis=1)
    ncand = np.linalg.norm(c, axis=1)
    uh = u / nu[:, None]
    ch = c / ncand[:, None]
    cos = uh @ ch.T
    # d cos(u, c)/du = (c_hat - cos * u_hat) / |u|; symmetric for c
    d_anchors = ((dlogits @ ch) - (dlogits * cos).sum(axis=1, keepdims=True) * uh) / (
        tau * nu[:, None]
    )
    d_candidates = ((dlogits.T @ uh) - (dlogits * cos).sum(axis=0)[:, None] * ch) / (
        tau * ncand[:, None]
    )
    return d_anchors, d_candidates

"""Text-aware Patch Predictor (TPP) and the patch-text alignment (PTA) loss.

The predictor is a three-layer MLP: each patch feature is concatenated with
the text embedding (both of dimension ``dim``), passed through two hidden
affine layers with ReLU, and squashed to a relevance score in (0, 1) by a
final affine layer plus sigmoid.  PTA trains it with binary cross entropy
against patch labels derived from bounding boxes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatchError,
    LengthMismatchError,
    NonFiniteScoreError,
    VersionMismatchError,
)
from .geometry import PatchGrid

# Scores are clamped away from {0, 1} before taking logs; BCE is undefined
# at the endpoints and sigmoid saturates there only for |logit| > ~16.
SCORE_EPS = 1e-7

CHECKPOINT_FORMAT = "timix-tpp"
CHECKPOINT_VERSION = 1


@dataclass
class ScoreMap:
    """Per-patch text-relevance scores arranged on a grid, row-major."""

    grid: PatchGrid
    scores: np.ndarray  # shape (n_patches,), values in (0, 1)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if self.scores.shape[0] != self.grid.n_patches:
            raise LengthMismatchError(
                f"{self.scores.shape[0]} scores for {self.grid.n_patches} patches"
            )
        if not np.all(np.isfinite(self.scores)):
            raise NonFiniteScoreError("score map contains non-finite values")

    def as_grid(self) -> np.ndarray:
        return self.scores.reshape(self.grid.rows, self.grid.cols)


@dataclass
class TppModel:
    """Three affine layers scoring (patch, text) relevance.

    Layer shapes: (2*dim -> hidden), (hidden -> hidden), (hidden -> 1).
    Mutable; training steps update weights in place.  Use :meth:`copy` for
    a snapshot safe to share across threads.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    seed: int = 0

    @property
    def dim(self) -> int:
        return self.w1.shape[1] // 2

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def initialize(cls, dim: int, hidden: int | None = None, seed: int = 0) -> "TppModel":
        """Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer."""
        if dim < 1:
            raise DimensionMismatchError(f"dim must be >= 1, got {dim}")
        if hidden is None:
            hidden = dim
        rng = np.random.default_rng(seed)

        def layer(fan_out, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            b = rng.uniform(-bound, bound, size=fan_out)
            return w, b

        w1, b1 = layer(hidden, 2 * dim)
        w2, b2 = layer(hidden, hidden)
        w3, b3 = layer(1, hidden)
        return cls(w1, b1, w2, b2, w3, b3, seed=seed)

    def copy(self) -> "TppModel":
        return TppModel(
            self.w1.copy(), self.b1.copy(), self.w2.copy(),
            self.b2.copy(), self.w3.copy(), self.b3.copy(), seed=self.seed,
        )

    def param_arrays(self):
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]


@dataclass
class TppGradients:
    """Gradients of the PTA loss, mirroring the model parameters.

    Also carries gradients with respect to the inputs so callers can chain
    through upstream encoders.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    patch_features: np.ndarray
    text: np.ndarray

    def param_arrays(self):
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]


def _check_inputs(model: TppModel, patch_features: np.ndarray, text: np.ndarray):
    patch_features = np.asarray(patch_features, dtype=np.float64)
    text = np.asarray(text, dtype=np.float64).reshape(-1)
    if patch_features.ndim != 2:
        raise DimensionMismatchError(
            f"patch features must be 2-D (n, dim), got shape {patch_features.shape}"
        )
    if patch_features.shape[1] != model.dim or text.shape[0] != model.dim:
        raise DimensionMismatchError(
            f"model dim {model.dim} vs patch dim {patch_features.shape[1]} "
            f"and text dim {text.shape[0]}"
        )
    return patch_features, text


def _forward(model: TppModel, patch_features: np.ndarray, text: np.ndarray):
    """Forward pass returning scores plus the activations needed for backprop."""
    x = np.concatenate(
        [patch_features, np.broadcast_to(text, (patch_features.shape[0], text.shape[0]))],
        axis=1,
    )
    z1 = x @ model.w1.T + model.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ model.w2.T + model.b2
    a2 = np.maximum(z2, 0.0)
    z3 = (a2 @ model.w3.T + model.b3).reshape(-1)
    scores = 1.0 / (1.0 + np.exp(-z3))
    return scores, (x, z1, a1, z2, a2)


def tpp_forward(
    model: TppModel,
    grid: PatchGrid,
    patch_features: np.ndarray,
    text: np.ndarray,
) -> ScoreMap:
    """Score every patch of one image against one text embedding."""
    patch_features, text = _check_inputs(model, patch_features, text)
    if patch_features.shape[0] != grid.n_patches:
        raise DimensionMismatchError(
            f"{patch_features.shape[0]} patch features for grid with "
            f"{grid.n_patches} patches"
        )
    scores, _ = _forward(model, patch_features, text)
    return ScoreMap(grid, scores)


def pta_loss(scores, labels) -> float:
    """Mean binary cross entropy between patch scores and binary labels.

    Accepts a :class:`ScoreMap` or a raw score array.  Non-negative; zero
    only in the limit of perfectly confident correct scores.
    """
    values = scores.scores if isinstance(scores, ScoreMap) else np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    values = values.reshape(-1)
    if values.shape[0] != labels.shape[0]:
        raise LengthMismatchError(f"{values.shape[0]} scores vs {labels.shape[0]} labels")
    if not np.all(np.isfinite(values)):
        raise NonFiniteScoreError("scores contain non-finite values")
    a = np.clip(values, SCORE_EPS, 1.0 - SCORE_EPS)
    return float(-np.mean(labels * np.log(a) + (1.0 - labels) * np.log1p(-a)))


def pta_grad(
    model: TppModel,
    patch_features: np.ndarray,
    text: np.ndarray,
    labels: np.ndarray,
) -> tuple[float, TppGradients]:
    """Loss and its exact gradient for one (image, text, labels) example."""
    patch_features, text = _check_inputs(model, patch_features, text)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    n = patch_features.shape[0]
    if labels.shape[0] != n:
        raise LengthMismatchError(f"{n} patches vs {labels.shape[0]} labels")

    scores, (x, z1, a1, z2, a2) = _forward(model, patch_features, text)
    loss = pta_loss(scores, labels)

    # BCE-through-sigmoid collapses to (score - label) at the logit.
    dz3 = ((scores - labels) / n).reshape(-1, 1)
    dw3 = dz3.T @ a2
    db3 = dz3.sum(axis=0)
    da2 = dz3 @ model.w3
    dz2 = da2 * (z2 > 0)
    dw2 = dz2.T @ a1
    db2 = dz2.sum(axis=0)
    da1 = dz2 @ model.w2
    dz1 = da1 * (z1 > 0)
    dw1 = dz1.T @ x
    db1 = dz1.sum(axis=0)
    dx = dz1 @ model.w1
    d = model.dim
    return loss, TppGradients(
        dw1, db1, dw2, db2, dw3, db3,
        patch_features=dx[:, :d],
        text=dx[:, d:].sum(axis=0),
    )


def pta_train_step(model: TppModel, batch, lr: float) -> float:
    """One gradient-descent step on the mean PTA loss over a batch.

    ``batch`` is a sequence of (patch_features, text, labels) triples.  The
    model is updated in place; returns the pre-update mean loss.
    """
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    if not batch:
        raise LengthMismatchError("empty training batch")
    total_loss = 0.0
    accum = None
    for patch_features, text, labels in batch:
        loss, grads = pta_grad(model, patch_features, text, labels)
        total_loss += loss
        if accum is None:
            accum = grads.param_arrays()
        else:
            for acc, g in zip(accum, grads.param_arrays()):
                acc += g
    scale = lr / len(batch)
    for param, g in zip(model.param_arrays(), accum):
        param -= scale * g
    return total_loss / len(batch)


# -- checkpointing ----------------------------------------------------------

def save_checkpoint(model: TppModel, path) -> None:
    """Write the model as a JSON blob with exact (shortest-roundtrip) floats."""
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dim": model.dim,
        "hidden": model.hidden,
        "seed": model.seed,
        "layers": [
            {"weights": w.tolist(), "bias": b.tolist()}
            for w, b in ((model.w1, model.b1), (model.w2, model.b2), (model.w3, model.b3))
        ],
    }
    Path(path).write_text(json.dumps(blob) + "\n")


def load_checkpoint(path) -> TppModel:
    blob = json.loads(Path(path).read_text())
    if blob.get("format") != CHECKPOINT_FORMAT or blob.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"unsupported checkpoint {blob.get('format')!r} v{blob.get('version')!r}"
        )
    layers = blob["layers"]
    arrays = []
    for layer in layers:
        arrays.append(np.asarray(layer["weights"], dtype=np.float64))
        arrays.append(np.asarray(layer["bias"], dtype=np.float64))
    model = TppModel(*arrays, seed=blob["seed"])
    if model.dim != blob["dim"] or model.hidden != blob["hidden"]:
        raise VersionMismatchError("checkpoint header inconsistent with layer shapes")
    return model


# -- desk-scale featurizers --------------------------------------------------
#
# Stand-ins for the heavyweight vision/text backbones, which are out of
# scope: a seeded random projection of raw patch pixels, and a hashed
# bag-of-words text embedding.  Both are deterministic across runs and
# platforms.

def patch_projection(patch_size: int, channels: int, dim: int, seed: int) -> np.ndarray:
    """Seeded random projection matrix from flattened patch pixels to dim."""
    rng = np.random.default_rng(seed)
    fan_in = channels * patch_size * patch_size
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(dim, fan_in))


def image_patch_features(image: np.ndarray, grid: PatchGrid, projection: np.ndarray) -> np.ndarray:
    """Project each patch of an (H, W, C) image; rows are L2-normalized."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.shape[0] != grid.height or image.shape[1] != grid.width:
        raise DimensionMismatchError(
            f"image {image.shape[:2]} vs grid {grid.height}x{grid.width}"
        )
    p = grid.patch_size
    # (rows, cols, p, p, c) -> (n, p*p*c), pixels scaled to [0, 1]
    patches = (
        image.reshape(grid.rows, p, grid.cols, p, image.shape[2])
        .transpose(0, 2, 1, 3, 4)
        .reshape(grid.n_patches, -1)
    ) / 255.0
    if patches.shape[1] != projection.shape[1]:
        raise DimensionMismatchError(
            f"patch vector length {patches.shape[1]} vs projection "
            f"fan-in {projection.shape[1]}"
        )
    feats = patches @ projection.T
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    return feats / np.where(norms == 0, 1.0, norms)


def text_embedding(caption: str, dim: int) -> np.ndarray:
    """Hashed bag-of-words embedding, stable across platforms and runs."""
    import hashlib

    vec = np.zeros(dim, dtype=np.float64)
    for token in caption.lower().split():
        token = token.strip(".,!?;:'\"()[]")
        if not token:
            continue
        digest = hashlib.sha1(token.encode("utf-8")).digest()
        bucket = int.from_bytes(digest[:4], "big") % dim
        sign = 1.0 if digest[4] & 1 else -1.0
        vec[bucket] += sign
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec

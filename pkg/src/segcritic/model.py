"""The toy differentiable backbone: per-pixel features and a one-hidden-
layer tanh MLP producing 7-class logits.

The backbone exists to demonstrate interventional fine-tuning at desk
scale; real backbones enter the system only through ingested predictions.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from segcritic import errors
from segcritic.colorspace import gray, rgb_to_hsv
from segcritic.core import NUM_CLASSES, ImageRaster, LogitMap
from segcritic.texture import lbp_codes, window_mean_std

NUM_FEATURES = 11
HIDDEN_UNITS = 32

CHECKPOINT_MAGIC = b"SEGW"
CHECKPOINT_VERSION = 1


def featurize(image: ImageRaster) -> np.ndarray:
    """Per-pixel feature field, shape (H, W, 11), all values in [0, 1].

    Features: R, G, B, H/360, S, V, x/W, y/H, 3x3 gray mean, 3x3 gray std,
    LBP code / 255. Windows are edge-clamped at the borders.
    """
    px = image.pixels
    h, w = px.shape[:2]
    hsv = rgb_to_hsv(px)
    g = gray(px)
    mean, std = window_mean_std(g)
    codes = lbp_codes(g)

    feats = np.empty((h, w, NUM_FEATURES), dtype=np.float64)
    feats[..., 0:3] = px.astype(np.float64) / 255.0
    feats[..., 3] = hsv[..., 0] / 360.0
    feats[..., 4] = hsv[..., 1]
    feats[..., 5] = hsv[..., 2]
    feats[..., 6] = np.arange(w, dtype=np.float64)[None, :] / w
    feats[..., 7] = np.arange(h, dtype=np.float64)[:, None] / h
    feats[..., 8] = mean / 255.0
    feats[..., 9] = std / 255.0
    feats[..., 10] = codes.astype(np.float64) / 255.0
    return feats


@dataclass
class ToyBackboneParams:
    """One hidden layer, tanh activation: logits = W2 tanh(W1 phi + b1) + b2."""

    w1: np.ndarray  # (32, 11)
    b1: np.ndarray  # (32,)
    w2: np.ndarray  # (7, 32)
    b2: np.ndarray  # (7,)

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64)
        expected = [
            (self.w1, (HIDDEN_UNITS, NUM_FEATURES)),
            (self.b1, (HIDDEN_UNITS,)),
            (self.w2, (NUM_CLASSES, HIDDEN_UNITS)),
            (self.b2, (NUM_CLASSES,)),
        ]
        for arr, shape in expected:
            if arr.shape != shape:
                raise ValueError(f"parameter shape {arr.shape} != {shape}")
            if not np.isfinite(arr).all():
                raise ValueError("parameters must be finite")

    def copy(self) -> "ToyBackboneParams":
        return ToyBackboneParams(
            self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy()
        )

    def flat(self) -> np.ndarray:
        return np.concatenate(
            [self.w1.ravel(), self.b1.ravel(), self.w2.ravel(), self.b2.ravel()]
        )

    @classmethod
    def from_flat(cls, vec: np.ndarray) -> "ToyBackboneParams":
        sizes = [
            HIDDEN_UNITS * NUM_FEATURES,
            HIDDEN_UNITS,
            NUM_CLASSES * HIDDEN_UNITS,
            NUM_CLASSES,
        ]
        if vec.size != sum(sizes):
            raise ValueError(f"expected {sum(sizes)} parameters, got {vec.size}")
        parts = np.split(np.asarray(vec, dtype=np.float64), np.cumsum(sizes)[:-1])
        return cls(
            parts[0].reshape(HIDDEN_UNITS, NUM_FEATURES),
            parts[1],
            parts[2].reshape(NUM_CLASSES, HIDDEN_UNITS),
            parts[3],
        )


def init_params(seed: int) -> ToyBackboneParams:
    """Seeded uniform(-0.1, 0.1) initialization."""
    rng = np.random.default_rng(seed)
    return ToyBackboneParams(
        w1=rng.uniform(-0.1, 0.1, (HIDDEN_UNITS, NUM_FEATURES)),
        b1=rng.uniform(-0.1, 0.1, HIDDEN_UNITS),
        w2=rng.uniform(-0.1, 0.1, (NUM_CLASSES, HIDDEN_UNITS)),
        b2=rng.uniform(-0.1, 0.1, NUM_CLASSES),
    )


def hidden_activations(params: ToyBackboneParams, features: np.ndarray) -> np.ndarray:
    """tanh(W1 phi + b1), shape (..., 32); also the embedding source."""
    return np.tanh(features @ params.w1.T + params.b1)


def forward_features(params: ToyBackboneParams, features: np.ndarray) -> np.ndarray:
    """Logits over an (..., 11) feature array, shape (..., 7)."""
    return hidden_activations(params, features) @ params.w2.T + params.b2


def forward(params: ToyBackboneParams, features: np.ndarray) -> LogitMap:
    if features.ndim != 3 or features.shape[2] != NUM_FEATURES:
        raise errors.DimensionMismatch(
            f"features must be (H, W, {NUM_FEATURES}), got {features.shape}"
        )
    return LogitMap(forward_features(params, features))


def predict_image(params: ToyBackboneParams, image: ImageRaster) -> LogitMap:
    return forward(params, featurize(image))


def save_checkpoint(params: ToyBackboneParams) -> bytes:
    """SEGW format: magic, version, layer dims, then f32 little-endian
    parameters in declaration order (w1, b1, w2, b2).
    """
    header = CHECKPOINT_MAGIC + struct.pack(
        "<IIII", CHECKPOINT_VERSION, NUM_FEATURES, HIDDEN_UNITS, NUM_CLASSES
    )
    body = params.flat().astype("<f4").tobytes()
    return header + body


def load_checkpoint(data: bytes) -> ToyBackboneParams:
    if len(data) < 20:
        raise errors.TruncatedPayload("checkpoint shorter than header")
    if data[:4] != CHECKPOINT_MAGIC:
        raise errors.BadMagic(f"expected {CHECKPOINT_MAGIC!r}, got {data[:4]!r}")
    version, n_in, n_hidden, n_out = struct.unpack_from("<IIII", data, 4)
    if version != CHECKPOINT_VERSION:
        raise errors.BadMagic(f"unsupported checkpoint version {version}")
    if (n_in, n_hidden, n_out) != (NUM_FEATURES, HIDDEN_UNITS, NUM_CLASSES):
        raise errors.TruncatedPayload(
            f"unexpected layer dims ({n_in}, {n_hidden}, {n_out})"
        )
    count = n_hidden * n_in + n_hidden + n_out * n_hidden + n_out
    payload = data[20:]
    if len(payload) != count * 4:
        raise errors.TruncatedPayload(
            f"payload is {len(payload)} bytes, expected {count * 4}"
        )
    vec = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return ToyBackboneParams.from_flat(vec)

"""Desk-scale encoder, projection head, bilinear similarity and COLA loss.

The backbone is ``h = enc(frontend(x))``: the feature map enters a stack of
bias-free 3x3 stride-2 convolutions with ReLU as a one-channel image, is
globally averaged, and is mapped linearly to ``embed_dim``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from .diffcore import Parameter, ShapeError, Tensor, as_tensor, ops
from .frontend import Frontend

Params = Dict[str, Parameter]


@dataclass(frozen=True)
class EncoderConfig:
    channels: Tuple[int, ...] = (16, 32, 64, 128)
    embed_dim: int = 128

    def __post_init__(self):
        if self.embed_dim < 8:
            raise ValueError("embed_dim must be >= 8")
        if not self.channels:
            raise ValueError("encoder needs at least one conv block")

    @property
    def min_input(self) -> int:
        return 2 ** len(self.channels)


def _glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator) -> Params:
    params = {}
    c_in = 1
    for i, c_out in enumerate(cfg.channels):
        std = np.sqrt(2.0 / (9 * c_in))
        name = f"encoder.conv{i}.weight"
        params[name] = Parameter(name, rng.normal(0.0, std, size=(c_out, c_in, 3, 3)))
        c_in = c_out
    params["encoder.fc.weight"] = Parameter("encoder.fc.weight", _glorot(rng, c_in, cfg.embed_dim))
    params["encoder.fc.bias"] = Parameter("encoder.fc.bias", np.zeros(cfg.embed_dim))
    return params


def encode(features, params: Params, cfg: EncoderConfig) -> Tensor:
    """Embed ``(B, M, N)`` (or a single ``(M, N)``) feature maps into ``(B, D)``."""
    x = as_tensor(features)
    single = x.ndim == 2
    if single:
        x = ops.reshape(x, (1,) + x.shape)
    if x.ndim != 3:
        raise ShapeError("encode", f"expected (B, M, N) features, got {x.shape}")
    if min(x.shape[1:]) < cfg.min_input:
        raise ShapeError("encode", f"feature map {x.shape[1:]} below the receptive floor "
                                   f"{cfg.min_input} for {len(cfg.channels)} blocks")
    y = ops.reshape(x, (x.shape[0], 1) + x.shape[1:])
    for i in range(len(cfg.channels)):
        y = ops.relu(ops.conv2d(y, params[f"encoder.conv{i}.weight"].value, stride=2, padding=1))
    h = ops.global_avg_pool2d(y) @ params["encoder.fc.weight"].value + params["encoder.fc.bias"].value
    return h[0] if single else h


def init_projection(embed_dim: int, proj_dim: int, rng: np.random.Generator) -> Params:
    return {
        "head.proj.weight": Parameter("head.proj.weight", _glorot(rng, embed_dim, proj_dim)),
        "head.proj.bias": Parameter("head.proj.bias", np.zeros(proj_dim)),
        "head.proj.ln_gain": Parameter("head.proj.ln_gain", np.ones(proj_dim)),
        "head.proj.ln_bias": Parameter("head.proj.ln_bias", np.zeros(proj_dim)),
    }


def project(h, params: Params) -> Tensor:
    """``z = tanh(layernorm(h W + b))`` for one ``(D,)`` embedding or a ``(B, D)`` batch."""
    h = as_tensor(h)
    single = h.ndim == 1
    if single:
        h = ops.reshape(h, (1, -1))
    pre = h @ params["head.proj.weight"].value + params["head.proj.bias"].value
    z = ops.tanh(ops.layer_norm(pre, params["head.proj.ln_gain"].value, params["head.proj.ln_bias"].value))
    return z[0] if single else z


def init_bilinear(proj_dim: int, rng: np.random.Generator) -> Params:
    return {"head.bilinear": Parameter("head.bilinear", _glorot(rng, proj_dim, proj_dim))}


def bilinear_similarity(z, z_other, w) -> Tensor:
    """``z^T W z'``; with ``(B, G)`` inputs returns the ``(B, B)`` similarity matrix."""
    z, z_other, w = as_tensor(z), as_tensor(z_other), as_tensor(w)
    if w.ndim != 2 or z.shape[-1] != w.shape[0] or z_other.shape[-1] != w.shape[1]:
        raise ShapeError("bilinear_similarity", f"z {z.shape}, W {w.shape}, z' {z_other.shape} do not align")
    if z.ndim == 1 and z_other.ndim == 1:
        return ops.sum((ops.reshape(z, (1, -1)) @ w) * z_other)
    return ops.reshape(z, (-1, z.shape[-1])) @ w @ ops.transpose(ops.reshape(z_other, (-1, z_other.shape[-1])))


def contrastive_loss(similarities) -> Tensor:
    """Mean softmax cross-entropy of each row against its diagonal entry."""
    s = as_tensor(similarities)
    if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] == 0:
        raise ShapeError("cola_loss", f"need a non-empty square similarity matrix, got {s.shape}")
    return ops.softmax_cross_entropy(s, np.arange(s.shape[0]))


def cola_loss(anchors, positives, w) -> Tensor:
    """COLA objective: each anchor must pick its own positive among all in-batch positives."""
    anchors, positives = as_tensor(anchors), as_tensor(positives)
    if anchors.shape[0] == 0:
        raise ShapeError("cola_loss", "empty batch")
    if anchors.shape != positives.shape:
        raise ShapeError("cola_loss", f"anchors {anchors.shape} and positives {positives.shape} differ")
    return contrastive_loss(bilinear_similarity(anchors, positives, w))


def identification_accuracy(similarities) -> float:
    """Fraction of rows whose argmax is the diagonal."""
    s = similarities.data if isinstance(similarities, Tensor) else np.asarray(similarities)
    return float(np.mean(np.argmax(s, axis=1) == np.arange(s.shape[0])))


def init_classifier(embed_dim: int, n_classes: int, rng: np.random.Generator, prefix: str = "head.cls") -> Params:
    return {
        f"{prefix}.weight": Parameter(f"{prefix}.weight", _glorot(rng, embed_dim, n_classes)),
        f"{prefix}.bias": Parameter(f"{prefix}.bias", np.zeros(n_classes)),
    }


def classify(h, params: Params, prefix: str = "head.cls") -> Tensor:
    """Affine logits ``h W + b``."""
    h = as_tensor(h)
    weight, bias = params[f"{prefix}.weight"].value, params[f"{prefix}.bias"].value
    if h.shape[-1] != weight.shape[0]:
        raise ShapeError("classify", f"embedding dim {h.shape[-1]} != head input {weight.shape[0]}")
    return h @ weight + bias


@dataclass
class Backbone:
    """Frontend followed by the encoder: ``h = enc(F(x))``."""

    frontend: Frontend
    encoder_cfg: EncoderConfig
    encoder_params: Params = field(default_factory=dict)

    @property
    def params(self) -> Params:
        return {**self.frontend.params, **self.encoder_params}

    def features(self, wave) -> Tensor:
        return self.frontend(wave)

    def __call__(self, wave) -> Tensor:
        return encode(self.frontend(wave), self.encoder_params, self.encoder_cfg)

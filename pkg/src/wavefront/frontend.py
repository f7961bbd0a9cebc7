"""Frontends mapping waveforms to ``(frames, channels)`` feature maps.

Three pipelines share one framing convention: frame ``m`` is centred on
sample ``m * stride``, so a ``T``-sample input yields ``ceil(T / stride)``
frames.

* log-mel: Hann STFT -> power -> triangular mel filters -> ``log(x + 1e-6)``
* SincNet: sinc band-pass convolution -> leaky ReLU -> max-pool
* LEAF: complex Gabor convolution -> squared modulus -> Gaussian low-pass
  pooling -> sPCEN (learnable per-channel smoothing)

All functions take ``(T,)`` or ``(B, T)`` waveforms and return a
:class:`Tensor` of shape ``(M, N)`` or ``(B, M, N)`` respectively.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import SAMPLE_RATE
from .diffcore import Parameter, Tensor, as_tensor, ops
from .filterbank import (DEFAULT_FMAX, DEFAULT_FMIN, DEFAULT_WIDTH, RANDOM_HIGH, RANDOM_LOW,
                         GaborParams, InitScheme, SincParams, gabor_kernel, init_params,
                         mel_triangular_filterbank, sinc_kernel)

STRIDE = 160
WINDOW = 400
LOG_FLOOR = 1e-6
LEAKY_SLOPE = 0.2
SIGMA_MIN = 4.0 * np.sqrt(2.0 * np.log(2.0)) / np.pi
POOL_WIDTH_MIN = 1.0
POOL_WIDTH_INIT = 80.0
SINC_MIN_GAP = 1e-4

FRONTENDS = ("melfbank", "sincnet", "leaf", "leaf-fixed-pcen")


def _batched(wave):
    wave = as_tensor(wave)
    if wave.ndim == 1:
        return ops.reshape(wave, (1, -1)), True
    if wave.ndim != 2:
        raise ValueError(f"waveform must be (T,) or (B, T), got shape {wave.shape}")
    return wave, False


def _unbatch(out: Tensor, squeeze: bool) -> Tensor:
    return out[0] if squeeze else out


def num_frames(length: int, stride: int = STRIDE) -> int:
    return -(-length // stride)


# -- log-mel ---------------------------------------------------------------------

def log_mel_forward(wave, n_filters: int = 64, sample_rate: int = SAMPLE_RATE,
                    f_min: float = DEFAULT_FMIN, f_max: float = DEFAULT_FMAX) -> Tensor:
    """Log-compressed mel filterbank energies (400-sample Hann window, hop 160)."""
    x, squeeze = _batched(wave)
    length = x.shape[1]
    if length < WINDOW:
        raise ValueError(f"log-mel needs at least {WINDOW} samples, got {length}")
    n_frames = num_frames(length)
    left = WINDOW // 2
    right = (n_frames - 1) * STRIDE + WINDOW - length - left
    padded = np.pad(x.data, ((0, 0), (left, max(right, 0))))
    frames = sliding_window_view(padded, WINDOW, axis=-1)[:, ::STRIDE][:, :n_frames]
    window = np.hanning(WINDOW + 1)[:-1]
    power = np.abs(np.fft.rfft(frames * window, WINDOW)) ** 2
    mel = mel_triangular_filterbank(n_filters, WINDOW, f_min, f_max, sample_rate)
    return _unbatch(Tensor(np.log(power @ mel.T + LOG_FLOOR)), squeeze)


# -- SincNet -------------------------------------------------------------------

def sincnet_forward(wave, params: SincParams, width: int = DEFAULT_WIDTH, stride: int = STRIDE,
                    slope: float = LEAKY_SLOPE) -> Tensor:
    """Same-padded sinc convolution, leaky ReLU, then max-pool over ``stride`` samples."""
    f1, f2 = as_tensor(params.f1s), as_tensor(params.f2s)
    if np.any(f1.data < 0) or np.any(f2.data > 0.5) or np.any(f1.data > f2.data):
        raise ValueError("sinc cutoffs must satisfy 0 <= f1 <= f2 <= 0.5")
    x, squeeze = _batched(wave)
    kernels = sinc_kernel(f1, f2, width)
    y = ops.conv1d(ops.reshape(x, (x.shape[0], 1, -1)), ops.reshape(kernels, (len(f1.data), 1, width)),
                   padding="same")
    y = ops.max_pool1d(ops.leaky_relu(y, slope), stride, stride)
    return _unbatch(ops.transpose(y, (0, 2, 1)), squeeze)


# -- LEAF ------------------------------------------------------------------------

@dataclass
class PoolParams:
    """Per-channel Gaussian widths (samples) of the low-pass pooling."""

    widths: object
    stride: int = STRIDE
    size: int = DEFAULT_WIDTH

    @classmethod
    def default(cls, n: int = 64, width: float = POOL_WIDTH_INIT, **kwargs) -> "PoolParams":
        return cls(widths=np.full(n, width), **kwargs)


@dataclass
class PcenParams:
    """Per-channel gain exponent, offset, root and smoothing; scalar floor."""

    alpha: object
    delta: object
    r: object
    s: object
    eps: float = 1e-6

    @classmethod
    def default(cls, n: int = 64, alpha: float = 0.96, delta: float = 2.0, r: float = 0.5,
                s: float = 0.04, eps: float = 1e-6) -> "PcenParams":
        return cls(alpha=np.full(n, alpha), delta=np.full(n, delta), r=np.full(n, r),
                   s=np.full(n, s), eps=eps)


def gaussian_lowpass_pool(x, pool: PoolParams) -> Tensor:
    """Per-channel Gaussian smoothing of ``x (B, C, T)``, sampled every ``pool.stride``.

    The kernel is normalized to unit area over the samples that fall inside
    the signal, so constant inputs map to the same constant at every frame,
    including the borders.
    """
    x = as_tensor(x)
    widths = as_tensor(pool.widths)
    if np.any(widths.data <= 0):
        raise ValueError("pooling widths must be positive")
    channels = x.shape[1]
    t = (np.arange(pool.size) - pool.size // 2)[None, :]
    kernel = ops.reshape(ops.exp(-(t * t) / (2.0 * ops.square(ops.reshape(widths, (-1, 1))))),
                         (channels, 1, pool.size))
    smoothed = ops.conv1d(x, kernel, stride=pool.stride, padding="same", groups=channels)
    mass = ops.conv1d(np.ones((1, channels, x.shape[2])), kernel, stride=pool.stride, padding="same",
                      groups=channels)
    return smoothed / mass


def pcen_ema(energy, s) -> Tensor:
    """Smoother ``M[t] = (1 - s) M[t-1] + s E[t]`` over frames, ``M[0] = E[0]``.

    ``energy`` is ``(M, C)`` or ``(B, M, C)``.
    """
    e = as_tensor(energy)
    if e.ndim == 2:
        return ops.ema_scan(ops.reshape(e, (1,) + e.shape), s)[0]
    return ops.ema_scan(e, s)


def pcen_forward(energy, params: PcenParams) -> Tensor:
    """``(E / (eps + M) ** alpha + delta) ** r - delta ** r`` with ``M = pcen_ema(E, s)``."""
    e = as_tensor(energy)
    if np.any(e.data < 0):
        raise ValueError("PCEN input must be non-negative")
    smooth = pcen_ema(e, params.s)
    alpha, delta, r = as_tensor(params.alpha), as_tensor(params.delta), as_tensor(params.r)
    gain = e / ops.pow(params.eps + smooth, alpha)
    return ops.pow(gain + delta, r) - ops.pow(delta, r)


def gabor_energy(wave, gabor: GaborParams, width: int = DEFAULT_WIDTH) -> Tensor:
    """Squared modulus of the complex Gabor filter outputs, ``(B, N, T)``."""
    x, _ = _batched(wave)
    real, imag = gabor_kernel(as_tensor(gabor.etas), as_tensor(gabor.sigmas), width)
    n = real.shape[0]
    x3 = ops.reshape(x, (x.shape[0], 1, -1))
    re = ops.conv1d(x3, ops.reshape(real, (n, 1, width)), padding="same")
    im = ops.conv1d(x3, ops.reshape(imag, (n, 1, width)), padding="same")
    return ops.square(re) + ops.square(im)


def leaf_forward(wave, gabor: GaborParams, pool: PoolParams, pcen: Optional[PcenParams],
                 width: int = DEFAULT_WIDTH) -> Tensor:
    """Gabor filtering, squared modulus, Gaussian pooling, then sPCEN.

    ``pcen=None`` returns the pooled energies without compression.
    """
    _, squeeze = _batched(wave)
    pooled = gaussian_lowpass_pool(gabor_energy(wave, gabor, width), pool)
    features = ops.transpose(pooled, (0, 2, 1))
    if pcen is not None:
        features = pcen_forward(features, pcen)
    return _unbatch(features, squeeze)


# -- parameter containers ----------------------------------------------------------

def project_sinc_band(band: np.ndarray) -> np.ndarray:
    """Clamp ``(N, 2)`` cutoffs into ``0 <= f1 < f2 <= 0.5``, swapping crossed pairs."""
    lo = np.clip(np.minimum(band[:, 0], band[:, 1]), 0.0, 0.5 - SINC_MIN_GAP)
    hi = np.clip(np.maximum(band[:, 0], band[:, 1]), SINC_MIN_GAP, 0.5)
    hi = np.maximum(hi, lo + SINC_MIN_GAP)
    return np.stack([lo, hi], axis=1)


@dataclass
class Frontend:
    """A frontend kind plus its named parameters.

    ``params`` keys are prefixed ``frontend.``; values are plain
    :class:`Parameter` objects so optimizers and checkpoints see them
    directly.
    """

    kind: str
    n_filters: int = 64
    width: int = DEFAULT_WIDTH
    stride: int = STRIDE
    sample_rate: int = SAMPLE_RATE
    params: Dict[str, Parameter] = field(default_factory=dict)

    def __call__(self, wave) -> Tensor:
        p = self.params
        if self.kind == "melfbank":
            return log_mel_forward(wave, self.n_filters, self.sample_rate)
        if self.kind == "sincnet":
            band = p["frontend.sinc.band"].value
            return sincnet_forward(wave, SincParams(band[:, 0], band[:, 1]), self.width, self.stride)
        pcen = PcenParams(alpha=p["frontend.pcen.alpha"].value, delta=p["frontend.pcen.delta"].value,
                          r=p["frontend.pcen.r"].value, s=p["frontend.pcen.s"].value)
        gabor = GaborParams(etas=p["frontend.gabor.eta"].value, sigmas=p["frontend.gabor.sigma"].value)
        pool = PoolParams(widths=p["frontend.pool.width"].value, stride=self.stride, size=self.width)
        return leaf_forward(wave, gabor, pool, pcen, self.width)

    @property
    def learnable(self) -> bool:
        return self.kind != "melfbank"

    def filter_params(self):
        """Current filter parameters as plain arrays."""
        if self.kind == "sincnet":
            band = self.params["frontend.sinc.band"].data
            return SincParams(band[:, 0].copy(), band[:, 1].copy())
        if self.kind in ("leaf", "leaf-fixed-pcen"):
            return GaborParams(self.params["frontend.gabor.eta"].data.copy(),
                               self.params["frontend.gabor.sigma"].data.copy())
        raise ValueError(f"{self.kind} frontend has no learnable filters")


def make_frontend(kind: str, init: InitScheme | str = "mel", n_filters: int = 64,
                  width: int = DEFAULT_WIDTH, stride: int = STRIDE,
                  sample_rate: int = SAMPLE_RATE) -> Frontend:
    """Build a frontend with freshly initialized parameters."""
    if kind not in FRONTENDS:
        raise ValueError(f"unknown frontend {kind!r}; expected one of {FRONTENDS}")
    scheme = InitScheme(init) if isinstance(init, str) else init
    fe = Frontend(kind, n_filters, width, stride, sample_rate)
    if kind == "melfbank":
        if scheme.kind != "mel":
            raise ValueError("the mel filterbank frontend only supports init='mel'")
        return fe
    if kind == "sincnet":
        sp = init_params(scheme, "sinc", n_filters, sample_rate)
        band = np.stack([sp.f1s, sp.f2s], axis=1)
        fe.params["frontend.sinc.band"] = Parameter("frontend.sinc.band", band, constraint=project_sinc_band)
    else:
        gp = init_params(scheme, "gabor", n_filters, sample_rate)
        pcen = PcenParams.default(n_filters)
        learn_pcen = kind == "leaf"
        entries = [
            ("frontend.gabor.eta", gp.etas, True, (RANDOM_LOW, RANDOM_HIGH)),
            ("frontend.gabor.sigma", gp.sigmas, True, (SIGMA_MIN, None)),
            ("frontend.pool.width", PoolParams.default(n_filters).widths, True, (POOL_WIDTH_MIN, None)),
            ("frontend.pcen.alpha", pcen.alpha, learn_pcen, (0.0, 1.0)),
            ("frontend.pcen.delta", pcen.delta, learn_pcen, (0.0, None)),
            ("frontend.pcen.r", pcen.r, learn_pcen, (1e-3, 1.0)),
            ("frontend.pcen.s", pcen.s, learn_pcen, (0.0, 1.0)),
        ]
        for name, value, trainable, box in entries:
            fe.params[name] = Parameter(name, np.array(value, dtype=np.float64), trainable, box)
    for p in fe.params.values():
        p.project()
    return fe

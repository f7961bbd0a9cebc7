"""Mel, Gabor and sinc filterbanks: design, initialization and spectral analysis.

Frequencies passed to kernels are normalized (cycles per sample, Nyquist at
0.5). Kernel builders accept plain arrays or :class:`Tensor` values; with
tensors they stay differentiable, which is how the learnable frontends use
them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import SAMPLE_RATE
from .diffcore import Tensor, ops

DEFAULT_FMIN = 60.0
DEFAULT_FMAX = 7800.0
DEFAULT_WIDTH = 401
ANALYSIS_NFFT = 8192

RANDOM_LOW, RANDOM_HIGH = 0.005, 0.495
TRUNCN_MEAN, TRUNCN_STD = 0.25, 0.1

_FWHM_TO_SIGMA = np.sqrt(2.0 * np.log(2.0)) / np.pi

SCHEMES = ("mel", "uniform", "truncn")
_SCHEME_ALIASES = {"truncated-normal": "truncn", "truncated_normal": "truncn", "truncnorm": "truncn"}


def mel_scale(f):
    """Hertz to mel, ``2595 * log10(1 + f / 700)``."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequency must be non-negative")
    m = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(m) if m.ndim == 0 else m


def mel_inverse(m):
    """Mel to hertz."""
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError("mel value must be non-negative")
    f = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(f) if f.ndim == 0 else f


def mel_points(n_points: int, f_min: float = DEFAULT_FMIN, f_max: float = DEFAULT_FMAX) -> np.ndarray:
    """``n_points`` frequencies (Hz) equally spaced on the mel scale, endpoints included."""
    return mel_inverse(np.linspace(mel_scale(f_min), mel_scale(f_max), n_points))


def mel_triangular_filterbank(n_filters: int = 64, n_fft: int = 400, f_min: float = DEFAULT_FMIN,
                              f_max: float = DEFAULT_FMAX, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular filters with apexes equally spaced on the mel scale.

    Returns an ``(n_filters, n_fft // 2 + 1)`` matrix. Triangles are built
    in continuous frequency, sampled at the DFT bins and scaled so each row
    peaks at exactly 1.

    Raises
    ------
    ValueError
        If the band is invalid or some filter falls between DFT bins and
        would be empty.
    """
    if not 0 <= f_min < f_max <= sample_rate / 2:
        raise ValueError(f"need 0 <= f_min < f_max <= {sample_rate / 2}, got [{f_min}, {f_max}]")
    pts = mel_points(n_filters + 2, f_min, f_max)
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, centre, upper = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    rising = (freqs - lower) / (centre - lower)
    falling = (upper - freqs) / (upper - centre)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    peaks = weights.max(axis=1)
    if np.any(peaks <= 0):
        empty = int(np.argmin(peaks))
        raise ValueError(f"n_fft={n_fft} too small: filter {empty} centred at {pts[empty + 1]:.1f} Hz "
                         "covers no DFT bin")
    return weights / peaks[:, None]


def _check_width(width: int) -> None:
    if width < 1 or width % 2 == 0:
        raise ValueError(f"kernel width must be a positive odd integer, got {width}")


def _offsets(width: int) -> np.ndarray:
    half = width // 2
    return np.arange(-half, half + 1, dtype=np.float64)


def gabor_kernel(eta, sigma, width: int = DEFAULT_WIDTH):
    """Complex Gabor filters as ``(real, imag)`` parts.

    ``phi(t) = exp(2j pi eta t) * exp(-t**2 / (2 sigma**2)) / (sqrt(2 pi) sigma)``
    for integer ``t`` in ``[-width // 2, width // 2]``. ``eta`` and ``sigma``
    may be scalars, ``(N,)`` arrays or tensors; the result has shape
    ``(N, width)`` (or ``(width,)`` for scalars).
    """
    _check_width(width)
    tensor_mode = isinstance(eta, Tensor) or isinstance(sigma, Tensor)
    sigma_values = sigma.data if isinstance(sigma, Tensor) else np.asarray(sigma, dtype=np.float64)
    if np.any(sigma_values <= 0):
        raise ValueError("sigma must be positive")
    scalar = np.ndim(eta.data if isinstance(eta, Tensor) else eta) == 0
    eta_col = ops.reshape(eta, (-1, 1))
    sigma_col = ops.reshape(sigma, (-1, 1))
    t = _offsets(width)[None, :]
    envelope = ops.exp(-(t * t) / (2.0 * ops.square(sigma_col))) / (np.sqrt(2.0 * np.pi) * sigma_col)
    phase = (2.0 * np.pi * t) * eta_col
    real, imag = ops.cos(phase) * envelope, ops.sin(phase) * envelope
    if tensor_mode:
        return (real[0], imag[0]) if scalar else (real, imag)
    real, imag = real.data, imag.data
    return (real[0], imag[0]) if scalar else (real, imag)


def sinc_kernel(f1, f2, width: int = DEFAULT_WIDTH):
    """Band-pass kernel ``2 f2 sinc(2 pi f2 n) - 2 f1 sinc(2 pi f1 n)``, no window.

    ``sinc(x) = sin(x) / x`` with ``sinc(0) = 1``. ``f1 == f2`` gives the
    zero kernel; ``f1 > f2`` is rejected.
    """
    _check_width(width)
    tensor_mode = isinstance(f1, Tensor) or isinstance(f2, Tensor)
    v1 = f1.data if isinstance(f1, Tensor) else np.asarray(f1, dtype=np.float64)
    v2 = f2.data if isinstance(f2, Tensor) else np.asarray(f2, dtype=np.float64)
    if np.any(v1 > v2):
        raise ValueError("sinc cutoffs must satisfy f1 <= f2")
    scalar = np.ndim(v1) == 0 and np.ndim(v2) == 0
    n = _offsets(width)[None, :]
    at_zero = (n == 0).astype(np.float64)
    inv_pi_n = np.divide(1.0, np.pi * n, out=np.zeros_like(n), where=n != 0)
    f1_col, f2_col = ops.reshape(f1, (-1, 1)), ops.reshape(f2, (-1, 1))
    off_centre = (ops.sin(2.0 * np.pi * n * f2_col) - ops.sin(2.0 * np.pi * n * f1_col)) * inv_pi_n
    kernel = off_centre + 2.0 * (f2_col - f1_col) * at_zero
    if tensor_mode:
        return kernel[0] if scalar else kernel
    return kernel.data[0] if scalar else kernel.data


def _as_complex(kernel) -> np.ndarray:
    if isinstance(kernel, tuple):
        real, imag = kernel
        return np.asarray(real, dtype=np.float64) + 1j * np.asarray(imag, dtype=np.float64)
    return np.asarray(kernel)


def frequency_response(kernel, n_fft: int = ANALYSIS_NFFT, full: bool = False) -> np.ndarray:
    """Magnitude of the zero-padded DFT of ``kernel``.

    ``kernel`` is a real array, a complex array or a ``(real, imag)`` pair.
    By default only bins ``0 .. n_fft // 2`` (DC to Nyquist) are returned.
    """
    k = _as_complex(kernel)
    if n_fft < k.shape[-1]:
        raise ValueError(f"n_fft={n_fft} shorter than kernel length {k.shape[-1]}")
    mag = np.abs(np.fft.fft(k, n_fft))
    return mag if full else mag[..., : n_fft // 2 + 1]


def response_frequencies(n_fft: int = ANALYSIS_NFFT, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    return np.arange(n_fft // 2 + 1) * sample_rate / n_fft


def measured_center_frequency(kernel, sample_rate: int = SAMPLE_RATE, n_fft: int = ANALYSIS_NFFT) -> float:
    """Frequency (Hz) of the response maximum; ties resolve to the lowest bin."""
    k = _as_complex(kernel)
    if not np.any(k):
        raise ValueError("cannot locate the centre of an all-zero kernel")
    mag = frequency_response(k, n_fft)
    return float(np.argmax(mag) * sample_rate / n_fft)


# -- parameterizations and initialization -----------------------------------------

@dataclass
class GaborParams:
    """Normalized centre frequencies ``etas`` and time-domain widths ``sigmas`` (samples)."""

    etas: np.ndarray
    sigmas: np.ndarray

    def __len__(self):
        return len(self.etas)


@dataclass
class SincParams:
    """Normalized lower/upper cutoffs."""

    f1s: np.ndarray
    f2s: np.ndarray

    def __len__(self):
        return len(self.f1s)


@dataclass(frozen=True)
class InitScheme:
    kind: str = "mel"
    seed: int = 0

    def __post_init__(self):
        kind = _SCHEME_ALIASES.get(self.kind, self.kind)
        if kind not in SCHEMES:
            raise ValueError(f"unknown init scheme {self.kind!r}; expected one of {SCHEMES}")
        object.__setattr__(self, "kind", kind)


def mel_gabor_design(n: int = 64, sample_rate: int = SAMPLE_RATE, f_min: float = DEFAULT_FMIN,
                     f_max: float = DEFAULT_FMAX) -> GaborParams:
    """Gabor filters matching the mel triangles' apexes and half-maximum widths.

    A Gaussian envelope of width ``sigma`` has a frequency-domain FWHM of
    ``sqrt(2 ln 2) / (pi sigma)`` cycles/sample; the triangle spanning
    ``[lower, upper]`` has FWHM ``(upper - lower) / 2``.
    """
    pts = mel_points(n + 2, f_min, f_max)
    fwhm = (pts[2:] - pts[:-2]) / 2.0
    return GaborParams(etas=pts[1:-1] / sample_rate, sigmas=_FWHM_TO_SIGMA * sample_rate / fwhm)


def mel_sinc_design(n: int = 64, sample_rate: int = SAMPLE_RATE, f_min: float = DEFAULT_FMIN,
                    f_max: float = DEFAULT_FMAX) -> SincParams:
    """Sinc bands between adjacent mel-spaced edges."""
    edges = mel_points(n + 1, f_min, f_max) / sample_rate
    return SincParams(f1s=edges[:-1], f2s=edges[1:])


def _random_centres(kind: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "uniform":
        return rng.uniform(RANDOM_LOW, RANDOM_HIGH, size=n)
    a = (RANDOM_LOW - TRUNCN_MEAN) / TRUNCN_STD
    b = (RANDOM_HIGH - TRUNCN_MEAN) / TRUNCN_STD
    return stats.truncnorm.rvs(a, b, loc=TRUNCN_MEAN, scale=TRUNCN_STD, size=n, random_state=rng)


def init_params(scheme: InitScheme | str, family: str, n: int = 64, sample_rate: int = SAMPLE_RATE,
                f_min: float = DEFAULT_FMIN, f_max: float = DEFAULT_FMAX):
    """Initial filter parameters for ``family`` in ``{"gabor", "sinc"}``.

    Random schemes draw centres i.i.d. and widths uniformly between the
    extremes of the mel design, so all schemes share a bandwidth range.
    """
    if isinstance(scheme, str):
        scheme = InitScheme(scheme)
    if family not in ("gabor", "sinc"):
        raise ValueError(f"unknown filter family {family!r}")
    design = (mel_gabor_design if family == "gabor" else mel_sinc_design)(n, sample_rate, f_min, f_max)
    if scheme.kind == "mel":
        return design
    rng = np.random.default_rng(scheme.seed)
    centres = _random_centres(scheme.kind, n, rng)
    if family == "gabor":
        sigmas = rng.uniform(design.sigmas.min(), design.sigmas.max(), size=n)
        return GaborParams(etas=centres, sigmas=sigmas)
    widths = design.f2s - design.f1s
    bands = rng.uniform(widths.min(), widths.max(), size=n)
    f1s = np.clip(centres - bands / 2.0, 0.0, 0.5)
    f2s = np.clip(centres + bands / 2.0, 0.0, 0.5)
    return SincParams(f1s=f1s, f2s=f2s)


def center_frequencies_hz(params, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Design centre of each filter in channel order (Gabor ``eta``, sinc band midpoint)."""
    if isinstance(params, GaborParams):
        return np.asarray(params.etas) * sample_rate
    return (np.asarray(params.f1s) + np.asarray(params.f2s)) / 2.0 * sample_rate

"""WAV ingestion, cropping, and the labelled synthetic corpus.

The synthetic corpus stands in for large labelled audio sets. Each class is
a family of signals whose identity lives in its spectro-temporal structure
(steady tones, sweeps, amplitude modulation, band-limited noise, harmonic
stacks); per-clip frequencies are drawn inside the class band, so the raw
waveform is not linearly separable. By default every clip also carries
tone-burst interference that changes frequency every 100 ms, which is
uninformative about the class and differs between crops of one clip.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.io import wavfile

from . import SAMPLE_RATE

CLASS_KINDS = ("pure-tone", "chirp", "am-tone", "noise", "harmonic")

# adjacent, non-overlapping bands for the four default classes
DEFAULT_BANDS = {
    "pure-tone": (200.0, 700.0),
    "chirp": (700.0, 1800.0),
    "am-tone": (1800.0, 3500.0),
    "noise": (3500.0, 7000.0),
    "harmonic": (100.0, 300.0),
}


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    label: Optional[int] = None

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def read_wav(path) -> AudioClip:
    """Load a 16 kHz PCM16 or float32 WAV file as mono floats.

    Stereo is averaged to mono and PCM16 is scaled by ``1 / 32768``.
    Other sample rates are rejected, never resampled.
    """
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise ValueError(f"unsupported WAV file {path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format {data.dtype} in {path}; need PCM16 or float32")
    if rate != SAMPLE_RATE:
        raise ValueError(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE} Hz (no resampling)")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if not np.all(np.isfinite(samples)):
        raise ValueError(f"{path}: non-finite samples")
    return AudioClip(samples, rate)


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE, pcm16: bool = False) -> None:
    samples = np.asarray(samples)
    if pcm16:
        data = np.clip(np.round(samples * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = samples.astype(np.float32)
    wavfile.write(path, sample_rate, data)


def random_crop(clip, length: int, rng: np.random.Generator):
    """Contiguous ``length``-sample segment at a uniform offset; short input is right-padded with zeros."""
    samples = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    n = len(samples)
    if n >= length:
        start = int(rng.integers(0, n - length + 1))
        out = samples[start:start + length].copy()
    else:
        out = np.concatenate([samples, np.zeros(length - n)])
    if isinstance(clip, AudioClip):
        return AudioClip(out, clip.sample_rate, clip.label)
    return out


# -- synthesis -------------------------------------------------------------------

def _band_noise(n: int, low: float, high: float, rng: np.random.Generator, sample_rate: int) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec[(freqs < low) | (freqs > high)] = 0.0
    return np.fft.irfft(spec, n)


def synthesize(kind: str, n_samples: int, band: Tuple[float, float], rng: np.random.Generator,
               sample_rate: int = SAMPLE_RATE, freq: Optional[float] = None) -> np.ndarray:
    """One clean (un-normalized) signal of the given class kind.

    ``freq`` pins the tone/carrier/start frequency instead of drawing it.
    """
    low, high = band
    t = np.arange(n_samples) / sample_rate
    f = rng.uniform(low, high) if freq is None else freq
    phase = rng.uniform(0, 2 * np.pi)
    if kind == "pure-tone":
        return np.sin(2 * np.pi * f * t + phase)
    if kind == "chirp":
        # sweep from the lower third of the band to the upper third (or back)
        third = (high - low) / 3.0
        if freq is None:
            f = rng.uniform(low, low + third)
        f_end = rng.uniform(high - third, high)
        if rng.random() < 0.5:
            f, f_end = f_end, f
        duration = n_samples / sample_rate
        return np.sin(2 * np.pi * (f * t + (f_end - f) * t * t / (2 * duration)) + phase)
    if kind == "am-tone":
        rate = rng.uniform(3.0, 12.0)
        envelope = 1.0 + 0.9 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
        return envelope * np.sin(2 * np.pi * f * t + phase)
    if kind == "noise":
        width = rng.uniform(0.1, 0.3) * (high - low)
        start = rng.uniform(low, high - width) if freq is None else freq
        return _band_noise(n_samples, start, start + width, rng, sample_rate)
    if kind == "harmonic":
        out = np.zeros(n_samples)
        for k in range(1, 6):
            if k * f < sample_rate / 2:
                out += np.sin(2 * np.pi * k * f * t + rng.uniform(0, 2 * np.pi)) / k
        return out
    raise ValueError(f"unknown class kind {kind!r}; expected one of {CLASS_KINDS}")


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x)))


@dataclass
class SynthSpec:
    """Recipe for :func:`make_synthetic_corpus`.

    ``snr_db`` sets the white-noise floor against the target ``rms``;
    ``interference_db`` (``None`` disables it) sets the level of the
    hopping tone bursts relative to the class signal.
    """

    classes: Tuple[str, ...] = ("pure-tone", "chirp", "am-tone", "noise")
    bands: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    clips_per_class: int = 200
    clip_seconds: float = 2.0
    snr_db: float = 20.0
    rms: float = 0.1
    seed: int = 0
    sample_rate: int = SAMPLE_RATE
    interference_db: Optional[float] = -6.0
    interference_hop: float = 0.1

    def __post_init__(self):
        self.classes = tuple(self.classes)
        if len(self.classes) < 2:
            raise ValueError("a corpus needs at least 2 classes")
        for kind in self.classes:
            if kind not in CLASS_KINDS:
                raise ValueError(f"unknown class kind {kind!r}; expected one of {CLASS_KINDS}")
        bands = {k: tuple(self.bands.get(k, DEFAULT_BANDS[k])) for k in self.classes}
        for kind, (low, high) in bands.items():
            if not 0 < low < high < self.sample_rate / 2:
                raise ValueError(f"band for {kind!r} must lie inside (0, {self.sample_rate / 2}) Hz")
        self.bands = bands
        if self.clips_per_class < 1:
            raise ValueError("clips_per_class must be >= 1")
        if self.interference_hop <= 0:
            raise ValueError("interference_hop must be positive")

    def band(self, kind: str) -> Tuple[float, float]:
        return self.bands[kind]

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes), "bands": {k: list(v) for k, v in self.bands.items()},
            "clips_per_class": self.clips_per_class, "clip_seconds": self.clip_seconds,
            "snr_db": self.snr_db, "rms": self.rms, "seed": self.seed, "sample_rate": self.sample_rate,
            "interference_db": self.interference_db, "interference_hop": self.interference_hop,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        if "bands" in d:
            d["bands"] = {k: tuple(v) for k, v in d["bands"].items()}
        return cls(**d)


@dataclass
class Corpus:
    """Labelled clips with a train/valid/test assignment."""

    clips: List[AudioClip]
    labels: np.ndarray
    splits: np.ndarray
    class_names: Tuple[str, ...]

    def __len__(self):
        return len(self.clips)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, split: str) -> "Corpus":
        idx = np.flatnonzero(self.splits == split)
        return Corpus([self.clips[i] for i in idx], self.labels[idx], self.splits[idx], self.class_names)

    def waveforms(self) -> np.ndarray:
        return np.stack([c.samples for c in self.clips])


def _assign_splits(n: int, rng: np.random.Generator) -> np.ndarray:
    order = rng.permutation(n)
    n_test = max(1, n // 10) if n >= 3 else 0
    n_valid = n_test
    splits = np.empty(n, dtype=object)
    splits[order[:n_test]] = "test"
    splits[order[n_test:n_test + n_valid]] = "valid"
    splits[order[n_test + n_valid:]] = "train"
    return splits.astype(str)


def _warn_on_overlap(spec: SynthSpec) -> None:
    kinds = list(spec.classes)
    for i, a in enumerate(kinds):
        for b in kinds[i + 1:]:
            (a_lo, a_hi), (b_lo, b_hi) = spec.bands[a], spec.bands[b]
            if a_lo < b_hi and b_lo < a_hi:
                warnings.warn(f"class bands of {a!r} and {b!r} overlap", stacklevel=3)


def interference(n_samples: int, hop: int, rng: np.random.Generator, sample_rate: int = SAMPLE_RATE,
                 band: Tuple[float, float] = (100.0, 7500.0)) -> np.ndarray:
    """Unit-RMS sequence of tone bursts, one random frequency per ``hop`` samples.

    Each burst has raised-cosine edges so the switches add no clicks.
    """
    out = np.zeros(n_samples)
    ramp = min(hop // 8, 64)
    for start in range(0, n_samples, hop):
        stop = min(start + hop, n_samples)
        t = np.arange(stop - start) / sample_rate
        burst = np.sin(2 * np.pi * rng.uniform(*band) * t + rng.uniform(0, 2 * np.pi))
        if ramp and stop - start > 2 * ramp:
            edge = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
            burst[:ramp] *= edge
            burst[-ramp:] *= edge[::-1]
        out[start:stop] = burst
    return out / _rms(out)


def make_synthetic_corpus(spec: SynthSpec | None = None) -> Corpus:
    """Seed-deterministic, class-balanced corpus with stratified 8:1:1 splits.

    With ``interference_db`` set, every clip also carries tone bursts whose
    frequency jumps every ``interference_hop`` seconds, at that level
    relative to the class signal. They come from their own random stream.
    """
    spec = spec or SynthSpec()
    _warn_on_overlap(spec)
    rng = np.random.default_rng(spec.seed)
    distractor_rng = np.random.default_rng([spec.seed, 1])
    hop = max(1, int(round(spec.interference_hop * spec.sample_rate)))
    n_samples = int(round(spec.clip_seconds * spec.sample_rate))
    clips, labels, splits = [], [], []
    for label, kind in enumerate(spec.classes):
        for _ in range(spec.clips_per_class):
            clean = synthesize(kind, n_samples, spec.bands[kind], rng, spec.sample_rate)
            clean *= spec.rms / _rms(clean)
            if spec.interference_db is not None:
                level = spec.rms * 10.0 ** (spec.interference_db / 20.0)
                clean = clean + level * interference(n_samples, hop, distractor_rng, spec.sample_rate)
            noise = rng.standard_normal(n_samples) * spec.rms * 10.0 ** (-spec.snr_db / 20.0)
            mix = clean + noise
            mix *= spec.rms / _rms(mix)
            peak = np.max(np.abs(mix))
            if peak > 1.0:
                mix /= peak
            clips.append(AudioClip(mix, spec.sample_rate, label))
            labels.append(label)
        splits.extend(_assign_splits(spec.clips_per_class, rng))
    return Corpus(clips, np.array(labels), np.array(splits), tuple(spec.classes))


# -- manifests ---------------------------------------------------------------------

def write_corpus(corpus: Corpus, out_dir, manifest_name: str = "manifest.jsonl") -> str:
    """Write float32 WAVs plus a JSON-lines manifest ``{path, label, split}``.

    Paths in the manifest are relative to the manifest's directory.
    """
    wav_dir = os.path.join(out_dir, "wav")
    os.makedirs(wav_dir, exist_ok=True)
    manifest = os.path.join(out_dir, manifest_name)
    with open(manifest, "w") as fh:
        for i, (clip, label, split) in enumerate(zip(corpus.clips, corpus.labels, corpus.splits)):
            rel = os.path.join("wav", f"{i:05d}.wav")
            write_wav(os.path.join(out_dir, rel), clip.samples, clip.sample_rate)
            fh.write(json.dumps({"path": rel, "label": corpus.class_names[label], "split": str(split)}) + "\n")
    return manifest


def load_manifest(path) -> Corpus:
    """Read a manifest written by :func:`write_corpus` (or by hand)."""
    root = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            entry = json.loads(line)
            missing = {"path", "label", "split"} - set(entry)
            if missing:
                raise ValueError(f"{path}:{line_no}: missing fields {sorted(missing)}")
            entries.append(entry)
    if not entries:
        raise ValueError(f"{path}: empty manifest")
    names: List[str] = []
    for e in entries:
        if str(e["label"]) not in names:
            names.append(str(e["label"]))
    clips, labels, splits = [], [], []
    for e in entries:
        clip = read_wav(os.path.join(root, e["path"]))
        clip.label = names.index(str(e["label"]))
        clips.append(clip)
        labels.append(clip.label)
        splits.append(e["split"])
    return Corpus(clips, np.array(labels), np.array(splits), tuple(names))


def stack_crops(clips: Sequence[AudioClip], length: int, rng: np.random.Generator) -> np.ndarray:
    return np.stack([random_crop(c, length, rng).samples for c in clips])

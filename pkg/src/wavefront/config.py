"""Run configuration shared by the training loops and the command line."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Tuple

from . import SAMPLE_RATE
from .dataio import SynthSpec
from .filterbank import DEFAULT_WIDTH, SCHEMES
from .frontend import FRONTENDS, STRIDE

OBJECTIVES = ("supervised", "cola")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass
class RunConfig:
    """Every knob of a training run. All fields have defaults.

    ``manifest`` selects an on-disk corpus; when it is ``None`` the corpus
    is generated from ``synth``.
    """

    frontend: str = "leaf"
    init: str = "mel"
    objective: str = "supervised"
    seed: int = 0
    n_filters: int = 64
    filter_width: int = DEFAULT_WIDTH
    stride: int = STRIDE
    segment_ms: float = 960.0
    encoder_channels: Tuple[int, ...] = (16, 32, 64, 128)
    embed_dim: int = 128
    proj_dim: int = 512
    batch_size: int = 64
    epochs: int = 30
    base_lr: float = 5e-4
    warmup_frac: float = 0.05
    weight_decay: float = 1e-4
    micro_batch: int = 8
    eval_crops: int = 1
    probe_epochs: int = 100
    probe_lr: float = 1e-2
    manifest: Optional[str] = None
    synth: dict = field(default_factory=dict)

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        self.validate()

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_ms * SAMPLE_RATE / 1000.0))

    def synth_spec(self) -> SynthSpec:
        return SynthSpec.from_dict(self.synth)

    def validate(self) -> None:
        if self.frontend not in FRONTENDS:
            raise ConfigError("frontend", f"{self.frontend!r} not in {FRONTENDS}")
        if self.init not in SCHEMES:
            raise ConfigError("init", f"{self.init!r} not in {SCHEMES}")
        if self.frontend == "melfbank" and self.init != "mel":
            raise ConfigError("init", "the melfbank frontend only supports init 'mel'")
        if self.objective not in OBJECTIVES:
            raise ConfigError("objective", f"{self.objective!r} not in {OBJECTIVES}")
        positive = ("n_filters", "stride", "embed_dim", "proj_dim", "batch_size", "micro_batch",
                    "eval_crops", "segment_ms", "base_lr")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be positive")
        for name in ("epochs", "probe_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be non-negative")
        if self.filter_width < 1 or self.filter_width % 2 == 0:
            raise ConfigError("filter_width", "must be a positive odd integer")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise ConfigError("warmup_frac", "must lie in [0, 1]")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay", "must be non-negative")
        if self.embed_dim < 8:
            raise ConfigError("embed_dim", "must be >= 8")
        if not self.encoder_channels or min(self.encoder_channels) < 1:
            raise ConfigError("encoder_channels", "need at least one block with positive width")
        if not isinstance(self.synth, dict):
            raise ConfigError("synth", "must be a JSON object")
        if self.manifest is None:
            try:
                self.synth_spec()
            except (TypeError, ValueError) as exc:
                raise ConfigError("synth", str(exc)) from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown config field")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError("config", str(exc)) from exc

    def replace(self, **overrides) -> "RunConfig":
        d = self.to_dict()
        d.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a JSON object")
    return RunConfig.from_dict(data)

"""Supervised and contrastive training loops plus linear-probe evaluation.

All randomness is derived from the run seed and the step counter, so a
run resumed from a checkpoint draws exactly the batches and crops it
would have drawn without the interruption.

Frontend activations are large (``B x N x T`` floats), so every batch is
pushed through the backbone in micro-batches. Supervised gradients are
accumulated chunk by chunk (exact for a mean loss). The contrastive loss
couples the whole batch, so it is handled in two passes: embeddings are
computed without a graph, the loss is differentiated with respect to
them, and each chunk is then recomputed with a graph and back-propagated
from its embedding cotangent.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from ..config import RunConfig
from ..dataio import AudioClip, Corpus
from ..diffcore import Parameter, Tensor, backprop, no_grad, ops
from ..filterbank import InitScheme
from ..frontend import Frontend, make_frontend
from ..model import (EncoderConfig, bilinear_similarity, classify, contrastive_loss, encode,
                     identification_accuracy, init_bilinear, init_classifier, init_encoder,
                     init_projection, project)
from .checkpoint import Checkpoint
from .metrics import metrics
from .optim import OptimizerState, Schedule, adamw_step, lr_at

_STREAM_INIT, _STREAM_ORDER, _STREAM_CROPS, _STREAM_PROBE = 0, 1, 2, 3


def _rng(seed: int, stream: int, *counters: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, *counters])


@dataclass
class Model:
    """Frontend, encoder and task heads sharing one flat parameter table."""

    frontend: Frontend
    encoder_cfg: EncoderConfig
    params: Dict[str, Parameter]
    n_classes: int = 0

    @property
    def backbone_names(self) -> List[str]:
        return sorted(n for n in self.params if n.startswith(("frontend.", "encoder.")))

    def embed(self, wave) -> Tensor:
        return encode(self.frontend(wave), self.params, self.encoder_cfg)

    def project(self, h) -> Tensor:
        return project(h, self.params)

    def logits(self, h) -> Tensor:
        return classify(h, self.params)

    def trainable(self) -> Dict[str, Parameter]:
        return {n: p for n, p in self.params.items() if p.trainable}

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}


def build_model(cfg: RunConfig, n_classes: int = 0) -> Model:
    """Fresh model for ``cfg``; heads follow the objective (and ``n_classes``)."""
    frontend = make_frontend(cfg.frontend, InitScheme(cfg.init, cfg.seed), cfg.n_filters,
                             cfg.filter_width, cfg.stride)
    enc_cfg = EncoderConfig(cfg.encoder_channels, cfg.embed_dim)
    rng = _rng(cfg.seed, _STREAM_INIT)
    params = dict(frontend.params)
    params.update(init_encoder(enc_cfg, rng))
    if cfg.objective == "cola":
        params.update(init_projection(cfg.embed_dim, cfg.proj_dim, rng))
        params.update(init_bilinear(cfg.proj_dim, rng))
    if n_classes:
        params.update(init_classifier(cfg.embed_dim, n_classes, rng))
    return Model(frontend, enc_cfg, params, n_classes)


def model_from_checkpoint(ckpt: Checkpoint) -> Model:
    cfg = RunConfig.from_dict(ckpt.config)
    model = build_model(cfg, int(ckpt.meta.get("n_classes", 0)))
    missing = sorted(set(model.params) ^ set(ckpt.params))
    if missing:
        raise ValueError(f"checkpoint parameters do not match the configured model: {missing}")
    for name, p in model.params.items():
        value = ckpt.params[name]
        if value.shape != p.shape:
            raise ValueError(f"{name}: checkpoint shape {value.shape} vs model {p.shape}")
        p.value.data = value.copy()
        if name in ckpt.trainable:
            p.set_trainable(bool(ckpt.trainable[name]))
    return model


def _zero_grads(params: Dict[str, Parameter]) -> None:
    for p in params.values():
        p.value.grad = None


def _collect_grads(params: Dict[str, Parameter]) -> Dict[str, np.ndarray]:
    grads = {}
    for name, p in params.items():
        if p.trainable:
            grads[name] = np.zeros(p.shape) if p.value.grad is None else p.value.grad
            p.value.grad = None
    return grads


def _chunks(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def embed_waves(model: Model, waves: np.ndarray, micro_batch: int = 8) -> np.ndarray:
    """Backbone embeddings ``(B, D)`` without recording a graph."""
    with no_grad():
        return np.concatenate([model.embed(waves[sl]).data for sl in _chunks(len(waves), micro_batch)])


def eval_crops(clip: AudioClip, length: int, count: int) -> np.ndarray:
    """``count`` evenly spaced crops (a single centered crop for ``count == 1``)."""
    samples = clip.samples
    if len(samples) <= length:
        return np.concatenate([samples, np.zeros(length - len(samples))])[None, :]
    span = len(samples) - length
    starts = [span // 2] if count == 1 else np.linspace(0, span, count).round().astype(int)
    return np.stack([samples[s:s + length] for s in starts])


def embed_clips(model: Model, clips, cfg: RunConfig) -> np.ndarray:
    """Clip embeddings: mean over ``cfg.eval_crops`` deterministic crops."""
    crops = np.concatenate([eval_crops(c, cfg.segment_samples, cfg.eval_crops) for c in clips])
    h = embed_waves(model, crops, cfg.micro_batch)
    return h.reshape(len(clips), -1, h.shape[-1]).mean(axis=1)


# -- gradient passes ------------------------------------------------------------------

def supervised_grads(model: Model, waves: np.ndarray, targets: np.ndarray, micro_batch: int):
    """Mean-loss gradients over the batch, accumulated chunk by chunk."""
    _zero_grads(model.params)
    n = len(waves)
    multilabel = targets.ndim == 2
    loss, logits = 0.0, []
    for sl in _chunks(n, micro_batch):
        out = model.logits(model.embed(waves[sl]))
        if multilabel:
            chunk_loss = ops.sigmoid_binary_cross_entropy(out, targets[sl])
        else:
            chunk_loss = ops.softmax_cross_entropy(out, targets[sl])
        scaled = chunk_loss * ((sl.stop - sl.start) / n)
        backprop(scaled)
        loss += float(scaled.data)
        logits.append(out.data)
    return loss, np.concatenate(logits), _collect_grads(model.params)


def contrastive_grads(model: Model, anchors: np.ndarray, positives: np.ndarray, micro_batch: int):
    """COLA loss gradients by embedding-cotangent recomputation."""
    _zero_grads(model.params)
    h_a = Tensor(embed_waves(model, anchors, micro_batch), requires_grad=True)
    h_p = Tensor(embed_waves(model, positives, micro_batch), requires_grad=True)
    sims = bilinear_similarity(model.project(h_a), model.project(h_p), model.params["head.bilinear"].value)
    loss = contrastive_loss(sims)
    backprop(loss)
    if any(model.params[n].trainable for n in model.backbone_names):
        for waves, h in ((anchors, h_a), (positives, h_p)):
            for sl in _chunks(len(waves), micro_batch):
                backprop(model.embed(waves[sl]), seed=h.grad[sl])
    return float(loss.data), identification_accuracy(sims), _collect_grads(model.params)


# -- trainer ---------------------------------------------------------------------------

@dataclass
class Trainer:
    """Step-wise training state for one run; see :func:`train_supervised`."""

    cfg: RunConfig
    clips: List[AudioClip]
    labels: Optional[np.ndarray]
    model: Model
    optimizer: OptimizerState
    schedule: Schedule
    steps_per_epoch: int
    step: int = 0
    init_params: Dict[str, np.ndarray] = field(default_factory=dict)
    history: List[dict] = field(default_factory=list)
    class_names: tuple = ()
    _epoch_log: List[tuple] = field(default_factory=list)

    @classmethod
    def create(cls, cfg: RunConfig, corpus: Corpus, model: Optional[Model] = None) -> "Trainer":
        train = corpus.subset("train") if np.any(corpus.splits == "train") else corpus
        clips, labels = list(train.clips), train.labels
        if cfg.objective == "cola":
            need = 2 * cfg.segment_samples
            keep = [i for i, c in enumerate(clips) if len(c) >= need]
            if len(keep) < len(clips):
                warnings.warn(f"skipping {len(clips) - len(keep)} clips shorter than two segments "
                              f"({need} samples)")
            clips, labels = [clips[i] for i in keep], labels[keep]
        if not clips:
            raise ValueError("training corpus is empty")
        n_classes = corpus.n_classes if cfg.objective == "supervised" else 0
        if model is None:
            model = build_model(cfg, n_classes)
        spe = math.ceil(len(clips) / cfg.batch_size)
        total = spe * cfg.epochs
        trainer = cls(cfg, clips, labels, model, OptimizerState(weight_decay=cfg.weight_decay),
                      Schedule.for_run(total, cfg.warmup_frac, cfg.base_lr), spe,
                      class_names=tuple(corpus.class_names))
        trainer.init_params = {n: p.data.copy() for n, p in model.params.items() if n.startswith("frontend.")}
        return trainer

    @property
    def total_steps(self) -> int:
        return self.schedule.total_steps

    def batch_indices(self, step: int) -> np.ndarray:
        epoch, k = divmod(step, self.steps_per_epoch)
        order = _rng(self.cfg.seed, _STREAM_ORDER, epoch).permutation(len(self.clips))
        return order[k * self.cfg.batch_size:(k + 1) * self.cfg.batch_size]

    def crop_rng(self, step: int) -> np.random.Generator:
        return _rng(self.cfg.seed, _STREAM_CROPS, step)

    def _crop(self, clip: AudioClip, rng: np.random.Generator) -> np.ndarray:
        length = self.cfg.segment_samples
        n = len(clip)
        if n <= length:
            return np.concatenate([clip.samples, np.zeros(length - n)])
        start = int(rng.integers(0, n - length + 1))
        return clip.samples[start:start + length]

    def train_step(self) -> dict:
        """One optimizer step; returns ``{"loss", "accuracy"}`` for the batch."""
        if self.step >= self.total_steps:
            raise RuntimeError("training already finished")
        idx = self.batch_indices(self.step)
        rng = self.crop_rng(self.step)
        batch = [self.clips[i] for i in idx]
        mb = self.cfg.micro_batch
        if self.cfg.objective == "cola":
            anchors = np.stack([self._crop(c, rng) for c in batch])
            positives = np.stack([self._crop(c, rng) for c in batch])
            loss, acc, grads = contrastive_grads(self.model, anchors, positives, mb)
        else:
            waves = np.stack([self._crop(c, rng) for c in batch])
            targets = self.labels[idx]
            loss, logits, grads = supervised_grads(self.model, waves, targets, mb)
            if targets.ndim == 1:
                acc = float(np.mean(np.argmax(logits, axis=1) == targets))
            else:
                acc = float(np.mean((logits > 0) == targets.astype(bool)))
        lr = lr_at(self.step + 1, self.schedule)
        adamw_step(self.model.params, grads, self.optimizer, lr)
        self.step += 1
        self._epoch_log.append((loss, acc, len(idx)))
        if self.step % self.steps_per_epoch == 0:
            w = np.array([n for _, _, n in self._epoch_log], dtype=np.float64)
            self.history.append({
                "epoch": self.step // self.steps_per_epoch,
                "loss": float(np.dot(w, [l for l, _, _ in self._epoch_log]) / w.sum()),
                "accuracy": float(np.dot(w, [a for _, a, _ in self._epoch_log]) / w.sum()),
            })
            self._epoch_log = []
        return {"loss": loss, "accuracy": acc, "lr": lr}

    def run(self, log=None) -> Checkpoint:
        while self.step < self.total_steps:
            self.train_step()
            if log is not None and self.step % self.steps_per_epoch == 0:
                log(self.history[-1])
        return self.checkpoint()

    def checkpoint(self) -> Checkpoint:
        p = self.model.params
        return Checkpoint(
            config=self.cfg.to_dict(), config_hash=self.cfg.hash(), step=self.step,
            rng_state={"seed": self.cfg.seed, "next_crop_state": self.crop_rng(self.step).bit_generator.state},
            params={n: p[n].data.copy() for n in sorted(p)},
            trainable={n: bool(p[n].trainable) for n in sorted(p)},
            adam_m={n: m.copy() for n, m in self.optimizer.m.items()},
            adam_v={n: v.copy() for n, v in self.optimizer.v.items()},
            optimizer_step=self.optimizer.step,
            init_params={n: v.copy() for n, v in self.init_params.items()},
            meta={"n_classes": self.model.n_classes, "class_names": list(self.class_names),
                  "history": list(self.history), "objective": self.cfg.objective,
                  "epoch_log": [list(e) for e in self._epoch_log]},
        )

    @classmethod
    def resume(cls, ckpt: Checkpoint, corpus: Corpus) -> "Trainer":
        """Rebuild a trainer mid-run; later steps match an uninterrupted run bit for bit."""
        cfg = RunConfig.from_dict(ckpt.config)
        model = model_from_checkpoint(ckpt)
        trainer = cls.create(cfg, corpus, model)
        trainer.step = ckpt.step
        trainer.optimizer.m = {n: v.copy() for n, v in ckpt.adam_m.items()}
        trainer.optimizer.v = {n: v.copy() for n, v in ckpt.adam_v.items()}
        trainer.optimizer.step = ckpt.optimizer_step
        trainer.init_params = {n: v.copy() for n, v in ckpt.init_params.items()}
        trainer.history = list(ckpt.meta.get("history", []))
        trainer._epoch_log = [tuple(e) for e in ckpt.meta.get("epoch_log", [])]
        return trainer


def _with_objective(cfg: RunConfig, objective: str) -> RunConfig:
    return cfg if cfg.objective == objective else cfg.replace(objective=objective)


def train_supervised(corpus: Corpus, cfg: RunConfig, log=None) -> Checkpoint:
    """Train frontend, encoder and a classifier head with cross-entropy.

    Integer labels use softmax cross-entropy; an ``(N, C)`` binary label
    matrix switches to sigmoid binary cross-entropy.
    """
    if len(corpus) == 0:
        raise ValueError("training corpus is empty")
    return Trainer.create(_with_objective(cfg, "supervised"), corpus).run(log)


def train_contrastive(corpus: Corpus, cfg: RunConfig, log=None, model: Optional[Model] = None) -> Checkpoint:
    """COLA pretraining: two random crops per clip, in-batch negatives; labels are ignored."""
    if len(corpus) == 0:
        raise ValueError("training corpus is empty")
    return Trainer.create(_with_objective(cfg, "cola"), corpus, model).run(log)


def initial_checkpoint(cfg: RunConfig, corpus: Corpus) -> Checkpoint:
    """Untrained model as a checkpoint (the random-backbone baseline)."""
    return Trainer.create(cfg, corpus).checkpoint()


# -- evaluation ------------------------------------------------------------------------

def evaluate_classifier(ckpt: Checkpoint, corpus: Corpus, split: str = "test") -> Dict[str, float]:
    """Metrics of a supervised checkpoint's own head on one split."""
    model = model_from_checkpoint(ckpt)
    if not model.n_classes:
        raise ValueError("checkpoint has no classifier head")
    part = corpus.subset(split)
    if len(part) == 0:
        raise ValueError(f"split {split!r} is empty")
    cfg = RunConfig.from_dict(ckpt.config)
    with no_grad():
        logits = model.logits(embed_clips(model, part.clips, cfg)).data
    return metrics(logits, part.labels)


@dataclass
class ProbeResult:
    accuracy: float
    train_accuracy: float
    metrics: Dict[str, float]


def fit_linear_probe(train_x: np.ndarray, train_y: np.ndarray, test_x: np.ndarray, test_y: np.ndarray,
                     n_classes: int, epochs: int = 100, lr: float = 1e-2, seed: int = 0,
                     weight_decay: float = 1e-4) -> ProbeResult:
    """Softmax-regression head on fixed features, full-batch AdamW.

    Features are standardized with training-split statistics.
    """
    train_y, test_y = np.asarray(train_y), np.asarray(test_y)
    for y, x, name in ((train_y, train_x, "train"), (test_y, test_x, "test")):
        if len(y) != len(x):
            raise ValueError(f"{name}: {len(x)} embeddings but {len(y)} labels")
        if y.size and (y.min() < 0 or y.max() >= n_classes):
            raise ValueError(f"{name}: labels outside [0, {n_classes})")
    if len(train_y) == 0 or len(test_y) == 0:
        raise ValueError("probe needs non-empty train and test splits")
    mean = train_x.mean(axis=0)
    std = train_x.std(axis=0)
    std[std < 1e-12] = 1.0
    xs, xt = (train_x - mean) / std, (test_x - mean) / std
    head = init_classifier(train_x.shape[1], n_classes, _rng(seed, _STREAM_PROBE), prefix="probe")
    state = OptimizerState(weight_decay=weight_decay, decays=lambda n: n.endswith(".weight"))
    for _ in range(epochs):
        _zero_grads(head)
        backprop(ops.softmax_cross_entropy(classify(xs, head, prefix="probe"), train_y))
        adamw_step(head, _collect_grads(head), state, lr)
    with no_grad():
        train_logits = classify(xs, head, prefix="probe").data
        test_logits = classify(xt, head, prefix="probe").data
    train_acc = float(np.mean(np.argmax(train_logits, axis=1) == train_y))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m = metrics(test_logits, test_y)
    return ProbeResult(m["accuracy"], train_acc, m)


def linear_probe(ckpt: Checkpoint, corpus: Corpus, epochs: Optional[int] = None,
                 train_split: str = "train", test_split: str = "test") -> ProbeResult:
    """Held-out accuracy of a fresh linear head on the frozen backbone's embeddings."""
    cfg = RunConfig.from_dict(ckpt.config)
    model = model_from_checkpoint(ckpt)
    train, test = corpus.subset(train_split), corpus.subset(test_split)
    n_classes = corpus.n_classes
    for part in (train, test):
        if part.labels.size and (part.labels.min() < 0 or part.labels.max() >= n_classes):
            raise ValueError(f"labels outside the corpus's {n_classes} classes")
    if len(train) == 0 or len(test) == 0:
        raise ValueError("probe needs non-empty train and test splits")
    train_x = embed_clips(model, train.clips, cfg)
    test_x = embed_clips(model, test.clips, cfg)
    return fit_linear_probe(train_x, train.labels, test_x, test.labels, n_classes,
                            cfg.probe_epochs if epochs is None else epochs, cfg.probe_lr, cfg.seed)

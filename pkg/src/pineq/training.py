"""Supervised training, evaluation, and report generation.

This module connects the preprocessing front ends to the classifiers:

* :class:`FeatureStore` lazily turns corpus media into cached model-ready
  arrays (normalized Mel maps, patch tokens, channel-first image maps).
* :func:`weighted_smoothed_ce` is the training objective — class-weighted
  cross-entropy against label-smoothed targets.
* :func:`train` runs seeded mini-batch optimization (optionally preceded by
  masked-reconstruction pretraining for the token encoder) and returns the
  model plus a per-epoch loss trace; the result is a pure function of the
  (records, pairs, config) triple.
* :func:`evaluate` scores frozen models into a :class:`ConfusionMatrix`,
  and :func:`format_report` / :func:`format_csv` render result tables with
  stable, byte-identical output.

Mel features are standardized here, at the boundary between preprocessing
and models, with fixed constants measured on the synthetic generator's
output distribution; images arrive already standardized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .audio import MEL_BANDS, MEL_FRAMES, preprocess_audio
from .autodiff import Adam, ShapeError, Tensor, log_softmax
from .corpus import Corpus, MediaMeta, PineappleRecord
from .image import TARGET_SIZE, preprocess_image
from .models import (
    CnnClassifier,
    CrossModalConfig,
    CrossModalEncoder,
    EnsembleModel,
    MaePretrainer,
    patchify_audio,
    patchify_image,
)
from .nn import Module

# Fixed standardization for log-Mel features (mean ~-2.1, std ~3.9 over the
# default synthetic corpus; rounded so the constants are not corpus-bound).
AUDIO_FEATURE_MEAN = -2.0
AUDIO_FEATURE_SCALE = 4.0

MODEL_KINDS = ("cnn-unimodal", "ensemble", "crossmodal", "crossmodal-unimodal")
MODALITIES = ("audio", "visual")
N_CLASSES = 4


# ---------------------------------------------------------------------------
# feature store
# ---------------------------------------------------------------------------


class FeatureStore:
    """Lazy cache of model-ready feature arrays for one corpus.

    Each accessor computes the full preprocessing chain on first use and
    memoizes the result by (kind, media path), so repeated epochs and
    repeated experiment cells over the same corpus pay the DSP cost once.
    """

    def __init__(self, corpus: Corpus):
        self.corpus = corpus
        self._cache: Dict[Tuple[str, str], np.ndarray] = {}

    def _bytes(self, meta: MediaMeta) -> bytes:
        return self.corpus.media_path(meta).read_bytes()

    def _get(self, kind: str, meta: MediaMeta, compute) -> np.ndarray:
        key = (kind, meta.path)
        hit = self._cache.get(key)
        if hit is None:
            hit = self._cache[key] = compute()
        return hit

    def audio_map(self, meta: MediaMeta) -> np.ndarray:
        """Standardized (1024, 128) float32 log-Mel map."""
        def compute():
            mel = preprocess_audio(self._bytes(meta))
            return ((mel - AUDIO_FEATURE_MEAN) / AUDIO_FEATURE_SCALE).astype(np.float32)
        return self._get("audio-map", meta, compute)

    def audio_tokens(self, meta: MediaMeta) -> np.ndarray:
        """(512, 256) float32 patch tokens of the standardized Mel map."""
        return self._get("audio-tokens", meta,
                         lambda: patchify_audio(self.audio_map(meta)))

    def image_map(self, meta: MediaMeta) -> np.ndarray:
        """Channel-first (3, 224, 224) float32 standardized image."""
        def compute():
            img = preprocess_image(self._bytes(meta))
            return np.ascontiguousarray(img.transpose(2, 0, 1))
        return self._get("image-map", meta, compute)

    def image_tokens(self, meta: MediaMeta) -> np.ndarray:
        """(196, 768) float32 patch tokens of the standardized image."""
        def compute():
            return patchify_image(preprocess_image(self._bytes(meta)))
        return self._get("image-tokens", meta, compute)

    def clear(self) -> None:
        self._cache.clear()


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def weighted_smoothed_ce(logits: Tensor, labels: np.ndarray,
                         weights: Sequence[float], smoothing: float) -> Tensor:
    """Class-weighted cross-entropy against label-smoothed targets.

    Targets are ``(1 - eps) * onehot + eps / 4``; per-sample losses are
    weighted by the label's class weight and normalized by the sum of the
    weights that actually occur in the batch, so the scale is invariant to
    batch composition.
    """
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or logits.data.shape[1] != N_CLASSES:
        raise ValueError(f"logits must be (B, {N_CLASSES}), got {logits.data.shape}")
    if labels.shape != (logits.data.shape[0],):
        raise ValueError("labels must be a vector matching the batch size")
    if labels.size and (labels.min() < 0 or labels.max() >= N_CLASSES):
        raise ValueError("label out of range")
    if not 0.0 <= smoothing < 1.0:
        raise ValueError("smoothing must lie in [0, 1)")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (N_CLASSES,) or not np.all(w > 0):
        raise ValueError(f"weights must be {N_CLASSES} positive reals")

    b = labels.shape[0]
    target = np.full((b, N_CLASSES), smoothing / N_CLASSES)
    target[np.arange(b), labels] += 1.0 - smoothing
    sample_w = w[labels]
    # loss = sum_b w_b * <target_b, -log_softmax(logit_b)> / sum_b w_b
    coeff = -target * sample_w[:, None] / sample_w.sum()
    lp = log_softmax(logits, axis=-1)
    return (lp * Tensor(coeff.astype(lp.data.dtype))).sum()


def batch_weight_sum(labels: np.ndarray, weights: Sequence[float]) -> float:
    """Sum of the class weights occurring in ``labels`` (loss denominator)."""
    return float(np.asarray(weights, dtype=np.float64)[np.asarray(labels)].sum())


# ---------------------------------------------------------------------------
# confusion matrix + accuracy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionMatrix:
    """4x4 integer counts; rows are actual grades, columns predictions."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.shape != (N_CLASSES, N_CLASSES):
            raise ValueError(f"counts must be {N_CLASSES}x{N_CLASSES}")
        if not np.issubdtype(counts.dtype, np.integer):
            raise ValueError("counts must be integers")
        if (counts < 0).any():
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @classmethod
    def empty(cls) -> "ConfusionMatrix":
        return cls(np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def row_normalized(self) -> np.ndarray:
        """Rows rescaled to sum to 1; all-zero rows stay zero."""
        counts = self.counts.astype(np.float64)
        sums = counts.sum(axis=1, keepdims=True)
        return np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)


def accuracy(m: ConfusionMatrix) -> float:
    """Trace over total count."""
    if m.total == 0:
        raise ValueError("cannot compute accuracy of an empty matrix")
    return float(np.trace(m.counts)) / m.total


# ---------------------------------------------------------------------------
# training configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters for one training run."""

    model: str = "crossmodal"
    modality: str = "audio"
    epochs: int = 10
    batch: int = 16
    lr: float = 1e-3
    smoothing: float = 0.1
    class_weights: Optional[Tuple[float, float, float, float]] = None
    seed: int = 0
    pretrain_steps: int = 0

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model!r}")
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.smoothing < 1.0:
            raise ValueError("smoothing must lie in [0, 1)")
        if self.pretrain_steps < 0:
            raise ValueError("pretrain_steps must be >= 0")
        if self.class_weights is not None:
            w = tuple(float(x) for x in self.class_weights)
            if len(w) != N_CLASSES or any(x <= 0 for x in w):
                raise ValueError(f"class_weights must be {N_CLASSES} positive reals")
            object.__setattr__(self, "class_weights", w)


@dataclass
class TrainResult:
    model: Module
    losses: List[float]
    pretrain_losses: List[float]
    config: TrainConfig
    architecture: object


Example = Tuple[PineappleRecord, int, int]


def _collect_examples(records: Sequence[PineappleRecord],
                      pairs_by_id: Mapping[str, Iterable[Tuple[int, int]]]) -> List[Example]:
    examples: List[Example] = []
    for rec in records:
        for j, k in pairs_by_id.get(rec.record_id, ()):
            examples.append((rec, j, k))
    return examples


def _derive_weights(labels: np.ndarray) -> Tuple[float, float, float, float]:
    """Inverse-frequency weights over the examples; absent classes get 1."""
    counts = np.bincount(labels, minlength=N_CLASSES)
    total = counts.sum()
    return tuple(total / c if c else 1.0 for c in counts)


def build_model(cfg: TrainConfig, rng: np.random.Generator,
                architecture=None) -> Module:
    """Instantiate the model kind named by ``cfg`` with seeded weights."""
    if cfg.model in ("crossmodal", "crossmodal-unimodal"):
        arch = architecture if architecture is not None else CrossModalConfig()
        return CrossModalEncoder(arch, rng)
    arch = dict(architecture or {})
    if cfg.model == "ensemble":
        return EnsembleModel(rng, **arch)
    if cfg.modality == "audio":
        return CnnClassifier(rng, 1, (MEL_FRAMES, MEL_BANDS), **arch)
    return CnnClassifier(rng, 3, (TARGET_SIZE, TARGET_SIZE), **arch)


def trainable_parameters(model: Module, cfg: TrainConfig) -> List[Tensor]:
    """Parameters the supervised loss can reach.

    A single-stream run through the token encoder never touches the other
    modality's projection/position/type/block weights, so those are left
    out of the optimizer.
    """
    if cfg.model != "crossmodal-unimodal":
        return model.parameters()
    unused = "visual" if cfg.modality == "audio" else "audio"
    return [p for name, p in model.named_parameters().items()
            if not name.startswith(unused)]


def _regroup(tokens: np.ndarray, n_tokens: int, patch_dim: int) -> np.ndarray:
    """Adapt (B, T, D) tokens to a model expecting (n_tokens, patch_dim).

    When the model is configured with fewer, wider tokens than the native
    patch grid, runs of consecutive patches are merged into one token —
    the values are untouched, only the grouping changes.
    """
    b, t, d = tokens.shape
    if (t, d) == (n_tokens, patch_dim):
        return tokens
    if t * d != n_tokens * patch_dim or t % n_tokens:
        raise ShapeError(
            f"cannot regroup {t}x{d} patch tokens into {n_tokens}x{patch_dim}")
    return tokens.reshape(b, n_tokens, patch_dim)


def _audio_batch(model, store: FeatureStore, chunk: Sequence[Example]) -> np.ndarray:
    arr = np.stack([store.audio_tokens(r.audio[j]) for r, j, _ in chunk])
    return _regroup(arr, model.cfg.audio_tokens, model.cfg.audio_patch_dim)


def _visual_batch(model, store: FeatureStore, chunk: Sequence[Example]) -> np.ndarray:
    arr = np.stack([store.image_tokens(r.photos[k]) for r, _, k in chunk])
    return _regroup(arr, model.cfg.visual_tokens, model.cfg.visual_patch_dim)


def _forward(model: Module, cfg: TrainConfig, store: FeatureStore,
             chunk: Sequence[Example]) -> Tensor:
    """Logits for one batch of (record, soundtrack, photo) examples."""
    kind = cfg.model
    if kind == "cnn-unimodal":
        if cfg.modality == "audio":
            x = np.stack([store.audio_map(r.audio[j]) for r, j, _ in chunk])[:, None]
        else:
            x = np.stack([store.image_map(r.photos[k]) for r, _, k in chunk])
        return model.forward(x)
    if kind == "ensemble":
        mel = np.stack([store.audio_map(r.audio[j]) for r, j, _ in chunk])
        img = np.stack([store.image_map(r.photos[k]) for r, _, k in chunk])
        return model.forward(mel, img)
    if kind == "crossmodal":
        return model.forward_tokens(Tensor(_audio_batch(model, store, chunk)),
                                    Tensor(_visual_batch(model, store, chunk)))
    if cfg.modality == "audio":
        return model.unimodal_tokens(Tensor(_audio_batch(model, store, chunk)),
                                     "audio")
    return model.unimodal_tokens(Tensor(_visual_batch(model, store, chunk)),
                                 "visual")


def _pretrain(model: CrossModalEncoder, cfg: TrainConfig, store: FeatureStore,
              examples: Sequence[Example], init_rng: np.random.Generator,
              mask_rng: np.random.Generator) -> List[float]:
    """Masked-reconstruction + alignment warm-up of the encoder trunk."""
    pre = MaePretrainer(model, init_rng)
    opt = Adam(pre.pretrain_parameters(), lr=cfg.lr)
    shuffle = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    losses: List[float] = []
    n = len(examples)
    while len(losses) < cfg.pretrain_steps:
        order = shuffle.permutation(n)
        for start in range(0, n, cfg.batch):
            if len(losses) >= cfg.pretrain_steps:
                break
            chunk = [examples[i] for i in order[start:start + cfg.batch]]
            a = _audio_batch(model, store, chunk)
            v = _visual_batch(model, store, chunk)
            mask = pre.sample_mask(mask_rng, len(chunk))
            loss, _ = pre.loss(Tensor(a), Tensor(v), mask)
            loss.backward()
            opt.step()
            losses.append(loss.item())
    return losses


def train(store: FeatureStore, records: Sequence[PineappleRecord],
          pairs_by_id: Mapping[str, Iterable[Tuple[int, int]]],
          cfg: TrainConfig, architecture=None) -> TrainResult:
    """Mini-batch optimization of the smoothed weighted cross-entropy.

    Deterministic per seed: model initialization, pretraining masks, and
    epoch shuffles all derive from ``cfg.seed`` through separate streams.
    Class weights default to inverse example frequency over the training
    set. Returns the trained model and per-epoch weighted mean losses.
    """
    examples = _collect_examples(records, pairs_by_id)
    if not examples:
        raise ValueError("training set is empty")
    labels = np.array([int(rec.label) for rec, _, _ in examples])
    weights = cfg.class_weights or _derive_weights(labels)

    init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    mask_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    model = build_model(cfg, init_rng, architecture)

    pretrain_losses: List[float] = []
    if cfg.pretrain_steps:
        if not isinstance(model, CrossModalEncoder):
            raise ValueError("pretraining applies only to crossmodal kinds")
        pretrain_losses = _pretrain(model, cfg, store, examples,
                                    init_rng, mask_rng)

    opt = Adam(trainable_parameters(model, cfg), lr=cfg.lr)
    n = len(examples)
    epoch_losses: List[float] = []
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        num = 0.0
        den = 0.0
        for start in range(0, n, cfg.batch):
            idx = order[start:start + cfg.batch]
            chunk = [examples[i] for i in idx]
            logits = _forward(model, cfg, store, chunk)
            loss = weighted_smoothed_ce(logits, labels[idx], weights,
                                        cfg.smoothing)
            loss.backward()
            opt.step()
            wsum = batch_weight_sum(labels[idx], weights)
            num += loss.item() * wsum
            den += wsum
        epoch_losses.append(num / den)
    return TrainResult(model, epoch_losses, pretrain_losses, cfg, architecture)


def evaluate(model: Module, cfg: TrainConfig, store: FeatureStore,
             records: Sequence[PineappleRecord],
             pairs_by_id: Mapping[str, Iterable[Tuple[int, int]]],
             batch: int = 32) -> ConfusionMatrix:
    """Score a frozen model; argmax prediction, lowest index on ties."""
    examples = _collect_examples(records, pairs_by_id)
    if not examples:
        raise ValueError("evaluation set is empty")
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for start in range(0, len(examples), batch):
        chunk = examples[start:start + batch]
        logits = _forward(model, cfg, store, chunk).data
        preds = np.argmax(logits, axis=1)
        for (rec, _, _), pred in zip(chunk, preds):
            counts[int(rec.label), int(pred)] += 1
    return ConfusionMatrix(counts)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReportRow:
    model: str
    strategy: str
    samples: int
    accuracy: float
    seed: Optional[int] = None


_GRADE_NAMES = ("H", "SH", "SS", "S")


def format_report(rows: Sequence[ReportRow],
                  matrices: Sequence[Tuple[str, ConfusionMatrix]] = (),
                  header: Sequence[str] = ()) -> str:
    """Aligned text tables; identical inputs yield byte-identical output."""
    lines: List[str] = [f"# {h}" for h in header]
    with_seed = any(r.seed is not None for r in rows)
    cols = ["Model", "Strategy", "Samples"] + (["Seed"] if with_seed else []) \
        + ["Accuracy"]
    table = [cols]
    for r in rows:
        cells = [r.model, r.strategy, str(r.samples)]
        if with_seed:
            cells.append("" if r.seed is None else str(r.seed))
        cells.append(f"{r.accuracy:.2f}")
        table.append(cells)
    widths = [max(len(row[i]) for row in table) for i in range(len(cols))]
    for row in table:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    for title, matrix in matrices:
        lines.append("")
        lines.append(f"Confusion matrix ({title}), rows actual / columns predicted:")
        rn = matrix.row_normalized()
        for name, row in zip(_GRADE_NAMES, rn):
            lines.append(f"  {name:<2} " + " ".join(f"{v:.2f}" for v in row))
    return "\n".join(lines) + "\n"


def format_csv(rows: Sequence[ReportRow]) -> str:
    """Machine-readable rows; empty seed column for aggregated rows."""
    lines = ["model,strategy,samples,seed,accuracy"]
    for r in rows:
        seed = "" if r.seed is None else str(r.seed)
        lines.append(f"{r.model},{r.strategy},{r.samples},{seed},{r.accuracy:.6f}")
    return "\n".join(lines) + "\n"


def format_loss_trace(losses: Sequence[float]) -> str:
    lines = ["epoch,loss"]
    for i, loss in enumerate(losses, start=1):
        lines.append(f"{i},{loss:.6f}")
    return "\n".join(lines) + "\n"

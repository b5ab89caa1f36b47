"""Experiment-matrix orchestration: the grid behind the result tables.

For every (model, strategy, samples-per-record, seed) cell this module
splits the corpus 4:1 stratified by grade, samples training pairs with the
requested strategy, builds the fixed evaluation pairs for the held-out
records, trains from scratch, and scores a confusion matrix. Per-seed rows
are then averaged into aggregate rows, and everything is rendered as a
plain-text report plus CSV (and per-cell loss traces).

The whole run is a pure function of (spec, corpus): reruns reproduce the
report byte for byte. Independent cells may run in parallel worker
processes; the ``PQC_THREADS`` environment variable caps the worker count
(default 1, i.e. serial).
"""

from __future__ import annotations

import multiprocessing
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .corpus import (
    Corpus,
    InfeasibleSampleError,
    build_test_pairs,
    sample_corpus_pairs,
    stratified_split,
)
from .training import (
    ConfusionMatrix,
    FeatureStore,
    MODALITIES,
    ReportRow,
    TrainConfig,
    accuracy,
    evaluate,
    format_csv,
    format_loss_trace,
    format_report,
    train,
)

# CLI-facing model names -> (training kind, fixed modality or None)
MODEL_NAMES: Dict[str, Tuple[str, Optional[str]]] = {
    "cnn": ("cnn-unimodal", None),
    "ensemble": ("ensemble", None),
    "crossmodal": ("crossmodal", None),
    "crossmodal-audio": ("crossmodal-unimodal", "audio"),
    "crossmodal-visual": ("crossmodal-unimodal", "visual"),
}

STRATEGIES = ("random", "audio-major", "visual-major")


@dataclass(frozen=True)
class ExperimentSpec:
    """The full grid plus shared training hyper-parameters."""

    models: Tuple[str, ...]
    strategies: Tuple[str, ...]
    samples_per_record: Tuple[int, ...]
    seeds: Tuple[int, ...]
    epochs: int = 10
    batch: int = 16
    lr: float = 1e-3
    smoothing: float = 0.1
    pretrain_steps: int = 0
    modality: str = "audio"  # modality of plain-"cnn" cells

    def __post_init__(self):
        for name, values, valid in (("models", self.models, MODEL_NAMES),
                                    ("strategies", self.strategies, STRATEGIES)):
            if not values:
                raise ValueError(f"{name} must be non-empty")
            unknown = [v for v in values if v not in valid]
            if unknown:
                raise ValueError(f"unknown {name}: {unknown}")
        if not self.samples_per_record or any(s < 1 for s in self.samples_per_record):
            raise ValueError("samples_per_record must be non-empty positive ints")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        # delegate the shared hyper-parameter checks
        self.cell_config(self.models[0], seed=int(self.seeds[0]))

    def cell_config(self, model_name: str, seed: int) -> TrainConfig:
        kind, fixed_modality = MODEL_NAMES[model_name]
        return TrainConfig(model=kind, modality=fixed_modality or self.modality,
                           epochs=self.epochs, batch=self.batch, lr=self.lr,
                           smoothing=self.smoothing, seed=seed,
                           pretrain_steps=self.pretrain_steps)

    def cells(self) -> List[Tuple[str, str, int, int]]:
        return [(m, st, s, int(sd)) for m in self.models for st in self.strategies
                for s in self.samples_per_record for sd in self.seeds]


@dataclass(frozen=True)
class CellOutcome:
    model: str
    strategy: str
    samples_per_record: int
    seed: int
    samples_total: int
    accuracy: float
    confusion: ConfusionMatrix
    losses: Tuple[float, ...]
    pretrain_losses: Tuple[float, ...]
    train_ids: Tuple[str, ...]
    test_ids: Tuple[str, ...]


def _run_cell(spec: ExperimentSpec, corpus: Corpus, store: FeatureStore,
              architectures: Mapping[str, object],
              cell: Tuple[str, str, int, int]) -> CellOutcome:
    model_name, strategy, samples, seed = cell
    train_recs, test_recs = stratified_split(list(corpus.records), seed=seed)
    train_ids = tuple(r.record_id for r in train_recs)
    test_ids = tuple(r.record_id for r in test_recs)
    assert set(train_ids).isdisjoint(test_ids), "train/test records overlap"

    pairs = sample_corpus_pairs(train_recs, strategy, samples, seed=seed)
    test_pairs = {r.record_id: build_test_pairs(r) for r in test_recs}
    cfg = spec.cell_config(model_name, seed)
    result = train(store, train_recs, pairs, cfg,
                   architecture=architectures.get(model_name))
    confusion = evaluate(result.model, cfg, store, test_recs, test_pairs)
    return CellOutcome(model_name, strategy, samples, seed,
                       len(train_recs) * samples, accuracy(confusion),
                       confusion, tuple(result.losses),
                       tuple(result.pretrain_losses), train_ids, test_ids)


def _worker(args) -> CellOutcome:
    spec, corpus, architectures, cell = args
    return _run_cell(spec, corpus, FeatureStore(corpus), architectures, cell)


def _worker_count(n_cells: int) -> int:
    raw = os.environ.get("PQC_THREADS", "1").strip() or "1"
    try:
        limit = int(raw)
    except ValueError as exc:
        raise ValueError(f"PQC_THREADS must be an integer, got {raw!r}") from exc
    return max(1, min(limit, n_cells))


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    header: Tuple[str, ...]
    cells: Tuple[CellOutcome, ...]
    rows: List[ReportRow]
    aggregates: List[ReportRow]
    matrices: List[Tuple[str, ConfusionMatrix]]

    def report_text(self) -> str:
        per_seed = format_report(self.rows, header=self.header)
        means = format_report(self.aggregates, matrices=self.matrices)
        return f"{per_seed}\nMean over seeds:\n{means}"

    def csv_text(self) -> str:
        return format_csv(self.rows + self.aggregates)


def run_experiment(spec: ExperimentSpec, corpus: Corpus,
                   architectures: Optional[Mapping[str, object]] = None,
                   store: Optional[FeatureStore] = None,
                   extra_header: Sequence[str] = ()) -> ExperimentResult:
    """Execute every grid cell and assemble deterministic report rows."""
    capacity = corpus.soundtracks_per_record * corpus.photos_per_record
    for s in spec.samples_per_record:
        if s > capacity:
            raise InfeasibleSampleError(
                f"samples-per-record {s} exceeds the {capacity} pairs a record offers")
    architectures = dict(architectures or {})
    cells = spec.cells()

    workers = _worker_count(len(cells))
    if workers > 1:
        ctx = multiprocessing.get_context("spawn")
        with ctx.Pool(workers) as pool:
            outcomes = pool.map(
                _worker, [(spec, corpus, architectures, c) for c in cells])
    else:
        store = store if store is not None else FeatureStore(corpus)
        outcomes = [_run_cell(spec, corpus, store, architectures, c)
                    for c in cells]

    rows = [ReportRow(o.model, o.strategy, o.samples_total, o.accuracy, o.seed)
            for o in outcomes]
    aggregates: List[ReportRow] = []
    matrices: List[Tuple[str, ConfusionMatrix]] = []
    for m in spec.models:
        for st in spec.strategies:
            for s in spec.samples_per_record:
                group = [o for o in outcomes
                         if (o.model, o.strategy, o.samples_per_record) == (m, st, s)]
                mean_acc = float(np.mean([o.accuracy for o in group]))
                aggregates.append(ReportRow(m, st, group[0].samples_total, mean_acc))
                merged = ConfusionMatrix.empty()
                for o in group:
                    merged = merged.merge(o.confusion)
                matrices.append((f"{m}/{st}/S={s}", merged))

    header = tuple(extra_header) + (
        f"corpus: {corpus.root}",
        f"records: {len(corpus.records)}",
        f"media per record: {corpus.soundtracks_per_record} soundtracks, "
        f"{corpus.photos_per_record} photos",
        f"models: {' '.join(spec.models)}",
        f"strategies: {' '.join(spec.strategies)}",
        f"samples-per-record: {' '.join(map(str, spec.samples_per_record))}",
        f"seeds: {' '.join(map(str, spec.seeds))}",
        f"epochs: {spec.epochs}",
        f"batch: {spec.batch}",
        f"lr: {spec.lr}",
        f"smoothing: {spec.smoothing}",
        f"pretrain-steps: {spec.pretrain_steps}",
        f"modality: {spec.modality}",
    )
    return ExperimentResult(spec, header, tuple(outcomes), rows, aggregates,
                            matrices)


def write_outputs(result: ExperimentResult, out_dir: Path | str) -> List[Path]:
    """Write report.txt, results.csv, and per-cell loss traces; return paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in (("report.txt", result.report_text()),
                       ("results.csv", result.csv_text())):
        path = out / name
        path.write_text(text)
        written.append(path)
    for cell in result.cells:
        name = (f"loss_{cell.model}_{cell.strategy}"
                f"_s{cell.samples_per_record}_seed{cell.seed}.csv")
        path = out / name
        path.write_text(format_loss_trace(list(cell.losses)))
        written.append(path)
    return written

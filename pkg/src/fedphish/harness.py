"""Experiment orchestration over the (model, strategy) grid and report emission.

A run is ``load -> balance -> partition -> per-stream split/standardize ->
run_simulation`` for every requested cell. Every random choice is derived from
the master seed, so two runs with the same config write identical machine
reports. Wall-clock figures go to ``timing.json`` only.
"""

from __future__ import annotations

import contextlib
import csv
import io
import json
import logging
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__, data, kernels
from .continual import STRATEGY_ORDER, StrategyConfig, StrategyKind
from .errors import ConfigurationError, DataError, FedPhishError, ReportIOError
from .federated import (
    WINDOWS,
    PreparedStreams,
    RoundRecord,
    SimulationConfig,
    derive_seed,
    prepare_streams,
    run_simulation,
)
from .metrics import Metrics
from .models import TABLE_ORDER, ModelConfig, ModelKind
from .nn import ParamSet

log = logging.getLogger(__name__)

REPORT_FORMATS = ("csv", "json", "markdown")
REPORT_FILES = {"csv": "report.csv", "json": "report.json", "markdown": "report.md"}
TIMING_FILE = "timing.json"
CSV_COLUMNS = ("section", "model", "strategy", "round", "active_stream", "stream",
               "accuracy", "precision", "recall", "f1", "tp", "fp", "tn", "fn",
               "precision_undefined", "recall_undefined", "f1_undefined")


@contextlib.contextmanager
def stage(name: str):
    """Tag any library error escaping the block with the pipeline stage."""
    try:
        yield
    except FedPhishError as exc:
        if exc.stage is None:
            exc.with_stage(name)
        raise
    except OSError as exc:
        raise ReportIOError(str(exc)).with_stage(name) from exc


def _parse_list(value, parser, everything):
    if value is None or value == "all" or value == ["all"]:
        return tuple(everything)
    items = value.split(",") if isinstance(value, str) else list(value)
    out = []
    for item in items:
        kind = item if not isinstance(item, str) else parser(item)
        if kind not in out:
            out.append(kind)
    if not out:
        raise ConfigurationError("empty selection")
    return tuple(out)


def parse_formats(value) -> tuple[str, ...]:
    if value is None:
        return REPORT_FORMATS
    items = value.split(",") if isinstance(value, str) else list(value)
    out = []
    for item in (i.strip().lower() for i in items):
        if not item:
            continue
        if item == "md":
            item = "markdown"
        if item not in REPORT_FORMATS:
            raise ConfigurationError(f"unknown report format {item!r}; choose from {REPORT_FORMATS}")
        if item not in out:
            out.append(item)
    return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat run configuration; field names double as CLI flags and JSON config keys."""

    dataset: str | None = None  # None -> built-in synthetic corpus
    raw_urls: bool | None = None  # None -> auto-detect a url,label header
    synthetic_records: int = 5000
    models: tuple[ModelKind, ...] = TABLE_ORDER
    strategies: tuple[StrategyKind, ...] = STRATEGY_ORDER
    # federated protocol
    rounds: int = 20
    nodes: int = 3
    local_epochs: int = 10
    lr: float = 0.001
    streams: int = 4
    batch_size: int = 16
    schedule: tuple[int, ...] | None = None
    window: str = "cumulative"
    partition: str = "shuffled"
    normalize: bool = True
    test_fraction: float = 0.2
    seed: int = 0
    # model architecture
    hidden_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    dropout_rate: float = 0.2
    attn_tokens: str = "single"
    mlp_hidden: int = 32
    deep_hiddens: tuple[int, ...] = (64, 32, 16)
    rnn_hidden: int = 32
    # strategy hyperparameters
    buffer_capacity: int = 500
    replay_ratio: float = 1.0
    lwf_lambda: float = 1.0
    temperature: float = 2.0
    candidate_count: int = 50
    retrieve_count: int | None = None
    optimizer: str = "adam"
    # outputs
    out: str = "results"
    formats: tuple[str, ...] = REPORT_FORMATS
    save_model: str | None = None
    load_model: str | None = None
    jobs: int = 1

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "models", _parse_list(self.models, ModelKind.parse, TABLE_ORDER))
        set_(self, "strategies", _parse_list(self.strategies, StrategyKind.parse, STRATEGY_ORDER))
        set_(self, "formats", parse_formats(self.formats))
        set_(self, "deep_hiddens", tuple(int(w) for w in self.deep_hiddens))
        if self.schedule is not None:
            set_(self, "schedule", tuple(int(s) for s in self.schedule))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        d = {k.replace("-", "_"): v for k, v in d.items()}
        if "format" in d:
            d["formats"] = d.pop("format")
        if "no_normalize" in d:
            d["normalize"] = not d.pop("no_normalize")
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {unknown}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigurationError(f"config file {path} must hold a JSON object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["models"] = [m.value for m in self.models]
        d["strategies"] = [s.value for s in self.strategies]
        d["formats"] = list(self.formats)
        d["deep_hiddens"] = list(self.deep_hiddens)
        if self.schedule is not None:
            d["schedule"] = list(self.schedule)
        return d

    def model_config(self, input_dim: int = 19) -> ModelConfig:
        return ModelConfig(input_dim=input_dim, hidden_dim=self.hidden_dim, num_layers=self.num_layers,
                           num_heads=self.num_heads, dropout_rate=self.dropout_rate,
                           attn_tokens=self.attn_tokens, mlp_hidden=self.mlp_hidden,
                           deep_hiddens=self.deep_hiddens, rnn_hidden=self.rnn_hidden)

    def strategy_config(self, kind: StrategyKind) -> StrategyConfig:
        return StrategyConfig(kind, self.buffer_capacity, self.replay_ratio, self.lwf_lambda,
                              self.temperature, self.candidate_count, self.retrieve_count, self.optimizer)

    def simulation_config(self, model: ModelKind, strategy: StrategyKind, input_dim: int = 19) -> SimulationConfig:
        return SimulationConfig(
            rounds=self.rounds, nodes=self.nodes, streams=self.streams, schedule=self.schedule,
            local_epochs=self.local_epochs, lr=self.lr, batch_size=self.batch_size,
            model_kind=model, model_config=self.model_config(input_dim),
            strategy=self.strategy_config(strategy), window=self.window, normalize=self.normalize,
            test_fraction=self.test_fraction, seed=self.seed,
        )

    def validate(self) -> None:
        if self.partition not in data.PARTITION_MODES:
            raise ConfigurationError(f"partition must be one of {data.PARTITION_MODES}, got {self.partition!r}")
        if self.window not in WINDOWS:
            raise ConfigurationError(f"window must be one of {WINDOWS}, got {self.window!r}")
        if self.dataset is None and self.synthetic_records < 2 * self.streams:
            raise ConfigurationError(f"synthetic_records={self.synthetic_records} is too small")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigurationError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")
        if self.jobs < 1:
            raise ConfigurationError(f"jobs must be >= 1, got {self.jobs}")
        if self.load_model is not None and len(self.models) != 1:
            raise ConfigurationError("load_model needs exactly one model kind")
        for model in self.models:
            for strategy in self.strategies:
                self.simulation_config(model, strategy).validate()


@dataclass
class CellResult:
    model: ModelKind
    strategy: StrategyKind
    history: list[RoundRecord]
    final: Metrics
    final_streams: list[Metrics]
    updates: int
    wall_time: float
    params: ParamSet | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "model": self.model.value,
            "strategy": self.strategy.value,
            "updates": self.updates,
            "final": self.final.to_dict(),
            "final_streams": [m.to_dict() for m in self.final_streams],
            "history": [
                {"round": r.round, "active_stream": r.active_stream,
                 "streams": [m.to_dict() for m in r.stream_metrics]}
                for r in self.history
            ],
        }


@dataclass
class RunReport:
    config: ExperimentConfig
    dataset: dict
    cells: list[CellResult]
    stamp: dict
    wall_time: float = 0.0

    def cell(self, model, strategy) -> CellResult:
        model = ModelKind.parse(model) if isinstance(model, str) else model
        strategy = StrategyKind.parse(strategy) if isinstance(strategy, str) else strategy
        for c in self.cells:
            if c.model is model and c.strategy is strategy:
                return c
        raise KeyError((model.value, strategy.value))

    def to_dict(self) -> dict:
        """Deterministic content only; timing lives in :meth:`timing`."""
        return {
            "stamp": self.stamp,
            "config": self.config.to_dict(),
            "dataset": self.dataset,
            "cells": [c.to_dict() for c in self.cells],
        }

    def timing(self) -> dict:
        return {
            "total_seconds": self.wall_time,
            "cells": [
                {"model": c.model.value, "strategy": c.strategy.value, "seconds": c.wall_time,
                 "rounds": [r.wall_time for r in c.history]}
                for c in self.cells
            ],
        }


def version_stamp() -> dict:
    return {
        "package": "fedphish",
        "version": __version__,
        "kernels": kernels.backend_name(),
        "numpy": np.__version__,
        "python": platform.python_version(),
    }


# ---------------------------------------------------------------------------
# pipeline


def load_dataset(cfg: ExperimentConfig) -> data.Dataset:
    if cfg.dataset is None:
        return data.synthetic_dataset(cfg.synthetic_records, derive_seed(cfg.seed, "synthetic"))
    return data.load_csv(cfg.dataset, cfg.raw_urls)


def _initial_params(cfg: ExperimentConfig, model: ModelKind):
    if cfg.load_model is None:
        return None
    try:
        params, header = ParamSet.load(cfg.load_model)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load checkpoint {cfg.load_model}: {exc}") from exc
    kind = header.get("model_kind")
    if kind is not None and ModelKind.parse(kind) is not model:
        raise ConfigurationError(f"checkpoint holds a {kind} model, run asks for {model.value}")
    return params


def _run_cell(cfg: ExperimentConfig, model: ModelKind, strategy: StrategyKind,
              partition: data.StreamPartition, prepared: PreparedStreams) -> CellResult:
    with stage(f"simulate:{model.value}/{strategy.value}"):
        sim = cfg.simulation_config(model, strategy, prepared.train[0].width)
        result = run_simulation(sim, partition, prepared=prepared, initial_params=_initial_params(cfg, model))
    return CellResult(model, strategy, result.history, result.final, result.final_stream_metrics,
                      result.updates, result.wall_time, result.global_params)


def _run_cell_job(args):
    return _run_cell(*args)


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    """Run every requested (model, strategy) cell on one shared data preparation."""
    start = time.perf_counter()
    with stage("config"):
        cfg.validate()
    with stage("load"):
        ds = load_dataset(cfg)
    with stage("balance"):
        raw_counts = ds.class_counts()
        ds = data.undersample_balance(ds, derive_seed(cfg.seed, "balance"))
    with stage("partition"):
        partition = data.partition_streams(ds, cfg.streams, cfg.partition, derive_seed(cfg.seed, "partition"))
    with stage("prepare"):
        prepared = prepare_streams(partition, cfg.nodes, cfg.seed, cfg.test_fraction, cfg.normalize)

    jobs = [(cfg, m, s, partition, prepared) for m in cfg.models for s in cfg.strategies]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            cells = list(pool.map(_run_cell_job, jobs))
    else:
        cells = [_run_cell(*job) for job in jobs]

    summary = {
        "source": "synthetic" if cfg.dataset is None else Path(ds.source).name,
        "records_loaded": int(sum(raw_counts)),
        "class_counts_loaded": list(raw_counts),
        "records_balanced": len(ds),
        "class_counts_balanced": list(ds.class_counts()),
        "feature_names": list(ds.feature_names),
        "partition": cfg.partition,
        "stream_sizes": [len(s) for s in partition.streams],
        "train_sizes": [len(s) for s in prepared.train],
        "test_sizes": [len(s) for s in prepared.test],
    }
    report = RunReport(cfg, summary, cells, version_stamp(), time.perf_counter() - start)
    if cfg.save_model is not None:
        with stage("save-model"):
            save_models(report, cfg.save_model)
    return report


def save_models(report: RunReport, directory) -> list[Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for c in report.cells:
        path = out / f"{c.model.value}_{c.strategy.value}.json"
        header = {
            "model_kind": c.model.value,
            "model_config": report.config.model_config(len(report.dataset["feature_names"])).to_dict(),
            "strategy": c.strategy.value,
            "seed": report.config.seed,
            "version": __version__,
        }
        c.params.save(path, header)
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# reports


def _metric_cells(m: Metrics) -> list:
    return [m.accuracy, m.precision, m.recall, m.f1, m.tp, m.fp, m.tn, m.fn,
            int(m.precision_undefined), int(m.recall_undefined), int(m.f1_undefined)]


def render_csv(report: RunReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for c in report.cells:
        for r in c.history:
            for s, m in enumerate(r.stream_metrics, start=1):
                w.writerow(["history", c.model.value, c.strategy.value, r.round, r.active_stream, s]
                           + _metric_cells(m))
    last = report.cells[0].history[-1].round if report.cells and report.cells[0].history else 0
    for c in report.cells:
        w.writerow(["final", c.model.value, c.strategy.value, last, "", "all"] + _metric_cells(c.final))
    return buf.getvalue()


def render_json(report: RunReport) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"


def render_markdown(report: RunReport) -> str:
    cfg = report.config
    lines = [
        "# Phishing detection results",
        "",
        f"Global model after {cfg.rounds} rounds with {cfg.nodes} nodes, {cfg.streams} streams "
        f"({cfg.partition} partition), seed {cfg.seed}. Scores are on the union of the test folds.",
    ]
    for strategy in (s for s in STRATEGY_ORDER if s in cfg.strategies):
        lines += ["", f"## Results under {strategy.label} Strategy", "",
                  "| Model | Accuracy | Precision | Recall | F1-Score |",
                  "|---|---|---|---|---|"]
        for model in (m for m in TABLE_ORDER if m in cfg.models):
            m = report.cell(model, strategy).final
            lines.append(f"| {model.label} | {m.accuracy:.2f} | {m.precision:.2f} | {m.recall:.2f} | {m.f1:.2f} |")
    return "\n".join(lines) + "\n"


RENDERERS = {"csv": render_csv, "json": render_json, "markdown": render_markdown}


def emit_report(report: RunReport, formats=REPORT_FORMATS, out_dir=None) -> list[Path]:
    """Write the requested formats (plus ``timing.json``) and return the paths written."""
    formats = parse_formats(formats)
    if not formats:
        return []
    if not report.cells:
        raise ConfigurationError("refusing to emit an empty report")
    out = Path(out_dir if out_dir is not None else report.config.out)
    written = []
    with stage("report"):
        out.mkdir(parents=True, exist_ok=True)
        for fmt in formats:
            path = out / REPORT_FILES[fmt]
            path.write_text(RENDERERS[fmt](report), encoding="utf-8")
            written.append(path)
        path = out / TIMING_FILE
        path.write_text(json.dumps(report.timing(), indent=2) + "\n", encoding="utf-8")
        written.append(path)
    return written


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(cfg, **changes)

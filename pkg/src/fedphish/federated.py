"""Sample-weighted dynamic averaging and the node/round simulation driver.

The aggregator keeps a running ``w_cum = sum(n_k * w_k)`` and ``n_total``
over every update it has ever received and publishes ``w_0 = w_cum / n_total``
after each one. It only ever sees :class:`NodeUpdate` objects (parameters and
a sample count); raw records never cross that boundary.
"""

from __future__ import annotations

import logging
import threading
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import continual, data
from .continual import StrategyConfig, StrategyState
from .data import Dataset, NormStats, StreamPartition
from .errors import ConfigurationError, ProtocolError
from .metrics import Metrics, compute_metrics
from .models import ModelConfig, ModelInstance, ModelKind, build_model, predict_batch
from .nn import ParamSet

log = logging.getLogger(__name__)

WINDOWS = ("cumulative", "per-round")


def derive_seed(master: int, *labels) -> int:
    """Stable 63-bit seed for a named component of a run."""
    words = [int(master) & 0xFFFFFFFF, (int(master) >> 32) & 0xFFFFFFFF]
    words += [zlib.crc32(str(label).encode()) for label in labels]
    return int(np.random.SeedSequence(words).generate_state(2, np.uint64)[0] >> np.uint64(1))


# ---------------------------------------------------------------------------
# aggregator


@dataclass(frozen=True)
class NodeUpdate:
    node_id: int
    params: ParamSet
    sample_count: int
    round: int = 0


@dataclass
class GlobalState:
    w_cum: ParamSet
    n_total: int
    w_0: ParamSet
    updates_processed: int = 0
    window: str = "cumulative"
    round: int | None = None
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)


def server_init(w_0: ParamSet, window: str = "cumulative") -> GlobalState:
    if window not in WINDOWS:
        raise ConfigurationError(f"window must be one of {WINDOWS}, got {window!r}")
    return GlobalState(w_0.zeros_like(), 0, w_0.copy(), 0, window)


def server_ingest(state: GlobalState, update: NodeUpdate) -> GlobalState:
    """Fold one node update into the running weighted average (in place)."""
    if not isinstance(update, NodeUpdate):
        raise ProtocolError(f"expected a NodeUpdate, got {type(update).__name__}")
    n = update.sample_count
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n <= 0:
        raise ProtocolError(f"node {update.node_id}: sample_count must be a positive integer, got {n!r}")
    if not update.params.compatible(state.w_0):
        raise ProtocolError(f"node {update.node_id}: parameters do not match the global model layout")
    if not np.all(np.isfinite(update.params.flat)):
        raise ProtocolError(f"node {update.node_id}: non-finite parameters")
    with state.lock:
        if state.window == "per-round" and update.round != state.round:
            state.w_cum.flat[...] = 0.0
            state.n_total = 0
        state.round = update.round
        state.n_total += int(n)
        state.w_cum.flat += n * update.params.flat
        state.w_0 = state.w_cum.with_flat(state.w_cum.flat / state.n_total)
        state.w_0.version = state.updates_processed + 1
        state.updates_processed += 1
    return state


def broadcast_get(state: GlobalState) -> ParamSet:
    with state.lock:
        return state.w_0.copy()


# ---------------------------------------------------------------------------
# nodes


@dataclass(frozen=True)
class NodeConfig:
    node_id: int
    learning_rate: float = 0.001
    local_epochs: int = 10
    batch_size: int = 16
    strategy: StrategyConfig = StrategyConfig()

    def validate(self) -> None:
        if self.learning_rate < 0:
            raise ConfigurationError(f"node {self.node_id}: learning_rate must be >= 0")
        if self.local_epochs < 0:
            raise ConfigurationError(f"node {self.node_id}: local_epochs must be >= 0")


def node_round(node: NodeConfig, w_0: ParamSet, experience_shard: Dataset, strategy_state: StrategyState,
               seed: int, *, model: ModelInstance, round: int = 0,
               experience_id=None) -> tuple[NodeUpdate, StrategyState]:
    """Load the global weights, train locally under the node's strategy, report back."""
    node.validate()
    if len(experience_shard) == 0:
        raise ConfigurationError(f"node {node.node_id}: empty shard in round {round}")
    local = model.clone(w_0)
    trained, strategy_state = continual.train_experience(
        local, strategy_state, experience_shard, node.local_epochs, node.batch_size,
        node.learning_rate, seed, experience_id=experience_id,
    )
    update = NodeUpdate(node.node_id, trained.params, len(experience_shard), round)
    return update, strategy_state


# ---------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class SimulationConfig:
    rounds: int = 20
    nodes: int = 3
    streams: int = 4
    schedule: tuple[int, ...] | None = None  # rounds per stream; None -> equal blocks
    local_epochs: int = 10
    lr: float = 0.001
    batch_size: int = 16
    model_kind: ModelKind = ModelKind.ATTENTION
    model_config: ModelConfig = ModelConfig()
    strategy: StrategyConfig = StrategyConfig()
    window: str = "cumulative"
    normalize: bool = True
    test_fraction: float = 0.2
    seed: int = 0

    def resolved_schedule(self) -> tuple[int, ...]:
        if self.schedule is not None:
            sched = tuple(int(s) for s in self.schedule)
        else:
            if self.streams < 1 or self.rounds % self.streams:
                raise ConfigurationError(
                    f"{self.rounds} rounds do not split evenly over {self.streams} streams; give a schedule"
                )
            sched = (self.rounds // self.streams,) * self.streams
        if len(sched) != self.streams:
            raise ConfigurationError(f"schedule has {len(sched)} entries for {self.streams} streams")
        if sum(sched) != self.rounds or min(sched) < 0:
            raise ConfigurationError(f"schedule {sched} does not sum to {self.rounds} rounds")
        return sched

    def active_streams(self) -> list[int]:
        """1-based stream index used in each round."""
        return [s + 1 for s, count in enumerate(self.resolved_schedule()) for _ in range(count)]

    def validate(self) -> None:
        self.resolved_schedule()
        if self.nodes < 1:
            raise ConfigurationError(f"nodes must be >= 1, got {self.nodes}")
        if self.window not in WINDOWS:
            raise ConfigurationError(f"window must be one of {WINDOWS}, got {self.window!r}")
        self.model_config.validate(self.model_kind)
        self.strategy.validate()


@dataclass
class RoundRecord:
    round: int
    active_stream: int
    stream_metrics: list[Metrics]
    wall_time: float


@dataclass
class SimulationResult:
    history: list[RoundRecord]
    final: Metrics
    final_stream_metrics: list[Metrics]
    global_params: ParamSet
    model: ModelInstance
    updates: int
    wall_time: float


@dataclass
class PreparedStreams:
    """Per-stream train/test folds, (optionally) standardized, plus node shards."""

    train: list[Dataset]
    test: list[Dataset]
    shards: list[list[Dataset]]
    stats: NormStats | None


def prepare_streams(partition: StreamPartition, nodes: int, seed: int, test_fraction: float = 0.2,
                    normalize: bool = True) -> PreparedStreams:
    train, test = [], []
    for i, stream in enumerate(partition.streams):
        tr, te = data.train_test_split(stream, test_fraction, derive_seed(seed, "split", i))
        train.append(tr)
        test.append(te)
    stats = None
    if normalize:
        # statistics come from the first experience only and stay frozen
        _, stats = data.standardize(train[0])
        train = [data.standardize(d, stats)[0] for d in train]
        test = [data.standardize(d, stats)[0] for d in test]
    shards = [data.shard_for_nodes(tr, nodes, derive_seed(seed, "shard", i)) for i, tr in enumerate(train)]
    return PreparedStreams(train, test, shards, stats)


def evaluate(model: ModelInstance, params: ParamSet, folds: list[Dataset]) -> list[Metrics]:
    m = model.clone(params)
    return [compute_metrics(predict_batch(m, fold.X), fold.y) for fold in folds]


def run_simulation(cfg: SimulationConfig, partition: StreamPartition, *,
                   initial_params: ParamSet | None = None,
                   prepared: PreparedStreams | None = None) -> SimulationResult:
    """Federated rounds over the stream schedule; the global model is scored every round."""
    cfg.validate()
    if len(partition) != cfg.streams:
        raise ConfigurationError(f"config expects {cfg.streams} streams, partition has {len(partition)}")
    start = time.perf_counter()
    if prepared is None:
        prepared = prepare_streams(partition, cfg.nodes, cfg.seed, cfg.test_fraction, cfg.normalize)
    width = prepared.train[0].width
    model_cfg = cfg.model_config
    if model_cfg.input_dim != width:
        model_cfg = ModelConfig.from_dict({**model_cfg.to_dict(), "input_dim": width})
    template = build_model(cfg.model_kind, model_cfg, derive_seed(cfg.seed, "init", cfg.model_kind.value))
    if initial_params is not None:
        template.params.check_compatible(initial_params, "initial parameters and model")
        template = template.clone(initial_params)

    server = server_init(template.params, cfg.window)
    nodes = [NodeConfig(k, cfg.lr, cfg.local_epochs, cfg.batch_size, cfg.strategy) for k in range(1, cfg.nodes + 1)]
    states = [continual.init_state(cfg.strategy, width, derive_seed(cfg.seed, "buffer", k)) for k in range(1, cfg.nodes + 1)]

    history = []
    for r, stream in enumerate(cfg.active_streams(), start=1):
        t0 = time.perf_counter()
        w = broadcast_get(server)
        updates = []
        for node, k in zip(nodes, range(cfg.nodes)):
            update, states[k] = node_round(
                node, w, prepared.shards[stream - 1][k], states[k],
                derive_seed(cfg.seed, "train", node.node_id, r),
                model=template, round=r, experience_id=stream,
            )
            updates.append(update)
        for update in sorted(updates, key=lambda u: u.node_id):
            server_ingest(server, update)
        per_stream = evaluate(template, server.w_0, prepared.test)
        history.append(RoundRecord(r, stream, per_stream, time.perf_counter() - t0))
        log.debug("round %d stream %d acc %s", r, stream, [round(m.accuracy, 3) for m in per_stream])

    final_params = broadcast_get(server)
    union = Dataset.concat(prepared.test)
    final = evaluate(template, final_params, [union])[0]
    return SimulationResult(history, final, history[-1].stream_metrics if history else [],
                            final_params, template.clone(final_params), server.updates_processed,
                            time.perf_counter() - start)

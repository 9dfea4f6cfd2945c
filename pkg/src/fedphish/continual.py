"""Continual-learning strategies run by each node as experiences arrive.

Five strategies share one training loop (:func:`train_experience`):

* ``naive``       plain mini-batch training on the current experience
* ``cumulative``  training on the union of every experience seen so far
* ``replay``      batches topped up with samples from a reservoir buffer
* ``lwf``         cross-entropy plus distillation toward a frozen snapshot
* ``mir``         replay of the buffered samples a virtual step would hurt most
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import nn
from .data import Dataset, DatasetRecord
from .errors import ConfigurationError, DataError
from .models import ModelInstance, logits, loss_and_grads
from .nn import IN_PLACE, OPTIMIZERS, OptimizerState, ParamSet

log = logging.getLogger(__name__)


class StrategyKind(str, enum.Enum):
    NAIVE = "naive"
    CUMULATIVE = "cumulative"
    REPLAY = "replay"
    LWF = "lwf"
    MIR = "mir"

    @property
    def label(self) -> str:
        return {"naive": "Naive", "cumulative": "Cumulative", "replay": "Replay",
                "lwf": "LwF", "mir": "MIR"}[self.value]

    @classmethod
    def parse(cls, text: str) -> "StrategyKind":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ConfigurationError(
                f"unknown strategy {text!r}; choose from {[k.value for k in cls]}"
            ) from None


# Table order used by the reports.
STRATEGY_ORDER = (StrategyKind.NAIVE, StrategyKind.REPLAY, StrategyKind.CUMULATIVE,
                  StrategyKind.LWF, StrategyKind.MIR)


@dataclass(frozen=True)
class StrategyConfig:
    kind: StrategyKind = StrategyKind.NAIVE
    buffer_capacity: int = 500
    replay_ratio: float = 1.0
    lwf_lambda: float = 1.0
    temperature: float = 2.0
    candidate_count: int = 50
    retrieve_count: int | None = None  # None -> batch size
    optimizer: str = "adam"

    def validate(self) -> None:
        if self.buffer_capacity <= 0:
            raise ConfigurationError(f"buffer_capacity must be > 0, got {self.buffer_capacity}")
        if self.replay_ratio < 0:
            raise ConfigurationError(f"replay_ratio must be >= 0, got {self.replay_ratio}")
        if self.lwf_lambda < 0:
            raise ConfigurationError(f"lwf_lambda must be >= 0, got {self.lwf_lambda}")
        if not self.temperature > 0:
            raise ConfigurationError(f"temperature must be > 0, got {self.temperature}")
        if self.candidate_count <= 0:
            raise ConfigurationError(f"candidate_count must be > 0, got {self.candidate_count}")
        if self.retrieve_count is not None and not 0 < self.retrieve_count <= self.candidate_count:
            raise ConfigurationError(
                f"retrieve_count must lie in [1, candidate_count={self.candidate_count}], got {self.retrieve_count}"
            )
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"optimizer must be one of {sorted(OPTIMIZERS)}, got {self.optimizer!r}")

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StrategyConfig":
        d = dict(d)
        if "kind" in d:
            d["kind"] = StrategyKind.parse(d["kind"]) if isinstance(d["kind"], str) else d["kind"]
        return cls(**d)


# ---------------------------------------------------------------------------
# reservoir buffer


class ReplayBuffer:
    """Uniform reservoir (Algorithm R) over every record ever offered."""

    def __init__(self, capacity: int, width: int, seed: int = 0):
        if capacity <= 0:
            raise ConfigurationError(f"buffer capacity must be > 0, got {capacity}")
        self.capacity = capacity
        self.X = np.zeros((capacity, width))
        self.y = np.zeros(capacity, dtype=np.int64)
        self.ids = np.full(capacity, -1, dtype=np.int64)
        self.size = 0
        self.seen_count = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return self.size

    @property
    def items(self) -> list[DatasetRecord]:
        return [DatasetRecord(self.X[i].copy(), int(self.y[i])) for i in range(self.size)]

    def insert(self, x, label: int, record_id: int = -1) -> None:
        self.seen_count += 1
        if self.size < self.capacity:
            slot = self.size
            self.size += 1
        else:
            slot = int(self.rng.integers(self.seen_count))
            if slot >= self.capacity:
                return
        self.X[slot] = x
        self.y[slot] = label
        self.ids[slot] = record_id

    def insert_many(self, X, y, ids) -> None:
        for row, label, rid in zip(X, y, ids):
            self.insert(row, int(label), int(rid))

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Indices of ``min(n, len)`` distinct residents, uniformly at random."""
        n = min(n, self.size)
        if n <= 0:
            return np.zeros(0, dtype=np.intp)
        return rng.choice(self.size, size=n, replace=False)


def buffer_insert(buffer: ReplayBuffer, record: DatasetRecord, record_id: int = -1) -> ReplayBuffer:
    buffer.insert(record.features, record.label, record_id)
    return buffer


# ---------------------------------------------------------------------------
# strategy state


@dataclass
class StrategyState:
    config: StrategyConfig
    buffer: ReplayBuffer | None = None
    old_params: ParamSet | None = None
    past: list[Dataset] = field(default_factory=list)
    current: Dataset | None = None
    current_id: object = None
    experience_index: int = 0

    @property
    def kind(self) -> StrategyKind:
        return self.config.kind

    def cumulative_size(self) -> int:
        return sum(len(d) for d in self.past) + (len(self.current) if self.current is not None else 0)


def init_state(config: StrategyConfig, width: int, seed: int = 0) -> StrategyState:
    config.validate()
    buffer = None
    if config.kind in (StrategyKind.REPLAY, StrategyKind.MIR):
        buffer = ReplayBuffer(config.buffer_capacity, width, seed)
    return StrategyState(config, buffer)


def _begin_experience(model: ModelInstance, state: StrategyState, experience: Dataset, experience_id) -> bool:
    """Boundary bookkeeping; returns True when ``experience`` is new to this state."""
    if experience_id is not None and experience_id == state.current_id and state.experience_index > 0:
        return False
    if state.current is not None:
        state.past.append(state.current)
    state.current = experience
    state.current_id = experience_id
    state.experience_index += 1
    if state.kind is StrategyKind.LWF and state.experience_index > 1:
        state.old_params = model.params.copy()
    return True


# ---------------------------------------------------------------------------
# MIR retrieval


def mir_scores(current: ModelInstance, virtual: ModelInstance, X, y) -> np.ndarray:
    """Per-example loss increase caused by the virtual update."""
    return (nn.per_example_cross_entropy(logits(virtual, X), y)
            - nn.per_example_cross_entropy(logits(current, X), y))


def mir_select(current: ModelInstance, virtual: ModelInstance, candidates, k: int) -> list[int]:
    """Indices of the ``k`` most-interfered candidates, highest score first, ties by index.

    ``candidates`` is a sequence of :class:`DatasetRecord` or an ``(X, y)`` pair.
    """
    if isinstance(candidates, tuple):
        X, y = candidates
    else:
        X = np.array([c.features for c in candidates], dtype=np.float64)
        y = np.array([c.label for c in candidates], dtype=np.int64)
    n = len(y)
    if k > n:
        log.warning("mir_select: k=%d exceeds %d candidates; returning all", k, n)
        k = n
    if n == 0 or k <= 0:
        return []
    scores = mir_scores(current, virtual, X, y)
    order = np.lexsort((np.arange(n), -scores))
    return [int(i) for i in order[:k]]


# ---------------------------------------------------------------------------
# training loop


BatchHook = Callable[[np.ndarray, np.ndarray, np.ndarray], None]


def train_experience(model: ModelInstance, state: StrategyState, experience: Dataset, epochs: int,
                     batch_size: int, lr: float, seed: int, experience_id=None,
                     on_batch: BatchHook | None = None) -> tuple[ModelInstance, StrategyState]:
    """Train ``model`` on one experience under ``state``'s strategy.

    Calls that repeat ``experience_id`` continue the same experience: no new
    LwF snapshot, no re-accumulation, no re-insertion into the buffer.
    ``on_batch(ids, X, y)`` sees every batch actually used for an update.
    Returns a new model; ``state`` is updated in place and returned.
    """
    if len(experience) == 0:
        raise DataError("cannot train on an empty experience")
    if epochs < 0:
        raise ConfigurationError(f"epochs must be >= 0, got {epochs}")
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    cfg = state.config
    kind = cfg.kind
    fresh = _begin_experience(model, state, experience, experience_id)

    if kind is StrategyKind.CUMULATIVE:
        train = Dataset.concat(state.past + [experience], experience.source) if state.past else experience
    else:
        train = experience

    rng = np.random.default_rng(seed)
    step_fn = OPTIMIZERS[cfg.optimizer]
    update_ = IN_PLACE[cfg.optimizer]
    params = model.params.copy()
    opt = OptimizerState.for_params(params)
    work = model.clone(params)
    old_model = None
    if kind is StrategyKind.LWF and state.old_params is not None and cfg.lwf_lambda > 0:
        old_model = model.clone(state.old_params)
    buffer = state.buffer
    insert_pending = fresh and buffer is not None
    retrieve = cfg.retrieve_count or batch_size

    def grads_on(X, y):
        extra = None
        if old_model is not None:
            target = logits(old_model, X)
            extra = lambda out: nn.mul(nn.distillation(target, out, cfg.temperature), cfg.lwf_lambda)  # noqa: E731
        return loss_and_grads(work, X, y, rng, extra)[1]

    n = len(train)
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            X, y, ids = train.X[idx], train.y[idx], train.ids[idx]
            bX, by, bids = X, y, ids
            if kind is StrategyKind.REPLAY and buffer.size:
                pick = buffer.draw(int(round(cfg.replay_ratio * batch_size)), rng)
                bX = np.concatenate([X, buffer.X[pick]])
                by = np.concatenate([y, buffer.y[pick]])
                bids = np.concatenate([ids, buffer.ids[pick]])
            elif kind is StrategyKind.MIR and buffer.size:
                grads = grads_on(X, y)
                v_params, _ = step_fn(work.params, grads, opt.copy(), lr)
                cand = buffer.draw(cfg.candidate_count, rng)
                chosen = cand[mir_select(work, work.clone(v_params), (buffer.X[cand], buffer.y[cand]),
                                         min(retrieve, len(cand)))]
                bX = np.concatenate([X, buffer.X[chosen]])
                by = np.concatenate([y, buffer.y[chosen]])
                bids = np.concatenate([ids, buffer.ids[chosen]])
            if on_batch is not None:
                on_batch(bids, bX, by)
            grads = grads_on(bX, by)
            update_(work.params, grads, opt, lr)
            if insert_pending and epoch == 0:
                buffer.insert_many(X, y, ids)
        insert_pending = False

    if insert_pending:
        # no epochs ran: still offer the experience to the buffer in seeded order
        order = rng.permutation(n)
        buffer.insert_many(train.X[order], train.y[order], train.ids[order])

    work.params.version = model.params.version + 1 if epochs else model.params.version
    return work, state


def with_strategy(config: StrategyConfig, **changes) -> StrategyConfig:
    return replace(config, **changes)

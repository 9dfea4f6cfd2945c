"""The attention+residual phishing classifier and the three baselines.

All four kinds share one calling convention: parameters live in a
:class:`~fedphish.nn.ParamSet`, and :func:`logits_graph` builds the
differentiable forward pass from a name->Tensor mapping so the same code
serves training, evaluation and gradient checking.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn
from .errors import ConfigurationError, DimensionError
from .nn import ParamSet, Tensor


class ModelKind(str, enum.Enum):
    ATTENTION = "attention"
    SIMPLE_MLP = "simple_mlp"
    DEEP_MLP = "deep_mlp"
    SIMPLE_RNN = "simple_rnn"

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def parse(cls, text: str) -> "ModelKind":
        key = text.strip().lower().replace("-", "_")
        for kind in cls:
            if key in (kind.value, kind.name.lower(), kind.label.lower().replace(" ", "_")):
                return kind
        if key in ("ours", "attentionclassifier", "attention_classifier"):
            return cls.ATTENTION
        raise ConfigurationError(f"unknown model kind {text!r}; choose from {[k.value for k in cls]}")


# Row labels used in the result tables.
_LABELS = {
    ModelKind.SIMPLE_MLP: "Simple MLP",
    ModelKind.DEEP_MLP: "Deep MLP",
    ModelKind.SIMPLE_RNN: "Simple RNN",
    ModelKind.ATTENTION: "Ours",
}
TABLE_ORDER = (ModelKind.SIMPLE_MLP, ModelKind.DEEP_MLP, ModelKind.SIMPLE_RNN, ModelKind.ATTENTION)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs for every model kind; each kind reads its own fields."""

    input_dim: int = 19
    num_classes: int = 2
    # attention classifier
    hidden_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    dropout_rate: float = 0.2
    attn_tokens: str = "single"  # "single" | "features"
    # baselines
    mlp_hidden: int = 32
    deep_hiddens: tuple[int, ...] = (64, 32, 16)
    rnn_hidden: int = 32

    def validate(self, kind: ModelKind) -> None:
        if self.input_dim < 1:
            raise ConfigurationError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_classes != 2:
            raise ConfigurationError("only binary classification (num_classes=2) is supported")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if kind is ModelKind.ATTENTION:
            if self.num_layers < 1:
                raise ConfigurationError(f"num_layers must be >= 1, got {self.num_layers}")
            if self.num_heads < 1 or self.hidden_dim % self.num_heads:
                raise ConfigurationError(
                    f"hidden_dim {self.hidden_dim} is not divisible by num_heads {self.num_heads}"
                )
            if self.attn_tokens not in ("single", "features"):
                raise ConfigurationError(f"attn_tokens must be 'single' or 'features', got {self.attn_tokens!r}")
        widths = {
            ModelKind.SIMPLE_MLP: (self.mlp_hidden,),
            ModelKind.DEEP_MLP: tuple(self.deep_hiddens),
            ModelKind.SIMPLE_RNN: (self.rnn_hidden,),
            ModelKind.ATTENTION: (self.hidden_dim,),
        }[kind]
        if not widths or min(widths) < 1:
            raise ConfigurationError(f"hidden widths must be >= 1, got {widths}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["deep_hiddens"] = list(self.deep_hiddens)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "deep_hiddens" in d:
            d["deep_hiddens"] = tuple(d["deep_hiddens"])
        return cls(**d)


# Backwards-friendly name for the attention model's slice of the config.
AttentionConfig = ModelConfig


@dataclass
class ModelInstance:
    kind: ModelKind
    config: ModelConfig
    params: ParamSet
    rng_seed: int = 0
    rng: np.random.Generator = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.rng_seed)

    def clone(self, params: ParamSet | None = None) -> "ModelInstance":
        return ModelInstance(self.kind, self.config, (params or self.params).copy(), self.rng_seed)

    def header(self) -> dict:
        return {"model_kind": self.kind.value, "model_config": self.config.to_dict()}


# ---------------------------------------------------------------------------
# parameter layouts


def param_layout(kind: ModelKind, config: ModelConfig) -> list[tuple[str, tuple[int, ...], int]]:
    """``(name, shape, fan_in)`` for every parameter, in storage order."""
    c = config
    out = []

    def dense(name, fan_in, fan_out, bias=True):
        out.append((f"{name}.weight", (fan_in, fan_out), fan_in))
        if bias:
            out.append((f"{name}.bias", (fan_out,), fan_in))

    if kind is ModelKind.ATTENTION:
        h = c.hidden_dim
        if c.attn_tokens == "features":
            dense("input", 1, h)
            out.append(("input.position", (c.input_dim, h), h))
        else:
            dense("input", c.input_dim, h)
        for i in range(c.num_layers):
            dense(f"layers.{i}.linear", h, h)
            for proj in ("query", "key", "value", "output"):
                out.append((f"layers.{i}.attn.{proj}", (h, h), h))
        dense("head", h, c.num_classes)
    elif kind is ModelKind.SIMPLE_MLP:
        dense("hidden.0", c.input_dim, c.mlp_hidden)
        dense("head", c.mlp_hidden, c.num_classes)
    elif kind is ModelKind.DEEP_MLP:
        prev = c.input_dim
        for i, width in enumerate(c.deep_hiddens):
            dense(f"hidden.{i}", prev, width)
            prev = width
        dense("head", prev, c.num_classes)
    elif kind is ModelKind.SIMPLE_RNN:
        h = c.rnn_hidden
        out.append(("rnn.input", (1, h), h))
        out.append(("rnn.recurrent", (h, h), h))
        out.append(("rnn.bias", (h,), h))
        dense("head", h, c.num_classes)
    else:  # pragma: no cover - enum is exhaustive
        raise ConfigurationError(f"unknown model kind {kind!r}")
    return out


def parameter_count(kind: ModelKind, config: ModelConfig) -> int:
    return sum(math.prod(shape) for _, shape, _ in param_layout(kind, config))


def build_model(kind: ModelKind | str, config: ModelConfig | None = None, seed: int = 0) -> ModelInstance:
    """Fresh model with weights drawn uniformly from ``±sqrt(1/fan_in)``."""
    kind = ModelKind.parse(kind) if isinstance(kind, str) else kind
    config = config or ModelConfig()
    config.validate(kind)
    layout = param_layout(kind, config)
    params = ParamSet([(n, s) for n, s, _ in layout])
    rng = np.random.default_rng(seed)
    for name, shape, fan_in in layout:
        bound = math.sqrt(1.0 / fan_in)
        params[name][...] = rng.uniform(-bound, bound, size=shape)
    return ModelInstance(kind, config, params, seed)


def model_from_checkpoint(params: ParamSet, header: dict, seed: int = 0) -> ModelInstance:
    kind = ModelKind.parse(header["model_kind"])
    config = ModelConfig.from_dict(header["model_config"])
    expected = ParamSet([(n, s) for n, s, _ in param_layout(kind, config)])
    expected.check_compatible(params, "checkpoint and model layout")
    return ModelInstance(kind, config, params.copy(), seed)


# ---------------------------------------------------------------------------
# forward passes


def encoder_layer(h: Tensor, p: dict, prefix: str, heads: int, weights_out: list | None = None) -> Tensor:
    """Residual linear block followed by multi-head self-attention on ``[batch, seq, hidden]``."""
    width = p[f"{prefix}.linear.weight"].shape[0]
    if h.shape[-1] != width:
        raise DimensionError(f"encoder layer expects width {width}, got {h.shape}")
    r = nn.add(h, nn.linear(h, p[f"{prefix}.linear.weight"], p[f"{prefix}.linear.bias"]))
    return nn.multi_head_attention(
        r, r, r, heads,
        p[f"{prefix}.attn.query"], p[f"{prefix}.attn.key"],
        p[f"{prefix}.attn.value"], p[f"{prefix}.attn.output"],
        weights_out,
    )


def _attention_logits(c: ModelConfig, p, x, train, rng):
    b = x.shape[0]
    if c.attn_tokens == "features":
        tokens = nn.linear(x.reshape(b, c.input_dim, 1), p["input.weight"], p["input.bias"])
        h = nn.add(tokens, p["input.position"])
    else:
        h = nn.reshape(nn.linear(x, p["input.weight"], p["input.bias"]), (b, 1, c.hidden_dim))
    for i in range(c.num_layers):
        h = encoder_layer(h, p, f"layers.{i}", c.num_heads)
    pooled = nn.mean_axis(h, 1)
    pooled = nn.dropout(pooled, c.dropout_rate, rng, train)
    return nn.linear(pooled, p["head.weight"], p["head.bias"])


def logits_graph(kind: ModelKind, config: ModelConfig, p: dict, x: np.ndarray,
                 train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise DimensionError(f"model expects [batch, {config.input_dim}] input, got {x.shape}")
    if kind is ModelKind.ATTENTION:
        return _attention_logits(config, p, x, train, rng)
    if kind is ModelKind.SIMPLE_RNN:
        h = nn.elman_rnn(x, p["rnn.input"], p["rnn.recurrent"], p["rnn.bias"])
        return nn.linear(h, p["head.weight"], p["head.bias"])
    depth = 1 if kind is ModelKind.SIMPLE_MLP else len(config.deep_hiddens)
    h = x
    for i in range(depth):
        h = nn.relu(nn.linear(h, p[f"hidden.{i}.weight"], p[f"hidden.{i}.bias"]))
    return nn.linear(h, p["head.weight"], p["head.bias"])


def _constants(params: ParamSet) -> dict:
    return {name: Tensor(arr) for name, arr in params.items()}


def forward(model: ModelInstance, batch, train_mode: bool = False,
            rng: np.random.Generator | None = None) -> Tensor:
    """Logits ``[batch, 2]``. Dropout noise in train mode comes from ``rng`` or the model's own generator."""
    if train_mode and rng is None:
        rng = model.rng
    return logits_graph(model.kind, model.config, _constants(model.params), batch, train_mode, rng)


def logits(model: ModelInstance, batch) -> np.ndarray:
    return forward(model, batch, False).value


def loss_and_grads(model: ModelInstance, x, y, rng=None, extra=None):
    """Training-mode CE loss and its gradients; ``extra(logits_tensor) -> Tensor`` adds terms."""
    leaves, grads = nn.param_tensors(model.params)
    out = logits_graph(model.kind, model.config, leaves, x, True, rng if rng is not None else model.rng)
    loss = nn.cross_entropy(out, y)
    if extra is not None:
        loss = nn.add(loss, extra(out))
    nn.backward(loss)
    return loss.item(), grads


def predict_logits(logit_rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Labels (ties go to class 0) and the softmax probability of each chosen label."""
    logit_rows = np.atleast_2d(np.asarray(logit_rows, dtype=np.float64))
    labels = np.argmax(logit_rows, axis=1)
    probs = nn.softmax(logit_rows)[np.arange(len(labels)), labels]
    return labels, probs


def predict(model: ModelInstance, features) -> tuple[int, float]:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1 or features.shape[0] != model.config.input_dim:
        raise DimensionError(
            f"expected a feature vector of width {model.config.input_dim}, got shape {features.shape}"
        )
    labels, probs = predict_logits(logits(model, features[None, :]))
    return int(labels[0]), float(probs[0])


def predict_batch(model: ModelInstance, x, chunk: int = 4096) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = [np.argmax(logits(model, x[i:i + chunk]), axis=1) for i in range(0, len(x), chunk)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.intp)


def with_config(config: ModelConfig, **changes) -> ModelConfig:
    return replace(config, **changes)

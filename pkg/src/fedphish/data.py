"""URL lexical features, dataset ingestion and the stream/shard partitioning."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import kernels
from .errors import ConfigurationError, DataError

log = logging.getLogger(__name__)

# (feature name, counted byte) in canonical column order; url_length and
# count_redirection bracket the single-character counts.
CHAR_FEATURES = (
    ("count_dot", "."),
    ("count_hyphen", "-"),
    ("count_underscore", "_"),
    ("count_slash", "/"),
    ("count_question", "?"),
    ("count_equal", "="),
    ("count_at", "@"),
    ("count_ampersand", "&"),
    ("count_exclamation", "!"),
    ("count_space", " "),
    ("count_tilde", "~"),
    ("count_comma", ","),
    ("count_plus", "+"),
    ("count_asterisk", "*"),
    ("count_hashtag", "#"),
    ("count_dollar", "$"),
    ("count_percent", "%"),
)
FEATURE_NAMES = ("url_length",) + tuple(n for n, _ in CHAR_FEATURES) + ("count_redirection",)
_CHAR_CODES = np.array([ord(c) for _, c in CHAR_FEATURES])
# "//" must start past the scheme separator of "http://" to count as a redirection
REDIRECT_START = 8


def extract_features(url: str | bytes) -> np.ndarray:
    data = url.encode("utf-8") if isinstance(url, str) else bytes(url)
    if not data:
        raise DataError("cannot extract features from an empty URL")
    k = kernels.active
    out = np.empty(len(FEATURE_NAMES))
    out[0] = len(data)
    out[1:-1] = k.byte_histogram(data)[_CHAR_CODES]
    out[-1] = k.count_redirections(data, REDIRECT_START)
    return out


def features_table(urls: Sequence[str]) -> np.ndarray:
    return np.array([extract_features(u) for u in urls]).reshape(len(urls), len(FEATURE_NAMES))


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class DatasetRecord:
    features: np.ndarray
    label: int


@dataclass
class Dataset:
    """Feature matrix, binary labels and stable per-record ids (source row numbers)."""

    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...] = FEATURE_NAMES
    source: str = ""
    ids: np.ndarray = None

    def __post_init__(self):
        self.feature_names = tuple(self.feature_names)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.X = np.asarray(self.X, dtype=np.float64)
        self.X = self.X.reshape(len(self.y), -1 if len(self.y) else len(self.feature_names))
        if self.ids is None:
            self.ids = np.arange(len(self.y), dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.X.shape[1] != len(self.feature_names):
            raise DataError(f"{self.X.shape[1]} feature columns but {len(self.feature_names)} names")
        if len(self.ids) != len(self.y):
            raise DataError("ids and labels differ in length")
        if self.y.size and not ((self.y == 0) | (self.y == 1)).all():
            raise DataError("labels must be 0 or 1")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def width(self) -> int:
        return self.X.shape[1]

    @property
    def records(self) -> list[DatasetRecord]:
        return list(self)

    def __iter__(self) -> Iterator[DatasetRecord]:
        for row, label in zip(self.X, self.y):
            yield DatasetRecord(row, int(label))

    def subset(self, index, source: str | None = None) -> "Dataset":
        index = np.asarray(index, dtype=np.intp)
        return Dataset(self.X[index], self.y[index], self.feature_names,
                       self.source if source is None else source, self.ids[index])

    def with_features(self, X) -> "Dataset":
        return Dataset(X, self.y, self.feature_names, self.source, self.ids)

    @classmethod
    def concat(cls, parts: Sequence["Dataset"], source: str = "") -> "Dataset":
        if not parts:
            raise DataError("nothing to concatenate")
        names = parts[0].feature_names
        return cls(np.concatenate([p.X for p in parts]), np.concatenate([p.y for p in parts]),
                   names, source, np.concatenate([p.ids for p in parts]))

    def class_counts(self) -> tuple[int, int]:
        ones = int(self.y.sum())
        return len(self.y) - ones, ones

    def feature_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise ConfigurationError(f"dataset has no feature column {name!r}") from None


def _parse_label(text: str, row: int) -> int:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"row {row}: label {text!r} is not numeric") from None
    if value not in (0.0, 1.0):
        raise DataError(f"row {row}: label {text!r} outside {{0, 1}}")
    return int(value)


def load_csv(path, raw_urls: bool | None = None) -> Dataset:
    """Read a feature CSV (header, last column ``label``) or a raw ``url,label`` file.

    Raw-URL mode is used when ``raw_urls`` is true, or auto-detected when the
    header is exactly ``url,label``.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        if len(header) < 2 or header[-1].lower() != "label":
            raise DataError(f"{path}: last header column must be 'label', got {header[-1:]}")
        if raw_urls is None:
            raw_urls = [h.lower() for h in header] == ["url", "label"]
        rows = list(reader)

    labels, values = [], []
    for lineno, row in enumerate(rows, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise DataError(f"{path}: row {lineno} has {len(row)} cells, header has {len(header)}")
        labels.append(_parse_label(row[-1].strip(), lineno))
        if raw_urls:
            try:
                values.append(extract_features(row[0]))
            except DataError as exc:
                raise DataError(f"{path}: row {lineno}: {exc}") from None
            continue
        parsed = []
        for col, cell in zip(header[:-1], row[:-1]):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {lineno}, column {col!r}: {cell!r} is not numeric") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {lineno}, column {col!r}: non-finite value")
            parsed.append(v)
        values.append(parsed)

    names = FEATURE_NAMES if raw_urls else tuple(header[:-1])
    X = np.array(values, dtype=np.float64).reshape(len(values), len(names))
    return Dataset(X, labels, names, str(path))


def write_csv(ds: Dataset, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(ds.feature_names) + ["label"])
        for row, label in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) if v != int(v) else int(v) for v in row] + [int(label)])


# ---------------------------------------------------------------------------
# balancing and normalization


def undersample_balance(ds: Dataset, seed: int) -> Dataset:
    """Drop majority-class records uniformly at random down to the minority count.

    Surviving records keep their original relative order.
    """
    neg = np.flatnonzero(ds.y == 0)
    pos = np.flatnonzero(ds.y == 1)
    if not len(neg) or not len(pos):
        raise DataError(f"both classes must be present to balance (counts {len(neg)}/{len(pos)})")
    rng = np.random.default_rng(seed)
    keep = min(len(neg), len(pos))
    if len(neg) > keep:
        neg = rng.choice(neg, size=keep, replace=False)
    elif len(pos) > keep:
        pos = rng.choice(pos, size=keep, replace=False)
    return ds.subset(np.sort(np.concatenate([neg, pos])))


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @property
    def constant(self) -> np.ndarray:
        return self.std == 0

    @classmethod
    def fit(cls, X: np.ndarray) -> "NormStats":
        X = np.asarray(X, dtype=np.float64)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        mean.setflags(write=False)
        std.setflags(write=False)
        return cls(mean, std)

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.mean.shape[0]:
            raise DataError(f"stats cover {self.mean.shape[0]} features, data has {X.shape[-1]}")
        safe = np.where(self.constant, 1.0, self.std)
        return np.where(self.constant, 0.0, (X - self.mean) / safe)


def standardize(ds: Dataset, stats: NormStats | None = None) -> tuple[Dataset, NormStats]:
    """z-score features; pass ``stats`` to reuse frozen statistics from earlier data."""
    if stats is None:
        stats = NormStats.fit(ds.X)
    return ds.with_features(stats.apply(ds.X)), stats


# ---------------------------------------------------------------------------
# correlation report


@dataclass(frozen=True)
class Correlation:
    feature: str
    r: float
    constant: bool


def correlation_report(ds: Dataset) -> list[Correlation]:
    """Pearson correlation of every feature column with the label."""
    if len(ds) < 2:
        raise DataError("correlation needs at least 2 records")
    y = ds.y.astype(np.float64) - ds.y.mean()
    ynorm = math.sqrt(float(y @ y))
    out = []
    for j, name in enumerate(ds.feature_names):
        x = ds.X[:, j] - ds.X[:, j].mean()
        xnorm = math.sqrt(float(x @ x))
        if xnorm == 0.0 or ynorm == 0.0:
            out.append(Correlation(name, 0.0, True))
            continue
        r = float(x @ y) / (xnorm * ynorm)
        out.append(Correlation(name, min(1.0, max(-1.0, r)), False))
    return out


def write_correlation_csv(rows: Sequence[Correlation], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "r", "constant_flag"])
        for row in rows:
            w.writerow([row.feature, repr(row.r), int(row.constant)])


# ---------------------------------------------------------------------------
# streams and shards

PARTITION_MODES = ("shuffled", "drift")


@dataclass
class StreamPartition:
    streams: list[Dataset]
    mode: str

    def __len__(self) -> int:
        return len(self.streams)


def _chunks(n: int, parts: int) -> list[np.ndarray]:
    return np.array_split(np.arange(n), parts)


def partition_streams(ds: Dataset, S: int, mode: str = "shuffled", seed: int = 0,
                      drift_feature: str = "url_length") -> StreamPartition:
    """Split into ``S`` near-equal contiguous experiences.

    ``shuffled`` chunks a seeded permutation; ``drift`` chunks the records
    sorted by ``drift_feature`` (stable, so ties keep original order).
    """
    if mode not in PARTITION_MODES:
        raise ConfigurationError(f"partition mode must be one of {PARTITION_MODES}, got {mode!r}")
    if S < 1:
        raise ConfigurationError(f"stream count must be >= 1, got {S}")
    if S > len(ds):
        raise ConfigurationError(f"cannot cut {len(ds)} records into {S} streams")
    if mode == "shuffled":
        order = np.random.default_rng(seed).permutation(len(ds))
    else:
        order = np.argsort(ds.X[:, ds.feature_index(drift_feature)], kind="stable")
    streams = [ds.subset(order[c], f"{ds.source}#stream{i + 1}") for i, c in enumerate(_chunks(len(ds), S))]
    return StreamPartition(streams, mode)


def shard_for_nodes(stream: Dataset, N: int, seed: int) -> list[Dataset]:
    if N < 1:
        raise ConfigurationError(f"node count must be >= 1, got {N}")
    if N > len(stream):
        raise ConfigurationError(f"cannot shard {len(stream)} records across {N} nodes")
    order = np.random.default_rng(seed).permutation(len(stream))
    return [stream.subset(order[c], f"{stream.source}@node{k + 1}") for k, c in enumerate(_chunks(len(stream), N))]


def train_test_split(ds: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise ConfigurationError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_test = int(round(len(ds) * test_fraction))
    if n_test < 1 or n_test >= len(ds):
        raise DataError(f"a {len(ds)}-record stream is too small for a {test_fraction} test split")
    order = np.random.default_rng(seed).permutation(len(ds))
    return ds.subset(np.sort(order[n_test:])), ds.subset(np.sort(order[:n_test]))


# ---------------------------------------------------------------------------
# synthetic URL corpus

_ALNUM = np.frombuffer(b"abcdefghijklmnopqrstuvwxyz0123456789", dtype=np.uint8)
_TLDS = ("com", "org", "net", "io", "info", "xyz", "co", "ru", "top")

# length bands; sorting by url_length in drift mode walks through them in order
_REGIMES = ((16, 40), (40, 70), (70, 110), (110, 180))

# Poisson means of special-character tokens. A few weak phishing cues hold in
# every band, and each band adds one cue of its own (@, =, %, _). Hyphens and
# dots flip meaning past the shortest band: a hyphenated short host reads as
# typosquatting, a long hyphenated path as an ordinary slug, while a long URL
# stacked with dots reads as subdomain abuse. A model fit to one end of the
# length range therefore misreads the other.
_BASE = {".": 1.0, "/": 1.5, "-": 0.3, "_": 0.2, "?": 0.2, "=": 0.2, "&": 0.1, "%": 0.2,
         "@": 0.05, "~": 0.05, "!": 0.05, "+": 0.1, ",": 0.05, "*": 0.02, "#": 0.05,
         "$": 0.02, " ": 0.02, "//": 0.05}
_SHARED_PHISH = {"@": 0.3, "~": 0.3, "//": 0.2}
_CUES = {
    (0, 1): {"-": 3.0, "@": 1.0},
    (0, 0): {".": 3.0},
    (1, 1): {".": 3.0, "=": 1.5},
    (1, 0): {"-": 3.0},
    (2, 1): {".": 3.0, "%": 1.5},
    (2, 0): {"-": 3.0},
    (3, 1): {".": 3.0, "_": 1.5},
    (3, 0): {"-": 3.0},
}


def _synthetic_url(rng: np.random.Generator, regime: int, label: int) -> str:
    lo, hi = _REGIMES[regime]
    target = int(rng.integers(lo, hi))
    scheme = "https://" if rng.random() < (0.8 if label == 0 else 0.4) else "http://"
    host = "".join(chr(c) for c in rng.choice(_ALNUM[:26], size=int(rng.integers(3, 9))))
    host += "." + _TLDS[int(rng.integers(len(_TLDS)))]
    means = dict(_BASE)
    for tok, extra in _CUES[(regime, label)].items():
        means[tok] += extra
    if label == 1:
        for tok, extra in _SHARED_PHISH.items():
            means[tok] += extra
    tokens = []
    for tok, mu in means.items():
        tokens.extend([tok] * int(rng.poisson(mu)))
    rng.shuffle(tokens)
    budget = target - len(scheme) - len(host)
    while tokens and sum(map(len, tokens)) > max(budget - len(tokens), 0):
        tokens.pop()
    filler = max(budget - sum(map(len, tokens)), len(tokens) + 1)
    cuts = np.sort(rng.integers(0, filler + 1, size=len(tokens)))
    letters = "".join(chr(c) for c in rng.choice(_ALNUM, size=filler))
    pieces, prev = [], 0
    for tok, cut in zip(tokens, cuts):
        pieces.append(letters[prev:cut])
        pieces.append(tok)
        prev = cut
    pieces.append(letters[prev:])
    body = "".join(pieces)
    if body.startswith("/"):
        body = "x" + body
    return scheme + host + "/" + body


def synthetic_urls(n_legit: int, n_phish: int, seed: int, label_noise: float = 0.03):
    """Labelled URLs spread evenly over four length bands with band-specific cues."""
    rng = np.random.default_rng(seed)
    labels = np.array([0] * n_legit + [1] * n_phish)
    rng.shuffle(labels)
    regimes = rng.integers(len(_REGIMES), size=len(labels))
    urls = [_synthetic_url(rng, int(r), int(l)) for r, l in zip(regimes, labels)]
    flip = rng.random(len(labels)) < label_noise
    return urls, np.where(flip, 1 - labels, labels)


def synthetic_dataset(n: int = 5000, seed: int = 0, imbalance: float = 1.4) -> Dataset:
    """Balanced-after-undersampling synthetic corpus of ``n`` feature rows.

    The raw draw holds ``imbalance`` times more legitimate than phishing URLs,
    so :func:`undersample_balance` has real work to do.
    """
    half = n // 2
    urls, labels = synthetic_urls(int(round(half * imbalance)) + 64, half + 64, seed)
    ds = Dataset(features_table(urls), labels, FEATURE_NAMES, f"synthetic(seed={seed})")
    ds = undersample_balance(ds, seed)
    neg = np.flatnonzero(ds.y == 0)[:half]
    pos = np.flatnonzero(ds.y == 1)[:half]
    return ds.subset(np.sort(np.concatenate([neg, pos])))

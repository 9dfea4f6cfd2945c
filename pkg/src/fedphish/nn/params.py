"""Flat, named parameter storage and its checkpoint format.

A :class:`ParamSet` keeps every tensor of a model in a single contiguous
float64 buffer; named entries are reshaped views into it. Whole-model
arithmetic (averaging, optimizer updates) then runs as one vector op.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from ..errors import DataError, DimensionError

CHECKPOINT_FORMAT = "fedphish.paramset"
CHECKPOINT_FORMAT_VERSION = 1


class _Layout:
    __slots__ = ("names", "shapes", "slices", "index", "size")

    def __init__(self, layout):
        names, shapes, slices = [], [], []
        offset = 0
        for name, shape in layout:
            shape = tuple(int(s) for s in shape)
            size = math.prod(shape)
            names.append(name)
            shapes.append(shape)
            slices.append((offset, offset + size))
            offset += size
        if len(set(names)) != len(names):
            raise DataError(f"duplicate parameter names in {names}")
        self.names = tuple(names)
        self.shapes = tuple(shapes)
        self.slices = tuple(slices)
        self.index = {n: i for i, n in enumerate(names)}
        self.size = offset


class ParamSet:
    """Ordered ``name -> array`` mapping backed by one flat float64 buffer."""

    __slots__ = ("_layout", "flat", "version")

    def __init__(self, layout, flat=None, version: int = 0):
        if not isinstance(layout, _Layout):
            layout = _Layout(layout)
        if flat is None:
            flat = np.zeros(layout.size, dtype=np.float64)
        else:
            flat = np.ascontiguousarray(flat, dtype=np.float64)
            if flat.shape != (layout.size,):
                raise DimensionError(f"flat buffer has shape {flat.shape}, layout needs ({layout.size},)")
        self._layout = layout
        self.flat = flat
        self.version = int(version)

    @classmethod
    def from_arrays(cls, entries: Iterable[tuple[str, np.ndarray]], version: int = 0) -> "ParamSet":
        entries = [(n, np.asarray(a, dtype=np.float64)) for n, a in entries]
        ps = cls([(n, a.shape) for n, a in entries], version=version)
        for n, a in entries:
            ps[n][...] = a
        return ps

    # -- mapping protocol -------------------------------------------------
    @property
    def names(self) -> tuple[str, ...]:
        return self._layout.names

    @property
    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        return list(zip(self._layout.names, self._layout.shapes))

    @property
    def size(self) -> int:
        return self.flat.size

    def __len__(self) -> int:
        return len(self._layout.names)

    def __contains__(self, name) -> bool:
        return name in self._layout.index

    def __iter__(self) -> Iterator[str]:
        return iter(self._layout.names)

    def __getitem__(self, name: str) -> np.ndarray:
        lay = self._layout
        try:
            i = lay.index[name]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None
        lo, hi = lay.slices[i]
        return self.flat[lo:hi].reshape(lay.shapes[i])

    def items(self):
        for name in self._layout.names:
            yield name, self[name]

    entries = property(lambda self: list(self.items()))

    # -- structure --------------------------------------------------------
    def compatible(self, other: "ParamSet") -> bool:
        a, b = self._layout, other._layout
        return a is b or (a.names == b.names and a.shapes == b.shapes)

    def check_compatible(self, other: "ParamSet", what: str = "operands") -> None:
        if not self.compatible(other):
            raise DimensionError(
                f"{what} are not shape-compatible: {self.layout} vs {other.layout}"
            )

    def copy(self) -> "ParamSet":
        return ParamSet(self._layout, self.flat.copy(), self.version)

    def zeros_like(self) -> "ParamSet":
        return ParamSet(self._layout, None, 0)

    def with_flat(self, flat: np.ndarray) -> "ParamSet":
        return ParamSet(self._layout, flat, self.version)

    def assign(self, other: "ParamSet") -> None:
        self.check_compatible(other)
        self.flat[...] = other.flat

    # -- arithmetic -------------------------------------------------------
    def _binary(self, other, op):
        if isinstance(other, ParamSet):
            self.check_compatible(other)
            return self.with_flat(op(self.flat, other.flat))
        return self.with_flat(op(self.flat, float(other)))

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, np.true_divide)

    def __eq__(self, other):
        if not isinstance(other, ParamSet):
            return NotImplemented
        return self.compatible(other) and np.array_equal(self.flat, other.flat)

    __hash__ = None

    def __repr__(self):
        inner = ", ".join(f"{n}{list(s)}" for n, s in self.layout)
        return f"ParamSet(v{self.version}: {inner})"

    # -- serialization ----------------------------------------------------
    def to_document(self, header: dict | None = None) -> dict:
        if not np.all(np.isfinite(self.flat)):
            raise DataError("refusing to serialize non-finite parameters")
        return {
            "format": CHECKPOINT_FORMAT,
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "version": self.version,
            "header": header or {},
            "entries": [
                {"name": n, "shape": list(s), "values": self[n].ravel().tolist()}
                for n, s in self.layout
            ],
        }

    @classmethod
    def from_document(cls, doc: dict) -> "ParamSet":
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise DataError(f"not a parameter checkpoint (format={doc.get('format')!r})")
        if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise DataError(f"unsupported checkpoint version {doc.get('format_version')!r}")
        layout, chunks = [], []
        for entry in doc["entries"]:
            shape = tuple(entry["shape"])
            values = np.asarray(entry["values"], dtype=np.float64)
            if values.size != math.prod(shape):
                raise DataError(f"entry {entry['name']!r}: {values.size} values for shape {shape}")
            layout.append((entry["name"], shape))
            chunks.append(values)
        flat = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(layout, flat, doc.get("version", 0))

    def dumps(self, header: dict | None = None) -> str:
        # json emits floats via repr(), the shortest string that round-trips
        return json.dumps(self.to_document(header), indent=1)

    @classmethod
    def loads(cls, text: str) -> "ParamSet":
        return cls.from_document(json.loads(text))

    def save(self, path, header: dict | None = None) -> None:
        Path(path).write_text(self.dumps(header) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> tuple["ParamSet", dict]:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_document(doc), doc.get("header", {})


# Gradients share the ParamSet layout exactly; the alias keeps signatures readable.
Gradients = ParamSet

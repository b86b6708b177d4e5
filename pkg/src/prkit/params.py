"""Flat parameter vectors with a named block layout.

A ParamVector is the single parameter currency of the library: models and
constraints expose their parameters as one, gradients come back as one,
and checkpoints serialize one. The layout maps block names to index
ranges; ranges must be disjoint and cover the whole vector.

Checkpoints are JSON documents {"layout": ..., "values": ...}. Python's
json writes floats with repr(), which round-trips IEEE doubles exactly,
so serialization is bit-exact.
"""

import json
from dataclasses import dataclass

import numpy as np


class LayoutError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ParamVector:
    values: np.ndarray
    layout: tuple  # ((name, start, stop), ...)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "layout", tuple(
            (str(n), int(a), int(b)) for n, a, b in self.layout))
        if values.ndim != 1:
            raise LayoutError("values must be a flat vector")
        if not np.all(np.isfinite(values)):
            raise LayoutError("parameter values must be finite")
        spans = sorted((a, b, n) for n, a, b in self.layout)
        cursor = 0
        seen = set()
        for a, b, n in spans:
            if n in seen:
                raise LayoutError(f"duplicate block name {n!r}")
            seen.add(n)
            if a != cursor or b <= a:
                raise LayoutError("layout ranges must be disjoint and cover the vector")
            cursor = b
        if cursor != values.size:
            raise LayoutError("layout does not cover the vector")

    @classmethod
    def from_blocks(cls, blocks) -> "ParamVector":
        """Build from an ordered iterable of (name, 1-d array) pairs."""
        layout, chunks, cursor = [], [], 0
        for name, arr in blocks:
            arr = np.asarray(arr, dtype=np.float64).ravel()
            layout.append((name, cursor, cursor + arr.size))
            chunks.append(arr)
            cursor += arr.size
        values = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(values, tuple(layout))

    def block(self, name: str) -> np.ndarray:
        for n, a, b in self.layout:
            if n == name:
                return self.values[a:b]
        raise KeyError(name)

    def block_names(self):
        return [n for n, _, _ in self.layout]

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(np.asarray(values, dtype=np.float64), self.layout)

    def zeros_like(self) -> "ParamVector":
        return ParamVector(np.zeros_like(self.values), self.layout)

    @property
    def size(self) -> int:
        return self.values.size

    def to_json(self) -> str:
        return json.dumps({
            "layout": [[n, a, b] for n, a, b in self.layout],
            "values": self.values.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "ParamVector":
        doc = json.loads(text)
        return cls(np.array(doc["values"], dtype=np.float64),
                   tuple((n, a, b) for n, a, b in doc["layout"]))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "ParamVector":
        with open(path) as fh:
            return cls.from_json(fh.read())

"""Sample spaces and exact enumeration.

Three kinds of space cover the model classes in this library: a finite
outcome set, fixed-length token sequences, and real-valued grids.
Finite-set and token-sequence spaces can be enumerated exactly as long as
their size stays under a cap (default 2**20), which is what keeps the
brute-force oracles affordable.
"""

from dataclasses import dataclass

import numpy as np

DEFAULT_ENUMERATION_CAP = 1_048_576

FINITE_SET = "finite-set"
TOKEN_SEQUENCE = "token-sequence"
REAL_GRID = "real-grid"


class SizeCapError(ValueError):
    """Raised when exact enumeration of a space would exceed the cap."""


@dataclass(frozen=True)
class SampleSpace:
    kind: str
    num_outcomes: int = 0      # finite-set
    vocab: int = 0             # token-sequence
    length: int = 0
    height: int = 0            # real-grid, values in [0, 1]
    width: int = 0

    def __post_init__(self):
        if self.kind == FINITE_SET:
            if self.num_outcomes < 2:
                raise ValueError("finite-set needs at least 2 outcomes")
        elif self.kind == TOKEN_SEQUENCE:
            if self.vocab < 2 or self.length < 1:
                raise ValueError("token-sequence needs vocab >= 2 and length >= 1")
        elif self.kind == REAL_GRID:
            if self.height < 1 or self.width < 1:
                raise ValueError("real-grid needs positive height and width")
        else:
            raise ValueError(f"unknown space kind {self.kind!r}")

    @classmethod
    def finite_set(cls, num_outcomes: int) -> "SampleSpace":
        return cls(FINITE_SET, num_outcomes=num_outcomes)

    @classmethod
    def token_sequence(cls, vocab: int, length: int) -> "SampleSpace":
        return cls(TOKEN_SEQUENCE, vocab=vocab, length=length)

    @classmethod
    def real_grid(cls, height: int, width: int) -> "SampleSpace":
        return cls(REAL_GRID, height=height, width=width)

    def size(self):
        """Number of elements, or None for continuous spaces."""
        if self.kind == FINITE_SET:
            return self.num_outcomes
        if self.kind == TOKEN_SEQUENCE:
            return self.vocab ** self.length
        return None

    def enumerable(self, cap: int = DEFAULT_ENUMERATION_CAP) -> bool:
        size = self.size()
        return size is not None and size <= cap


def enumerate_space(space: SampleSpace, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """All elements of an enumerable space, once each, in a stable order.

    Finite sets enumerate as 0..K-1; token sequences enumerate in
    lexicographic order as an (size, length) int array.
    """
    if not space.enumerable(cap):
        size = space.size()
        detail = "continuous space" if size is None else f"size {size} exceeds cap {cap}"
        raise SizeCapError(f"cannot enumerate {space.kind}: {detail}")
    if space.kind == FINITE_SET:
        return np.arange(space.num_outcomes)
    grids = np.meshgrid(*[np.arange(space.vocab)] * space.length, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)

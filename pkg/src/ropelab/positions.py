"""Position-id assignment for mixed text+frame token sequences.

Every token gets two 1-based indices: a *flatten* id counting tokens in stream
order, and a *temporal* id that all tokens of one frame share. A pure text
token gets the same value for both, so a text-only sequence degenerates to
ordinary 1-D indexing.
"""
from __future__ import annotations

from dataclasses import dataclass


class LayoutError(ValueError):
    """Invalid token layout or out-of-range token index."""


@dataclass(frozen=True)
class TokenLayout:
    """Counts for a text prefix of N tokens followed by M frames of K tokens each."""

    text_len: int
    image_count: int
    tokens_per_image: int

    def __post_init__(self) -> None:
        if self.text_len < 0:
            raise LayoutError(f"text_len must be >= 0, got {self.text_len}")
        if self.image_count < 0:
            raise LayoutError(f"image_count must be >= 0, got {self.image_count}")
        if self.tokens_per_image < 1:
            raise LayoutError(
                f"tokens_per_image must be >= 1, got {self.tokens_per_image}"
            )

    @property
    def total_len(self) -> int:
        return self.text_len + self.image_count * self.tokens_per_image


@dataclass(frozen=True)
class PositionIds:
    """Per-token (temporal, flatten) indices, both 1-based and of equal length."""

    temporal: tuple[int, ...]
    flatten: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.temporal) != len(self.flatten):
            raise LayoutError("temporal and flatten id vectors differ in length")

    def __len__(self) -> int:
        return len(self.flatten)


class PositionCursor:
    """Incrementally assigns ids to composed segments.

    Text after frames (or further frame groups) continues both counters
    monotonically, which is how question-after-video layouts are represented.
    """

    def __init__(self) -> None:
        self._temporal: list[int] = []
        self._flatten: list[int] = []
        self._next_temporal = 1
        self._next_flatten = 1

    def add_text(self, n: int) -> None:
        if n < 0:
            raise LayoutError(f"text segment length must be >= 0, got {n}")
        for _ in range(n):
            self._temporal.append(self._next_temporal)
            self._flatten.append(self._next_flatten)
            self._next_temporal += 1
            self._next_flatten += 1

    def add_frames(self, count: int, tokens_per_frame: int) -> None:
        if count < 0:
            raise LayoutError(f"frame count must be >= 0, got {count}")
        if count > 0 and tokens_per_frame < 1:
            raise LayoutError(
                f"tokens_per_frame must be >= 1, got {tokens_per_frame}"
            )
        for _ in range(count):
            shared = self._next_temporal
            self._next_temporal += 1
            for _ in range(tokens_per_frame):
                self._temporal.append(shared)
                self._flatten.append(self._next_flatten)
                self._next_flatten += 1

    def ids(self) -> PositionIds:
        return PositionIds(tuple(self._temporal), tuple(self._flatten))


def assign_position_ids(layout: TokenLayout) -> PositionIds:
    """Build both id vectors for a text-then-frames layout.

    Flatten ids are 1..N+M*K in order; the K tokens of frame j all share
    temporal id N+j.
    """
    cursor = PositionCursor()
    cursor.add_text(layout.text_len)
    cursor.add_frames(layout.image_count, layout.tokens_per_image)
    return cursor.ids()


def temporal_id_of(i: int, layout: TokenLayout) -> int:
    """Closed-form temporal id of the 1-based token index i.

    Equals i in the text prefix; inside the frame block it is
    N + floor((i - N - 1) / K) + 1.
    """
    if not 1 <= i <= layout.total_len:
        raise LayoutError(
            f"token index {i} out of range 1..{layout.total_len}"
        )
    n = layout.text_len
    if i <= n:
        return i
    return n + (i - n - 1) // layout.tokens_per_image + 1

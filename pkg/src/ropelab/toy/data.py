"""Synthetic needle and grounding task generators plus example serialization.

An example is a list of (user_tokens, assistant_tokens) turns with the frame
blocks attached to the first user turn; serialization flattens turns in order
(user text, then frames, then the answer, then any later turns), assigns the
two position ids, and masks the loss onto answer tokens only.

Both generators emit context, frames, question, answer in that order (the
question follows the video, mirroring how the time prompt is phrased), using
a second turn for the question so the serializer's composition rule places it
after the frames with both position counters continuing monotonically.

Needle: one frame carries a marker followed by a payload token; the question
names the marker and the answer is the payload. Distractor frames draw from
the same payload alphabet, so there is no out-of-distribution filler to key on.

Grounding: one frame carries the marker and the answer is that frame's
wall-clock timestamp, which is only stated in the (toggleable) time prompt.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ropelab.positions import PositionCursor, PositionIds
from ropelab.timeprompt import render_time_prompt, uniform_spec, uniform_timestamps
from ropelab.toy.vocab import ToyVocab


class TaskKind(Enum):
    NEEDLE = "needle"
    GROUNDING = "grounding"


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class TaskParams:
    """Knobs shared by both generators.

    duration_s is the maximum video length; each grounding example draws its
    own duration from [duration_s // 2, duration_s] so the frame->timestamp
    mapping cannot be memorized without the prompt.
    """

    frames: int = 64
    tokens_per_frame: int = 2
    payload_size: int = 32
    duration_s: int = 1280
    examples: int = 512
    time_prompt: bool = True

    def __post_init__(self) -> None:
        if self.frames < 1:
            raise DataError(f"frames must be >= 1, got {self.frames}")
        if self.tokens_per_frame < 1:
            raise DataError(
                f"tokens_per_frame must be >= 1, got {self.tokens_per_frame}"
            )
        if self.payload_size < 2:
            raise DataError(f"payload_size must be >= 2, got {self.payload_size}")
        if self.examples < 1:
            raise DataError(f"examples must be >= 1, got {self.examples}")
        if self.duration_s < 2:
            raise DataError(f"duration_s must be >= 2, got {self.duration_s}")


@dataclass
class InstructionExample:
    """Turns of token ids; frames (blocks of K tokens) belong to turn 0."""

    turns: list[tuple[list[int], list[int]]]
    frames: list[list[int]] = field(default_factory=list)
    frames_turn: int = 0

    def __post_init__(self) -> None:
        if not self.turns:
            raise DataError("an example needs at least one turn")
        if self.frames and self.frames_turn != 0:
            raise DataError("frames must be attached to the first user turn")
        k = {len(f) for f in self.frames}
        if len(k) > 1:
            raise DataError("all frames must have the same token count")


@dataclass
class SyntheticDataset:
    examples: list[InstructionExample]
    task_kind: TaskKind
    params: TaskParams
    seed: int
    vocab: ToyVocab
    needle_frames: list[int] = field(default_factory=list)
    durations: list[int | None] = field(default_factory=list)


def serialize_example(
    example: InstructionExample,
) -> tuple[list[int], PositionIds, list[bool]]:
    """Flatten an example into (token stream, position ids, answer mask)."""
    tokens: list[int] = []
    mask: list[bool] = []
    cursor = PositionCursor()
    for turn_index, (user, assistant) in enumerate(example.turns):
        tokens.extend(user)
        mask.extend([False] * len(user))
        cursor.add_text(len(user))
        if turn_index == 0 and example.frames:
            k = len(example.frames[0])
            for frame in example.frames:
                tokens.extend(frame)
            mask.extend([False] * (len(example.frames) * k))
            cursor.add_frames(len(example.frames), k)
        tokens.extend(assistant)
        mask.extend([True] * len(assistant))
        cursor.add_text(len(assistant))
    return tokens, cursor.ids(), mask


def build_vocab(params: TaskParams) -> ToyVocab:
    return ToyVocab(
        payload_size=params.payload_size,
        marker_size=params.payload_size,
        max_number=params.duration_s,
    )


def _stratified_needle_indices(rng: np.random.Generator, frames: int, n: int) -> list[int]:
    # cycle shuffled permutations so gold positions are uniform by construction
    out: list[int] = []
    while len(out) < n:
        out.extend(int(j) for j in rng.permutation(frames))
    return out[:n]


def _payload_frames(
    rng: np.random.Generator, vocab: ToyVocab, frames: int, k: int
) -> list[list[int]]:
    block = rng.integers(0, vocab.payload_size, size=(frames, k)) + vocab.payload(0)
    return block.tolist()


def gen_needle_task(params: TaskParams, seed: int) -> SyntheticDataset:
    """Marker -> payload retrieval. Requires tokens_per_frame >= 2 so the
    needle frame can hold the marker and its payload side by side."""
    if params.tokens_per_frame < 2:
        raise DataError("needle task needs tokens_per_frame >= 2")
    rng = np.random.default_rng(seed)
    vocab = build_vocab(params)
    needle_at = _stratified_needle_indices(rng, params.frames, params.examples)
    examples = []
    for idx in range(params.examples):
        j = needle_at[idx]
        marker = int(rng.integers(0, vocab.marker_size))
        payload = int(rng.integers(0, vocab.payload_size))
        frames = _payload_frames(rng, vocab, params.frames, params.tokens_per_frame)
        slot = int(rng.integers(0, params.tokens_per_frame - 1))
        frames[j][slot] = vocab.marker(marker)
        frames[j][slot + 1] = vocab.payload(payload)
        question = [vocab.q_needle, vocab.marker(marker)]
        answer = [vocab.payload(payload)]
        examples.append(
            InstructionExample(turns=[([], []), (question, answer)], frames=frames)
        )
    return SyntheticDataset(
        examples=examples,
        task_kind=TaskKind.NEEDLE,
        params=params,
        seed=seed,
        vocab=vocab,
        needle_frames=needle_at,
        durations=[None] * params.examples,
    )


def gen_grounding_task(params: TaskParams, seed: int) -> SyntheticDataset:
    """Marker -> timestamp localization, with the time prompt prepended when
    params.time_prompt is on."""
    if params.duration_s < params.frames:
        raise DataError("duration_s must be >= frames")
    if params.duration_s // 2 < params.frames:
        raise DataError("duration_s // 2 must be >= frames so durations vary validly")
    rng = np.random.default_rng(seed)
    vocab = build_vocab(params)
    needle_at = _stratified_needle_indices(rng, params.frames, params.examples)
    examples = []
    durations: list[int | None] = []
    for idx in range(params.examples):
        j = needle_at[idx]
        duration = int(rng.integers(params.duration_s // 2, params.duration_s + 1))
        timestamps = uniform_timestamps(duration, params.frames)
        marker = int(rng.integers(0, vocab.marker_size))
        frames = _payload_frames(rng, vocab, params.frames, params.tokens_per_frame)
        slot = int(rng.integers(0, params.tokens_per_frame))
        frames[j][slot] = vocab.marker(marker)
        context: list[int] = []
        if params.time_prompt:
            prompt = render_time_prompt(uniform_spec(duration, params.frames))
            context.extend(vocab.encode_text(prompt))
        question = [vocab.q_when, vocab.marker(marker)]
        answer = [vocab.number(timestamps[j])]
        examples.append(
            InstructionExample(turns=[(context, []), (question, answer)], frames=frames)
        )
        durations.append(duration)
    return SyntheticDataset(
        examples=examples,
        task_kind=TaskKind.GROUNDING,
        params=params,
        seed=seed,
        vocab=vocab,
        needle_frames=needle_at,
        durations=durations,
    )

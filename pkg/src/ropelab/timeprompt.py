"""The frozen temporal-context prompt and its inverse parser.

The template is byte-frozen on purpose: training and evaluation must tokenize
the exact same string, otherwise prompt drift confounds any ablation that
toggles it.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

TEMPLATE = (
    "The video has a total duration of {duration} seconds, from which "
    "{count} frames were uniformly sampled. The corresponding temporal "
    "positions of these frames are: {stamps}. "
    "Please answer the following question based on this video."
)

_PARSE_RE = re.compile(
    r"^The video has a total duration of (?P<duration>\d+) seconds, from which "
    r"(?P<count>\d+) frames were uniformly sampled\. The corresponding temporal "
    r"positions of these frames are: (?P<stamps>[\ds, ]+)\. "
    r"Please answer the following question based on this video\.$"
)

_STAMP_RE = re.compile(r"^(\d+)s$")


class TimePromptError(ValueError):
    """Malformed prompt text or invalid prompt spec; names the offending field."""

    def __init__(self, field: str, message: str) -> None:
        self.field = field
        super().__init__(f"{field}: {message}")


@dataclass(frozen=True)
class TimePromptSpec:
    """Duration, frame count, and per-frame timestamps, all integer seconds."""

    duration_s: int
    frame_count: int
    timestamps_s: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.duration_s < 0:
            raise TimePromptError("duration", f"must be >= 0, got {self.duration_s}")
        if self.frame_count < 1:
            raise TimePromptError("frame_count", f"must be >= 1, got {self.frame_count}")
        if len(self.timestamps_s) != self.frame_count:
            raise TimePromptError(
                "timestamps",
                f"expected {self.frame_count} entries, got {len(self.timestamps_s)}",
            )
        prev = None
        for ts in self.timestamps_s:
            if ts < 0:
                raise TimePromptError("timestamps", f"negative timestamp {ts}")
            if self.duration_s == 0:
                if ts != 0:
                    raise TimePromptError(
                        "timestamps", "must all be 0 when duration is 0"
                    )
            elif ts >= self.duration_s:
                raise TimePromptError(
                    "timestamps", f"{ts} not below duration {self.duration_s}"
                )
            if prev is not None:
                if ts < prev:
                    raise TimePromptError("timestamps", "must be non-decreasing")
                if ts == prev and self.duration_s >= self.frame_count:
                    raise TimePromptError(
                        "timestamps",
                        "must be strictly increasing when duration >= frame_count",
                    )
            prev = ts


def uniform_timestamps(duration_s: int, frame_count: int) -> list[int]:
    """Frame j lands at floor(j * duration / frame_count) seconds, j = 0..n-1."""
    if frame_count < 1:
        raise TimePromptError("frame_count", f"must be >= 1, got {frame_count}")
    if duration_s < 0:
        raise TimePromptError("duration", f"must be >= 0, got {duration_s}")
    return [j * duration_s // frame_count for j in range(frame_count)]


def uniform_spec(duration_s: int, frame_count: int) -> TimePromptSpec:
    """Spec for uniform sampling of frame_count frames over duration_s seconds."""
    return TimePromptSpec(
        duration_s=duration_s,
        frame_count=frame_count,
        timestamps_s=tuple(uniform_timestamps(duration_s, frame_count)),
    )


def render_time_prompt(spec: TimePromptSpec) -> str:
    stamps = ", ".join(f"{ts}s" for ts in spec.timestamps_s)
    return TEMPLATE.format(
        duration=spec.duration_s, count=spec.frame_count, stamps=stamps
    )


def parse_time_prompt(text: str) -> TimePromptSpec:
    """Recover the spec from a rendered prompt; rejects anything off-template."""
    match = _PARSE_RE.match(text)
    if match is None:
        for field, pattern in (
            ("duration", r"^The video has a total duration of (\d+) seconds"),
            (
                "frame_count",
                r"^The video has a total duration of \d+ seconds, from which "
                r"(\d+) frames were uniformly sampled\.",
            ),
        ):
            if re.match(pattern, text) is None:
                raise TimePromptError(field, "not found in prompt text")
        raise TimePromptError("timestamps", "prompt does not match the template")
    stamps: list[int] = []
    for part in match.group("stamps").split(", "):
        stamp_match = _STAMP_RE.match(part)
        if stamp_match is None:
            raise TimePromptError("timestamps", f"malformed entry {part!r}")
        stamps.append(int(stamp_match.group(1)))
    count = int(match.group("count"))
    if count != len(stamps):
        raise TimePromptError(
            "frame_count", f"declared {count} frames but listed {len(stamps)} timestamps"
        )
    return TimePromptSpec(
        duration_s=int(match.group("duration")),
        frame_count=count,
        timestamps_s=tuple(stamps),
    )

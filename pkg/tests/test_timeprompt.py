import numpy as np
import pytest

from ropelab.timeprompt import (
    TimePromptError,
    TimePromptSpec,
    parse_time_prompt,
    render_time_prompt,
    uniform_spec,
    uniform_timestamps,
)


def test_uniform_timestamps_640s_64_frames():
    assert uniform_timestamps(640, 64) == list(range(0, 640, 10))


def test_uniform_timestamps_single_frame():
    assert uniform_timestamps(123, 1) == [0]


def test_uniform_timestamps_100s_8_frames():
    assert uniform_timestamps(100, 8) == [0, 12, 25, 37, 50, 62, 75, 87]


def test_uniform_timestamps_properties():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 200))
        duration = int(rng.integers(n, 5000))
        ts = uniform_timestamps(duration, n)
        assert ts[0] == 0
        assert ts == sorted(ts)
        assert all(t < duration for t in ts)
        assert len(set(ts)) == n  # strictly increasing when duration >= frames


def test_uniform_timestamps_rejects_zero_frames():
    with pytest.raises(TimePromptError):
        uniform_timestamps(10, 0)


def test_render_640s_template_frozen():
    text = render_time_prompt(uniform_spec(640, 64))
    assert text.startswith(
        "The video has a total duration of 640 seconds, from which 64 frames "
        "were uniformly sampled."
    )
    stamps = ", ".join(f"{t}s" for t in range(0, 640, 10))
    assert (
        text == "The video has a total duration of 640 seconds, from which 64 "
        "frames were uniformly sampled. The corresponding temporal positions "
        f"of these frames are: {stamps}. "
        "Please answer the following question based on this video."
    )


def test_render_single_timestamp():
    text = render_time_prompt(uniform_spec(10, 1))
    assert ": 0s. Please answer the following question based on this video." in text


def test_parse_recovers_spec():
    spec = uniform_spec(640, 64)
    assert parse_time_prompt(render_time_prompt(spec)) == spec


def _random_valid_spec(rng) -> TimePromptSpec:
    if rng.random() < 0.7:
        n = int(rng.integers(1, 100))
        duration = int(rng.integers(n, 4000))
        stamps = np.sort(rng.choice(duration, size=n, replace=False))
        return TimePromptSpec(duration, n, tuple(int(t) for t in stamps))
    # more frames than seconds: repeats allowed
    n = int(rng.integers(2, 40))
    duration = int(rng.integers(1, n))
    stamps = np.sort(rng.integers(0, duration, size=n))
    return TimePromptSpec(duration, n, tuple(int(t) for t in stamps))


def test_round_trip_on_random_specs():
    rng = np.random.default_rng(1)
    for _ in range(500):
        spec = _random_valid_spec(rng)
        assert parse_time_prompt(render_time_prompt(spec)) == spec


def test_parse_errors_name_first_bad_field():
    with pytest.raises(TimePromptError) as err:
        parse_time_prompt("A video of 640 seconds")
    assert err.value.field == "duration"

    with pytest.raises(TimePromptError) as err:
        parse_time_prompt(
            "The video has a total duration of 640 seconds, from which many "
            "frames were uniformly sampled."
        )
    assert err.value.field == "frame_count"

    good = render_time_prompt(uniform_spec(100, 4))
    with pytest.raises(TimePromptError) as err:
        parse_time_prompt(good.replace("50s", "50"))
    assert err.value.field == "timestamps"

    with pytest.raises(TimePromptError) as err:
        parse_time_prompt(
            render_time_prompt(uniform_spec(100, 4)).replace("4 frames", "5 frames")
        )
    assert err.value.field == "frame_count"


def test_spec_validation():
    with pytest.raises(TimePromptError):
        TimePromptSpec(10, 2, (0,))
    with pytest.raises(TimePromptError):
        TimePromptSpec(10, 2, (5, 3))
    with pytest.raises(TimePromptError):
        TimePromptSpec(10, 2, (0, 10))
    with pytest.raises(TimePromptError):
        TimePromptSpec(10, 2, (3, 3))  # duration >= frames: strictly increasing
    with pytest.raises(TimePromptError):
        TimePromptSpec(0, 1, (1,))
    # duration 0 with all-zero stamps is the degenerate-but-valid case
    TimePromptSpec(0, 2, (0, 0))

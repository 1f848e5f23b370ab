import pytest

from ropelab.positions import (
    LayoutError,
    PositionCursor,
    TokenLayout,
    assign_position_ids,
    temporal_id_of,
)


def test_mixed_layout_example():
    layout = TokenLayout(text_len=2, image_count=2, tokens_per_image=3)
    ids = assign_position_ids(layout)
    assert ids.flatten == tuple(range(1, 9))
    assert ids.temporal == (1, 2, 3, 3, 3, 4, 4, 4)


def test_text_only_degenerates():
    layout = TokenLayout(text_len=5, image_count=0, tokens_per_image=1)
    ids = assign_position_ids(layout)
    assert ids.flatten == ids.temporal == (1, 2, 3, 4, 5)


def test_frames_only():
    layout = TokenLayout(text_len=0, image_count=3, tokens_per_image=2)
    ids = assign_position_ids(layout)
    assert ids.flatten == tuple(range(1, 7))
    assert ids.temporal == (1, 1, 2, 2, 3, 3)


def test_single_token_frames_degenerate():
    layout = TokenLayout(text_len=4, image_count=5, tokens_per_image=1)
    ids = assign_position_ids(layout)
    assert ids.temporal == ids.flatten


@pytest.mark.parametrize(
    "i, layout, expected",
    [
        (5, TokenLayout(4, 2, 3), 5),  # first frame token
        (11, TokenLayout(2, 4, 3), 5),  # 2 + floor(8/3) + 1
        (3, TokenLayout(5, 0, 1), 3),  # text branch
    ],
)
def test_temporal_id_closed_form(i, layout, expected):
    assert temporal_id_of(i, layout) == expected


def test_closed_form_matches_enumeration_exhaustively():
    for n in range(0, 11):
        for m in range(0, 7):
            for k in range(1, 9):
                layout = TokenLayout(n, m, k)
                ids = assign_position_ids(layout)
                assert len(ids) == layout.total_len == n + m * k
                for i in range(1, layout.total_len + 1):
                    assert temporal_id_of(i, layout) == ids.temporal[i - 1]
                if layout.total_len:
                    assert max(ids.temporal) == n + m
                    assert max(ids.flatten) == n + m * k


def test_rejects_invalid_layouts():
    with pytest.raises(LayoutError):
        TokenLayout(text_len=-1, image_count=0, tokens_per_image=1)
    with pytest.raises(LayoutError):
        TokenLayout(text_len=1, image_count=2, tokens_per_image=0)
    with pytest.raises(LayoutError):
        temporal_id_of(0, TokenLayout(3, 0, 1))
    with pytest.raises(LayoutError):
        temporal_id_of(9, TokenLayout(2, 2, 3))


def test_cursor_composes_text_after_frames():
    cursor = PositionCursor()
    cursor.add_text(2)
    cursor.add_frames(2, 3)
    cursor.add_text(2)  # question text after the video
    ids = cursor.ids()
    assert ids.flatten == tuple(range(1, 11))
    assert ids.temporal == (1, 2, 3, 3, 3, 4, 4, 4, 5, 6)
    # both counters stay strictly monotone across segment boundaries
    assert all(b >= a for a, b in zip(ids.temporal, ids.temporal[1:]))

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from gatedseg.errors import ShapeError
from gatedseg.model.grid import TokenGrid
from gatedseg.model.windows import (MASK_NEG, build_shift_attention_mask,
                                    shift_region_labels, window_partition,
                                    window_reverse)


def make_grid(b, h, w, c):
    return TokenGrid(torch.arange(b * h * w * c, dtype=torch.float32).reshape(b, h * w, c), h, w)


def test_4x4_grid_window_2_enumerated():
    # tokens hold their own grid index so each window's content is checkable by hand
    g = TokenGrid(torch.arange(16, dtype=torch.float32).reshape(1, 16, 1), 4, 4)
    win = window_partition(g, 2)
    assert win.shape == (4, 4, 1)
    # row-major window order: top-left, top-right, bottom-left, bottom-right
    expected = [[0, 1, 4, 5], [2, 3, 6, 7], [8, 9, 12, 13], [10, 11, 14, 15]]
    assert win.squeeze(-1).tolist() == expected


def test_full_grid_window_is_identity_partition():
    g = make_grid(2, 4, 4, 3)
    win = window_partition(g, 4)
    assert win.shape == (2, 16, 3)
    assert torch.equal(win, g.tokens)


def test_roundtrip_random_8x8_window_4():
    g = TokenGrid(torch.randn(3, 64, 5), 8, 8)
    back = window_reverse(window_partition(g, 4), 8, 8, 4)
    assert torch.equal(back.tokens, g.tokens)


@given(st.sampled_from([(2, 1), (4, 2), (4, 4), (6, 2), (6, 3), (8, 4), (8, 2), (12, 4)]),
       st.integers(1, 3), st.integers(1, 4))
@settings(max_examples=40, deadline=None)
def test_roundtrip_property(side_ws, b, c):
    side, ws = side_ws
    g = TokenGrid(torch.randn(b, side * side, c), side, side)
    back = window_reverse(window_partition(g, ws), side, side, ws)
    assert torch.equal(back.tokens, g.tokens)


def test_indivisible_grid_raises():
    g = make_grid(1, 6, 6, 1)
    with pytest.raises(ShapeError):
        window_partition(g, 4)
    with pytest.raises(ShapeError):
        window_reverse(torch.zeros(4, 16, 1), 6, 6, 4)


def test_reverse_inconsistent_count_raises():
    with pytest.raises(ShapeError):
        window_reverse(torch.zeros(3, 4, 1), 4, 4, 2)  # 4 windows expected per item


def region_oracle(grid_h, grid_w, window_size, shift):
    """Independent mask oracle: label tokens by pre-shift region, roll, and
    compare pairwise labels within each window."""
    labels = shift_region_labels(grid_h, grid_w, window_size, shift).numpy()
    rolled = np.roll(labels, (-shift, -shift), axis=(0, 1))
    nwh, nww = grid_h // window_size, grid_w // window_size
    masks = []
    for wy in range(nwh):
        for wx in range(nww):
            block = rolled[wy * window_size:(wy + 1) * window_size,
                           wx * window_size:(wx + 1) * window_size].reshape(-1)
            same = block[:, None] == block[None, :]
            masks.append(np.where(same, 0.0, MASK_NEG))
    return np.stack(masks)


@pytest.mark.parametrize("gh,gw,ws,shift", [
    (4, 4, 2, 1), (8, 8, 4, 2), (8, 8, 4, 1), (8, 8, 4, 3), (6, 6, 3, 1), (16, 8, 4, 2),
])
def test_shift_mask_matches_region_oracle(gh, gw, ws, shift):
    mask = build_shift_attention_mask(gh, gw, ws, shift)
    np.testing.assert_array_equal(mask.numpy(), region_oracle(gh, gw, ws, shift))


def test_shift_zero_has_no_mask():
    assert build_shift_attention_mask(8, 8, 4, 0) is None


def test_boundary_window_region_group_sizes():
    # 4x4 grid, window 2, shift 1: every window straddles both wrap
    # boundaries, so all four tokens come from distinct pre-shift regions
    # and each may attend only to itself.
    mask = build_shift_attention_mask(4, 4, 2, 1)
    assert mask.shape == (4, 4, 4)
    for w in range(4):
        assert (mask[w] == 0).sum(dim=-1).tolist() == [1, 1, 1, 1]

    # 8x8 grid, window 4, shift 2: the row bands of a window split 2/2 and
    # likewise the columns, so each token shares its region with exactly
    # three others (a 2x2 block).
    mask = build_shift_attention_mask(8, 8, 4, 2)
    for w in range(4):
        assert (mask[w] == 0).sum(dim=-1).tolist() == [4] * 16

    # 12x12 grid, window 4, shift 2: window 0 sits entirely inside the
    # first pre-shift band, nothing is masked there.
    mask = build_shift_attention_mask(12, 12, 4, 2)
    assert torch.all(mask[0] == 0)

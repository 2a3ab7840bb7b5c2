import numpy as np
import pytest

from dmlseg.errors import ConfigError, DataError
from dmlseg.gt_gen import (IGNORE, binarize_channels, dilate_window, downsample_mask,
                           effective_window, gen_multilabel_gt)
from dmlseg.model import ModelConfig

from reference import dilate_loops


def desk_config(**kw):
    defaults = dict(num_classes=4, input_size=(32, 32),
                    low_channels=((8, 2), (8, 2)), seg_channels=(8, 8),
                    dml_extra_stride=2, window_sizes=(5, 3, 1), levels=3)
    defaults.update(kw)
    return ModelConfig(**defaults)


class TestBinarize:
    def test_two_class_checkerboard(self):
        mask = np.array([[0, 1], [1, 0]], dtype=np.uint8)
        stack = binarize_channels(mask, 2)
        assert stack[0].tolist() == [[1, 0], [0, 1]]
        assert stack[1].tolist() == [[0, 1], [1, 0]]

    def test_all_ignore_is_zero(self):
        mask = np.full((3, 3), IGNORE, dtype=np.uint8)
        assert np.all(binarize_channels(mask, 5) == 0)

    def test_channels_partition_valid_pixels(self):
        rng = np.random.default_rng(0)
        mask = rng.integers(0, 6, size=(10, 10)).astype(np.uint8)
        mask[rng.random((10, 10)) < 0.2] = IGNORE
        stack = binarize_channels(mask, 6)
        sums = stack.sum(axis=0)
        assert np.array_equal(sums, (mask != IGNORE).astype(np.uint8))

    def test_out_of_range_names_pixel(self):
        mask = np.zeros((4, 4), dtype=np.uint8)
        mask[2, 3] = 9
        with pytest.raises(DataError, match=r"\(2, 3\)"):
            binarize_channels(mask, 4)


class TestDilate:
    def test_point_becomes_block(self):
        binary = np.zeros((1, 9, 9), dtype=np.uint8)
        binary[0, 4, 4] = 1
        out = dilate_window(binary, 3, 1)
        expect = np.zeros((9, 9), dtype=np.uint8)
        expect[3:6, 3:6] = 1
        assert np.array_equal(out[0], expect)

    def test_window_one_stride_one_identity(self):
        rng = np.random.default_rng(1)
        binary = (rng.random((3, 8, 8)) < 0.3).astype(np.uint8)
        assert np.array_equal(dilate_window(binary, 1, 1), binary)

    def test_even_window_rejected(self):
        with pytest.raises(ConfigError, match="odd"):
            dilate_window(np.zeros((1, 4, 4), dtype=np.uint8), 2, 1)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        combos = [(w, s) for w in (1, 3, 5, 7) for s in (1, 2, 4)]
        for i in range(48):
            w, s = combos[i % len(combos)]
            binary = (rng.random((3, 16, 16)) < 0.25).astype(np.uint8)
            out = dilate_window(binary, w, s)
            expect = dilate_loops(binary, w, s)
            assert np.array_equal(out, expect), f"window={w} stride={s}"

    def test_monotone_in_window_size(self):
        rng = np.random.default_rng(3)
        binary = (rng.random((2, 12, 12)) < 0.2).astype(np.uint8)
        prev = dilate_window(binary, 1, 2)
        for w in (3, 5, 7):
            cur = dilate_window(binary, w, 2)
            assert np.all(cur >= prev)
            prev = cur

    def test_constant_channel_unchanged(self):
        binary = np.ones((1, 8, 8), dtype=np.uint8)
        for w in (1, 3, 7):
            assert np.all(dilate_window(binary, w, 2) == 1)


class TestDownsample:
    def test_majority_wins(self):
        mask = np.array([[1, 1], [1, 2]], dtype=np.uint8)
        assert downsample_mask(mask, 2, 4)[0, 0] == 1

    def test_tie_goes_to_lowest(self):
        mask = np.array([[3, 3], [1, 1]], dtype=np.uint8)
        assert downsample_mask(mask, 2, 4)[0, 0] == 1

    def test_ignore_excluded_then_all_ignore(self):
        mask = np.array([[IGNORE, IGNORE], [IGNORE, 2]], dtype=np.uint8)
        assert downsample_mask(mask, 2, 4)[0, 0] == 2
        mask = np.full((2, 2), IGNORE, dtype=np.uint8)
        assert downsample_mask(mask, 2, 4)[0, 0] == IGNORE

    def test_factor_one_identity(self):
        mask = np.arange(9, dtype=np.uint8).reshape(3, 3) % 4
        assert np.array_equal(downsample_mask(mask, 1, 4), mask)


class TestMultilabelGt:
    def test_uniform_mask_all_levels(self):
        cfg = desk_config()
        mask = np.full((32, 32), 2, dtype=np.uint8)
        targets = gen_multilabel_gt(mask, cfg)
        assert len(targets) == 3
        for t in targets:
            assert t.shape == (4, 4, 4)
            assert np.all(t[2] == 1)
            assert np.all(np.delete(t, 2, axis=0) == 0)

    def test_effective_window_arithmetic(self):
        # spans stride*w pixels on the fine grid; odd variant when even
        assert effective_window(17, 4) == 67
        assert effective_window(5, 2) == 9
        assert effective_window(3, 1) == 3
        assert effective_window(5, 3) == 15

    def test_larger_window_is_superset(self):
        cfg = desk_config()
        rng = np.random.default_rng(5)
        mask = rng.integers(0, 4, size=(32, 32)).astype(np.uint8)
        big, mid, small = gen_multilabel_gt(mask, cfg)
        assert np.all(big >= mid)
        assert np.all(mid >= small)

    def test_consistent_with_grid_mask(self):
        # wherever the decimated mask has class k, the covering window's
        # bit is set at every level
        cfg = desk_config()
        rng = np.random.default_rng(6)
        mask = rng.integers(0, 4, size=(32, 32)).astype(np.uint8)
        grid = downsample_mask(mask, cfg.s_low, cfg.num_classes)
        targets = gen_multilabel_gt(mask, cfg)
        s = cfg.dml_extra_stride
        for level, wj in enumerate(cfg.window_sizes):
            eff = effective_window(wj, s)
            half = (eff - 1) // 2
            off = (s - 1) // 2
            t = targets[level]
            for y in range(grid.shape[0]):
                for x in range(grid.shape[1]):
                    k = int(grid[y, x])
                    if k == IGNORE:
                        continue
                    for r in range(t.shape[1]):
                        for c in range(t.shape[2]):
                            cy, cx = r * s + off, c * s + off
                            if abs(y - cy) <= half and abs(x - cx) <= half:
                                assert t[k, r, c] == 1

    def test_indivisible_mask_rejected(self):
        cfg = desk_config()
        with pytest.raises(ConfigError, match="divisible"):
            gen_multilabel_gt(np.zeros((30, 32), dtype=np.uint8), cfg)

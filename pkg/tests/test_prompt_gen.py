import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vidshadow.data_io import ShadowMask
from vidshadow.errors import ContractError, FormatError
from vidshadow.prompt_gen import (
    BoxPrompt,
    connected_components,
    extract_boxes,
    load_boxes,
    perturb_boxes,
    save_boxes,
)


def flood_fill_regions(mask: np.ndarray) -> list[set[tuple[int, int]]]:
    """Independent oracle: plain stack-based flood fill over 8-neighborhoods.

    Regions are returned in order of their first pixel in a row-major scan.
    """
    height, width = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    regions = []
    for y in range(height):
        for x in range(width):
            if not mask[y, x] or seen[y, x]:
                continue
            stack = [(y, x)]
            seen[y, x] = True
            region = set()
            while stack:
                cy, cx = stack.pop()
                region.add((cy, cx))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = cy + dy, cx + dx
                        if (
                            0 <= ny < height
                            and 0 <= nx < width
                            and mask[ny, nx]
                            and not seen[ny, nx]
                        ):
                            seen[ny, nx] = True
                            stack.append((ny, nx))
            regions.append(region)
    return regions


def random_mask(seed: int, h: int = 64, w: int = 64, density: float = 0.4) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return (rng.random((h, w)) < density).astype(np.uint8)


class TestConnectedComponents:
    def test_empty_mask(self):
        assert connected_components(np.zeros((8, 8), dtype=np.uint8)) == []

    def test_diagonal_pixels_form_one_region(self):
        mask = np.zeros((4, 4), dtype=np.uint8)
        mask[1, 1] = 1
        mask[2, 2] = 1
        regions = connected_components(mask)
        assert len(regions) == 1
        assert regions[0].area == 2

    def test_non_binary_rejected(self):
        prob = ShadowMask(np.full((4, 4), 0.5, dtype=np.float32))
        with pytest.raises(ContractError):
            connected_components(prob)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_flood_fill_oracle(self, seed):
        mask = random_mask(seed)
        regions = connected_components(mask)
        oracle = flood_fill_regions(mask)
        assert len(regions) == len(oracle)
        for region, expected in zip(regions, oracle):
            got = {(int(y), int(x)) for y, x in region.pixels}
            assert got == expected

    @pytest.mark.parametrize("seed", range(10))
    def test_partition_property(self, seed):
        mask = random_mask(seed, 32, 32)
        regions = connected_components(mask)
        union: set = set()
        total = 0
        for region in regions:
            pixels = {(int(y), int(x)) for y, x in region.pixels}
            assert not (union & pixels), "regions must be pairwise disjoint"
            union |= pixels
            total += region.area
        foreground = {(int(y), int(x)) for y, x in np.argwhere(mask)}
        assert union == foreground
        assert total == len(foreground)


class TestExtractBoxes:
    def test_small_blob_discarded(self):
        mask = np.zeros((64, 64), dtype=np.uint8)
        mask[10:13, 10:13] = 1  # area 9 < 50
        assert extract_boxes(mask) == []

    def test_area_exactly_at_threshold_kept(self):
        mask = np.zeros((64, 64), dtype=np.uint8)
        mask[0:5, 0:10] = 1  # area 50
        assert len(extract_boxes(mask, min_area=50)) == 1

    def test_tight_bbox(self):
        mask = np.zeros((64, 64), dtype=np.uint8)
        mask[5:15, 5:15] = 1  # 10x10 blob, top-left (5, 5)
        assert extract_boxes(mask) == [BoxPrompt(5, 5, 14, 14)]

    def test_nine_blobs_fall_back_to_whole_image(self):
        mask = np.zeros((128, 128), dtype=np.uint8)
        for i in range(3):
            for j in range(3):
                mask[i * 40 : i * 40 + 8, j * 40 : j * 40 + 8] = 1
        assert extract_boxes(mask, min_area=50, max_boxes=8) == [
            BoxPrompt(0, 0, 127, 127)
        ]

    def test_eight_blobs_no_fallback(self):
        mask = np.zeros((128, 128), dtype=np.uint8)
        for k in range(8):
            y, x = divmod(k, 4)
            mask[y * 40 : y * 40 + 8, x * 30 : x * 30 + 8] = 1
        boxes = extract_boxes(mask, min_area=50, max_boxes=8)
        assert len(boxes) == 8

    @pytest.mark.parametrize("seed", range(10))
    def test_boxes_tightly_bound_regions(self, seed):
        mask = random_mask(seed, 48, 48, density=0.3)
        regions = [r for r in connected_components(mask) if r.area >= 20]
        boxes = extract_boxes(mask, min_area=20, max_boxes=10**9)
        assert len(boxes) <= 10**9
        for region, box in zip(regions, boxes):
            ys = region.pixels[:, 0]
            xs = region.pixels[:, 1]
            assert (box.y_min, box.y_max) == (ys.min(), ys.max())
            assert (box.x_min, box.x_max) == (xs.min(), xs.max())


class TestPerturbBoxes:
    def test_zero_shift_is_identity(self):
        boxes = [BoxPrompt(3, 4, 20, 21)]
        rng = np.random.default_rng(123)
        assert perturb_boxes(boxes, (32, 32), max_shift=0, rng=rng) == boxes

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_output_always_valid(self, seed):
        boxes = [BoxPrompt(0, 0, 10, 10), BoxPrompt(20, 5, 31, 30)]
        rng = np.random.default_rng(seed)
        out = perturb_boxes(boxes, (32, 32), max_shift=20, rng=rng)
        assert len(out) == len(boxes)
        for box in out:
            box.validate((32, 32))

    def test_offset_distribution(self):
        # Perturb a box far from every border so no clamping occurs, and
        # study the empirical x_min offset over 10^4 draws.
        box = BoxPrompt(100, 100, 200, 200)
        rng = np.random.default_rng(7)
        offsets = []
        for _ in range(10_000):
            (perturbed,) = perturb_boxes([box], (400, 400), max_shift=20, rng=rng)
            offsets.append(perturbed.x_min - box.x_min)
        offsets = np.array(offsets)
        assert offsets.min() >= -20 and offsets.max() <= 20
        assert set(np.unique(offsets)) <= set(range(-20, 21))
        assert abs(offsets.mean()) < 1.0


class TestBoxFiles:
    def test_round_trip(self, tmp_path):
        boxes = [BoxPrompt(0, 1, 2, 3), BoxPrompt(10, 20, 30, 40)]
        save_boxes(boxes, tmp_path / "boxes.txt")
        assert load_boxes(tmp_path / "boxes.txt") == boxes

    def test_empty_file(self, tmp_path):
        (tmp_path / "boxes.txt").write_text("")
        assert load_boxes(tmp_path / "boxes.txt") == []

    def test_malformed_line(self, tmp_path):
        (tmp_path / "boxes.txt").write_text("1 2 3\n")
        with pytest.raises(FormatError):
            load_boxes(tmp_path / "boxes.txt")

    def test_inverted_box_rejected(self, tmp_path):
        (tmp_path / "boxes.txt").write_text("5 0 1 4\n")
        with pytest.raises(FormatError):
            load_boxes(tmp_path / "boxes.txt")

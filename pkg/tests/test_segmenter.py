import json

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from vidshadow.checkpoint import state_dict_digest
from vidshadow.data_io import RunConfig, ShadowMask
from vidshadow.errors import ContractError, FormatError
from vidshadow.prompt_gen import BoxPrompt
from vidshadow.segmenter import (
    SegmenterConfig,
    SegmenterModel,
    finetune,
    load_adapted_segmenter,
)
from vidshadow.synthetic import blob_image


def tiny_gradcheck_model() -> SegmenterModel:
    config = SegmenterConfig(
        input_size=32, embed_dim=4, encoder_channels=(4, 4, 4), decoder_mlp_dim=8
    )
    torch.manual_seed(0)
    return SegmenterModel(config)


def finite_difference_grads(loss_fn, params, coords, h=1e-5):
    """Central-difference oracle over selected (param, flat_index) pairs."""
    out = []
    with torch.no_grad():
        for param, index in coords:
            flat = param.reshape(-1)
            original = flat[index].item()
            flat[index] = original + h
            plus = loss_fn().item()
            flat[index] = original - h
            minus = loss_fn().item()
            flat[index] = original
            out.append((plus - minus) / (2 * h))
    return torch.tensor(out, dtype=torch.float64)


class TestGeometry:
    def test_reference_embedding_shape(self):
        torch.manual_seed(0)
        model = SegmenterModel(SegmenterConfig.reference())
        image = np.random.default_rng(0).integers(0, 255, (240, 320, 3)).astype(np.uint8)
        embedding = model.encode_image(image)
        assert tuple(embedding.features.shape) == (256, 64, 64)

    def test_toy_grid(self):
        model = SegmenterModel(SegmenterConfig.toy())
        image = np.zeros((64, 64, 3), dtype=np.uint8)
        embedding = model.encode_image(image)
        assert tuple(embedding.features.shape)[1:] == (4, 4)

    def test_encode_deterministic(self):
        model = SegmenterModel(SegmenterConfig.toy())
        image = np.random.default_rng(1).integers(0, 255, (50, 70, 3)).astype(np.uint8)
        e1 = model.encode_image(image)
        e2 = model.encode_image(image)
        assert torch.equal(e1.features, e2.features)

    def test_zero_sized_image_rejected(self):
        model = SegmenterModel(SegmenterConfig.toy())
        with pytest.raises(ContractError):
            model.encode_image(np.zeros((0, 10, 3), dtype=np.uint8))

    @pytest.mark.parametrize("seed", range(30))
    def test_coordinate_round_trip_within_one_pixel(self, seed):
        model = SegmenterModel(SegmenterConfig.toy())
        rng = np.random.default_rng(seed)
        height, width = int(rng.integers(8, 260)), int(rng.integers(8, 260))
        x0, x1 = sorted(int(v) for v in rng.integers(0, width, 2))
        y0, y1 = sorted(int(v) for v in rng.integers(0, height, 2))
        box = BoxPrompt(x0, y0, x1, y1)
        embedding = model.encode_image(np.zeros((height, width, 3), dtype=np.uint8))
        back = embedding.embedding_to_box(embedding.box_to_embedding(box))
        for a, b in zip(back.as_tuple(), box.as_tuple()):
            assert abs(a - b) <= 1


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return SegmenterModel(SegmenterConfig.toy())


@pytest.fixture(scope="module")
def image():
    img, _ = blob_image(size=64, blob=32, seed=0)
    return img


class TestPredictMask:
    def test_empty_boxes_equal_whole_image_box(self, model, image, recwarn):
        a = model.predict_mask(image, [])
        b = model.predict_mask(image, [BoxPrompt.whole_image((64, 64))])
        assert np.array_equal(a.values, b.values)

    def test_output_in_unit_interval(self, model, image, recwarn):
        mask = model.predict_mask(image, [BoxPrompt(4, 4, 40, 40)])
        assert mask.kind == "probability"
        assert mask.values.min() >= 0.0 and mask.values.max() <= 1.0
        assert mask.shape == (64, 64)

    def test_invalid_box_rejected(self, model, image):
        with pytest.raises(ContractError):
            model.predict_mask(image, [BoxPrompt(0, 0, 64, 10)])

    def test_warns_when_nothing_detected(self):
        torch.manual_seed(3)
        model = SegmenterModel(SegmenterConfig.toy())
        model.predict_logits = lambda embedding, boxes: torch.full((32, 32), -10.0)
        image = np.zeros((32, 32, 3), dtype=np.uint8)
        with pytest.warns(UserWarning, match="no shadow regions"):
            mask = model.predict_mask(image, None)
        assert not mask.binarize(0.5).values.any()


class TestFinetune:
    def test_empty_dataset_rejected(self):
        model = SegmenterModel(SegmenterConfig.toy())
        with pytest.raises(ContractError):
            finetune(model, [])

    def test_frozen_blocks_bit_identical(self, segmenter_overfit):
        model, report = segmenter_overfit
        assert report["frozen_digests_before"] == {
            name: state_dict_digest(module.state_dict())
            for name, module in model.parameter_blocks().items()
            if model.frozen[name]
        }

    def test_overfit_reaches_target_iou(self, segmenter_overfit):
        _, report = segmenter_overfit
        assert report["steps"] <= 2000
        assert report["iou"] >= 0.9

    def test_loss_decreases_over_epochs(self):
        torch.manual_seed(1)
        model = SegmenterModel(SegmenterConfig.toy())
        rng = np.random.default_rng(2)
        dataset = [blob_image(size=64, blob=24 + 2 * i, seed=i) for i in range(10)]
        config = RunConfig().replace(finetune_epochs=50, lr_finetune=1e-3, seed=0)
        _, log = finetune(model, dataset, config, rng=rng)
        assert log[-1]["mean_ce"] < log[0]["mean_ce"]
        assert [entry["epoch"] for entry in log] == list(range(1, 51))

    def test_zero_learning_rate_changes_nothing(self):
        torch.manual_seed(2)
        model = SegmenterModel(SegmenterConfig.toy())
        before = state_dict_digest(model.state_dict())
        image, gt = blob_image(size=64, blob=32, seed=0)
        config = RunConfig().replace(finetune_epochs=3, lr_finetune=0.0)
        finetune(model, [(image, gt)], config)
        assert state_dict_digest(model.state_dict()) == before

    def test_non_binary_gt_rejected(self):
        model = SegmenterModel(SegmenterConfig.toy())
        image, _ = blob_image()
        soft = ShadowMask(np.full((64, 64), 0.5, dtype=np.float32))
        with pytest.raises(ContractError):
            finetune(model, [(image, soft)])

    def test_prompt_sensitivity(self, segmenter_overfit):
        model, report = segmenter_overfit
        image, gt = report["sample"]
        boxes = report["boxes"]
        mask = model.predict_mask(image, boxes)
        inside = np.zeros(gt.shape, dtype=bool)
        for box in boxes:
            inside[box.y_min : box.y_max + 1, box.x_min : box.x_max + 1] = True
        assert mask.values[~inside].mean() <= mask.values[inside].mean()


class TestGradient:
    def test_decoder_gradient_matches_finite_differences(self):
        model = tiny_gradcheck_model().double()
        params = [p for p in model.mask_decoder.parameters()]
        assert sum(p.numel() for p in params) <= 1000

        image = np.random.default_rng(0).integers(0, 255, (32, 32, 3)).astype(np.uint8)
        gt = torch.from_numpy(
            (np.random.default_rng(1).random((32, 32)) < 0.4).astype(np.float64)
        )
        embedding = model.encode_image(image)
        boxes = [BoxPrompt(4, 4, 20, 26)]

        def loss_fn():
            logits = model.predict_logits(embedding, boxes)
            return F.binary_cross_entropy_with_logits(logits, gt)

        loss = loss_fn()
        grads = torch.autograd.grad(loss, params)

        rng = np.random.default_rng(7)
        coords, auto = [], []
        for param, grad in zip(params, grads):
            for index in rng.choice(param.numel(), size=min(3, param.numel()), replace=False):
                coords.append((param, int(index)))
                auto.append(grad.reshape(-1)[int(index)].item())
        fd = finite_difference_grads(loss_fn, model.parameters(), coords)
        auto = torch.tensor(auto, dtype=torch.float64)
        rel = torch.norm(auto - fd) / max(torch.norm(auto), torch.norm(fd), torch.tensor(1e-12))
        assert rel <= 1e-3


class TestCheckpoint:
    def test_save_load_round_trip(self, tmp_path):
        torch.manual_seed(5)
        model = SegmenterModel(SegmenterConfig.toy())
        model.save(tmp_path / "seg.pt")
        loaded = SegmenterModel.load(tmp_path / "seg.pt")
        assert state_dict_digest(loaded.state_dict()) == state_dict_digest(model.state_dict())
        assert loaded.frozen == model.frozen
        image = np.random.default_rng(0).integers(0, 255, (48, 48, 3)).astype(np.uint8)
        a = model.predict_mask(image, None)
        b = loaded.predict_mask(image, None)
        assert np.array_equal(a.values, b.values)

    def test_adapter_manifest(self, tmp_path):
        torch.manual_seed(6)
        source = SegmenterModel(SegmenterConfig.toy())
        external = {
            f"ext.{name}": tensor.clone()
            for name, tensor in source.state_dict().items()
        }
        torch.save(external, tmp_path / "weights.pt")
        manifest = {
            "geometry": {
                "input_size": 64,
                "embed_dim": 16,
                "encoder_channels": [8, 8, 16],
            },
            "mapping": {f"ext.{name}": name for name in source.state_dict()},
        }
        (tmp_path / "manifest.json").write_text(json.dumps(manifest))
        adapted = load_adapted_segmenter(tmp_path / "weights.pt", tmp_path / "manifest.json")
        assert state_dict_digest(adapted.state_dict()) == state_dict_digest(source.state_dict())
        assert adapted.frozen["image_encoder"] and adapted.frozen["prompt_encoder"]

    def test_adapter_rejects_uncovered_frozen_block(self, tmp_path):
        torch.manual_seed(7)
        source = SegmenterModel(SegmenterConfig.toy())
        state = source.state_dict()
        mapping = {
            f"ext.{name}": name
            for name in state
            if not name.startswith("image_encoder.layers.0")
        }
        external = {f"ext.{name}": state[name] for name in state
                    if f"ext.{name}" in mapping}
        torch.save(external, tmp_path / "weights.pt")
        manifest = {
            "geometry": {"input_size": 64, "embed_dim": 16, "encoder_channels": [8, 8, 16]},
            "mapping": mapping,
        }
        (tmp_path / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(FormatError):
            load_adapted_segmenter(tmp_path / "weights.pt", tmp_path / "manifest.json")

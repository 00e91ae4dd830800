"""Shared fixtures: desk-scale trained models, reused across test modules.

The overfit runs double as acceptance evidence, so they record step counts,
achieved IoU, and wall time.
"""

import time

import numpy as np
import pytest
import torch

from vidshadow.checkpoint import state_dict_digest
from vidshadow.data_io import RunConfig
from vidshadow.lstn import LstnConfig, LstnModel, train_lstn
from vidshadow.metrics import mask_iou
from vidshadow.prompt_gen import extract_boxes
from vidshadow.propagation import PropagationSession
from vidshadow.segmenter import SegmenterConfig, SegmenterModel, finetune
from vidshadow.synthetic import blob_image, moving_blob_video


@pytest.fixture(scope="session")
def segmenter_overfit():
    """Toy segmenter fine-tuned on one blob sample until IoU >= 0.9.

    Returns (model, report) where the report carries steps used, final IoU,
    wall time, pre-training digests of the frozen blocks, and the sample.
    """
    torch.manual_seed(0)
    image, gt = blob_image(size=64, blob=32, seed=0)
    model = SegmenterModel(SegmenterConfig.toy())
    digests_before = {
        name: state_dict_digest(module.state_dict())
        for name, module in model.parameter_blocks().items()
        if model.frozen[name]
    }
    config = RunConfig().replace(finetune_epochs=100, lr_finetune=2e-3, seed=0)
    rng = np.random.default_rng(0)
    start = time.time()
    steps = 0
    iou_val = 0.0
    while steps < 2000:
        finetune(model, [(image, gt)], config, rng=rng)
        steps += config.finetune_epochs
        iou_val = mask_iou(model.predict_mask(image, None).binarize(0.5), gt)
        if iou_val >= 0.9:
            break
    report = {
        "steps": steps,
        "iou": float(iou_val),
        "seconds": time.time() - start,
        "frozen_digests_before": digests_before,
        "sample": (image, gt),
        "boxes": extract_boxes(gt),
    }
    return model, report


def propagated_mean_iou(model, video, config):
    """Seed with the first frame's ground truth, propagate, and average the
    IoU of the propagated frames against ground truth."""
    session = PropagationSession(model, video, video.gt_masks[0], "forward", config)
    masks = session.run()
    ious = [
        mask_iou(masks[t].binarize(0.5), video.gt_masks[t])
        for t in range(1, len(video))
    ]
    return float(np.mean(ious))


@pytest.fixture(scope="session")
def lstn_overfit():
    """Toy propagation network overfit on a 5-frame moving-blob video until
    the propagated mean IoU reaches 0.9 (budget: 500 steps)."""
    torch.manual_seed(0)
    video = moving_blob_video(num_frames=5, size=64, blob=32, step=(2, 3), seed=0)
    model = LstnModel(LstnConfig.toy())
    config = RunConfig().replace(
        steps=100,
        batch_size=2,
        crop_size=64,
        crop_scale_min=1.0,
        short_window_w=5,
        rollout_frames=3,
        lr_pretrained=1e-3,
        lr_scratch=2e-3,
        weight_decay=0.0,
        seed=0,
    )
    rng = np.random.default_rng(0)
    start = time.time()
    steps = 0
    mean_iou = 0.0
    while steps < 500:
        train_lstn(model, [video], config, rng=rng)
        steps += config.steps
        mean_iou = propagated_mean_iou(model, video, config)
        if mean_iou >= 0.9:
            break
    report = {
        "steps": steps,
        "mean_iou": mean_iou,
        "seconds": time.time() - start,
        "video": video,
        "config": config,
    }
    return model, report


@pytest.fixture(scope="session")
def toy_dataset_dir(tmp_path_factory):
    """Two-video moving-blob dataset in the on-disk layout."""
    from vidshadow.synthetic import make_toy_dataset

    root = tmp_path_factory.mktemp("toydata")
    make_toy_dataset(root, num_videos=2, num_frames=5, size=64, blob=32, seed=0)
    return root


@pytest.fixture(scope="session")
def e2e_checkpoints(tmp_path_factory, e2e_models):
    """The overfit segmenter/propagation models saved as checkpoint files."""
    segmenter, lstn_model, _, _ = e2e_models
    root = tmp_path_factory.mktemp("ckpts")
    segmenter.save(root / "segmenter.pt")
    lstn_model.save(root / "lstn.pt")
    return root


@pytest.fixture(scope="session")
def e2e_models(lstn_overfit):
    """Segmenter + propagation network overfit on the same toy video, for
    end-to-end runs seeded by the segmenter's own first/last-frame masks."""
    lstn_model, lstn_report = lstn_overfit
    video = lstn_report["video"]
    torch.manual_seed(1)
    segmenter = SegmenterModel(SegmenterConfig.toy())
    samples = [
        (video.frames[0], video.gt_masks[0]),
        (video.frames[-1], video.gt_masks[-1]),
    ]
    config = RunConfig().replace(finetune_epochs=150, lr_finetune=2e-3, seed=1)
    finetune(segmenter, samples, config, rng=np.random.default_rng(1))
    return segmenter, lstn_model, video, lstn_report["config"]

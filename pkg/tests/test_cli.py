import json

import pytest

from vidshadow.cli import main
from vidshadow.data_io import load_mask, load_video_sequence
from vidshadow.prompt_gen import extract_boxes, save_boxes


@pytest.fixture()
def boxes_file(tmp_path, toy_dataset_dir):
    video = load_video_sequence(toy_dataset_dir, "v00")
    path = tmp_path / "first.txt"
    save_boxes(extract_boxes(video.gt_masks[0]), path)
    return path


class TestExitCodes:
    def test_unknown_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["infer", "--nonsense"])
        assert excinfo.value.code == 2

    def test_missing_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as excinfo:
            main([])
        assert excinfo.value.code == 2

    def test_runtime_failure_exits_one(self, tmp_path, capsys):
        code = main(
            ["eval", "--pred", str(tmp_path / "none"), "--gt", str(tmp_path / "none")]
        )
        assert code == 1
        assert "error" in capsys.readouterr().err


class TestServeDefaults:
    def test_env_vars_fill_serve_flags(self, monkeypatch):
        monkeypatch.setenv("VIDSHADOW_DATA", "/data")
        monkeypatch.setenv("VIDSHADOW_SEGMENTER", "/ck/seg.pt")
        monkeypatch.setenv("VIDSHADOW_LSTN", "/ck/lstn.pt")
        monkeypatch.setenv("VIDSHADOW_STATE", "/state")
        monkeypatch.setenv("VIDSHADOW_PORT", "9100")
        from vidshadow.cli import build_parser

        args = build_parser().parse_args(["serve"])
        assert args.data == "/data"
        assert args.segmenter == "/ck/seg.pt"
        assert args.port == 9100

    def test_serve_requires_flags_without_env(self, monkeypatch):
        for var in ("VIDSHADOW_DATA", "VIDSHADOW_SEGMENTER", "VIDSHADOW_LSTN",
                    "VIDSHADOW_STATE"):
            monkeypatch.delenv(var, raising=False)
        from vidshadow.cli import build_parser

        with pytest.raises(SystemExit) as excinfo:
            build_parser().parse_args(["serve"])
        assert excinfo.value.code == 2


class TestMakeToyData:
    def test_writes_layout(self, tmp_path):
        code = main(
            ["make-toy-data", "--out", str(tmp_path), "--videos", "1", "--frames", "3"]
        )
        assert code == 0
        video = load_video_sequence(tmp_path, "v00")
        assert len(video) == 3
        assert video.gt_masks is not None


class TestTrainingCommands:
    def test_finetune_writes_checkpoint_and_log(self, tmp_path, toy_dataset_dir):
        out = tmp_path / "ft"
        code = main(
            [
                "finetune",
                "--data", str(toy_dataset_dir),
                "--out", str(out),
                "--preset", "toy",
                "--max-samples", "2",
                "--set", "finetune_epochs=2",
            ]
        )
        assert code == 0
        assert (out / "segmenter.pt").exists()
        log = [json.loads(l) for l in (out / "finetune_log.jsonl").read_text().splitlines()]
        assert [entry["epoch"] for entry in log] == [1, 2]

    def test_train_lstn_writes_checkpoint_and_log(self, tmp_path, toy_dataset_dir):
        out = tmp_path / "lstn"
        code = main(
            [
                "train-lstn",
                "--data", str(toy_dataset_dir),
                "--out", str(out),
                "--preset", "toy",
                "--set", "steps=2",
                "--set", "batch_size=1",
                "--set", "crop_size=64",
                "--set", "short_window_w=3",
            ]
        )
        assert code == 0
        assert (out / "lstn.pt").exists()
        log = [json.loads(l) for l in (out / "train_log.jsonl").read_text().splitlines()]
        assert [entry["step"] for entry in log] == [1, 2]
        assert log[0]["lr_pretrained"] == 2e-5 and log[0]["lr_scratch"] == 2e-4


class TestInference:
    def test_infer_writes_all_frames(
        self, tmp_path, toy_dataset_dir, e2e_checkpoints, boxes_file
    ):
        out = tmp_path / "preds"
        code = main(
            [
                "infer",
                "--data", str(toy_dataset_dir),
                "--video", "v00",
                "--segmenter", str(e2e_checkpoints / "segmenter.pt"),
                "--lstn", str(e2e_checkpoints / "lstn.pt"),
                "--boxes", str(boxes_file),
                "--out", str(out),
                "--set", "short_window_w=5",
            ]
        )
        assert code == 0
        masks = sorted((out / "v00").glob("*.png"))
        assert len(masks) == 5
        assert load_mask(masks[0], kind="probability").shape == (64, 64)

    def test_infer_plus_writes_agreement(
        self, tmp_path, toy_dataset_dir, e2e_checkpoints, boxes_file
    ):
        out = tmp_path / "preds"
        code = main(
            [
                "infer-plus",
                "--data", str(toy_dataset_dir),
                "--video", "v00",
                "--segmenter", str(e2e_checkpoints / "segmenter.pt"),
                "--lstn", str(e2e_checkpoints / "lstn.pt"),
                "--boxes-first", str(boxes_file),
                "--out", str(out),
                "--set", "short_window_w=5",
            ]
        )
        assert code == 0
        assert len(list((out / "v00").glob("*.png"))) == 5
        records = [
            json.loads(line)
            for line in (out / "v00" / "agreement.jsonl").read_text().splitlines()
        ]
        assert len(records) == 5
        assert set(records[0]) == {"frame", "iou", "gated", "action"}

    def test_eval_full_pipeline(
        self, tmp_path, toy_dataset_dir, e2e_checkpoints, boxes_file, capsys
    ):
        preds = tmp_path / "preds"
        main(
            [
                "infer",
                "--data", str(toy_dataset_dir),
                "--video", "v00",
                "--segmenter", str(e2e_checkpoints / "segmenter.pt"),
                "--lstn", str(e2e_checkpoints / "lstn.pt"),
                "--boxes", str(boxes_file),
                "--out", str(preds),
                "--set", "short_window_w=5",
            ]
        )
        capsys.readouterr()
        out = tmp_path / "report"
        code = main(
            [
                "eval",
                "--pred", str(preds),
                "--gt", str(toy_dataset_dir / "annotations"),
                "--out", str(out),
            ]
        )
        assert code == 0
        stdout = capsys.readouterr().out
        assert "dataset" in stdout
        assert (out / "report.txt").exists()
        records = [
            json.loads(line)
            for line in (out / "records.jsonl").read_text().splitlines()
        ]
        dataset_row = next(r for r in records if r["scope"] == "dataset")
        # The overfit pipeline should evaluate well on its own training video.
        assert dataset_row["iou"] >= 0.8


@pytest.fixture(scope="session")
def ablate_flags(toy_dataset_dir):
    return [
        "--data", str(toy_dataset_dir),
        "--set", "steps=2",
        "--set", "batch_size=1",
        "--set", "crop_size=64",
        "--set", "short_window_w=3",
        "--set", "crop_scale_min=1.0",
    ]


class TestAblate:
    def test_blocks_axis_emits_four_rows(self, tmp_path, ablate_flags):
        out = tmp_path / "blocks"
        code = main(["ablate", "blocks", "--out", str(out), *ablate_flags])
        assert code == 0
        rows = [json.loads(l) for l in (out / "rows.jsonl").read_text().splitlines()]
        assert [row["blocks"] for row in rows] == [1, 2, 3, 4]
        assert all("iou" in row and "ber" in row for row in rows)

    def test_components_axis_emits_two_by_two_grid(self, tmp_path, ablate_flags):
        out = tmp_path / "components"
        code = main(["ablate", "components", "--out", str(out), *ablate_flags])
        assert code == 0
        rows = [json.loads(l) for l in (out / "rows.jsonl").read_text().splitlines()]
        grid = {(row["long"], row["short"]) for row in rows}
        assert grid == {(False, False), (False, True), (True, False), (True, True)}

    def test_components_no_memory_baseline(self, tmp_path, ablate_flags):
        out = tmp_path / "baseline"
        code = main(
            [
                "ablate", "components", "--out", str(out),
                "--long", "off", "--short", "off", *ablate_flags,
            ]
        )
        assert code == 0
        rows = [json.loads(l) for l in (out / "rows.jsonl").read_text().splitlines()]
        assert rows == [rows[0]]
        assert (rows[0]["long"], rows[0]["short"]) == (False, False)

    def test_window_axis(self, tmp_path, ablate_flags):
        out = tmp_path / "window"
        code = main(
            ["ablate", "window", "--windows", "1,3", "--out", str(out), *ablate_flags]
        )
        assert code == 0
        rows = [json.loads(l) for l in (out / "rows.jsonl").read_text().splitlines()]
        assert [row["window"] for row in rows] == [1, 3]

import json

import pytest

from config import RESOLVED_CONFIG_NAME
from main import EXIT_OK, dispatch
from models.image import Image
from services.backbone.checkpoint import CheckpointService
from services.image_service import ImageService
from utils.exceptions import EXIT_CONTRACT, EXIT_INTERNAL, EXIT_IO

TINY_MODEL = [
    "--set", "model.dim=16",
    "--set", "model.heads=2",
    "--set", "model.freq_dim=8",
    "--set", "semantic.dim=8",
    "--set", "degrade.scale=2",
    "--set", "data.size=32",
    "--set", "data.count=2",
]


@pytest.fixture
def hr_dir(tmp_path):
    out = tmp_path / "hr"
    assert dispatch(["gen-data", "--out", str(out), "--count", "2", "--size", "32", "--kind", "gradient"]) == EXIT_OK
    return out


class TestDispatch:
    def test_unknown_subcommand(self):
        assert dispatch(["upscale"]) == EXIT_IO

    def test_missing_required_flag(self):
        assert dispatch(["eval", "--out", "x"]) == EXIT_IO

    def test_unknown_config_key(self, tmp_path):
        code = dispatch(["gen-data", "--out", str(tmp_path), "--set", "data.colour=3"])
        assert code == EXIT_CONTRACT

    def test_malformed_set(self, tmp_path):
        assert dispatch(["gen-data", "--out", str(tmp_path), "--set", "data.count"]) == EXIT_CONTRACT

    def test_config_file_and_flag_precedence(self, tmp_path):
        config = tmp_path / "run.txt"
        config.write_text("data.count = 3\ndata.size = 32\n", encoding="utf-8")
        out = tmp_path / "hr"
        assert dispatch(["gen-data", "--config", str(config), "--out", str(out), "--count", "1"]) == EXIT_OK
        assert [p.name for p in ImageService.list_images(out)] == ["hr_0000.ppm"]
        assert "data.count = 1" in (out / RESOLVED_CONFIG_NAME).read_text(encoding="utf-8")

    def test_missing_checkpoint(self, tmp_path, hr_dir):
        code = dispatch(["sample", "--ckpt", str(tmp_path / "none.vsr"), "--in", str(hr_dir), "--out", str(tmp_path / "o")])
        assert code == EXIT_IO


class TestDataCommands:
    def test_gen_data(self, hr_dir):
        images = ImageService.load_directory(hr_dir)
        assert [name for name, _ in images] == ["hr_0000.ppm", "hr_0001.ppm"]
        assert images[0][1].size == (32, 32)
        assert (hr_dir / RESOLVED_CONFIG_NAME).exists()

    def test_degrade(self, tmp_path, hr_dir):
        lr_dir = tmp_path / "lr"
        assert dispatch(["degrade", "--in", str(hr_dir), "--out", str(lr_dir), "--scale", "2"]) == EXIT_OK
        lows = ImageService.load_directory(lr_dir)
        assert [img.size for _, img in lows] == [(16, 16), (16, 16)]

    def test_eval_identical_directories(self, capsys, hr_dir):
        assert dispatch(["eval", "--out", str(hr_dir), "--ref", str(hr_dir)]) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "filename\tpsnr_y\tssim_y"
        assert lines[-1] == "mean\tinf\t1.000000"

    def test_eval_writes_table(self, tmp_path, hr_dir):
        table = tmp_path / "report" / "table.csv"
        args = ["eval", "--out", str(hr_dir), "--ref", str(hr_dir), "--table", str(table), "--set", "eval.delimiter=comma"]
        assert dispatch(args) == EXIT_OK
        assert table.read_text(encoding="utf-8").splitlines()[0] == "filename,psnr_y,ssim_y"

    def test_eval_missing_output(self, tmp_path, hr_dir):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert dispatch(["eval", "--out", str(empty), "--ref", str(hr_dir)]) == EXIT_IO

    def test_align_identity(self, tmp_path):
        source = ImageService.gen_procedural_hr(seed=2, size=32, kind="blobs")
        ImageService.write_image(source, tmp_path / "source.ppm")
        ImageService.write_image(source, tmp_path / "photo.ppm")
        (tmp_path / "corners.txt").write_text("0 0 0 0\n31 0 31 0\n31 31 31 31\n0 31 0 31\n", encoding="utf-8")
        out = tmp_path / "aligned" / "pair.ppm"
        args = [
            "align", "--source", str(tmp_path / "source.ppm"), "--photo", str(tmp_path / "photo.ppm"),
            "--corners", str(tmp_path / "corners.txt"), "--out", str(out),
        ]
        assert dispatch(args) == EXIT_OK
        assert isinstance(ImageService.read_image(out), Image)
        report = json.loads(out.with_suffix(".json").read_text(encoding="utf-8"))
        assert report["valid_fraction"] == 1.0

    def test_align_degenerate_corners(self, tmp_path):
        source = Image.constant(16, 16, 0.5)
        ImageService.write_image(source, tmp_path / "s.ppm")
        (tmp_path / "c.txt").write_text("0 0 0 0\n1 1 1 1\n2 2 2 2\n0 9 0 9\n", encoding="utf-8")
        args = [
            "align", "--source", str(tmp_path / "s.ppm"), "--photo", str(tmp_path / "s.ppm"),
            "--corners", str(tmp_path / "c.txt"), "--out", str(tmp_path / "a.ppm"),
        ]
        assert dispatch(args) == EXIT_CONTRACT


@pytest.mark.integration
class TestPipeline:
    def test_train_distill_sample(self, tmp_path, hr_dir):
        lr_dir, runs = tmp_path / "lr", tmp_path / "runs"
        assert dispatch(["degrade", "--in", str(hr_dir), "--out", str(lr_dir), "--scale", "2"]) == EXIT_OK

        train = ["train", "--hr", str(hr_dir), "--lr", str(lr_dir), "--out", str(runs / "teacher"), "--steps", "2", "--batch", "2"]
        assert dispatch(train + TINY_MODEL) == EXIT_OK
        teacher = runs / "teacher" / "teacher.vsr"
        assert CheckpointService.load(teacher).metadata["step"] == 2

        distill = ["distill", "--teacher", str(teacher), "--lr", str(lr_dir), "--hr", str(hr_dir), "--out", str(runs / "student"), "--steps", "1"]
        assert dispatch(distill + TINY_MODEL) == EXIT_OK
        student = runs / "student" / "student.vsr"

        for ckpt, name in ((teacher, "teacher_out"), (student, "student_out")):
            out = tmp_path / name
            assert dispatch(["sample", "--ckpt", str(ckpt), "--in", str(lr_dir), "--out", str(out), "--steps", "2"]) == EXIT_OK
            assert [img.size for _, img in ImageService.load_directory(out)] == [(32, 32), (32, 32)]


class TestReproducibility:
    def test_rerun_from_resolved_config(self, tmp_path, hr_dir):
        first = tmp_path / "lr_a"
        assert dispatch(["degrade", "--in", str(hr_dir), "--out", str(first), "--scale", "2", "--set", "degrade.seed=5"]) == EXIT_OK
        second = tmp_path / "lr_b"
        resolved = first / RESOLVED_CONFIG_NAME
        assert dispatch(["degrade", "--config", str(resolved), "--in", str(hr_dir), "--out", str(second)]) == EXIT_OK
        for a, b in zip(ImageService.list_images(first), ImageService.list_images(second)):
            assert a.read_bytes() == b.read_bytes()

        regen = tmp_path / "hr_again"
        assert dispatch(["gen-data", "--config", str(hr_dir / RESOLVED_CONFIG_NAME), "--out", str(regen)]) == EXIT_OK
        for a, b in zip(ImageService.list_images(hr_dir), ImageService.list_images(regen)):
            assert a.read_bytes() == b.read_bytes()

    @pytest.mark.integration
    def test_train_rerun_is_byte_identical(self, tmp_path, hr_dir):
        lr_dir = tmp_path / "lr"
        assert dispatch(["degrade", "--in", str(hr_dir), "--out", str(lr_dir), "--scale", "2"]) == EXIT_OK
        base = ["train", "--hr", str(hr_dir), "--lr", str(lr_dir), "--steps", "2", "--batch", "2"]
        assert dispatch(base + ["--out", str(tmp_path / "a")] + TINY_MODEL) == EXIT_OK
        rerun = base + ["--config", str(tmp_path / "a" / RESOLVED_CONFIG_NAME), "--out", str(tmp_path / "b")]
        assert dispatch(rerun) == EXIT_OK
        for name in ("teacher.vsr", "loss.log"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_log_file_records_subcommand(tmp_path):
    log_file = tmp_path / "logs" / "run.log"
    args = ["gen-data", "--out", str(tmp_path / "hr"), "--count", "1", "--size", "32", "--log-file", str(log_file)]
    assert dispatch(args) == EXIT_OK
    entries = [json.loads(line) for line in log_file.read_text(encoding="utf-8").splitlines()]
    finished = [e for e in entries if e["message"] == "Subcommand finished"]
    assert finished[0]["subcommand"] == "gen-data"
    assert finished[0]["exit_code"] == 0


def test_unexpected_error_maps_to_exit_code(tmp_path, mocker, capsys):
    mocker.patch.object(ImageService, "save_corpus", side_effect=RuntimeError("disk vanished"))
    log_file = tmp_path / "crash.log"
    args = ["gen-data", "--out", str(tmp_path / "hr"), "--count", "1", "--size", "32", "--log-file", str(log_file)]
    assert dispatch(args) == EXIT_INTERNAL
    assert "RuntimeError: disk vanished" in capsys.readouterr().err
    entries = [json.loads(line) for line in log_file.read_text(encoding="utf-8").splitlines()]
    crashed = [e for e in entries if e["message"] == "Subcommand crashed"]
    assert crashed[0]["error_type"] == "RuntimeError"
    assert "Traceback" in crashed[0]["exc_info"]

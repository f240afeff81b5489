import numpy as np
import pytest
from PIL import Image

from lsas.ae import synth_annotations, write_annotations
from lsas.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, EXIT_USAGE, main, read_config_file


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestParams:
    def test_vanilla_resnet164_total(self, capsys):
        code, out, _ = run(capsys, "params", "--depth", "164", "--attention", "none")
        assert code == EXIT_OK
        total_line = [line for line in out.splitlines() if line.startswith("total")][-1]
        assert "1703258" in total_line and "(1.70M)" in total_line

    def test_breakdown_lists_stages(self, capsys):
        code, out, _ = run(capsys, "params", "--depth", "83", "--attention", "se", "--mu", "128")
        assert code == EXIT_OK
        for name in ("stem", "stage1", "stage2", "stage3"):
            assert any(line.startswith(name) for line in out.splitlines())

    def test_bad_depth_is_config_error(self, capsys):
        code, _, err = run(capsys, "params", "--depth", "999")
        assert code == EXIT_CONFIG
        assert "error category=config" in err


class TestUsage:
    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["params", "--bogus"])
        assert exc.value.code == EXIT_USAGE
        assert "error category=usage" in capsys.readouterr().err

    def test_help_lists_exact_flag_names(self, capsys):
        for sub, flags in {
            "train": ["--dataset", "--depth", "--attention", "--order", "--mu",
                      "--epochs", "--batch-size", "--lr", "--seed", "--out"],
            "eval": ["--checkpoint"],
            "gradcam": ["--layer", "--class-index"],
            "ae": ["--lambda"],
        }.items():
            with pytest.raises(SystemExit) as exc:
                main([sub, "--help"])
            assert exc.value.code == 0
            text = capsys.readouterr().out
            for flag in flags:
                assert flag in text, (sub, flag)

    def test_train_defaults_match_recipe(self, capsys):
        with pytest.raises(SystemExit):
            main(["train", "--help"])
        text = capsys.readouterr().out
        assert "164" in text  # epochs
        assert "0.9" in text  # momentum
        assert "0.0001" in text  # weight decay


class TestConfigFile:
    def test_parse(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("epochs = 7\nbatch-size=64  # comment\n\n# full line comment\n")
        assert read_config_file(path) == {"epochs": "7", "batch_size": "64"}

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("epochs 7\n")
        with pytest.raises(Exception):
            read_config_file(path)

    def test_flags_override_file(self, tmp_path, capsys):
        cfg = tmp_path / "train.cfg"
        cfg.write_text("epochs=7\nlr=0.5\ndataset=cifar10\n")
        code, out, err = run(
            capsys,
            "train", "--config", str(cfg), "--epochs", "1",
            "--out", str(tmp_path / "runs"),
        )
        # effective config is echoed before execution; data is absent offline
        assert "epochs=1" in out
        assert "lr=0.5" in out
        assert code == EXIT_DATA
        assert "error category=data" in err

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "train.cfg"
        cfg.write_text("bogus_key=1\n")
        code, _, err = run(capsys, "train", "--config", str(cfg))
        assert code == EXIT_CONFIG
        assert "error category=config" in err


class TestSynthAe:
    def test_deterministic_output(self, tmp_path, capsys):
        code, _, _ = run(capsys, "synth-ae", "--seed", "7", "--count", "5",
                         "--size", "24x24", "--out", str(tmp_path / "a"))
        assert code == EXIT_OK
        code, _, _ = run(capsys, "synth-ae", "--seed", "7", "--count", "5",
                         "--size", "24x24", "--out", str(tmp_path / "b"))
        assert code == EXIT_OK
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert len(names) == 10  # image + mask per record
        for name in names:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_bad_size_is_config_error(self, tmp_path, capsys):
        code, _, err = run(capsys, "synth-ae", "--size", "tiny", "--out", str(tmp_path / "x"))
        assert code == EXIT_CONFIG
        assert "error category=config" in err


class TestGradcamCommand:
    def test_writes_heatmap_files(self, tmp_path, capsys):
        img = tmp_path / "sample_3.png"
        rng = np.random.default_rng(0)
        Image.fromarray(rng.integers(0, 255, (32, 32, 3), dtype=np.uint8)).save(img)
        code, out, _ = run(
            capsys,
            "gradcam", "--image", str(img), "--depth", "83", "--attention", "none",
            "--class-index", "2", "--layer", "stage3", "--out", str(tmp_path / "maps"),
        )
        assert code == EXIT_OK
        assert (tmp_path / "maps" / "sample_3_0_2.png").exists()
        assert (tmp_path / "maps" / "sample_3_0_2.overlay.png").exists()

    def test_missing_image_is_data_error(self, tmp_path, capsys):
        code, _, err = run(
            capsys,
            "gradcam", "--image", str(tmp_path / "nope.png"), "--depth", "83",
        )
        assert code == EXIT_DATA
        assert "error category=data" in err


class TestAeCommand:
    def test_end_to_end_on_synthetic_annotations(self, tmp_path, capsys):
        records = synth_annotations(seed=5, count=4, shape=(32, 32))
        ann_dir = write_annotations(records, tmp_path / "ann")
        code, out, _ = run(
            capsys,
            "ae", "--annotations", str(ann_dir), "--depth", "83", "--attention", "none",
            "--lambda", "0.8", "--out", str(tmp_path / "report"),
        )
        assert code == EXIT_OK
        assert "AE " in out
        report = (tmp_path / "report" / "report.txt").read_text()
        lines = report.strip().splitlines()
        assert lines[0] == "image_ref\toverlap_ratio\taes"
        assert len(lines) == 4 + 2  # header + 4 rows + trailer
        assert lines[-1].startswith("# lambda=0.8 size=4 AE=")
        assert (tmp_path / "report" / "report.csv").exists()

    def test_empty_annotation_dir_is_data_error(self, tmp_path, capsys):
        (tmp_path / "empty").mkdir()
        with pytest.warns(UserWarning):
            code, _, err = run(
                capsys, "ae", "--annotations", str(tmp_path / "empty"), "--depth", "83"
            )
        assert code == EXIT_DATA
        assert "error category=data" in err


class TestEvalCommand:
    def test_missing_checkpoint_is_data_error(self, tmp_path, capsys):
        code, _, err = run(capsys, "eval", "--checkpoint", str(tmp_path / "none.pt"))
        assert code == EXIT_DATA
        assert "error category=data" in err


class TestBenchCommand:
    def test_reports_fps(self, capsys):
        code, out, _ = run(capsys, "bench", "--depth", "83", "--attention", "none",
                           "--batch-size", "2")
        assert code == EXIT_OK
        assert out.splitlines()[-1].startswith("fps ")

"""CLI subcommands: exit codes, artifacts, and wiring."""

import os

import numpy as np
import pytest

from vindet.cli import main
from vindet.config import ExperimentConfig, dump_config


TINY = """
seed = 0
geometry.height = 16
geometry.width = 16
geometry.views = 1,2
encoder.dims = 8,8
encoder.depths = 1,1
encoder.heads = 2,2
encoder.window = 2
global.patch = 8
global.dim = 8
global.depth = 1
dwti.common_dim = 8
dwti.window = 2
decoder.channels = 8,8
train.iters = 2
train.batch = 2
train.eval_every = 1
"""


@pytest.fixture
def tiny_cfg_file(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY + f"data.dir = {tmp_path / 'data'}\n")
    return str(p)


class TestGenData:
    def test_writes_clips(self, tmp_path):
        out = tmp_path / "ds"
        rc = main(["gen-data", "--n", "2", "--seed", "3", "--out", str(out)])
        assert rc == 0
        dirs = sorted(os.listdir(out))
        assert dirs == ["clip_0000", "clip_0001"]
        assert (out / "clip_0000" / "manifest.txt").exists()
        assert (out / "clip_0000" / "gt.pgm").exists()


class TestTrainEval:
    def test_train_then_eval(self, tmp_path, tiny_cfg_file, capsys):
        data_dir = str(tmp_path / "data")
        assert main(["gen-data", "--n", "2", "--seed", "0", "--out", data_dir,
                     "--config", tiny_cfg_file]) == 0
        out_dir = str(tmp_path / "run")
        assert main(["train", "--config", tiny_cfg_file, "--out", out_dir]) == 0
        ckpt = os.path.join(out_dir, "checkpoint.mpci")
        assert os.path.exists(ckpt)
        assert main(["eval", "--config", tiny_cfg_file, "--ckpt", ckpt]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[-1].startswith("summary ")

    def test_eval_with_jpeg_flag(self, tmp_path, tiny_cfg_file, capsys):
        data_dir = str(tmp_path / "data")
        main(["gen-data", "--n", "2", "--seed", "0", "--out", data_dir,
              "--config", tiny_cfg_file])
        out_dir = str(tmp_path / "run")
        main(["train", "--config", tiny_cfg_file, "--out", out_dir])
        ckpt = os.path.join(out_dir, "checkpoint.mpci")
        assert main(["eval", "--config", tiny_cfg_file, "--ckpt", ckpt,
                     "--jpeg", "70"]) == 0
        assert main(["eval", "--config", tiny_cfg_file, "--ckpt", ckpt,
                     "--jpeg", "70", "--snr", "25"]) == 1  # mutually exclusive

    def test_eval_dump_writes_maps(self, tmp_path, tiny_cfg_file):
        data_dir = str(tmp_path / "data")
        main(["gen-data", "--n", "1", "--seed", "0", "--out", data_dir,
              "--config", tiny_cfg_file])
        out_dir = str(tmp_path / "run")
        main(["train", "--config", tiny_cfg_file, "--out", out_dir])
        dump = tmp_path / "dump"
        assert main(["eval", "--config", tiny_cfg_file,
                     "--ckpt", os.path.join(out_dir, "checkpoint.mpci"),
                     "--dump", str(dump)]) == 0
        assert sorted(os.listdir(dump)) == ["clip_0000_mask.pgm", "clip_0000_pred.pgm"]

    def test_validation_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("geometry.patch = 5\n")
        assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1

    def test_numerical_failure_exit_code(self, tmp_path, tiny_cfg_file, monkeypatch):
        import vindet.train as train_mod
        from vindet.train import NumericalError

        def boom(*a, **k):
            raise NumericalError("non-finite loss at iteration 0")

        monkeypatch.setattr(train_mod, "train", boom)
        assert main(["train", "--config", tiny_cfg_file,
                     "--out", str(tmp_path / "o")]) == 2

    def test_unknown_key_exit_code(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("geometry.depht = 4\n")
        assert main(["complexity", "--config", str(bad)]) == 1


class TestOtherCommands:
    def test_complexity(self, tiny_cfg_file, capsys):
        assert main(["complexity", "--config", tiny_cfg_file]) == 0
        out = capsys.readouterr().out
        assert "params:" in out and "flops_per_clip:" in out

    def test_gradcheck_smoke(self, capsys):
        assert main(["gradcheck", "--seeds", "1"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_freq_dump(self, tmp_path, tiny_cfg_file, capsys):
        data_dir = str(tmp_path / "data")
        main(["gen-data", "--n", "1", "--seed", "5", "--out", data_dir,
              "--config", tiny_cfg_file])
        out = tmp_path / "bands"
        assert main(["freq-dump", "--clip", os.path.join(data_dir, "clip_0000"),
                     "--out", str(out), "--config", tiny_cfg_file]) == 0
        files = sorted(os.listdir(out))
        assert len(files) == 9  # 3 bands x 3 channels
        assert "band_low_c0.pgm" in files

    def test_show_config_roundtrips(self, capsys):
        assert main(["show-config"]) == 0
        text = capsys.readouterr().out
        assert text == dump_config(ExperimentConfig())

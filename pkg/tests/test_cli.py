"""Command line front end: subcommands, exit codes, flag precedence."""

import os

import numpy as np
import pytest

from pyramidqa.cli import main, probe_config, run_gradcheck
from pyramidqa.config import RunConfig


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("clids") / "color")
    code = main(["gen-data", "--task", "open_ended", "--out", out,
                 "--train", "8", "--val", "4", "--test", "4",
                 "--question-len", "8"])
    assert code == 0
    return out


TRAIN_FLAGS = ["--levels", "2", "--d-model", "8", "--heads", "2",
               "--time-steps", "4", "--enc-channels", "4,4,4",
               "--batch-size", "4", "--max-epochs", "1",
               "--float-width", "64", "--lr", "1e-3"]


class TestGenData:
    def test_reruns_are_byte_identical(self, tmp_path, capsys):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        for out in (a, b):
            code = main(["gen-data", "--task", "count", "--out", out,
                         "--train", "6", "--val", "2", "--test", "0",
                         "--question-len", "6"])
            assert code == 0
        capsys.readouterr()
        for name in ("manifest.txt", "train.pmtd", "val.pmtd"):
            assert (open(os.path.join(a, name), "rb").read()
                    == open(os.path.join(b, name), "rb").read())

    def test_summary_line_printed(self, tmp_path, capsys):
        out = str(tmp_path / "ds")
        main(["gen-data", "--task", "count", "--out", out,
              "--train", "5", "--val", "0", "--test", "0",
              "--question-len", "6"])
        text = capsys.readouterr().out
        assert "task=count" in text
        assert "train=5" in text


class TestTrainEval:
    def test_train_then_eval_round_trip(self, dataset_dir, tmp_path, capsys):
        run = str(tmp_path / "run")
        code = main(["train", "--data", dataset_dir, "--out", run] + TRAIN_FLAGS)
        assert code == 0
        out = capsys.readouterr().out
        assert "done: epochs=1" in out
        assert os.path.exists(os.path.join(run, "best.ckpt"))

        code = main(["eval", "--ckpt", os.path.join(run, "best.ckpt"),
                     "--data", dataset_dir, "--split", "val"])
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        keys = {line.split("\t")[0] for line in lines}
        assert {"accuracy", "loss", "metric"} <= keys

    def test_eval_can_dump_attention(self, dataset_dir, tmp_path, capsys):
        run = str(tmp_path / "run")
        main(["train", "--data", dataset_dir, "--out", run] + TRAIN_FLAGS)
        capsys.readouterr()
        code = main(["eval", "--ckpt", os.path.join(run, "best.ckpt"),
                     "--data", dataset_dir, "--split", "val",
                     "--dump-attention"])
        assert code == 0
        out = capsys.readouterr().out
        attn = [l for l in out.splitlines() if l.startswith("#attn")]
        assert len(attn) == 8
        weights = np.array([float(v) for v in attn[0].split("\t")[3].split(" ")])
        assert weights.sum() == pytest.approx(1.0, abs=1e-5)

    def test_missing_checkpoint_exits_3(self, dataset_dir, tmp_path, capsys):
        code = main(["eval", "--ckpt", str(tmp_path / "no.ckpt"),
                     "--data", dataset_dir])
        assert code == 3
        assert "error:" in capsys.readouterr().err

    def test_unknown_split_exits_1(self, dataset_dir, tmp_path, capsys):
        run = str(tmp_path / "run")
        main(["train", "--data", dataset_dir, "--out", run] + TRAIN_FLAGS)
        capsys.readouterr()
        code = main(["eval", "--ckpt", os.path.join(run, "best.ckpt"),
                     "--data", dataset_dir, "--split", "holdout"])
        assert code == 1

    def test_invalid_config_exits_1(self, dataset_dir, tmp_path, capsys):
        code = main(["train", "--data", dataset_dir,
                     "--out", str(tmp_path / "x"), "--heads", "3",
                     "--d-model", "8"])
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestConfigPrecedence:
    def test_flags_override_config_file(self, dataset_dir, tmp_path, capsys):
        cfg_path = str(tmp_path / "run.cfg")
        with open(cfg_path, "w") as fh:
            fh.write("levels = 2\nd_model = 8\nheads = 2\ntime_steps = 4\n"
                     "enc_channels = 4,4,4\nbatch_size = 4\nmax_epochs = 3\n"
                     "float_width = 64\nlr = 1e-3\n")
        run = str(tmp_path / "run")
        code = main(["train", "--data", dataset_dir, "--out", run,
                     "--config", cfg_path, "--max-epochs", "1"])
        assert code == 0
        assert "done: epochs=1" in capsys.readouterr().out

    def test_config_file_alone_applies(self, dataset_dir, tmp_path, capsys):
        cfg_path = str(tmp_path / "run.cfg")
        with open(cfg_path, "w") as fh:
            fh.write("levels = 2\nd_model = 8\nheads = 2\ntime_steps = 4\n"
                     "enc_channels = 4,4,4\nbatch_size = 4\nmax_epochs = 2\n"
                     "float_width = 64\nlr = 1e-3\n")
        run = str(tmp_path / "run")
        code = main(["train", "--data", dataset_dir, "--out", run,
                     "--config", cfg_path])
        assert code == 0
        assert "done: epochs=2" in capsys.readouterr().out

    def test_missing_config_file_exits_1(self, dataset_dir, tmp_path, capsys):
        code = main(["train", "--data", dataset_dir,
                     "--out", str(tmp_path / "x"),
                     "--config", str(tmp_path / "absent.cfg")])
        assert code in (1, 3)


class TestGradcheckCommand:
    def test_probe_config_is_valid(self):
        probe_config().validate()
        probe_config("count").validate()
        probe_config("multi_choice").validate()

    def test_gradcheck_requires_float64(self):
        from pyramidqa.errors import ContractError
        cfg = probe_config()
        cfg.float_width = 32
        with pytest.raises(ContractError, match="float_width"):
            run_gradcheck(cfg, log=lambda line: None)

    def test_gradcheck_command_exit_zero(self, capsys):
        code = main(["gradcheck", "--seed", "1"])
        assert code == 0
        out = capsys.readouterr().out
        assert out.strip().splitlines()[-1].startswith("max\t")

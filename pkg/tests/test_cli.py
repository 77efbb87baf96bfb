import json

import pytest

from bruno import cli


FAST_TRAIN = ["--samples-per-class", "4", "--epochs", "1", "--quiet",
              "--set", "t_steps=8", "--set", "substeps=2",
              "--set", "n_hidden=4", "--set", "batch_size=4"]


def read_manifest(out):
    with open(out / "manifest.json") as fh:
        return json.load(fh)


class TestParsing:
    def test_unknown_command_exits_usage(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["frobnicate"])
        assert exc.value.code == 2

    def test_unknown_override_key(self, tmp_path, capsys):
        rc = cli.main(["train", "--arch", "lif", "--out", str(tmp_path / "r"),
                       "--set", "bogus=1", *FAST_TRAIN])
        assert rc == cli.EXIT_USAGE
        assert "bogus" in capsys.readouterr().err

    def test_malformed_set_pair(self, tmp_path, capsys):
        rc = cli.main(["train", "--out", str(tmp_path / "r"),
                       "--set", "oops", *FAST_TRAIN])
        assert rc == cli.EXIT_USAGE

    def test_config_file_feeds_overrides(self, tmp_path):
        cfgf = tmp_path / "cell.kv"
        cfgf.write_text("lr = 0.004\nn_hidden = 4\n")
        out = tmp_path / "run"
        rc = cli.main(["train", "--arch", "lif", "--config", str(cfgf),
                       "--out", str(out), "--samples-per-class", "4",
                       "--epochs", "1", "--quiet", "--set", "t_steps=8",
                       "--set", "substeps=2", "--set", "batch_size=4"])
        assert rc == cli.EXIT_OK
        assert read_manifest(out)["config"]["lr"] == 0.004


class TestTrain:
    def test_writes_run_dir(self, tmp_path, capsys):
        out = tmp_path / "run"
        rc = cli.main(["train", "--arch", "lif", "--out", str(out),
                       *FAST_TRAIN])
        assert rc == cli.EXIT_OK
        man = read_manifest(out)
        assert man["command"] == "train"
        assert "train.jsonl" in man["outputs"]
        assert (out / "train.jsonl").exists()
        assert (out / "out_params.kv").exists()
        assert "status=completed" in capsys.readouterr().out

    def test_quantized_export(self, tmp_path):
        out = tmp_path / "run"
        rc = cli.main(["train", "--arch", "lif", "--bits", "4",
                       "--out", str(out), *FAST_TRAIN])
        assert rc == cli.EXIT_OK
        with open(out / "weights_quantized.json") as fh:
            snap = json.load(fh)
        assert snap["bits"] == 4 and "w_in" in snap["tensors"]

    def test_missing_data_manifest(self, tmp_path):
        rc = cli.main(["train", "--data", str(tmp_path / "nope.json"),
                       "--out", str(tmp_path / "r"), *FAST_TRAIN])
        assert rc == cli.EXIT_USAGE


class TestBench:
    def test_csv_to_stdout_and_disk(self, tmp_path, capsys):
        out = tmp_path / "b"
        rc = cli.main(["bench", "--sizes", "2", "--t-steps", "3",
                       "--modes", "bruno", "--substeps", "2",
                       "--repeats", "1", "--out", str(out)])
        assert rc == cli.EXIT_OK
        text = capsys.readouterr().out
        assert text.splitlines()[0].startswith("size,t_steps,mode")
        assert (out / "bench.csv").read_text() == text

    def test_bad_mode(self, tmp_path):
        rc = cli.main(["bench", "--modes", "warp", "--out", str(tmp_path)])
        assert rc == cli.EXIT_USAGE


class TestGenData:
    def test_round_trip_through_train(self, tmp_path, capsys):
        data = tmp_path / "data"
        rc = cli.main(["gen-data", "--out", str(data), "--classes", "2",
                       "--samples-per-class", "4", "--duration-ms", "10"])
        assert rc == cli.EXIT_OK
        manifest = capsys.readouterr().out.strip()
        rc = cli.main(["train", "--arch", "lif", "--data", manifest,
                       "--out", str(tmp_path / "r"), "--epochs", "1",
                       "--quiet", "--set", "t_steps=8", "--set", "substeps=2",
                       "--set", "n_hidden=4", "--set", "batch_size=4"])
        assert rc == cli.EXIT_OK


class TestGrid:
    def test_cells_and_summary(self, tmp_path, capsys):
        out = tmp_path / "g"
        rc = cli.main(["grid", "--archs", "lif", "--bits", "0,3",
                       "--seeds", "0", "--epochs", "1",
                       "--samples-per-class", "4", "--out", str(out),
                       "--set", "t_steps=8", "--set", "substeps=2",
                       "--set", "n_hidden=4", "--set", "batch_size=4"])
        assert rc == cli.EXIT_OK
        assert (out / "cell_lif_0_0.jsonl").exists()
        assert (out / "cell_lif_3_0.jsonl").exists()
        assert (out / "grid.csv").read_text().startswith("arch,bits")


class TestHpo:
    def test_best_config_reusable(self, tmp_path, capsys):
        out = tmp_path / "h"
        rc = cli.main(["hpo", "--arch", "lif", "--trials", "2",
                       "--epochs", "1", "--samples-per-class", "4",
                       "--out", str(out)])
        assert rc in (cli.EXIT_OK, cli.EXIT_FAIL)
        lines = (out / "trials.jsonl").read_text().splitlines()
        assert len(lines) == 2
        if rc == cli.EXIT_OK:
            best = out / "best.kv"
            assert best.exists()
            rc2 = cli.main(["train", "--arch", "lif", "--config", str(best),
                            "--out", str(tmp_path / "r"), *FAST_TRAIN])
            assert rc2 == cli.EXIT_OK

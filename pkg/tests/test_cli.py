import numpy as np
import pytest

from gluse.cam import read_pgm
from gluse.cli import main
from gluse.formats import read_dataset, read_run_config


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def small_glds(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("data") / "small.glds")
    code = main(["synth", "--out", path, "--classes", "2",
                 "--per-class", "12", "--size", "32", "--seed", "0"])
    assert code == 0
    return path


class TestSynth:
    def test_writes_readable_dataset(self, capsys, tmp_path):
        path = str(tmp_path / "d.glds")
        code, out, _ = run(capsys, "synth", "--out", path, "--classes", "3",
                           "--per-class", "4", "--seed", "5")
        assert code == 0
        assert "n=12" in out and "k=3" in out
        ds = read_dataset(path)
        assert len(ds) == 12 and ds.num_classes == 3

    def test_same_seed_same_file(self, capsys, tmp_path):
        a, b = str(tmp_path / "a.glds"), str(tmp_path / "b.glds")
        run(capsys, "synth", "--out", a, "--per-class", "2", "--seed", "9")
        run(capsys, "synth", "--out", b, "--per-class", "2", "--seed", "9")
        assert open(a, "rb").read() == open(b, "rb").read()


class TestCount:
    def test_published_flop_delta_via_cli(self, capsys, tmp_path):
        reports = {}
        for kind in ("se", "gluse"):
            out_path = str(tmp_path / f"{kind}.txt")
            code, _, _ = run(capsys, "count", "--attention", kind,
                             "--classes", "16", "--out", out_path)
            assert code == 0
            kv = dict(line.split("=", 1)
                      for line in open(out_path).read().splitlines())
            reports[kind] = kv
        d_params = int(reports["gluse"]["total_params"]) \
            - int(reports["se"]["total_params"])
        d_flops = int(reports["gluse"]["total_flops"]) \
            - int(reports["se"]["total_flops"])
        assert d_params == 10976
        assert d_flops == 6406144

    def test_table_printed(self, capsys):
        code, out, _ = run(capsys, "count", "--attention", "se")
        assert code == 0
        assert "TOTAL" in out and "params" in out


class TestTrainEvalCam:
    def test_full_pipeline(self, capsys, tmp_path, small_glds):
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text(
            f"data={small_glds}\nattention=none\nmax_epochs=2\n"
            "batch_size=8\nearly_stop_patience=5\nseed=0\n")
        ckpt = str(tmp_path / "m.glck")
        hist = str(tmp_path / "hist.csv")
        code, out, _ = run(capsys, "train", "--config", str(cfg_path),
                           "--out", ckpt, "--history", hist)
        assert code == 0
        assert "best_val_acc=" in out
        lines = open(hist).read().splitlines()
        assert lines[0].startswith("epoch,")
        assert len(lines) == 3      # header + 2 epochs

        code, out, _ = run(capsys, "eval", "--checkpoint", ckpt,
                           "--data", small_glds, "--seed", "0",
                           "--confusion", str(tmp_path / "conf.csv"))
        assert code == 0
        assert "accuracy=" in out
        acc = float(out.split("accuracy=")[1].split()[0])
        assert 0.0 <= acc <= 1.0
        mat = np.loadtxt(tmp_path / "conf.csv", delimiter=",", dtype=np.int64)
        assert mat.sum() == round(0.3 * 24)          # test split size

        pgm = str(tmp_path / "h.pgm")
        code, out, _ = run(capsys, "cam", "--checkpoint", ckpt,
                           "--data", small_glds, "--sample", "0",
                           "--target", "1", "--out", pgm)
        assert code == 0
        heat = read_pgm(pgm)
        assert heat.shape == (32, 32)

    def test_distill_requires_teacher_logits(self, capsys, tmp_path,
                                             small_glds):
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text(f"data={small_glds}\nmax_epochs=1\n")
        code, _, err = run(capsys, "distill", "--config", str(cfg_path),
                           "--out", str(tmp_path / "m.glck"),
                           "--history", str(tmp_path / "h.csv"))
        assert code == 1
        assert "error:" in err and "t1_logits" in err


class TestErrors:
    def test_missing_dataset_is_io_error(self, capsys, tmp_path):
        code, _, err = run(capsys, "eval", "--checkpoint", "nope.glck",
                           "--data", "nope.glds")
        assert code == 1
        assert err.startswith("error:")

    def test_bad_config_key(self, capsys, tmp_path, small_glds):
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text("bogus_key=1\n")
        code, _, err = run(capsys, "train", "--config", str(cfg_path),
                           "--out", str(tmp_path / "m.glck"),
                           "--history", str(tmp_path / "h.csv"))
        assert code == 1
        assert "unknown key" in err

    def test_config_defaults_round_trip(self, tmp_path):
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text("tau=3\n")
        cfg = read_run_config(str(cfg_path))
        assert cfg["tau"] == "3" and cfg["attention"] == "gluse"

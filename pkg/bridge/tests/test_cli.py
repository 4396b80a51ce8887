import numpy as np
import pytest
from PIL import Image

from teacher_bridge.cli import main
from teacher_bridge.export import read_glds_samples


@pytest.fixture
def tree(tmp_path):
    rng = np.random.default_rng(1)
    for cls in ("x", "y"):
        d = tmp_path / "imgs" / cls
        d.mkdir(parents=True)
        for i in range(2):
            arr = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
            Image.fromarray(arr).save(d / f"{i}.png")
    return tmp_path


def test_convert_then_export(tree, capsys):
    glds = str(tree / "d.glds")
    manifest = str(tree / "m.json")
    assert main(["convert", "--src", str(tree / "imgs"), "--out", glds,
                 "--manifest", manifest]) == 0
    out = capsys.readouterr().out
    assert "n=4" in out and "k=2" in out
    images, labels, k = read_glds_samples(glds)
    assert images.shape == (4, 3, 64, 64) and k == 2

    gltl = str(tree / "t.gltl")
    assert main(["export", "--glds", glds, "--manifest", manifest,
                 "--out", gltl]) == 0
    assert "teacher=zero-stub" in capsys.readouterr().out


def test_missing_source_errors(tree, capsys):
    code = main(["convert", "--src", str(tree / "nope"),
                 "--out", str(tree / "d.glds"),
                 "--manifest", str(tree / "m.json")])
    assert code == 1
    assert capsys.readouterr().err.startswith("error:")

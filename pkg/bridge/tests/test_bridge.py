import json
import struct

import numpy as np
import pytest
from PIL import Image

from teacher_bridge import (ConversionManifest, ZeroTeacher, convert_images,
                            export_teacher_logits, softmax, write_glds,
                            write_gltl)
from teacher_bridge.convert import build_manifest
from teacher_bridge.export import LinearProbeTeacher, read_glds_samples
from teacher_bridge.formats import BridgeError


@pytest.fixture
def toy_tree(tmp_path):
    """2 classes x 3 images, deterministic pixel content."""
    rng = np.random.default_rng(0)
    for cls in ("forest", "river"):
        d = tmp_path / "imgs" / cls
        d.mkdir(parents=True)
        for i in range(3):
            arr = rng.integers(0, 256, size=(20, 30, 3), dtype=np.uint8)
            Image.fromarray(arr).save(d / f"{cls}_{i}.png")
    return str(tmp_path / "imgs")


class TestConvert:
    def test_header_and_counts(self, toy_tree, tmp_path):
        out = str(tmp_path / "toy.glds")
        m = convert_images(toy_tree, out,
                           manifest_path=str(tmp_path / "m.json"))
        raw = open(out, "rb").read()
        assert raw[:4] == b"GLDS"
        version, n, k = struct.unpack_from("<III", raw, 4)
        c, h, w = struct.unpack_from("<HHH", raw, 16)
        assert (version, n, k) == (1, 6, 2)
        assert (c, h, w) == (3, 64, 64)
        assert len(raw) == 22 + 6 * (4 + 3 * 64 * 64 * 4)
        assert len(m.samples) == 6 and not m.skipped

    def test_gray_pixel_normalization(self, tmp_path):
        # solid 128-gray: channel value (128/255 - mean_c) / std_c
        d = tmp_path / "imgs" / "gray"
        d.mkdir(parents=True)
        Image.fromarray(np.full((10, 10, 3), 128, np.uint8)).save(
            d / "g.png")
        out = str(tmp_path / "g.glds")
        convert_images(str(tmp_path / "imgs"), out)
        images, labels, k = read_glds_samples(out)
        red = images[0, 0]
        want = (128 / 255 - 0.485) / 0.229
        assert np.allclose(red, want, atol=1e-6)
        assert abs(want - 0.074072) < 1e-4

    def test_deterministic_bytes(self, toy_tree, tmp_path):
        a, b = str(tmp_path / "a.glds"), str(tmp_path / "b.glds")
        m = build_manifest(toy_tree)
        convert_images(toy_tree, a, m)
        convert_images(toy_tree, b, m)
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_class_names_sidecar_sorted(self, toy_tree, tmp_path):
        out = str(tmp_path / "toy.glds")
        convert_images(toy_tree, out)
        names = open(out + ".classes").read().split()
        assert names == ["forest", "river"]

    def test_undecodable_file_skipped_with_warning(self, toy_tree, tmp_path):
        bad = tmp_path / "imgs" / "forest" / "broken.png"
        bad.write_bytes(b"not an image")
        out = str(tmp_path / "toy.glds")
        with pytest.warns(UserWarning, match="broken.png"):
            m = convert_images(toy_tree, out,
                               manifest_path=str(tmp_path / "m.json"))
        assert m.skipped == ["forest/broken.png"]
        _, labels, _ = read_glds_samples(out)
        assert len(labels) == 6     # the good images all survive

    def test_empty_class_is_hard_error(self, toy_tree, tmp_path):
        (tmp_path / "imgs" / "desert").mkdir()
        with pytest.raises(BridgeError, match="no images"):
            build_manifest(toy_tree)

    def test_manifest_round_trip(self, toy_tree, tmp_path):
        path = str(tmp_path / "m.json")
        convert_images(toy_tree, str(tmp_path / "t.glds"),
                       manifest_path=path)
        m = ConversionManifest.load(path)
        assert m.class_to_label == {"forest": 0, "river": 1}
        assert [s["label"] for s in m.samples] == [0, 0, 0, 1, 1, 1]
        assert json.load(open(path))["target_size"] == 64


class TestExport:
    def test_zero_teacher(self, toy_tree, tmp_path):
        glds = str(tmp_path / "toy.glds")
        convert_images(toy_tree, glds)
        gltl = str(tmp_path / "toy.gltl")
        logits = export_teacher_logits(ZeroTeacher(2), "zero-stub", glds,
                                       gltl)
        assert logits.shape == (6, 2)
        raw = open(gltl, "rb").read()
        assert raw[:4] == b"GLTL"
        version, n, k = struct.unpack_from("<III", raw, 4)
        name_len = struct.unpack_from("<I", raw, 16)[0]
        assert (version, n, k) == (1, 6, 2)
        assert raw[20:20 + name_len] == b"zero-stub"
        body = np.frombuffer(raw[20 + name_len:], "<f4")
        assert body.shape == (12,) and not body.any()

    def test_sample_count_mismatch(self, toy_tree, tmp_path):
        glds = str(tmp_path / "toy.glds")
        convert_images(toy_tree, glds)
        with pytest.raises(BridgeError, match="expects 9"):
            export_teacher_logits(ZeroTeacher(2), "x", glds,
                                  str(tmp_path / "t.gltl"), expected_n=9)

    def test_linear_probe_teacher(self, toy_tree, tmp_path):
        glds = str(tmp_path / "toy.glds")
        convert_images(toy_tree, glds)
        w = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        teacher = LinearProbeTeacher(w, np.zeros(2))
        logits = export_teacher_logits(teacher, "probe", glds,
                                       str(tmp_path / "p.gltl"))
        images, _, _ = read_glds_samples(glds)
        np.testing.assert_allclose(logits, images.mean(axis=(2, 3))[:, :2],
                                   rtol=1e-5)

    def test_nonfinite_logits_rejected(self, tmp_path):
        with pytest.raises(BridgeError, match="finite"):
            write_gltl(np.array([[np.nan]]), "x", str(tmp_path / "t.gltl"))


class TestSoftmax:
    def test_rows_normalize(self):
        p = softmax(np.random.default_rng(0).normal(size=(5, 4)), 5.0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-12)

    def test_temperature_flattens(self):
        row = np.array([[4.0, 0.0]])
        sharp = softmax(row, 1.0)[0]
        soft = softmax(row, 5.0)[0]
        assert sharp[0] > soft[0] > 0.5


class TestWriters:
    def test_write_glds_validates(self, tmp_path):
        with pytest.raises(BridgeError, match="labels must lie"):
            write_glds(np.zeros((1, 3, 4, 4), np.float32),
                       np.array([5]), 2, str(tmp_path / "x.glds"))
        with pytest.raises(BridgeError, match="must be"):
            write_glds(np.zeros((3, 4, 4), np.float32), np.array([0]), 2,
                       str(tmp_path / "x.glds"))

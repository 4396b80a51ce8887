import numpy as np
import pytest

from gluse.attention import attention_param_inventory
from gluse.backbone import STAGE_CHANNELS, build_model, describe, model_forward
from gluse.errors import DimensionError
from gluse.profiler import count_flops, count_params
from gluse.tensor import Tensor, no_grad


def batch(n=2, size=64, seed=0):
    rng = np.random.default_rng(seed)
    return Tensor(rng.normal(size=(n, 3, size, size)).astype(np.float32))


class TestShapes:
    @pytest.mark.parametrize("kind", ["none", "se", "gated_se", "gluse"])
    def test_logit_shape(self, kind):
        m = build_model(kind, num_classes=7, seed=0)
        with no_grad():
            out = model_forward(m, batch(), mode="eval")
        assert out.shape == (2, 7)

    def test_stage3_capture_geometry(self):
        m = build_model("se", num_classes=4, seed=0)
        with no_grad():
            _, fmap = m.forward(batch(size=64), mode="eval",
                                capture_stage3=True)
        # stem keeps 64x64; the two strided stages halve twice
        assert fmap.shape == (2, 64, 16, 16)

    def test_rejects_wrong_channel_count(self):
        m = build_model("none", num_classes=4, seed=0)
        with pytest.raises(DimensionError):
            model_forward(m, Tensor(np.zeros((1, 1, 64, 64), np.float32)),
                          mode="eval")


class TestDeterminism:
    def test_same_seed_same_params(self):
        a = build_model("gluse", num_classes=4, seed=11)
        b = build_model("gluse", num_classes=4, seed=11)
        for (na, ta), (nb, tb) in zip(a.named_params(), b.named_params()):
            assert na == nb
            np.testing.assert_array_equal(ta.data, tb.data)

    def test_different_seed_differs(self):
        a = build_model("se", num_classes=4, seed=1)
        b = build_model("se", num_classes=4, seed=2)
        diffs = [not np.array_equal(ta.data, tb.data)
                 for (_, ta), (_, tb) in zip(a.named_params(), b.named_params())]
        assert any(diffs)

    def test_eval_forward_is_pure(self):
        m = build_model("gated_se", num_classes=4, seed=3)
        x = batch(seed=4)
        with no_grad():
            first = model_forward(m, x, mode="eval").data.copy()
            second = model_forward(m, x, mode="eval").data
        np.testing.assert_array_equal(first, second)


class TestParamCounts:
    def test_attention_delta_equals_inventory_sum(self):
        base = count_params(build_model("none", num_classes=10, seed=0))
        for kind in ("se", "gated_se", "gluse"):
            m = build_model(kind, num_classes=10, seed=0)
            expected = base + sum(attention_param_inventory(kind, c, 4)
                                  for c in STAGE_CHANNELS)
            assert count_params(m) == expected

    def test_delta_independent_of_head_size(self):
        for k in (2, 10, 100):
            d = count_params(build_model("gluse", num_classes=k, seed=0)) \
                - count_params(build_model("se", num_classes=k, seed=0))
            assert d == 10976

    def test_describe_matches_named_params(self):
        m = build_model("gluse", num_classes=4, seed=0)
        total = sum(row["params"] for row in describe(m))
        assert total == count_params(m)


class TestDescribe:
    def test_plain_model_has_no_attention_rows(self):
        rows = describe(build_model("none", num_classes=4, seed=0))
        assert not any("attention" in row["name"] for row in rows)

    def test_attention_rows_present_per_stage(self):
        rows = describe(build_model("se", num_classes=4, seed=0))
        names = [row["name"] for row in rows if "attention" in row["name"]]
        assert len(names) == 3

    def test_flops_scale_with_resolution(self):
        m = build_model("none", num_classes=4, seed=0)
        f64 = count_flops(m, input_shape=(3, 64, 64))
        f32 = count_flops(m, input_shape=(3, 32, 32))
        # conv cost is quadratic in spatial size; head cost is constant
        assert 3.5 < f64 / f32 < 4.01

    def test_breakdown_sums_to_flops(self):
        for kind in ("se", "gated_se", "gluse"):
            for row in describe(build_model(kind, num_classes=4, seed=0)):
                assert row["flops"] == sum(row["breakdown"].values())

    def test_deeper_teacher_has_more_blocks(self):
        shallow = build_model("gluse", num_classes=4, seed=0)
        deep = build_model("gluse", num_classes=4, seed=0, blocks_per_stage=2)
        assert count_params(deep) > count_params(shallow)
        with no_grad():
            out = model_forward(deep, batch(size=32), mode="eval")
        assert out.shape == (2, 4)

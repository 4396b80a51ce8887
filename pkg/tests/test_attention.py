import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gluse import tensor as T
from gluse.attention import (GLUSEBlock, GatedSEBlock, SEBlock,
                             attention_param_inventory, gated_se_forward,
                             gluse_forward, se_forward)
from gluse.errors import DimensionError, ParameterError
from gluse.tensor import Tensor


def rng64(seed=0):
    return np.random.default_rng(seed)


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def zeroed_se(c, r=1):
    """SE whose excitation path is all-zero, so s = sigmoid(0) = 0.5."""
    block = SEBlock(c, r, rng64(0), dtype=np.float64)
    for p in (block.w1, block.b1, block.w2, block.b2):
        p.data[:] = 0
    return block


class TestSE:
    def test_zero_excitation_halves_input(self):
        block = zeroed_se(3)
        x = Tensor(rng64(1).normal(size=(3, 4, 4)))
        out = se_forward(block, x)
        np.testing.assert_allclose(out.data, 0.5 * x.data, rtol=1e-12)

    def test_hand_example_identity_fc(self):
        # C=2, r=1, identity FC layers, no biases: s = sigmoid(z)
        block = zeroed_se(2)
        block.w1.data[:] = np.eye(2)
        block.w2.data[:] = np.eye(2)
        x = Tensor(np.array([1.0, 3.0]).reshape(2, 1, 1))
        out = se_forward(block, x)
        s = [sigmoid(1.0), sigmoid(3.0)]
        np.testing.assert_allclose(s, [0.731059, 0.952574], atol=1e-6)
        np.testing.assert_allclose(out.data.reshape(2), [s[0] * 1.0, s[1] * 3.0],
                                   rtol=1e-12)
        np.testing.assert_allclose(out.data.reshape(2), [0.731059, 2.857722],
                                   atol=1e-6)

    def test_contraction(self):
        block = SEBlock(4, 2, rng64(2), dtype=np.float64)
        x = rng64(3).normal(size=(4, 5, 5))
        out = se_forward(block, Tensor(x))
        assert np.all(np.abs(out.data) <= np.abs(x) + 1e-15)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            se_forward(SEBlock(4, 2, rng64(0)), Tensor(np.zeros((3, 2, 2))))

    def test_indivisible_reduction(self):
        with pytest.raises(ParameterError):
            SEBlock(6, 4, rng64(0))


class TestGatedSE:
    def test_zero_gate_halves_input(self):
        block = GatedSEBlock(3, 1, rng64(4), dtype=np.float64)
        block.gate.weight.data[:] = 0
        block.gate.bias.data[:] = 0
        x = Tensor(rng64(5).normal(size=(3, 4, 4)))
        out = gated_se_forward(block, x)
        np.testing.assert_allclose(out.data, 0.5 * x.data, rtol=1e-12)

    def test_identity_gate_composes_sigmoid(self):
        block = GatedSEBlock(2, 1, rng64(6), dtype=np.float64)
        for p in (block.se.w1, block.se.b1, block.se.w2, block.se.b2):
            p.data[:] = 0                      # s = 0.5 per channel
        block.gate.weight.data[:] = np.eye(2).reshape(2, 2, 1, 1)
        block.gate.bias.data[:] = 0
        x = Tensor(rng64(7).normal(size=(2, 3, 3)))
        out = gated_se_forward(block, x)
        np.testing.assert_allclose(out.data, sigmoid(0.5) * x.data, rtol=1e-12)
        assert sigmoid(0.5) == pytest.approx(0.622459, abs=1e-6)

    def test_contraction(self):
        block = GatedSEBlock(4, 2, rng64(8), dtype=np.float64)
        x = rng64(9).normal(size=(4, 3, 3))
        out = gated_se_forward(block, Tensor(x))
        assert np.all(np.abs(out.data) <= np.abs(x) + 1e-15)


class TestGLUSE:
    def test_zero_linear_path_degrades_to_se(self):
        block = GLUSEBlock(3, 1, rng64(10), dtype=np.float64)
        block.linear.weight.data[:] = 0
        block.linear.bias.data[:] = 0
        x = Tensor(rng64(11).normal(size=(3, 4, 4)))
        np.testing.assert_array_equal(gluse_forward(block, x).data,
                                      se_forward(block.se, x).data)

    def test_saturated_gate_degrades_to_se(self):
        block = GLUSEBlock(3, 1, rng64(12), dtype=np.float64)
        block.gate.weight.data[:] = 0
        block.gate.bias.data[:] = -100.0
        x = Tensor(rng64(13).normal(size=(3, 4, 4)))
        np.testing.assert_allclose(gluse_forward(block, x).data,
                                   se_forward(block.se, x).data, atol=1e-8)

    def test_hand_example(self):
        # C=1, x=[2], s=0.5, Wh=1, Wg=1, no conv biases
        block = GLUSEBlock(1, 1, rng64(14), dtype=np.float64)
        for p in (block.se.w1, block.se.b1, block.se.w2, block.se.b2):
            p.data[:] = 0
        block.linear.weight.data[:] = 1.0
        block.linear.bias.data[:] = 0
        block.gate.weight.data[:] = 1.0
        block.gate.bias.data[:] = 0
        x = Tensor(np.array([[[2.0]]]))
        out = float(gluse_forward(block, x).data.reshape(()))
        expected = 0.5 * 2.0 + (1.0 * 2.0) * sigmoid(2.0)
        assert out == pytest.approx(expected, rel=1e-12)
        assert out == pytest.approx(2.761594, abs=1e-6)

    def test_output_shape_matches_input(self):
        block = GLUSEBlock(4, 2, rng64(15))
        x = Tensor(np.random.default_rng(16).normal(size=(2, 4, 6, 6))
                   .astype(np.float32))
        assert gluse_forward(block, x).shape == x.shape


class TestTableContrast:
    """SE is spatially static; GLUSE responds to layout changes."""

    def test_se_static_vs_gluse_adaptive(self):
        rng = rng64(17)
        # two inputs with identical channel means but different spatial layout
        a = rng.normal(size=(2, 4, 4))
        b = np.flip(a, axis=(1, 2)).copy()
        se = SEBlock(2, 1, rng64(18), dtype=np.float64)
        s_a = se.scales(Tensor(a[None])).data
        s_b = se.scales(Tensor(b[None])).data
        np.testing.assert_allclose(s_a, s_b, atol=1e-12)   # same scale vector

        gluse = GLUSEBlock(2, 1, rng64(19), dtype=np.float64)
        out_a = gluse_forward(gluse, Tensor(a)).data
        out_b = gluse_forward(gluse, Tensor(b)).data
        ratio_a = out_a / a
        ratio_b = out_b / np.flip(a, axis=(1, 2))
        # SE path alone would make both ratio maps channel-constant and equal;
        # the spatial gate must break that
        assert not np.allclose(ratio_a, np.flip(ratio_b, axis=(1, 2)), atol=1e-9) \
            or np.ptp(ratio_a[0]) > 1e-9
        assert np.ptp(ratio_a[0]) > 1e-9


class TestDeterminismAndGradients:
    @pytest.mark.parametrize("cls", [SEBlock, GatedSEBlock, GLUSEBlock])
    def test_pure_function(self, cls):
        block = cls(4, 2, rng64(20), dtype=np.float64)
        x = Tensor(rng64(21).normal(size=(4, 3, 3)))
        np.testing.assert_array_equal(block(x).data, block(x).data)

    @pytest.mark.parametrize("cls", [SEBlock, GatedSEBlock, GLUSEBlock])
    def test_gradient_check(self, cls):
        block = cls(2, 2, rng64(22), dtype=np.float64)
        mask = Tensor(rng64(23).normal(size=(2, 3, 3)))
        x = Tensor(rng64(24).normal(size=(2, 3, 3)), requires_grad=True)
        err = T.finite_difference_check(lambda t: (block(t) * mask).sum(), x)
        assert err < 1e-5

    @pytest.mark.parametrize("cls", [SEBlock, GatedSEBlock, GLUSEBlock])
    def test_parameter_gradients(self, cls):
        block = cls(2, 1, rng64(25), dtype=np.float64)
        mask = Tensor(rng64(26).normal(size=(2, 2, 2)))
        x = Tensor(rng64(27).normal(size=(2, 2, 2)))
        params = [t for _, t in block.named_params("b")]
        err = T.grad_check_params(lambda: (block(x) * mask).sum(), params)
        assert err < 1e-5


class TestInventory:
    def test_none_is_zero(self):
        assert attention_param_inventory("none", 16, 4) == 0

    def test_se_formula(self):
        # C=16, r=4: two FCs 4x16 and 16x4 plus biases 4 and 16
        assert attention_param_inventory("se", 16, 4) == 64 + 64 + 4 + 16

    def test_gluse_extra_at_c16(self):
        extra = attention_param_inventory("gluse", 16, 4) \
            - attention_param_inventory("se", 16, 4)
        assert extra == 2 * (16 * 16 + 16) == 544

    def test_published_deltas(self):
        stages = (16, 32, 64)
        gated = sum(attention_param_inventory("gated_se", c, 4)
                    - attention_param_inventory("se", c, 4) for c in stages)
        gluse = sum(attention_param_inventory("gluse", c, 4)
                    - attention_param_inventory("se", c, 4) for c in stages)
        assert gated == 5488 == 126077 - 120589
        assert gluse == 10976 == 131565 - 120589

    def test_indivisible(self):
        with pytest.raises(ParameterError):
            attention_param_inventory("se", 10, 4)

    @given(st.sampled_from([8, 16, 32, 64]), st.sampled_from([1, 2, 4, 8]))
    @settings(max_examples=20)
    def test_inventory_matches_built_blocks(self, c, r):
        rng = np.random.default_rng(0)
        for kind, cls in (("se", SEBlock), ("gated_se", GatedSEBlock),
                          ("gluse", GLUSEBlock)):
            block = cls(c, r, rng)
            total = sum(t.size for _, t in block.named_params("x"))
            assert total == attention_param_inventory(kind, c, r)

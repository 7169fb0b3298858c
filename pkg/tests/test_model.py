import numpy as np
import pytest

from tdm_rppg import tensor as tn
from tdm_rppg.model import (DERIVATIVE_KERNEL, Architecture, TdmModel, VideoCube, count_macs,
                            count_params, dtc_chain, mac_breakdown)
from tdm_rppg.tensor import ContractError, DimensionError, Tensor


def small_video(t=8, h=8, w=8, seed=0):
    return np.random.default_rng(seed).uniform(0, 1, (t, 3, h, w))


class TestArchitecture:
    def test_head_channels(self):
        assert Architecture(order=2).head_channels == 64
        assert Architecture(order=0).head_channels == 32

    def test_rejects_tiny_frames(self):
        with pytest.raises(ValueError):
            Architecture(height=4, width=4)

    def test_rejects_negative_order(self):
        with pytest.raises(ValueError):
            Architecture(order=-1)


class TestVideoCube:
    def test_too_few_frames(self):
        with pytest.raises(ContractError):
            VideoCube(np.zeros((4, 3, 8, 8)))

    def test_wrong_layout(self):
        with pytest.raises(DimensionError):
            VideoCube(np.zeros((8, 8, 8, 3)))


class TestCounts:
    def test_default_params(self):
        assert count_params(Architecture()) == 5249

    def test_order_zero_params(self):
        assert count_params(Architecture(order=0)) == 5249 - 32

    def test_closed_form_matches_model(self):
        for order in (0, 1, 2, 3):
            arch = Architecture(order=order, height=8, width=8)
            assert count_params(TdmModel(arch)) == count_params(arch)

    @pytest.mark.parametrize("c1,c2,n", [(8, 16, 1), (16, 32, 2), (4, 8, 3)])
    def test_closed_form_identity(self, c1, c2, n):
        expected = 27 * c1 + c1 + 2 * c1 + 9 * c1 * c2 + c2 + 2 * c2 + (n * c2 + 1)
        assert count_params(Architecture(c1, c2, n)) == expected

    def test_macs_breakdown(self):
        b = mac_breakdown(Architecture(), 256, 128, 128)
        assert b["conv1"] == 256 * 128 * 128 * 16 * 27
        assert b["conv2"] == 256 * 64 * 64 * 32 * 16 * 9
        assert count_macs(Architecture()) == sum(b.values())

    def test_macs_within_ten_percent_of_reference(self):
        assert abs(count_macs(Architecture()) - 7.08e9) / 7.08e9 < 0.10


class TestDtcChain:
    def test_order_zero_is_empty(self):
        assert dtc_chain(Tensor(np.ones((2, 10))), 0) == []

    def test_quadratic_derivatives(self):
        t = np.arange(30.0)
        chain = dtc_chain(Tensor((t ** 2)[None]), 2)
        np.testing.assert_array_equal(chain[0].data[0, 2:-2], 20.0 * t[2:-2])
        np.testing.assert_array_equal(chain[1].data[0, 4:-4], 200.0)

    def test_cascade_equals_repeated_conv(self):
        x = np.random.default_rng(0).standard_normal((3, 20))
        d1 = tn.conv1d_fixed(Tensor(x), DERIVATIVE_KERNEL)
        d2 = tn.conv1d_fixed(d1, DERIVATIVE_KERNEL)
        chain = dtc_chain(Tensor(x), 2)
        np.testing.assert_array_equal(chain[1].data, d2.data)


class TestForward:
    def test_output_shape(self):
        model = TdmModel(Architecture(height=8, width=8))
        assert model(small_video(), "train").shape == (8,)

    def test_order_zero_head_width(self):
        model = TdmModel(Architecture(order=0, height=8, width=8))
        assert model.params["head.weight"].shape == (1, 32)
        assert model(small_video(), "infer").shape == (8,)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            TdmModel(Architecture(height=8, width=8))(small_video(), "eval")

    def test_rejects_channel_last(self):
        with pytest.raises(DimensionError):
            TdmModel(Architecture(height=8, width=8))(np.zeros((8, 8, 8, 3)))

    def test_too_few_frames(self):
        with pytest.raises(ContractError):
            TdmModel(Architecture(height=8, width=8))(np.zeros((4, 3, 8, 8)))

    def test_deterministic_forward(self):
        model = TdmModel(Architecture(height=8, width=8), seed=1)
        a = model(small_video(), "train").data
        b = model(small_video(), "train").data
        np.testing.assert_array_equal(a, b)

    def test_same_seed_same_weights(self):
        a, b = TdmModel(seed=3).state_dict(), TdmModel(seed=3).state_dict()
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])

    def test_predict_records_no_graph(self):
        model = TdmModel(Architecture(height=8, width=8))
        out = model.predict(small_video())
        assert isinstance(out, np.ndarray)

    def test_float32_model(self):
        model = TdmModel(Architecture(height=8, width=8), dtype=np.float32)
        assert model(small_video(), "train").dtype == np.float32


class TestStateDict:
    def test_roundtrip(self):
        arch = Architecture(height=8, width=8)
        src, dst = TdmModel(arch, seed=1), TdmModel(arch, seed=2)
        dst.load_state_dict(src.state_dict())
        np.testing.assert_array_equal(src.predict(small_video()), dst.predict(small_video()))

    def test_rejects_missing_key(self):
        model = TdmModel()
        state = model.state_dict()
        del state["head.bias"]
        with pytest.raises(KeyError):
            model.load_state_dict(state)

    def test_rejects_modified_kernel(self):
        model = TdmModel()
        state = model.state_dict()
        state["dtc.kernel"] = np.ones(5)
        with pytest.raises(ValueError):
            model.load_state_dict(state)

    def test_kernel_not_a_parameter(self):
        names = [n for n, _ in TdmModel().named_parameters()]
        assert "dtc.kernel" not in names

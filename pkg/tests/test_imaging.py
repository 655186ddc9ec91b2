import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sils.errors import ConfigError, InvalidInputError
from sils.imaging import (
    ADDITIVE_CLIPPED,
    ADDITIVE_UNCLIPPED,
    LOG,
    LOG_ADDITIVE,
    UNIT,
    CompositeOp,
    Image,
    LayerSet,
    compose,
    from_log_domain,
    load_png,
    quantize,
    save_png,
    to_log_domain,
)


def const(v, shape=(4, 4, 3)):
    return Image(np.full(shape, v))


class TestImageInvariants:
    def test_rejects_nan(self):
        arr = np.zeros((4, 4, 3))
        arr[0, 0, 0] = np.nan
        with pytest.raises(InvalidInputError):
            Image(arr)

    def test_rejects_out_of_range_unit(self):
        with pytest.raises(InvalidInputError):
            Image(np.full((4, 4, 3), 1.5))

    def test_rejects_bad_channels(self):
        with pytest.raises(InvalidInputError):
            Image(np.zeros((4, 4, 2)))

    def test_grayscale_promoted_to_hwc(self):
        img = Image(np.zeros((4, 4)))
        assert img.shape == (4, 4, 1)


class TestCompose:
    def test_zero_layers_give_zero(self):
        out = compose(LayerSet([const(0.0), const(0.0)]))
        assert np.all(out.data == 0.0)

    def test_clip_forced(self):
        out = compose(LayerSet([const(0.7), const(0.6)],
                               CompositeOp(ADDITIVE_CLIPPED)))
        assert np.all(out.data == 1.0)

    def test_unclipped_exceeds_one(self):
        out = compose(LayerSet([const(0.7), const(0.6)],
                               CompositeOp(ADDITIVE_UNCLIPPED)))
        assert np.allclose(out.data, 1.3)
        assert out.range_tag == "linear"

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            LayerSet([const(0.1), const(0.1, shape=(5, 4, 3))])

    def test_log_additive_requires_log_tag(self):
        with pytest.raises(InvalidInputError):
            LayerSet([const(0.1), const(0.1)], CompositeOp(LOG_ADDITIVE))

    def test_log_additive_sums_in_log_domain(self):
        a = to_log_domain(const(0.5))
        b = to_log_domain(const(0.25))
        out = compose(LayerSet([a, b], CompositeOp(LOG_ADDITIVE)))
        assert out.range_tag == LOG
        assert np.allclose(out.data, np.log(0.5) + np.log(0.25))

    @settings(max_examples=30, deadline=None)
    @given(
        arrays(np.float64, (3, 3, 1), elements=st.floats(0, 1)),
        arrays(np.float64, (3, 3, 1), elements=st.floats(0, 1)),
        arrays(np.float64, (3, 3, 1), elements=st.floats(0, 1)),
    )
    def test_unclipped_commutative_associative(self, a, b, c):
        op = CompositeOp(ADDITIVE_UNCLIPPED)
        ab = compose(LayerSet([Image(a), Image(b), Image(c)], op)).data
        ba = compose(LayerSet([Image(c), Image(a), Image(b)], op)).data
        np.testing.assert_allclose(ab, ba, atol=1e-12)


class TestLogDomain:
    def test_ones_map_to_zero(self):
        out = to_log_domain(const(1.0))
        assert np.all(out.data == 0.0)
        assert out.range_tag == LOG

    def test_epsilon_floor(self):
        out = to_log_domain(const(0.0), epsilon=1e-4)
        assert np.allclose(out.data, np.log(1e-4))

    def test_inverse_pair(self):
        rng = np.random.default_rng(0)
        img = Image(rng.uniform(1e-4, 1.0, (8, 8, 3)))
        back = from_log_domain(to_log_domain(img))
        np.testing.assert_allclose(back.data, img.data, atol=1e-6)

    def test_bad_epsilon(self):
        with pytest.raises(ConfigError):
            to_log_domain(const(0.5), epsilon=0.0)


class TestPng:
    @pytest.mark.parametrize("bit_depth", [8, 16])
    def test_roundtrip(self, tmp_path, bit_depth):
        rng = np.random.default_rng(1)
        img = Image(rng.uniform(0, 1, (16, 16, 3)))
        path = tmp_path / "img.png"
        save_png(path, img, bit_depth)
        back = load_png(path)
        tol = 0.5 / ((1 << bit_depth) - 1)
        assert np.max(np.abs(back.data - img.data)) <= tol + 1e-12

    def test_quantized_values_roundtrip_exactly(self, tmp_path):
        img = Image(np.rint(np.random.default_rng(2).uniform(0, 1, (8, 8, 3)) * 255)
                    / 255)
        path = tmp_path / "q.png"
        save_png(path, img, 8)
        back = load_png(path)
        assert np.array_equal(quantize(back), quantize(img))

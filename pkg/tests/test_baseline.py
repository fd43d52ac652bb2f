import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbinfer.baseline import (
    ConvGeometry,
    FilterMatrix,
    argmax_classify,
    conv_full,
    conv_gemm,
    gemm,
    im2col_full,
    maxpool,
    read_weights,
    relu,
    write_weights,
)
from cbinfer.errors import GeometryError, LoadError, ShapeError


def receptive_field(x, geom, yo, xo):
    """Brute-force gather of one output pixel's zero-padded receptive field."""
    c_in, h, w = x.shape
    col = []
    for c in range(c_in):
        for j in range(geom.kernel_h):
            for i in range(geom.kernel_w):
                y = yo * geom.stride_h - geom.pad_h + j
                xx = xo * geom.stride_w - geom.pad_w + i
                col.append(x[c, y, xx] if 0 <= y < h and 0 <= xx < w else 0.0)
    return np.array(col, dtype=np.float32)


def random_case(rng, c_in=2, c_out=3, size=6, kernel=3, stride=1, pad=1):
    geom = ConvGeometry(c_in, c_out, kernel, kernel, stride, stride, pad, pad)
    x = rng.standard_normal((c_in, size, size)).astype(np.float32)
    filters = FilterMatrix(rng.standard_normal((c_out, geom.patch_size)).astype(np.float32),
                           rng.standard_normal(c_out).astype(np.float32))
    return x, filters, geom


def test_geometry_output_size():
    assert ConvGeometry.same(3, 8, 7).output_size(20, 30) == (20, 30)
    assert ConvGeometry(2, 1, 3, 3, 2, 2, 1, 1).output_size(5, 5) == (3, 3)
    with pytest.raises(GeometryError):
        ConvGeometry(1, 1, 5, 5).output_size(3, 8)


def test_im2col_1x1_is_reshape():
    x = np.arange(12, dtype=np.float32).reshape(3, 2, 2)
    assert np.array_equal(im2col_full(x, ConvGeometry(3, 1, 1, 1)), x.reshape(3, 4))


def test_im2col_corner_column_has_padding():
    x = np.arange(1, 17, dtype=np.float32).reshape(1, 4, 4)
    col = im2col_full(x, ConvGeometry.same(1, 1, 3))[:, 0]
    assert col.tolist() == [0, 0, 0, 0, 1, 2, 0, 5, 6]
    assert np.array_equal(col, receptive_field(x, ConvGeometry.same(1, 1, 3), 0, 0))


def test_im2col_strided_dims():
    x = np.zeros((2, 5, 5), dtype=np.float32)
    assert im2col_full(x, ConvGeometry(2, 1, 3, 3, 2, 2, 1, 1)).shape == (18, 9)


@pytest.mark.parametrize("stride, pad, kernel", [(1, 1, 3), (2, 1, 3), (1, 0, 3), (2, 3, 7), (3, 2, 5)])
def test_im2col_matches_brute_force_gather(stride, pad, kernel):
    rng = np.random.default_rng(stride * 10 + pad)
    geom = ConvGeometry(2, 1, kernel, kernel, stride, stride, pad, pad)
    x = rng.standard_normal((2, 9, 8)).astype(np.float32)
    patches = im2col_full(x, geom)
    ho, wo = geom.output_size(9, 8)
    for yo in range(ho):
        for xo in range(wo):
            assert np.array_equal(patches[:, yo * wo + xo], receptive_field(x, geom, yo, xo))


def test_im2col_rejects_empty_output():
    with pytest.raises(GeometryError):
        im2col_full(np.zeros((1, 2, 2), np.float32), ConvGeometry(1, 1, 3, 3))


def test_gemm_identity():
    x = np.random.default_rng(1).standard_normal((4, 7)).astype(np.float32)
    assert np.array_equal(gemm(FilterMatrix(np.eye(4), np.zeros(4)), x), x)


def test_gemm_hand_example():
    y = gemm(FilterMatrix([[1, 2], [3, 4]], [0, 0]), np.array([[5], [6]], np.float32))
    assert y.tolist() == [[17], [39]]


def test_gemm_bias_only():
    y = gemm(FilterMatrix(np.ones((3, 2)), [1, -2, 0.5]), np.zeros((2, 4), np.float32))
    assert np.array_equal(y, np.repeat([[1], [-2], [0.5]], 4, axis=1).astype(np.float32))


def test_gemm_inner_dim_mismatch():
    with pytest.raises(ShapeError):
        gemm(FilterMatrix(np.ones((2, 3)), [0, 0]), np.zeros((4, 1), np.float32))


def test_gemm_accumulates_in_ascending_order():
    rng = np.random.default_rng(3)
    filters = FilterMatrix(rng.standard_normal((3, 11)).astype(np.float32),
                           rng.standard_normal(3).astype(np.float32))
    x = rng.standard_normal((11, 5)).astype(np.float32)
    expected = np.empty((3, 5), np.float32)
    for o in range(3):
        for n in range(5):
            acc = filters.bias[o]
            for r in range(11):
                acc = np.float32(acc + np.float32(filters.weights[o, r] * x[r, n]))
            expected[o, n] = acc
    assert expected.tobytes() == gemm(filters, x).tobytes()


def test_gemm_columns_independent_of_block_size():
    rng = np.random.default_rng(4)
    filters = FilterMatrix(rng.standard_normal((4, 50)), rng.standard_normal(4))
    x = rng.standard_normal((50, 37)).astype(np.float32)
    full = gemm(filters, x)
    assert full.tobytes() == gemm(filters, x, block=5).tobytes()
    assert full[:, 9:10].tobytes() == gemm(filters, x[:, 9:10]).tobytes()


def test_conv_zero_input_gives_bias_planes():
    geom = ConvGeometry.same(2, 3, 3)
    filters = FilterMatrix(np.ones((3, 18)), [1.0, 2.0, 3.0])
    out = conv_full(np.zeros((2, 4, 5), np.float32), filters, geom)
    assert np.array_equal(out, np.broadcast_to(np.float32([1, 2, 3])[:, None, None], (3, 4, 5)))


def test_conv_scalar_kernel_scales():
    x = np.random.default_rng(5).standard_normal((1, 4, 4)).astype(np.float32)
    out = conv_full(x, FilterMatrix([[2.0]], [0.0]), ConvGeometry(1, 1, 1, 1))
    assert np.array_equal(out, 2 * x)


def test_conv_direct_equals_im2col_gemm():
    x, filters, geom = random_case(np.random.default_rng(6))
    assert conv_full(x, filters, geom).tobytes() == conv_gemm(x, filters, geom).tobytes()


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(3, 8), st.integers(3, 8),
       st.sampled_from([1, 3, 5, 7]), st.integers(1, 2), st.integers(0, 3),
       st.integers(0, 2**32 - 1))
def test_conv_oracle_equality(c_in, c_out, h, w, k, stride, pad, seed):
    geom = ConvGeometry(c_in, c_out, k, k, stride, stride, pad, pad)
    try:
        geom.output_size(h, w)
    except GeometryError:
        return
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((c_in, h, w)).astype(np.float32)
    filters = FilterMatrix(rng.standard_normal((c_out, geom.patch_size)),
                           rng.standard_normal(c_out))
    assert conv_full(x, filters, geom).tobytes() == conv_gemm(x, filters, geom).tobytes()


@given(st.floats(-4, 4), st.integers(0, 1000))
def test_conv_is_linear_without_bias(a, seed):
    rng = np.random.default_rng(seed)
    geom = ConvGeometry.same(2, 2, 3)
    filters = FilterMatrix(rng.standard_normal((2, 18)), np.zeros(2))
    x = rng.standard_normal((2, 5, 5)).astype(np.float32)
    lhs = conv_full(np.float32(a) * x, filters, geom)
    rhs = np.float32(a) * conv_full(x, filters, geom)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-5, atol=1e-5 * max(1.0, abs(a)))


def test_relu_cases():
    assert relu(np.float32([-0.5, 0, 0.25])).tolist() == [0, 0, 0.25]
    assert np.array_equal(relu(-np.ones((1, 2, 2), np.float32)), np.zeros((1, 2, 2)))
    pos = np.full((1, 2, 2), 3.0, np.float32)
    assert np.array_equal(relu(pos), pos)


def test_maxpool_hand_example():
    x = np.arange(1, 17, dtype=np.float32).reshape(1, 4, 4)
    assert maxpool(x, 2, 2)[0].tolist() == [[6, 8], [14, 16]]


def test_maxpool_constant_and_identity():
    x = np.full((2, 5, 7), 4.0, np.float32)
    assert np.array_equal(maxpool(x, 2, 2), np.full((2, 2, 3), 4.0))
    y = np.random.default_rng(2).standard_normal((2, 3, 3)).astype(np.float32)
    assert np.array_equal(maxpool(y, 1, 1), y)


@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 10**6))
def test_maxpool_matches_brute_force(window, stride, seed):
    x = np.random.default_rng(seed).standard_normal((2, 7, 6)).astype(np.float32)
    out = maxpool(x, window, stride)
    for c in range(2):
        for a in range(out.shape[1]):
            for b in range(out.shape[2]):
                win = x[c, a * stride:a * stride + window, b * stride:b * stride + window]
                assert win.shape == (window, window)
                assert out[c, a, b] == win.max()


def test_maxpool_window_too_large():
    with pytest.raises(GeometryError):
        maxpool(np.zeros((1, 2, 2), np.float32), 3, 1)


def test_argmax_classify_cases():
    assert np.array_equal(argmax_classify(np.ones((1, 2, 3), np.float32)), np.zeros((2, 3)))
    t = np.float32([0.1, 0.9, 0.3]).reshape(3, 1, 1)
    assert argmax_classify(t)[0, 0] == 1
    tie = np.float32([0.7, 0.2, 0.7]).reshape(3, 1, 1)
    assert argmax_classify(tie)[0, 0] == 0


def test_weights_file_layout(tmp_path):
    geom = ConvGeometry(2, 3, 1, 2)
    kernel = np.arange(12, dtype=np.float32).reshape(3, 2, 1, 2)
    filters = FilterMatrix.from_kernel(kernel, [7, 8, 9])
    write_weights(tmp_path / "w", filters)
    raw = np.fromfile(tmp_path / "w", "<f4")
    assert raw.tolist() == list(range(12)) + [7, 8, 9]
    loaded = read_weights(tmp_path / "w", geom)
    assert np.array_equal(loaded.kernel(geom), kernel)
    # K(o, (c*kh + j)*kw + i) = k(o, c, j, i)
    assert loaded.weights[2, (1 * 1 + 0) * 2 + 1] == kernel[2, 1, 0, 1]
    raw[:-1].tofile(tmp_path / "short")
    with pytest.raises(LoadError):
        read_weights(tmp_path / "short", geom)

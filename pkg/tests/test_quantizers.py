import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixquant import (
    FP4_VALUES,
    QuantizerConfig,
    dequantize,
    fake_quantize,
    fp4_project,
    identity_permutation,
    mse_scale_search,
    quantize,
    random_permutation,
    verify_error_bound,
)
from mixquant.quantizers import MIN_POW2_SCALE


def test_config_validation():
    with pytest.raises(ValueError):
        QuantizerConfig("int9")
    with pytest.raises(ValueError):
        QuantizerConfig("int_symmetric", bits=1)
    with pytest.raises(ValueError):
        QuantizerConfig("fp4", bits=8)
    with pytest.raises(ValueError):
        QuantizerConfig("mxfp4", granularity="per_token")


def test_fp4_projection_alphabet():
    vals = np.linspace(-7, 7, 1001)
    out = fp4_project(vals)
    assert set(np.abs(out)).issubset(set(FP4_VALUES))


def test_fp4_nearest():
    assert fp4_project(np.array([0.9]))[0] == 1.0
    assert fp4_project(np.array([2.4]))[0] == 2.0
    assert fp4_project(np.array([2.6]))[0] == 3.0
    assert fp4_project(np.array([10.0]))[0] == 6.0


def test_fp4_ties_to_even_mantissa():
    # midpoints with an even-mantissa neighbor above round up, others down
    up = np.array([0.75, 1.75, 3.5])
    down = np.array([0.25, 1.25, 2.5, 5.0])
    assert np.array_equal(fp4_project(up), np.array([1.0, 2.0, 4.0]))
    assert np.array_equal(fp4_project(down), np.array([0.0, 1.0, 2.0, 4.0]))
    assert np.array_equal(fp4_project(-up), -np.array([1.0, 2.0, 4.0]))


@pytest.mark.parametrize("fmt,gran", [
    ("int_symmetric", "per_token"),
    ("int_asymmetric", "per_token"),
    ("fp4", "per_token"),
    ("mxfp4", "per_group"),
])
def test_quantize_idempotent_codes(fmt, gran):
    rng = np.random.default_rng(7)
    x = rng.standard_t(4, size=(32, 64))
    cfg = QuantizerConfig(fmt, granularity=gran)
    q1 = quantize(x, cfg)
    q2 = quantize(dequantize(q1), cfg)
    assert np.array_equal(q1.codes, q2.codes)
    # scales agree to the last ulp (asymmetric spans re-divide s * (2^q - 1))
    assert np.allclose(q1.scales, q2.scales, rtol=1e-14, atol=0)


def test_symmetric_code_range():
    rng = np.random.default_rng(1)
    for q in (2, 3, 4, 8):
        cfg = QuantizerConfig("int_symmetric", bits=q)
        qt = quantize(rng.normal(size=(8, 32)), cfg)
        qmax = 2 ** (q - 1) - 1
        assert qt.codes.min() >= -qmax and qt.codes.max() <= qmax
        # the row max always hits the extreme code
        assert np.all(np.abs(qt.codes).max(axis=-1) == qmax)


def test_asymmetric_hits_both_ends():
    rng = np.random.default_rng(2)
    cfg = QuantizerConfig("int_asymmetric", bits=4)
    qt = quantize(rng.normal(size=(8, 32)), cfg)
    assert np.all(qt.codes.min(axis=-1) == 0)
    assert np.all(qt.codes.max(axis=-1) == 15)


def test_mxfp4_scales_are_powers_of_two():
    rng = np.random.default_rng(3)
    qt = quantize(rng.normal(size=(16, 128)), QuantizerConfig("mxfp4", granularity="per_group"))
    s = qt.scales
    assert np.all(2.0 ** np.round(np.log2(s)) == s)
    assert qt.codes.shape == (16, 4, 32)


def test_mxfp4_zero_group_clamped():
    x = np.zeros((1, 64))
    x[0, 32:] = np.linspace(-1, 1, 32)
    qt = quantize(x, QuantizerConfig("mxfp4", granularity="per_group"))
    assert qt.clamped_groups == 1
    assert qt.scales[0, 0] == MIN_POW2_SCALE
    assert np.all(dequantize(qt)[0, :32] == 0.0)


def test_mse_search_never_worse_than_absmax():
    rng = np.random.default_rng(4)
    w = rng.standard_t(3, size=(16, 128))
    qmax = 2**3 - 1
    s_abs = np.abs(w).max(axis=-1) / qmax
    s_mse = mse_scale_search(w, 4)

    def err(s):
        q = np.clip(np.round(w / s[:, None]), -qmax, qmax)
        return ((w - s[:, None] * q) ** 2).sum(axis=-1)

    assert np.all(err(s_mse) <= err(s_abs) + 1e-12)


def test_worst_case_bound_holds():
    rng = np.random.default_rng(5)
    for q in (3, 4, 8):
        rep = verify_error_bound(rng.normal(size=(500, 64)),
                                 QuantizerConfig("int_symmetric", bits=q))
        assert rep.violations == 0
        assert rep.max_ratio <= 1.0


@given(st.integers(0, 2**32 - 1), st.sampled_from([3, 4, 8]))
@settings(max_examples=30, deadline=None)
def test_worst_case_bound_property(seed, bits):
    rng = np.random.default_rng(seed)
    x = rng.standard_t(3, size=(4, 32)) * rng.lognormal(0, 2)
    rep = verify_error_bound(x, QuantizerConfig("int_symmetric", bits=bits))
    assert rep.violations == 0


def test_per_token_quant_commutes_with_permutation():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(16, 64))
    perm = random_permutation(64, 9, 8)
    for fmt in ("int_symmetric", "int_asymmetric", "fp4"):
        cfg = QuantizerConfig(fmt, granularity="per_token")
        codes_then_perm = quantize(x, cfg).codes[:, perm.pi]
        perm_then_codes = quantize(x[:, perm.pi], cfg).codes
        assert np.array_equal(codes_then_perm, perm_then_codes)


def test_identity_permutation_is_noop_for_codes():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(4, 16))
    perm = identity_permutation(16, 4)
    cfg = QuantizerConfig("int_symmetric")
    assert np.array_equal(quantize(x, cfg).codes, quantize(x[:, perm.pi], cfg).codes)


def test_fake_quantize_shape_and_error():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(8, 32))
    for fmt, gran in [("int_symmetric", "per_token"), ("mxfp4", "per_group")]:
        y = fake_quantize(x, QuantizerConfig(fmt, granularity=gran))
        assert y.shape == x.shape
        assert np.abs(y - x).max() < np.abs(x).max()

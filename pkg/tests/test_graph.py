import numpy as np
import pytest

from mixquant import (
    DimensionError,
    FfnWeights,
    GraphConfig,
    NotRotationEquivariantError,
    QuantizerConfig,
    build_hadamard,
    block_rotation,
    ffn_forward,
    identity_permutation,
    load_ffn_weights,
    massdiff,
    merge_permutation,
    merge_rotation,
    pipeline_mse,
    quantize,
    random_permutation,
    run_pipeline,
    save_ffn_weights,
    swish,
)
from mixquant.graph import config_from_dict, config_to_dict


@pytest.fixture
def weights():
    rng = np.random.default_rng(42)
    return FfnWeights(
        rng.normal(size=(16, 32)) * 0.4,
        rng.normal(size=(16, 32)) * 0.4,
        rng.normal(size=(32, 16)) * 0.4,
    )


def test_weight_validation():
    with pytest.raises(DimensionError):
        FfnWeights(np.zeros((4, 8)), np.zeros((4, 8)), np.zeros((4, 8)))
    with pytest.raises(DimensionError):
        FfnWeights(np.zeros((4, 8)), np.zeros((4, 8)), np.full((8, 4), np.nan))


def test_forward_zero_input(weights):
    y = ffn_forward(np.zeros((3, 16)), weights)
    assert np.all(y == 0.0)


def test_forward_linear_in_up_path(weights):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 16))
    doubled = FfnWeights(weights.gate, 2.0 * weights.up, weights.down)
    assert np.allclose(ffn_forward(x, doubled), 2.0 * ffn_forward(x, weights))


def test_forward_swish_saturation():
    # a hugely positive gate pre-activation makes Swish the identity on
    # that lane; hand-checkable 1x1 case
    w = FfnWeights(np.array([[100.0]]), np.array([[2.0]]), np.array([[3.0]]))
    y = ffn_forward(np.array([[1.0]]), w)
    # Swish(100) ~= 100, so y ~= 100 * 2 * 3
    assert y[0, 0] == pytest.approx(600.0, rel=1e-10)


def test_swish_region_permutation_equivariance(weights):
    rng = np.random.default_rng(1)
    A = rng.normal(size=(8, 32))
    B = rng.normal(size=(8, 32))
    p = random_permutation(32, 5, 8)
    phi = swish(A) * B
    assert np.array_equal(swish(A[:, p.pi]) * B[:, p.pi], phi[:, p.pi])


def test_merge_permutation_preserves_function(weights):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(32, 16))
    p = random_permutation(32, 11, 8)
    merged = merge_permutation(weights, p)
    ref = ffn_forward(x, weights)
    out = ffn_forward(x, merged)
    assert np.abs(out - ref).max() <= 1e-6 * np.abs(ref).max()


def test_merge_identity_bit_exact(weights):
    merged = merge_permutation(weights, identity_permutation(32, 8))
    assert np.array_equal(merged.gate, weights.gate)
    assert np.array_equal(merged.up, weights.up)
    assert np.array_equal(merged.down, weights.down)


def test_merge_then_inverse_bit_exact(weights):
    p = random_permutation(32, 13, 8)
    back = merge_permutation(merge_permutation(weights, p), p.inverse())
    assert np.array_equal(back.gate, weights.gate)
    assert np.array_equal(back.down, weights.down)


def test_merge_permutation_dimension_check(weights):
    with pytest.raises(DimensionError):
        merge_permutation(weights, identity_permutation(16, 4))


def test_merge_rotation_function_preserved(weights):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(16, 16))
    R = build_hadamard(16, "sylvester")
    for site in ("r1", "r2"):
        merged = merge_rotation(weights, R, site)
        # explicit reference: rotate the input of the targeted weight
        xr = x @ R.matrix
        if site == "r1":
            ref = (swish(xr @ weights.gate) * (x @ weights.up)) @ weights.down
        else:
            ref = (swish(x @ weights.gate) * (xr @ weights.up)) @ weights.down
        out = (swish(x @ merged.gate) * (x @ merged.up)) @ merged.down
        assert np.abs(out - ref).max() <= 1e-6 * np.abs(ref).max()


def test_merge_r_then_rt_identity(weights):
    R = build_hadamard(16, "sylvester")
    Rt = type(R).from_signs(R.signs.T, "file")
    merged = merge_rotation(merge_rotation(weights, R, "r1"), Rt, "r1")
    assert np.abs(merged.gate - weights.gate).max() < 1e-12


def test_merge_across_swish_is_hard_error(weights):
    R = build_hadamard(16, "sylvester")
    with pytest.raises(NotRotationEquivariantError, match="not rotation-equivariant"):
        merge_rotation(weights, R, "r3")


def test_pipeline_all_none_equals_forward(weights):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(10, 16))
    y, report = run_pipeline(x, weights, GraphConfig())
    assert np.array_equal(y, ffn_forward(x, weights))
    assert "output" in report.stage_ranges


def test_pipeline_full_precision_equivalence(weights):
    rng = np.random.default_rng(5)
    x = rng.normal(size=(64, 16))
    h = swish(x @ weights.gate) * (x @ weights.up)
    p3 = massdiff(h, 8)
    cfg = GraphConfig(r1_r2="merged_full_vector", r3=("online_block", 8, p3))
    y, report = run_pipeline(x, weights, cfg)
    ref = ffn_forward(x, weights)
    assert np.abs(y - ref).max() <= 1e-5 * np.abs(ref).max()
    assert report.r3_bound["violations"] == 0


def test_pipeline_merged_vs_explicit_permutation_codes(weights):
    # per-token quantization commutes with the merged permutation: the
    # codes of the rotated hidden state are unchanged by where the
    # permutation lives, because the permuted weights reproduce exactly
    # the permuted activations
    rng = np.random.default_rng(6)
    x = rng.normal(size=(16, 16))
    p = random_permutation(32, 17, 8)
    h_explicit = swish(x @ weights.gate) * (x @ weights.up)
    merged = merge_permutation(weights, p)
    h_merged = swish(x @ merged.gate) * (x @ merged.up)
    cfg = QuantizerConfig("int_symmetric", bits=4)
    assert np.array_equal(
        quantize(h_explicit[:, p.pi], cfg).codes, quantize(h_merged, cfg).codes
    )


def test_pipeline_quantized_runs_and_reports(weights):
    rng = np.random.default_rng(7)
    x = rng.normal(size=(32, 16))
    qc = QuantizerConfig("int_symmetric", bits=4)
    cfg = GraphConfig(r3=("online_block", 8, None), weight_quant=qc, act_quant=qc)
    mse = pipeline_mse(x, weights, cfg)
    assert mse > 0.0
    # INT8 should be much closer than INT4
    qc8 = QuantizerConfig("int_symmetric", bits=8)
    cfg8 = GraphConfig(r3=("online_block", 8, None), weight_quant=qc8, act_quant=qc8)
    assert pipeline_mse(x, weights, cfg8) < mse


def test_config_round_trip():
    p = identity_permutation(32, 8)
    cfg = GraphConfig(
        r1_r2=("merged_block", 8),
        r3=("online_block", 8, p),
        weight_quant=QuantizerConfig("int_symmetric", bits=4),
    )
    rt = config_from_dict(config_to_dict(cfg))
    assert config_to_dict(rt) == config_to_dict(cfg)


def test_weight_io_round_trip(tmp_path, weights):
    manifest = save_ffn_weights(tmp_path, weights,
                                GraphConfig(r3=("online_block", 8, None)))
    w2, cfg2 = load_ffn_weights(manifest)
    assert np.array_equal(w2.gate, weights.gate.astype(np.float32).astype(np.float64))
    assert cfg2.r3 == ("online_block", 8, None)

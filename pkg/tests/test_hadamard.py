import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixquant import (
    ConstructionError,
    DimensionError,
    OpCounter,
    block_rotation,
    build_hadamard,
    composite_spec,
    count_ops,
    dense_rotate,
    factorize,
    format_count,
    fwht,
    load_hadamard_file,
    rotate,
    rotate_block,
    rotate_nonpo2,
)


@pytest.mark.parametrize("order,construction", [
    (1, "sylvester"), (2, "sylvester"), (64, "sylvester"),
    (4, "paley1"), (12, "paley1"), (28, "paley1"), (8, "paley1"),
    (12, "paley2"), (20, "paley2"), (28, "paley2"),
])
def test_constructions_validate(order, construction):
    spec = build_hadamard(order, construction)
    k = order
    assert np.allclose(spec.matrix @ spec.matrix.T, np.eye(k), atol=1e-10)
    # dephased: first row and column all positive
    assert np.all(spec.signs[0] == 1)
    assert np.all(spec.signs[:, 0] == 1)


def test_construction_fallback_order():
    assert build_hadamard(16).construction == "sylvester"
    assert build_hadamard(12).construction == "paley1"
    # 36 = 2*(17+1): 35 is not a prime power so paley1 cannot apply
    assert build_hadamard(36).construction == "paley2"


def test_no_construction_reports_attempts():
    with pytest.raises(ConstructionError) as exc:
        build_hadamard(92)  # q=91 = 7*13 not a prime power; 45 is not either
    msg = str(exc.value)
    assert "sylvester" in msg and "paley1" in msg and "paley2" in msg


def test_prime_power_field_order():
    # q = 27 = 3^3 exercises the extension-field character
    spec = build_hadamard(28, "paley1")
    assert np.allclose(spec.matrix @ spec.matrix.T, np.eye(28), atol=1e-10)


def test_hadamard_file_roundtrip(tmp_path):
    spec = build_hadamard(12)
    path = tmp_path / "h12.txt"
    lines = ["order 12"] + [" ".join(str(int(v)) for v in row) for row in spec.signs]
    path.write_text("\n".join(lines) + "\n")
    loaded = load_hadamard_file(path)
    assert np.array_equal(loaded.signs, spec.signs)


def test_hadamard_file_errors(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("size 4\n")
    with pytest.raises(ConstructionError):
        load_hadamard_file(p)


@pytest.mark.parametrize("d", [2, 4, 16, 256, 1024])
def test_fwht_matches_dense(d):
    rng = np.random.default_rng(d)
    x = rng.normal(size=(8, d))
    ref = dense_rotate(x, build_hadamard(d, "sylvester"))
    assert np.abs(fwht(x) - ref).max() < 1e-9 * max(1.0, np.abs(ref).max())


def test_fwht_rejects_non_power_of_2():
    with pytest.raises(DimensionError):
        fwht(np.zeros(12))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_fwht_is_an_involution_and_isometry(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=64)
    y = fwht(x)
    assert np.linalg.norm(y) == pytest.approx(np.linalg.norm(x), rel=1e-10)
    assert np.abs(fwht(y) - x).max() < 1e-10


@pytest.mark.parametrize("d", [12, 28, 56, 112, 448, 3072])
def test_rotate_nonpo2_matches_dense(d):
    rng = np.random.default_rng(d)
    x = rng.normal(size=(4, d))
    ref = dense_rotate(x, composite_spec(d))
    got = rotate_nonpo2(x)
    assert np.abs(got - ref).max() < 1e-9 * np.abs(ref).max()


def test_factorize():
    f = factorize(28)
    assert (f.t, f.k, f.k_prime) == (7, 4, 0)
    f = factorize(12288)
    assert (f.t, f.k, f.k_prime) == (3, 4096, 10)
    assert factorize(64).t == 1
    with pytest.raises(DimensionError):
        factorize(6)  # t=3 but power-of-2 cofactor is only 2


def test_rotate_dispatch():
    rng = np.random.default_rng(0)
    x = rng.normal(size=64)
    assert np.array_equal(rotate(x), fwht(x))
    x = rng.normal(size=28)
    assert np.array_equal(rotate(x), rotate_nonpo2(x))


def test_rotate_block_matches_kron_dense():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(6, 128))
    rot = block_rotation(128, 32)
    ref = x @ rot.dense()
    assert np.abs(rotate_block(x, rot) - ref).max() < 1e-10


def test_rotate_block_nonpo2_blocks():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(3, 56))
    rot = block_rotation(56, 28)
    ref = x @ rot.dense()
    assert np.abs(rotate_block(x, rot) - ref).max() < 1e-10


def test_block_rotation_is_orthogonal():
    R = block_rotation(96, 12).dense()
    assert np.allclose(R @ R.T, np.eye(96), atol=1e-10)


# --- operation counting ---------------------------------------------------


def test_counter_matches_closed_form_po2():
    for d in (8, 64, 1024):
        c = OpCounter()
        fwht(np.random.default_rng(d).normal(size=d), c)
        assert c.adds == count_ops(d, "full").additions_subtractions == d * int(np.log2(d))


def test_counter_matches_closed_form_nonpo2():
    for d in (28, 56, 3072):
        c = OpCounter()
        rotate_nonpo2(np.random.default_rng(d).normal(size=d), counter=c)
        assert c.adds == count_ops(d, "full").additions_subtractions


def test_counter_matches_closed_form_block():
    c = OpCounter()
    rotate_block(np.random.default_rng(1).normal(size=256), block_rotation(256, 32), c)
    assert c.adds == count_ops(256, "block", 32).additions_subtractions == 256 * 5


def test_counter_scales_with_batch():
    c = OpCounter()
    fwht(np.random.default_rng(1).normal(size=(10, 64)), c)
    assert c.adds == 10 * count_ops(64, "full").additions_subtractions


def test_count_ops_formulas():
    # d = k*t: optimized = d(k'+t+2), butterfly+matmul = d(k'+4t-1)
    assert count_ops(28, "optimized").additions_subtractions == 28 * (0 + 7 + 2)
    assert count_ops(28, "butterfly_plus_matmul").additions_subtractions == 28 * 27
    assert count_ops(28, "dense_matmul").additions_subtractions == 28 * 27
    with pytest.raises(DimensionError):
        count_ops(64, "optimized")
    with pytest.raises(DimensionError):
        count_ops(64, "block", 24)


def test_format_count():
    assert format_count(258048) == "258.05K"
    assert format_count(205506560) == "205.51M"
    assert format_count(86016) == "86.02K"
